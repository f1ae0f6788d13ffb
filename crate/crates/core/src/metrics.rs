//! Fusion quality metrics on 8-bit quantized images: entropy, mutual
//! information, correlation, PSNR and DCT-feature mutual information.

use std::fmt::Display;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plane::Plane;

/// Reported instead of an infinite PSNR.
pub const PSNR_SENTINEL: f64 = 999.0;

/// Conventions stored with every report so the numbers are self-describing.
pub const CONVENTIONS: &str = "8-bit quantization round(255x), 256 bins, log base 2; \
MI summed over both sources; CC and PSNR averaged over sources; PSNR peak 255 with \
source-averaged MSE, sentinel 999 when MSE = 0; FMI = mean NMI of 8×8 block DCT-II \
AC magnitudes normalized by the pair's joint max; population std";

/// AC magnitudes below this are transform roundoff of flat blocks, far under
/// one 8-bit level, and are treated as exactly zero.
const DCT_ROUNDOFF: f64 = 1e-10;

pub const CSV_HEADER: [&str; 6] = ["pair", "en", "mi", "cc", "psnr", "fmi"];

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("image sizes differ: {0:?} vs {1:?}")]
    Mismatch([usize; 2], [usize; 2]),
    #[error("empty image")]
    Empty,
    #[error("malformed metrics CSV: {0}")]
    Csv(String),
}

type Result<T, E = MetricError> = std::result::Result<T, E>;

/// `round(255·clamp(x, 0, 1))`.
pub fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check(a: &Plane, b: &Plane) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(MetricError::Mismatch(a.dims(), b.dims()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn entropy_of_counts(counts: &[u64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

fn histogram(levels: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in levels {
        h[v as usize] += 1;
    }
    h
}

/// Shannon entropy in bits of the 8-bit histogram.
pub fn entropy(img: &Plane) -> f64 {
    let q: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    entropy_of_counts(&histogram(&q), q.len() as f64)
}

/// Mutual information in bits between two 8-bit level sequences.
fn mutual_information_levels(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len() as f64;
    let mut joint = vec![0u64; 256 * 256];
    for (&x, &y) in a.iter().zip(b) {
        joint[x as usize * 256 + y as usize] += 1;
    }
    let (ha, hb) = (histogram(a), histogram(b));
    let mut mi = 0.0;
    for x in 0..256 {
        if ha[x] == 0 {
            continue;
        }
        for y in 0..256 {
            let c = joint[x * 256 + y];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            mi += pxy * (pxy * n * n / (ha[x] as f64 * hb[y] as f64)).log2();
        }
    }
    mi
}

/// MI between two images after 8-bit quantization.
pub fn mutual_information_pair(a: &Plane, b: &Plane) -> Result<f64> {
    check(a, b)?;
    let qa: Vec<u8> = a.data().iter().map(|&v| quantize(v)).collect();
    let qb: Vec<u8> = b.data().iter().map(|&v| quantize(v)).collect();
    Ok(mutual_information_levels(&qa, &qb))
}

/// `MI(I_f, I1) + MI(I_f, I2)`.
pub fn mutual_information(fused: &Plane, i1: &Plane, i2: &Plane) -> Result<f64> {
    Ok(mutual_information_pair(fused, i1)? + mutual_information_pair(fused, i2)?)
}

/// Pearson correlation; `None` when either image has zero variance.
pub fn pearson(a: &Plane, b: &Plane) -> Result<Option<f64>> {
    check(a, b)?;
    let n = a.len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(None);
    }
    Ok(Some(cov / (va * vb).sqrt()))
}

/// Value plus whether a degenerate-input guard fired.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Guarded {
    pub value: f64,
    pub degenerate: bool,
}

/// `(ρ(I_f, I1) + ρ(I_f, I2)) / 2`; a zero-variance term counts as 0.
pub fn correlation_coefficient(fused: &Plane, i1: &Plane, i2: &Plane) -> Result<Guarded> {
    let (a, b) = (pearson(fused, i1)?, pearson(fused, i2)?);
    Ok(Guarded {
        value: (a.unwrap_or(0.0) + b.unwrap_or(0.0)) / 2.0,
        degenerate: a.is_none() || b.is_none(),
    })
}

/// `10·log10(255² / MSE̅)` with the MSE averaged over both sources in 8-bit units.
pub fn psnr(fused: &Plane, i1: &Plane, i2: &Plane) -> Result<Guarded> {
    check(fused, i1)?;
    check(fused, i2)?;
    let mse = |s: &Plane| {
        fused
            .data()
            .iter()
            .zip(s.data())
            .map(|(&f, &x)| (255.0 * f - 255.0 * x).powi(2))
            .sum::<f64>()
            / fused.len() as f64
    };
    let m = (mse(i1) + mse(i2)) / 2.0;
    Ok(psnr_from_mse(m))
}

pub fn psnr_from_mse(mse: f64) -> Guarded {
    if mse == 0.0 {
        Guarded {
            value: PSNR_SENTINEL,
            degenerate: true,
        }
    } else {
        Guarded {
            value: 10.0 * (255.0f64 * 255.0 / mse).log10(),
            degenerate: false,
        }
    }
}

fn dct_table() -> [[f64; 8]; 8] {
    let mut t = [[0.0; 8]; 8];
    for (u, row) in t.iter_mut().enumerate() {
        let c = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (i, v) in row.iter_mut().enumerate() {
            *v = c * (((2 * i + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    t
}

fn mirror(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// AC magnitudes of the orthonormal 8×8 block DCT-II, 63 values per block,
/// after reflect-padding to multiples of 8. Flat blocks yield exact zeros.
pub fn dct_features(img: &Plane) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let (ph, pw) = (h.next_multiple_of(8), w.next_multiple_of(8));
    let t = dct_table();
    let mut out = Vec::with_capacity(ph / 8 * pw / 8 * 63);
    let mut block = [[0.0; 8]; 8];
    let mut rows = [[0.0; 8]; 8];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            for (i, r) in block.iter_mut().enumerate() {
                for (j, v) in r.iter_mut().enumerate() {
                    *v = img.get(mirror(by + i, h), mirror(bx + j, w));
                }
            }
            // Separable transform: rows, then columns.
            for i in 0..8 {
                for v in 0..8 {
                    rows[i][v] = (0..8).map(|j| t[v][j] * block[i][j]).sum();
                }
            }
            for u in 0..8 {
                for v in 0..8 {
                    if u == 0 && v == 0 {
                        continue;
                    }
                    let c: f64 = (0..8).map(|i| t[u][i] * rows[i][v]).sum::<f64>().abs();
                    out.push(if c < DCT_ROUNDOFF { 0.0 } else { c });
                }
            }
        }
    }
    out
}

/// `2·MI(a, b) / (H(a) + H(b))` of two feature vectors quantized to 256 bins
/// after scaling by their joint maximum. `None` when both entropies vanish.
fn normalized_mi(a: &[f64], b: &[f64]) -> Option<f64> {
    let m = a.iter().chain(b).copied().fold(0.0, f64::max);
    if m <= 0.0 {
        return None;
    }
    let qa: Vec<u8> = a.iter().map(|&v| quantize(v / m)).collect();
    let qb: Vec<u8> = b.iter().map(|&v| quantize(v / m)).collect();
    let n = qa.len() as f64;
    let h = entropy_of_counts(&histogram(&qa), n) + entropy_of_counts(&histogram(&qb), n);
    if h <= 0.0 {
        return None;
    }
    Some(2.0 * mutual_information_levels(&qa, &qb) / h)
}

/// Mean of the two normalized DCT-feature MIs; a degenerate pair counts as 0.
pub fn fmi_dct(fused: &Plane, i1: &Plane, i2: &Plane) -> Result<Guarded> {
    check(fused, i1)?;
    check(fused, i2)?;
    let ff = dct_features(fused);
    let a = normalized_mi(&ff, &dct_features(i1));
    let b = normalized_mi(&ff, &dct_features(i2));
    Ok(Guarded {
        value: (a.unwrap_or(0.0) + b.unwrap_or(0.0)) / 2.0,
        degenerate: a.is_none() || b.is_none(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFlags {
    pub cc_degenerate: bool,
    pub psnr_infinite: bool,
    pub fmi_degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub pair: String,
    pub en: f64,
    pub mi: f64,
    pub cc: f64,
    pub psnr: f64,
    pub fmi: f64,
    pub flags: MetricFlags,
}

impl MetricRecord {
    pub fn values(&self) -> [f64; 5] {
        [self.en, self.mi, self.cc, self.psnr, self.fmi]
    }
}

/// All five metrics of one fused image against its sources.
pub fn evaluate_pair(pair: &str, fused: &Plane, i1: &Plane, i2: &Plane) -> Result<MetricRecord> {
    let cc = correlation_coefficient(fused, i1, i2)?;
    let ps = psnr(fused, i1, i2)?;
    let fmi = fmi_dct(fused, i1, i2)?;
    Ok(MetricRecord {
        pair: pair.to_string(),
        en: entropy(fused),
        mi: mutual_information(fused, i1, i2)?,
        cc: cc.value,
        psnr: ps.value,
        fmi: fmi.value,
        flags: MetricFlags {
            cc_degenerate: cc.degenerate,
            psnr_infinite: ps.degenerate,
            fmi_degenerate: fmi.degenerate,
        },
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset: Option<String>,
    pub checkpoint: Option<String>,
    pub timestamp: Option<String>,
    pub conventions: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub pair: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: Vec<MetricRecord>,
    pub skipped: Vec<SkippedPair>,
    pub meta: ReportMeta,
}

impl MetricReport {
    pub fn new(mut records: Vec<MetricRecord>, mut skipped: Vec<SkippedPair>) -> Self {
        records.sort_by(|a, b| a.pair.cmp(&b.pair));
        skipped.sort_by(|a, b| a.pair.cmp(&b.pair));
        Self {
            records,
            skipped,
            meta: ReportMeta {
                conventions: CONVENTIONS.to_string(),
                ..ReportMeta::default()
            },
        }
    }

    /// Per-metric mean in `en, mi, cc, psnr, fmi` order.
    pub fn mean(&self) -> [f64; 5] {
        let n = self.records.len() as f64;
        let mut m = [0.0; 5];
        for r in &self.records {
            for (acc, v) in m.iter_mut().zip(r.values()) {
                *acc += v;
            }
        }
        m.map(|s| s / n)
    }

    /// Per-metric population standard deviation.
    pub fn std(&self) -> [f64; 5] {
        let mean = self.mean();
        let n = self.records.len() as f64;
        let mut v = [0.0; 5];
        for r in &self.records {
            for ((acc, x), m) in v.iter_mut().zip(r.values()).zip(mean) {
                *acc += (x - m) * (x - m);
            }
        }
        v.map(|s| (s / n).sqrt())
    }

    /// Header, one row per pair, then `mean` and `std` rows. Floats use the
    /// shortest representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let row = |label: &str, vals: [f64; 5]| -> Vec<String> {
            std::iter::once(label.to_string())
                .chain(vals.iter().map(|v| format!("{v}")))
                .collect()
        };
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.records {
            w.write_record(row(&r.pair, r.values())).expect("in-memory write");
        }
        if !self.records.is_empty() {
            w.write_record(row("mean", self.mean())).expect("in-memory write");
            w.write_record(row("std", self.std())).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

/// Parsed metrics CSV: per-pair rows plus the `mean` and `std` footers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedCsv {
    pub rows: Vec<(String, [f64; 5])>,
    pub mean: Option<[f64; 5]>,
    pub std: Option<[f64; 5]>,
}

pub fn parse_csv(text: &str) -> Result<ParsedCsv> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| MetricError::Csv(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(MetricError::Csv(format!("unexpected header {header:?}")));
    }
    let mut out = ParsedCsv {
        rows: Vec::new(),
        mean: None,
        std: None,
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| MetricError::Csv(e.to_string()))?;
        let mut vals = [0.0; 5];
        for (k, v) in vals.iter_mut().enumerate() {
            let field = rec.get(k + 1).ok_or_else(|| MetricError::Csv("short row".into()))?;
            *v = field
                .parse()
                .map_err(|_| MetricError::Csv(format!("bad number `{field}`")))?;
        }
        match &rec[0] {
            "mean" => out.mean = Some(vals),
            "std" => out.std = Some(vals),
            id => out.rows.push((id.to_string(), vals)),
        }
    }
    Ok(out)
}

/// Fuses and scores every pair. Pairs that fail to load or fuse are listed
/// in `skipped` with the reason; records are ordered by pair id.
pub fn evaluate_set<I, E, F, E2>(pairs: I, mut fuse: F) -> MetricReport
where
    I: IntoIterator<Item = (String, std::result::Result<(Plane, Plane), E>)>,
    E: Display,
    F: FnMut(&str, &Plane, &Plane) -> std::result::Result<Plane, E2>,
    E2: Display,
{
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (id, pair) in pairs {
        let outcome = pair
            .map_err(|e| e.to_string())
            .and_then(|(a, b)| fuse(&id, &a, &b).map(|f| (f, a, b)).map_err(|e| e.to_string()))
            .and_then(|(f, a, b)| evaluate_pair(&id, &f, &a, &b).map_err(|e| e.to_string()));
        match outcome {
            Ok(r) => records.push(r),
            Err(reason) => skipped.push(SkippedPair { pair: id, reason }),
        }
    }
    MetricReport::new(records, skipped)
}
