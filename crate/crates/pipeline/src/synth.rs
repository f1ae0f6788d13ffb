//! Synthetic co-registered pairs for smoke tests and desk-scale runs.
//!
//! Both images share one random phantom (an oval head with a skull ring and
//! a few inner structures) but map it to intensities differently: the first
//! source has a bright skull and faint soft tissue, the second a dark skull
//! and strong soft-tissue contrast with a smooth bias field.

use std::fs;
use std::path::Path;

use medfuse_core::plane::Plane;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{write_gray, ColorPolicy, Manifest, ManifestEntry, Split};
use crate::error::{io_err, Result};

struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    a: f64,
    b: f64,
}

impl Blob {
    fn inside(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        u * u + v * v <= 1.0
    }
}

/// One aligned pair of `size × size` images in [0, 1].
pub fn synth_pair(size: usize, seed: u64) -> (Plane, Plane) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head_ry = rng.gen_range(0.38..0.46);
    let head_rx = rng.gen_range(0.30..0.40);
    let skull = rng.gen_range(0.04..0.07);
    let blobs: Vec<Blob> = (0..rng.gen_range(3..7))
        .map(|_| Blob {
            cy: rng.gen_range(-0.2..0.2),
            cx: rng.gen_range(-0.15..0.15),
            ry: rng.gen_range(0.04..0.16),
            rx: rng.gen_range(0.04..0.16),
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            a: rng.gen_range(0.25..0.9),
            b: rng.gen_range(0.1..0.95),
        })
        .collect();
    let bias = [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
    let noise_a: Vec<f64> = (0..size * size).map(|_| rng.gen_range(-0.02..0.02)).collect();
    let noise_b: Vec<f64> = (0..size * size).map(|_| rng.gen_range(-0.02..0.02)).collect();

    let n = size as f64;
    let mut a = Vec::with_capacity(size * size);
    let mut b = Vec::with_capacity(size * size);
    for k in 0..size * size {
        let y = ((k / size) as f64 + 0.5) / n - 0.5;
        let x = ((k % size) as f64 + 0.5) / n - 0.5;
        let r = ((y / head_ry).powi(2) + (x / head_rx).powi(2)).sqrt();
        let (mut va, mut vb) = if r > 1.0 {
            (0.0, 0.0)
        } else if r > 1.0 - skull / head_ry.min(head_rx) {
            (0.95, 0.08)
        } else {
            (0.2, 0.45 + bias[0] * y + bias[1] * x)
        };
        if r <= 1.0 {
            for blob in blobs.iter().filter(|bl| bl.inside(y, x)) {
                va = blob.a;
                vb = blob.b;
            }
            va += noise_a[k];
            vb += noise_b[k];
        }
        a.push(va.clamp(0.0, 1.0));
        b.push(vb.clamp(0.0, 1.0));
    }
    let plane = |v| Plane::new(size, size, v).expect("size × size samples");
    (plane(a), plane(b))
}

/// Writes `train + test` pairs as PNG files plus a `manifest.json` into
/// `dir`. Pair `k` uses seed `seed + k`.
pub fn write_set(dir: &Path, train: usize, test: usize, size: usize, seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::new();
    for k in 0..train + test {
        let (split, id) = if k < train {
            (Split::Train, format!("train{k:03}"))
        } else {
            (Split::Test, format!("test{:03}", k - train))
        };
        let (a, b) = synth_pair(size, seed.wrapping_add(k as u64));
        let (fa, fb) = (format!("{id}_a.png"), format!("{id}_b.png"));
        write_gray(&dir.join(&fa), &a)?;
        write_gray(&dir.join(&fb), &b)?;
        entries.push(ManifestEntry {
            id,
            a: fa.into(),
            b: fb.into(),
            modality_a: Some("synthetic-a".into()),
            modality_b: Some("synthetic-b".into()),
            split: Some(split),
            color: ColorPolicy::Auto,
        });
    }
    let manifest = Manifest::new(entries, dir)?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use medfuse_core::metrics::pearson;

    #[test]
    fn pairs_are_deterministic_and_in_range() {
        let (a, b) = synth_pair(32, 4);
        assert_eq!(synth_pair(32, 4), (a.clone(), b.clone()));
        assert_ne!(synth_pair(32, 5).0, a);
        assert!(a.data().iter().chain(b.data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sources_are_related_but_distinct() {
        let (a, b) = synth_pair(64, 9);
        let r = pearson(&a, &b).unwrap().unwrap();
        assert!(r.abs() < 0.95, "r = {r}");
        let std = |p: &Plane| {
            let m = p.data().iter().sum::<f64>() / p.len() as f64;
            (p.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / p.len() as f64).sqrt()
        };
        assert!(std(&a) > 0.1 && std(&b) > 0.1);
    }

    #[test]
    fn written_set_loads_back() {
        let tmp = tempfile::tempdir().unwrap();
        write_set(tmp.path(), 2, 1, 32, 0).unwrap();
        let m = Manifest::load(&tmp.path().join("manifest.json")).unwrap();
        assert_eq!(m.select(Split::Train).count(), 2);
        assert_eq!(m.select(Split::Test).count(), 1);
        let pair = m.load_pair(&m.entries[2], None).unwrap();
        let (a, _) = synth_pair(32, 2);
        for (x, y) in pair.a.data().iter().zip(a.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
