//! Checkpoint loading, batch inference, metric reports and baselines.

use std::fs;
use std::path::{Path, PathBuf};

use medfuse_core::checkpoint::{self, Sidecar};
use medfuse_core::metrics::{evaluate_set, MetricReport};
use medfuse_core::model::FusionNet;
use medfuse_core::plane::Plane;
use medfuse_core::tensor::{Real, Tensor};

use crate::baseline::Method;
use crate::data::{read_image, write_color, write_gray, Manifest, Split};
use crate::error::{io_err, PipelineError, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const MAPS_DIR: &str = "maps";

/// Rebuilds a network from a checkpoint, checking the parameter set against
/// the architecture recorded in the sidecar.
pub fn load_model(path: &Path) -> Result<(FusionNet<f32>, Sidecar)> {
    let (params, sidecar) = checkpoint::load(path)?;
    let net = FusionNet::from_params(sidecar.model.clone(), params)
        .map_err(|e| PipelineError::Incompatible(format!("{}: {e}", path.display())))?;
    Ok((net, sidecar))
}

/// Weight and mixer maps of one fusion, finest scale first.
#[derive(Clone, Debug)]
pub struct FusionMaps {
    pub w1: Vec<Plane>,
    pub alpha: Vec<Option<Plane>>,
}

/// Fuses one pair of luma planes of any size.
pub fn fuse_planes(net: &FusionNet<f32>, a: &Plane, b: &Plane) -> Result<(Plane, FusionMaps)> {
    let out = net.fuse_image(&a.to_tensor(), &b.to_tensor())?;
    let first = |t: &Tensor<f32>| -> Result<Plane> { Ok(Plane::unstack(&channel(t, 0)?)?.remove(0)) };
    let maps = FusionMaps {
        w1: out.scales.iter().map(|s| first(&s.w1)).collect::<Result<_>>()?,
        alpha: out
            .scales
            .iter()
            .map(|s| s.alpha.as_ref().map(first).transpose())
            .collect::<Result<_>>()?,
    };
    Ok((Plane::unstack(&out.fused)?.remove(0), maps))
}

fn channel<T: Real>(t: &Tensor<T>, c: usize) -> Result<Tensor<T>> {
    Ok(t.narrow(1, c, 1)?)
}

/// What the saved 8-bit file holds, read back as [0, 1] samples.
pub fn as_written(p: &Plane) -> Plane {
    p.map(|v| medfuse_core::metrics::quantize(v) as f64 / 255.0)
}

#[derive(Clone, Debug, Default)]
pub struct InferOptions {
    pub dump_maps: bool,
    pub color_reinject: bool,
    /// Square side the sources are resized to; native size when absent.
    pub size: Option<usize>,
}

/// Fuses every test pair, writes `<id>.png` (plus maps on request) and
/// `metrics.csv` into `out`. Metrics are computed on the 8-bit outputs so the
/// CSV agrees with a later `eval` of the same folder.
pub fn infer(net: &FusionNet<f32>, manifest: &Manifest, out: &Path, opts: &InferOptions) -> Result<MetricReport> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    if opts.dump_maps {
        let maps = out.join(MAPS_DIR);
        fs::create_dir_all(&maps).map_err(io_err(&maps))?;
    }
    let mut write_failure: Option<PipelineError> = None;
    let pairs = manifest.select(Split::Test).map(|e| {
        let loaded = manifest.load_pair(e, opts.size);
        (e.id.clone(), loaded)
    });
    let mut chroma_of = std::collections::HashMap::new();
    let pairs: Vec<_> = pairs
        .map(|(id, p)| {
            let planes = p.map(|p| {
                if let Some(c) = p.chroma {
                    chroma_of.insert(p.id.clone(), c);
                }
                (p.a, p.b)
            });
            (id, planes)
        })
        .collect();
    let mut report = evaluate_set(pairs, |id, a, b| -> Result<Plane> {
        let (fused, maps) = fuse_planes(net, a, b)?;
        let path = out.join(format!("{id}.png"));
        match chroma_of.get(id).filter(|_| opts.color_reinject) {
            Some(c) => write_color(&path, &fused, c)?,
            None => write_gray(&path, &fused)?,
        }
        if opts.dump_maps {
            if let Err(e) = write_maps(&out.join(MAPS_DIR), id, &maps) {
                write_failure.get_or_insert(e);
            }
        }
        Ok(as_written(&fused))
    });
    if let Some(e) = write_failure {
        return Err(e);
    }
    report.meta.dataset = Some(manifest.base_dir.display().to_string());
    write_report(&out.join(METRICS_CSV), &report)?;
    Ok(report)
}

fn write_maps(dir: &Path, id: &str, maps: &FusionMaps) -> Result<()> {
    for (s, w1) in maps.w1.iter().enumerate() {
        write_gray(&dir.join(format!("{id}_w1_s{}.png", s + 1)), w1)?;
    }
    for (s, alpha) in maps.alpha.iter().enumerate() {
        if let Some(a) = alpha {
            write_gray(&dir.join(format!("{id}_alpha_s{}.png", s + 1)), a)?;
        }
    }
    Ok(())
}

pub fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    fs::write(path, report.to_csv()).map_err(io_err(path))?;
    for s in &report.skipped {
        log::warn!("skipped pair `{}`: {}", s.pair, s.reason);
    }
    Ok(())
}

/// Scores externally produced fused images: `<fused>/<id>.png` (or `.pgm`)
/// against the test pairs. Colour outputs are scored on their luma.
pub fn eval(fused_dir: &Path, manifest: &Manifest, size: Option<usize>) -> Result<MetricReport> {
    let find = |id: &str| -> Option<PathBuf> {
        ["png", "pgm"]
            .iter()
            .map(|ext| fused_dir.join(format!("{id}.{ext}")))
            .find(|p| p.exists())
    };
    let pairs: Vec<_> = manifest
        .select(Split::Test)
        .map(|e| (e.id.clone(), manifest.load_pair(e, size).map(|p| (p.a, p.b))))
        .collect();
    let mut report = evaluate_set(pairs, |id, a, _| -> Result<Plane> {
        let path = find(id).ok_or_else(|| PipelineError::Pair {
            id: id.to_string(),
            reason: format!("no fused image in {}", fused_dir.display()),
        })?;
        let fused = read_image(&path)?.luma().clone();
        if fused.dims() != a.dims() {
            return Err(PipelineError::Pair {
                id: id.to_string(),
                reason: format!("fused image is {:?}, sources are {:?}", fused.dims(), a.dims()),
            });
        }
        Ok(fused)
    });
    report.meta.dataset = Some(manifest.base_dir.display().to_string());
    Ok(report)
}

/// Runs a classical rule over the test pairs, writing images and metrics.
pub fn baseline(method: Method, manifest: &Manifest, out: &Path, size: Option<usize>) -> Result<MetricReport> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let pairs: Vec<_> = manifest
        .select(Split::Test)
        .map(|e| (e.id.clone(), manifest.load_pair(e, size).map(|p| (p.a, p.b))))
        .collect();
    let report = evaluate_set(pairs, |id, a, b| -> Result<Plane> {
        let fused = method
            .fuse(a, b)
            .map_err(|e| PipelineError::Pair {
                id: id.to_string(),
                reason: e.to_string(),
            })?;
        write_gray(&out.join(format!("{id}.png")), &fused)?;
        Ok(as_written(&fused))
    });
    write_report(&out.join(METRICS_CSV), &report)?;
    Ok(report)
}
