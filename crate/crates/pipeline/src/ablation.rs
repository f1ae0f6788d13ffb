//! Module and loss-term ablation sweeps with one consolidated CSV per grid.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use medfuse_core::metrics::MetricReport;
use medfuse_core::model::ExpertSwitches;
use serde::{Deserialize, Serialize};

use crate::config::{LossToggles, RunConfig};
use crate::data::Manifest;
use crate::error::{io_err, PipelineError, Result};
use crate::infer::{infer, InferOptions};
use crate::train::train;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// Expert and mixer switches.
    Arch,
    /// One loss term zeroed at a time.
    Loss,
}

impl Grid {
    pub fn name(&self) -> &'static str {
        match self {
            Grid::Arch => "arch",
            Grid::Loss => "loss",
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Grid {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arch" => Ok(Grid::Arch),
            "loss" => Ok(Grid::Loss),
            other => Err(PipelineError::Config(format!("unknown grid `{other}` (expected arch or loss)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub experts: ExpertSwitches,
    pub terms: LossToggles,
}

fn switches(use_gce: bool, use_we: bool, use_sgm: bool) -> ExpertSwitches {
    ExpertSwitches {
        use_gce,
        use_we,
        use_sgm,
    }
}

/// Rows in a fixed order, the full model last.
pub fn grid_rows(grid: Grid) -> Vec<AblationRow> {
    let row = |name: &str, experts, terms| AblationRow {
        name: name.to_string(),
        experts,
        terms,
    };
    let all = LossToggles::default();
    match grid {
        Grid::Arch => vec![
            row("no_gce", switches(false, true, false), all),
            row("no_we", switches(true, false, false), all),
            row("no_sgm", switches(true, true, false), all),
            row("full", ExpertSwitches::default(), all),
        ],
        Grid::Loss => {
            let off = |f: fn(&mut LossToggles)| {
                let mut t = all;
                f(&mut t);
                t
            };
            vec![
                row("no_avg", ExpertSwitches::default(), off(|t| t.avg = false)),
                row("no_grad", ExpertSwitches::default(), off(|t| t.grad = false)),
                row("no_cc", ExpertSwitches::default(), off(|t| t.cc = false)),
                row("no_mi", ExpertSwitches::default(), off(|t| t.mi = false)),
                row("no_rec", ExpertSwitches::default(), off(|t| t.rec = false)),
                row("full", ExpertSwitches::default(), all),
            ]
        }
    }
}

impl AblationRow {
    pub fn apply(&self, base: &RunConfig, dir: &Path) -> RunConfig {
        RunConfig {
            experts: self.experts,
            loss_terms: self.terms,
            output_dir: dir.to_path_buf(),
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub enum RowOutcome {
    Done {
        final_loss: f64,
        report: MetricReport,
    },
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct RowResult {
    pub row: AblationRow,
    pub config: RunConfig,
    pub outcome: RowOutcome,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub grid: Grid,
    pub rows: Vec<RowResult>,
}

pub const CSV_HEADER: [&str; 18] = [
    "grid",
    "row",
    "use_gce",
    "use_we",
    "use_sgm",
    "lambda_avg",
    "lambda_grad",
    "lambda_cc",
    "lambda_mi",
    "lambda_rec",
    "status",
    "final_loss",
    "pairs",
    "en",
    "mi",
    "cc",
    "psnr",
    "fmi",
];

impl AblationReport {
    /// One row per configuration; metric cells are test-pair means and stay
    /// empty for failed rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            let e = r.config.experts;
            let l = r.config.effective_weights();
            let mut rec = vec![
                self.grid.name().to_string(),
                r.row.name.clone(),
                e.use_gce.to_string(),
                e.use_we.to_string(),
                e.use_sgm.to_string(),
            ];
            rec.extend([l.avg, l.grad, l.cc, l.mi, l.rec].map(|v| v.to_string()));
            match &r.outcome {
                RowOutcome::Done { final_loss, report } => {
                    rec.push("ok".into());
                    rec.push(final_loss.to_string());
                    rec.push(report.records.len().to_string());
                    if report.records.is_empty() {
                        rec.extend(std::iter::repeat(String::new()).take(5));
                    } else {
                        rec.extend(report.mean().map(|v| v.to_string()));
                    }
                }
                RowOutcome::Failed(msg) => {
                    rec.push(format!("failed: {msg}"));
                    rec.extend(std::iter::repeat(String::new()).take(7));
                }
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

fn run_row(config: &RunConfig, manifest: &Manifest) -> Result<RowOutcome> {
    let report = train(config, manifest, None)?;
    let final_loss = report.records.last().map_or(f64::NAN, |r| r.loss.total);
    let (net, _) = crate::infer::load_model(&report.last)?;
    let opts = InferOptions {
        size: Some(config.image_size),
        ..Default::default()
    };
    let metrics = infer(&net, manifest, &config.output_dir.join("fused"), &opts)?;
    Ok(RowOutcome::Done {
        final_loss,
        report: metrics,
    })
}

/// Trains and evaluates every row of `grid` under `out/<grid>/<row>`, then
/// writes `out/ablation_<grid>.csv`. A failing row is recorded and the sweep
/// moves on.
pub fn run_grid(base: &RunConfig, manifest: &Manifest, grid: Grid, out: &Path) -> Result<(AblationReport, PathBuf)> {
    let mut rows = Vec::new();
    for row in grid_rows(grid) {
        let config = row.apply(base, &out.join(grid.name()).join(&row.name));
        log::info!("ablation {grid}/{}: training", row.name);
        let outcome = config
            .validate()
            .and_then(|_| run_row(&config, manifest))
            .unwrap_or_else(|e| {
                log::warn!("ablation {grid}/{} failed: {e}", row.name);
                RowOutcome::Failed(e.to_string())
            });
        rows.push(RowResult { row, config, outcome });
    }
    let report = AblationReport { grid, rows };
    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join(format!("ablation_{grid}.csv"));
    fs::write(&path, report.to_csv()).map_err(io_err(&path))?;
    Ok((report, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_have_expected_rows() {
        let arch = grid_rows(Grid::Arch);
        assert_eq!(arch.len(), 4);
        let flags: Vec<_> = arch.iter().map(|r| (r.experts.use_gce, r.experts.use_we, r.experts.use_sgm)).collect();
        assert_eq!(
            flags,
            vec![(false, true, false), (true, false, false), (true, true, false), (true, true, true)]
        );
        assert!(arch.iter().all(|r| r.terms == LossToggles::default()));

        let loss = grid_rows(Grid::Loss);
        assert_eq!(loss.len(), 6);
        let zeroed: Vec<usize> = loss
            .iter()
            .map(|r| {
                let t = r.terms;
                [t.avg, t.grad, t.cc, t.mi, t.rec].iter().filter(|on| !**on).count()
            })
            .collect();
        assert_eq!(zeroed, vec![1, 1, 1, 1, 1, 0]);
        assert_eq!(arch.last().unwrap().name, "full");
        assert_eq!(loss.last().unwrap().name, "full");
    }

    #[test]
    fn each_loss_row_zeroes_its_own_term() {
        let base = RunConfig::default();
        for (row, term) in grid_rows(Grid::Loss).iter().zip(["avg", "grad", "cc", "mi", "rec"]) {
            let w = row.apply(&base, Path::new("x")).effective_weights();
            assert_eq!(Some(w), base.loss_weights.without(term));
        }
    }

    #[test]
    fn schema_is_identical_for_failed_and_done_rows() {
        let base = RunConfig::default();
        let rows = grid_rows(Grid::Arch)
            .into_iter()
            .enumerate()
            .map(|(k, row)| RowResult {
                config: row.apply(&base, Path::new("x")),
                row,
                outcome: if k % 2 == 0 {
                    RowOutcome::Failed("boom, with comma".into())
                } else {
                    RowOutcome::Done {
                        final_loss: 1.0,
                        report: MetricReport::new(Vec::new(), Vec::new()),
                    }
                },
            })
            .collect();
        let csv = AblationReport { grid: Grid::Arch, rows }.to_csv();
        let mut r = csv::Reader::from_reader(csv.as_bytes());
        assert_eq!(r.headers().unwrap().len(), CSV_HEADER.len());
        let recs: Vec<_> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|x| x.len() == CSV_HEADER.len()));
        assert_eq!(&recs[0][10], "failed: boom, with comma");
    }

    #[test]
    fn grid_names_parse() {
        assert_eq!("arch".parse::<Grid>().unwrap(), Grid::Arch);
        assert_eq!("loss".parse::<Grid>().unwrap(), Grid::Loss);
        assert!("both".parse::<Grid>().is_err());
    }
}
