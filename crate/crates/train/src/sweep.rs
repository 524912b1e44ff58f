//! Width by mode by seed grids, run in parallel and reported as CSV.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Split;
use crate::error::Result;
use crate::train::{sample_std, train, Mode, TrainConfig};

/// One CSV row. `error` is empty for successful runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub width: usize,
    pub mode: Mode,
    pub seed: u64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub final_loss: f64,
    pub wall_s: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub width: usize,
    pub mode: Mode,
    pub runs: usize,
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

/// Runs every `(width, mode, seed)` cell of `base`; rows are sorted by
/// that key whatever the scheduling. A failed cell yields a row with `error`
/// set and NaN metrics.
pub fn sweep(base: &TrainConfig, widths: &[usize], modes: &[Mode], seeds: &[u64], split: &Split) -> Vec<SweepRow> {
    let mut cells: Vec<(usize, Mode, u64)> = widths
        .iter()
        .flat_map(|&w| modes.iter().flat_map(move |&m| seeds.iter().map(move |&s| (w, m, s))))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    cells
        .into_par_iter()
        .map(|(width, mode, seed)| {
            let config = TrainConfig { width, mode, seed, ..base.clone() };
            match train(&config, split) {
                Ok(m) => SweepRow {
                    width,
                    mode,
                    seed,
                    train_acc: m.train_acc,
                    test_acc: m.test_acc,
                    final_loss: m.final_loss,
                    wall_s: m.wall_s,
                    error: None,
                },
                Err(e) => SweepRow {
                    width,
                    mode,
                    seed,
                    train_acc: f64::NAN,
                    test_acc: f64::NAN,
                    final_loss: f64::NAN,
                    wall_s: 0.0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Mean and sample standard deviation per `(width, mode)` over successful rows.
pub fn summarize(rows: &[SweepRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(usize, Mode)> = rows.iter().map(|r| (r.width, r.mode)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|(width, mode)| {
            let ok: Vec<&SweepRow> =
                rows.iter().filter(|r| r.width == width && r.mode == mode && r.error.is_none()).collect();
            let train: Vec<f64> = ok.iter().map(|r| r.train_acc).collect();
            let test: Vec<f64> = ok.iter().map(|r| r.test_acc).collect();
            let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
            CellSummary {
                width,
                mode,
                runs: ok.len(),
                train_mean: mean(&train),
                train_std: sample_std(&train),
                test_mean: mean(&test),
                test_std: sample_std(&test),
            }
        })
        .collect()
}

/// Header `width,mode,seed,train_acc,test_acc,final_loss,wall_s,error`.
pub fn write_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
