//! Library side of the `pwtt` command-line tool.

pub mod config;
pub mod report;

use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use pwtt::grid::read_cells_csv;
use pwtt::pipeline::{files, read_tmap, write_analysis, RunConfig};
use pwtt::regression::{fit_damage_regression, regression_table, RegressionResult, ZeroHandling};

/// Re-scores an existing T map under `cfg` and writes every report to
/// `cfg.output_dir`.
pub fn evaluate(cfg: &RunConfig, tmap_dir: &Path) -> Result<Value> {
    cfg.validate()?;
    let analysis = pwtt::pipeline::cmd_evaluate(cfg, tmap_dir)?;
    let (tmap, _) = read_tmap(tmap_dir)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let outputs = write_analysis(&analysis, Some(&tmap.grid.crs_id), cfg, out)?;
    Ok(json!({
        "output_dir": out,
        "threshold": analysis.threshold,
        "buildings": analysis.predictions.len(),
        "evaluated": analysis.eval_set.len(),
        "outputs": outputs,
    }))
}

/// Pools grid cells from several runs (each an artifact directory or a
/// cells CSV) and fits the log-count regression with city fixed effects.
pub fn regress(inputs: &[impl AsRef<Path>], zero: ZeroHandling) -> Result<(RegressionResult, String)> {
    let mut cells = Vec::new();
    for p in inputs {
        let p = p.as_ref();
        let csv = if p.is_dir() { p.join(files::GRID_CSV) } else { p.to_path_buf() };
        cells.extend(read_cells_csv(&csv)?);
    }
    let res = fit_damage_regression(&cells, zero)?;
    let text = regression_table(&res);
    Ok((res, text))
}
