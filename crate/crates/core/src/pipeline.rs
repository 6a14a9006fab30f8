//! End-to-end run: T map, building scores, metrics, grid analysis and
//! the run manifest.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::footprint::{
    filter_footprints_by_area, label_footprints, zonal_mean_t, AnnotationLayer, FootprintLayer, Label,
    LabeledFootprint, LABEL_TOLERANCE_M, MIN_FOOTPRINT_AREA_M2,
};
use crate::geojson::{
    predictions_csv, predictions_to_geojson, read_annotations, read_feature_collection, read_footprints, write_json,
    PredictionRow,
};
use crate::geotiff::{read_raster, write_raster, SampleType};
use crate::grid::{aggregate_cells, build_grid, cell_scores, cells_csv, CityLayers, GridCell, DEFAULT_CELL_SIZE};
use crate::manifest::load_stack;
use crate::metrics::{
    balanced_sample, evaluate, metrics_table_csv, pr_csv, pr_curve, roc_csv, roc_curve, select_threshold,
    EvalRecord, MetricsReport, PrPoint, Scored, Weighting,
};
use crate::population::{exposure, ExposureReport, PopulationRaster};
use crate::raster::{AnalysisWindow, Extent, Interval, Raster};
use crate::regression::{fit_damage_regression, regression_table, ZeroHandling};
use crate::spillover::{histogram_csv, spillover_analysis, Outcome};
use crate::stats::t_critical;
use crate::ttest::{conservative_df, run_pwtt, PwttParams, SpeckleConfig, StratumRecord, TMap, TMapSidecar};

/// Pair of `YYYY-MM-DD` (or RFC 3339) bounds, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub reference: [String; 2],
    pub inference: [String; 2],
}

impl WindowConfig {
    pub fn to_window(&self) -> Result<AnalysisWindow> {
        let iv = |p: &[String; 2]| -> Result<Interval> {
            Ok(Interval::new(
                crate::raster::parse_time(&p[0])?,
                crate::raster::parse_time(&p[1])?,
            ))
        };
        AnalysisWindow::new(iv(&self.reference)?, iv(&self.inference)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ThresholdMode {
    Fixed { value: f64 },
    Significance { alpha: f64 },
    PrOptimal,
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::PrOptimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub tolerance_m: f64,
    pub min_area_m2: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            tolerance_m: LABEL_TOLERANCE_M,
            min_area_m2: MIN_FOOTPRINT_AREA_M2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub cell_size: f64,
    pub zero_handling: ZeroHandling,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cell_size: DEFAULT_CELL_SIZE,
            zero_handling: ZeroHandling::Exclude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    /// Evaluate on all damaged buildings plus as many random undamaged ones.
    pub balanced: bool,
    /// Weighting used to pick the PR-optimal threshold.
    pub weighting: Weighting,
    pub spillover_bin_m: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            balanced: true,
            weighting: Weighting::Area,
            spillover_bin_m: 10.0,
        }
    }
}

/// Run configuration, read from TOML. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub footprints: PathBuf,
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    #[serde(default)]
    pub population: Option<PathBuf>,
    #[serde(default)]
    pub events: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; outputs do not depend on it.
    #[serde(default)]
    pub threads: Option<usize>,
    pub window: WindowConfig,
    #[serde(default)]
    pub speckle: SpeckleConfig,
    #[serde(default)]
    pub pwtt: PwttParams,
    #[serde(default)]
    pub threshold: ThresholdMode,
    #[serde(default)]
    pub labels: LabelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| Error::parse("run config", e))?;
        c.resolve_paths(base);
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.footprints);
        fix(&mut self.output_dir);
        for p in [&mut self.annotations, &mut self.population, &mut self.events].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut inputs = vec![&self.manifest, &self.footprints];
        inputs.extend([&self.annotations, &self.population, &self.events].into_iter().flatten());
        for p in inputs {
            if !p.exists() {
                return Err(Error::InvalidArgument(format!("input {} does not exist", p.display())));
            }
        }
        self.window.to_window()?;
        self.pwtt.validate()?;
        if self.speckle.enabled {
            self.speckle.params().validate()?;
        }
        match self.threshold {
            ThresholdMode::Fixed { value } if !value.is_finite() => {
                return Err(Error::InvalidArgument("fixed threshold must be finite".into()))
            }
            ThresholdMode::Significance { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                return Err(Error::InvalidArgument(format!("alpha must be in (0,1), got {alpha}")))
            }
            ThresholdMode::PrOptimal if self.annotations.is_none() => {
                return Err(Error::InvalidArgument("pr-optimal threshold needs annotations".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Footprints scored against a T map, with labels when annotations exist.
#[derive(Debug, Clone)]
pub struct BuildingScores {
    pub footprints: Vec<LabeledFootprint>,
    pub has_labels: bool,
    /// id → mean T
    pub mean_t: BTreeMap<String, f64>,
    pub excluded: Vec<String>,
    pub removed_small: usize,
}

impl BuildingScores {
    /// Buildings with a defined mean T, sorted by id.
    pub fn records(&self) -> Vec<EvalRecord> {
        let mut v: Vec<EvalRecord> = self
            .footprints
            .iter()
            .filter_map(|lf| {
                self.mean_t.get(&lf.footprint.id).map(|t| EvalRecord {
                    id: lf.footprint.id.clone(),
                    city: lf.footprint.city.clone(),
                    mean_t: *t,
                    label: lf.label,
                    area: lf.footprint.area,
                })
            })
            .collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }
}

pub fn score_buildings(
    tmap: &Raster,
    footprints: FootprintLayer,
    annotations: Option<&AnnotationLayer>,
    labels: &LabelConfig,
) -> Result<BuildingScores> {
    let before = footprints.footprints.len();
    let kept = FootprintLayer {
        crs_id: footprints.crs_id.clone(),
        footprints: filter_footprints_by_area(footprints.footprints, labels.min_area_m2),
    };
    let removed_small = before - kept.footprints.len();
    let zonal = zonal_mean_t(tmap, &kept).map_err(|e| e.in_module("footprint_zonal"))?;
    let (labeled, has_labels) = match annotations {
        Some(a) => (
            label_footprints(&kept, a, labels.tolerance_m).map_err(|e| e.in_module("footprint_zonal"))?,
            true,
        ),
        None => (
            kept.footprints
                .into_iter()
                .map(|f| LabeledFootprint {
                    footprint: f,
                    label: Label::Undamaged,
                })
                .collect(),
            false,
        ),
    };
    Ok(BuildingScores {
        footprints: labeled,
        has_labels,
        mean_t: zonal.values.into_iter().collect(),
        excluded: zonal.excluded,
        removed_small,
    })
}

/// How the classification threshold was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub mode: ThresholdMode,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

/// The evaluation subset: a balanced sample when enabled, else everything.
pub fn evaluation_set(records: &[EvalRecord], cfg: &EvaluationConfig, seed: u64) -> Vec<EvalRecord> {
    if !cfg.balanced {
        return records.to_vec();
    }
    balanced_sample(records, |r| r.label.is_damaged(), seed).unwrap_or_else(|e| {
        log::warn!("balanced sample unavailable ({e}); evaluating all buildings");
        records.to_vec()
    })
}

pub fn resolve_threshold(
    mode: ThresholdMode,
    strata: &[StratumRecord],
    eval_set: &[EvalRecord],
    weighting: Weighting,
) -> Result<ThresholdChoice> {
    match mode {
        ThresholdMode::Fixed { value } => Ok(ThresholdChoice {
            mode,
            value,
            df: None,
            f1: None,
        }),
        ThresholdMode::Significance { alpha } => {
            let df = conservative_df(strata)
                .ok_or_else(|| Error::InsufficientSamples("no stratum was used".into()))?;
            Ok(ThresholdChoice {
                mode,
                value: t_critical(df.max(1.0), alpha)?,
                df: Some(df),
                f1: None,
            })
        }
        ThresholdMode::PrOptimal => {
            let scored: Vec<Scored> = eval_set.iter().map(|r| r.scored(weighting)).collect();
            let best = select_threshold(&pr_curve(&scored)?)?;
            Ok(ThresholdChoice {
                mode,
                value: best.threshold,
                df: None,
                f1: Some(best.f1()),
            })
        }
    }
}

/// Per-city and overall metric rows.
pub fn metrics_by_city(eval_set: &[EvalRecord], threshold: f64, weighting: Weighting) -> Vec<MetricsReport> {
    let mut by_city: BTreeMap<&str, Vec<EvalRecord>> = BTreeMap::new();
    for r in eval_set {
        by_city.entry(r.city.as_str()).or_default().push(r.clone());
    }
    let mut rows: Vec<MetricsReport> = by_city
        .iter()
        .map(|(c, recs)| evaluate(c, recs, threshold, weighting))
        .collect();
    if by_city.len() > 1 {
        rows.push(evaluate("All", eval_set, threshold, weighting));
    }
    rows
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Summary of a finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub threshold: ThresholdChoice,
    pub buildings: usize,
    pub evaluated: usize,
    pub outputs: BTreeMap<String, String>,
}

/// Output file names inside the artifact directory.
pub mod files {
    pub const TMAP: &str = "tmap.tif";
    pub const TMAP_SIDECAR: &str = "tmap.json";
    pub const PREDICTIONS_GEOJSON: &str = "predictions.geojson";
    pub const PREDICTIONS_CSV: &str = "predictions.csv";
    pub const METRICS_JSON: &str = "metrics.json";
    pub const METRICS_TABLE: &str = "metrics_table.csv";
    pub const METRICS_TABLE_COUNT: &str = "metrics_table_count.csv";
    pub const ROC_CSV: &str = "roc.csv";
    pub const PR_CSV: &str = "pr.csv";
    pub const PR_JSON: &str = "pr_curve.json";
    pub const GRID_CSV: &str = "grid_cells.csv";
    pub const GRID_JSON: &str = "grid.json";
    pub const REGRESSION_JSON: &str = "regression.json";
    pub const REGRESSION_TXT: &str = "regression.txt";
    pub const SPILLOVER_JSON: &str = "spillover.json";
    pub const SPILLOVER_CSV: &str = "spillover_histogram.csv";
    pub const EXPOSURE_JSON: &str = "exposure.json";
    pub const RUN_MANIFEST: &str = "run_manifest.json";
}

/// Everything computed from a T map and the vector layers.
pub struct Analysis {
    pub scores: BuildingScores,
    pub eval_set: Vec<EvalRecord>,
    pub threshold: ThresholdChoice,
    pub predictions: Vec<PredictionRow>,
    pub metrics: Value,
    pub pr: Option<Vec<PrPoint>>,
    pub cells: Vec<GridCell>,
    pub grid_report: Value,
    pub regression: Value,
    pub regression_text: Option<String>,
    pub spillover: Option<crate::spillover::SpilloverReport>,
    pub exposure: Option<ExposureReport>,
}

/// Inputs already loaded into memory.
pub struct AnalysisInputs<'a> {
    pub tmap: &'a Raster,
    pub strata: &'a [StratumRecord],
    pub footprints: FootprintLayer,
    pub annotations: Option<&'a AnnotationLayer>,
    pub population: Option<&'a PopulationRaster>,
}

fn footprint_extent(f: &[LabeledFootprint]) -> Option<Extent> {
    let mut it = f.iter().map(|l| l.footprint.polygon.bbox());
    let first = it.next()?;
    Some(it.fold(first, |a, b| Extent {
        min_x: a.min_x.min(b.min_x),
        min_y: a.min_y.min(b.min_y),
        max_x: a.max_x.max(b.max_x),
        max_y: a.max_y.max(b.max_y),
    }))
}

/// Building scores, evaluation set, threshold and PR curve for one T map.
pub struct Scoring {
    pub scores: BuildingScores,
    pub records: Vec<EvalRecord>,
    pub eval_set: Vec<EvalRecord>,
    pub threshold: ThresholdChoice,
    /// Over the evaluation set with the configured weighting.
    pub pr: Option<Vec<PrPoint>>,
}

pub fn score_tmap(
    tmap: &Raster,
    strata: &[StratumRecord],
    footprints: FootprintLayer,
    annotations: Option<&AnnotationLayer>,
    cfg: &RunConfig,
) -> Result<Scoring> {
    let scores = score_buildings(tmap, footprints, annotations, &cfg.labels)?;
    let records = scores.records();
    let eval_set = if scores.has_labels {
        evaluation_set(&records, &cfg.evaluation, cfg.seed)
    } else {
        Vec::new()
    };
    let threshold = resolve_threshold(cfg.threshold, strata, &eval_set, cfg.evaluation.weighting)
        .map_err(|e| e.in_module("metrics"))?;
    let pr = if scores.has_labels {
        let w = cfg.evaluation.weighting;
        let scored: Vec<Scored> = eval_set.iter().map(|r| r.scored(w)).collect();
        pr_curve(&scored).ok()
    } else {
        None
    };
    Ok(Scoring {
        scores,
        records,
        eval_set,
        threshold,
        pr,
    })
}

pub fn analyze(inputs: AnalysisInputs<'_>, cfg: &RunConfig) -> Result<Analysis> {
    let Scoring {
        scores,
        records,
        eval_set,
        threshold,
        pr,
    } = score_tmap(inputs.tmap, inputs.strata, inputs.footprints, inputs.annotations, cfg)?;
    let thr = threshold.value;

    let predictions: Vec<PredictionRow> = scores
        .footprints
        .iter()
        .filter_map(|lf| {
            let t = *scores.mean_t.get(&lf.footprint.id)?;
            Some(PredictionRow {
                id: lf.footprint.id.clone(),
                city: lf.footprint.city.clone(),
                country: lf.footprint.country.clone(),
                area: lf.footprint.area,
                mean_t: t,
                predicted: if t > thr { Label::Damaged } else { Label::Undamaged },
                label: scores.has_labels.then_some(lf.label),
                polygon: Some(lf.footprint.polygon.clone()),
            })
        })
        .collect();
    let mut predictions = predictions;
    predictions.sort_by(|a, b| a.id.cmp(&b.id));

    let (metrics, pr) = if scores.has_labels {
        let area = metrics_by_city(&eval_set, thr, Weighting::Area);
        let count = metrics_by_city(&eval_set, thr, Weighting::Count);
        let all_area = metrics_by_city(&records, thr, Weighting::Area);
        let w = cfg.evaluation.weighting;
        let scored: Vec<Scored> = eval_set.iter().map(|r| r.scored(w)).collect();
        let roc = roc_curve(&scored).ok();
        let damaged = eval_set.iter().filter(|r| r.label.is_damaged()).count();
        (
            json!({
                "threshold": threshold,
                "balanced": cfg.evaluation.balanced,
                "curve_weighting": w,
                "evaluated": eval_set.len(),
                "evaluated_damaged": damaged,
                "buildings_scored": records.len(),
                "buildings_excluded_nodata": scores.excluded.len(),
                "buildings_removed_small": scores.removed_small,
                "area_weighted": area,
                "count_weighted": count,
                "all_buildings_area_weighted": all_area,
                "auc_curve": roc.as_ref().map(|r| r.1),
            }),
            pr,
        )
    } else {
        (json!({"threshold": threshold, "labels": false}), pr)
    };

    // grid analysis per city
    let predicted_ids: Vec<String> = predictions
        .iter()
        .filter(|p| p.predicted.is_damaged())
        .map(|p| p.id.clone())
        .collect();
    let empty = AnnotationLayer::default();
    let anns = inputs.annotations.unwrap_or(&empty);
    let mut by_city: BTreeMap<&str, Vec<LabeledFootprint>> = BTreeMap::new();
    for lf in &scores.footprints {
        by_city.entry(lf.footprint.city.as_str()).or_default().push(lf.clone());
    }
    let mut cells = Vec::new();
    for (city, fps) in &by_city {
        let Some(ext) = footprint_extent(fps) else { continue };
        let city_anns: Vec<_> = anns
            .annotations
            .iter()
            .filter(|a| ext.contains_point(a.point.0, a.point.1))
            .cloned()
            .collect();
        let grid = build_grid(&ext, cfg.grid.cell_size, city).map_err(|e| e.in_module("grid_analysis"))?;
        cells.extend(aggregate_cells(
            grid,
            &CityLayers {
                city,
                footprints: fps,
                annotations: &city_anns,
                predicted: Some(&predicted_ids),
                tmap: Some(inputs.tmap),
            },
        ));
    }
    let cell_auc = roc_curve(&cell_scores(&cells)).ok().map(|r| r.1);
    let cell_eval = {
        let recs: Vec<EvalRecord> = cells
            .iter()
            .filter_map(|c| {
                c.mean_t.map(|t| EvalRecord {
                    id: c.cell_id.clone(),
                    city: c.city.clone(),
                    mean_t: t,
                    label: if c.is_damaged() { Label::Damaged } else { Label::Undamaged },
                    area: 1.0,
                })
            })
            .collect();
        metrics_by_city(&recs, thr, Weighting::Count)
    };
    let grid_report = json!({
        "cell_size": cfg.grid.cell_size,
        "cells": cells.len(),
        "cells_with_buildings": cells.iter().filter(|c| c.building_count > 0).count(),
        "cells_damaged": cells.iter().filter(|c| c.is_damaged()).count(),
        "cell_auc": cell_auc,
        "cell_metrics": cell_eval,
    });
    let (regression, regression_text) = match fit_damage_regression(&cells, cfg.grid.zero_handling) {
        Ok(r) => {
            let text = regression_table(&r);
            (
                json!({
                    "result": r,
                    "t_effect_pct": r.t_effect_pct(),
                    "fixed_effects": r.fixed_effects(),
                }),
                Some(text),
            )
        }
        Err(e) => {
            log::warn!("grid_analysis: regression skipped: {e}");
            (json!({"error": e.to_string()}), None)
        }
    };

    let spillover = if scores.has_labels {
        let pred: HashMap<&str, bool> = predictions
            .iter()
            .map(|p| (p.id.as_str(), p.predicted.is_damaged()))
            .collect();
        let outcomes: Vec<Outcome<'_>> = scores
            .footprints
            .iter()
            .filter_map(|lf| {
                pred.get(lf.footprint.id.as_str()).map(|p| Outcome {
                    polygon: &lf.footprint.polygon,
                    predicted_damaged: *p,
                    labeled_damaged: lf.label.is_damaged(),
                })
            })
            .collect();
        match spillover_analysis(&outcomes, cfg.evaluation.spillover_bin_m) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("grid_analysis: spillover skipped: {e}");
                None
            }
        }
    } else {
        None
    };

    let exposure = match inputs.population {
        Some(p) => Some(exposure(p, inputs.tmap, thr).map_err(|e| e.in_module("population"))?),
        None => None,
    };

    Ok(Analysis {
        scores,
        eval_set,
        threshold,
        predictions,
        metrics,
        pr,
        cells,
        grid_report,
        regression,
        regression_text,
        spillover,
        exposure,
    })
}

/// Writes every report of an analysis; returns file name → sha256.
pub fn write_analysis(a: &Analysis, crs: Option<&str>, cfg: &RunConfig, dir: &Path) -> Result<BTreeMap<String, String>> {
    use files::*;
    let mut written = Vec::new();
    let mut put_json = |name: &str, v: &Value| -> Result<()> {
        write_json(v, &dir.join(name))?;
        written.push(name.to_string());
        Ok(())
    };
    put_json(PREDICTIONS_GEOJSON, &predictions_to_geojson(crs, &a.predictions))?;
    put_json(METRICS_JSON, &a.metrics)?;
    put_json(GRID_JSON, &a.grid_report)?;
    put_json(REGRESSION_JSON, &a.regression)?;
    if let Some(pr) = &a.pr {
        put_json(PR_JSON, &json!(pr))?;
    }
    if let Some(s) = &a.spillover {
        put_json(SPILLOVER_JSON, &json!(s))?;
    }
    if let Some(e) = &a.exposure {
        put_json(EXPOSURE_JSON, &json!(e))?;
    }
    let mut texts: Vec<(&str, String)> = vec![
        (PREDICTIONS_CSV, predictions_csv(&a.predictions)),
        (GRID_CSV, cells_csv(&a.cells)),
    ];
    if let Some(t) = &a.regression_text {
        texts.push((REGRESSION_TXT, t.clone()));
    }
    if let Some(s) = &a.spillover {
        texts.push((SPILLOVER_CSV, histogram_csv(s)));
    }
    if !a.eval_set.is_empty() {
        let thr = a.threshold.value;
        texts.push((METRICS_TABLE, metrics_table_csv(&metrics_by_city(&a.eval_set, thr, Weighting::Area))));
        texts.push((METRICS_TABLE_COUNT, metrics_table_csv(&metrics_by_city(&a.eval_set, thr, Weighting::Count))));
        let scored: Vec<Scored> = a.eval_set.iter().map(|r| r.scored(cfg.evaluation.weighting)).collect();
        if let Ok((roc, _)) = roc_curve(&scored) {
            texts.push((ROC_CSV, roc_csv(&roc)));
        }
        if let Some(pr) = &a.pr {
            texts.push((PR_CSV, pr_csv(pr)));
        }
    }
    for (name, t) in &texts {
        write_text(&dir.join(name), t)?;
        written.push(name.to_string());
    }
    written
        .into_iter()
        .map(|n| Ok((n.clone(), sha256_file(&dir.join(&n))?)))
        .collect()
}

fn load_layers(cfg: &RunConfig) -> Result<(FootprintLayer, Option<AnnotationLayer>, Option<PopulationRaster>)> {
    let fps = read_footprints(&cfg.footprints).map_err(|e| e.in_module("footprint_zonal"))?;
    let anns = cfg
        .annotations
        .as_deref()
        .map(read_annotations)
        .transpose()
        .map_err(|e| e.in_module("footprint_zonal"))?;
    let pop = cfg
        .population
        .as_deref()
        .map(PopulationRaster::read)
        .transpose()
        .map_err(|e| e.in_module("population"))?;
    if let Some(ev) = &cfg.events {
        read_feature_collection(ev).map_err(|e| e.in_module("cli_service"))?;
    }
    Ok((fps, anns, pop))
}

fn run_in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Full pipeline from a run config to an artifact directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    run_in_pool(cfg.threads, || cmd_run_inner(cfg))?
}

fn cmd_run_inner(cfg: &RunConfig) -> Result<RunSummary> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let window = cfg.window.to_window()?;
    let stack = load_stack(&cfg.manifest).map_err(|e| e.in_module("raster_core"))?;
    let config = crate::ttest::PwttConfig {
        speckle: cfg.speckle,
        pwtt: cfg.pwtt,
    };
    let tmap = run_pwtt(&stack, &window, &config).map_err(|e| e.in_module("pwtt_core"))?;
    write_tmap(&tmap, &window, dir)?;

    let (fps, anns, pop) = load_layers(cfg)?;
    let analysis = analyze(
        AnalysisInputs {
            tmap: &tmap.composite,
            strata: &tmap.strata,
            footprints: fps,
            annotations: anns.as_ref(),
            population: pop.as_ref(),
        },
        cfg,
    )?;
    let mut outputs = write_analysis(&analysis, Some(&tmap.grid().crs_id), cfg, dir)?;
    for name in [files::TMAP, files::TMAP_SIDECAR] {
        outputs.insert(name.to_string(), sha256_file(&dir.join(name))?);
    }
    write_run_manifest(cfg, &analysis.threshold, &outputs, dir)?;
    Ok(RunSummary {
        output_dir: dir.clone(),
        threshold: analysis.threshold,
        buildings: analysis.predictions.len(),
        evaluated: analysis.eval_set.len(),
        outputs,
    })
}

pub fn write_tmap(tmap: &TMap, window: &AnalysisWindow, dir: &Path) -> Result<()> {
    write_raster(
        &tmap.composite.grid,
        &tmap.composite.values,
        None,
        &dir.join(files::TMAP),
        SampleType::Float64,
    )
    .map_err(|e| e.in_module("raster_core"))?;
    write_json(&json!(tmap.sidecar(window)), &dir.join(files::TMAP_SIDECAR))
}

pub fn read_tmap(dir: &Path) -> Result<(Raster, TMapSidecar)> {
    let raster = read_raster(&dir.join(files::TMAP))?;
    let p = dir.join(files::TMAP_SIDECAR);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let side: TMapSidecar = serde_json::from_str(&text).map_err(|e| Error::parse("tmap sidecar", e))?;
    Ok((raster, side))
}

/// Contents of `run_manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, InputRecord>,
    pub threshold: ThresholdChoice,
    /// Output file name → sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

fn write_run_manifest(
    cfg: &RunConfig,
    threshold: &ThresholdChoice,
    outputs: &BTreeMap<String, String>,
    dir: &Path,
) -> Result<()> {
    let mut inputs = BTreeMap::new();
    let mut add = |name: &str, p: &Path| -> Result<()> {
        inputs.insert(
            name.to_string(),
            InputRecord {
                path: p.to_path_buf(),
                sha256: sha256_file(p)?,
            },
        );
        Ok(())
    };
    add("manifest", &cfg.manifest)?;
    add("footprints", &cfg.footprints)?;
    if let Some(p) = &cfg.annotations {
        add("annotations", p)?;
    }
    if let Some(p) = &cfg.population {
        add("population", p)?;
    }
    if let Some(p) = &cfg.events {
        add("events", p)?;
    }
    let m = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        inputs,
        threshold: *threshold,
        outputs: outputs.clone(),
    };
    write_json(&json!(m), &dir.join(files::RUN_MANIFEST))
}

pub fn read_run_manifest(dir: &Path) -> Result<RunManifest> {
    let p = dir.join(files::RUN_MANIFEST);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse("run manifest", e))
}

/// Re-scores buildings against an existing T map without recomputing it.
pub fn cmd_evaluate(cfg: &RunConfig, tmap_dir: &Path) -> Result<Analysis> {
    let (tmap, side) = read_tmap(tmap_dir)?;
    let (fps, anns, pop) = load_layers(cfg)?;
    analyze(
        AnalysisInputs {
            tmap: &tmap,
            strata: &side.strata,
            footprints: fps,
            annotations: anns.as_ref(),
            population: pop.as_ref(),
        },
        cfg,
    )
}
