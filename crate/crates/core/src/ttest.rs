//! Pixel-wise two-period t-test and the composite change statistic.
//!
//! For every (orbit pass, polarization) stratum the per-pixel mean, sample
//! standard deviation and valid-sample count are computed separately for
//! the reference and inference periods. The Welch statistic
//!
//! ```text
//! t = (mean_ref - mean_inf) / sqrt(s_ref² / n_ref + s_inf² / n_inf)
//! ```
//!
//! is evaluated per stratum, and the composite `T` is the maximum absolute
//! `t` over the strata that qualify at that pixel.
//!
//! Every statistic is a function of one pixel's time series, summed in
//! acquisition order, so results do not depend on how rows are split
//! across worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{select_interval, select_stratum, AnalysisWindow, GeoGrid, Raster, SceneStack, Stratum};
use crate::speckle::{lee_filter, LeeParams};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Reference,
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PwttParams {
    /// Minimum valid samples per period for a pixel's `t` to be defined.
    pub min_samples: usize,
    /// Floor on each `s²/n` term of the denominator.
    pub variance_floor: f64,
}

impl Default for PwttParams {
    fn default() -> Self {
        PwttParams {
            min_samples: 2,
            variance_floor: 1e-6,
        }
    }
}

impl PwttParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples < 2 {
            return Err(Error::InvalidArgument(format!(
                "pwtt min_samples must be >= 2, got {}",
                self.min_samples
            )));
        }
        if !(self.variance_floor >= 0.0) {
            return Err(Error::InvalidArgument("pwtt variance_floor must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeckleConfig {
    pub enabled: bool,
    pub window_radius: usize,
    pub looks: f64,
}

impl Default for SpeckleConfig {
    fn default() -> Self {
        let p = LeeParams::default();
        SpeckleConfig {
            enabled: true,
            window_radius: p.window_radius,
            looks: p.looks,
        }
    }
}

impl SpeckleConfig {
    pub fn params(&self) -> LeeParams {
        LeeParams {
            window_radius: self.window_radius,
            looks: self.looks,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PwttConfig {
    pub speckle: SpeckleConfig,
    pub pwtt: PwttParams,
}

/// Per-pixel statistics of one (stratum, period) sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumStats {
    pub stratum: Stratum,
    pub period: Period,
    pub mean: Raster,
    pub std: Raster,
    pub count: Vec<u32>,
}

/// Per-pixel valid-sample counts.
pub fn temporal_count(stack: &SceneStack) -> Vec<u32> {
    let mut n = vec![0u32; stack.grid().len()];
    for s in stack.scenes() {
        for (c, m) in n.iter_mut().zip(&s.nodata_mask) {
            if !m {
                *c += 1;
            }
        }
    }
    n
}

/// Per-pixel arithmetic mean over unmasked samples; nodata where none.
pub fn temporal_mean(stack: &SceneStack) -> Raster {
    let grid = stack.grid().clone();
    let w = grid.width;
    let scenes = stack.scenes();
    let mut values = vec![f64::NAN; grid.len()];
    values.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        for (col, o) in out.iter_mut().enumerate() {
            let i = row * w + col;
            let mut sum = 0.0;
            let mut n = 0u32;
            for s in scenes {
                if !s.nodata_mask[i] {
                    sum += s.values[i];
                    n += 1;
                }
            }
            if n > 0 {
                *o = sum / n as f64;
            }
        }
    });
    Raster { grid, values }
}

/// Per-pixel sample standard deviation (`n - 1` denominator); nodata where `n < 2`.
pub fn temporal_std(stack: &SceneStack) -> Raster {
    let mean = temporal_mean(stack);
    std_about(stack, &mean)
}

fn std_about(stack: &SceneStack, mean: &Raster) -> Raster {
    let grid = stack.grid().clone();
    let w = grid.width;
    let scenes = stack.scenes();
    let mut values = vec![f64::NAN; grid.len()];
    values.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        for (col, o) in out.iter_mut().enumerate() {
            let i = row * w + col;
            let m = mean.values[i];
            let mut ss = 0.0;
            let mut n = 0u32;
            for s in scenes {
                if !s.nodata_mask[i] {
                    let d = s.values[i] - m;
                    ss += d * d;
                    n += 1;
                }
            }
            if n >= 2 {
                *o = (ss / (n - 1) as f64).sqrt();
            }
        }
    });
    Raster { grid, values }
}

pub fn stratum_stats(stack: &SceneStack, stratum: Stratum, period: Period) -> StratumStats {
    let mean = temporal_mean(stack);
    let std = std_about(stack, &mean);
    StratumStats {
        stratum,
        period,
        mean,
        std,
        count: temporal_count(stack),
    }
}

/// Welch t for one pixel; `None` below `min_samples` in either period.
#[allow(clippy::too_many_arguments)]
pub fn welch_t_scalar(
    ref_mean: f64,
    ref_std: f64,
    ref_n: u32,
    inf_mean: f64,
    inf_std: f64,
    inf_n: u32,
    params: &PwttParams,
) -> Option<f64> {
    let min = params.min_samples as u32;
    if ref_n < min || inf_n < min {
        return None;
    }
    if !(ref_mean.is_finite() && inf_mean.is_finite() && ref_std.is_finite() && inf_std.is_finite()) {
        return None;
    }
    let q_ref = (ref_std * ref_std / ref_n as f64).max(params.variance_floor);
    let q_inf = (inf_std * inf_std / inf_n as f64).max(params.variance_floor);
    let denom = (q_ref + q_inf).sqrt();
    if denom == 0.0 {
        // zero floor and zero variance: t undefined
        return None;
    }
    Some((ref_mean - inf_mean) / denom)
}

/// Raster Welch t between reference and inference statistics.
pub fn welch_t(reference: &StratumStats, inference: &StratumStats, params: &PwttParams) -> Result<Raster> {
    let grid = &reference.mean.grid;
    if !grid.is_compatible(&inference.mean.grid) {
        return Err(Error::IncompatibleGrids("reference and inference statistics".into()));
    }
    welch_t_arrays(
        grid,
        (&reference.mean.values, &reference.std.values, &reference.count),
        (&inference.mean.values, &inference.std.values, &inference.count),
        params,
    )
}

type Moments<'a> = (&'a [f64], &'a [f64], &'a [u32]);

/// Raster Welch t from plain per-pixel arrays.
pub fn welch_t_arrays(
    grid: &GeoGrid,
    reference: Moments<'_>,
    inference: Moments<'_>,
    params: &PwttParams,
) -> Result<Raster> {
    let n = grid.len();
    for a in [reference.0, reference.1, inference.0, inference.1] {
        if a.len() != n {
            return Err(Error::IncompatibleGrids("statistic array size".into()));
        }
    }
    if reference.2.len() != n || inference.2.len() != n {
        return Err(Error::IncompatibleGrids("count array size".into()));
    }
    let values = (0..n)
        .into_par_iter()
        .map(|i| {
            welch_t_scalar(
                reference.0[i],
                reference.1[i],
                reference.2[i],
                inference.0[i],
                inference.1[i],
                inference.2[i],
                params,
            )
            .unwrap_or(f64::NAN)
        })
        .collect();
    Ok(Raster {
        grid: grid.clone(),
        values,
    })
}

/// Per-pixel maximum absolute `t` over the available strata.
pub fn composite_t(per_stratum: &[&Raster]) -> Result<Raster> {
    let first = per_stratum.first().ok_or(Error::NoStrata)?;
    for r in &per_stratum[1..] {
        if !r.grid.is_compatible(&first.grid) {
            return Err(Error::IncompatibleGrids("stratum t rasters".into()));
        }
    }
    let values = (0..first.grid.len())
        .into_par_iter()
        .map(|i| {
            per_stratum
                .iter()
                .map(|r| r.values[i])
                .filter(|v| !v.is_nan())
                .map(f64::abs)
                .fold(f64::NAN, f64::max)
        })
        .collect();
    Ok(Raster {
        grid: first.grid.clone(),
        values,
    })
}

/// Summary of per-pixel sample counts in one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub scenes: usize,
    pub min: u32,
    pub median: f64,
    pub max: u32,
}

impl CountSummary {
    fn of(scenes: usize, counts: &[u32]) -> Self {
        let as_f: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
        CountSummary {
            scenes,
            min: counts.iter().copied().min().unwrap_or(0),
            median: stats::median(&as_f).unwrap_or(0.0),
            max: counts.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRecord {
    pub stratum: Stratum,
    pub reference: CountSummary,
    pub inference: CountSummary,
    /// `false` when the stratum lacked samples in one period.
    pub used: bool,
}

/// Composite change statistic plus the per-stratum rasters behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct TMap {
    pub composite: Raster,
    pub per_stratum_t: Vec<(Stratum, Raster)>,
    pub strata: Vec<StratumRecord>,
    pub params: PwttParams,
}

/// Degrees of freedom `n_ref + n_inf - 2` of the least-sampled used
/// stratum, from median per-pixel counts.
pub fn conservative_df(strata: &[StratumRecord]) -> Option<f64> {
    strata
        .iter()
        .filter(|s| s.used)
        .map(|s| s.reference.median + s.inference.median - 2.0)
        .reduce(f64::min)
}

/// JSON sidecar written next to the composite raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TMapSidecar {
    pub window: AnalysisWindow,
    pub min_samples: usize,
    pub variance_floor: f64,
    pub strata: Vec<StratumRecord>,
}

impl TMap {
    pub fn grid(&self) -> &GeoGrid {
        &self.composite.grid
    }

    /// Degrees of freedom `n_ref + n_inf - 2` of the least-sampled stratum,
    /// from median per-pixel counts.
    pub fn conservative_df(&self) -> Option<f64> {
        conservative_df(&self.strata)
    }

    /// Threshold at a two-sided significance level using [`Self::conservative_df`].
    pub fn significance_threshold(&self, alpha: f64) -> Result<f64> {
        let df = self.conservative_df().ok_or_else(|| {
            Error::InsufficientSamples("no stratum was used for the composite".into())
        })?;
        stats::t_critical(df.max(1.0), alpha)
    }

    pub fn sidecar(&self, window: &AnalysisWindow) -> TMapSidecar {
        TMapSidecar {
            window: *window,
            min_samples: self.params.min_samples,
            variance_floor: self.params.variance_floor,
            strata: self.strata.clone(),
        }
    }
}

/// Computes the composite statistic from an already-filtered stack.
pub fn compute_tmap(stack: &SceneStack, window: &AnalysisWindow, params: &PwttParams) -> Result<TMap> {
    window.validate()?;
    params.validate()?;
    let mut per_stratum_t = Vec::new();
    let mut records = Vec::new();
    for stratum in Stratum::ALL {
        let reference = select_stratum(stack, stratum.orbit_pass, stratum.polarization, &window.reference);
        let inference = select_stratum(stack, stratum.orbit_pass, stratum.polarization, &window.inference);
        if reference.is_empty() && inference.is_empty() {
            continue;
        }
        let ref_stats = stratum_stats(&reference, stratum, Period::Reference);
        let inf_stats = stratum_stats(&inference, stratum, Period::Inference);
        let used = reference.len() >= params.min_samples && inference.len() >= params.min_samples;
        records.push(StratumRecord {
            stratum,
            reference: CountSummary::of(reference.len(), &ref_stats.count),
            inference: CountSummary::of(inference.len(), &inf_stats.count),
            used,
        });
        if !used {
            log::info!(
                "skipping stratum {stratum}: {} reference / {} inference scenes",
                reference.len(),
                inference.len()
            );
            continue;
        }
        per_stratum_t.push((stratum, welch_t(&ref_stats, &inf_stats, params)?));
    }
    if per_stratum_t.is_empty() {
        return Err(Error::InsufficientSamples(format!(
            "no stratum has >= {} scenes in both periods",
            params.min_samples
        )));
    }
    let refs: Vec<&Raster> = per_stratum_t.iter().map(|(_, r)| r).collect();
    let composite = composite_t(&refs)?;
    Ok(TMap {
        composite,
        per_stratum_t,
        strata: records,
        params: *params,
    })
}

/// Speckle-filters the scenes needed by `window` (when enabled).
pub fn prepare_stack(stack: &SceneStack, window: &AnalysisWindow, config: &PwttConfig) -> Result<SceneStack> {
    let span = crate::raster::Interval::new(window.reference.start, window.inference.end);
    let needed = select_interval(stack, &span);
    filter_stack(&needed, &config.speckle)
}

/// Applies the speckle filter to every scene of a stack (when enabled).
pub fn filter_stack(stack: &SceneStack, speckle: &SpeckleConfig) -> Result<SceneStack> {
    if !speckle.enabled {
        return Ok(stack.clone());
    }
    let params = speckle.params();
    params.validate()?;
    Ok(stack.map_scenes(|s| lee_filter(s, &params)))
}

/// Full per-pixel pipeline: optional speckle filtering, stratum statistics,
/// Welch t per stratum and the composite.
pub fn run_pwtt(stack: &SceneStack, window: &AnalysisWindow, config: &PwttConfig) -> Result<TMap> {
    if stack.is_empty() {
        return Err(Error::EmptyStack);
    }
    window.validate()?;
    config.pwtt.validate()?;
    let filtered = prepare_stack(stack, window, config)?;
    compute_tmap(&filtered, window, &config.pwtt)
}
