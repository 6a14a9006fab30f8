//! Distance from false positives and true negatives to the nearest
//! damaged building.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox_distance, Polygon};
use crate::raster::Extent;
use crate::stats::{median, sample_moments};
use crate::ttest::{welch_t_scalar, PwttParams};

/// A building with its prediction and ground-truth outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<'a> {
    pub polygon: &'a Polygon,
    pub predicted_damaged: bool,
    pub labeled_damaged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower_m: f64,
    pub fp: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpilloverReport {
    pub fp_distances: Vec<f64>,
    pub tn_distances: Vec<f64>,
    pub fp_median: Option<f64>,
    pub tn_median: Option<f64>,
    /// Welch t of FP distances against TN distances.
    pub t_statistic: Option<f64>,
    /// Share of false positives touching or within 10 m of a damaged building.
    pub fp_within_10m: Option<f64>,
    pub bin_width_m: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Bucketed index over polygon bounding boxes for nearest-polygon queries.
pub struct NearestIndex<'a> {
    polygons: Vec<(&'a Polygon, Extent)>,
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    bounds: (i64, i64, i64, i64),
}

impl<'a> NearestIndex<'a> {
    pub fn new(polygons: &[&'a Polygon], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let mut bounds = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        let polygons: Vec<(&Polygon, Extent)> = polygons.iter().map(|p| (*p, p.bbox())).collect();
        for (i, (_, b)) in polygons.iter().enumerate() {
            let (c0, r0) = ((b.min_x / cell).floor() as i64, (b.min_y / cell).floor() as i64);
            let (c1, r1) = ((b.max_x / cell).floor() as i64, (b.max_y / cell).floor() as i64);
            bounds = (bounds.0.min(c0), bounds.1.min(r0), bounds.2.max(c1), bounds.3.max(r1));
            for c in c0..=c1 {
                for r in r0..=r1 {
                    buckets.entry((c, r)).or_default().push(i);
                }
            }
        }
        NearestIndex {
            polygons,
            cell,
            buckets,
            bounds,
        }
    }

    /// Exact minimum of `Polygon::distance_to_polygon` over the indexed set.
    pub fn nearest_distance(&self, query: &Polygon) -> Option<f64> {
        if self.polygons.is_empty() {
            return None;
        }
        let qb = query.bbox();
        let cell = self.cell;
        let (qc0, qr0) = ((qb.min_x / cell).floor() as i64, (qb.min_y / cell).floor() as i64);
        let (qc1, qr1) = ((qb.max_x / cell).floor() as i64, (qb.max_y / cell).floor() as i64);
        let mut best = f64::INFINITY;
        let mut seen = vec![false; self.polygons.len()];
        let mut k = 0i64;
        loop {
            let (c0, r0, c1, r1) = (qc0 - k, qr0 - k, qc1 + k, qr1 + k);
            for c in c0..=c1 {
                for r in r0..=r1 {
                    // only the ring at Chebyshev offset k
                    if k > 0 && c != c0 && c != c1 && r != r0 && r != r1 {
                        continue;
                    }
                    let Some(ids) = self.buckets.get(&(c, r)) else {
                        continue;
                    };
                    for &i in ids {
                        if seen[i] {
                            continue;
                        }
                        seen[i] = true;
                        let (p, b) = &self.polygons[i];
                        if bbox_distance(&qb, b) > best {
                            continue;
                        }
                        best = best.min(query.distance_to_polygon(p));
                    }
                }
            }
            // anything unseen lies outside the searched block, at least k·cell away
            let covered = c0 <= self.bounds.0 && r0 <= self.bounds.1 && c1 >= self.bounds.2 && r1 >= self.bounds.3;
            if covered || best <= k as f64 * cell {
                return Some(best);
            }
            k += 1;
        }
    }
}

/// Nearest-damaged distances for FP and TN buildings. Damaged buildings are
/// those labeled damaged.
pub fn spillover_analysis(outcomes: &[Outcome<'_>], bin_width_m: f64) -> Result<SpilloverReport> {
    let damaged: Vec<&Polygon> = outcomes
        .iter()
        .filter(|o| o.labeled_damaged)
        .map(|o| o.polygon)
        .collect();
    if damaged.is_empty() {
        return Err(Error::InvalidArgument("spillover analysis needs at least one damaged building".into()));
    }
    if !(bin_width_m > 0.0) {
        return Err(Error::InvalidArgument(format!("bin width must be > 0, got {bin_width_m}")));
    }
    let index = NearestIndex::new(&damaged, 50.0);
    let dist = |o: &Outcome<'_>| index.nearest_distance(o.polygon).unwrap_or(f64::INFINITY);
    use rayon::prelude::*;
    let fp: Vec<f64> = outcomes
        .par_iter()
        .filter(|o| o.predicted_damaged && !o.labeled_damaged)
        .map(dist)
        .collect();
    let tn: Vec<f64> = outcomes
        .par_iter()
        .filter(|o| !o.predicted_damaged && !o.labeled_damaged)
        .map(dist)
        .collect();
    Ok(report_from_distances(fp, tn, bin_width_m))
}

/// Welch t between two distance samples using the engine's t statistic.
pub fn distance_welch_t(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, sa, na) = sample_moments(a);
    let (mb, sb, nb) = sample_moments(b);
    welch_t_scalar(ma, sa, na as u32, mb, sb, nb as u32, &PwttParams::default())
}

pub fn report_from_distances(fp: Vec<f64>, tn: Vec<f64>, bin_width_m: f64) -> SpilloverReport {
    let max = fp.iter().chain(&tn).copied().fold(0.0, f64::max);
    let nbins = (max / bin_width_m).floor() as usize + 1;
    let mut histogram: Vec<HistogramBin> = (0..nbins)
        .map(|i| HistogramBin {
            lower_m: i as f64 * bin_width_m,
            fp: 0,
            tn: 0,
        })
        .collect();
    for d in &fp {
        histogram[(d / bin_width_m).floor() as usize].fp += 1;
    }
    for d in &tn {
        histogram[(d / bin_width_m).floor() as usize].tn += 1;
    }
    SpilloverReport {
        fp_median: median(&fp),
        tn_median: median(&tn),
        t_statistic: distance_welch_t(&fp, &tn),
        fp_within_10m: (!fp.is_empty())
            .then(|| fp.iter().filter(|d| **d <= 10.0).count() as f64 / fp.len() as f64),
        bin_width_m,
        histogram,
        fp_distances: fp,
        tn_distances: tn,
    }
}

pub fn histogram_csv(r: &SpilloverReport) -> String {
    let mut s = String::from("lower_m,upper_m,fp,tn\n");
    for b in &r.histogram {
        s.push_str(&format!("{},{},{},{}\n", b.lower_m, b.lower_m + r.bin_width_m, b.fp, b.tn));
    }
    s
}
