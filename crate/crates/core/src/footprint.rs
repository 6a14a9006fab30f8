//! Building footprints, damage-annotation joins and zonal aggregation.

use std::collections::HashMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Polygon};
use crate::raster::Raster;

/// Footprints below this area (m²) are treated as non-buildings.
pub const MIN_FOOTPRINT_AREA_M2: f64 = 50.0;
/// Annotation-to-footprint join tolerance (m).
pub const LABEL_TOLERANCE_M: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub id: String,
    pub polygon: Polygon,
    /// m²
    pub area: f64,
    pub city: String,
    pub country: String,
}

impl Footprint {
    /// Validates the polygon and derives the area from it.
    pub fn new(
        id: impl Into<String>,
        polygon: Polygon,
        city: impl Into<String>,
        country: impl Into<String>,
    ) -> Result<Self> {
        let id = id.into();
        polygon
            .validate()
            .map_err(|e| Error::InvalidGeometry(format!("footprint {id}: {e}")))?;
        let area = polygon.area();
        Ok(Footprint {
            id,
            polygon,
            area,
            city: city.into(),
            country: country.into(),
        })
    }

    /// Like [`Footprint::new`] but checks a declared area against the polygon (0.5%).
    pub fn with_declared_area(
        id: impl Into<String>,
        polygon: Polygon,
        area: f64,
        city: impl Into<String>,
        country: impl Into<String>,
    ) -> Result<Self> {
        let fp = Footprint::new(id, polygon, city, country)?;
        if ((area - fp.area) / fp.area).abs() > 0.005 {
            return Err(Error::InvalidGeometry(format!(
                "footprint {}: declared area {area} differs from polygon area {}",
                fp.id, fp.area
            )));
        }
        Ok(fp)
    }

    pub fn centroid(&self) -> Point {
        self.polygon.centroid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageAnnotation {
    pub point: Point,
    pub annotation_date: Option<NaiveDate>,
    pub source: String,
}

/// Footprints sharing one CRS (`None` when the source did not declare it).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FootprintLayer {
    pub crs_id: Option<String>,
    pub footprints: Vec<Footprint>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationLayer {
    pub crs_id: Option<String>,
    pub annotations: Vec<DamageAnnotation>,
}

pub(crate) fn check_crs(a: Option<&str>, b: Option<&str>) -> Result<()> {
    match (a, b) {
        (Some(a), Some(b)) if a != b => Err(Error::CrsMismatch(a.to_string(), b.to_string())),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Damaged,
    Undamaged,
}

impl Label {
    pub fn is_damaged(self) -> bool {
        self == Label::Damaged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFootprint {
    pub footprint: Footprint,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingPrediction {
    pub footprint_id: String,
    pub mean_t: f64,
    pub predicted: Label,
    pub threshold: f64,
}

/// Drops footprints smaller than 50 m² (strict `<`), keeping order.
pub fn filter_footprints(footprints: Vec<Footprint>) -> Vec<Footprint> {
    filter_footprints_by_area(footprints, MIN_FOOTPRINT_AREA_M2)
}

pub fn filter_footprints_by_area(footprints: Vec<Footprint>, min_area: f64) -> Vec<Footprint> {
    let before = footprints.len();
    let kept: Vec<Footprint> = footprints.into_iter().filter(|f| f.area >= min_area).collect();
    let removed = before - kept.len();
    if removed > 0 {
        log::warn!("removed {removed} of {before} footprints below {min_area} m²");
    }
    if before > 0 && kept.is_empty() {
        log::warn!("every footprint was below {min_area} m²");
    }
    kept
}

/// Uniform bucket index over points.
struct PointIndex {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl PointIndex {
    fn new(points: impl Iterator<Item = Point>, cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, (x, y)) in points.enumerate() {
            buckets
                .entry(((x / cell).floor() as i64, (y / cell).floor() as i64))
                .or_default()
                .push(i);
        }
        PointIndex { cell, buckets }
    }

    fn query(&self, min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> impl Iterator<Item = usize> + '_ {
        let c0 = (min_x / self.cell).floor() as i64;
        let c1 = (max_x / self.cell).floor() as i64;
        let r0 = (min_y / self.cell).floor() as i64;
        let r1 = (max_y / self.cell).floor() as i64;
        (c0..=c1)
            .flat_map(move |c| (r0..=r1).map(move |r| (c, r)))
            .filter_map(|k| self.buckets.get(&k))
            .flatten()
            .copied()
    }
}

/// Labels a footprint Damaged iff an annotation lies within `tolerance` meters
/// of it (distance 0 when inside).
pub fn label_footprints(
    footprints: &FootprintLayer,
    annotations: &AnnotationLayer,
    tolerance: f64,
) -> Result<Vec<LabeledFootprint>> {
    check_crs(footprints.crs_id.as_deref(), annotations.crs_id.as_deref())?;
    if !(tolerance >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be >= 0, got {tolerance}")));
    }
    let index = PointIndex::new(
        annotations.annotations.iter().map(|a| a.point),
        tolerance.max(25.0),
    );
    Ok(footprints
        .footprints
        .par_iter()
        .map(|fp| {
            let b = fp.polygon.bbox();
            let hit = index
                .query(b.min_x - tolerance, b.min_y - tolerance, b.max_x + tolerance, b.max_y + tolerance)
                .any(|i| fp.polygon.distance_to_point(annotations.annotations[i].point) <= tolerance);
            LabeledFootprint {
                footprint: fp.clone(),
                label: if hit { Label::Damaged } else { Label::Undamaged },
            }
        })
        .collect())
}

/// Mean composite statistic per footprint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZonalStats {
    /// `(footprint_id, mean_T)`, sorted by id.
    pub values: Vec<(String, f64)>,
    /// Footprints with no valid pixel, sorted by id.
    pub excluded: Vec<String>,
}

impl ZonalStats {
    pub fn as_map(&self) -> HashMap<&str, f64> {
        self.values.iter().map(|(id, v)| (id.as_str(), *v)).collect()
    }
}

/// Mean of a raster over one polygon using pixel-center membership, falling
/// back to the pixel under the centroid for sub-pixel polygons.
pub fn polygon_mean(raster: &Raster, polygon: &Polygon) -> Option<f64> {
    let g = &raster.grid;
    let b = polygon.bbox();
    let ps = g.pixel_size;
    let col0 = (((b.min_x - g.origin_x) / ps - 0.5).ceil().max(0.0)) as usize;
    let col1 = ((b.max_x - g.origin_x) / ps - 0.5).floor();
    let row0 = (((g.origin_y - b.max_y) / ps - 0.5).ceil().max(0.0)) as usize;
    let row1 = ((g.origin_y - b.min_y) / ps - 0.5).floor();
    let mut inside = 0usize;
    let mut sum = 0.0;
    let mut n = 0usize;
    if col1 >= 0.0 && row1 >= 0.0 {
        let col1 = (col1 as usize).min(g.width - 1);
        let row1 = (row1 as usize).min(g.height - 1);
        for row in row0..=row1 {
            for col in col0..=col1 {
                if polygon.contains(g.pixel_center(row, col)) {
                    inside += 1;
                    let v = raster.values[g.index(row, col)];
                    if v.is_finite() {
                        sum += v;
                        n += 1;
                    }
                }
            }
        }
    }
    if inside == 0 {
        let (cx, cy) = polygon.centroid();
        return g.pixel_at(cx, cy).and_then(|(r, c)| raster.get(r, c));
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn zonal_mean_t(tmap: &Raster, footprints: &FootprintLayer) -> Result<ZonalStats> {
    check_crs(footprints.crs_id.as_deref(), Some(tmap.grid.crs_id.as_str()))?;
    let mut rows: Vec<(String, Option<f64>)> = footprints
        .footprints
        .par_iter()
        .map(|fp| (fp.id.clone(), polygon_mean(tmap, &fp.polygon)))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = ZonalStats::default();
    for (id, v) in rows {
        match v {
            Some(v) => out.values.push((id, v)),
            None => out.excluded.push(id),
        }
    }
    if !out.excluded.is_empty() {
        log::warn!(
            "{} footprints have no valid T pixel and are excluded",
            out.excluded.len()
        );
    }
    Ok(out)
}

/// Damaged iff `mean_T > threshold`.
pub fn classify_buildings(zonal: &[(String, f64)], threshold: f64) -> Vec<BuildingPrediction> {
    zonal
        .iter()
        .map(|(id, t)| BuildingPrediction {
            footprint_id: id.clone(),
            mean_t: *t,
            predicted: if *t > threshold {
                Label::Damaged
            } else {
                Label::Undamaged
            },
            threshold,
        })
        .collect()
}
