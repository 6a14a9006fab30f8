//! Raster grids, scene metadata and stack assembly.
//!
//! All rasters are north-up with square pixels. `origin_x`/`origin_y` locate
//! the outer corner of the top-left pixel; row indices grow southward.

use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placement of a raster in a projected CRS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoGrid {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    /// Meters per pixel.
    pub pixel_size: f64,
    pub crs_id: String,
}

impl GeoGrid {
    pub fn new(
        width: usize,
        height: usize,
        origin_x: f64,
        origin_y: f64,
        pixel_size: f64,
        crs_id: impl Into<String>,
    ) -> Result<Self> {
        let grid = GeoGrid {
            width,
            height,
            origin_x,
            origin_y,
            pixel_size,
            crs_id: crs_id.into(),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidGrid(format!(
                "dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "pixel size must be positive, got {}",
                self.pixel_size
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        Ok(())
    }

    /// Two grids are compatible iff every field is equal.
    pub fn is_compatible(&self, other: &GeoGrid) -> bool {
        self == other
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Projected coordinates of a pixel center.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Pixel containing a projected coordinate, if inside the grid.
    pub fn pixel_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.origin_x) / self.pixel_size).floor();
        let row = ((self.origin_y - y) / self.pixel_size).floor();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// Bounding box as `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> Extent {
        Extent {
            min_x: self.origin_x,
            min_y: self.origin_y - self.height as f64 * self.pixel_size,
            max_x: self.origin_x + self.width as f64 * self.pixel_size,
            max_y: self.origin_y,
        }
    }
}

/// Axis-aligned bounding box in projected units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Extent {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn intersects(&self, other: &Extent) -> bool {
        self.min_x < other.max_x
            && other.min_x < self.max_x
            && self.min_y < other.max_y
            && other.min_y < self.max_y
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitPass {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarization {
    #[serde(rename = "VV", alias = "vv")]
    VV,
    #[serde(rename = "VH", alias = "vh")]
    VH,
}

impl OrbitPass {
    pub const ALL: [OrbitPass; 2] = [OrbitPass::Ascending, OrbitPass::Descending];
}

impl Polarization {
    pub const ALL: [Polarization; 2] = [Polarization::VV, Polarization::VH];
}

impl fmt::Display for OrbitPass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrbitPass::Ascending => f.write_str("ascending"),
            OrbitPass::Descending => f.write_str("descending"),
        }
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::VV => f.write_str("VV"),
            Polarization::VH => f.write_str("VH"),
        }
    }
}

/// One (orbit pass, polarization) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub orbit_pass: OrbitPass,
    pub polarization: Polarization,
}

impl Stratum {
    pub const ALL: [Stratum; 4] = [
        Stratum::new(OrbitPass::Ascending, Polarization::VV),
        Stratum::new(OrbitPass::Ascending, Polarization::VH),
        Stratum::new(OrbitPass::Descending, Polarization::VV),
        Stratum::new(OrbitPass::Descending, Polarization::VH),
    ];

    pub const fn new(orbit_pass: OrbitPass, polarization: Polarization) -> Self {
        Stratum {
            orbit_pass,
            polarization,
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.orbit_pass, self.polarization)
    }
}

/// A single calibrated backscatter acquisition in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub grid: GeoGrid,
    pub acquired_at: DateTime<Utc>,
    pub orbit_pass: OrbitPass,
    pub polarization: Polarization,
    /// Row-major backscatter values in dB.
    pub values: Vec<f64>,
    /// `true` marks nodata.
    pub nodata_mask: Vec<bool>,
}

impl Scene {
    /// Builds a scene, masking any non-finite value.
    pub fn new(
        grid: GeoGrid,
        acquired_at: DateTime<Utc>,
        orbit_pass: OrbitPass,
        polarization: Polarization,
        values: Vec<f64>,
        nodata_mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "scene has {} values, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        let mut mask = match nodata_mask {
            Some(m) if m.len() != grid.len() => {
                return Err(Error::InvalidGrid(format!(
                    "mask has {} cells, grid expects {}",
                    m.len(),
                    grid.len()
                )))
            }
            Some(m) => m,
            None => vec![false; grid.len()],
        };
        for (m, v) in mask.iter_mut().zip(&values) {
            if !v.is_finite() {
                *m = true;
            }
        }
        Ok(Scene {
            grid,
            acquired_at,
            orbit_pass,
            polarization,
            values,
            nodata_mask: mask,
        })
    }

    pub fn stratum(&self) -> Stratum {
        Stratum::new(self.orbit_pass, self.polarization)
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        !self.nodata_mask[idx]
    }
}

/// Scenes on a common grid, sorted by acquisition time.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneStack {
    grid: GeoGrid,
    scenes: Vec<Scene>,
}

impl SceneStack {
    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Grid shared by all scenes; kept by empty sub-stacks.
    pub fn grid(&self) -> &GeoGrid {
        &self.grid
    }

    pub fn into_scenes(self) -> Vec<Scene> {
        self.scenes
    }

    /// Earliest and latest acquisition.
    pub fn time_span(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        Some((self.scenes.first()?.acquired_at, self.scenes.last()?.acquired_at))
    }

    /// Strata present in the stack, in canonical order.
    pub fn strata(&self) -> Vec<Stratum> {
        Stratum::ALL
            .into_iter()
            .filter(|s| self.scenes.iter().any(|sc| sc.stratum() == *s))
            .collect()
    }

    /// Applies `f` to every scene, keeping order and grid.
    pub fn map_scenes<F>(&self, f: F) -> SceneStack
    where
        F: Fn(&Scene) -> Scene + Sync + Send,
    {
        use rayon::prelude::*;
        SceneStack {
            grid: self.grid.clone(),
            scenes: self.scenes.par_iter().map(f).collect(),
        }
    }
}

/// Sorts scenes by time and verifies they share one grid.
pub fn stack_scenes(mut scenes: Vec<Scene>) -> Result<SceneStack> {
    let first = scenes.first().ok_or(Error::EmptyStack)?;
    let grid = first.grid.clone();
    for s in &scenes[1..] {
        if !s.grid.is_compatible(&grid) {
            return Err(Error::IncompatibleGrids(format!(
                "{:?} vs {:?}",
                grid, s.grid
            )));
        }
    }
    // stable: equal timestamps keep input order
    scenes.sort_by_key(|s| s.acquired_at);
    Ok(SceneStack { grid, scenes })
}

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Interval {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        Interval { start, end }
    }

    /// Interval covering all representable times.
    pub fn all_time() -> Self {
        Interval {
            start: DateTime::<Utc>::MIN_UTC,
            end: DateTime::<Utc>::MAX_UTC,
        }
    }

    pub fn from_dates(start: NaiveDate, end: NaiveDate) -> Self {
        Interval {
            start: start.and_hms_opt(0, 0, 0).unwrap().and_utc(),
            end: end.and_hms_opt(0, 0, 0).unwrap().and_utc(),
        }
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        t >= self.start && t < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Parses an ISO-8601 date (`2022-02-24`) or RFC 3339 timestamp.
pub fn parse_time(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc());
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::parse(format!("timestamp {s:?}"), e))
}

/// Reference (pre-event) and inference (post-event) sample periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub reference: Interval,
    pub inference: Interval,
}

impl AnalysisWindow {
    pub fn new(reference: Interval, inference: Interval) -> Result<Self> {
        let w = AnalysisWindow {
            reference,
            inference,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reference.is_empty() {
            return Err(Error::InvalidWindow("reference interval is empty".into()));
        }
        if self.inference.is_empty() {
            return Err(Error::InvalidWindow("inference interval is empty".into()));
        }
        if self.reference.end > self.inference.start {
            return Err(Error::InvalidWindow(format!(
                "reference ends {} after inference starts {}",
                self.reference.end, self.inference.start
            )));
        }
        Ok(())
    }
}

/// Scenes acquired within an interval, any stratum.
pub fn select_interval(stack: &SceneStack, interval: &Interval) -> SceneStack {
    SceneStack {
        grid: stack.grid.clone(),
        scenes: stack
            .scenes
            .iter()
            .filter(|s| interval.contains(s.acquired_at))
            .cloned()
            .collect(),
    }
}

/// Sub-stack matching an orbit pass, polarization and time interval.
pub fn select_stratum(
    stack: &SceneStack,
    orbit: OrbitPass,
    pol: Polarization,
    interval: &Interval,
) -> SceneStack {
    SceneStack {
        grid: stack.grid.clone(),
        scenes: stack
            .scenes
            .iter()
            .filter(|s| {
                s.orbit_pass == orbit && s.polarization == pol && interval.contains(s.acquired_at)
            })
            .cloned()
            .collect(),
    }
}

/// A grid-aligned `f64` raster with `NaN` as nodata.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub grid: GeoGrid,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn new(grid: GeoGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "raster has {} values, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Raster { grid, values })
    }

    pub fn filled(grid: GeoGrid, value: f64) -> Self {
        let n = grid.len();
        Raster {
            grid,
            values: vec![value; n],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[self.grid.index(row, col)];
        v.is_finite().then_some(v)
    }

    pub fn nodata_mask(&self) -> Vec<bool> {
        self.values.iter().map(|v| !v.is_finite()).collect()
    }

    /// Largest finite value.
    pub fn max(&self) -> Option<f64> {
        self.values
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_finite()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn grid(ps: f64) -> GeoGrid {
        GeoGrid::new(4, 4, 0.0, 40.0, ps, "EPSG:32636").unwrap()
    }

    fn scene(day: u32, orbit: OrbitPass, pol: Polarization, ps: f64) -> Scene {
        let t = Utc.with_ymd_and_hms(2022, 1, day, 0, 0, 0).unwrap();
        Scene::new(grid(ps), t, orbit, pol, vec![-12.0; 16], None).unwrap()
    }

    #[test]
    fn stack_sorts_by_time() {
        let s = stack_scenes(vec![
            scene(5, OrbitPass::Ascending, Polarization::VV, 10.0),
            scene(1, OrbitPass::Ascending, Polarization::VV, 10.0),
            scene(3, OrbitPass::Ascending, Polarization::VV, 10.0),
        ])
        .unwrap();
        let days: Vec<_> = s.scenes().iter().map(|s| s.acquired_at).collect();
        assert!(days.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn singleton_stack() {
        let s = stack_scenes(vec![scene(1, OrbitPass::Ascending, Polarization::VV, 10.0)]).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn mixed_pixel_sizes_rejected() {
        let err = stack_scenes(vec![
            scene(1, OrbitPass::Ascending, Polarization::VV, 10.0),
            scene(2, OrbitPass::Ascending, Polarization::VV, 20.0),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("incompatible grids"));
    }

    #[test]
    fn empty_stack_rejected() {
        assert!(matches!(stack_scenes(vec![]), Err(Error::EmptyStack)));
    }

    #[test]
    fn stratum_filter() {
        let mut scenes = vec![];
        for d in 1..=3 {
            scenes.push(scene(d, OrbitPass::Ascending, Polarization::VV, 10.0));
        }
        for d in 4..=5 {
            scenes.push(scene(d, OrbitPass::Descending, Polarization::VV, 10.0));
        }
        let stack = stack_scenes(scenes).unwrap();
        let asc = select_stratum(&stack, OrbitPass::Ascending, Polarization::VV, &Interval::all_time());
        assert_eq!(asc.len(), 3);
        let none = select_stratum(
            &stack,
            OrbitPass::Ascending,
            Polarization::VV,
            &Interval::from_dates(
                NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(),
                NaiveDate::from_ymd_opt(2023, 2, 1).unwrap(),
            ),
        );
        assert!(none.is_empty());
    }

    #[test]
    fn window_ordering() {
        let d = |m, d| NaiveDate::from_ymd_opt(2022, m, d).unwrap();
        assert!(AnalysisWindow::new(
            Interval::from_dates(d(1, 1), d(3, 1)),
            Interval::from_dates(d(3, 1), d(5, 1))
        )
        .is_ok());
        assert!(AnalysisWindow::new(
            Interval::from_dates(d(1, 1), d(3, 2)),
            Interval::from_dates(d(3, 1), d(5, 1))
        )
        .is_err());
        assert!(AnalysisWindow::new(
            Interval::from_dates(d(1, 1), d(1, 1)),
            Interval::from_dates(d(3, 1), d(5, 1))
        )
        .is_err());
    }

    #[test]
    fn non_finite_values_are_masked() {
        let t = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
        let mut v = vec![-12.0; 16];
        v[3] = f64::NAN;
        let s = Scene::new(grid(10.0), t, OrbitPass::Ascending, Polarization::VH, v, None).unwrap();
        assert!(s.nodata_mask[3]);
        assert_eq!(s.nodata_mask.iter().filter(|m| **m).count(), 1);
    }

    #[test]
    fn pixel_geometry() {
        let g = grid(10.0);
        assert_eq!(g.pixel_center(0, 0), (5.0, 35.0));
        assert_eq!(g.pixel_at(5.0, 35.0), Some((0, 0)));
        assert_eq!(g.pixel_at(39.9, 0.1), Some((3, 3)));
        assert_eq!(g.pixel_at(40.0, 20.0), None);
    }
}
