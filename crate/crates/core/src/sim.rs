//! Deterministic synthetic SAR scene stacks with known damage.
//!
//! Every pixel value is `base + seasonal + event + speckle` in dB, where the
//! speckle is unit-mean gamma noise with shape `looks` applied in linear
//! power. The dB-domain bias of log-gamma noise is removed so that temporal
//! means converge to `base + seasonal`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::footprint::{AnnotationLayer, DamageAnnotation, Footprint, FootprintLayer};
use crate::geojson::{annotations_to_geojson, feature_collection, footprints_to_geojson, polygon_geometry, write_json};
use crate::geometry::Polygon;
use crate::geotiff::{write_raster, SampleType};
use crate::manifest::{write_manifest, SceneMeta};
use crate::raster::{stack_scenes, GeoGrid, OrbitPass, Polarization, Scene, SceneStack};
use crate::stats::digamma;

const LAYOUT_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterClass {
    UrbanDoubleBounce,
    FlatRoof,
    Vegetation,
    Bare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassValues {
    pub urban_double_bounce: f64,
    pub flat_roof: f64,
    pub vegetation: f64,
    pub bare: f64,
}

impl ClassValues {
    pub fn get(&self, c: ScatterClass) -> f64 {
        match c {
            ScatterClass::UrbanDoubleBounce => self.urban_double_bounce,
            ScatterClass::FlatRoof => self.flat_roof,
            ScatterClass::Vegetation => self.vegetation,
            ScatterClass::Bare => self.bare,
        }
    }
}

/// Acquisition plan and class backscatter for one (orbit pass, polarization).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimStratum {
    pub orbit_pass: OrbitPass,
    pub polarization: Polarization,
    pub revisit_days: u32,
    /// First acquisition is `start + offset_days`.
    pub offset_days: u32,
    pub base_db: ClassValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBuilding {
    pub id: String,
    pub polygon: Polygon,
    pub class: ScatterClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutParams {
    pub block_m: f64,
    pub street_m: f64,
    pub lot_m: f64,
    /// Probability that a lot holds a building.
    pub occupancy: f64,
    pub min_side_m: f64,
    pub max_side_m: f64,
    pub flat_roof_fraction: f64,
    /// Probability that a block is an open green space.
    pub park_fraction: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams {
            block_m: 100.0,
            street_m: 20.0,
            lot_m: 25.0,
            occupancy: 0.7,
            min_side_m: 6.0,
            max_side_m: 20.0,
            flat_roof_fraction: 0.25,
            park_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// City blocks on a street grid, generated from the seed.
    Procedural(LayoutParams),
    /// Fixed buildings on a uniform background.
    Explicit {
        buildings: Vec<SimBuilding>,
        background: ScatterClass,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub footprint_id: String,
    pub event_date: NaiveDate,
    /// Signed backscatter change in dB.
    pub delta_db: f64,
    /// Pixels whose centers fall inside receive the change.
    pub affected: Polygon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPlan {
    /// Each building is destroyed independently with probability `fraction`.
    /// Double-bounce buildings lose `delta_db`, flat roofs gain it.
    Random {
        event_date: NaiveDate,
        fraction: f64,
        delta_db: f64,
        /// Buffer around the footprint's bounding box.
        buffer_m: f64,
    },
    Explicit { events: Vec<SimEvent> },
}

impl EventPlan {
    pub fn none() -> Self {
        EventPlan::Explicit { events: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub grid: GeoGrid,
    pub start: NaiveDate,
    /// Exclusive.
    pub end: NaiveDate,
    pub strata: Vec<SimStratum>,
    pub seasonal_amplitude_db: ClassValues,
    pub seasonal_period_days: f64,
    /// `None` disables speckle.
    pub speckle_looks: Option<f64>,
    pub layout: Layout,
    pub events: EventPlan,
    pub city: String,
    pub country: String,
    pub seed: u64,
}

/// Default reference-period start, inference-period start and end.
pub const DEFAULT_START: (i32, u32, u32) = (2021, 2, 20);
pub const DEFAULT_EVENT: (i32, u32, u32) = (2022, 2, 24);
pub const DEFAULT_END: (i32, u32, u32) = (2022, 4, 25);

fn ymd((y, m, d): (i32, u32, u32)) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid constant date")
}

impl Default for SimSpec {
    fn default() -> Self {
        let vv = |o: f64| ClassValues {
            urban_double_bounce: 1.0 + o,
            flat_roof: -7.0 + o,
            vegetation: -9.0 + o,
            bare: -14.0 + o,
        };
        let vh = |o: f64| ClassValues {
            urban_double_bounce: -8.0 + o,
            flat_roof: -15.0 + o,
            vegetation: -15.0 + o,
            bare: -22.0 + o,
        };
        let st = |orbit_pass, polarization, offset_days, base_db| SimStratum {
            orbit_pass,
            polarization,
            revisit_days: 12,
            offset_days,
            base_db,
        };
        SimSpec {
            grid: GeoGrid::new(256, 256, 500_000.0, 5_002_560.0, 10.0, "EPSG:32636").expect("valid default grid"),
            start: ymd(DEFAULT_START),
            end: ymd(DEFAULT_END),
            strata: vec![
                st(OrbitPass::Ascending, Polarization::VV, 0, vv(0.0)),
                st(OrbitPass::Ascending, Polarization::VH, 0, vh(0.0)),
                st(OrbitPass::Descending, Polarization::VV, 5, vv(-0.5)),
                st(OrbitPass::Descending, Polarization::VH, 5, vh(-0.5)),
            ],
            seasonal_amplitude_db: ClassValues {
                urban_double_bounce: 0.1,
                flat_roof: 0.1,
                vegetation: 0.5,
                bare: 0.3,
            },
            seasonal_period_days: 365.25,
            speckle_looks: Some(4.4),
            layout: Layout::Procedural(LayoutParams::default()),
            events: EventPlan::Random {
                event_date: ymd(DEFAULT_EVENT),
                fraction: 0.1,
                delta_db: 4.0,
                buffer_m: 5.0,
            },
            city: "Simville".into(),
            country: "Simland".into(),
            seed: 42,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.end <= self.start {
            return Err(Error::InvalidArgument(format!(
                "empty simulation date range {} .. {}",
                self.start, self.end
            )));
        }
        if self.strata.is_empty() {
            return Err(Error::InvalidArgument("simulation needs at least one stratum".into()));
        }
        for s in &self.strata {
            if s.revisit_days == 0 {
                return Err(Error::InvalidArgument("revisit_days must be > 0".into()));
            }
        }
        if let Some(l) = self.speckle_looks {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!("speckle_looks must be > 0, got {l}")));
            }
        }
        if !(self.seasonal_period_days > 0.0) {
            return Err(Error::InvalidArgument("seasonal_period_days must be > 0".into()));
        }
        if let EventPlan::Random { fraction, buffer_m, .. } = &self.events {
            if !(0.0..=1.0).contains(fraction) || !(*buffer_m >= 0.0) {
                return Err(Error::InvalidArgument("event fraction must be in [0,1], buffer >= 0".into()));
            }
        }
        if let EventPlan::Explicit { events } = &self.events {
            let ext = self.grid.extent();
            for e in events {
                let b = e.affected.bbox();
                if !(ext.contains_point(b.min_x, b.min_y) && ext.contains_point(b.max_x, b.max_y)) {
                    return Err(Error::InvalidGeometry(format!(
                        "event polygon for {} lies outside the grid",
                        e.footprint_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Default spec without damage events.
    pub fn null_case() -> Self {
        SimSpec {
            events: EventPlan::none(),
            ..SimSpec::default()
        }
    }

    pub fn event_date(&self) -> Option<NaiveDate> {
        match &self.events {
            EventPlan::Random { event_date, .. } => Some(*event_date),
            EventPlan::Explicit { events } => events.iter().map(|e| e.event_date).min(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub stack: SceneStack,
    pub footprints: FootprintLayer,
    pub annotations: AnnotationLayer,
    /// Footprint id → destroyed.
    pub truth: BTreeMap<String, bool>,
    pub class_map: Vec<ScatterClass>,
    pub events: Vec<SimEvent>,
}

fn procedural_buildings(grid: &GeoGrid, p: &LayoutParams, rng: &mut ChaCha8Rng) -> (Vec<SimBuilding>, Vec<Polygon>) {
    let ext = grid.extent();
    let pitch = p.block_m + p.street_m;
    let lots = (p.block_m / p.lot_m).floor().max(1.0) as usize;
    let mut buildings = Vec::new();
    let mut parks = Vec::new();
    let mut by = ext.min_y + p.street_m;
    let mut brow = 0;
    while by + p.block_m <= ext.max_y {
        let mut bx = ext.min_x + p.street_m;
        let mut bcol = 0;
        while bx + p.block_m <= ext.max_x {
            if rng.random::<f64>() < p.park_fraction {
                parks.push(Polygon::rect(bx, by, bx + p.block_m, by + p.block_m));
            } else {
                for li in 0..lots {
                    for lj in 0..lots {
                        if rng.random::<f64>() >= p.occupancy {
                            continue;
                        }
                        let w = rng.random_range(p.min_side_m..=p.max_side_m);
                        let h = rng.random_range(p.min_side_m..=p.max_side_m);
                        let cx0 = bx + (lj as f64 + 0.5) * p.lot_m;
                        let cy0 = by + (li as f64 + 0.5) * p.lot_m;
                        let jx = (p.lot_m - w).max(0.0) / 4.0;
                        let jy = (p.lot_m - h).max(0.0) / 4.0;
                        let cx = cx0 + rng.random_range(-jx..=jx);
                        let cy = cy0 + rng.random_range(-jy..=jy);
                        let class = if rng.random::<f64>() < p.flat_roof_fraction {
                            ScatterClass::FlatRoof
                        } else {
                            ScatterClass::UrbanDoubleBounce
                        };
                        buildings.push(SimBuilding {
                            id: format!("b{brow:02}{bcol:02}{li}{lj}"),
                            polygon: Polygon::rect(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0),
                            class,
                        });
                    }
                }
            }
            bx += pitch;
            bcol += 1;
        }
        by += pitch;
        brow += 1;
    }
    (buildings, parks)
}

struct Resolved {
    buildings: Vec<SimBuilding>,
    class_map: Vec<ScatterClass>,
    events: Vec<SimEvent>,
}

fn rasterize(grid: &GeoGrid, polys: &[&Polygon], mut f: impl FnMut(usize, usize)) {
    for (k, poly) in polys.iter().enumerate() {
        let b = poly.bbox();
        let ps = grid.pixel_size;
        let c0 = (((b.min_x - grid.origin_x) / ps - 0.5).ceil().max(0.0)) as usize;
        let r0 = (((grid.origin_y - b.max_y) / ps - 0.5).ceil().max(0.0)) as usize;
        let c1 = ((b.max_x - grid.origin_x) / ps - 0.5).floor();
        let r1 = ((grid.origin_y - b.min_y) / ps - 0.5).floor();
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        let c1 = (c1 as usize).min(grid.width - 1);
        let r1 = (r1 as usize).min(grid.height - 1);
        for row in r0..=r1 {
            for col in c0..=c1 {
                if poly.contains(grid.pixel_center(row, col)) {
                    f(k, grid.index(row, col));
                }
            }
        }
    }
}

fn resolve(spec: &SimSpec) -> Result<Resolved> {
    let grid = &spec.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(LAYOUT_STREAM);
    let (buildings, mut class_map) = match &spec.layout {
        Layout::Procedural(p) => {
            let (b, parks) = procedural_buildings(grid, p, &mut rng);
            // streets bare, yards and parks vegetated
            let mut map = vec![ScatterClass::Bare; grid.len()];
            let pitch = p.block_m + p.street_m;
            for row in 0..grid.height {
                for col in 0..grid.width {
                    let (x, y) = grid.pixel_center(row, col);
                    let ox = (x - grid.origin_x - p.street_m).rem_euclid(pitch);
                    let oy = (y - (grid.origin_y - grid.height as f64 * grid.pixel_size) - p.street_m).rem_euclid(pitch);
                    if ox < p.block_m && oy < p.block_m {
                        map[grid.index(row, col)] = ScatterClass::Vegetation;
                    }
                }
            }
            let park_refs: Vec<&Polygon> = parks.iter().collect();
            rasterize(grid, &park_refs, |_, i| map[i] = ScatterClass::Vegetation);
            (b, map)
        }
        Layout::Explicit { buildings, background } => (buildings.clone(), vec![*background; grid.len()]),
    };
    let polys: Vec<&Polygon> = buildings.iter().map(|b| &b.polygon).collect();
    rasterize(grid, &polys, |k, i| class_map[i] = buildings[k].class);

    let events = match &spec.events {
        EventPlan::Explicit { events } => events.clone(),
        EventPlan::Random {
            event_date,
            fraction,
            delta_db,
            buffer_m,
        } => buildings
            .iter()
            .filter_map(|b| {
                let hit = rng.random::<f64>() < *fraction;
                hit.then(|| {
                    let e = b.polygon.bbox();
                    SimEvent {
                        footprint_id: b.id.clone(),
                        event_date: *event_date,
                        delta_db: match b.class {
                            ScatterClass::FlatRoof => *delta_db,
                            _ => -*delta_db,
                        },
                        affected: Polygon::rect(
                            e.min_x - buffer_m,
                            e.min_y - buffer_m,
                            e.max_x + buffer_m,
                            e.max_y + buffer_m,
                        ),
                    }
                })
            })
            .collect(),
    };
    Ok(Resolved {
        buildings,
        class_map,
        events,
    })
}

/// Acquisition schedule: `(date, stratum index)` sorted by date then stratum.
pub fn acquisitions(spec: &SimSpec) -> Vec<(NaiveDate, usize)> {
    let mut out = Vec::new();
    for (k, s) in spec.strata.iter().enumerate() {
        let mut d = spec.start + Duration::days(s.offset_days as i64);
        while d < spec.end {
            out.push((d, k));
            d += Duration::days(s.revisit_days as i64);
        }
    }
    out.sort();
    out
}

/// Mean dB offset of `10·log10(G)` for unit-mean gamma `G` with shape `looks`.
pub fn log_speckle_bias_db(looks: f64) -> f64 {
    10.0 / std::f64::consts::LN_10 * (digamma(looks) - looks.ln())
}

pub fn simulate(spec: &SimSpec) -> Result<SimOutput> {
    spec.validate()?;
    let r = resolve(spec)?;
    let grid = &spec.grid;
    let plan = acquisitions(spec);
    if plan.is_empty() {
        return Err(Error::InvalidArgument("simulation schedule has no acquisitions".into()));
    }

    // per-pixel list of (event date, delta)
    let mut pixel_events: Vec<Vec<(NaiveDate, f64)>> = vec![Vec::new(); grid.len()];
    let affected: Vec<&Polygon> = r.events.iter().map(|e| &e.affected).collect();
    rasterize(grid, &affected, |k, i| {
        pixel_events[i].push((r.events[k].event_date, r.events[k].delta_db))
    });

    let gamma = match spec.speckle_looks {
        Some(l) => Some((
            Gamma::new(l, 1.0 / l).map_err(|e| Error::InvalidArgument(e.to_string()))?,
            log_speckle_bias_db(l),
        )),
        None => None,
    };

    let scenes: Vec<Scene> = plan
        .par_iter()
        .enumerate()
        .map(|(idx, &(date, k))| {
            let st = &spec.strata[k];
            let day = (date - spec.start).num_days() as f64;
            let phase = (2.0 * PI * day / spec.seasonal_period_days).sin();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(idx as u64);
            let values: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let c = r.class_map[i];
                    let mut v = st.base_db.get(c) + spec.seasonal_amplitude_db.get(c) * phase;
                    for (d, delta) in &pixel_events[i] {
                        if date >= *d {
                            v += delta;
                        }
                    }
                    if let Some((g, bias)) = &gamma {
                        v += 10.0 * g.sample(&mut rng).log10() - bias;
                    }
                    // scenes are stored as float32
                    v as f32 as f64
                })
                .collect();
            let hour = match st.orbit_pass {
                OrbitPass::Ascending => 4,
                OrbitPass::Descending => 16,
            };
            let t = Utc.from_utc_datetime(&date.and_hms_opt(hour, 0, 0).expect("valid time"));
            Scene::new(grid.clone(), t, st.orbit_pass, st.polarization, values, None)
        })
        .collect::<Result<_>>()?;
    let stack = stack_scenes(scenes)?;

    let footprints = r
        .buildings
        .iter()
        .map(|b| Footprint::new(b.id.clone(), b.polygon.clone(), spec.city.clone(), spec.country.clone()))
        .collect::<Result<Vec<_>>>()?;
    let destroyed: BTreeMap<&str, NaiveDate> = r
        .events
        .iter()
        .map(|e| (e.footprint_id.as_str(), e.event_date))
        .collect();
    let annotations = footprints
        .iter()
        .filter_map(|f| {
            destroyed.get(f.id.as_str()).map(|d| DamageAnnotation {
                point: f.centroid(),
                annotation_date: Some(*d),
                source: "simulation".into(),
            })
        })
        .collect();
    let truth = footprints
        .iter()
        .map(|f| (f.id.clone(), destroyed.contains_key(f.id.as_str())))
        .collect();
    let crs = Some(grid.crs_id.clone());
    Ok(SimOutput {
        stack,
        footprints: FootprintLayer {
            crs_id: crs.clone(),
            footprints,
        },
        annotations: AnnotationLayer {
            crs_id: crs,
            annotations,
        },
        truth,
        class_map: r.class_map,
        events: r.events,
    })
}

/// Files written by [`write_sim_output`].
#[derive(Debug, Clone)]
pub struct SimFiles {
    pub manifest: PathBuf,
    pub footprints: PathBuf,
    pub annotations: PathBuf,
    pub events: PathBuf,
    pub truth: PathBuf,
}

/// Writes scenes (float32 GeoTIFF), manifest, footprints, annotations,
/// event overlay and truth table under `dir`.
pub fn write_sim_output(out: &SimOutput, dir: &Path) -> Result<SimFiles> {
    let scene_dir = dir.join("scenes");
    std::fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
    let metas: Vec<SceneMeta> = out
        .stack
        .scenes()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let name = format!(
                "scene_{i:04}_{}_{}.tif",
                s.stratum(),
                s.acquired_at.format("%Y%m%d")
            );
            let path = scene_dir.join(name);
            write_raster(&s.grid, &s.values, Some(&s.nodata_mask), &path, SampleType::Float32)?;
            Ok(SceneMeta {
                path,
                acquired_at: s.acquired_at,
                orbit_pass: s.orbit_pass,
                polarization: s.polarization,
            })
        })
        .collect::<Result<_>>()?;
    let files = SimFiles {
        manifest: dir.join("manifest.json"),
        footprints: dir.join("footprints.geojson"),
        annotations: dir.join("annotations.geojson"),
        events: dir.join("events.geojson"),
        truth: dir.join("truth.csv"),
    };
    write_manifest(&metas, &files.manifest)?;
    write_json(&footprints_to_geojson(&out.footprints), &files.footprints)?;
    write_json(&annotations_to_geojson(&out.annotations), &files.annotations)?;
    let events = out
        .events
        .iter()
        .map(|e| {
            serde_json::json!({
                "type": "Feature",
                "properties": {
                    "footprint_id": e.footprint_id,
                    "date": e.event_date.format("%Y-%m-%d").to_string(),
                    "delta_db": e.delta_db,
                    "description": format!("simulated destruction of {}", e.footprint_id),
                },
                "geometry": polygon_geometry(&e.affected),
            })
        })
        .collect();
    write_json(
        &feature_collection(out.footprints.crs_id.as_deref(), events),
        &files.events,
    )?;
    let mut truth = String::from("id,destroyed\n");
    for (id, d) in &out.truth {
        truth.push_str(&format!("{id},{d}\n"));
    }
    std::fs::write(&files.truth, truth).map_err(|e| Error::io(&files.truth, e))?;
    Ok(files)
}
