use chrono::NaiveDate;

use pwtt::footprint::zonal_mean_t;
use pwtt::geometry::Polygon;
use pwtt::raster::{AnalysisWindow, GeoGrid, Interval, OrbitPass, Polarization};
use pwtt::sim::{
    acquisitions, simulate, ClassValues, EventPlan, Layout, ScatterClass, SimBuilding, SimEvent, SimSpec, SimStratum,
};
use pwtt::ttest::{run_pwtt, PwttConfig};

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

fn window() -> AnalysisWindow {
    AnalysisWindow::new(
        Interval::from_dates(d(2021, 2, 20), d(2022, 2, 24)),
        Interval::from_dates(d(2022, 2, 24), d(2022, 4, 25)),
    )
    .unwrap()
}

fn flat(v: f64) -> ClassValues {
    ClassValues {
        urban_double_bounce: v,
        flat_roof: v,
        vegetation: v,
        bare: v,
    }
}

fn two_buildings(grid: &GeoGrid) -> (Vec<SimBuilding>, Vec<SimEvent>) {
    let (x0, y0) = (grid.origin_x, grid.origin_y - grid.height as f64 * grid.pixel_size);
    let b = |id: &str, x: f64, class| SimBuilding {
        id: id.into(),
        polygon: Polygon::rect(x0 + x, y0 + 100.0, x0 + x + 30.0, y0 + 130.0),
        class,
    };
    let buildings = vec![
        b("db", 100.0, ScatterClass::UrbanDoubleBounce),
        b("flat", 300.0, ScatterClass::FlatRoof),
        b("intact", 500.0, ScatterClass::UrbanDoubleBounce),
    ];
    let events = buildings[..2]
        .iter()
        .map(|b| SimEvent {
            footprint_id: b.id.clone(),
            event_date: d(2022, 2, 24),
            delta_db: if b.class == ScatterClass::FlatRoof { 4.0 } else { -4.0 },
            affected: b.polygon.clone(),
        })
        .collect();
    (buildings, events)
}

fn explicit_spec() -> SimSpec {
    let grid = GeoGrid::new(64, 24, 500_000.0, 5_000_240.0, 10.0, "EPSG:32636").unwrap();
    let (buildings, events) = two_buildings(&grid);
    SimSpec {
        grid,
        layout: Layout::Explicit {
            buildings,
            background: ScatterClass::Bare,
        },
        events: EventPlan::Explicit { events },
        ..SimSpec::default()
    }
}

#[test]
fn noiseless_event_is_exact() {
    let spec = SimSpec {
        speckle_looks: None,
        seasonal_amplitude_db: flat(0.0),
        ..explicit_spec()
    };
    let out = simulate(&spec).unwrap();
    let g = &spec.grid;
    let inside = |poly: &Polygon, i: usize| poly.contains(g.pixel_center(i / g.width, i % g.width));
    let (buildings, _) = two_buildings(g);
    for s in out.stack.scenes() {
        let st = spec
            .strata
            .iter()
            .find(|x| x.orbit_pass == s.orbit_pass && x.polarization == s.polarization)
            .unwrap();
        let after = s.acquired_at.date_naive() >= d(2022, 2, 24);
        for i in 0..g.len() {
            let (base, delta) = if inside(&buildings[0].polygon, i) {
                (st.base_db.urban_double_bounce, -4.0)
            } else if inside(&buildings[1].polygon, i) {
                (st.base_db.flat_roof, 4.0)
            } else if inside(&buildings[2].polygon, i) {
                (st.base_db.urban_double_bounce, 0.0)
            } else {
                (st.base_db.bare, 0.0)
            };
            let want = if after { base + delta } else { base };
            assert_eq!(s.values[i], want as f32 as f64, "pixel {i} at {}", s.acquired_at);
        }
    }
}

#[test]
fn temporal_mean_converges_to_base_plus_seasonal() {
    let grid = GeoGrid::new(8, 8, 0.0, 80.0, 10.0, "EPSG:32636").unwrap();
    let base = -9.0;
    let spec = SimSpec {
        grid,
        start: d(2020, 1, 1),
        end: d(2020, 1, 1) + chrono::Duration::days(500),
        strata: vec![SimStratum {
            orbit_pass: OrbitPass::Ascending,
            polarization: Polarization::VV,
            revisit_days: 1,
            offset_days: 0,
            base_db: flat(base),
        }],
        layout: Layout::Explicit {
            buildings: vec![],
            background: ScatterClass::Vegetation,
        },
        events: EventPlan::none(),
        ..SimSpec::default()
    };
    let plan = acquisitions(&spec);
    assert_eq!(plan.len(), 500);
    let amp = spec.seasonal_amplitude_db.vegetation;
    let expected = base
        + plan
            .iter()
            .map(|(date, _)| {
                let day = (*date - spec.start).num_days() as f64;
                amp * (2.0 * std::f64::consts::PI * day / spec.seasonal_period_days).sin()
            })
            .sum::<f64>()
            / 500.0;
    let out = simulate(&spec).unwrap();
    let n = out.stack.len() * spec.grid.len();
    let mean = out.stack.scenes().iter().flat_map(|s| s.values.iter()).sum::<f64>() / n as f64;
    assert!((mean - expected).abs() <= 0.01 * expected.abs(), "{mean} vs {expected}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn larger_events_never_lower_the_median_t() {
    let base = SimSpec {
        grid: GeoGrid::new(96, 96, 500_000.0, 5_000_960.0, 10.0, "EPSG:32636").unwrap(),
        ..SimSpec::default()
    };
    let mut last = f64::NEG_INFINITY;
    for delta in [0.5, 1.0, 2.0, 4.0, 6.0] {
        let spec = SimSpec {
            events: EventPlan::Random {
                event_date: d(2022, 2, 24),
                fraction: 0.1,
                delta_db: delta,
                buffer_m: 5.0,
            },
            ..base.clone()
        };
        let out = simulate(&spec).unwrap();
        let t = run_pwtt(&out.stack, &window(), &PwttConfig::default()).unwrap();
        let g = &spec.grid;
        let vals: Vec<f64> = (0..g.len())
            .filter(|&i| out.events.iter().any(|e| e.affected.contains(g.pixel_center(i / g.width, i % g.width))))
            .map(|i| t.composite.values[i])
            .collect();
        assert!(!vals.is_empty());
        let m = median(vals);
        assert!(m >= last, "delta {delta}: median {m} < {last}");
        last = m;
    }
}

#[test]
fn increase_and_decrease_both_score_high() {
    let spec = explicit_spec();
    let out = simulate(&spec).unwrap();
    let t = run_pwtt(&out.stack, &window(), &PwttConfig::default()).unwrap();
    let z = zonal_mean_t(&t.composite, &out.footprints).unwrap();
    let m = z.as_map();
    assert!(m["db"] > 2.0 * m["intact"], "{m:?}");
    assert!(m["flat"] > 2.0 * m["intact"], "{m:?}");
    assert!(m["db"] > 4.0 && m["flat"] > 4.0, "{m:?}");
    assert!(out.truth["db"] && out.truth["flat"] && !out.truth["intact"]);
}
