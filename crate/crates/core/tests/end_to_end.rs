use std::path::Path;

use serde_json::Value;

use pwtt::geotiff::{write_raster, SampleType};
use pwtt::pipeline::{cmd_evaluate, cmd_run, files, read_run_manifest, read_tmap, RunConfig, ThresholdMode};
use pwtt::raster::GeoGrid;
use pwtt::sim::{simulate, write_sim_output, SimSpec};
use pwtt::stats::t_critical;

fn small_spec() -> SimSpec {
    SimSpec {
        grid: GeoGrid::new(96, 96, 500_000.0, 5_000_960.0, 10.0, "EPSG:32636").unwrap(),
        ..SimSpec::default()
    }
}

fn config(data: &Path, out: &Path, extra: &str) -> RunConfig {
    let text = format!(
        r#"
manifest = "manifest.json"
footprints = "footprints.geojson"
annotations = "annotations.geojson"
output_dir = "{}"
{extra}
[window]
reference = ["2021-02-20", "2022-02-24"]
inference = ["2022-02-24", "2022-04-25"]
"#,
        out.display()
    );
    RunConfig::from_toml(&text, data).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn significance_run_writes_every_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let spec = small_spec();
    write_sim_output(&simulate(&spec).unwrap(), &data).unwrap();
    // 20 m population grid with 10 people per pixel
    let pg = GeoGrid::new(48, 48, 500_000.0, 5_000_960.0, 20.0, "EPSG:32636").unwrap();
    write_raster(&pg, &[10.0; 48 * 48], None, &data.join("pop.tif"), SampleType::Float32).unwrap();

    let out = tmp.path().join("out");
    let mut cfg = config(&data, &out, "population = \"pop.tif\"");
    cfg.threshold = ThresholdMode::Significance { alpha: 0.01 };
    let summary = cmd_run(&cfg).unwrap();

    let m = read_run_manifest(&out).unwrap();
    let df = m.threshold.df.unwrap();
    assert_eq!(df, 34.0);
    assert_eq!(m.threshold.value, t_critical(df, 0.01).unwrap());
    assert!((m.threshold.value - 2.71).abs() < 0.03, "{}", m.threshold.value);
    for name in [
        files::TMAP,
        files::TMAP_SIDECAR,
        files::PREDICTIONS_GEOJSON,
        files::PREDICTIONS_CSV,
        files::METRICS_JSON,
        files::METRICS_TABLE,
        files::METRICS_TABLE_COUNT,
        files::ROC_CSV,
        files::PR_CSV,
        files::PR_JSON,
        files::GRID_CSV,
        files::GRID_JSON,
        files::REGRESSION_JSON,
        files::SPILLOVER_JSON,
        files::SPILLOVER_CSV,
        files::EXPOSURE_JSON,
    ] {
        assert!(m.outputs.contains_key(name), "{name} missing from manifest");
        assert!(out.join(name).exists(), "{name} not written");
    }
    assert_eq!(m.outputs, summary.outputs);
    assert_eq!(m.inputs.len(), 4);

    let preds = read_json(&out.join(files::PREDICTIONS_GEOJSON));
    let feats = preds["features"].as_array().unwrap();
    assert_eq!(feats.len(), summary.buildings);
    for f in feats {
        let p = &f["properties"];
        let t = p["mean_T"].as_f64().unwrap();
        let predicted = p["predicted"].as_str().unwrap();
        assert_eq!(predicted == "damaged", t > m.threshold.value);
        assert!(matches!(p["label"].as_str(), Some("damaged" | "undamaged")));
        assert_eq!(f["geometry"]["type"], "Polygon");
    }
    let table = std::fs::read_to_string(out.join(files::METRICS_TABLE)).unwrap();
    assert!(table.starts_with("City,AUC,F1,Precision,Recall,N\n"), "{table}");

    let exposure = read_json(&out.join(files::EXPOSURE_JSON));
    let people = exposure["people"].as_f64().unwrap();
    assert!(people > 0.0 && people < 23040.0 && people % 10.0 == 0.0, "{exposure}");

    let pr = read_json(&out.join(files::PR_JSON));
    assert!(pr.as_array().unwrap().last().unwrap()["threshold"].is_null());

    // re-evaluating the stored T map reproduces the predictions
    let (raster, side) = read_tmap(&out).unwrap();
    assert_eq!(side.strata.len(), 4);
    assert!(raster.grid.is_compatible(&spec.grid));
    let again = cmd_evaluate(&cfg, &out).unwrap();
    assert_eq!(again.threshold.value, m.threshold.value);
    assert_eq!(again.predictions.len(), summary.buildings);
}

#[test]
fn crs_mismatch_names_the_module() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let files_ = write_sim_output(&simulate(&small_spec()).unwrap(), &data).unwrap();
    let text = std::fs::read_to_string(&files_.footprints).unwrap();
    std::fs::write(&files_.footprints, text.replace("EPSG:32636", "EPSG:4326")).unwrap();
    let err = cmd_run(&config(&data, &tmp.path().join("out"), "")).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("footprint_zonal"), "{msg}");
}

#[test]
fn missing_manifest_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let err = cmd_run(&config(tmp.path(), &tmp.path().join("out"), "")).unwrap_err();
    assert!(err.to_string().contains("manifest.json does not exist"), "{err}");
}
