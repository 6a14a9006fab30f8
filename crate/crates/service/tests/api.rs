use std::path::Path;
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

use pwtt::geotiff::{write_raster, SampleType};
use pwtt::pipeline::{cmd_run, files, RunConfig};
use pwtt::raster::GeoGrid;
use pwtt::sim::{simulate, write_sim_output, SimSpec};
use pwtt_service::{job_id, router, AppState};

struct Fixture {
    _tmp: TempDir,
    out: std::path::PathBuf,
    state: Arc<AppState>,
}

fn run(data: &Path, out: &Path, extra: &str) -> Arc<AppState> {
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
    cmd_run(&RunConfig::from_toml(&text, data).unwrap()).unwrap();
    Arc::new(AppState::load(out, 2).unwrap())
}

fn build(extra: &str) -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let spec = SimSpec {
        grid: GeoGrid::new(96, 96, 500_000.0, 5_000_960.0, 10.0, "EPSG:32636").unwrap(),
        ..SimSpec::default()
    };
    write_sim_output(&simulate(&spec).unwrap(), &data).unwrap();
    let pg = GeoGrid::new(48, 48, 500_000.0, 5_000_960.0, 20.0, "EPSG:32636").unwrap();
    write_raster(&pg, &[10.0; 48 * 48], None, &data.join("pop.tif"), SampleType::Float32).unwrap();
    let out = tmp.path().join("out");
    let state = run(&data, &out, extra);
    Fixture { _tmp: tmp, out, state }
}

static FULL: LazyLock<Fixture> =
    LazyLock::new(|| build("population = \"pop.tif\"\nevents = \"events.geojson\""));
static BARE: LazyLock<Fixture> = LazyLock::new(|| build(""));

async fn call(f: &Fixture, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(f.state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(f: &Fixture, uri: &str) -> (StatusCode, Value) {
    let (s, body) = call(f, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

async fn post(f: &Fixture, body: &str) -> (StatusCode, Value) {
    let req = Request::post("/v1/compute")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, body) = call(f, req).await;
    (s, serde_json::from_slice(&body).unwrap())
}

fn file_json(f: &Fixture, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(f.out.join(name)).unwrap()).unwrap()
}

fn decode_png(bytes: &[u8]) -> (u32, u32, Vec<u8>) {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut r = dec.read_info().unwrap();
    let mut buf = vec![0; r.output_buffer_size().unwrap()];
    let info = r.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    (info.width, info.height, buf)
}

#[tokio::test]
async fn meta_describes_the_run() {
    let f = &*FULL;
    let (s, m) = get(f, "/v1/meta").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(m["crs"], "EPSG:32636");
    assert_eq!(m["grid"]["width"], 96);
    assert_eq!(m["strata"].as_array().unwrap().len(), 4);
    assert_eq!(m["default_job"], f.state.default_job.as_str());
    assert_eq!(m["run_window"]["reference"][0], "2021-02-20T00:00:00+00:00");
    assert_eq!(m["population"], true);
    assert_eq!(m["events"], true);
    let manifest = file_json(f, files::RUN_MANIFEST);
    assert_eq!(m["threshold"]["value"], manifest["threshold"]["value"]);
}

#[tokio::test]
async fn bad_windows_are_rejected() {
    let f = &*FULL;
    // inference before reference
    let (s, e) = post(
        f,
        r#"{"reference": ["2022-02-24", "2022-04-25"], "inference": ["2021-02-20", "2022-02-24"]}"#,
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT, "{e}");
    assert!(e["error"].is_string());
    let (s, _) = post(f, r#"{"reference": ["2021-02-20"]"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(
        f,
        r#"{"reference": ["2021-02-30", "2022-02-24"], "inference": ["2022-02-24", "2022-04-25"]}"#,
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_job_is_not_found() {
    let f = &*FULL;
    let (s, e) = get(f, "/v1/jobs/0123456789abcdef").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(e["error"].as_str().unwrap().contains("0123456789abcdef"));
    let (s, _) = get(f, "/v1/pr_curve?job=nope").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn computing_a_window_is_idempotent() {
    let f = &*FULL;
    let run_window = r#"{"reference": ["2021-02-20", "2022-02-24"], "inference": ["2022-02-24", "2022-04-25"]}"#;
    let (s, v) = post(f, run_window).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["job"], f.state.default_job.as_str());

    let shorter = r#"{"reference": ["2021-06-01", "2022-02-24"], "inference": ["2022-02-24", "2022-03-25"]}"#;
    let (s, v) = post(f, shorter).await;
    assert!(s == StatusCode::ACCEPTED || s == StatusCode::OK, "{s}");
    let id = v["job"].as_str().unwrap().to_string();
    assert_ne!(id, f.state.default_job);
    let (_, again) = post(f, shorter).await;
    assert_eq!(again["job"], id.as_str());

    let mut status = Value::Null;
    for _ in 0..600 {
        status = get(f, &format!("/v1/jobs/{id}")).await.1;
        if status["status"] == "done" || status["status"] == "failed" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert_eq!(status["status"], "done", "{status}");
    assert!(status["max_t"].as_f64().unwrap() > 0.0);
    assert_eq!(status["strata"].as_array().unwrap().len(), 4);
    let (s, tile) = call(f, Request::get(format!("/v1/tiles/0/0/0?job={id}")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(decode_png(&tile).0, 256);
}

#[tokio::test]
async fn job_id_ignores_date_spelling() {
    let w = |r: &str| pwtt::pipeline::WindowConfig {
        reference: [r.into(), "2022-02-24".into()],
        inference: ["2022-02-24".into(), "2022-04-25".into()],
    }
    .to_window()
    .unwrap();
    assert_eq!(job_id(&w("2021-02-20")), job_id(&w("2021-02-20T00:00:00Z")));
    assert_ne!(job_id(&w("2021-02-20")), job_id(&w("2021-02-21")));
    assert_eq!(job_id(&w("2021-02-20")).len(), 16);
}

#[tokio::test]
async fn tiles_follow_the_threshold() {
    let f = &*FULL;
    let (s, body) = call(f, Request::get("/v1/tiles/0/0/0").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let (w, h, px) = decode_png(&body);
    assert_eq!((w, h), (256, 256));
    assert!(px.chunks(4).any(|p| p[3] > 0), "no damaged pixel drawn");

    let (s, body) = call(f, Request::get("/v1/tiles/0/0/0?threshold=1e9").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert!(decode_png(&body).2.chunks(4).all(|p| p[3] == 0));

    let (s, _) = call(f, Request::get("/v1/tiles/1/2/0").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn pr_curve_matches_the_run() {
    let f = &*FULL;
    let (s, v) = get(f, "/v1/pr_curve").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["points"], file_json(f, files::PR_JSON));
    assert!(v["points"].as_array().unwrap().last().unwrap()["threshold"].is_null());
    let manifest = file_json(f, files::RUN_MANIFEST);
    assert_eq!(v["f1_optimal"]["threshold"], manifest["threshold"]["value"]);
    assert_eq!(v["legend"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn buildings_are_filtered_and_classified() {
    let f = &*FULL;
    let (s, all) = get(f, "/v1/buildings").await;
    assert_eq!(s, StatusCode::OK);
    let preds = file_json(f, files::PREDICTIONS_GEOJSON);
    let feats = all["features"].as_array().unwrap();
    assert_eq!(feats.len(), preds["features"].as_array().unwrap().len());
    let thr = all["threshold"].as_f64().unwrap();
    for ft in feats {
        let t = ft["properties"]["mean_T"].as_f64().unwrap();
        assert_eq!(ft["properties"]["predicted"] == "damaged", t > thr);
    }

    let (_, none) = get(f, "/v1/buildings?threshold=1e9").await;
    assert!(none["features"].as_array().unwrap().iter().all(|f| f["properties"]["predicted"] == "undamaged"));

    let (_, part) = get(f, "/v1/buildings?bbox=500000,5000480,500480,5000960").await;
    let n = part["features"].as_array().unwrap().len();
    assert!(n > 0 && n < feats.len(), "{n} of {}", feats.len());

    for bad in ["1,2,3", "a,b,c,d", "10,0,0,10"] {
        let (s, _) = get(f, &format!("/v1/buildings?bbox={bad}")).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{bad}");
    }
}

#[tokio::test]
async fn exposure_and_events_overlays() {
    let f = &*FULL;
    let (s, e) = get(f, "/v1/exposure").await;
    assert_eq!(s, StatusCode::OK);
    let stored = file_json(f, files::EXPOSURE_JSON);
    assert_eq!(e["people"], stored["people"]);
    let (_, hi) = get(f, "/v1/exposure?threshold=1e9").await;
    assert_eq!(hi["people"], 0.0);

    let (s, ev) = get(f, "/v1/events").await;
    assert_eq!(s, StatusCode::OK);
    let total = ev["features"].as_array().unwrap().len();
    assert!(total > 0);
    let (_, none) = get(f, "/v1/events?bbox=0,0,1,1").await;
    assert_eq!(none["features"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn missing_overlays_are_not_found() {
    let f = &*BARE;
    let (s, m) = get(f, "/v1/meta").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(m["population"], false);
    assert_eq!(get(f, "/v1/exposure").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(f, "/v1/events").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(f, "/v1/pr_curve").await.0, StatusCode::OK);
}
