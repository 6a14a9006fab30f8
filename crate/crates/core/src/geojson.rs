//! GeoJSON reading and writing for footprints, annotations and predictions.
//!
//! Coordinates are projected meters. The CRS travels in the legacy
//! `crs: {type: "name", properties: {name}}` member when known.

use std::path::Path;

use chrono::NaiveDate;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::footprint::{AnnotationLayer, DamageAnnotation, Footprint, FootprintLayer, Label};
use crate::geometry::{Point, Polygon};
use crate::raster::Extent;

fn perr(context: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        context: context.to_string(),
        message: message.into(),
    }
}

/// A parsed FeatureCollection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureCollection {
    pub crs_id: Option<String>,
    pub features: Vec<Value>,
}

pub fn parse_feature_collection(text: &str, context: &str) -> Result<FeatureCollection> {
    let v: Value = serde_json::from_str(text).map_err(|e| perr(context, e.to_string()))?;
    if v.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(perr(context, "expected a FeatureCollection"));
    }
    let crs_id = v
        .pointer("/crs/properties/name")
        .and_then(Value::as_str)
        .map(str::to_string);
    let features = v
        .get("features")
        .and_then(Value::as_array)
        .cloned()
        .ok_or_else(|| perr(context, "missing features array"))?;
    Ok(FeatureCollection { crs_id, features })
}

pub fn read_feature_collection(path: &Path) -> Result<FeatureCollection> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_collection(&text, &path.display().to_string())
}

pub fn feature_collection(crs_id: Option<&str>, features: Vec<Value>) -> Value {
    let mut m = Map::new();
    m.insert("type".into(), json!("FeatureCollection"));
    if let Some(c) = crs_id {
        m.insert("crs".into(), json!({"type": "name", "properties": {"name": c}}));
    }
    m.insert("features".into(), Value::Array(features));
    Value::Object(m)
}

pub fn write_json(value: &Value, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn point(v: &Value, ctx: &str) -> Result<Point> {
    let a = v.as_array().ok_or_else(|| perr(ctx, "coordinate is not an array"))?;
    match (a.first().and_then(Value::as_f64), a.get(1).and_then(Value::as_f64)) {
        (Some(x), Some(y)) => Ok((x, y)),
        _ => Err(perr(ctx, "coordinate needs two numbers")),
    }
}

fn ring(v: &Value, ctx: &str) -> Result<Vec<Point>> {
    v.as_array()
        .ok_or_else(|| perr(ctx, "ring is not an array"))?
        .iter()
        .map(|p| point(p, ctx))
        .collect()
}

fn polygon_from_coords(v: &Value, ctx: &str) -> Result<Polygon> {
    let rings = v.as_array().ok_or_else(|| perr(ctx, "polygon coordinates are not an array"))?;
    let mut it = rings.iter();
    let ext = ring(it.next().ok_or_else(|| perr(ctx, "polygon has no rings"))?, ctx)?;
    let holes = it.map(|r| ring(r, ctx)).collect::<Result<Vec<_>>>()?;
    Ok(Polygon::new(ext, holes))
}

/// Polygon geometry; a MultiPolygon is accepted only with a single part.
pub fn geometry_polygon(geom: &Value, ctx: &str) -> Result<Polygon> {
    let coords = geom.get("coordinates").ok_or_else(|| perr(ctx, "geometry without coordinates"))?;
    match geom.get("type").and_then(Value::as_str) {
        Some("Polygon") => polygon_from_coords(coords, ctx),
        Some("MultiPolygon") => {
            let parts = coords.as_array().ok_or_else(|| perr(ctx, "bad MultiPolygon"))?;
            if parts.len() != 1 {
                return Err(Error::InvalidGeometry(format!(
                    "{ctx}: MultiPolygon with {} parts is not supported",
                    parts.len()
                )));
            }
            polygon_from_coords(&parts[0], ctx)
        }
        other => Err(perr(ctx, format!("expected Polygon geometry, got {other:?}"))),
    }
}

fn polygon_coords(p: &Polygon) -> Value {
    let close = |r: &Vec<Point>| {
        let mut v: Vec<Value> = r.iter().map(|(x, y)| json!([x, y])).collect();
        if let Some((x, y)) = r.first() {
            v.push(json!([x, y]));
        }
        Value::Array(v)
    };
    Value::Array(p.rings().map(close).collect())
}

pub fn polygon_geometry(p: &Polygon) -> Value {
    json!({"type": "Polygon", "coordinates": polygon_coords(p)})
}

fn prop_string(props: &Value, key: &str) -> Option<String> {
    match props.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Footprints with `id`, `city`, `country` properties. An `area` property,
/// when present, must agree with the polygon area.
pub fn parse_footprints(fc: &FeatureCollection) -> Result<FootprintLayer> {
    let footprints = fc
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let props = f.get("properties").cloned().unwrap_or(Value::Null);
            let id = prop_string(&props, "id")
                .or_else(|| f.get("id").and_then(|v| prop_string(&json!({"id": v}), "id")))
                .ok_or_else(|| perr("footprints", format!("feature {i} has no id")))?;
            let geom = f.get("geometry").ok_or_else(|| perr("footprints", format!("feature {id} has no geometry")))?;
            let poly = geometry_polygon(geom, &format!("footprint {id}"))?;
            let city = prop_string(&props, "city").unwrap_or_default();
            let country = prop_string(&props, "country").unwrap_or_default();
            match props.get("area").and_then(Value::as_f64) {
                Some(a) => Footprint::with_declared_area(id, poly, a, city, country),
                None => Footprint::new(id, poly, city, country),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FootprintLayer {
        crs_id: fc.crs_id.clone(),
        footprints,
    })
}

pub fn read_footprints(path: &Path) -> Result<FootprintLayer> {
    parse_footprints(&read_feature_collection(path)?)
}

pub fn footprints_to_geojson(layer: &FootprintLayer) -> Value {
    let features = layer
        .footprints
        .iter()
        .map(|f| {
            json!({
                "type": "Feature",
                "properties": {"id": f.id, "city": f.city, "country": f.country, "area": f.area},
                "geometry": polygon_geometry(&f.polygon),
            })
        })
        .collect();
    feature_collection(layer.crs_id.as_deref(), features)
}

/// Point annotations with optional `date` (YYYY-MM-DD) and `source` properties.
pub fn parse_annotations(fc: &FeatureCollection) -> Result<AnnotationLayer> {
    let annotations = fc
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let ctx = format!("annotation {i}");
            let geom = f.get("geometry").ok_or_else(|| perr(&ctx, "no geometry"))?;
            if geom.get("type").and_then(Value::as_str) != Some("Point") {
                return Err(perr(&ctx, "expected Point geometry"));
            }
            let p = point(geom.get("coordinates").unwrap_or(&Value::Null), &ctx)?;
            let props = f.get("properties").cloned().unwrap_or(Value::Null);
            let annotation_date = match prop_string(&props, "date") {
                Some(d) => Some(
                    NaiveDate::parse_from_str(&d, "%Y-%m-%d").map_err(|e| perr(&ctx, e.to_string()))?,
                ),
                None => None,
            };
            Ok(DamageAnnotation {
                point: p,
                annotation_date,
                source: prop_string(&props, "source").unwrap_or_default(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotationLayer {
        crs_id: fc.crs_id.clone(),
        annotations,
    })
}

pub fn read_annotations(path: &Path) -> Result<AnnotationLayer> {
    parse_annotations(&read_feature_collection(path)?)
}

pub fn annotations_to_geojson(layer: &AnnotationLayer) -> Value {
    let features = layer
        .annotations
        .iter()
        .map(|a| {
            json!({
                "type": "Feature",
                "properties": {
                    "date": a.annotation_date.map(|d| d.format("%Y-%m-%d").to_string()),
                    "source": a.source,
                },
                "geometry": {"type": "Point", "coordinates": [a.point.0, a.point.1]},
            })
        })
        .collect();
    feature_collection(layer.crs_id.as_deref(), features)
}

/// One output row of the building-level prediction table.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub city: String,
    pub country: String,
    pub area: f64,
    pub mean_t: f64,
    pub predicted: Label,
    pub label: Option<Label>,
    #[serde(skip)]
    pub polygon: Option<Polygon>,
}

pub fn prediction_feature(r: &PredictionRow) -> Value {
    let mut props = json!({
        "id": r.id,
        "city": r.city,
        "country": r.country,
        "area": r.area,
        "mean_T": r.mean_t,
        "predicted": r.predicted,
    });
    if let Some(l) = r.label {
        props["label"] = json!(l);
    }
    json!({
        "type": "Feature",
        "properties": props,
        "geometry": r.polygon.as_ref().map(polygon_geometry).unwrap_or(Value::Null),
    })
}

pub fn predictions_to_geojson(crs_id: Option<&str>, rows: &[PredictionRow]) -> Value {
    feature_collection(crs_id, rows.iter().map(prediction_feature).collect())
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let label = |l: Label| match l {
        Label::Damaged => "damaged",
        Label::Undamaged => "undamaged",
    };
    crate::table::csv_text(
        &["id", "city", "country", "area", "mean_T", "predicted", "label"],
        rows.iter().map(|r| {
            [
                r.id.clone(),
                r.city.clone(),
                r.country.clone(),
                r.area.to_string(),
                r.mean_t.to_string(),
                label(r.predicted).to_string(),
                r.label.map(label).unwrap_or("").to_string(),
            ]
        }),
    )
}

/// Bounding box of any GeoJSON geometry.
pub fn geometry_bbox(geom: &Value) -> Option<Extent> {
    fn walk(v: &Value, e: &mut Extent) {
        if let Some(a) = v.as_array() {
            if let (Some(x), Some(y)) = (a.first().and_then(Value::as_f64), a.get(1).and_then(Value::as_f64)) {
                e.min_x = e.min_x.min(x);
                e.min_y = e.min_y.min(y);
                e.max_x = e.max_x.max(x);
                e.max_y = e.max_y.max(y);
            } else {
                for c in a {
                    walk(c, e);
                }
            }
        }
    }
    let mut e = Extent {
        min_x: f64::INFINITY,
        min_y: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        max_y: f64::NEG_INFINITY,
    };
    match geom.get("type").and_then(Value::as_str) {
        Some("GeometryCollection") => {
            for g in geom.get("geometries").and_then(Value::as_array)? {
                let b = geometry_bbox(g)?;
                walk(&json!([[b.min_x, b.min_y], [b.max_x, b.max_y]]), &mut e);
            }
        }
        _ => walk(geom.get("coordinates")?, &mut e),
    }
    e.min_x.is_finite().then_some(e)
}
