//! Scene manifest: a JSON list of `{path, acquired_at, orbit_pass, polarization}`.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotiff::read_scene;
use crate::raster::{stack_scenes, OrbitPass, Polarization, SceneStack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub acquired_at: DateTime<Utc>,
    pub orbit_pass: OrbitPass,
    pub polarization: Polarization,
}

#[derive(Debug, Deserialize)]
struct RawEntry {
    path: PathBuf,
    acquired_at: String,
    orbit_pass: OrbitPass,
    polarization: Polarization,
}

pub fn read_manifest(path: &Path) -> Result<Vec<SceneMeta>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Parses manifest JSON; `acquired_at` accepts a date or an RFC 3339 timestamp.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<SceneMeta>> {
    let raw: Vec<RawEntry> =
        serde_json::from_str(text).map_err(|e| Error::parse("scene manifest", e))?;
    raw.into_iter()
        .map(|r| {
            Ok(SceneMeta {
                path: if r.path.is_absolute() {
                    r.path
                } else {
                    base.join(r.path)
                },
                acquired_at: crate::raster::parse_time(&r.acquired_at)?,
                orbit_pass: r.orbit_pass,
                polarization: r.polarization,
            })
        })
        .collect()
}

/// Writes a manifest with paths relative to `base` when possible.
pub fn write_manifest(entries: &[SceneMeta], path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let rel: Vec<SceneMeta> = entries
        .iter()
        .map(|e| SceneMeta {
            path: e.path.strip_prefix(base).map(Path::to_path_buf).unwrap_or(e.path.clone()),
            ..e.clone()
        })
        .collect();
    let json = serde_json::to_string_pretty(&rel).expect("manifest serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads every scene named in a manifest and stacks them.
pub fn load_stack(manifest: &Path) -> Result<SceneStack> {
    let metas = read_manifest(manifest)?;
    let scenes = metas
        .iter()
        .map(|m| read_scene(&m.path, m))
        .collect::<Result<Vec<_>>>()?;
    stack_scenes(scenes)
}
