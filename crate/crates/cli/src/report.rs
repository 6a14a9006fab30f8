//! Static figures and a markdown summary from an artifact directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use image::{Rgba, RgbaImage};
use serde::Deserialize;

use pwtt::metrics::{PrPoint, RocPoint};
use pwtt::pipeline::{files, read_run_manifest, read_tmap};
use pwtt::raster::Raster;

pub const TMAP_PNG: &str = "tmap.png";
pub const MASK_PNG: &str = "damage_mask.png";
pub const ROC_PNG: &str = "roc.png";
pub const PR_PNG: &str = "pr.png";
pub const SUMMARY_MD: &str = "summary.md";

const PLOT: u32 = 480;
const MARGIN: u32 = 40;

const RAMP: [[u8; 3]; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];

fn ramp(f: f64) -> Rgba<u8> {
    let f = f.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (f.floor() as usize).min(RAMP.len() - 2);
    let w = f - i as f64;
    let c = |k: usize| (RAMP[i][k] as f64 * (1.0 - w) + RAMP[i + 1][k] as f64 * w).round() as u8;
    Rgba([c(0), c(1), c(2), 255])
}

/// T values on a fixed color ramp from 0 to the map maximum; no-data is
/// transparent.
pub fn tmap_image(t: &Raster) -> RgbaImage {
    let g = &t.grid;
    let max = t.max().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    RgbaImage::from_fn(g.width as u32, g.height as u32, |x, y| {
        let v = t.values[g.index(y as usize, x as usize)];
        if v.is_nan() {
            Rgba([0, 0, 0, 0])
        } else {
            ramp(v / max)
        }
    })
}

/// Pixels with `T > threshold` in red, everything else transparent.
pub fn mask_image(t: &Raster, threshold: f64) -> RgbaImage {
    let g = &t.grid;
    RgbaImage::from_fn(g.width as u32, g.height as u32, |x, y| {
        if t.values[g.index(y as usize, x as usize)] > threshold {
            Rgba([215, 25, 28, 255])
        } else {
            Rgba([0, 0, 0, 0])
        }
    })
}

/// Small rasters are enlarged by an integer factor so pixels stay visible.
fn upscale(img: RgbaImage) -> RgbaImage {
    let k = (512 / img.width().max(img.height()).max(1)).max(1);
    if k == 1 {
        return img;
    }
    image::imageops::resize(&img, img.width() * k, img.height() * k, image::imageops::FilterType::Nearest)
}

fn line(img: &mut RgbaImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgba<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Unit-square line plot with axes; `points` are (x, y) in [0, 1].
pub fn curve_image(points: &[(f64, f64)], diagonal: bool, marker: Option<(f64, f64)>) -> RgbaImage {
    let side = PLOT + 2 * MARGIN;
    let mut img = RgbaImage::from_pixel(side, side, Rgba([255, 255, 255, 255]));
    let to_px = |(x, y): (f64, f64)| {
        (
            (MARGIN as f64 + x.clamp(0.0, 1.0) * PLOT as f64).round() as i64,
            (MARGIN as f64 + (1.0 - y.clamp(0.0, 1.0)) * PLOT as f64).round() as i64,
        )
    };
    let grey = Rgba([190, 190, 190, 255]);
    let black = Rgba([0, 0, 0, 255]);
    for k in 1..5 {
        let f = k as f64 / 5.0;
        line(&mut img, to_px((f, 0.0)), to_px((f, 1.0)), Rgba([235, 235, 235, 255]));
        line(&mut img, to_px((0.0, f)), to_px((1.0, f)), Rgba([235, 235, 235, 255]));
    }
    if diagonal {
        line(&mut img, to_px((0.0, 0.0)), to_px((1.0, 1.0)), grey);
    }
    line(&mut img, to_px((0.0, 0.0)), to_px((1.0, 0.0)), black);
    line(&mut img, to_px((0.0, 0.0)), to_px((0.0, 1.0)), black);
    let blue = Rgba([31, 119, 180, 255]);
    for w in points.windows(2) {
        let (a, b) = (to_px(w[0]), to_px(w[1]));
        for d in -1..=1 {
            line(&mut img, (a.0, a.1 + d), (b.0, b.1 + d), blue);
        }
    }
    if let Some(m) = marker {
        let (cx, cy) = to_px(m);
        for dx in -4i64..=4 {
            for dy in -4i64..=4 {
                if dx * dx + dy * dy <= 16 {
                    let (x, y) = (cx + dx, cy + dy);
                    if x >= 0 && y >= 0 && (x as u32) < side && (y as u32) < side {
                        img.put_pixel(x as u32, y as u32, Rgba([215, 25, 28, 255]));
                    }
                }
            }
        }
    }
    img
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

#[derive(Deserialize)]
struct RocRow {
    threshold: String,
    fpr: f64,
    tpr: f64,
}

fn read_roc(p: &Path) -> Result<Vec<RocPoint>> {
    let mut r = csv::Reader::from_path(p).with_context(|| format!("reading {}", p.display()))?;
    r.deserialize::<RocRow>()
        .map(|row| {
            let row = row?;
            let threshold = if row.threshold == "-inf" {
                f64::NEG_INFINITY
            } else {
                row.threshold.parse()?
            };
            Ok(RocPoint {
                threshold,
                fpr: row.fpr,
                tpr: row.tpr,
            })
        })
        .collect()
}

fn markdown_table(csv_path: &Path) -> Result<String> {
    let mut r = csv::Reader::from_path(csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for rec in r.records() {
        let rec = rec?;
        let cells: Vec<&str> = rec.iter().map(|c| if c.is_empty() { "n/a" } else { c }).collect();
        let _ = writeln!(s, "| {} |", cells.join(" | "));
    }
    Ok(s)
}

fn save(img: &RgbaImage, path: PathBuf, written: &mut Vec<PathBuf>) -> Result<()> {
    img.save(&path).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(())
}

/// Writes figures and `summary.md` for the run in `dir` into `out`.
pub fn write_report(dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = read_run_manifest(dir)?;
    let thr = manifest.threshold.value;
    let (tmap, side) = read_tmap(dir)?;
    let mut written = Vec::new();
    save(&upscale(tmap_image(&tmap)), out.join(TMAP_PNG), &mut written)?;
    save(&upscale(mask_image(&tmap, thr)), out.join(MASK_PNG), &mut written)?;

    let mut md = String::from("# Damage run summary\n\n");
    let w = &side.window;
    let _ = writeln!(
        md,
        "- reference: {} to {}\n- inference: {} to {}",
        w.reference.start.date_naive(),
        w.reference.end.date_naive(),
        w.inference.start.date_naive(),
        w.inference.end.date_naive()
    );
    let mode = serde_json::to_string(&manifest.threshold.mode)?;
    let _ = writeln!(md, "- threshold: {thr:.4} {mode}");
    if let Some(df) = manifest.threshold.df {
        let _ = writeln!(md, "- degrees of freedom: {df}");
    }
    let damaged = tmap.values.iter().filter(|v| **v > thr).count();
    let valid = tmap.values.iter().filter(|v| !v.is_nan()).count();
    let _ = writeln!(md, "- pixels above threshold: {damaged} of {valid}");
    let _ = writeln!(md, "- max T: {:.3}", tmap.max().unwrap_or(f64::NAN));
    md.push_str("\n## Strata\n\n| stratum | scenes ref | scenes inf | median n_ref | median n_inf | used |\n|---|---|---|---|---|---|\n");
    for s in &side.strata {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} |",
            s.stratum, s.reference.scenes, s.inference.scenes, s.reference.median, s.inference.median, s.used
        );
    }

    let roc_path = dir.join(files::ROC_CSV);
    if roc_path.exists() {
        let roc = read_roc(&roc_path)?;
        let pts: Vec<(f64, f64)> = roc.iter().map(|p| (p.fpr, p.tpr)).collect();
        save(&curve_image(&pts, true, None), out.join(ROC_PNG), &mut written)?;
    }
    let pr_path = dir.join(files::PR_JSON);
    if pr_path.exists() {
        let pr: Vec<PrPoint> = read_json(&pr_path)?;
        let pts: Vec<(f64, f64)> = pr.iter().map(|p| (p.recall, p.precision)).collect();
        let best = pwtt::metrics::select_threshold(&pr).ok().map(|b| (b.recall, b.precision));
        save(&curve_image(&pts, false, best), out.join(PR_PNG), &mut written)?;
    }
    for (title, name) in [
        ("Building metrics (area weighted)", files::METRICS_TABLE),
        ("Building metrics (counts)", files::METRICS_TABLE_COUNT),
    ] {
        let p = dir.join(name);
        if p.exists() {
            let _ = write!(md, "\n## {title}\n\n{}", markdown_table(&p)?);
        }
    }
    let reg = dir.join(files::REGRESSION_TXT);
    if reg.exists() {
        let text = std::fs::read_to_string(&reg)?;
        let _ = write!(md, "\n## Grid regression\n\n```\n{}```\n", text);
    }
    let exp = dir.join(files::EXPOSURE_JSON);
    if exp.exists() {
        let e: pwtt::population::ExposureReport = read_json(&exp)?;
        let _ = write!(
            md,
            "\n## Population exposure\n\n{:.0} of {:.0} people live in damaged areas.\n",
            e.people, e.total_population
        );
    }
    let p = out.join(SUMMARY_MD);
    std::fs::write(&p, md).with_context(|| format!("writing {}", p.display()))?;
    written.push(p);
    Ok(written)
}
