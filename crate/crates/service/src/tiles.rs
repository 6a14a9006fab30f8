//! Damage overlay tiles.
//!
//! Tiles use a square pyramid in the raster's own projected CRS: zoom 0 is
//! one tile whose side is the larger raster dimension, anchored at the
//! raster's top-left corner; each zoom level halves the side. Output pixels
//! sample the T pixel under their center.

use serde::Serialize;

use pwtt::metrics::PrPoint;
use pwtt::raster::Raster;

pub const TILE_SIZE: u32 = 256;
pub const MAX_ZOOM: u32 = 24;

/// One legend entry: pixels whose precision is at least `min_precision`
/// (and below the next band) get `rgba`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub min_precision: f64,
    pub rgba: [u8; 4],
}

pub const BANDS: [Band; 5] = [
    Band { min_precision: 0.0, rgba: [68, 1, 84, 200] },
    Band { min_precision: 0.2, rgba: [59, 82, 139, 200] },
    Band { min_precision: 0.4, rgba: [33, 145, 140, 200] },
    Band { min_precision: 0.6, rgba: [253, 231, 37, 220] },
    Band { min_precision: 0.8, rgba: [215, 25, 28, 230] },
];

/// Precision of the curve point a building scoring `t` would first be
/// counted positive at: the knot with the largest threshold below `t`.
pub fn precision_at(pr: &[PrPoint], t: f64) -> Option<f64> {
    pr.iter()
        .filter(|p| p.threshold < t)
        .max_by(|a, b| a.threshold.total_cmp(&b.threshold))
        .map(|p| p.precision)
}

fn band_for(p: f64) -> [u8; 4] {
    BANDS.iter().rev().find(|b| p >= b.min_precision).unwrap_or(&BANDS[0]).rgba
}

/// How a visible pixel gets its color.
pub enum Ramp<'a> {
    Precision(&'a [PrPoint]),
    /// No labels: the relative position between threshold and `max`
    /// stands in for precision.
    Relative { max: f64 },
}

impl Ramp<'_> {
    fn color(&self, t: f64, threshold: f64) -> [u8; 4] {
        match self {
            Ramp::Precision(pr) => band_for(precision_at(pr, t).unwrap_or(0.0)),
            Ramp::Relative { max } => {
                let span = max - threshold;
                let f = if span > 0.0 { (t - threshold) / span } else { 1.0 };
                band_for(f.clamp(0.0, 1.0))
            }
        }
    }
}

/// RGBA pixels of one tile; `None` when the tile index is out of range.
pub fn render(tmap: &Raster, z: u32, x: u32, y: u32, threshold: f64, ramp: &Ramp<'_>) -> Option<Vec<u8>> {
    if z > MAX_ZOOM {
        return None;
    }
    let n = 1u64 << z;
    if x as u64 >= n || y as u64 >= n {
        return None;
    }
    let g = &tmap.grid;
    let root = g.width.max(g.height) as f64 * g.pixel_size;
    let side = root / n as f64;
    let step = side / TILE_SIZE as f64;
    let mut rgba = vec![0u8; (TILE_SIZE * TILE_SIZE * 4) as usize];
    for i in 0..TILE_SIZE {
        let py = g.origin_y - y as f64 * side - (i as f64 + 0.5) * step;
        for j in 0..TILE_SIZE {
            let px = g.origin_x + x as f64 * side + (j as f64 + 0.5) * step;
            let Some((r, c)) = g.pixel_at(px, py) else { continue };
            let t = tmap.values[g.index(r, c)];
            if t > threshold {
                let k = ((i * TILE_SIZE + j) * 4) as usize;
                rgba[k..k + 4].copy_from_slice(&ramp.color(t, threshold));
            }
        }
    }
    Some(rgba)
}

pub fn encode_png(rgba: &[u8], width: u32, height: u32) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory png header");
        w.write_image_data(rgba).expect("in-memory png data");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use pwtt::raster::GeoGrid;

    fn pr() -> Vec<PrPoint> {
        vec![
            PrPoint { threshold: 5.0, precision: 0.9, recall: 0.2 },
            PrPoint { threshold: 3.0, precision: 0.65, recall: 0.6 },
            PrPoint { threshold: 1.0, precision: 0.3, recall: 0.9 },
            PrPoint { threshold: f64::NEG_INFINITY, precision: 0.1, recall: 1.0 },
        ]
    }

    #[test]
    fn precision_lookup() {
        let pr = pr();
        assert_eq!(precision_at(&pr, 6.0), Some(0.9));
        assert_eq!(precision_at(&pr, 5.0), Some(0.65));
        assert_eq!(precision_at(&pr, 3.5), Some(0.65));
        assert_eq!(precision_at(&pr, 0.5), Some(0.1));
        assert_eq!(band_for(0.65), BANDS[3].rgba);
    }

    #[test]
    fn zoom_zero_covers_raster() {
        let g = GeoGrid::new(2, 1, 0.0, 10.0, 10.0, "EPSG:32636").unwrap();
        let t = Raster::new(g, vec![4.0, 0.5]).unwrap();
        let pr = pr();
        let px = render(&t, 0, 0, 0, 1.0, &Ramp::Precision(&pr)).unwrap();
        // top-left quarter is the visible pixel, top-right is below threshold
        assert_eq!(&px[0..4], &BANDS[3].rgba);
        let k = (200 * 4) as usize;
        assert_eq!(px[k + 3], 0);
        // bottom half lies outside the raster
        let k = ((200 * TILE_SIZE + 10) * 4) as usize;
        assert_eq!(px[k + 3], 0);
        assert!(render(&t, 1, 2, 0, 1.0, &Ramp::Precision(&pr)).is_none());
    }
}
