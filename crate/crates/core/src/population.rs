//! Population living inside the damage mask.
//!
//! The damage mask `{T > threshold}` is resampled to the population grid by
//! majority area: a population pixel counts when more than half of its area
//! is covered by damaged T pixels. Population is a count, so values are
//! summed, never interpolated.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::footprint::check_crs;
use crate::geotiff::read_raster_file;
use crate::raster::{Extent, GeoGrid, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationRaster {
    pub grid: GeoGrid,
    /// People per pixel.
    pub values: Vec<f64>,
}

impl PopulationRaster {
    pub fn new(grid: GeoGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "population raster has {} values, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("population values must be finite and >= 0, found {v}")));
        }
        Ok(PopulationRaster { grid, values })
    }

    /// Reads a GeoTIFF; nodata pixels hold zero people.
    pub fn read(path: &Path) -> Result<Self> {
        let f = read_raster_file(path)?;
        let values = f
            .values
            .iter()
            .zip(&f.nodata_mask)
            .map(|(v, m)| if *m { 0.0 } else { *v })
            .collect();
        PopulationRaster::new(f.grid, values)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureReport {
    pub threshold: f64,
    pub people: f64,
    pub pixels: usize,
    pub total_population: f64,
}

fn overlap(a: &Extent, b: &Extent) -> f64 {
    let w = a.max_x.min(b.max_x) - a.min_x.max(b.min_x);
    let h = a.max_y.min(b.max_y) - a.min_y.max(b.min_y);
    if w > 0.0 && h > 0.0 {
        w * h
    } else {
        0.0
    }
}

fn pixel_extent(g: &GeoGrid, row: usize, col: usize) -> Extent {
    let min_x = g.origin_x + col as f64 * g.pixel_size;
    let max_y = g.origin_y - row as f64 * g.pixel_size;
    Extent {
        min_x,
        min_y: max_y - g.pixel_size,
        max_x: min_x + g.pixel_size,
        max_y,
    }
}

/// Area of population pixel `(row, col)` covered by damaged T pixels.
pub fn damaged_overlap(pop: &GeoGrid, row: usize, col: usize, tmap: &Raster, threshold: f64) -> f64 {
    let e = pixel_extent(pop, row, col);
    let g = &tmap.grid;
    let ps = g.pixel_size;
    let c0 = ((e.min_x - g.origin_x) / ps).floor().max(0.0) as usize;
    let r0 = ((g.origin_y - e.max_y) / ps).floor().max(0.0) as usize;
    let c1 = ((e.max_x - g.origin_x) / ps).ceil();
    let r1 = ((g.origin_y - e.min_y) / ps).ceil();
    if c1 <= 0.0 || r1 <= 0.0 {
        return 0.0;
    }
    let c1 = (c1 as usize).min(g.width);
    let r1 = (r1 as usize).min(g.height);
    let mut area = 0.0;
    for r in r0..r1 {
        for c in c0..c1 {
            let v = tmap.values[g.index(r, c)];
            if v > threshold {
                area += overlap(&e, &pixel_extent(g, r, c));
            }
        }
    }
    area
}

pub fn exposure(pop: &PopulationRaster, tmap: &Raster, threshold: f64) -> Result<ExposureReport> {
    check_crs(Some(&pop.grid.crs_id), Some(&tmap.grid.crs_id))?;
    if !pop.grid.extent().intersects(&tmap.grid.extent()) {
        return Err(Error::DisjointExtents("population raster and T map do not overlap".into()));
    }
    let g = &pop.grid;
    let half = 0.5 * g.pixel_size * g.pixel_size;
    let counted: Vec<(f64, usize)> = (0..g.height)
        .into_par_iter()
        .map(|row| {
            let mut people = 0.0;
            let mut n = 0;
            for col in 0..g.width {
                let v = pop.values[g.index(row, col)];
                if damaged_overlap(g, row, col, tmap, threshold) > half {
                    people += v;
                    n += 1;
                }
            }
            (people, n)
        })
        .collect();
    Ok(ExposureReport {
        threshold,
        people: counted.iter().map(|c| c.0).sum(),
        pixels: counted.iter().map(|c| c.1).sum(),
        total_population: pop.total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmap(w: usize, h: usize, values: Vec<f64>) -> Raster {
        Raster::new(GeoGrid::new(w, h, 0.0, h as f64 * 10.0, 10.0, "EPSG:32636").unwrap(), values).unwrap()
    }

    #[test]
    fn zero_population() {
        let t = tmap(9, 9, vec![10.0; 81]);
        let p = PopulationRaster::new(GeoGrid::new(1, 1, 0.0, 90.0, 90.0, "EPSG:32636").unwrap(), vec![0.0]).unwrap();
        assert_eq!(exposure(&p, &t, 2.0).unwrap().people, 0.0);
    }

    #[test]
    fn uniform_four_pixels() {
        // 4x4 population pixels of 90 m; T mask covers the top-left 2x2 block
        let (w, h) = (36, 36);
        let mut v = vec![0.0; w * h];
        for r in 0..18 {
            for c in 0..18 {
                v[r * w + c] = 5.0;
            }
        }
        let t = tmap(w, h, v);
        let p = PopulationRaster::new(GeoGrid::new(4, 4, 0.0, 360.0, 90.0, "EPSG:32636").unwrap(), vec![10.0; 16])
            .unwrap();
        let e = exposure(&p, &t, 2.7).unwrap();
        assert_eq!(e.people, 40.0);
        assert_eq!(e.pixels, 4);
        assert_eq!(e.total_population, 160.0);
    }

    #[test]
    fn majority_rule_boundary() {
        // exactly half covered is not a majority
        let mut v = vec![0.0; 4];
        v[0] = 9.0;
        v[2] = 9.0;
        let t = tmap(2, 2, v);
        let p = PopulationRaster::new(GeoGrid::new(1, 1, 0.0, 20.0, 20.0, "EPSG:32636").unwrap(), vec![7.0]).unwrap();
        assert_eq!(exposure(&p, &t, 1.0).unwrap().people, 0.0);
        let t3 = tmap(2, 2, vec![9.0, 9.0, 9.0, 0.0]);
        assert_eq!(exposure(&p, &t3, 1.0).unwrap().people, 7.0);
    }

    #[test]
    fn errors() {
        let t = tmap(2, 2, vec![1.0; 4]);
        let far = PopulationRaster::new(GeoGrid::new(1, 1, 1e5, 1e5, 90.0, "EPSG:32636").unwrap(), vec![1.0]).unwrap();
        assert!(matches!(exposure(&far, &t, 0.0), Err(Error::DisjointExtents(_))));
        let other = PopulationRaster::new(GeoGrid::new(1, 1, 0.0, 20.0, 90.0, "EPSG:4326").unwrap(), vec![1.0]).unwrap();
        assert!(matches!(exposure(&other, &t, 0.0), Err(Error::CrsMismatch(..))));
        assert!(PopulationRaster::new(GeoGrid::new(1, 1, 0.0, 20.0, 90.0, "EPSG:1").unwrap(), vec![-1.0]).is_err());
    }
}
