//! Fixed-size grid cells over a city and per-cell aggregation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::footprint::{DamageAnnotation, LabeledFootprint};
use crate::geometry::Polygon;
use crate::metrics::Scored;
use crate::raster::{Extent, Raster};

pub const DEFAULT_CELL_SIZE: f64 = 500.0;

/// One square cell. `row`/`col` index multiples of `size` from the CRS
/// origin, so cells from different extents line up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_id: String,
    pub city: String,
    pub row: i64,
    pub col: i64,
    pub size: f64,
    /// Damaged-labeled footprints with centroid in the cell.
    pub damaged_count: u32,
    /// All footprints with centroid in the cell.
    pub building_count: u32,
    /// Damage annotation points in the cell.
    pub annotation_count: u32,
    /// Footprints predicted damaged, when predictions were supplied.
    pub predicted_count: u32,
    /// Mean composite T over pixels whose centers fall in the cell.
    pub mean_t: Option<f64>,
}

impl GridCell {
    fn empty(city: &str, row: i64, col: i64, size: f64) -> Self {
        GridCell {
            cell_id: format!("{city}:{col}:{row}"),
            city: city.to_string(),
            row,
            col,
            size,
            damaged_count: 0,
            building_count: 0,
            annotation_count: 0,
            predicted_count: 0,
            mean_t: None,
        }
    }

    pub fn min_x(&self) -> f64 {
        self.col as f64 * self.size
    }

    pub fn min_y(&self) -> f64 {
        self.row as f64 * self.size
    }

    pub fn polygon(&self) -> Polygon {
        let (x, y) = (self.min_x(), self.min_y());
        Polygon::rect(x, y, x + self.size, y + self.size)
    }

    /// Binary cell label: at least one damage annotation.
    pub fn is_damaged(&self) -> bool {
        self.annotation_count >= 1
    }
}

fn cell_of(v: f64, size: f64) -> i64 {
    (v / size).floor() as i64
}

/// Cells covering `extent`, anchored at multiples of `cell_size`. Cells are
/// half-open, so an extent edge lying exactly on a cell boundary does not
/// pull in the next cell.
pub fn build_grid(extent: &Extent, cell_size: f64, city: &str) -> Result<Vec<GridCell>> {
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(Error::InvalidArgument(format!("cell size must be > 0, got {cell_size}")));
    }
    if !(extent.width() > 0.0 && extent.height() > 0.0) {
        return Err(Error::InvalidArgument(format!("degenerate extent {extent:?}")));
    }
    let col0 = cell_of(extent.min_x, cell_size);
    let row0 = cell_of(extent.min_y, cell_size);
    let col1 = (extent.max_x / cell_size).ceil() as i64 - 1;
    let row1 = (extent.max_y / cell_size).ceil() as i64 - 1;
    let mut cells = Vec::new();
    for row in row0..=row1.max(row0) {
        for col in col0..=col1.max(col0) {
            cells.push(GridCell::empty(city, row, col, cell_size));
        }
    }
    Ok(cells)
}

/// Inputs for one city's aggregation.
pub struct CityLayers<'a> {
    pub city: &'a str,
    pub footprints: &'a [LabeledFootprint],
    pub annotations: &'a [DamageAnnotation],
    /// Ids of footprints predicted damaged.
    pub predicted: Option<&'a [String]>,
    pub tmap: Option<&'a Raster>,
}

/// Fills counts and mean T for `cells` (all of one city and cell size).
/// Points outside every cell are ignored.
pub fn aggregate_cells(mut cells: Vec<GridCell>, layers: &CityLayers<'_>) -> Vec<GridCell> {
    let Some(size) = cells.first().map(|c| c.size) else {
        return cells;
    };
    let index: HashMap<(i64, i64), usize> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| ((c.col, c.row), i))
        .collect();
    let lookup = |x: f64, y: f64| index.get(&(cell_of(x, size), cell_of(y, size))).copied();

    let predicted: std::collections::HashSet<&str> = layers
        .predicted
        .map(|p| p.iter().map(String::as_str).collect())
        .unwrap_or_default();
    for lf in layers.footprints {
        let (x, y) = lf.footprint.centroid();
        if let Some(i) = lookup(x, y) {
            cells[i].building_count += 1;
            if lf.label.is_damaged() {
                cells[i].damaged_count += 1;
            }
            if predicted.contains(lf.footprint.id.as_str()) {
                cells[i].predicted_count += 1;
            }
        }
    }
    for a in layers.annotations {
        if let Some(i) = lookup(a.point.0, a.point.1) {
            cells[i].annotation_count += 1;
        }
    }
    if let Some(t) = layers.tmap {
        let mut sums = vec![(0.0, 0usize); cells.len()];
        let g = &t.grid;
        for row in 0..g.height {
            for col in 0..g.width {
                let v = t.values[g.index(row, col)];
                if v.is_nan() {
                    continue;
                }
                let (x, y) = g.pixel_center(row, col);
                if let Some(i) = lookup(x, y) {
                    sums[i].0 += v;
                    sums[i].1 += 1;
                }
            }
        }
        for (c, (s, n)) in cells.iter_mut().zip(sums) {
            c.mean_t = (n > 0).then(|| s / n as f64);
        }
    }
    cells
}

/// Cells with a defined mean T as scored binary examples (unit weights).
pub fn cell_scores(cells: &[GridCell]) -> Vec<Scored> {
    cells
        .iter()
        .filter_map(|c| {
            c.mean_t.map(|t| Scored {
                score: t,
                positive: c.is_damaged(),
                weight: 1.0,
            })
        })
        .collect()
}

pub const CELLS_CSV_HEADER: [&str; 12] = [
    "cell_id",
    "city",
    "row",
    "col",
    "min_x",
    "min_y",
    "size",
    "damaged_count",
    "building_count",
    "annotation_count",
    "predicted_count",
    "mean_t",
];

pub fn cells_csv(cells: &[GridCell]) -> String {
    crate::table::csv_text(
        &CELLS_CSV_HEADER,
        cells.iter().map(|c| {
            [
                c.cell_id.clone(),
                c.city.clone(),
                c.row.to_string(),
                c.col.to_string(),
                c.min_x().to_string(),
                c.min_y().to_string(),
                c.size.to_string(),
                c.damaged_count.to_string(),
                c.building_count.to_string(),
                c.annotation_count.to_string(),
                c.predicted_count.to_string(),
                c.mean_t.map(|v| v.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

/// Reads cells written by [`cells_csv`].
pub fn read_cells_csv(path: &std::path::Path) -> Result<Vec<GridCell>> {
    #[derive(Deserialize)]
    struct Row {
        cell_id: String,
        city: String,
        row: i64,
        col: i64,
        size: f64,
        damaged_count: u32,
        building_count: u32,
        annotation_count: u32,
        predicted_count: u32,
        mean_t: Option<f64>,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(format!("grid cells {}", path.display()), e))?;
    rdr.deserialize::<Row>()
        .map(|r| {
            let r = r.map_err(|e| Error::parse(format!("grid cells {}", path.display()), e))?;
            Ok(GridCell {
                cell_id: r.cell_id,
                city: r.city,
                row: r.row,
                col: r.col,
                size: r.size,
                damaged_count: r.damaged_count,
                building_count: r.building_count,
                annotation_count: r.annotation_count,
                predicted_count: r.predicted_count,
                mean_t: r.mean_t,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::footprint::{Footprint, Label};
    use crate::raster::GeoGrid;

    fn ext(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Extent {
        Extent { min_x, min_y, max_x, max_y }
    }

    #[test]
    fn cells_csv_round_trips_quoted_city() {
        let mut c = GridCell::empty("Kyiv, Obolon", 2, -3, 500.0);
        c.mean_t = Some(1.25);
        c.damaged_count = 4;
        let d = GridCell::empty("plain", 0, 0, 500.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cells.csv");
        std::fs::write(&p, cells_csv(&[c.clone(), d.clone()])).unwrap();
        assert_eq!(read_cells_csv(&p).unwrap(), vec![c, d]);
    }

    #[test]
    fn grid_cover() {
        assert_eq!(build_grid(&ext(0.0, 0.0, 1000.0, 500.0), 500.0, "c").unwrap().len(), 2);
        assert_eq!(build_grid(&ext(0.0, 0.0, 1001.0, 500.0), 500.0, "c").unwrap().len(), 3);
        assert_eq!(build_grid(&ext(10.0, 10.0, 20.0, 20.0), 500.0, "c").unwrap().len(), 1);
        // unaligned extent straddles anchors
        assert_eq!(build_grid(&ext(250.0, 250.0, 750.0, 750.0), 500.0, "c").unwrap().len(), 4);
        assert!(build_grid(&ext(0.0, 0.0, 10.0, 10.0), 0.0, "c").is_err());
        assert!(build_grid(&ext(0.0, 0.0, 0.0, 10.0), 500.0, "c").is_err());
    }

    fn lf(id: &str, x: f64, y: f64, damaged: bool) -> LabeledFootprint {
        LabeledFootprint {
            footprint: Footprint::new(id, Polygon::rect(x - 5.0, y - 5.0, x + 5.0, y + 5.0), "c", "k").unwrap(),
            label: if damaged { Label::Damaged } else { Label::Undamaged },
        }
    }

    #[test]
    fn aggregation_counts_and_mean() {
        let cells = build_grid(&ext(0.0, 0.0, 1000.0, 500.0), 500.0, "c").unwrap();
        let fps = vec![lf("a", 100.0, 100.0, true), lf("b", 200.0, 100.0, false), lf("c", 700.0, 100.0, false)];
        let anns = vec![DamageAnnotation { point: (101.0, 101.0), annotation_date: None, source: "x".into() }];
        let g = GeoGrid::new(2, 1, 0.0, 500.0, 500.0, "EPSG:1").unwrap();
        let t = Raster::new(g, vec![3.0, 1.0]).unwrap();
        let pred = vec!["b".to_string()];
        let out = aggregate_cells(
            cells,
            &CityLayers { city: "c", footprints: &fps, annotations: &anns, predicted: Some(&pred), tmap: Some(&t) },
        );
        assert_eq!((out[0].damaged_count, out[0].building_count, out[0].annotation_count), (1, 2, 1));
        assert_eq!(out[0].predicted_count, 1);
        assert_eq!((out[1].damaged_count, out[1].building_count), (0, 1));
        assert_eq!(out[0].mean_t, Some(3.0));
        assert_eq!(out[1].mean_t, Some(1.0));
        assert!(out[0].is_damaged() && !out[1].is_damaged());
    }
}
