pub mod error;
pub mod footprint;
pub mod geojson;
pub mod geometry;
pub mod geotiff;
pub mod grid;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod population;
pub mod raster;
pub mod regression;
pub mod sim;
pub mod speckle;
pub mod spillover;
pub mod stats;
mod table;
pub mod ttest;

pub use error::{Error, Result};
