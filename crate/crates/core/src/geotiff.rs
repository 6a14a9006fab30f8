//! Single-band floating-point GeoTIFF reading and writing.
//!
//! Only north-up rasters are supported: the georeference must come from a
//! tiepoint + pixel-scale pair, or from a transformation matrix whose
//! rotation terms are zero.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::colortype::{Gray32Float, Gray64Float};
use tiff::encoder::TiffEncoder;
use tiff::tags::{SampleFormat, Tag};

use crate::error::{Error, Result};
use crate::raster::{GeoGrid, Raster, Scene};
use crate::manifest::SceneMeta;

const GT_MODEL_TYPE_GEO_KEY: u16 = 1024;
const GT_RASTER_TYPE_GEO_KEY: u16 = 1025;
const GT_CITATION_GEO_KEY: u16 = 1026;
const PROJECTED_CS_TYPE_GEO_KEY: u16 = 3072;
const MODEL_TYPE_PROJECTED: u16 = 1;
const RASTER_PIXEL_IS_AREA: u16 = 1;

/// On-disk sample type for [`write_raster`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleType {
    /// float32, the usual product format for calibrated scenes.
    Float32,
    /// float64, lossless for derived statistics.
    #[default]
    Float64,
}

/// Raw contents of a GeoTIFF band.
#[derive(Debug, Clone)]
pub struct RasterFile {
    pub grid: GeoGrid,
    pub values: Vec<f64>,
    pub nodata_mask: Vec<bool>,
    pub nodata_value: Option<f64>,
}

fn tiff_err(path: &Path, e: impl ToString) -> Error {
    Error::Tiff {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn unsupported(path: &Path, reason: impl Into<String>) -> Error {
    Error::UnsupportedRaster {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a single-band float GeoTIFF, masking nodata and non-finite samples.
pub fn read_raster_file(path: &Path) -> Result<RasterFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(|e| tiff_err(path, e))?
        .with_limits(Limits::unlimited());
    let (width, height) = dec.dimensions().map_err(|e| tiff_err(path, e))?;

    match dec.colortype().map_err(|e| tiff_err(path, e))? {
        tiff::ColorType::Gray(32) | tiff::ColorType::Gray(64) => {}
        other => return Err(unsupported(path, format!("expected one float band, got {other:?}"))),
    }
    let sample_format = dec
        .find_tag_unsigned_vec::<u16>(Tag::SampleFormat)
        .map_err(|e| tiff_err(path, e))?
        .and_then(|v| v.first().copied())
        .unwrap_or(1);
    if SampleFormat::from_u16(sample_format) != Some(SampleFormat::IEEEFP) {
        return Err(unsupported(path, "band is not floating point"));
    }

    let (origin_x, origin_y, pixel_size) = read_georeference(&mut dec, path)?;
    let crs_id = read_crs(&mut dec);

    let nodata_value = match dec
        .find_tag(Tag::GdalNodata)
        .map_err(|e| tiff_err(path, e))?
    {
        Some(v) => {
            let s = v.into_string().map_err(|e| tiff_err(path, e))?;
            let s = s.trim_matches(char::from(0)).trim();
            Some(
                s.parse::<f64>()
                    .map_err(|_| unsupported(path, format!("bad nodata tag {s:?}")))?,
            )
        }
        None => None,
    };

    let values: Vec<f64> = match dec.read_image().map_err(|e| tiff_err(path, e))? {
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
        _ => return Err(unsupported(path, "band is not floating point")),
    };
    let grid = GeoGrid::new(
        width as usize,
        height as usize,
        origin_x,
        origin_y,
        pixel_size,
        crs_id,
    )?;
    if values.len() != grid.len() {
        return Err(unsupported(path, "sample count does not match dimensions"));
    }
    let nodata_mask = values
        .iter()
        .map(|v| !v.is_finite() || nodata_value.is_some_and(|nd| *v == nd))
        .collect();
    Ok(RasterFile {
        grid,
        values,
        nodata_mask,
        nodata_value,
    })
}

fn read_georeference<R: std::io::Read + std::io::Seek>(
    dec: &mut Decoder<R>,
    path: &Path,
) -> Result<(f64, f64, f64)> {
    let transform = dec
        .find_tag(Tag::ModelTransformationTag)
        .map_err(|e| tiff_err(path, e))?;
    if let Some(t) = transform {
        let m = t.into_f64_vec().map_err(|e| tiff_err(path, e))?;
        if m.len() < 8 {
            return Err(unsupported(path, "short ModelTransformation tag"));
        }
        if m[1] != 0.0 || m[4] != 0.0 {
            return Err(unsupported(path, "rotated or skewed geotransform"));
        }
        if m[0] <= 0.0 || m[0] != -m[5] {
            return Err(unsupported(path, "pixels are not square and north-up"));
        }
        return Ok((m[3], m[7], m[0]));
    }

    let scale = dec
        .find_tag(Tag::ModelPixelScaleTag)
        .map_err(|e| tiff_err(path, e))?
        .ok_or_else(|| unsupported(path, "missing ModelPixelScale tag"))?
        .into_f64_vec()
        .map_err(|e| tiff_err(path, e))?;
    let tie = dec
        .find_tag(Tag::ModelTiepointTag)
        .map_err(|e| tiff_err(path, e))?
        .ok_or_else(|| unsupported(path, "missing ModelTiepoint tag"))?
        .into_f64_vec()
        .map_err(|e| tiff_err(path, e))?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(unsupported(path, "malformed georeference tags"));
    }
    if scale[0] != scale[1] || scale[0] <= 0.0 {
        return Err(unsupported(path, "pixels are not square"));
    }
    let px = scale[0];
    // tiepoint (i, j, k, x, y, z) maps raster (i, j) to model (x, y)
    Ok((tie[3] - tie[0] * px, tie[4] + tie[1] * px, px))
}

fn read_crs<R: std::io::Read + std::io::Seek>(dec: &mut Decoder<R>) -> String {
    if let Ok(Some(v)) = dec.find_tag(Tag::GeoAsciiParamsTag) {
        if let Ok(s) = v.into_string() {
            let s = s.trim_matches(char::from(0));
            let s = s.split('|').next().unwrap_or("").trim();
            if !s.is_empty() {
                return s.to_string();
            }
        }
    }
    if let Ok(Some(keys)) = dec.find_tag_unsigned_vec::<u16>(Tag::GeoKeyDirectoryTag) {
        for entry in keys.chunks(4).skip(1) {
            if entry.len() == 4 && entry[0] == PROJECTED_CS_TYPE_GEO_KEY && entry[1] == 0 {
                return format!("EPSG:{}", entry[3]);
            }
        }
    }
    "unknown".to_string()
}

/// Reads a scene GeoTIFF and attaches acquisition metadata.
pub fn read_scene(path: &Path, meta: &SceneMeta) -> Result<Scene> {
    let f = read_raster_file(path)?;
    Scene::new(
        f.grid,
        meta.acquired_at,
        meta.orbit_pass,
        meta.polarization,
        f.values,
        Some(f.nodata_mask),
    )
}

/// Reads a derived raster; nodata cells become `NaN`.
pub fn read_raster(path: &Path) -> Result<Raster> {
    let f = read_raster_file(path)?;
    let values = f
        .values
        .into_iter()
        .zip(f.nodata_mask)
        .map(|(v, m)| if m { f64::NAN } else { v })
        .collect();
    Raster::new(f.grid, values)
}

/// Writes a grid-aligned array with optional nodata mask. Masked cells are
/// written as `NaN` and flagged through the GDAL nodata tag.
pub fn write_raster(
    grid: &GeoGrid,
    values: &[f64],
    nodata_mask: Option<&[bool]>,
    path: &Path,
    sample: SampleType,
) -> Result<()> {
    grid.validate()?;
    if values.len() != grid.len() || nodata_mask.is_some_and(|m| m.len() != grid.len()) {
        return Err(Error::InvalidGrid(format!(
            "array of {} cells does not match {}x{} grid",
            values.len(),
            grid.width,
            grid.height
        )));
    }
    let masked = |i: usize| nodata_mask.is_some_and(|m| m[i]) || !values[i].is_finite();
    let any_nodata = (0..values.len()).any(masked);

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| tiff_err(path, e))?;
    let (w, h) = (grid.width as u32, grid.height as u32);

    macro_rules! write_as {
        ($color:ty, $ty:ty) => {{
            let data: Vec<$ty> = (0..values.len())
                .map(|i| if masked(i) { <$ty>::NAN } else { values[i] as $ty })
                .collect();
            let mut img = enc
                .new_image::<$color>(w, h)
                .map_err(|e| tiff_err(path, e))?;
            write_geo_tags(img.encoder(), grid, any_nodata).map_err(|e| tiff_err(path, e))?;
            img.write_data(&data).map_err(|e| tiff_err(path, e))?;
        }};
    }
    match sample {
        SampleType::Float32 => write_as!(Gray32Float, f32),
        SampleType::Float64 => write_as!(Gray64Float, f64),
    }
    Ok(())
}

fn write_geo_tags<W: std::io::Write + std::io::Seek, K: tiff::encoder::TiffKind>(
    dir: &mut tiff::encoder::DirectoryEncoder<'_, W, K>,
    grid: &GeoGrid,
    nodata: bool,
) -> tiff::TiffResult<()> {
    dir.write_tag(
        Tag::ModelPixelScaleTag,
        &[grid.pixel_size, grid.pixel_size, 0.0][..],
    )?;
    dir.write_tag(
        Tag::ModelTiepointTag,
        &[0.0, 0.0, 0.0, grid.origin_x, grid.origin_y, 0.0][..],
    )?;
    let citation = format!("{}|", grid.crs_id);
    let mut keys: Vec<u16> = vec![
        1, 1, 0, 0,
        GT_MODEL_TYPE_GEO_KEY, 0, 1, MODEL_TYPE_PROJECTED,
        GT_RASTER_TYPE_GEO_KEY, 0, 1, RASTER_PIXEL_IS_AREA,
        GT_CITATION_GEO_KEY, Tag::GeoAsciiParamsTag.to_u16(), citation.len() as u16, 0,
    ];
    if let Some(code) = grid
        .crs_id
        .strip_prefix("EPSG:")
        .and_then(|c| c.parse::<u16>().ok())
    {
        keys.extend_from_slice(&[PROJECTED_CS_TYPE_GEO_KEY, 0, 1, code]);
    }
    keys[3] = (keys.len() / 4 - 1) as u16;
    dir.write_tag(Tag::GeoKeyDirectoryTag, &keys[..])?;
    dir.write_tag(Tag::GeoAsciiParamsTag, citation.as_str())?;
    if nodata {
        dir.write_tag(Tag::GdalNodata, "nan")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{OrbitPass, Polarization};
    use chrono::{TimeZone, Utc};

    fn grid(w: usize, h: usize, ps: f64) -> GeoGrid {
        GeoGrid::new(w, h, 500_000.0, 5_000_000.0, ps, "EPSG:32637").unwrap()
    }

    fn meta() -> SceneMeta {
        SceneMeta {
            path: "x.tif".into(),
            acquired_at: Utc.with_ymd_and_hms(2022, 3, 1, 0, 0, 0).unwrap(),
            orbit_pass: OrbitPass::Ascending,
            polarization: Polarization::VV,
        }
    }

    #[test]
    fn constant_scene() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tif");
        let g = grid(4, 4, 10.0);
        write_raster(&g, &[-12.0; 16], None, &p, SampleType::Float32).unwrap();
        let s = read_scene(&p, &meta()).unwrap();
        assert_eq!(s.grid, g);
        assert!(s.values.iter().all(|v| *v == -12.0));
        assert!(s.nodata_mask.iter().all(|m| !m));
    }

    #[test]
    fn nodata_sentinel_masks_one_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nd.tif");
        let g = grid(4, 4, 10.0);
        let mut mask = vec![false; 16];
        mask[0] = true;
        write_raster(&g, &[-7.5; 16], Some(&mask), &p, SampleType::Float32).unwrap();
        let s = read_scene(&p, &meta()).unwrap();
        assert_eq!(s.nodata_mask, mask);
    }

    #[test]
    fn one_by_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.tif");
        let g = grid(1, 1, 10.0);
        write_raster(&g, &[3.25], None, &p, SampleType::Float64).unwrap();
        let r = read_raster(&p).unwrap();
        assert_eq!(r.values, vec![3.25]);
        assert_eq!(r.grid, g);
    }

    #[test]
    fn float64_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tif");
        let g = grid(5, 3, 10.0);
        let vals: Vec<f64> = (0..15).map(|i| (i as f64 * 0.731).sin() * 9.123456789).collect();
        write_raster(&g, &vals, None, &p, SampleType::Float64).unwrap();
        let r = read_raster(&p).unwrap();
        for (a, b) in vals.iter().zip(&r.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn unwritable_path() {
        let g = grid(1, 1, 10.0);
        let err = write_raster(
            &g,
            &[0.0],
            None,
            Path::new("/nonexistent-dir/x.tif"),
            SampleType::Float32,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn integer_band_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("int.tif");
        let f = File::create(&p).unwrap();
        let mut enc = TiffEncoder::new(f).unwrap();
        enc.write_image::<tiff::encoder::colortype::Gray16>(2, 2, &[1, 2, 3, 4])
            .unwrap();
        let err = read_raster_file(&p).unwrap_err();
        assert!(matches!(err, Error::UnsupportedRaster { .. }), "{err}");
    }

    #[test]
    fn rotated_transform_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rot.tif");
        let f = File::create(&p).unwrap();
        let mut enc = TiffEncoder::new(f).unwrap();
        let mut img = enc.new_image::<Gray32Float>(2, 2).unwrap();
        let m = [
            10.0, 0.5, 0.0, 100.0, 0.5, -10.0, 0.0, 200.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ];
        img.encoder()
            .write_tag(Tag::ModelTransformationTag, &m[..])
            .unwrap();
        img.write_data(&[0.0f32; 4]).unwrap();
        let err = read_raster_file(&p).unwrap_err();
        assert!(err.to_string().contains("rotated"), "{err}");
    }

    #[test]
    fn unrotated_transform_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tr.tif");
        let f = File::create(&p).unwrap();
        let mut enc = TiffEncoder::new(f).unwrap();
        let mut img = enc.new_image::<Gray32Float>(2, 2).unwrap();
        let m = [
            10.0, 0.0, 0.0, 100.0, 0.0, -10.0, 0.0, 200.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ];
        img.encoder()
            .write_tag(Tag::ModelTransformationTag, &m[..])
            .unwrap();
        img.write_data(&[0.0f32; 4]).unwrap();
        let f = read_raster_file(&p).unwrap();
        assert_eq!((f.grid.origin_x, f.grid.origin_y, f.grid.pixel_size), (100.0, 200.0, 10.0));
    }

    #[test]
    fn differing_pixel_sizes_read_but_do_not_stack() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.tif"), dir.path().join("b.tif"));
        write_raster(&grid(4, 4, 10.0), &[-10.0; 16], None, &a, SampleType::Float32).unwrap();
        write_raster(&grid(4, 4, 20.0), &[-10.0; 16], None, &b, SampleType::Float32).unwrap();
        let sa = read_scene(&a, &meta()).unwrap();
        let sb = read_scene(&b, &meta()).unwrap();
        let err = crate::raster::stack_scenes(vec![sa, sb]).unwrap_err();
        assert!(err.to_string().contains("incompatible grids"));
    }

    #[test]
    fn unreadable_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("garbage.tif");
        std::fs::write(&p, b"not a tiff").unwrap();
        assert!(read_raster_file(&p).is_err());
        assert!(read_raster_file(&dir.path().join("missing.tif")).is_err());
    }
}
