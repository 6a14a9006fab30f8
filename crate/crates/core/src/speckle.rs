//! Lee MMSE speckle filter.
//!
//! The filter runs on linear power: each dB value is converted with
//! `10^(x/10)`, filtered, and converted back. Within a `(2r+1)²` window
//! cropped at the raster border the local mean `m` and variance `v` are
//! taken over unmasked pixels only. With the speckle coefficient of
//! variation `Cu² = 1 / ENL` the noise variance is `m²·Cu²`, the signal
//! variance is `max(v - m²·Cu², 0)` and the gain is
//! `k = var_signal / (var_signal + var_noise)`, so that
//! `x̂ = m + k·(x - m)` always lies between the window mean and the
//! observed value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeeParams {
    /// Window side is `2 * window_radius + 1`.
    pub window_radius: usize,
    /// Equivalent number of looks.
    pub looks: f64,
}

impl Default for LeeParams {
    fn default() -> Self {
        LeeParams {
            window_radius: 3,
            looks: 4.4,
        }
    }
}

impl LeeParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::InvalidArgument("speckle window_radius must be >= 1".into()));
        }
        if !(self.looks > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "speckle looks must be > 0, got {}",
                self.looks
            )));
        }
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(p: f64) -> f64 {
    10.0 * p.log10()
}

/// Per-pixel filter output in linear power together with the gain `k`.
fn filter_linear(scene: &Scene, params: &LeeParams) -> (Vec<f64>, Vec<f64>) {
    let g = &scene.grid;
    let (w, h) = (g.width, g.height);
    let r = params.window_radius;
    let cu2 = 1.0 / params.looks;
    let lin: Vec<f64> = scene
        .values
        .iter()
        .zip(&scene.nodata_mask)
        .map(|(v, m)| if *m { f64::NAN } else { db_to_linear(*v) })
        .collect();

    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut out = vec![f64::NAN; w];
            let mut gain = vec![f64::NAN; w];
            let r0 = row.saturating_sub(r);
            let r1 = (row + r).min(h - 1);
            for col in 0..w {
                let center = lin[row * w + col];
                if center.is_nan() {
                    continue;
                }
                let c0 = col.saturating_sub(r);
                let c1 = (col + r).min(w - 1);
                let mut sum = 0.0;
                let mut n = 0usize;
                for rr in r0..=r1 {
                    for v in &lin[rr * w + c0..=rr * w + c1] {
                        if !v.is_nan() {
                            sum += v;
                            n += 1;
                        }
                    }
                }
                let mean = sum / n as f64;
                let mut ss = 0.0;
                for rr in r0..=r1 {
                    for v in &lin[rr * w + c0..=rr * w + c1] {
                        if !v.is_nan() {
                            ss += (v - mean) * (v - mean);
                        }
                    }
                }
                let var = ss / n as f64;
                let var_noise = mean * mean * cu2;
                let var_signal = (var - var_noise).max(0.0);
                let denom = var_signal + var_noise;
                let k = if denom > 0.0 {
                    (var_signal / denom).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                out[col] = mean + k * (center - mean);
                gain[col] = k;
            }
            (out, gain)
        })
        .collect();

    let mut out = Vec::with_capacity(w * h);
    let mut gain = Vec::with_capacity(w * h);
    for (o, k) in rows {
        out.extend(o);
        gain.extend(k);
    }
    (out, gain)
}

/// Applies the Lee filter to one scene. Masked pixels stay masked and keep
/// their stored values; they never enter a neighbor's window statistics.
pub fn lee_filter(scene: &Scene, params: &LeeParams) -> Scene {
    let (lin, _) = filter_linear(scene, params);
    let values = lin
        .iter()
        .zip(scene.values.iter().zip(&scene.nodata_mask))
        .map(|(f, (orig, masked))| if *masked { *orig } else { linear_to_db(*f) })
        .collect();
    Scene {
        values,
        ..scene.clone()
    }
}

/// Gain `k ∈ [0, 1]` per pixel (`NaN` where masked).
pub fn lee_gain(scene: &Scene, params: &LeeParams) -> Vec<f64> {
    filter_linear(scene, params).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{GeoGrid, OrbitPass, Polarization};
    use chrono::{TimeZone, Utc};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Gamma};

    fn scene(w: usize, h: usize, values: Vec<f64>, mask: Option<Vec<bool>>) -> Scene {
        Scene::new(
            GeoGrid::new(w, h, 0.0, h as f64 * 10.0, 10.0, "EPSG:3857").unwrap(),
            Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap(),
            OrbitPass::Ascending,
            Polarization::VV,
            values,
            mask,
        )
        .unwrap()
    }

    #[test]
    fn constant_field_is_fixed_point() {
        let s = scene(9, 9, vec![-12.0; 81], None);
        let f = lee_filter(&s, &LeeParams::default());
        for v in &f.values {
            assert!((v + 12.0).abs() < 1e-12, "{v}");
        }
        assert!(lee_gain(&s, &LeeParams::default()).iter().all(|k| *k == 0.0));
    }

    #[test]
    fn homogeneous_speckle_variance_drops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let gamma = Gamma::new(1.0, 1.0).unwrap();
        let base = db_to_linear(-10.0);
        let (w, h) = (64, 64);
        let lin: Vec<f64> = (0..w * h).map(|_| base * gamma.sample(&mut rng)).collect();
        let db: Vec<f64> = lin.iter().map(|p| linear_to_db(*p)).collect();
        let s = scene(w, h, db, None);
        let f = lee_filter(&s, &LeeParams { window_radius: 3, looks: 1.0 });
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let out_lin: Vec<f64> = f.values.iter().map(|d| db_to_linear(*d)).collect();
        assert!(var(&out_lin) < var(&lin));
        let m_in = lin.iter().sum::<f64>() / lin.len() as f64;
        let m_out = out_lin.iter().sum::<f64>() / out_lin.len() as f64;
        assert!(((m_out - m_in) / m_in).abs() < 0.01, "{m_in} {m_out}");
    }

    #[test]
    fn bright_point_target_is_preserved() {
        let mut v = vec![-15.0; 49];
        v[24] = 5.0;
        let s = scene(7, 7, v, None);
        let p = LeeParams::default();
        let out = lee_filter(&s, &p);
        let k = lee_gain(&s, &p)[24];

        // independent scalar evaluation over the full 7x7 window
        let bg = 10f64.powf(-1.5);
        let bright = 10f64.powf(0.5);
        let mean = (48.0 * bg + bright) / 49.0;
        let var = (48.0 * (bg - mean).powi(2) + (bright - mean).powi(2)) / 49.0;
        let noise = mean * mean / 4.4;
        let expected_k = (var - noise) / var;
        assert!((k - expected_k).abs() < 1e-12);
        assert!(k > 0.95, "{k}");
        let expected = 10.0 * (mean + expected_k * (bright - mean)).log10();
        assert!((out.values[24] - expected).abs() < 1e-9);
        assert!(out.values[24] > 4.5);
    }

    #[test]
    fn output_is_convex_combination() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let gamma = Gamma::new(2.0, 0.5).unwrap();
        let v: Vec<f64> = (0..400).map(|_| linear_to_db(0.1 * gamma.sample(&mut rng))).collect();
        let s = scene(20, 20, v, None);
        let p = LeeParams { window_radius: 2, looks: 2.0 };
        let out = lee_filter(&s, &p);
        for row in 0..20usize {
            for col in 0..20usize {
                let lin = |d: f64| db_to_linear(d);
                let mut win = vec![];
                for rr in row.saturating_sub(2)..=(row + 2).min(19) {
                    for cc in col.saturating_sub(2)..=(col + 2).min(19) {
                        win.push(lin(s.values[rr * 20 + cc]));
                    }
                }
                let m = win.iter().sum::<f64>() / win.len() as f64;
                let x = lin(s.values[row * 20 + col]);
                let y = lin(out.values[row * 20 + col]);
                let (lo, hi) = (m.min(x), m.max(x));
                assert!(y >= lo * (1.0 - 1e-12) && y <= hi * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn masked_pixels_do_not_leak() {
        let mut v = vec![-12.0; 25];
        let mut mask = vec![false; 25];
        v[12] = 30.0;
        mask[12] = true;
        let s = scene(5, 5, v, Some(mask));
        let out = lee_filter(&s, &LeeParams { window_radius: 1, looks: 4.4 });
        for (i, val) in out.values.iter().enumerate() {
            if i == 12 {
                assert_eq!(*val, 30.0);
                assert!(out.nodata_mask[12]);
            } else {
                assert!((val + 12.0).abs() < 1e-12, "{i}: {val}");
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(LeeParams { window_radius: 0, looks: 1.0 }.validate().is_err());
        assert!(LeeParams { window_radius: 1, looks: 0.0 }.validate().is_err());
    }
}
