//! Log-linear damage-intensity regression with city fixed effects.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridCell;
use crate::stats::t_two_sided_p;

/// How cells without damaged buildings enter the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ZeroHandling {
    /// Drop cells with `D = 0`; the response is `ln D`.
    #[default]
    Exclude,
    /// Keep them; the response is `ln(D + 1)`.
    Log1p,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

impl Coefficient {
    pub fn stars(&self) -> &'static str {
        match self.p_value {
            p if p < 0.001 => "***",
            p if p < 0.01 => "**",
            p if p < 0.05 => "*",
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// Intercept, mean T, building count, then one dummy per non-baseline city.
    pub coefficients: Vec<Coefficient>,
    pub baseline_city: String,
    pub r_squared: f64,
    /// Cells used in the fit.
    pub n: usize,
    /// All cells passed in.
    pub n_cells: usize,
    /// Cells with at least one building.
    pub n_cells_with_buildings: usize,
    pub zero_handling: ZeroHandling,
    #[serde(skip)]
    pub fitted: Vec<f64>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl RegressionResult {
    pub fn beta0(&self) -> f64 {
        self.coefficients[0].estimate
    }

    pub fn beta1(&self) -> f64 {
        self.coefficients[1].estimate
    }

    pub fn beta2(&self) -> f64 {
        self.coefficients[2].estimate
    }

    pub fn fixed_effects(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert(self.baseline_city.clone(), 0.0);
        for c in &self.coefficients[3..] {
            m.insert(c.name.trim_start_matches("city:").to_string(), c.estimate);
        }
        m
    }

    /// Percentage change in damaged buildings per unit of mean T.
    pub fn t_effect_pct(&self) -> f64 {
        (self.beta1().exp() - 1.0) * 100.0
    }
}

/// Design matrix and response for the cells that enter the fit.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub names: Vec<String>,
    pub baseline_city: String,
}

pub fn design(cells: &[GridCell], zero: ZeroHandling) -> Design {
    let used: Vec<&GridCell> = cells
        .iter()
        .filter(|c| c.building_count > 0 && c.mean_t.is_some())
        .filter(|c| zero == ZeroHandling::Log1p || c.damaged_count >= 1)
        .collect();
    let cities: Vec<String> = used
        .iter()
        .map(|c| c.city.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let baseline_city = cities.first().cloned().unwrap_or_default();
    let dummies = &cities[cities.len().min(1)..];
    let p = 3 + dummies.len();
    let mut x = DMatrix::zeros(used.len(), p);
    let mut y = DVector::zeros(used.len());
    for (i, c) in used.iter().enumerate() {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = c.mean_t.unwrap_or(f64::NAN);
        x[(i, 2)] = c.building_count as f64;
        if let Some(j) = dummies.iter().position(|d| *d == c.city) {
            x[(i, 3 + j)] = 1.0;
        }
        let d = c.damaged_count as f64;
        y[i] = match zero {
            ZeroHandling::Exclude => d.ln(),
            ZeroHandling::Log1p => d.ln_1p(),
        };
    }
    let mut names = vec!["Constant".to_string(), "Mean T-Value".into(), "Building Count".into()];
    names.extend(dummies.iter().map(|d| format!("city:{d}")));
    Design {
        x,
        y,
        names,
        baseline_city,
    }
}

/// Ordinary least squares via Householder QR with classical standard errors.
pub fn fit_damage_regression(cells: &[GridCell], zero: ZeroHandling) -> Result<RegressionResult> {
    let mut res = fit_design(&design(cells, zero))?;
    res.n_cells = cells.len();
    res.n_cells_with_buildings = cells.iter().filter(|c| c.building_count > 0).count();
    res.zero_handling = zero;
    Ok(res)
}

/// OLS on an explicit design. Cell counts are set to the row count.
pub fn fit_design(d: &Design) -> Result<RegressionResult> {
    let (n, p) = d.x.shape();
    if n <= p {
        return Err(Error::SingularFit(format!("{n} usable cells for {p} parameters")));
    }
    let qr = d.x.clone().qr();
    let r = qr.r();
    let diag_max = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..p {
        if r[(i, i)].abs() <= 1e-10 * diag_max.max(1.0) {
            return Err(Error::SingularFit(format!(
                "design is rank deficient in column '{}'",
                d.names[i]
            )));
        }
    }
    let qty = qr.q().transpose() * &d.y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularFit("triangular solve failed".into()))?;
    let fitted = &d.x * &beta;
    let resid = &d.y - &fitted;
    let rss = resid.norm_squared();
    let dof = (n - p) as f64;
    let sigma2 = rss / dof;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularFit("R is not invertible".into()))?;
    // (XᵀX)⁻¹ = R⁻¹R⁻ᵀ
    let xtx_inv = &r_inv * r_inv.transpose();
    let coefficients = (0..p)
        .map(|j| {
            let se = (sigma2 * xtx_inv[(j, j)]).sqrt();
            let t = beta[j] / se;
            Coefficient {
                name: d.names[j].clone(),
                estimate: beta[j],
                std_error: se,
                t_value: t,
                p_value: if se > 0.0 { t_two_sided_p(t, dof) } else { 0.0 },
            }
        })
        .collect();
    let mean_y = d.y.mean();
    let tss: f64 = d.y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 0.0 };
    Ok(RegressionResult {
        coefficients,
        baseline_city: d.baseline_city.clone(),
        r_squared,
        n,
        n_cells: n,
        n_cells_with_buildings: n,
        zero_handling: ZeroHandling::Exclude,
        fitted: fitted.iter().copied().collect(),
        residuals: resid.iter().copied().collect(),
    })
}

/// Plain-text coefficient table with significance stars.
pub fn regression_table(res: &RegressionResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<20} {:>14}", "", "log(Damaged)");
    let _ = writeln!(s, "{}", "-".repeat(35));
    for idx in [1usize, 2, 0] {
        let c = &res.coefficients[idx];
        let _ = writeln!(s, "{:<20} {:>14}", c.name, format!("{:.3}{}", c.estimate, c.stars()));
        let _ = writeln!(s, "{:<20} {:>14}", "", format!("({:.3})", c.std_error));
    }
    let _ = writeln!(s, "{}", "-".repeat(35));
    let fe = if res.coefficients.len() > 3 { "Yes" } else { "No" };
    let _ = writeln!(s, "{:<20} {:>14}", "City FE", fe);
    let _ = writeln!(s, "{:<20} {:>14}", "N", res.n);
    let _ = writeln!(s, "{:<20} {:>14.3}", "R2", res.r_squared);
    let _ = writeln!(s, "{}", "-".repeat(35));
    let _ = writeln!(s, "* p<0.05, ** p<0.01, *** p<0.001");
    s
}
