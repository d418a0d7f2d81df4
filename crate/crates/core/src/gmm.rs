//! Isotropic Gaussian mixture kernels: E-step, M-step, N-step, R-step, and
//! the evidence lower bound.
//!
//! Mixing weights are uniform and never estimated. The component density is
//! the isotropic Gaussian whose posterior is exactly the RBF softmax
//! `softmax(-‖x - μ‖² / σ²)`, i.e. per-coordinate variance `σ²/2`:
//!
//! ```text
//! ln N(x | μ) = -(C/2)·ln(π σ²) - ‖x - μ‖² / σ²
//! ```
//!
//! With that density the RBF E-step is the true posterior, so the ELBO is
//! tight after every E-step and every EM/HEM layer is monotone.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{logsumexp_rows, matmul, matmul_nt, matmul_tn, softmax_rows, squared_distances, Matrix};

/// Smallest total responsibility a component may carry before the M-step
/// refuses to divide by it.
pub const DEGENERATE_MASS: f64 = 1e-8;

/// Entries of γ below this are treated as exact zeros in the entropy.
const ENTROPY_FLOOR: f64 = 1e-300;

/// Similarity used to form E-step logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `-‖x - μ‖² / σ²`: the exact GMM posterior.
    Rbf,
    /// `xᵀμ / σ²`: scaled dot-product attention.
    Dot,
}

impl Kernel {
    pub fn as_str(self) -> &'static str {
        match self {
            Kernel::Rbf => "rbf",
            Kernel::Dot => "dot",
        }
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" => Ok(Kernel::Rbf),
            "dot" => Ok(Kernel::Dot),
            other => Err(Error::Config(format!("unknown kernel `{other}` (expected rbf or dot)"))),
        }
    }
}

/// Gaussian means plus the shared temperature σ².
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub bases: Matrix,
    pub temperature: f64,
}

impl GmmParams {
    pub fn new(bases: Matrix, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        if !bases.is_finite() {
            return Err(Error::Config("bases contain non-finite values".into()));
        }
        Ok(Self { bases, temperature })
    }

    pub fn num_components(&self) -> usize {
        self.bases.rows()
    }
}

/// Row-stochastic N×K attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub gamma: Matrix,
}

impl Responsibilities {
    /// Wraps `gamma` after checking that every row is a probability vector
    /// (tolerance 1e-9).
    pub fn new(gamma: Matrix) -> Result<Self> {
        for r in 0..gamma.rows() {
            let row = gamma.row(r);
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 || row.iter().any(|&v| !(0.0..=1.0 + 1e-12).contains(&v)) {
                return Err(Error::Data(format!("row {r} of responsibilities is not a probability vector")));
            }
        }
        Ok(Self { gamma })
    }

    /// Per-component total mass `N_k = Σ_n γ_nk`.
    pub fn component_mass(&self) -> Vec<f64> {
        self.gamma.col_sums()
    }
}

/// ELBO split into expected complete log-likelihood and entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboValue {
    pub expected_complete_ll: f64,
    pub entropy: f64,
    pub total: f64,
}

fn check_cols(x: &Matrix, bases: &Matrix, op: &'static str) -> Result<()> {
    if x.cols() != bases.cols() {
        return Err(shape_err(
            op,
            format!("feature dim {}", bases.cols()),
            format!("feature dim {}", x.cols()),
        ));
    }
    Ok(())
}

/// Unnormalized E-step logits for the given kernel.
pub fn e_step_logits(x: &Matrix, params: &GmmParams, kernel: Kernel) -> Result<Matrix> {
    check_cols(x, &params.bases, "e_step")?;
    let inv_t = 1.0 / params.temperature;
    Ok(match kernel {
        Kernel::Rbf => squared_distances(x, &params.bases)?.scale(-inv_t),
        Kernel::Dot => matmul_nt(x, &params.bases)?.scale(inv_t),
    })
}

pub fn e_step(x: &Matrix, params: &GmmParams, kernel: Kernel) -> Result<Responsibilities> {
    let logits = e_step_logits(x, params, kernel)?;
    Ok(Responsibilities {
        gamma: softmax_rows(&logits),
    })
}

/// M-step that reports dead components instead of failing.
///
/// Rows of the returned bases belonging to components listed in the second
/// value are left at zero; the caller decides how to refill them.
pub fn m_step_masked(gamma: &Responsibilities, x: &Matrix) -> Result<(Matrix, Vec<usize>)> {
    if gamma.gamma.rows() != x.rows() {
        return Err(shape_err(
            "m_step",
            format!("{} responsibility rows", x.rows()),
            format!("{}", gamma.gamma.rows()),
        ));
    }
    let mass = gamma.component_mass();
    let mut weighted = matmul_tn(&gamma.gamma, x)?;
    let mut dead = Vec::new();
    for (k, &nk) in mass.iter().enumerate() {
        let row = weighted.row_mut(k);
        if nk < DEGENERATE_MASS {
            dead.push(k);
            row.fill(0.0);
        } else {
            for v in row.iter_mut() {
                *v /= nk;
            }
        }
    }
    Ok((weighted, dead))
}

/// Closed-form M-step: responsibility-weighted mean of the inputs.
pub fn m_step(gamma: &Responsibilities, x: &Matrix) -> Result<Matrix> {
    let (mu, dead) = m_step_masked(gamma, x)?;
    if let Some(&k) = dead.first() {
        return Err(Error::DegenerateComponent {
            k,
            mass: gamma.component_mass()[k],
        });
    }
    Ok(mu)
}

/// Newton step on Q: `(1-η)·μ_old + η·μ_em`.
pub fn n_step(mu_old: &Matrix, mu_em: &Matrix, eta: f64) -> Result<Matrix> {
    mu_old.expect_same_shape(mu_em, "n_step")?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("step size must lie in [0, 1], got {eta}")));
    }
    if eta == 1.0 {
        return Ok(mu_em.clone());
    }
    if eta == 0.0 {
        return Ok(mu_old.clone());
    }
    let keep = 1.0 - eta;
    let data = mu_old
        .as_slice()
        .iter()
        .zip(mu_em.as_slice())
        .map(|(&a, &b)| keep * a + eta * b)
        .collect();
    Matrix::new(mu_old.rows(), mu_old.cols(), data)
}

/// Reconstruction `X̃ = γ·μ`.
pub fn r_step(gamma: &Responsibilities, mu: &Matrix) -> Result<Matrix> {
    if gamma.gamma.cols() != mu.rows() {
        return Err(shape_err(
            "r_step",
            format!("{} components", mu.rows()),
            format!("{}", gamma.gamma.cols()),
        ));
    }
    matmul(&gamma.gamma, mu)
}

/// `ln N(x_n | μ_k)` for every pair, N×K.
pub fn log_density(x: &Matrix, params: &GmmParams) -> Result<Matrix> {
    check_cols(x, &params.bases, "log_density")?;
    let c = x.cols() as f64;
    let norm = -0.5 * c * (PI * params.temperature).ln();
    let inv_t = 1.0 / params.temperature;
    Ok(squared_distances(x, &params.bases)?.map(|d| norm - d * inv_t))
}

pub fn elbo(x: &Matrix, params: &GmmParams, gamma: &Responsibilities) -> Result<ElboValue> {
    let logp = log_density(x, params)?;
    gamma.gamma.expect_same_shape(&logp, "elbo")?;
    let mut q = 0.0;
    let mut h = 0.0;
    for (&g, &lp) in gamma.gamma.as_slice().iter().zip(logp.as_slice()) {
        if g > ENTROPY_FLOOR {
            q += g * lp;
            h -= g * g.ln();
        }
    }
    Ok(ElboValue {
        expected_complete_ll: q,
        entropy: h,
        total: q + h,
    })
}

/// Mixture log-likelihood with uniform implicit weights: `Σ_n ln Σ_k N(x_n | μ_k)`.
pub fn log_likelihood(x: &Matrix, params: &GmmParams) -> Result<f64> {
    Ok(logsumexp_rows(&log_density(x, params)?).into_iter().sum())
}
