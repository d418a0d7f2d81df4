//! Reverse-mode gradients through the unrolled HEM stack.
//!
//! Each step has a hand-written vector-Jacobian product; [`hem_backward`]
//! chains them from the R-step down to μ⁽⁰⁾. In [`GradMode::SkipOnly`] the
//! path through the responsibilities is cut, which leaves only the highway
//! term `(1-η)^(T-t)·∂E/∂μ⁽ᵀ⁾` on the bases and the direct M-step term on X.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::gmm::{m_step_masked, Kernel, Responsibilities, DEGENERATE_MASS};
use crate::numerics::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::stack::{HemConfig, HemTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// Both the N-step and the E-step paths.
    Exact,
    /// Gradients through γ dropped.
    SkipOnly,
}

/// Output of [`hem_backward`]. Per-layer vectors are indexed `t - 1` for t = 1..T.
#[derive(Debug, Clone, PartialEq)]
pub struct HemGradients {
    pub grad_x: Matrix,
    pub grad_mu0: Matrix,
    /// Total ∂E/∂μ⁽ᵗ⁾.
    pub per_layer_grad_mu: Vec<Matrix>,
    /// Layer-t share of ∂E/∂X; these sum to `grad_x`.
    pub per_layer_grad_x_contrib: Vec<Matrix>,
}

/// Fault injection for exercising the gradient checks. Not for normal use.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BackwardHooks {
    /// Negate the skip-connection term of the N-step VJP.
    pub flip_skip_sign: bool,
}

/// Backward through `γ = softmax(logits(x, μ) / σ²)`.
///
/// Returns `(∂E/∂x, ∂E/∂μ)` given `∂E/∂γ`.
pub fn vjp_e_step(
    x: &Matrix,
    mu: &Matrix,
    sigma2: f64,
    kernel: Kernel,
    gamma: &Responsibilities,
    upstream_gamma: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let (n, k) = gamma.gamma.shape();
    if x.cols() != mu.cols() || x.rows() != n || mu.rows() != k {
        return Err(shape_err(
            "vjp_e_step",
            format!("x {}x{}, mu {}x{}", n, mu.cols(), k, mu.cols()),
            format!("x {}x{}, mu {}x{}", x.rows(), x.cols(), mu.rows(), mu.cols()),
        ));
    }
    upstream_gamma.expect_same_shape(&gamma.gamma, "vjp_e_step")?;

    // Softmax VJP, row by row: (g - <g, γ>)·γ.
    let mut g_logits = Matrix::zeros(n, k);
    for r in 0..n {
        let gr = gamma.gamma.row(r);
        let ur = upstream_gamma.row(r);
        let inner: f64 = gr.iter().zip(ur).map(|(a, b)| a * b).sum();
        for ((o, &g), &u) in g_logits.row_mut(r).iter_mut().zip(gr).zip(ur) {
            *o = (u - inner) * g;
        }
    }

    let inv_t = 1.0 / sigma2;
    match kernel {
        Kernel::Dot => {
            let gx = matmul(&g_logits, mu)?.scale(inv_t);
            let gmu = matmul_tn(&g_logits, x)?.scale(inv_t);
            Ok((gx, gmu))
        }
        Kernel::Rbf => {
            // logits = -‖x_n - μ_k‖²/σ²
            // ∂/∂x_n = -2/σ² Σ_k g_nk (x_n - μ_k),  ∂/∂μ_k = 2/σ² Σ_n g_nk (x_n - μ_k)
            let row_mass = g_logits.row_sums();
            let col_mass = g_logits.col_sums();
            let g_mu_part = matmul(&g_logits, mu)?;
            let mut gx = Matrix::zeros(n, x.cols());
            for r in 0..n {
                for ((o, &xv), &gm) in gx.row_mut(r).iter_mut().zip(x.row(r)).zip(g_mu_part.row(r)) {
                    *o = -2.0 * inv_t * (xv * row_mass[r] - gm);
                }
            }
            let gtx = matmul_tn(&g_logits, x)?;
            let mut gmu = Matrix::zeros(k, mu.cols());
            for j in 0..k {
                for ((o, &a), &m) in gmu.row_mut(j).iter_mut().zip(gtx.row(j)).zip(mu.row(j)) {
                    *o = 2.0 * inv_t * (a - m * col_mass[j]);
                }
            }
            Ok((gx, gmu))
        }
    }
}

/// Backward through `μ_k = Σ_n γ_nk x_n / N_k`, including the dependence of
/// `N_k` on γ. Returns `(∂E/∂γ, ∂E/∂x)`.
///
/// Components whose mass is below the degeneracy floor receive no gradient.
pub fn vjp_m_step(gamma: &Responsibilities, x: &Matrix, upstream_mu_em: &Matrix) -> Result<(Matrix, Matrix)> {
    let (n, k) = gamma.gamma.shape();
    if x.rows() != n {
        return Err(shape_err("vjp_m_step", format!("{n} rows in x"), format!("{}", x.rows())));
    }
    upstream_mu_em.expect_shape(k, x.cols(), "vjp_m_step")?;
    let mass = gamma.component_mass();
    let (mu_em, _) = m_step_masked(gamma, x)?;

    let mut scaled = upstream_mu_em.clone();
    let mut offset = vec![0.0; k];
    for j in 0..k {
        let row = scaled.row_mut(j);
        if mass[j] < DEGENERATE_MASS {
            row.fill(0.0);
            continue;
        }
        for v in row.iter_mut() {
            *v /= mass[j];
        }
        offset[j] = row.iter().zip(mu_em.row(j)).map(|(a, b)| a * b).sum();
    }
    // ∂E/∂γ_nk = (x_n · g_k - g_k · μ_k) / N_k
    let mut g_gamma = matmul_nt(x, &scaled)?;
    for r in 0..n {
        for (o, off) in g_gamma.row_mut(r).iter_mut().zip(&offset) {
            *o -= off;
        }
    }
    let g_x = matmul(&gamma.gamma, &scaled)?;
    Ok((g_gamma, g_x))
}

/// Returns `(∂E/∂μ_old, ∂E/∂μ_em)` for the blend `(1-η)μ_old + ημ_em`.
pub fn vjp_n_step(upstream_mu_new: &Matrix, eta: f64) -> (Matrix, Matrix) {
    (upstream_mu_new.scale(1.0 - eta), upstream_mu_new.scale(eta))
}

/// Returns `(∂E/∂γ, ∂E/∂μ)` for `X̃ = γμ`.
pub fn vjp_r_step(gamma: &Responsibilities, mu: &Matrix, upstream_xtilde: &Matrix) -> Result<(Matrix, Matrix)> {
    upstream_xtilde.expect_shape(gamma.gamma.rows(), mu.cols(), "vjp_r_step")?;
    if gamma.gamma.cols() != mu.rows() {
        return Err(shape_err(
            "vjp_r_step",
            format!("{} components", mu.rows()),
            format!("{}", gamma.gamma.cols()),
        ));
    }
    Ok((matmul_nt(upstream_xtilde, mu)?, matmul_tn(&gamma.gamma, upstream_xtilde)?))
}

fn check_trace(trace: &HemTrace, x: &Matrix, cfg: &HemConfig, upstream: &Matrix) -> Result<()> {
    let t = trace.num_layers();
    if t == 0
        || trace.mu_per_layer.len() != t + 1
        || trace.f_em_per_layer.len() != t
        || trace.elbo_per_layer.len() != t
    {
        return Err(Error::Consistency("trace layer lists have inconsistent lengths".into()));
    }
    if trace.gamma_per_layer[0].gamma.rows() != x.rows() || trace.mu_per_layer[0].cols() != x.cols() {
        return Err(Error::Consistency(format!(
            "trace was recorded for different inputs than the {}x{} features given",
            x.rows(),
            x.cols()
        )));
    }
    if upstream.shape() != trace.reconstruction.shape() {
        return Err(Error::Consistency(format!(
            "upstream gradient is {}x{} but the reconstruction is {}x{}",
            upstream.rows(),
            upstream.cols(),
            trace.reconstruction.rows(),
            trace.reconstruction.cols()
        )));
    }
    if cfg.step_size != trace.step_size
        || cfg.kernel != trace.kernel
        || cfg.temperature.resolve(x.cols()) != trace.temperature
    {
        return Err(Error::Consistency("configuration does not match the one used for the trace".into()));
    }
    Ok(())
}

/// Reverse sweep through a recorded forward pass.
pub fn hem_backward(
    trace: &HemTrace,
    x: &Matrix,
    cfg: &HemConfig,
    upstream_xtilde: &Matrix,
    mode: GradMode,
) -> Result<HemGradients> {
    hem_backward_with_hooks(trace, x, cfg, upstream_xtilde, mode, BackwardHooks::default())
}

#[doc(hidden)]
pub fn hem_backward_with_hooks(
    trace: &HemTrace,
    x: &Matrix,
    cfg: &HemConfig,
    upstream_xtilde: &Matrix,
    mode: GradMode,
    hooks: BackwardHooks,
) -> Result<HemGradients> {
    check_trace(trace, x, cfg, upstream_xtilde)?;
    let layers = trace.num_layers();
    let eta = trace.step_size;

    let (g_gamma_r, mut g_mu) = vjp_r_step(&trace.gamma_per_layer[layers - 1], &trace.mu_per_layer[layers], upstream_xtilde)?;

    let mut per_layer_grad_mu = vec![Matrix::zeros(0, 0); layers];
    let mut per_layer_grad_x_contrib = vec![Matrix::zeros(0, 0); layers];

    for t in (1..=layers).rev() {
        per_layer_grad_mu[t - 1] = g_mu.clone();
        let gamma = &trace.gamma_per_layer[t - 1];
        let mu_prev = &trace.mu_per_layer[t - 1];

        let (mut g_skip, mut g_em) = vjp_n_step(&g_mu, eta);
        if hooks.flip_skip_sign {
            g_skip = g_skip.scale(-1.0);
        }
        // Refilled components are constants: no gradient flows into them.
        for ev in trace.reinit_events.iter().filter(|e| e.layer == t) {
            g_em.row_mut(ev.component).fill(0.0);
        }
        let (g_gamma_m, g_x_m) = vjp_m_step(gamma, x, &g_em)?;

        match mode {
            GradMode::SkipOnly => {
                per_layer_grad_x_contrib[t - 1] = g_x_m;
                g_mu = g_skip;
            }
            GradMode::Exact => {
                let mut g_gamma = g_gamma_m;
                if t == layers {
                    g_gamma.add_assign(&g_gamma_r)?;
                }
                let (g_x_e, g_mu_e) = vjp_e_step(x, mu_prev, trace.temperature, trace.kernel, gamma, &g_gamma)?;
                per_layer_grad_x_contrib[t - 1] = g_x_m.add(&g_x_e)?;
                g_mu = g_skip.add(&g_mu_e)?;
            }
        }
    }

    let mut grad_x = Matrix::zeros(x.rows(), x.cols());
    for contrib in &per_layer_grad_x_contrib {
        grad_x.add_assign(contrib)?;
    }
    Ok(HemGradients {
        grad_x,
        grad_mu0: g_mu,
        per_layer_grad_mu,
        per_layer_grad_x_contrib,
    })
}

/// Default central-difference step.
pub const FD_EPS: f64 = 1e-5;

/// Central-difference gradient of `loss_fn` at `point`.
pub fn finite_diff(mut loss_fn: impl FnMut(&Matrix) -> f64, point: &Matrix, eps: f64) -> Result<Matrix> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut probe = point.clone();
    let mut grad = Matrix::zeros(point.rows(), point.cols());
    for i in 0..point.len() {
        let orig = point.as_slice()[i];
        probe.as_mut_slice()[i] = orig + eps;
        let plus = loss_fn(&probe);
        probe.as_mut_slice()[i] = orig - eps;
        let minus = loss_fn(&probe);
        probe.as_mut_slice()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle { index: i });
        }
        grad.as_mut_slice()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// `max |a - b| / max(max|a|, max|b|, 1e-8)`.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> Result<f64> {
    relative_error_joint(&[(analytic, numeric)])
}

/// [`relative_error`] over several gradient blocks treated as one vector,
/// so a block whose true gradient is near zero is judged against the scale
/// of the whole gradient rather than against finite-difference roundoff.
pub fn relative_error_joint(pairs: &[(&Matrix, &Matrix)]) -> Result<f64> {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 1e-8;
    for (a, n) in pairs {
        diff = diff.max(a.max_abs_diff(n)?);
        scale = scale.max(a.max_abs()).max(n.max_abs());
    }
    Ok(diff / scale)
}
