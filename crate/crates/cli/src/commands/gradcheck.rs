//! Self-contained correctness suites: finite-difference oracles for the
//! backward passes, the skip-gradient law and its per-point structure, the
//! unit-step reduction to classic EM, and ELBO monotonicity.

use std::path::{Path, PathBuf};

use hemnet_core::backprop::{
    finite_diff, hem_backward, hem_backward_with_hooks, relative_error_joint, BackwardHooks, GradMode, FD_EPS,
};
use hemnet_core::gmm::Kernel;
use hemnet_core::model::{cross_entropy, model_backward, model_forward, ModelConfig, ToyModelParams};
use hemnet_core::numerics::Matrix;
use hemnet_core::stack::{hem_forward, BasisNorm, BasisState, HemConfig, Temperature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::commands::prepare_out_dir;
use crate::config::{Command, GradcheckSection, RunConfig};
use crate::error::{CliError, CliResult};

pub const SKIP_LAW_TOL: f64 = 1e-12;
pub const SKIP_STRUCTURE_TOL: f64 = 1e-10;
pub const ELBO_SLACK: f64 = 1e-9;
pub const MOVE_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn failures(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.to_string()).collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, half: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-half..=half))
}

fn hem_cfg(t: usize, eta: f64, kernel: Kernel, temperature: f64) -> HemConfig {
    HemConfig {
        t_train: t,
        t_eval: t,
        step_size: eta,
        temperature: Temperature::Fixed(temperature),
        kernel,
        normalize_bases: BasisNorm::None,
        ..HemConfig::default()
    }
}

struct Instance {
    x: Matrix,
    state: BasisState,
    cfg: HemConfig,
    upstream: Matrix,
}

/// Random instance without dead components, so the map is smooth.
fn instance(rng: &mut ChaCha8Rng, max: (usize, usize, usize, usize), eta: f64, kernel: Kernel) -> Instance {
    loop {
        let n = rng.random_range(2..=max.0);
        let k = rng.random_range(1..=max.1);
        let c = rng.random_range(1..=max.2);
        let t = rng.random_range(1..=max.3);
        let temperature = rng.random_range(0.5..2.0);
        let inst = Instance {
            x: uniform(rng, n, c, 1.0),
            state: BasisState {
                running_mu: uniform(rng, k, c, 1.0),
            },
            cfg: hem_cfg(t, eta, kernel, temperature),
            upstream: uniform(rng, n, c, 1.0),
        };
        let trace = hem_forward(&inst.x, &inst.state, &inst.cfg, None).expect("valid instance");
        if trace.reinit_events.is_empty() {
            return inst;
        }
    }
}

fn weighted_output(x: &Matrix, state: &BasisState, cfg: &HemConfig, w: &Matrix) -> f64 {
    let tr = hem_forward(x, state, cfg, None).expect("valid instance");
    tr.reconstruction.hadamard(w).expect("same shape").sum()
}

fn check(name: &'static str, instances: usize, max_error: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name,
        instances,
        max_error,
        tolerance,
        passed: max_error.is_finite() && max_error <= tolerance,
    }
}

/// Exact backward against central differences, for inputs and initial bases.
pub fn hem_oracle(rng: &mut ChaCha8Rng, count: usize, tol: f64) -> CliResult<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let kernel = if i % 2 == 0 { Kernel::Rbf } else { Kernel::Dot };
        let eta = if (i / 2) % 2 == 0 { 0.3 } else { 1.0 };
        let inst = instance(rng, (16, 4, 5, 4), eta, kernel);
        let trace = hem_forward(&inst.x, &inst.state, &inst.cfg, None)?;
        let g = hem_backward(&trace, &inst.x, &inst.cfg, &inst.upstream, GradMode::Exact)?;
        let num_x = finite_diff(|m| weighted_output(m, &inst.state, &inst.cfg, &inst.upstream), &inst.x, FD_EPS)?;
        let num_mu = finite_diff(
            |m| {
                let s = BasisState { running_mu: m.clone() };
                weighted_output(&inst.x, &s, &inst.cfg, &inst.upstream)
            },
            &inst.state.running_mu,
            FD_EPS,
        )?;
        worst = worst.max(relative_error_joint(&[(&g.grad_x, &num_x), (&g.grad_mu0, &num_mu)])?);
    }
    Ok(check("hem-backward-oracle", count, worst, tol))
}

/// Full-model parameter gradients against central differences.
pub fn model_oracle(rng: &mut ChaCha8Rng, count: usize, tol: f64) -> CliResult<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let kernel = if i % 2 == 0 { Kernel::Rbf } else { Kernel::Dot };
        let eta = if (i / 2) % 2 == 0 { 0.3 } else { 1.0 };
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=4);
        let c = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let l = rng.random_range(2..=3);
        let t = rng.random_range(1..=3);
        let mcfg = ModelConfig {
            channels: c,
            num_bases: k,
            hidden: if i % 3 == 0 { Some(3) } else { None },
            use_hem: true,
            backbone_init_gain: 1.0,
        };
        let mut params = ToyModelParams::init(d, l, &mcfg, rng.random())?;
        for p in params.tensors_mut() {
            for v in p.as_mut_slice() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let raw = uniform(rng, n, d, 1.0);
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..l as u32)).collect();
        let state = BasisState {
            running_mu: uniform(rng, k, c, 1.0),
        };
        let cfg = hem_cfg(t, eta, kernel, rng.random_range(0.5..2.0));
        let fwd = model_forward(&raw, &params, &state, &cfg, true, None)?;
        if !fwd.trace.as_ref().is_some_and(|tr| tr.reinit_events.is_empty()) {
            continue;
        }
        let (_, g_logits) = cross_entropy(&fwd.logits, &labels)?;
        let grads = model_backward(&raw, &params, &fwd, &cfg, &g_logits)?;
        let mut numeric = Vec::new();
        for idx in 0..params.tensors().len() {
            let point = params.tensors()[idx].clone();
            let num = finite_diff(
                |m| {
                    let mut p = params.clone();
                    *p.tensors_mut()[idx] = m.clone();
                    let f = model_forward(&raw, &p, &state, &cfg, true, None).expect("valid instance");
                    cross_entropy(&f.logits, &labels).expect("valid labels").0
                },
                &point,
                FD_EPS,
            )?;
            numeric.push(num);
        }
        let pairs: Vec<_> = grads.params.tensors().into_iter().zip(&numeric).collect();
        worst = worst.max(relative_error_joint(&pairs)?);
    }
    Ok(check("model-backward-oracle", count, worst, tol))
}

const SKIP_ETAS: [f64; 4] = [0.3, 0.5, 0.75, 1.0];

/// Skip-only gradients follow `(1-η)^(T-t)` times the last layer's, and at
/// η=1 vanish exactly before the last layer.
pub fn skip_law(rng: &mut ChaCha8Rng, count: usize, hooks: BackwardHooks) -> CliResult<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let eta = SKIP_ETAS[i % SKIP_ETAS.len()];
        let kernel = if i % 2 == 0 { Kernel::Rbf } else { Kernel::Dot };
        let inst = instance(rng, (16, 4, 5, 6), eta, kernel);
        let trace = hem_forward(&inst.x, &inst.state, &inst.cfg, None)?;
        let g = hem_backward_with_hooks(&trace, &inst.x, &inst.cfg, &inst.upstream, GradMode::SkipOnly, hooks)?;
        let t_max = trace.num_layers();
        let last = &g.per_layer_grad_mu[t_max - 1];
        let scale = last.max_abs().max(1.0);
        for t in 1..=t_max {
            let got = &g.per_layer_grad_mu[t - 1];
            let err = if eta == 1.0 && t < t_max {
                // Exact zero required, not just small.
                if got.max_abs() == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                let want = last.scale((1.0 - eta).powi((t_max - t) as i32));
                got.max_abs_diff(&want)? / scale
            };
            worst = worst.max(err);
        }
    }
    Ok(check("skip-law", count, worst, SKIP_LAW_TOL))
}

/// Skip-only per-layer input gradients against the closed form
/// `Σ_k (1-η)^(T-t) · g_T[k] · η γ_nk / N_k`, computed with plain loops.
pub fn skip_structure(rng: &mut ChaCha8Rng, count: usize, hooks: BackwardHooks) -> CliResult<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let eta = SKIP_ETAS[i % SKIP_ETAS.len()];
        let kernel = if i % 2 == 0 { Kernel::Rbf } else { Kernel::Dot };
        let inst = instance(rng, (16, 4, 5, 6), eta, kernel);
        let trace = hem_forward(&inst.x, &inst.state, &inst.cfg, None)?;
        let g = hem_backward_with_hooks(&trace, &inst.x, &inst.cfg, &inst.upstream, GradMode::SkipOnly, hooks)?;
        let t_max = trace.num_layers();

        // ∂E/∂μ^(T): the reconstruction's direct dependence, γ^(T)ᵀ·upstream.
        let gamma_t = &trace.gamma_per_layer[t_max - 1].gamma;
        let (n, k, c) = (inst.x.rows(), gamma_t.cols(), inst.x.cols());
        let mut g_last = vec![vec![0.0; c]; k];
        for (kk, row) in g_last.iter_mut().enumerate() {
            for (cc, v) in row.iter_mut().enumerate() {
                *v = (0..n).map(|nn| gamma_t.get(nn, kk) * inst.upstream.get(nn, cc)).sum();
            }
        }
        let scale = g_last.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        for t in 1..=t_max {
            let gamma = &trace.gamma_per_layer[t - 1].gamma;
            let mass: Vec<f64> = (0..k).map(|kk| (0..n).map(|nn| gamma.get(nn, kk)).sum()).collect();
            let decay = (1.0 - eta).powi((t_max - t) as i32);
            let got = &g.per_layer_grad_x_contrib[t - 1];
            for nn in 0..n {
                for cc in 0..c {
                    let want: f64 = (0..k)
                        .map(|kk| decay * g_last[kk][cc] * eta * gamma.get(nn, kk) / mass[kk])
                        .sum();
                    worst = worst.max((got.get(nn, cc) - want).abs() / scale);
                }
            }
        }
    }
    Ok(check("skip-structure", count, worst, SKIP_STRUCTURE_TOL))
}

/// Classic RBF EM written with plain vectors, mirroring the library's
/// summation order so results can be compared bit for bit.
pub fn classic_em(x: &[Vec<f64>], mu0: &[Vec<f64>], temperature: f64, iters: usize) -> Vec<Vec<Vec<f64>>> {
    let inv_t = 1.0 / temperature;
    let mut mu = mu0.to_vec();
    let mut out = vec![mu.clone()];
    for _ in 0..iters {
        let gamma: Vec<Vec<f64>> = x
            .iter()
            .map(|xn| {
                let logits: Vec<f64> = mu
                    .iter()
                    .map(|mk| {
                        let d: f64 = xn.iter().zip(mk).map(|(a, b)| (a - b) * (a - b)).sum();
                        d * -inv_t
                    })
                    .collect();
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = e.iter().fold(0.0, |s, v| s + v);
                e.iter().map(|v| v / total).collect()
            })
            .collect();
        let k = mu.len();
        let c = x[0].len();
        let mut next = vec![vec![0.0; c]; k];
        let mut mass = vec![0.0; k];
        for (xn, gn) in x.iter().zip(&gamma) {
            for kk in 0..k {
                mass[kk] += gn[kk];
                for cc in 0..c {
                    next[kk][cc] += gn[kk] * xn[cc];
                }
            }
        }
        for (row, m) in next.iter_mut().zip(&mass) {
            for v in row.iter_mut() {
                *v /= m;
            }
        }
        mu = next;
        out.push(mu.clone());
    }
    out
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Unit step size reproduces classic EM bit for bit.
pub fn unit_step_reduction(rng: &mut ChaCha8Rng, count: usize) -> CliResult<CheckResult> {
    let mut mismatches = 0usize;
    for _ in 0..count {
        let inst = instance(rng, (64, 6, 8, 16), 1.0, Kernel::Rbf);
        let trace = hem_forward(&inst.x, &inst.state, &inst.cfg, None)?;
        let temperature = inst.cfg.temperature.resolve(inst.x.cols());
        let reference = classic_em(
            &to_rows(&inst.x),
            &to_rows(&inst.state.running_mu),
            temperature,
            trace.num_layers(),
        );
        let same = trace.mu_per_layer.iter().zip(&reference).all(|(m, r)| {
            m.as_slice()
                .iter()
                .zip(r.iter().flatten())
                .all(|(a, b)| a.to_bits() == b.to_bits())
        });
        if !same {
            mismatches += 1;
        }
    }
    Ok(check("unit-step-reduction", count, mismatches as f64, 0.0))
}

const ELBO_ETAS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 1.0];

/// Per-layer ELBO never decreases (RBF) and rises whenever the bases move.
pub fn elbo_monotonicity(rng: &mut ChaCha8Rng, count: usize) -> CliResult<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let eta = ELBO_ETAS[i % ELBO_ETAS.len()];
        let n = rng.random_range(2..=256);
        let k = rng.random_range(1..=8);
        let c = rng.random_range(1..=16);
        let t = rng.random_range(2..=8);
        let x = uniform(rng, n, c, 2.0);
        let state = BasisState {
            running_mu: uniform(rng, k, c, 2.0),
        };
        let cfg = hem_cfg(t, eta, Kernel::Rbf, rng.random_range(0.25..4.0));
        let trace = hem_forward(&x, &state, &cfg, None)?;
        let elbo = trace.elbo_totals();
        for w in 1..elbo.len() {
            let drop = elbo[w - 1] - elbo[w];
            let moved = trace.mu_per_layer[w + 1].max_abs_diff(&trace.mu_per_layer[w])? >= MOVE_THRESHOLD;
            let violation = if drop > ELBO_SLACK {
                drop
            } else if moved && elbo[w] <= elbo[w - 1] {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(violation);
        }
    }
    Ok(check("elbo-monotonicity", count, worst, ELBO_SLACK))
}

pub fn run_suites(g: &GradcheckSection, seed: u64) -> CliResult<GradcheckReport> {
    let hooks = BackwardHooks {
        flip_skip_sign: g.inject_fault,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = vec![
        hem_oracle(&mut rng, g.instances, g.tolerance)?,
        model_oracle(&mut rng, g.model_instances, g.tolerance)?,
        skip_law(&mut rng, g.skip_instances, hooks)?,
        skip_structure(&mut rng, g.skip_instances, hooks)?,
        unit_step_reduction(&mut rng, g.reduction_instances)?,
        elbo_monotonicity(&mut rng, g.elbo_instances)?,
    ];
    Ok(GradcheckReport { seed, checks })
}

pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate(Command::Gradcheck)?;
    let config_path = prepare_out_dir(out, cfg)?;
    let report = run_suites(&cfg.gradcheck, cfg.seed()?)?;
    for c in &report.checks {
        eprintln!(
            "{} {:<24} instances={:<4} max_err={:.3e} tol={:.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.instances,
            c.max_error,
            c.tolerance
        );
    }
    let path = out.join("gradcheck.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(&path, text + "\n")?;
    let failures = report.failures();
    if !failures.is_empty() {
        return Err(CliError::Check { failures });
    }
    Ok(vec![path, config_path])
}
