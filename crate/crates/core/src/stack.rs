//! The unrolled Highway-EM network: `T` layers of (E-step, N-step) followed
//! by one R-step, plus the running initial bases shared across batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::gmm::{e_step, elbo, m_step_masked, n_step, r_step, ElboValue, GmmParams, Kernel, Responsibilities};
use crate::numerics::Matrix;

/// Softmax temperature σ², either fixed or `√C` resolved at run time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemperatureRepr", into = "TemperatureRepr")]
pub enum Temperature {
    Fixed(f64),
    AutoSqrtC,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TemperatureRepr {
    Value(f64),
    Word(String),
}

impl TryFrom<TemperatureRepr> for Temperature {
    type Error = String;

    fn try_from(r: TemperatureRepr) -> std::result::Result<Self, String> {
        match r {
            TemperatureRepr::Value(v) => Ok(Temperature::Fixed(v)),
            TemperatureRepr::Word(w) if w.eq_ignore_ascii_case("auto") => Ok(Temperature::AutoSqrtC),
            TemperatureRepr::Word(w) => Err(format!("temperature must be a number or \"auto\", got `{w}`")),
        }
    }
}

impl From<Temperature> for TemperatureRepr {
    fn from(t: Temperature) -> Self {
        match t {
            Temperature::Fixed(v) => TemperatureRepr::Value(v),
            Temperature::AutoSqrtC => TemperatureRepr::Word("auto".into()),
        }
    }
}

impl Temperature {
    pub fn resolve(self, channels: usize) -> f64 {
        match self {
            Temperature::Fixed(v) => v,
            Temperature::AutoSqrtC => (channels as f64).sqrt(),
        }
    }
}

/// Row normalization applied to the initial bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisNorm {
    None,
    L2Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HemConfig {
    pub t_train: usize,
    pub t_eval: usize,
    pub step_size: f64,
    pub temperature: Temperature,
    pub kernel: Kernel,
    pub momentum: f64,
    pub normalize_bases: BasisNorm,
    /// Seed for refilling dead components during the forward pass.
    pub reinit_seed: u64,
}

impl Default for HemConfig {
    fn default() -> Self {
        Self {
            t_train: 3,
            t_eval: 3,
            step_size: 0.5,
            temperature: Temperature::AutoSqrtC,
            kernel: Kernel::Rbf,
            momentum: 0.9,
            normalize_bases: BasisNorm::L2Rows,
            reinit_seed: 0,
        }
    }
}

impl HemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_train == 0 || self.t_eval == 0 {
            return Err(Error::Config("layer counts must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::Config(format!("step_size must lie in (0, 1], got {}", self.step_size)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if let Temperature::Fixed(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("temperature must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

/// A dead component refilled during the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReinitEvent {
    /// Layer index, 1-based.
    pub layer: usize,
    pub component: usize,
    /// Input row the new basis was copied from.
    pub source_row: usize,
}

/// Everything the forward pass computed, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HemTrace {
    /// μ⁽⁰⁾ … μ⁽ᵀ⁾.
    pub mu_per_layer: Vec<Matrix>,
    /// γ⁽¹⁾ … γ⁽ᵀ⁾.
    pub gamma_per_layer: Vec<Responsibilities>,
    /// M-step output of each layer, before blending.
    pub f_em_per_layer: Vec<Matrix>,
    /// ELBO at (μ⁽ᵗ⁾, γ⁽ᵗ⁾) for t = 1..T.
    pub elbo_per_layer: Vec<ElboValue>,
    pub reconstruction: Matrix,
    pub reinit_events: Vec<ReinitEvent>,
    pub step_size: f64,
    pub temperature: f64,
    pub kernel: Kernel,
}

impl HemTrace {
    pub fn num_layers(&self) -> usize {
        self.gamma_per_layer.len()
    }

    pub fn final_mu(&self) -> &Matrix {
        self.mu_per_layer.last().expect("trace has at least μ⁽⁰⁾")
    }

    pub fn final_elbo(&self) -> f64 {
        self.elbo_per_layer.last().map_or(f64::NAN, |e| e.total)
    }

    pub fn elbo_totals(&self) -> Vec<f64> {
        self.elbo_per_layer.iter().map(|e| e.total).collect()
    }
}

/// Initial bases μ⁽⁰⁾ maintained across batches.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisState {
    pub running_mu: Matrix,
}

fn normalize_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
}

/// Uniform Glorot-range bases, optionally unit-normalized per row.
pub fn init_bases(k: usize, c: usize, seed: u64, normalize: BasisNorm) -> Result<BasisState> {
    if k == 0 || c == 0 {
        return Err(Error::Config(format!("bases need k >= 1 and c >= 1, got {k}x{c}")));
    }
    let bound = (6.0 / (k + c) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mu = Matrix::from_fn(k, c, |_, _| rng.random_range(-bound..=bound));
    if normalize == BasisNorm::L2Rows {
        normalize_rows(&mut mu);
    }
    Ok(BasisState { running_mu: mu })
}

/// `running ← α·running + (1-α)·batch`, then optional row normalization.
pub fn moving_average_update(
    state: &BasisState,
    mu_final_batch: &Matrix,
    momentum: f64,
    normalize: BasisNorm,
) -> Result<BasisState> {
    state.running_mu.expect_same_shape(mu_final_batch, "moving_average_update")?;
    let keep = 1.0 - momentum;
    let data = state
        .running_mu
        .as_slice()
        .iter()
        .zip(mu_final_batch.as_slice())
        .map(|(&r, &b)| momentum * r + keep * b)
        .collect();
    let mut mu = Matrix::new(mu_final_batch.rows(), mu_final_batch.cols(), data)?;
    if normalize == BasisNorm::L2Rows {
        normalize_rows(&mut mu);
    }
    Ok(BasisState { running_mu: mu })
}

/// Runs `t_override.unwrap_or(cfg.t_train)` HEM layers and the final R-step.
pub fn hem_forward(x: &Matrix, state: &BasisState, cfg: &HemConfig, t_override: Option<usize>) -> Result<HemTrace> {
    cfg.validate()?;
    let mu0 = &state.running_mu;
    if x.cols() != mu0.cols() {
        return Err(shape_err(
            "hem_forward",
            format!("feature dim {}", mu0.cols()),
            format!("feature dim {}", x.cols()),
        ));
    }
    let layers = t_override.unwrap_or(cfg.t_train);
    if layers == 0 {
        return Err(Error::Config("layer count must be at least 1".into()));
    }
    let temperature = cfg.temperature.resolve(x.cols());
    let eta = cfg.step_size;

    let mut mu_per_layer = Vec::with_capacity(layers + 1);
    let mut gamma_per_layer = Vec::with_capacity(layers);
    let mut f_em_per_layer = Vec::with_capacity(layers);
    let mut elbo_per_layer = Vec::with_capacity(layers);
    let mut reinit_events = Vec::new();
    let mut reinit_rng: Option<ChaCha8Rng> = None;

    mu_per_layer.push(mu0.clone());
    for layer in 1..=layers {
        let params = GmmParams {
            bases: mu_per_layer[layer - 1].clone(),
            temperature,
        };
        let gamma = e_step(x, &params, cfg.kernel)?;
        let (mut f_em, dead) = m_step_masked(&gamma, x)?;
        for k in dead {
            let rng = reinit_rng.get_or_insert_with(|| ChaCha8Rng::seed_from_u64(cfg.reinit_seed));
            let source_row = rng.random_range(0..x.rows());
            let src = x.row(source_row).to_vec();
            for (v, s) in f_em.row_mut(k).iter_mut().zip(src) {
                let noise: f64 = rng.sample(StandardNormal);
                *v = s + 1e-4 * noise;
            }
            reinit_events.push(ReinitEvent {
                layer,
                component: k,
                source_row,
            });
        }
        let mu = n_step(&params.bases, &f_em, eta)?;
        let value = elbo(
            x,
            &GmmParams {
                bases: mu.clone(),
                temperature,
            },
            &gamma,
        )?;
        mu_per_layer.push(mu);
        gamma_per_layer.push(gamma);
        f_em_per_layer.push(f_em);
        elbo_per_layer.push(value);
    }
    let reconstruction = r_step(&gamma_per_layer[layers - 1], &mu_per_layer[layers])?;

    Ok(HemTrace {
        mu_per_layer,
        gamma_per_layer,
        f_em_per_layer,
        elbo_per_layer,
        reconstruction,
        reinit_events,
        step_size: eta,
        temperature,
        kernel: cfg.kernel,
    })
}

/// One forward trace per requested depth, all from the same μ⁽⁰⁾.
pub fn eval_extrapolate(x: &Matrix, state: &BasisState, cfg: &HemConfig, t_values: &[usize]) -> Result<Vec<HemTrace>> {
    if t_values.is_empty() {
        return Err(Error::Config("eval_extrapolate needs at least one depth".into()));
    }
    t_values.iter().map(|&t| hem_forward(x, state, cfg, Some(t))).collect()
}
