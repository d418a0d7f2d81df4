//! A small trainable pipeline: affine backbone → HEM stack → affine head.
//!
//! Each image is one HEM input (its pixels are the points). Training is
//! plain SGD over mini-batches of images, with the running initial bases
//! updated by a moving average of the batch's final bases.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backprop::{hem_backward, GradMode, HemGradients};
use crate::datagen::container::{self, ContainerKind, Entry};
use crate::datagen::{Dataset, SegSample};
use crate::diagnostics::{grad_profile, LayerGradStats};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{logsumexp_rows, matmul, matmul_nt, matmul_tn, Matrix};
use crate::stack::{hem_forward, init_bases, moving_average_update, BasisState, HemConfig, HemTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    CrossEntropy,
}

/// Architecture of the toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature width C seen by the HEM stack.
    pub channels: usize,
    /// Number of bases K.
    pub num_bases: usize,
    /// Width of an optional tanh layer in front of the affine backbone.
    pub hidden: Option<usize>,
    /// When false the head reads X directly (the no-HEM baseline).
    pub use_hem: bool,
    /// Multiplier on the Glorot range of the backbone weight. Larger values
    /// spread X out relative to the temperature so γ starts less uniform.
    pub backbone_init_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            num_bases: 4,
            hidden: None,
            use_hem: true,
            backbone_init_gain: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.num_bases == 0 {
            return Err(Error::Config(format!(
                "channels and num_bases must be >= 1, got {} and {}",
                self.channels, self.num_bases
            )));
        }
        if !(self.backbone_init_gain > 0.0 && self.backbone_init_gain.is_finite()) {
            return Err(Error::Config(format!(
                "backbone_init_gain must be > 0, got {}",
                self.backbone_init_gain
            )));
        }
        if self.hidden == Some(0) {
            return Err(Error::Config("hidden width must be >= 1 when set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub weight: Matrix,
    /// 1×H row.
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    pub hidden: Option<HiddenLayer>,
    /// In×C.
    pub backbone_weight: Matrix,
    /// 1×C.
    pub backbone_bias: Matrix,
    /// C×L.
    pub head_weight: Matrix,
    /// 1×L.
    pub head_bias: Matrix,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound))
}

impl ToyModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, num_classes: usize, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::Config(format!(
                "input_dim and num_classes must be >= 1, got {input_dim} and {num_classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = cfg.hidden.map(|h| HiddenLayer {
            weight: glorot(&mut rng, input_dim, h),
            bias: Matrix::zeros(1, h),
        });
        let backbone_in = cfg.hidden.unwrap_or(input_dim);
        Ok(Self {
            hidden,
            backbone_weight: glorot(&mut rng, backbone_in, cfg.channels).scale(cfg.backbone_init_gain),
            backbone_bias: Matrix::zeros(1, cfg.channels),
            head_weight: glorot(&mut rng, cfg.channels, num_classes),
            head_bias: Matrix::zeros(1, num_classes),
        })
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some(h) => h.weight.rows(),
            None => self.backbone_weight.rows(),
        }
    }

    pub fn channels(&self) -> usize {
        self.backbone_weight.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.head_weight.cols()
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(6);
        if let Some(h) = &self.hidden {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out.extend([&self.backbone_weight, &self.backbone_bias, &self.head_weight, &self.head_bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(6);
        if let Some(h) = &mut self.hidden {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out.extend([
            &mut self.backbone_weight,
            &mut self.backbone_bias,
            &mut self.head_weight,
            &mut self.head_bias,
        ]);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            hidden: self.hidden.as_ref().map(|h| HiddenLayer {
                weight: z(&h.weight),
                bias: z(&h.bias),
            }),
            backbone_weight: z(&self.backbone_weight),
            backbone_bias: z(&self.backbone_bias),
            head_weight: z(&self.head_weight),
            head_bias: z(&self.head_bias),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    fn same_layout(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape() == y.shape())
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Matrix,
    /// Backbone output X.
    pub features: Matrix,
    /// tanh activations when the hidden layer is present.
    pub hidden_act: Option<Matrix>,
    /// Present iff the model uses HEM.
    pub trace: Option<HemTrace>,
}

impl ForwardOutput {
    /// The head's input: X̃ with HEM, X without.
    pub fn head_input(&self) -> &Matrix {
        match &self.trace {
            Some(t) => &t.reconstruction,
            None => &self.features,
        }
    }
}

pub fn model_forward(
    raw: &Matrix,
    params: &ToyModelParams,
    state: &BasisState,
    hem: &HemConfig,
    use_hem: bool,
    t_override: Option<usize>,
) -> Result<ForwardOutput> {
    if raw.cols() != params.input_dim() {
        return Err(shape_err(
            "model_forward",
            format!("{} input features", params.input_dim()),
            format!("{} input features", raw.cols()),
        ));
    }
    let hidden_act = match &params.hidden {
        Some(h) => Some(matmul(raw, &h.weight)?.add_row(h.bias.row(0))?.map(f64::tanh)),
        None => None,
    };
    let backbone_in = hidden_act.as_ref().unwrap_or(raw);
    let features = matmul(backbone_in, &params.backbone_weight)?.add_row(params.backbone_bias.row(0))?;
    let trace = if use_hem {
        Some(hem_forward(&features, state, hem, t_override)?)
    } else {
        None
    };
    let head_in = trace.as_ref().map_or(&features, |t| &t.reconstruction);
    let logits = matmul(head_in, &params.head_weight)?.add_row(params.head_bias.row(0))?;
    Ok(ForwardOutput {
        logits,
        features,
        hidden_act,
        trace,
    })
}

/// Mean negative log-likelihood and its gradient `(softmax − onehot)/N`.
pub fn cross_entropy(logits: &Matrix, labels: &[u32]) -> Result<(f64, Matrix)> {
    let (n, l) = logits.shape();
    if labels.len() != n {
        return Err(shape_err("cross_entropy", format!("{n} labels"), format!("{} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::Data("cross_entropy of an empty batch".into()));
    }
    if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &y)| y as usize >= l) {
        return Err(Error::Data(format!("label {bad} at row {i} is outside [0, {l})")));
    }
    let lse = logsumexp_rows(logits);
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, l);
    for r in 0..n {
        let y = labels[r] as usize;
        loss += lse[r] - logits.get(r, y);
        let g = grad.row_mut(r);
        for (c, v) in g.iter_mut().enumerate() {
            *v = (logits.get(r, c) - lse[r]).exp() * inv_n;
        }
        g[y] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

pub fn accuracy(logits: &Matrix, labels: &[u32]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| p == y as usize)
        .count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub params: ToyModelParams,
    /// Gradient through the HEM stack, including per-layer contributions.
    pub hem: Option<HemGradients>,
}

/// Exact gradients of the loss with respect to every parameter.
pub fn model_backward(
    raw: &Matrix,
    params: &ToyModelParams,
    fwd: &ForwardOutput,
    hem: &HemConfig,
    grad_logits: &Matrix,
) -> Result<ModelGradients> {
    if grad_logits.shape() != fwd.logits.shape() {
        return Err(Error::Consistency(format!(
            "logit gradient is {:?} but the forward pass produced {:?}",
            grad_logits.shape(),
            fwd.logits.shape()
        )));
    }
    if fwd.features.rows() != raw.rows() || fwd.features.cols() != params.channels() {
        return Err(Error::Consistency("forward artifacts do not match the inputs".into()));
    }
    let mut grads = params.zeros_like();
    let head_in = fwd.head_input();
    grads.head_weight = matmul_tn(head_in, grad_logits)?;
    grads.head_bias = Matrix::new(1, grad_logits.cols(), grad_logits.col_sums())?;
    let g_head_in = matmul_nt(grad_logits, &params.head_weight)?;

    let (g_x, hem_grads) = match &fwd.trace {
        Some(trace) => {
            let g = hem_backward(trace, &fwd.features, hem, &g_head_in, GradMode::Exact)?;
            (g.grad_x.clone(), Some(g))
        }
        None => (g_head_in, None),
    };

    let backbone_in = fwd.hidden_act.as_ref().unwrap_or(raw);
    grads.backbone_weight = matmul_tn(backbone_in, &g_x)?;
    grads.backbone_bias = Matrix::new(1, g_x.cols(), g_x.col_sums())?;

    if let (Some(h), Some(act), Some(gh)) = (&params.hidden, &fwd.hidden_act, &mut grads.hidden) {
        let g_act = matmul_nt(&g_x, &params.backbone_weight)?;
        let g_pre = Matrix::from_fn(act.rows(), act.cols(), |r, c| {
            let a = act.get(r, c);
            g_act.get(r, c) * (1.0 - a * a)
        });
        gh.weight = matmul_tn(raw, &g_pre)?;
        gh.bias = Matrix::new(1, g_pre.cols(), g_pre.col_sums())?;
        debug_assert_eq!(gh.weight.shape(), h.weight.shape());
    }
    Ok(ModelGradients {
        params: grads,
        hem: hem_grads,
    })
}

/// `p ← p − lr·g`.
pub fn sgd_step(params: &ToyModelParams, grads: &ToyModelParams, lr: f64) -> Result<ToyModelParams> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
    }
    if !params.same_layout(grads) {
        return Err(Error::Consistency("gradient layout does not match the parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Training("non-finite gradient".into()));
    }
    let mut out = params.clone();
    for (p, g) in out.tensors_mut().into_iter().zip(grads.tensors()) {
        for (pv, gv) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *pv -= lr * gv;
        }
    }
    if !out.is_finite() {
        return Err(Error::Training("parameters became non-finite after the update".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hem: HemConfig,
    pub model: ModelConfig,
    pub loss: Loss,
    /// Images in the fixed gradient-logging probe.
    pub probe_size: usize,
    /// Probe gradients are logged every this many steps (and at step 0).
    /// Zero disables probe logging.
    pub log_interval: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.hem.validate()?;
        self.model.validate()
    }
}

/// Metrics for one optimizer step, averaged over the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Per-layer ELBO (index `t - 1`); empty for the baseline.
    pub elbo: Vec<f64>,
    pub reinit_events: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsHistory {
    pub steps: Vec<StepMetrics>,
    pub grad_stats: Vec<LayerGradStats>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ToyModelParams,
    pub state: BasisState,
    pub history: MetricsHistory,
}

/// Seeds derived from the run seed for each independent random stream.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Fresh parameters and bases for a configuration.
pub fn init_model(input_dim: usize, num_classes: usize, cfg: &TrainConfig) -> Result<(ToyModelParams, BasisState)> {
    let params = ToyModelParams::init(input_dim, num_classes, &cfg.model, sub_seed(cfg.seed, 1))?;
    let state = init_bases(cfg.model.num_bases, cfg.model.channels, sub_seed(cfg.seed, 2), cfg.hem.normalize_bases)?;
    Ok((params, state))
}

/// The fixed probe subset: the first `probe_size` images of a seeded permutation.
pub fn probe_indices(dataset_len: usize, probe_size: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dataset_len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(seed, 3)));
    idx.truncate(probe_size.min(dataset_len));
    idx
}

/// Exact and skip-only gradient profiles averaged over the probe images.
pub fn probe_grad_stats(
    step: u64,
    samples: &[&SegSample],
    params: &ToyModelParams,
    state: &BasisState,
    hem: &HemConfig,
    t_override: Option<usize>,
) -> Result<LayerGradStats> {
    let mut per_image = Vec::with_capacity(samples.len());
    for s in samples {
        let fwd = model_forward(&s.raw_features, params, state, hem, true, t_override)?;
        let (_, g_logits) = cross_entropy(&fwd.logits, &s.labels)?;
        let g_head_in = matmul_nt(&g_logits, &params.head_weight)?;
        let trace = fwd.trace.as_ref().expect("HEM forward always records a trace");
        let exact = hem_backward(trace, &fwd.features, hem, &g_head_in, GradMode::Exact)?;
        let skip = hem_backward(trace, &fwd.features, hem, &g_head_in, GradMode::SkipOnly)?;
        per_image.push(grad_profile(step, trace, &exact, &skip)?);
    }
    LayerGradStats::average(step, &per_image)
}

fn check_dataset(dataset: &Dataset) -> Result<(usize, usize)> {
    let first = dataset
        .samples
        .first()
        .ok_or_else(|| Error::Data("training needs a non-empty dataset".into()))?;
    let dim = first.raw_features.cols();
    if dataset.samples.iter().any(|s| s.raw_features.cols() != dim || s.is_empty()) {
        return Err(Error::Data("all samples need the same non-zero feature width and at least one row".into()));
    }
    Ok((dim, dataset.num_classes().max(2)))
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (input_dim, num_classes) = check_dataset(dataset)?;
    let (mut params, mut state) = init_model(input_dim, num_classes, cfg)?;
    let mut history = MetricsHistory::default();
    let probe: Vec<&SegSample> = probe_indices(dataset.samples.len(), cfg.probe_size, cfg.seed)
        .into_iter()
        .map(|i| &dataset.samples[i])
        .collect();
    let mut order: Vec<usize> = (0..dataset.samples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 4));
    let use_hem = cfg.model.use_hem;
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            if use_hem && cfg.log_interval > 0 && step.is_multiple_of(cfg.log_interval) && !probe.is_empty() {
                history
                    .grad_stats
                    .push(probe_grad_stats(step, &probe, &params, &state, &cfg.hem, None)?);
            }

            let mut grad_sum = params.zeros_like();
            let mut loss = 0.0;
            let mut acc = 0.0;
            let mut elbo = vec![0.0; if use_hem { cfg.hem.t_train } else { 0 }];
            let mut mu_sum = Matrix::zeros(state.running_mu.rows(), state.running_mu.cols());
            let mut reinits = 0;
            for &i in batch {
                let s = &dataset.samples[i];
                let fwd = model_forward(&s.raw_features, &params, &state, &cfg.hem, use_hem, None)?;
                let (l, g_logits) = cross_entropy(&fwd.logits, &s.labels)?;
                let g = model_backward(&s.raw_features, &params, &fwd, &cfg.hem, &g_logits)?;
                for (acc_t, t) in grad_sum.tensors_mut().into_iter().zip(g.params.tensors()) {
                    acc_t.add_assign(t)?;
                }
                loss += l;
                acc += accuracy(&fwd.logits, &s.labels);
                if let Some(trace) = &fwd.trace {
                    for (e, v) in elbo.iter_mut().zip(trace.elbo_totals()) {
                        *e += v;
                    }
                    mu_sum.add_assign(trace.final_mu())?;
                    reinits += trace.reinit_events.len();
                }
            }
            let b = batch.len() as f64;
            let grads = {
                let mut g = grad_sum;
                for t in g.tensors_mut() {
                    *t = t.scale(1.0 / b);
                }
                g
            };
            let loss = loss / b;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at step {step} (epoch {epoch})")));
            }
            params = sgd_step(&params, &grads, cfg.learning_rate)
                .map_err(|e| match e {
                    Error::Training(m) => Error::Training(format!("{m} at step {step} (epoch {epoch})")),
                    other => other,
                })?;
            if use_hem {
                state = moving_average_update(&state, &mu_sum.scale(1.0 / b), cfg.hem.momentum, cfg.hem.normalize_bases)?;
                if !state.running_mu.is_finite() {
                    return Err(Error::Training(format!("non-finite bases at step {step} (epoch {epoch})")));
                }
            }
            history.steps.push(StepMetrics {
                step,
                epoch,
                loss,
                accuracy: acc / b,
                elbo: elbo.into_iter().map(|e| e / b).collect(),
                reinit_events: reinits,
            });
            step += 1;
        }
    }
    Ok(TrainOutcome { params, state, history })
}

/// Dataset-level evaluation at a given depth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub t: usize,
    pub accuracy: f64,
    pub loss: f64,
    /// Mean over images of the final-layer ELBO; NaN-free, zero for the baseline.
    pub final_elbo: f64,
}

pub fn evaluate(
    dataset: &Dataset,
    params: &ToyModelParams,
    state: &BasisState,
    hem: &HemConfig,
    use_hem: bool,
    t: usize,
) -> Result<EvalResult> {
    check_dataset(dataset)?;
    let (mut hits, mut rows, mut loss, mut elbo) = (0.0, 0usize, 0.0, 0.0);
    for s in &dataset.samples {
        let fwd = model_forward(&s.raw_features, params, state, hem, use_hem, Some(t))?;
        let (l, _) = cross_entropy(&fwd.logits, &s.labels)?;
        hits += accuracy(&fwd.logits, &s.labels) * s.len() as f64;
        rows += s.len();
        loss += l;
        if let Some(trace) = &fwd.trace {
            elbo += trace.final_elbo();
        }
    }
    let n = dataset.samples.len() as f64;
    Ok(EvalResult {
        t,
        accuracy: hits / rows as f64,
        loss: loss / n,
        final_elbo: elbo / n,
    })
}

/// Writes parameters and running bases to a checkpoint container.
pub fn save_checkpoint(path: impl AsRef<Path>, params: &ToyModelParams, state: &BasisState) -> Result<()> {
    let mut entries = vec![Entry::Labels(vec![u32::from(params.hidden.is_some())])];
    entries.extend(params.tensors().into_iter().map(|m| Entry::Matrix(m.clone())));
    entries.push(Entry::Matrix(state.running_mu.clone()));
    container::write_container(path, ContainerKind::Checkpoint, &entries)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ToyModelParams, BasisState)> {
    let (kind, entries) = container::read_container(path)?;
    if kind != ContainerKind::Checkpoint {
        return Err(Error::Format(format!("expected a checkpoint container, found {kind:?}")));
    }
    let mut it = entries.into_iter();
    let has_hidden = match it.next() {
        Some(Entry::Labels(flags)) if flags.len() == 1 && flags[0] <= 1 => flags[0] == 1,
        _ => return Err(Error::Format("checkpoint header entry is missing or malformed".into())),
    };
    let mut mats = Vec::new();
    for e in it {
        match e {
            Entry::Matrix(m) => mats.push(m),
            Entry::Labels(_) => return Err(Error::Format("unexpected label entry in checkpoint".into())),
        }
    }
    let expected = if has_hidden { 7 } else { 5 };
    if mats.len() != expected {
        return Err(Error::Format(format!("checkpoint has {} tensors, expected {expected}", mats.len())));
    }
    let mut it = mats.into_iter();
    let mut next = || it.next().unwrap();
    let hidden = if has_hidden {
        Some(HiddenLayer {
            weight: next(),
            bias: next(),
        })
    } else {
        None
    };
    let params = ToyModelParams {
        hidden,
        backbone_weight: next(),
        backbone_bias: next(),
        head_weight: next(),
        head_bias: next(),
    };
    let state = BasisState { running_mu: next() };
    let c = params.backbone_weight.cols();
    let consistent = params.hidden.as_ref().is_none_or(|h| {
        h.bias.shape() == (1, h.weight.cols()) && h.weight.cols() == params.backbone_weight.rows()
    }) && params.backbone_bias.shape() == (1, c)
        && params.head_weight.rows() == c
        && params.head_bias.shape() == (1, params.head_weight.cols())
        && state.running_mu.cols() == c;
    if !consistent {
        return Err(Error::Format("checkpoint tensor shapes are inconsistent".into()));
    }
    Ok((params, state))
}
