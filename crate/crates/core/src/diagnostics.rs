//! Per-layer gradient statistics, ELBO curves, and CSV/JSON emission.
//!
//! The CSV schema is fixed: `step,layer,metric,value,eta,T,kernel,seed`.
//! Floats are written with 17 significant digits in exponent form so every
//! value parses back to the identical `f64`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backprop::HemGradients;
use crate::error::{Error, Result};
use crate::gmm::Kernel;
use crate::stack::HemTrace;

pub const CSV_HEADER: [&str; 8] = ["step", "layer", "metric", "value", "eta", "T", "kernel", "seed"];

/// Fig.-3-style per-layer gradient measurements at one training step.
///
/// Layer vectors are indexed `t - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGradStats {
    pub step: u64,
    /// Mean |·| of the skip-only (N-step) contribution of each layer to ∂E/∂X.
    pub per_layer_mean_abs_grad_x: Vec<f64>,
    /// Mean |·| of (exact − skip-only) contribution: the E-step share.
    pub estep_component_norm: Vec<f64>,
    /// Mean |·| of the exact total ∂E/∂X.
    pub total_mean_abs_grad_x: f64,
    /// Frobenius norm of the skip-only ∂E/∂μ⁽ᵗ⁾.
    pub per_layer_grad_mu_norm: Vec<f64>,
}

impl LayerGradStats {
    pub fn num_layers(&self) -> usize {
        self.per_layer_mean_abs_grad_x.len()
    }

    /// Elementwise mean of several measurements of the same depth.
    pub fn average(step: u64, items: &[LayerGradStats]) -> Result<LayerGradStats> {
        let first = items
            .first()
            .ok_or_else(|| Error::Consistency("cannot average zero gradient measurements".into()))?;
        let t = first.num_layers();
        if items.iter().any(|s| s.num_layers() != t) {
            return Err(Error::Consistency("gradient measurements differ in depth".into()));
        }
        let n = items.len() as f64;
        let mean_vec = |f: fn(&LayerGradStats) -> &Vec<f64>| -> Vec<f64> {
            (0..t).map(|i| items.iter().map(|s| f(s)[i]).sum::<f64>() / n).collect()
        };
        Ok(LayerGradStats {
            step,
            per_layer_mean_abs_grad_x: mean_vec(|s| &s.per_layer_mean_abs_grad_x),
            estep_component_norm: mean_vec(|s| &s.estep_component_norm),
            total_mean_abs_grad_x: items.iter().map(|s| s.total_mean_abs_grad_x).sum::<f64>() / n,
            per_layer_grad_mu_norm: mean_vec(|s| &s.per_layer_grad_mu_norm),
        })
    }

    pub fn to_records(&self, ctx: &RecordContext) -> Vec<MetricRecord> {
        let mut out = Vec::with_capacity(3 * self.num_layers() + 1);
        for (i, &v) in self.per_layer_mean_abs_grad_x.iter().enumerate() {
            out.push(ctx.record(self.step, Some(i + 1), "grad_x_nstep_mean_abs", v));
        }
        for (i, &v) in self.estep_component_norm.iter().enumerate() {
            out.push(ctx.record(self.step, Some(i + 1), "grad_x_estep_mean_abs", v));
        }
        for (i, &v) in self.per_layer_grad_mu_norm.iter().enumerate() {
            out.push(ctx.record(self.step, Some(i + 1), "grad_mu_skip_norm", v));
        }
        out.push(ctx.record(self.step, None, "grad_x_total_mean_abs", self.total_mean_abs_grad_x));
        out
    }
}

/// Pairs an exact and a skip-only backward pass over the same trace.
pub fn grad_profile(step: u64, trace: &HemTrace, exact: &HemGradients, skip: &HemGradients) -> Result<LayerGradStats> {
    let t = trace.num_layers();
    for g in [exact, skip] {
        if g.per_layer_grad_x_contrib.len() != t || g.per_layer_grad_mu.len() != t {
            return Err(Error::Consistency(format!(
                "gradients have {} layers but the trace has {t}",
                g.per_layer_grad_x_contrib.len()
            )));
        }
    }
    let mut estep = Vec::with_capacity(t);
    for (e, s) in exact.per_layer_grad_x_contrib.iter().zip(&skip.per_layer_grad_x_contrib) {
        estep.push(e.sub(s)?.mean_abs());
    }
    Ok(LayerGradStats {
        step,
        per_layer_mean_abs_grad_x: skip.per_layer_grad_x_contrib.iter().map(|m| m.mean_abs()).collect(),
        estep_component_norm: estep,
        total_mean_abs_grad_x: exact.grad_x.mean_abs(),
        per_layer_grad_mu_norm: skip.per_layer_grad_mu.iter().map(|m| m.frobenius_norm()).collect(),
    })
}

/// `‖exact ∂E/∂X − skip-only ∂E/∂X‖ / ‖exact ∂E/∂X‖`; zero when the exact gradient is zero.
pub fn estep_residual_ratio(exact: &HemGradients, skip: &HemGradients) -> Result<f64> {
    let denom = exact.grad_x.frobenius_norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(exact.grad_x.sub(&skip.grad_x)?.frobenius_norm() / denom)
}

/// Shannon entropy (nats) of a non-negative profile after normalization.
pub fn profile_entropy(profile: &[f64]) -> Result<f64> {
    if profile.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Undefined("profile entries must be finite and non-negative".into()));
    }
    let total: f64 = profile.iter().sum();
    if total <= 0.0 {
        return Err(Error::Undefined("entropy of an all-zero profile".into()));
    }
    let h: f64 = profile
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    // A single non-zero entry gives -0.0; report it as plain zero.
    Ok(h + 0.0)
}

/// Entropy of how the skip-only ∂E/∂X mass is spread over layers.
pub fn layer_entropy(stats: &LayerGradStats) -> Result<f64> {
    profile_entropy(&stats.per_layer_mean_abs_grad_x)
}

/// Rescales a skip-only per-layer profile measured at `eta_measured` to the
/// weights `η(1-η)^(T-t)` of another step size, holding the γ-dependent
/// factors fixed.
pub fn reweight_skip_profile(profile: &[f64], eta_measured: f64, eta_new: f64) -> Result<Vec<f64>> {
    if !(eta_measured > 0.0 && eta_measured < 1.0) {
        return Err(Error::Config(format!(
            "measured step size must lie in (0, 1) to factor out its weights, got {eta_measured}"
        )));
    }
    let t = profile.len() as i32;
    Ok(profile
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let depth = t - 1 - i as i32;
            let old = eta_measured * (1.0 - eta_measured).powi(depth);
            let new = eta_new * (1.0 - eta_new).powi(depth);
            v / old * new
        })
        .collect())
}

/// ELBO per layer for one step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboCurve {
    pub eta: f64,
    pub kernel: Kernel,
    /// Index `t - 1` holds the ELBO after layer t.
    pub elbo: Vec<f64>,
}

impl ElboCurve {
    pub fn from_trace(trace: &HemTrace) -> Self {
        Self {
            eta: trace.step_size,
            kernel: trace.kernel,
            elbo: trace.elbo_totals(),
        }
    }

    pub fn is_non_decreasing(&self, slack: f64) -> bool {
        self.elbo.windows(2).all(|w| w[1] >= w[0] - slack)
    }

    pub fn to_records(&self, ctx: &RecordContext, step: u64) -> Vec<MetricRecord> {
        self.elbo
            .iter()
            .enumerate()
            .map(|(i, &v)| ctx.record(step, Some(i + 1), "elbo", v))
            .collect()
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub layer: Option<usize>,
    pub metric: String,
    pub value: f64,
    pub eta: f64,
    pub t: usize,
    pub kernel: Kernel,
    pub seed: u64,
}

/// Run-level columns shared by every record of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordContext {
    pub eta: f64,
    pub t: usize,
    pub kernel: Kernel,
    pub seed: u64,
}

impl RecordContext {
    pub fn record(&self, step: u64, layer: Option<usize>, metric: &str, value: f64) -> MetricRecord {
        MetricRecord {
            step,
            layer,
            metric: metric.to_string(),
            value,
            eta: self.eta,
            t: self.t,
            kernel: self.kernel,
            seed: self.seed,
        }
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(records: &[MetricRecord], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        if !r.value.is_finite() {
            return Err(Error::Data(format!("non-finite value for metric `{}` at step {}", r.metric, r.step)));
        }
        w.write_record([
            r.step.to_string(),
            r.layer.map_or_else(String::new, |l| l.to_string()),
            r.metric.clone(),
            format_float(r.value),
            format_float(r.eta),
            r.t.to_string(),
            r.kernel.as_str().to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[MetricRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("cannot parse {what} from `{s}`")))
}

/// Parses a file written by [`emit_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        out.push(MetricRecord {
            step: parse_field(&row[0], "step")?,
            layer: if row[1].is_empty() { None } else { Some(parse_field(&row[1], "layer")?) },
            metric: row[2].to_string(),
            value: parse_field(&row[3], "value")?,
            eta: parse_field(&row[4], "eta")?,
            t: parse_field(&row[5], "T")?,
            kernel: row[6].parse()?,
            seed: parse_field(&row[7], "seed")?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub count: usize,
    pub last: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Aggregates keyed by `metric` or `metric@layer`.
pub fn summarize(records: &[MetricRecord]) -> BTreeMap<String, MetricSummary> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        let key = match r.layer {
            Some(l) => format!("{}@{l}", r.metric),
            None => r.metric.clone(),
        };
        groups.entry(key).or_default().push(r.value);
    }
    groups
        .into_iter()
        .map(|(k, vals)| {
            let summary = MetricSummary {
                count: vals.len(),
                last: *vals.last().unwrap(),
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            (k, summary)
        })
        .collect()
}

pub fn emit_summary_json(records: &[MetricRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&summarize(records))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backprop::{hem_backward, GradMode};
    use crate::numerics::Matrix;
    use crate::stack::{hem_forward, init_bases, BasisNorm, HemConfig, Temperature};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> RecordContext {
        RecordContext {
            eta: 0.5,
            t: 3,
            kernel: Kernel::Rbf,
            seed: 7,
        }
    }

    fn profile_for(eta: f64, upstream_scale: f64) -> (HemTrace, HemGradients, HemGradients) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(20, 4, |_, _| rng.random_range(-1.0..1.0));
        let w = Matrix::from_fn(20, 4, |_, _| upstream_scale * rng.random_range(-1.0..1.0));
        let state = init_bases(3, 4, 5, BasisNorm::L2Rows).unwrap();
        let cfg = HemConfig {
            t_train: 3,
            step_size: eta,
            temperature: Temperature::Fixed(0.8),
            ..HemConfig::default()
        };
        let trace = hem_forward(&x, &state, &cfg, None).unwrap();
        let exact = hem_backward(&trace, &x, &cfg, &w, GradMode::Exact).unwrap();
        let skip = hem_backward(&trace, &x, &cfg, &w, GradMode::SkipOnly).unwrap();
        (trace, exact, skip)
    }

    #[test]
    fn zero_upstream_gives_zero_stats() {
        let (trace, exact, skip) = profile_for(0.5, 0.0);
        let s = grad_profile(0, &trace, &exact, &skip).unwrap();
        assert!(s.per_layer_mean_abs_grad_x.iter().all(|&v| v == 0.0));
        assert!(s.estep_component_norm.iter().all(|&v| v == 0.0));
        assert!(s.per_layer_grad_mu_norm.iter().all(|&v| v == 0.0));
        assert_eq!(s.total_mean_abs_grad_x, 0.0);
        assert!(matches!(layer_entropy(&s), Err(Error::Undefined(_))));
    }

    #[test]
    fn unit_step_kills_early_skip_gradients() {
        let (trace, exact, skip) = profile_for(1.0, 1.0);
        let s = grad_profile(0, &trace, &exact, &skip).unwrap();
        assert_eq!(s.per_layer_grad_mu_norm[0], 0.0);
        assert_eq!(s.per_layer_grad_mu_norm[1], 0.0);
        assert!(s.per_layer_grad_mu_norm[2] > 0.0);
        // All skip-only mass sits in the last layer.
        assert_eq!(s.per_layer_mean_abs_grad_x[0], 0.0);
        assert_eq!(layer_entropy(&s).unwrap(), 0.0);
    }

    #[test]
    fn half_step_mu_norm_ratios() {
        let (trace, exact, skip) = profile_for(0.5, 1.0);
        let s = grad_profile(0, &trace, &exact, &skip).unwrap();
        let last = s.per_layer_grad_mu_norm[2];
        for (i, want) in [0.25, 0.5, 1.0].into_iter().enumerate() {
            assert!((s.per_layer_grad_mu_norm[i] - want * last).abs() < 1e-12 * last);
        }
        assert!(s.estep_component_norm.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(profile_entropy(&[0.0, 3.0, 0.0]).unwrap(), 0.0);
        assert!((profile_entropy(&[2.0; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        // T=2, η=0.5 with equal γ factors: weights η(1-η) and η → (1/3, 2/3).
        let w = [0.5 * 0.5, 0.5];
        let expected = -(1.0 / 3.0f64) * (1.0 / 3.0f64).ln() - (2.0 / 3.0f64) * (2.0 / 3.0f64).ln();
        assert!((profile_entropy(&w).unwrap() - expected).abs() < 1e-15);
        assert!(profile_entropy(&[-1.0, 2.0]).is_err());
    }

    #[test]
    fn reweighted_entropy_decreases_in_eta() {
        let (trace, exact, skip) = profile_for(0.5, 1.0);
        let s = grad_profile(0, &trace, &exact, &skip).unwrap();
        let mut prev = f64::INFINITY;
        for i in 1..=9 {
            let eta = i as f64 / 10.0;
            let h = profile_entropy(&reweight_skip_profile(&s.per_layer_mean_abs_grad_x, 0.5, eta).unwrap()).unwrap();
            assert!(h < prev);
            prev = h;
        }
    }

    #[test]
    fn grad_profile_rejects_depth_mismatch() {
        let (trace, exact, _) = profile_for(0.5, 1.0);
        let (_, _, other) = {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let x = Matrix::from_fn(20, 4, |_, _| rng.random_range(-1.0..1.0));
            let state = init_bases(3, 4, 5, BasisNorm::L2Rows).unwrap();
            let cfg = HemConfig {
                t_train: 2,
                ..HemConfig::default()
            };
            let tr = hem_forward(&x, &state, &cfg, None).unwrap();
            let g = hem_backward(&tr, &x, &cfg, &x, GradMode::SkipOnly).unwrap();
            (tr, g.clone(), g)
        };
        assert!(matches!(grad_profile(0, &trace, &exact, &other), Err(Error::Consistency(_))));
    }

    #[test]
    fn csv_header_only_for_empty() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,layer,metric,value,eta,T,kernel,seed\n");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let c = ctx();
        let vals = [0.1, 1.0 / 3.0, -2.5e-300, 123456.789, f64::MIN_POSITIVE, 0.0];
        let records: Vec<_> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| c.record(i as u64, if i % 2 == 0 { Some(i) } else { None }, "loss", v))
            .collect();
        emit_csv(&records, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, records);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n'));

        let again = dir.path().join("m2.csv");
        emit_csv(&records, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn csv_rejects_non_finite() {
        let r = ctx().record(0, None, "loss", f64::NAN);
        assert!(write_csv(&[r], Vec::new()).is_err());
    }

    #[test]
    fn summary_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let c = ctx();
        let recs = vec![
            c.record(0, None, "loss", 2.0),
            c.record(1, None, "loss", 1.0),
            c.record(1, Some(2), "elbo", -3.0),
        ];
        emit_summary_json(&recs, &path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["loss"]["last"], 1.0);
        assert_eq!(v["loss"]["mean"], 1.5);
        assert_eq!(v["elbo@2"]["count"], 1);
    }
}
