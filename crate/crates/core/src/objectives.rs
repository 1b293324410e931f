//! Training objectives: the minimax value, the variational information
//! bound, per-annotation losses and the counterfactual risk estimator.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

fn clamp_prob(p: f64) -> Result<(f64, bool)> {
    if !p.is_finite() {
        return Err(Error::NonFinite(format!("probability {p}")));
    }
    let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok((c, c != p))
}

/// A scalar plus the number of probabilities that had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped {
    pub value: f64,
    pub clamp_hits: usize,
}

/// `−[mean log D(auth) + mean log(1 − D(gen))] + β·mean(D²)` over both sets.
pub fn discriminator_loss(authentic: &[f64], generated: &[f64], beta: f64) -> Result<Clamped> {
    if authentic.is_empty() || generated.is_empty() {
        return Err(Error::InvalidArgument(
            "discriminator loss needs authentic and generated scores".into(),
        ));
    }
    let mut hits = 0;
    let mut pos = 0.0;
    for &d in authentic {
        let (c, hit) = clamp_prob(d)?;
        hits += hit as usize;
        pos += c.ln();
    }
    let mut neg = 0.0;
    for &d in generated {
        let (c, hit) = clamp_prob(d)?;
        hits += hit as usize;
        neg += (1.0 - c).ln();
    }
    let sq: f64 = authentic.iter().chain(generated).map(|d| d * d).sum();
    let total = (authentic.len() + generated.len()) as f64;
    Ok(Clamped {
        value: -(pos / authentic.len() as f64 + neg / generated.len() as f64) + beta * sq / total,
        clamp_hits: hits,
    })
}

/// Graph form of [`discriminator_loss`]; `authentic` and `generated` are
/// score vectors. Clamp hits are counted by the graph.
pub fn discriminator_loss_node(
    g: &mut Graph,
    authentic: NodeId,
    generated: NodeId,
    beta: f64,
) -> Result<NodeId> {
    let n_auth = g.value(authentic).len();
    let n_gen = g.value(generated).len();
    if n_auth == 0 || n_gen == 0 {
        return Err(Error::InvalidArgument(
            "discriminator loss needs authentic and generated scores".into(),
        ));
    }
    let a = g.clamp(authentic, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let la = g.log(a)?;
    let la = g.mean(la)?;
    let b = g.clamp(generated, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let one_minus = g.scale(b, -1.0)?;
    let one_minus = g.add_scalar(one_minus, 1.0)?;
    let lb = g.log(one_minus)?;
    let lb = g.mean(lb)?;
    let value = g.add(la, lb)?;
    let mut loss = g.scale(value, -1.0)?;
    if beta != 0.0 {
        let sa = g.square(authentic)?;
        let sa = g.sum(sa)?;
        let sb = g.square(generated)?;
        let sb = g.sum(sb)?;
        let s = g.add(sa, sb)?;
        let pen = g.scale(s, beta / (n_auth + n_gen) as f64)?;
        loss = g.add(loss, pen)?;
    }
    Ok(loss)
}

/// `L_I = mean log Q(ẑ|y) + H(ẑ)`.
pub fn info_lower_bound(q_logprobs: &[f64], entropy: f64) -> Result<f64> {
    if q_logprobs.is_empty() {
        return Err(Error::InvalidArgument("no samples for the information bound".into()));
    }
    if !entropy.is_finite() || q_logprobs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("information bound inputs".into()));
    }
    Ok(q_logprobs.iter().sum::<f64>() / q_logprobs.len() as f64 + entropy)
}

/// `δ = log(1 − D) − λ·log Q(ẑ|y)`.
pub fn per_annotation_delta(d_score: f64, q_logprob: f64, lambda: f64) -> Result<Clamped> {
    let (c, hit) = clamp_prob(d_score)?;
    if !q_logprob.is_finite() {
        return Err(Error::NonFinite(format!("auxiliary log-probability {q_logprob}")));
    }
    Ok(Clamped {
        value: (1.0 - c).ln() - lambda * q_logprob,
        clamp_hits: hit as usize,
    })
}

/// One generated annotation together with what is needed to re-evaluate and
/// re-weight it later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedSample {
    pub instance: usize,
    pub annotator: usize,
    pub label: usize,
    /// Probability of `label` under the logging policy.
    pub g0: f64,
    pub authentic: bool,
    /// Generator noise used when logging.
    pub noise: Vec<f64>,
    /// Latent class drawn from the classifier output at logging time, the
    /// auxiliary network's training target.
    pub latent: usize,
}

fn crm_coefficients(samples: &[LoggedSample], deltas: &[f64], mu: f64) -> Result<Vec<f64>> {
    if samples.len() != deltas.len() {
        return Err(Error::shape(
            "crm_objective",
            format!("{} samples, {} deltas", samples.len(), deltas.len()),
        ));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("CRM objective over no samples".into()));
    }
    let n = samples.len() as f64;
    samples
        .iter()
        .zip(deltas)
        .map(|(s, &d)| {
            if !(s.g0 > 0.0) {
                return Err(Error::LoggingSupport(s.g0));
            }
            Ok((d - mu) / (s.g0 * n))
        })
        .collect()
}

/// `(1/|S|) Σ (δ − μ)·G_θ(y)/G_0(y)`.
pub fn crm_objective(
    samples: &[LoggedSample],
    target_probs: &[f64],
    deltas: &[f64],
    mu: f64,
) -> Result<f64> {
    let coef = crm_coefficients(samples, deltas, mu)?;
    if target_probs.len() != coef.len() {
        return Err(Error::shape(
            "crm_objective",
            format!("{} samples, {} target probabilities", coef.len(), target_probs.len()),
        ));
    }
    Ok(coef.iter().zip(target_probs).map(|(c, p)| c * p).sum())
}

/// Graph form of [`crm_objective`]; `target_probs` is a vector node holding
/// `G_θ(y)` per sample.
pub fn crm_objective_node(
    g: &mut Graph,
    target_probs: NodeId,
    samples: &[LoggedSample],
    deltas: &[f64],
    mu: f64,
) -> Result<NodeId> {
    let coef = crm_coefficients(samples, deltas, mu)?;
    let shape = g.value(target_probs).shape().to_vec();
    let weighted = g.mul_const(target_probs, Tensor::new(shape, coef)?)?;
    g.sum(weighted)
}

/// Scalar decomposition of the minimax objective for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub value_term: f64,
    pub info_term: f64,
    pub lambda: f64,
    pub combined: f64,
    pub deltas: Vec<f64>,
}

impl LossBreakdown {
    pub fn new(value_term: f64, info_term: f64, lambda: f64, deltas: Vec<f64>) -> Self {
        Self {
            value_term,
            info_term,
            lambda,
            combined: value_term - lambda * info_term,
            deltas,
        }
    }
}
