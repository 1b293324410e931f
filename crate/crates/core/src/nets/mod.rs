//! Classifier, generator, discriminator (with the LCA decoder) and auxiliary
//! network over one shared parameter store.

mod bundle;
mod checkpoint;
pub mod forward;

pub use bundle::{
    AuxParams, ClassifierParams, Dense, DiscriminatorParams, NetDims, NetOptions, NetworkBundle,
    ScorerParams,
};
pub use checkpoint::{checkpoint_paths, load_checkpoint, save_checkpoint};

use rand::Rng;

use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};

fn row(v: &[f64], want: usize, op: &'static str, what: &str) -> Result<Tensor> {
    if v.len() != want {
        return Err(Error::shape(op, format!("{what} of length {}, expected {want}", v.len())));
    }
    Ok(Tensor::matrix(1, want, v.to_vec()).expect("sized above"))
}

fn softmax_rows_of(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let c = t.cols();
    for r in out.data_mut().chunks_mut(c.max(1)) {
        crate::diffcore::softmax_in_place(r);
    }
    out
}

/// Class probabilities for one instance. With `train_rng` set, a fresh
/// dropout mask is drawn; otherwise the pass is deterministic.
pub fn classify<R: Rng>(
    bundle: &NetworkBundle,
    x: &[f64],
    train_rng: Option<&mut R>,
) -> Result<Vec<f64>> {
    let x = row(x, bundle.dims.feature_dim, "classify", "instance features")?;
    let mut g = Graph::frozen();
    let xn = g.constant(x)?;
    let mask = train_rng.map(|rng| {
        forward::dropout_mask(rng, 1, bundle.dims.classifier_hidden, bundle.options.dropout)
    });
    let logits = forward::classifier_logits(&mut g, bundle, xn, mask)?;
    let p = g.softmax_rows(logits)?;
    Ok(g.value(p).data().to_vec())
}

/// Eval-mode class probabilities for every row of `features`.
pub fn classifier_probs(bundle: &NetworkBundle, features: &Tensor) -> Result<Tensor> {
    let mut g = Graph::frozen();
    let x = g.constant(features.clone())?;
    let logits = forward::classifier_logits(&mut g, bundle, x, None)?;
    Ok(softmax_rows_of(g.value(logits)))
}

/// Annotation distribution `G(x, e, ε, ẑ)` for one pair. Features the
/// generator does not consume are ignored.
pub fn generate_distribution(
    bundle: &NetworkBundle,
    x: &[f64],
    e: &[f64],
    zhat: &[f64],
    noise: &[f64],
) -> Result<Vec<f64>> {
    let d = &bundle.dims;
    let x = row(x, d.feature_dim, "generate", "instance features")?;
    let e = row(e, d.annotator_dim, "generate", "annotator features")?;
    let z = row(zhat, d.num_classes, "generate", "classifier output")?;
    let eps = row(noise, d.noise_dim, "generate", "noise")?;
    let probs = generator_probs(bundle, &x, &e, &z, &eps)?;
    Ok(probs.into_data())
}

/// Batched generator distributions; all four inputs have one row per pair.
pub fn generator_probs(
    bundle: &NetworkBundle,
    x: &Tensor,
    e: &Tensor,
    zhat: &Tensor,
    noise: &Tensor,
) -> Result<Tensor> {
    let mut g = Graph::frozen();
    let xn = bundle
        .options
        .generator_uses_instance
        .then(|| g.constant(x.clone()))
        .transpose()?;
    let en = bundle
        .options
        .generator_uses_annotator
        .then(|| g.constant(e.clone()))
        .transpose()?;
    let zn = g.constant(zhat.clone())?;
    let nn = g.constant(noise.clone())?;
    let logits = forward::generator_logits(&mut g, bundle, xn, en, zn, nn)?;
    Ok(softmax_rows_of(g.value(logits)))
}

/// Probability that annotation `y` of annotator `e` on instance `x` is
/// authentic.
pub fn discriminate(bundle: &NetworkBundle, x: &[f64], e: &[f64], y: usize) -> Result<f64> {
    let d = &bundle.dims;
    let x = row(x, d.feature_dim, "discriminate", "instance features")?;
    let e = row(e, d.annotator_dim, "discriminate", "annotator features")?;
    let mut g = Graph::frozen();
    let (xn, en) = (g.constant(x)?, g.constant(e)?);
    let nodes = forward::discriminator_forward(&mut g, bundle, xn, en, &[0], &[0], &[y])?;
    Ok(g.value(nodes.prob).data()[0])
}

/// Posterior of the auxiliary network over the latent class of one triplet.
pub fn aux_posterior(bundle: &NetworkBundle, x: &[f64], e: &[f64], y: usize) -> Result<Vec<f64>> {
    let d = &bundle.dims;
    let x = row(x, d.feature_dim, "aux_posterior", "instance features")?;
    let e = row(e, d.annotator_dim, "aux_posterior", "annotator features")?;
    let mut g = Graph::frozen();
    let (xn, en) = (g.constant(x)?, g.constant(e)?);
    let nodes = forward::discriminator_forward(&mut g, bundle, xn, en, &[0], &[0], &[y])?;
    let logits = forward::aux_logits(&mut g, bundle, &nodes, &[y])?;
    Ok(softmax_rows_of(g.value(logits)).into_data())
}

/// Discriminator probabilities and auxiliary log-posteriors for a batch of
/// triplets indexing into the two feature tables.
pub fn score_triplets(
    bundle: &NetworkBundle,
    instance_table: &Tensor,
    annotator_table: &Tensor,
    instances: &[usize],
    annotators: &[usize],
    classes: &[usize],
) -> Result<(Vec<f64>, Tensor)> {
    let mut g = Graph::frozen();
    let xt = g.constant(instance_table.clone())?;
    let et = g.constant(annotator_table.clone())?;
    let nodes = forward::discriminator_forward(&mut g, bundle, xt, et, instances, annotators, classes)?;
    let logits = forward::aux_logits(&mut g, bundle, &nodes, classes)?;
    let logq = g.log_softmax_rows(logits)?;
    Ok((g.value(nodes.prob).data().to_vec(), g.value(logq).clone()))
}
