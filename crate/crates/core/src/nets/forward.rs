//! Batched graph builders for the four networks.

use rand::Rng;

use super::bundle::{Dense, NetworkBundle, ScorerParams};
use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

fn dense(g: &mut Graph, b: &NetworkBundle, d: Dense, x: NodeId) -> Result<NodeId> {
    let w = g.param(&b.store, d.weight)?;
    let bias = g.param(&b.store, d.bias)?;
    let h = g.matmul(x, w)?;
    g.add_bias(h, bias)
}

fn scorer(g: &mut Graph, b: &NetworkBundle, s: ScorerParams, x: NodeId) -> Result<NodeId> {
    let h = dense(g, b, s.layer1, x)?;
    let h = g.relu(h)?;
    let h = dense(g, b, s.layer2, h)?;
    let h = g.relu(h)?;
    dense(g, b, s.output, h)
}

fn check_cols(g: &Graph, x: NodeId, want: usize, op: &'static str, what: &str) -> Result<()> {
    let shape = g.value(x).shape();
    if shape.len() != 2 || shape[1] != want {
        return Err(Error::shape(op, format!("{what} of shape {shape:?}, expected {want} columns")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1/(1-rate)`.
pub fn dropout_mask(rng: &mut impl Rng, rows: usize, cols: usize, rate: f64) -> Tensor {
    let keep = 1.0 - rate;
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::matrix(rows, cols, data).expect("sized above")
}

/// Classifier logits for a batch of instance rows. `mask` is a dropout mask
/// over the hidden layer; `None` is eval mode.
pub fn classifier_logits(
    g: &mut Graph,
    b: &NetworkBundle,
    x: NodeId,
    mask: Option<Tensor>,
) -> Result<NodeId> {
    check_cols(g, x, b.dims.feature_dim, "classify", "instance features")?;
    let h = dense(g, b, b.classifier.hidden, x)?;
    let mut h = g.relu(h)?;
    if let Some(mask) = mask {
        h = g.mul_const(h, mask)?;
    }
    dense(g, b, b.classifier.output, h)
}

/// Generator logits. `x` and `e` are required exactly when the bundle's
/// options feed them to the generator.
pub fn generator_logits(
    g: &mut Graph,
    b: &NetworkBundle,
    x: Option<NodeId>,
    e: Option<NodeId>,
    zhat: NodeId,
    noise: NodeId,
) -> Result<NodeId> {
    let mut parts = Vec::with_capacity(4);
    match (b.options.generator_uses_instance, x) {
        (true, Some(x)) => {
            check_cols(g, x, b.dims.feature_dim, "generate", "instance features")?;
            parts.push(x);
        }
        (true, None) => return Err(Error::shape("generate", "instance features required")),
        (false, _) => {}
    }
    match (b.options.generator_uses_annotator, e) {
        (true, Some(e)) => {
            check_cols(g, e, b.dims.annotator_dim, "generate", "annotator features")?;
            parts.push(e);
        }
        (true, None) => return Err(Error::shape("generate", "annotator features required")),
        (false, _) => {}
    }
    check_cols(g, zhat, b.dims.num_classes, "generate", "classifier output")?;
    check_cols(g, noise, b.dims.noise_dim, "generate", "noise")?;
    parts.push(zhat);
    parts.push(noise);
    let input = g.concat_cols(&parts)?;
    scorer(g, b, b.generator, input)
}

/// Intermediate nodes of a discriminator pass, reused by the auxiliary
/// network.
#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorNodes {
    /// Annotator embeddings `u_r`, one row per triplet.
    pub u: NodeId,
    /// Instance embeddings `v_n`, one row per triplet.
    pub v: NodeId,
    /// Decoded class matrices stacked `(C·m)×m`.
    pub class_matrices: NodeId,
    /// Pre-sigmoid scores, one per triplet.
    pub score: NodeId,
    /// `σ(score)`.
    pub prob: NodeId,
}

/// Decoded class matrices: `Σ_c' P[c,c'] M_c' W` with LCA, else `M_c`.
pub fn decoded_class_matrices(g: &mut Graph, b: &NetworkBundle) -> Result<NodeId> {
    let m = g.param(&b.store, b.discriminator.class_matrices)?;
    if !b.options.lca_enabled {
        return Ok(m);
    }
    let (c, dim) = (b.dims.num_classes, b.dims.embed_dim);
    let p = g.constant(b.propagation()?.clone())?;
    let flat = g.reshape(m, vec![c, dim * dim])?;
    let mixed = g.matmul(p, flat)?;
    let stacked = g.reshape(mixed, vec![c * dim, dim])?;
    let w = g.param(&b.store, b.discriminator.lca_mix)?;
    g.matmul(stacked, w)
}

/// Scores triplets `(instances[i], annotators[i], classes[i])`. The feature
/// tables hold one row per instance and per annotator; rows are encoded once
/// and gathered per triplet.
pub fn discriminator_forward(
    g: &mut Graph,
    b: &NetworkBundle,
    instance_table: NodeId,
    annotator_table: NodeId,
    instances: &[usize],
    annotators: &[usize],
    classes: &[usize],
) -> Result<DiscriminatorNodes> {
    if instances.len() != annotators.len() || instances.len() != classes.len() {
        return Err(Error::shape(
            "discriminate",
            format!(
                "{} instances, {} annotators, {} classes",
                instances.len(),
                annotators.len(),
                classes.len()
            ),
        ));
    }
    check_cols(g, instance_table, b.dims.feature_dim, "discriminate", "instance features")?;
    check_cols(g, annotator_table, b.dims.annotator_dim, "discriminate", "annotator features")?;
    if let Some(&y) = classes.iter().find(|&&y| y >= b.dims.num_classes) {
        return Err(Error::InvalidArgument(format!(
            "class {y} out of range for {} classes",
            b.dims.num_classes
        )));
    }
    let d = b.discriminator;
    let u_all = dense(g, b, d.annotator_encoder, annotator_table)?;
    let v_all = dense(g, b, d.instance_encoder, instance_table)?;
    let u = g.select_rows(u_all, annotators.to_vec())?;
    let v = g.select_rows(v_all, instances.to_vec())?;
    let class_matrices = decoded_class_matrices(g, b)?;
    let score = g.bilinear(u, v, class_matrices, classes.to_vec())?;
    let prob = g.sigmoid(score)?;
    Ok(DiscriminatorNodes {
        u,
        v,
        class_matrices,
        score,
        prob,
    })
}

/// Auxiliary logits over the latent class, for the triplets of `disc`.
pub fn aux_logits(
    g: &mut Graph,
    b: &NetworkBundle,
    disc: &DiscriminatorNodes,
    classes: &[usize],
) -> Result<NodeId> {
    let (c, dim) = (b.dims.num_classes, b.dims.embed_dim);
    let flat = g.reshape(disc.class_matrices, vec![c, dim * dim])?;
    let emb = dense(g, b, b.aux.class_embedding, flat)?;
    let m_y = g.select_rows(emb, classes.to_vec())?;
    let input = g.concat_cols(&[disc.u, disc.v, m_y])?;
    scorer(g, b, b.aux.scorer, input)
}
