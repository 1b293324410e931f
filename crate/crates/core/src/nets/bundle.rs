use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::CoocAdjacency;
use crate::diffcore::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Layer widths shared by the four networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub annotator_dim: usize,
    /// Dimension `k` of the generator noise.
    pub noise_dim: usize,
    /// Width `m` of the discriminator's instance and annotator encoders.
    pub embed_dim: usize,
    /// Width of the auxiliary network's class-matrix embedding.
    pub class_embed_dim: usize,
    pub classifier_hidden: usize,
    /// Hidden widths of the generator and auxiliary scoring networks.
    pub scorer_hidden: (usize, usize),
}

impl NetDims {
    pub fn new(num_classes: usize, feature_dim: usize, annotator_dim: usize) -> Self {
        Self {
            num_classes,
            feature_dim,
            annotator_dim,
            noise_dim: 8,
            embed_dim: 32,
            class_embed_dim: 16,
            classifier_hidden: 128,
            scorer_hidden: (64, 128),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetOptions {
    pub lca_enabled: bool,
    /// Feed instance features to the generator (off for the `U` ablation).
    pub generator_uses_instance: bool,
    /// Feed annotator features to the generator (off for the `I` ablation).
    pub generator_uses_annotator: bool,
    /// Dropout rate on the classifier's hidden layer.
    pub dropout: f64,
}

impl Default for NetOptions {
    fn default() -> Self {
        Self {
            lca_enabled: true,
            generator_uses_instance: true,
            generator_uses_annotator: true,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierParams {
    pub hidden: Dense,
    pub output: Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorerParams {
    pub layer1: Dense,
    pub layer2: Dense,
    pub output: Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorParams {
    pub annotator_encoder: Dense,
    pub instance_encoder: Dense,
    /// Per-class bilinear matrices stacked into `(C·m)×m`.
    pub class_matrices: ParamId,
    /// Shared right factor `W` of the LCA decoder, `m×m`.
    pub lca_mix: ParamId,
}

/// The auxiliary network. Its instance and annotator encoders are the
/// discriminator's, so only the class embedding and scorer live here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuxParams {
    pub class_embedding: Dense,
    pub scorer: ScorerParams,
}

/// Classifier, generator, discriminator and auxiliary network in one
/// parameter store, plus the label co-occurrence graph.
#[derive(Debug, Clone)]
pub struct NetworkBundle {
    pub store: ParamStore,
    pub dims: NetDims,
    pub options: NetOptions,
    pub classifier: ClassifierParams,
    pub generator: ScorerParams,
    pub discriminator: DiscriminatorParams,
    pub aux: AuxParams,
    pub adjacency: Option<CoocAdjacency>,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sized above")
}

fn dense(store: &mut ParamStore, rng: &mut impl Rng, name: &str, i: usize, o: usize) -> Dense {
    Dense {
        weight: store.add(format!("{name}.weight"), glorot(rng, i, o)),
        bias: store.add(format!("{name}.bias"), Tensor::zeros(&[o])),
    }
}

fn scorer(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    name: &str,
    input: usize,
    hidden: (usize, usize),
    output: usize,
) -> ScorerParams {
    ScorerParams {
        layer1: dense(store, rng, &format!("{name}.layer1"), input, hidden.0),
        layer2: dense(store, rng, &format!("{name}.layer2"), hidden.0, hidden.1),
        output: dense(store, rng, &format!("{name}.output"), hidden.1, output),
    }
}

impl NetworkBundle {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        dims: NetDims,
        options: NetOptions,
        adjacency: Option<CoocAdjacency>,
        seed: u64,
    ) -> Result<Self> {
        if options.lca_enabled && adjacency.is_none() {
            return Err(Error::MissingAdjacency);
        }
        if let Some(adj) = &adjacency {
            if adj.num_classes() != dims.num_classes {
                return Err(Error::shape(
                    "NetworkBundle",
                    format!(
                        "adjacency over {} classes for a {}-class model",
                        adj.num_classes(),
                        dims.num_classes
                    ),
                ));
            }
        }
        if !(0.0..1.0).contains(&options.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                options.dropout
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = dims.num_classes;
        let m = dims.embed_dim;

        let classifier = ClassifierParams {
            hidden: dense(&mut store, &mut rng, "classifier.hidden", dims.feature_dim, dims.classifier_hidden),
            output: dense(&mut store, &mut rng, "classifier.output", dims.classifier_hidden, c),
        };
        let generator = scorer(
            &mut store,
            &mut rng,
            "generator",
            generator_input_width(&dims, &options),
            dims.scorer_hidden,
            c,
        );
        let mut mats = Vec::with_capacity(c * m * m);
        for _ in 0..c {
            mats.extend(glorot(&mut rng, m, m).into_data());
        }
        let discriminator = DiscriminatorParams {
            annotator_encoder: dense(&mut store, &mut rng, "discriminator.annotator_encoder", dims.annotator_dim, m),
            instance_encoder: dense(&mut store, &mut rng, "discriminator.instance_encoder", dims.feature_dim, m),
            class_matrices: store.add(
                "discriminator.class_matrices",
                Tensor::matrix(c * m, m, mats).expect("sized above"),
            ),
            lca_mix: store.add("discriminator.lca_mix", glorot(&mut rng, m, m)),
        };
        let aux = AuxParams {
            class_embedding: dense(&mut store, &mut rng, "aux.class_embedding", m * m, dims.class_embed_dim),
            scorer: scorer(
                &mut store,
                &mut rng,
                "aux",
                2 * m + dims.class_embed_dim,
                dims.scorer_hidden,
                c,
            ),
        };
        Ok(Self {
            store,
            dims,
            options,
            classifier,
            generator,
            discriminator,
            aux,
            adjacency,
        })
    }

    pub fn classifier_ids(&self) -> Vec<ParamId> {
        let p = &self.classifier;
        vec![p.hidden.weight, p.hidden.bias, p.output.weight, p.output.bias]
    }

    pub fn generator_ids(&self) -> Vec<ParamId> {
        scorer_ids(&self.generator)
    }

    pub fn discriminator_ids(&self) -> Vec<ParamId> {
        let d = &self.discriminator;
        let mut ids = vec![
            d.annotator_encoder.weight,
            d.annotator_encoder.bias,
            d.instance_encoder.weight,
            d.instance_encoder.bias,
            d.class_matrices,
        ];
        if self.options.lca_enabled {
            ids.push(d.lca_mix);
        }
        ids
    }

    /// Parameters owned by the auxiliary network (excluding the shared
    /// encoders).
    pub fn aux_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.aux.class_embedding.weight, self.aux.class_embedding.bias];
        ids.extend(scorer_ids(&self.aux.scorer));
        ids
    }

    /// Zeroes the output layers of all four scorers, making every output
    /// distribution uniform and every discriminator score 0.5 (the class
    /// matrices are zeroed too).
    pub fn zero_output_layers(&mut self) {
        let out_ids = [
            self.classifier.output.weight,
            self.classifier.output.bias,
            self.generator.output.weight,
            self.generator.output.bias,
            self.aux.scorer.output.weight,
            self.aux.scorer.output.bias,
            self.discriminator.class_matrices,
        ];
        for id in out_ids {
            self.store.value_mut(id).fill(0.0);
        }
    }

    /// Copies the classifier's parameters from `other`.
    pub fn copy_classifier_from(&mut self, other: &NetworkBundle) -> Result<()> {
        for (dst, src) in self.classifier_ids().into_iter().zip(other.classifier_ids()) {
            self.store.set_value(dst, other.store.value(src).clone())?;
        }
        Ok(())
    }

    pub fn copy_params_from(&mut self, other: &NetworkBundle, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            self.store.set_value(id, other.store.value(id).clone())?;
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a hash of the bit patterns of `ids`.
    pub fn param_hash(&self, ids: &[ParamId]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &id in ids {
            for v in self.store.value(id).data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub(crate) fn propagation(&self) -> Result<&Tensor> {
        self.adjacency
            .as_ref()
            .map(CoocAdjacency::propagation)
            .ok_or(Error::MissingAdjacency)
    }
}

fn scorer_ids(s: &ScorerParams) -> Vec<ParamId> {
    vec![
        s.layer1.weight,
        s.layer1.bias,
        s.layer2.weight,
        s.layer2.bias,
        s.output.weight,
        s.output.bias,
    ]
}

pub(crate) fn generator_input_width(dims: &NetDims, options: &NetOptions) -> usize {
    let mut w = dims.num_classes + dims.noise_dim;
    if options.generator_uses_instance {
        w += dims.feature_dim;
    }
    if options.generator_uses_annotator {
        w += dims.annotator_dim;
    }
    w
}
