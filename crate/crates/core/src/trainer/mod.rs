//! Pretraining, the adversarial epoch loop with counterfactual updates, the
//! majority-vote and crowd-layer baselines, and annotation export.

mod config;
mod epoch;
mod export;
mod pretrain;

pub use config::{MuPolicy, TrainConfig, Variant};
pub use epoch::{
    log_generated, recompute_logging_probs, run_epoch, score_logged, select_for_discriminator,
    update_discriminator, LoggedEpoch, Scores,
};
pub use export::{augmented_csv, augmented_dataset, export_augmented, AugmentedAnnotation};
pub use pretrain::{pretrain_dl_cl, pretrain_gen_disc, train_supervised};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{build_cooccurrence, majority_vote, CrowdDataset, Split};
use crate::diffcore::{AdamConfig, AdamState, Graph, NodeId, ParamId, Tensor};
use crate::error::{Error, Result};
use crate::evalsuite::{accuracy, EpochRecord, RunReport};
use crate::nets::{NetDims, NetOptions, NetworkBundle};

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub bundle: NetworkBundle,
    pub opt_classifier: AdamState,
    pub opt_generator: AdamState,
    /// Shared by the discriminator and the auxiliary network.
    pub opt_discriminator: AdamState,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    /// Fresh networks and optimizers. The parameter initialization and the
    /// training stream are both derived from `cfg.seed`.
    pub fn new(ds: &CrowdDataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut dims = NetDims::new(ds.num_classes(), ds.feature_dim(), ds.annotator_dim());
        dims.noise_dim = cfg.noise_dim;
        let options = NetOptions {
            lca_enabled: cfg.lca,
            generator_uses_instance: cfg.generator_uses_instance,
            generator_uses_annotator: cfg.generator_uses_annotator,
            dropout: cfg.dropout,
        };
        let adjacency = cfg.lca.then(|| build_cooccurrence(ds));
        let bundle = NetworkBundle::new(dims, options, adjacency, cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            opt_classifier: AdamState::for_params(
                AdamConfig::with_lr(cfg.lr_classifier),
                &bundle.store,
                &bundle.classifier_ids(),
            ),
            opt_generator: AdamState::for_params(
                AdamConfig::with_lr(cfg.lr_generator),
                &bundle.store,
                &bundle.generator_ids(),
            ),
            opt_discriminator: AdamState::for_params(
                AdamConfig::with_lr(cfg.lr_discriminator),
                &bundle.store,
                &discriminator_aux_ids(&bundle),
            ),
            bundle,
            rng,
            epoch: 0,
            history: Vec::new(),
        })
    }
}

pub(crate) fn discriminator_aux_ids(b: &NetworkBundle) -> Vec<ParamId> {
    let mut ids = b.discriminator_ids();
    ids.extend(b.aux_ids());
    ids
}

/// One optimizer step on the loss built by `build`; returns the loss.
pub(crate) fn descend(
    bundle: &mut NetworkBundle,
    opt: &mut AdamState,
    ids: &[ParamId],
    epoch: usize,
    what: &str,
    build: impl FnOnce(&NetworkBundle, &mut Graph) -> Result<NodeId>,
) -> Result<f64> {
    let mut g = Graph::with_trainable(ids);
    let loss = build(bundle, &mut g).map_err(|e| match e {
        Error::NonFinite(_) => Error::Divergence {
            what: what.to_string(),
            epoch,
        },
        other => other,
    })?;
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Divergence {
            what: what.to_string(),
            epoch,
        });
    }
    bundle.store.zero_grads(ids);
    g.backward(loss, &mut bundle.store)?;
    opt.step_store(&mut bundle.store, ids).map_err(|_| Error::Divergence {
        what: what.to_string(),
        epoch,
    })?;
    Ok(value)
}

/// Features and truth of one split, if the split is non-empty and labeled.
pub fn labeled_split(ds: &CrowdDataset, split: Split) -> Option<(Tensor, Vec<usize>)> {
    let truth = ds.ground_truth()?;
    let idx = ds.split_indices(split);
    if idx.is_empty() {
        return None;
    }
    let labels = idx.iter().map(|&i| truth[i]).collect();
    Some((ds.instance_features().select_rows(&idx), labels))
}

/// Train, validation and test accuracy where ground truth exists.
pub fn split_accuracies(bundle: &NetworkBundle, ds: &CrowdDataset) -> Result<[Option<f64>; 3]> {
    let mut out = [None; 3];
    for (slot, split) in out.iter_mut().zip([Split::Train, Split::Validation, Split::Test]) {
        if let Some((x, y)) = labeled_split(ds, split) {
            *slot = Some(accuracy(bundle, &x, &y)?);
        }
    }
    Ok(out)
}

pub(crate) fn accuracy_record(bundle: &NetworkBundle, ds: &CrowdDataset, epoch: usize) -> Result<EpochRecord> {
    let [train, val, test] = split_accuracies(bundle, ds)?;
    Ok(EpochRecord {
        epoch,
        train_accuracy: train,
        validation_accuracy: val,
        test_accuracy: test,
        ..EpochRecord::default()
    })
}

/// A trained model and its run report.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The networks at the best-validation epoch.
    pub bundle: NetworkBundle,
    pub report: RunReport,
}

fn method_label(cfg: &TrainConfig) -> String {
    if cfg.one_step {
        return "crowding-one-step".into();
    }
    cfg.variant()
        .map_or_else(|| "crowding-custom".into(), |v| v.as_str().to_string())
}

/// Crowd-layer pretraining, generator/discriminator pretraining, then
/// `cfg.epochs` adversarial epochs. Returns the best-validation networks;
/// epoch 0 of the history is the pretrained classifier.
pub fn train_crowding(ds: &CrowdDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut state = TrainState::new(ds, cfg)?;
    pretrain_dl_cl(&mut state, ds, cfg)?;
    state.history.push(accuracy_record(&state.bundle, ds, 0)?);
    pretrain_gen_disc(&mut state, ds, cfg)?;
    let mut best = (state.history[0].validation_accuracy, state.bundle.clone());
    for _ in 0..cfg.epochs {
        let rec = run_epoch(&mut state, ds, cfg)?;
        if let (Some(v), Some(b)) = (rec.validation_accuracy, best.0) {
            if v > b {
                best = (Some(v), state.bundle.clone());
            }
        } else if rec.validation_accuracy.is_none() {
            best = (None, state.bundle.clone());
        }
    }
    let report = RunReport::new(method_label(cfg), cfg.seed, cfg.to_kv(), state.history);
    Ok(TrainOutcome {
        bundle: best.1,
        report,
    })
}

/// The crowd-layer baseline: the pretraining stage on its own.
pub fn train_dl_cl(ds: &CrowdDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut state = TrainState::new(ds, cfg)?;
    let history = pretrain_dl_cl(&mut state, ds, cfg)?;
    let report = RunReport::new("dl-cl", cfg.seed, cfg.to_kv(), history);
    Ok(TrainOutcome {
        bundle: state.bundle,
        report,
    })
}

/// Supervised training on majority-vote labels of the training instances.
pub fn train_dl_mv(ds: &CrowdDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut state = TrainState::new(ds, cfg)?;
    let votes = majority_vote(ds);
    let (instances, labels): (Vec<usize>, Vec<usize>) = ds
        .split_indices(Split::Train)
        .into_iter()
        .filter_map(|n| votes[n].map(|y| (n, y)))
        .unzip();
    let history = train_supervised(&mut state, ds, cfg, &instances, &labels)?;
    let report = RunReport::new("dl-mv", cfg.seed, cfg.to_kv(), history);
    Ok(TrainOutcome {
        bundle: state.bundle,
        report,
    })
}

/// Methods selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Method {
    Crowding,
    DlCl,
    DlMv,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Crowding => "crowding",
            Method::DlCl => "dl-cl",
            Method::DlMv => "dl-mv",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "crowding" => Ok(Method::Crowding),
            "dl-cl" | "dlcl" => Ok(Method::DlCl),
            "dl-mv" | "dlmv" => Ok(Method::DlMv),
            _ => Err(Error::Config(format!(
                "unknown method `{s}` (expected crowding, dl-cl or dl-mv)"
            ))),
        }
    }
}

pub fn train_method(method: Method, ds: &CrowdDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    match method {
        Method::Crowding => train_crowding(ds, cfg),
        Method::DlCl => train_dl_cl(ds, cfg),
        Method::DlMv => train_dl_mv(ds, cfg),
    }
}
