use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::epoch::{log_generated, select_for_discriminator, update_discriminator};
use super::{accuracy_record, descend, TrainConfig, TrainState};
use crate::data::{CrowdDataset, Split};
use crate::diffcore::{AdamConfig, AdamState, Tensor};
use crate::error::Result;
use crate::evalsuite::{best_epoch, EpochRecord};
use crate::nets::{classifier_probs, forward, NetworkBundle};

/// Restores the classifier of the best-validation record.
fn keep_best(state: &mut TrainState, snapshots: Vec<NetworkBundle>, history: &[EpochRecord]) -> Result<()> {
    let best = best_epoch(history);
    if let Some(b) = snapshots.get(best) {
        state.bundle.copy_classifier_from(b)?;
    }
    Ok(())
}

fn minibatches(len: usize, batch: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Cross-entropy training of the classifier on `(instances[i], labels[i])`
/// for `cfg.pretrain_epochs` epochs, keeping the best-validation classifier.
/// Record 0 is the starting point.
pub fn train_supervised(
    state: &mut TrainState,
    ds: &CrowdDataset,
    cfg: &TrainConfig,
    instances: &[usize],
    labels: &[usize],
) -> Result<Vec<EpochRecord>> {
    let ids = state.bundle.classifier_ids();
    let mut opt = AdamState::for_params(AdamConfig::with_lr(cfg.lr_pretrain), &state.bundle.store, &ids);
    let hidden = state.bundle.dims.classifier_hidden;
    let mut history = vec![accuracy_record(&state.bundle, ds, 0)?];
    let mut snapshots = vec![state.bundle.clone()];
    for epoch in 1..=cfg.pretrain_epochs {
        for batch in minibatches(instances.len(), cfg.batch_size, &mut state.rng) {
            let inst: Vec<usize> = batch.iter().map(|&i| instances[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mask = forward::dropout_mask(&mut state.rng, inst.len(), hidden, cfg.dropout);
            let x = ds.instance_features().select_rows(&inst);
            descend(&mut state.bundle, &mut opt, &ids, epoch, "supervised loss", |b, g| {
                let xn = g.constant(x)?;
                let logits = forward::classifier_logits(g, b, xn, Some(mask))?;
                let lp = g.log_softmax_rows(logits)?;
                let picked = g.gather_cols(lp, ys)?;
                let m = g.mean(picked)?;
                g.scale(m, -1.0)
            })?;
        }
        history.push(accuracy_record(&state.bundle, ds, epoch)?);
        snapshots.push(state.bundle.clone());
    }
    keep_best(state, snapshots, &history)?;
    Ok(history)
}

/// Trains the classifier through per-annotator crowd layers
/// `softmax(ẑ·W_r)` (each `W_r` starting at the identity) against the raw
/// annotations. The crowd layers are discarded afterwards.
pub fn pretrain_dl_cl(state: &mut TrainState, ds: &CrowdDataset, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    let c = ds.num_classes();
    let r = ds.num_annotators();
    let mut scratch = state.bundle.clone();
    let mut eye = Vec::with_capacity(r * c * c);
    for _ in 0..r {
        eye.extend(Tensor::eye(c).into_data());
    }
    let crowd = scratch.store.add("crowd_layer", Tensor::matrix(r * c, c, eye)?);
    let mut ids = scratch.classifier_ids();
    ids.push(crowd);
    let mut opt = AdamState::for_params(AdamConfig::with_lr(cfg.lr_pretrain), &scratch.store, &ids);
    let annotations: Vec<_> = ds
        .annotations()
        .iter()
        .filter(|a| ds.splits()[a.instance] == Split::Train)
        .copied()
        .collect();
    let hidden = scratch.dims.classifier_hidden;

    let mut history = vec![accuracy_record(&scratch, ds, 0)?];
    let mut snapshots = vec![scratch.clone()];
    for epoch in 1..=cfg.pretrain_epochs {
        for batch in minibatches(annotations.len(), cfg.batch_size, &mut state.rng) {
            let inst: Vec<usize> = batch.iter().map(|&i| annotations[i].instance).collect();
            let who: Vec<usize> = batch.iter().map(|&i| annotations[i].annotator).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| annotations[i].label).collect();
            let mask = forward::dropout_mask(&mut state.rng, inst.len(), hidden, cfg.dropout);
            let x = ds.instance_features().select_rows(&inst);
            descend(&mut scratch, &mut opt, &ids, epoch, "crowd-layer loss", |b, g| {
                let xn = g.constant(x)?;
                let logits = forward::classifier_logits(g, b, xn, Some(mask))?;
                let z = g.softmax_rows(logits)?;
                let w = g.param(&b.store, crowd)?;
                let per_annotator = g.row_mat_gather(z, w, who)?;
                let lp = g.log_softmax_rows(per_annotator)?;
                let picked = g.gather_cols(lp, ys)?;
                let m = g.mean(picked)?;
                g.scale(m, -1.0)
            })?;
        }
        history.push(accuracy_record(&scratch, ds, epoch)?);
        snapshots.push(scratch.clone());
    }
    keep_best(state, snapshots, &history)?;
    Ok(history)
}

/// Maximum-likelihood pretraining of the generator on the authentic
/// annotations with the classifier frozen, then a few rounds of
/// discriminator and auxiliary training against the generator's samples.
pub fn pretrain_gen_disc(state: &mut TrainState, ds: &CrowdDataset, cfg: &TrainConfig) -> Result<()> {
    let ids = state.bundle.generator_ids();
    let mut opt = AdamState::for_params(AdamConfig::with_lr(cfg.lr_pretrain), &state.bundle.store, &ids);
    let zhat = classifier_probs(&state.bundle, ds.instance_features())?;
    let k = state.bundle.dims.noise_dim;
    let annotations = ds.annotations().to_vec();
    for epoch in 1..=cfg.generator_pretrain_epochs {
        for batch in minibatches(annotations.len(), cfg.batch_size, &mut state.rng) {
            let inst: Vec<usize> = batch.iter().map(|&i| annotations[i].instance).collect();
            let who: Vec<usize> = batch.iter().map(|&i| annotations[i].annotator).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| annotations[i].label).collect();
            let noise: Vec<f64> = (0..inst.len() * k)
                .map(|_| StandardNormal.sample(&mut state.rng))
                .collect();
            let noise = Tensor::matrix(inst.len(), k, noise)?;
            let x = ds.instance_features().select_rows(&inst);
            let e = ds.annotator_features().select_rows(&who);
            let z = zhat.select_rows(&inst);
            descend(&mut state.bundle, &mut opt, &ids, epoch, "generator likelihood", |b, g| {
                let xn = b.options.generator_uses_instance.then(|| g.constant(x)).transpose()?;
                let en = b.options.generator_uses_annotator.then(|| g.constant(e)).transpose()?;
                let zn = g.constant(z)?;
                let nn = g.constant(noise)?;
                let logits = forward::generator_logits(g, b, xn, en, zn, nn)?;
                let lp = g.log_softmax_rows(logits)?;
                let picked = g.gather_cols(lp, ys)?;
                let m = g.mean(picked)?;
                g.scale(m, -1.0)
            })?;
        }
    }
    let counts = ds.annotator_counts();
    for _ in 0..cfg.discriminator_pretrain_epochs {
        let logged = log_generated(&state.bundle, ds, cfg, &mut state.rng)?;
        let owners: Vec<usize> = logged.samples.iter().map(|s| s.annotator).collect();
        let selected = select_for_discriminator(
            &owners,
            &logged.entropies,
            &counts,
            cfg.entropy_selection,
            &mut state.rng,
        );
        update_discriminator(state, ds, cfg, &logged, &selected)?;
    }
    Ok(())
}
