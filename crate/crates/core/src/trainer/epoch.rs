use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{accuracy_record, descend, discriminator_aux_ids, labeled_split, MuPolicy, TrainConfig, TrainState};
use crate::data::{sample_categorical, CrowdDataset, Split};
use crate::diffcore::{entropy_unchecked, normalized_entropy, AdamState, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::evalsuite::{accuracy, auc, EpochRecord};
use crate::nets::{classifier_probs, forward, generator_probs, score_triplets, NetworkBundle};
use crate::objectives::{crm_objective_node, discriminator_loss, discriminator_loss_node, per_annotation_delta, LoggedSample};

/// Rows per forward pass when sweeping the pair grid.
const CHUNK: usize = 4096;
/// Entropy floor in the selection weights `1 / max(H, ENTROPY_FLOOR)`.
const ENTROPY_FLOOR: f64 = 1e-6;

/// One epoch's generated annotations under the frozen logging policy.
#[derive(Debug, Clone)]
pub struct LoggedEpoch {
    pub samples: Vec<LoggedSample>,
    /// Entropy of the distribution each sample was drawn from.
    pub entropies: Vec<f64>,
    /// Eval-mode classifier output for every instance at logging time.
    pub zhat: Tensor,
}

fn noise_tensor(samples: &[&LoggedSample], k: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(samples.len() * k);
    for s in samples {
        data.extend_from_slice(&s.noise);
    }
    Tensor::matrix(samples.len(), k, data)
}

/// Generator distributions for `samples` with the classifier output fixed
/// to `zhat`, computed in chunks.
fn sample_distributions(
    bundle: &NetworkBundle,
    ds: &CrowdDataset,
    zhat: &Tensor,
    samples: &[&LoggedSample],
) -> Result<Tensor> {
    let c = bundle.dims.num_classes;
    let mut out = Vec::with_capacity(samples.len() * c);
    for chunk in samples.chunks(CHUNK) {
        let inst: Vec<usize> = chunk.iter().map(|s| s.instance).collect();
        let who: Vec<usize> = chunk.iter().map(|s| s.annotator).collect();
        let probs = generator_probs(
            bundle,
            &ds.instance_features().select_rows(&inst),
            &ds.annotator_features().select_rows(&who),
            &zhat.select_rows(&inst),
            &noise_tensor(chunk, bundle.dims.noise_dim)?,
        )?;
        out.extend(probs.into_data());
    }
    Tensor::matrix(samples.len(), c, out)
}

/// Snapshots the logging policy and draws one generated annotation per
/// (training instance, annotator) pair, or per pair of a uniform subsample
/// of `cfg.grid_cap` pairs when the grid is larger.
pub fn log_generated(
    bundle: &NetworkBundle,
    ds: &CrowdDataset,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<LoggedEpoch> {
    let train = ds.split_indices(Split::Train);
    let r = ds.num_annotators();
    let total = train.len() * r;
    let pairs: Vec<usize> = if total > cfg.grid_cap {
        let mut v = sample(rng, total, cfg.grid_cap).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..total).collect()
    };
    let zhat = classifier_probs(bundle, ds.instance_features())?;
    let k = bundle.dims.noise_dim;
    let mut samples: Vec<LoggedSample> = pairs
        .iter()
        .map(|&p| {
            let instance = train[p / r];
            LoggedSample {
                instance,
                annotator: p % r,
                label: 0,
                g0: 0.0,
                authentic: false,
                latent: sample_categorical(zhat.row(instance), rng),
                noise: (0..k).map(|_| StandardNormal.sample(rng)).collect(),
            }
        })
        .collect();
    let refs: Vec<&LoggedSample> = samples.iter().collect();
    let probs = sample_distributions(bundle, ds, &zhat, &refs)?;
    let mut entropies = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter_mut().enumerate() {
        let row = probs.row(i);
        s.label = sample_categorical(row, rng);
        s.g0 = row[s.label];
        entropies.push(entropy_unchecked(row));
    }
    Ok(LoggedEpoch {
        samples,
        entropies,
        zhat,
    })
}

/// Recomputes each logged sample's probability under `bundle` from its
/// recorded noise and the recorded classifier output.
pub fn recompute_logging_probs(bundle: &NetworkBundle, ds: &CrowdDataset, logged: &LoggedEpoch) -> Result<Vec<f64>> {
    let refs: Vec<&LoggedSample> = logged.samples.iter().collect();
    let probs = sample_distributions(bundle, ds, &logged.zhat, &refs)?;
    Ok(refs.iter().enumerate().map(|(i, s)| probs.get2(i, s.label)).collect())
}

/// For each annotator, draws as many generated samples as the annotator has
/// authentic annotations, without replacement and with probability
/// proportional to `1 / max(H, 1e-6)` (uniform when `entropy_weighting` is
/// off). `owners[i]` is the annotator of sample `i`. Returns sorted sample
/// indices.
///
/// Drawing uses exponential keys `ln(u)·max(H, 1e-6)` and keeps the largest,
/// which matches sequential weighted draws without replacement.
pub fn select_for_discriminator(
    owners: &[usize],
    entropies: &[f64],
    authentic_counts: &[usize],
    entropy_weighting: bool,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut by_annotator: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &a) in owners.iter().enumerate() {
        by_annotator.entry(a).or_default().push(i);
    }
    let mut chosen = Vec::new();
    for (a, candidates) in by_annotator {
        let want = authentic_counts.get(a).copied().unwrap_or(0);
        if want == 0 {
            continue;
        }
        if want >= candidates.len() {
            chosen.extend(candidates);
            continue;
        }
        let mut keyed: Vec<(f64, usize)> = candidates
            .iter()
            .map(|&i| {
                let u = 1.0 - rng.random::<f64>();
                let scale = if entropy_weighting {
                    entropies[i].max(ENTROPY_FLOOR)
                } else {
                    1.0
                };
                (u.ln() * scale, i)
            })
            .collect();
        keyed.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        chosen.extend(keyed[..want].iter().map(|&(_, i)| i));
    }
    chosen.sort_unstable();
    chosen
}

/// Discriminator diagnostics after its update.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct DiscStats {
    pub value_term: Option<f64>,
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub clamp_hits: usize,
}

/// `cfg.inner_passes` minibatch passes of joint updates of the discriminator (authentic versus
/// selected generated annotations) and the auxiliary network (recovering
/// each selected sample's latent class).
pub fn update_discriminator(
    state: &mut TrainState,
    ds: &CrowdDataset,
    cfg: &TrainConfig,
    logged: &LoggedEpoch,
    selected: &[usize],
) -> Result<()> {
    update_discriminator_stats(state, ds, cfg, logged, selected).map(|_| ())
}

pub(crate) fn update_discriminator_stats(
    state: &mut TrainState,
    ds: &CrowdDataset,
    cfg: &TrainConfig,
    logged: &LoggedEpoch,
    selected: &[usize],
) -> Result<DiscStats> {
    let auth: Vec<_> = ds
        .annotations()
        .iter()
        .filter(|a| ds.splits()[a.instance] == Split::Train)
        .collect();
    if auth.is_empty() || selected.is_empty() {
        return Ok(DiscStats::default());
    }
    let ai: Vec<usize> = auth.iter().map(|a| a.instance).collect();
    let ar: Vec<usize> = auth.iter().map(|a| a.annotator).collect();
    let ay: Vec<usize> = auth.iter().map(|a| a.label).collect();
    let gen: Vec<&LoggedSample> = selected.iter().map(|&i| &logged.samples[i]).collect();
    let gi: Vec<usize> = gen.iter().map(|s| s.instance).collect();
    let gr: Vec<usize> = gen.iter().map(|s| s.annotator).collect();
    let gy: Vec<usize> = gen.iter().map(|s| s.label).collect();
    let gz: Vec<usize> = gen.iter().map(|s| s.latent).collect();
    let ids = discriminator_aux_ids(&state.bundle);
    let (x, e) = (ds.instance_features(), ds.annotator_features());
    let b = cfg.batch_size;
    let steps = ai.len().max(gi.len()).div_ceil(b);
    for _ in 0..cfg.inner_passes {
        let mut oa: Vec<usize> = (0..ai.len()).collect();
        let mut og: Vec<usize> = (0..gi.len()).collect();
        oa.shuffle(&mut state.rng);
        og.shuffle(&mut state.rng);
        for k in 0..steps {
            // The shorter list wraps around.
            let ka: Vec<usize> = (k * b..(k + 1) * b).map(|j| oa[j % oa.len()]).collect();
            let kg: Vec<usize> = (k * b..(k + 1) * b).map(|j| og[j % og.len()]).collect();
            let pick = |v: &[usize], o: &[usize]| o.iter().map(|&j| v[j]).collect::<Vec<_>>();
            let (bai, bar, bay) = (pick(&ai, &ka), pick(&ar, &ka), pick(&ay, &ka));
            let (bgi, bgr, bgy, bgz) = (pick(&gi, &kg), pick(&gr, &kg), pick(&gy, &kg), pick(&gz, &kg));
            descend(&mut state.bundle, &mut state.opt_discriminator, &ids, state.epoch, "discriminator loss", |bd, g| {
                let xt = g.constant(x.clone())?;
                let et = g.constant(e.clone())?;
                let da = forward::discriminator_forward(g, bd, xt, et, &bai, &bar, &bay)?;
                let dg = forward::discriminator_forward(g, bd, xt, et, &bgi, &bgr, &bgy)?;
                let loss = discriminator_loss_node(g, da.prob, dg.prob, cfg.beta)?;
                if cfg.lambda == 0.0 {
                    return Ok(loss);
                }
                let q = forward::aux_logits(g, bd, &dg, &bgy)?;
                let lq = g.log_softmax_rows(q)?;
                let picked = g.gather_cols(lq, bgz)?;
                let info = g.mean(picked)?;
                let info = g.scale(info, -cfg.lambda)?;
                g.add(loss, info)
            })?;
        }
    }
    let (pa, _) = score_triplets(&state.bundle, x, e, &ai, &ar, &ay)?;
    let (pg, _) = score_triplets(&state.bundle, x, e, &gi, &gr, &gy)?;
    let v = discriminator_loss(&pa, &pg, 0.0)?;
    let right = pa.iter().filter(|&&d| d > 0.5).count() + pg.iter().filter(|&&d| d < 0.5).count();
    Ok(DiscStats {
        value_term: Some(-v.value),
        auc: Some(auc(&pa, &pg)?),
        accuracy: Some(right as f64 / (pa.len() + pg.len()) as f64),
        clamp_hits: v.clamp_hits,
    })
}

/// Per-sample discriminator and auxiliary evaluations of a logged epoch.
#[derive(Debug, Clone, Default)]
pub struct Scores {
    pub discriminator: Vec<f64>,
    /// `log Q(latent | label)` per sample.
    pub aux_log_prob: Vec<f64>,
    /// `log(1 − D) − λ·log Q`.
    pub deltas: Vec<f64>,
    /// `log(1 − D)`, the classifier's loss.
    pub generator_losses: Vec<f64>,
    pub clamp_hits: usize,
}

pub fn score_logged(bundle: &NetworkBundle, ds: &CrowdDataset, logged: &LoggedEpoch, lambda: f64) -> Result<Scores> {
    let mut s = Scores::default();
    for chunk in logged.samples.chunks(CHUNK) {
        let inst: Vec<usize> = chunk.iter().map(|x| x.instance).collect();
        let who: Vec<usize> = chunk.iter().map(|x| x.annotator).collect();
        let ys: Vec<usize> = chunk.iter().map(|x| x.label).collect();
        let (d, logq) = score_triplets(bundle, ds.instance_features(), ds.annotator_features(), &inst, &who, &ys)?;
        for (i, sample) in chunk.iter().enumerate() {
            let lq = logq.get2(i, sample.latent);
            let delta = per_annotation_delta(d[i], lq, lambda)?;
            let lg = per_annotation_delta(d[i], 0.0, 0.0)?;
            s.clamp_hits += delta.clamp_hits;
            s.deltas.push(delta.value);
            s.generator_losses.push(lg.value);
            s.aux_log_prob.push(lq);
            s.discriminator.push(d[i]);
        }
    }
    Ok(s)
}

/// Where the generator's `ẑ` input comes from in a CRM step.
#[derive(Clone, Copy)]
enum Latent<'a> {
    /// The logging-time classifier output, held fixed.
    Snapshot(&'a Tensor),
    /// The current classifier, differentiable.
    Live,
}

/// `G_θ(y)` for each sample of `batch` as a vector node.
fn target_probs(
    g: &mut Graph,
    b: &NetworkBundle,
    ds: &CrowdDataset,
    logged: &LoggedEpoch,
    batch: &[usize],
    latent: Latent<'_>,
) -> Result<NodeId> {
    let samples: Vec<&LoggedSample> = batch.iter().map(|&i| &logged.samples[i]).collect();
    let inst: Vec<usize> = samples.iter().map(|s| s.instance).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let z = match latent {
        Latent::Snapshot(z) => g.constant(z.select_rows(&inst))?,
        Latent::Live => {
            let mut uniq = inst.clone();
            uniq.sort_unstable();
            uniq.dedup();
            let pos: Vec<usize> = inst
                .iter()
                .map(|n| uniq.binary_search(n).expect("present"))
                .collect();
            let xu = g.constant(ds.instance_features().select_rows(&uniq))?;
            let logits = forward::classifier_logits(g, b, xu, None)?;
            let p = g.softmax_rows(logits)?;
            g.select_rows(p, pos)?
        }
    };
    let x = if b.options.generator_uses_instance {
        Some(g.constant(ds.instance_features().select_rows(&inst))?)
    } else {
        None
    };
    let e = if b.options.generator_uses_annotator {
        let who: Vec<usize> = samples.iter().map(|s| s.annotator).collect();
        Some(g.constant(ds.annotator_features().select_rows(&who))?)
    } else {
        None
    };
    let noise = g.constant(noise_tensor(&samples, b.dims.noise_dim)?)?;
    let logits = forward::generator_logits(g, b, x, e, z, noise)?;
    let p = g.softmax_rows(logits)?;
    g.gather_cols(p, labels)
}

/// `passes` shuffled sweeps over `pool` in batches of `size` (0 for the
/// whole pool at once).
fn minibatch_passes(pool: &[usize], size: usize, passes: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let size = if size == 0 { pool.len().max(1) } else { size };
    let mut out = Vec::new();
    for _ in 0..passes {
        let mut order = pool.to_vec();
        order.shuffle(rng);
        out.extend(order.chunks(size).map(<[usize]>::to_vec));
    }
    out
}

fn mean_over(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

/// `μ` either fixed or as a multiple of the mean loss of the set it is used
/// on.
#[derive(Clone, Copy)]
enum MuChoice {
    Absolute(f64),
    Multiplier(f64),
}

impl MuChoice {
    fn resolve(self, losses: &[f64], idx: &[usize]) -> f64 {
        match self {
            MuChoice::Absolute(m) => m,
            MuChoice::Multiplier(k) => k * mean_over(losses, idx),
        }
    }
}

/// The parts of the state touched by the generator and classifier updates.
#[derive(Clone)]
struct PolicyState<R: Rng + Clone> {
    bundle: NetworkBundle,
    opt_generator: AdamState,
    opt_classifier: AdamState,
    rng: R,
}

struct EpochInputs<'a> {
    ds: &'a CrowdDataset,
    cfg: &'a TrainConfig,
    logged: &'a LoggedEpoch,
    scores: &'a Scores,
    low: &'a [usize],
    high: &'a [usize],
    epoch: usize,
}

/// CRM updates of the generator on low-entropy samples with `ẑ` held at
/// its logged value.
fn generator_step<R: Rng + Clone>(p: &mut PolicyState<R>, inp: &EpochInputs<'_>, mu: MuChoice) -> Result<()> {
    let cfg = inp.cfg;
    if inp.low.is_empty() {
        return Ok(());
    }
    let mu_g = mu.resolve(&inp.scores.deltas, inp.low);
    let ids = p.bundle.generator_ids();
    for batch in minibatch_passes(inp.low, cfg.crm_batch_size, cfg.inner_passes, &mut p.rng) {
        let samples: Vec<LoggedSample> = batch.iter().map(|&i| inp.logged.samples[i].clone()).collect();
        let deltas: Vec<f64> = batch.iter().map(|&i| inp.scores.deltas[i]).collect();
        descend(&mut p.bundle, &mut p.opt_generator, &ids, inp.epoch, "generator CRM objective", |b, g| {
            let t = target_probs(g, b, inp.ds, inp.logged, &batch, Latent::Snapshot(&inp.logged.zhat))?;
            crm_objective_node(g, t, &samples, &deltas, mu_g)
        })?;
    }
    Ok(())
}

/// CRM updates of the classifier on high-entropy samples through the
/// frozen generator, driven by the discriminator term alone.
fn classifier_step<R: Rng + Clone>(p: &mut PolicyState<R>, inp: &EpochInputs<'_>, mu: MuChoice) -> Result<()> {
    let cfg = inp.cfg;
    if inp.high.is_empty() {
        return Ok(());
    }
    let mu_c = mu.resolve(&inp.scores.generator_losses, inp.high);
    let ids = p.bundle.classifier_ids();
    for batch in minibatch_passes(inp.high, cfg.crm_batch_size, cfg.inner_passes, &mut p.rng) {
        let samples: Vec<LoggedSample> = batch.iter().map(|&i| inp.logged.samples[i].clone()).collect();
        let losses: Vec<f64> = batch.iter().map(|&i| inp.scores.generator_losses[i]).collect();
        descend(&mut p.bundle, &mut p.opt_classifier, &ids, inp.epoch, "classifier CRM objective", |b, g| {
            let t = target_probs(g, b, inp.ds, inp.logged, &batch, Latent::Live)?;
            crm_objective_node(g, t, &samples, &losses, mu_c)
        })?;
    }
    Ok(())
}

fn two_step<R: Rng + Clone>(p: &mut PolicyState<R>, inp: &EpochInputs<'_>, mu: MuChoice) -> Result<()> {
    generator_step(p, inp, mu)?;
    classifier_step(p, inp, mu)
}

/// Classifier and generator updated together on every logged sample.
fn one_step<R: Rng + Clone>(p: &mut PolicyState<R>, inp: &EpochInputs<'_>, mu: MuChoice) -> Result<()> {
    let cfg = inp.cfg;
    let all: Vec<usize> = (0..inp.logged.samples.len()).collect();
    let mu_all = mu.resolve(&inp.scores.deltas, &all);
    let gen_ids = p.bundle.generator_ids();
    let cls_ids = p.bundle.classifier_ids();
    let both: Vec<_> = gen_ids.iter().chain(&cls_ids).copied().collect();
    for batch in minibatch_passes(&all, cfg.crm_batch_size, cfg.inner_passes, &mut p.rng) {
        let samples: Vec<LoggedSample> = batch.iter().map(|&i| inp.logged.samples[i].clone()).collect();
        let deltas: Vec<f64> = batch.iter().map(|&i| inp.scores.deltas[i]).collect();
        let mut g = Graph::with_trainable(&both);
        let t = target_probs(&mut g, &p.bundle, inp.ds, inp.logged, &batch, Latent::Live)?;
        let loss = crm_objective_node(&mut g, t, &samples, &deltas, mu_all)?;
        if !g.scalar(loss).is_finite() {
            return Err(Error::Divergence {
                what: "joint CRM objective".into(),
                epoch: inp.epoch,
            });
        }
        p.bundle.store.zero_grads(&both);
        g.backward(loss, &mut p.bundle.store)?;
        p.opt_generator.step_store(&mut p.bundle.store, &gen_ids)?;
        p.opt_classifier.step_store(&mut p.bundle.store, &cls_ids)?;
    }
    Ok(())
}

/// One adversarial epoch: log, select, update discriminator and auxiliary
/// network, score, split by classifier entropy, update generator then
/// classifier by CRM (or both jointly in one-step mode), record metrics.
pub fn run_epoch(state: &mut TrainState, ds: &CrowdDataset, cfg: &TrainConfig) -> Result<EpochRecord> {
    state.epoch += 1;
    let epoch = state.epoch;
    let mut warnings = Vec::new();

    let logged = log_generated(&state.bundle, ds, cfg, &mut state.rng)?;
    let owners: Vec<usize> = logged.samples.iter().map(|s| s.annotator).collect();
    let counts = ds.annotator_counts();
    let selected = select_for_discriminator(&owners, &logged.entropies, &counts, cfg.entropy_selection, &mut state.rng);
    if selected.len() < counts.iter().sum::<usize>() {
        warnings.push("fewer generated samples than authentic annotations for some annotators".into());
    }
    let disc = update_discriminator_stats(state, ds, cfg, &logged, &selected)?;

    let scores = score_logged(&state.bundle, ds, &logged, cfg.lambda)?;

    let low_instance: Vec<bool> = (0..ds.num_instances())
        .map(|n| normalized_entropy(logged.zhat.row(n)) <= cfg.threshold)
        .collect();
    let (low, high): (Vec<usize>, Vec<usize>) =
        (0..logged.samples.len()).partition(|&i| low_instance[logged.samples[i].instance]);
    let train = ds.split_indices(Split::Train);
    let low_count = train.iter().filter(|&&n| low_instance[n]).count();

    let inputs = EpochInputs {
        ds,
        cfg,
        logged: &logged,
        scores: &scores,
        low: &low,
        high: &high,
        epoch,
    };
    if !cfg.one_step {
        if low.is_empty() {
            warnings.push("no low-entropy instances; generator update skipped".into());
        }
        if high.is_empty() {
            warnings.push("no high-entropy instances; classifier update skipped".into());
        }
    }
    let candidates: Vec<MuChoice> = match &cfg.mu {
        MuPolicy::Fixed(m) => vec![MuChoice::Absolute(*m)],
        MuPolicy::Grid(g) => g.iter().map(|&k| MuChoice::Multiplier(k)).collect(),
    };
    let validation = labeled_split(ds, Split::Validation);
    let start = PolicyState {
        bundle: state.bundle.clone(),
        opt_generator: state.opt_generator.clone(),
        opt_classifier: state.opt_classifier.clone(),
        rng: state.rng.clone(),
    };
    let mut best: Option<(f64, PolicyState<_>, MuChoice)> = None;
    for &mu in &candidates {
        let mut trial = start.clone();
        if cfg.one_step {
            one_step(&mut trial, &inputs, mu)?;
        } else {
            two_step(&mut trial, &inputs, mu)?;
        }
        let score = match (&validation, candidates.len()) {
            (Some((x, y)), n) if n > 1 => accuracy(&trial.bundle, x, y)?,
            _ => 0.0,
        };
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, trial, mu));
        }
    }
    let (_, chosen, mu) = best.expect("at least one candidate");
    state.bundle = chosen.bundle;
    state.opt_generator = chosen.opt_generator;
    state.opt_classifier = chosen.opt_classifier;
    state.rng = chosen.rng;

    let mut rec = accuracy_record(&state.bundle, ds, epoch)?;
    let mean_h = train
        .iter()
        .map(|&n| entropy_unchecked(logged.zhat.row(n)))
        .sum::<f64>()
        / train.len().max(1) as f64;
    if !scores.aux_log_prob.is_empty() {
        rec.info_term = Some(scores.aux_log_prob.iter().sum::<f64>() / scores.aux_log_prob.len() as f64 + mean_h);
        rec.generated_mean_entropy =
            Some(logged.entropies.iter().sum::<f64>() / logged.entropies.len() as f64);
    }
    rec.value_term = disc.value_term;
    rec.discriminator_auc = disc.auc;
    rec.discriminator_accuracy = disc.accuracy;
    rec.clamp_hits = disc.clamp_hits + scores.clamp_hits;
    rec.generated = logged.samples.len();
    rec.selected = selected.len();
    if !selected.is_empty() {
        rec.selected_mean_entropy = Some(mean_over(&logged.entropies, &selected));
    }
    rec.low_entropy_instances = low_count;
    rec.high_entropy_instances = train.len() - low_count;
    rec.mu_multiplier = match mu {
        MuChoice::Multiplier(k) => Some(k),
        MuChoice::Absolute(_) => None,
    };
    rec.warnings = warnings;
    state.history.push(rec.clone());
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn selection_matches_authentic_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let owners: Vec<usize> = (0..60).map(|i| i % 4).collect();
        let entropies: Vec<f64> = (0..60).map(|i| 0.1 + (i % 7) as f64 * 0.2).collect();
        let counts = [3, 0, 15, 1];
        let sel = select_for_discriminator(&owners, &entropies, &counts, true, &mut rng);
        for (a, &want) in counts.iter().enumerate() {
            assert_eq!(sel.iter().filter(|&&i| owners[i] == a).count(), want);
        }
        assert!(sel.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn each_step_leaves_the_other_network_untouched() {
        use crate::data::{synthesize_dataset, SynthConfig};
        use crate::trainer::pretrain::{pretrain_dl_cl, pretrain_gen_disc};
        let syn = SynthConfig {
            num_instances: 80,
            num_annotators: 5,
            ..SynthConfig::default()
        };
        let ds = synthesize_dataset(&syn, 2).unwrap().dataset;
        let cfg = TrainConfig {
            pretrain_epochs: 5,
            generator_pretrain_epochs: 3,
            discriminator_pretrain_epochs: 1,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(&ds, &cfg).unwrap();
        pretrain_dl_cl(&mut state, &ds, &cfg).unwrap();
        pretrain_gen_disc(&mut state, &ds, &cfg).unwrap();
        let logged = log_generated(&state.bundle, &ds, &cfg, &mut state.rng).unwrap();
        let scores = score_logged(&state.bundle, &ds, &logged, cfg.lambda).unwrap();
        let n = logged.samples.len();
        let (low, high): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % 2 == 0);
        let inp = EpochInputs {
            ds: &ds,
            cfg: &cfg,
            logged: &logged,
            scores: &scores,
            low: &low,
            high: &high,
            epoch: 1,
        };
        let mut p = PolicyState {
            bundle: state.bundle.clone(),
            opt_generator: state.opt_generator.clone(),
            opt_classifier: state.opt_classifier.clone(),
            rng: state.rng.clone(),
        };
        let cls = p.bundle.classifier_ids();
        let gen = p.bundle.generator_ids();
        let (c0, g0) = (p.bundle.param_hash(&cls), p.bundle.param_hash(&gen));
        generator_step(&mut p, &inp, MuChoice::Absolute(0.0)).unwrap();
        let g1 = p.bundle.param_hash(&gen);
        assert_eq!(p.bundle.param_hash(&cls), c0);
        assert_ne!(g1, g0);
        classifier_step(&mut p, &inp, MuChoice::Absolute(0.0)).unwrap();
        assert_eq!(p.bundle.param_hash(&gen), g1);
        assert_ne!(p.bundle.param_hash(&cls), c0);
    }

    #[test]
    fn passes_cover_the_pool_once_each() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pool: Vec<usize> = (10..47).collect();
        let batches = minibatch_passes(&pool, 8, 3, &mut rng);
        assert_eq!(batches.len(), 3 * 5);
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        let want: Vec<usize> = pool.iter().flat_map(|&i| [i, i, i]).collect();
        assert_eq!(seen, want);
        assert_eq!(minibatch_passes(&pool, 0, 2, &mut rng).len(), 2);
    }

    #[test]
    fn near_deterministic_pair_wins_a_single_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let owners = vec![0; 5];
        let entropies = [1.3, 1.2, 1e-9, 1.3, 1.1];
        // Weight ratio is 1e6 : ~0.8 per competitor, so the miss rate is ~3e-6.
        let hits = (0..2000)
            .filter(|_| select_for_discriminator(&owners, &entropies, &[1], true, &mut rng) == vec![2])
            .count();
        assert_eq!(hits, 2000);
    }
}
