use crowding_core::data::{synthesize_dataset, CrowdDataset, Split, SynthConfig};
use crowding_core::diffcore::argmax;
use crowding_core::evalsuite::{auc, best_epoch};
use crowding_core::nets::{classifier_probs, generate_distribution, score_triplets};
use crowding_core::objectives::LoggedSample;
use crowding_core::trainer::{
    augmented_csv, export_augmented, log_generated, pretrain_dl_cl, pretrain_gen_disc,
    recompute_logging_probs, run_epoch, update_discriminator, LoggedEpoch, train_crowding, train_dl_cl, train_dl_mv, train_supervised,
    TrainConfig, TrainState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        pretrain_epochs: 15,
        generator_pretrain_epochs: 10,
        discriminator_pretrain_epochs: 2,
        ..TrainConfig::default()
    }
}

fn small(seed: u64, difficulty: f64) -> CrowdDataset {
    let cfg = SynthConfig {
        num_instances: 150,
        num_annotators: 8,
        difficulty_sensitivity: difficulty,
        ..SynthConfig::default()
    };
    synthesize_dataset(&cfg, seed).unwrap().dataset
}

fn identity(seed: u64, n: usize, separation: f64) -> CrowdDataset {
    let cfg = SynthConfig {
        num_instances: n,
        class_separation: separation,
        num_annotators: 8,
        reliability_min: 1.0,
        reliability_max: 1.0,
        ..SynthConfig::default()
    };
    synthesize_dataset(&cfg, seed).unwrap().dataset
}

fn pretrained(ds: &CrowdDataset, cfg: &TrainConfig) -> TrainState {
    let mut st = TrainState::new(ds, cfg).unwrap();
    pretrain_dl_cl(&mut st, ds, cfg).unwrap();
    pretrain_gen_disc(&mut st, ds, cfg).unwrap();
    st
}

#[test]
fn same_seed_reproduces_history_bit_exactly() {
    let ds = small(3, 0.6);
    let a = train_crowding(&ds, &quick()).unwrap();
    let b = train_crowding(&ds, &quick()).unwrap();
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    let all: Vec<_> = a.bundle.store.ids().collect();
    assert_eq!(a.bundle.param_hash(&all), b.bundle.param_hash(&all));
}

#[test]
fn logged_probabilities_recompute_bit_exactly() {
    let ds = small(1, 0.6);
    let cfg = quick();
    let mut st = pretrained(&ds, &cfg);
    let logged = log_generated(&st.bundle, &ds, &cfg, &mut st.rng).unwrap();
    assert_eq!(logged.samples.len(), ds.split_indices(Split::Train).len() * ds.num_annotators());
    let again = recompute_logging_probs(&st.bundle, &ds, &logged).unwrap();
    for (s, p) in logged.samples.iter().zip(&again) {
        assert_eq!(s.g0.to_bits(), p.to_bits());
    }
    // One row at a time gives the same bits as the batched pass.
    for s in logged.samples.iter().step_by(97) {
        let dist = generate_distribution(
            &st.bundle,
            ds.instance_features().row(s.instance),
            ds.annotator_features().row(s.annotator),
            logged.zhat.row(s.instance),
            &s.noise,
        )
        .unwrap();
        assert_eq!(dist[s.label].to_bits(), s.g0.to_bits());
    }
}

#[test]
fn threshold_near_one_freezes_classifier() {
    let ds = small(2, 0.6);
    let cfg = TrainConfig {
        threshold: 0.999_999,
        ..quick()
    };
    let mut st = pretrained(&ds, &cfg);
    let cls = st.bundle.classifier_ids();
    let gen = st.bundle.generator_ids();
    let (hc, hg) = (st.bundle.param_hash(&cls), st.bundle.param_hash(&gen));
    let rec = run_epoch(&mut st, &ds, &cfg).unwrap();
    assert_eq!(st.bundle.param_hash(&cls), hc);
    assert_ne!(st.bundle.param_hash(&gen), hg);
    assert!(rec.warnings.iter().any(|w| w.contains("classifier update skipped")));
}

#[test]
fn threshold_near_zero_freezes_generator() {
    let ds = small(2, 0.6);
    let cfg = TrainConfig {
        threshold: 1e-9,
        ..quick()
    };
    let mut st = pretrained(&ds, &cfg);
    let cls = st.bundle.classifier_ids();
    let gen = st.bundle.generator_ids();
    let (hc, hg) = (st.bundle.param_hash(&cls), st.bundle.param_hash(&gen));
    let rec = run_epoch(&mut st, &ds, &cfg).unwrap();
    assert_eq!(st.bundle.param_hash(&gen), hg);
    assert_ne!(st.bundle.param_hash(&cls), hc);
    assert!(rec.warnings.iter().any(|w| w.contains("generator update skipped")));
}

#[test]
fn zero_pretraining_epochs_leave_networks_untouched() {
    let ds = small(0, 0.0);
    let cfg = TrainConfig {
        pretrain_epochs: 0,
        generator_pretrain_epochs: 0,
        discriminator_pretrain_epochs: 0,
        ..quick()
    };
    let mut st = TrainState::new(&ds, &cfg).unwrap();
    let all: Vec<_> = st.bundle.store.ids().collect();
    let h = st.bundle.param_hash(&all);
    pretrain_dl_cl(&mut st, &ds, &cfg).unwrap();
    pretrain_gen_disc(&mut st, &ds, &cfg).unwrap();
    assert_eq!(st.bundle.param_hash(&all), h);
}

#[test]
fn crowd_layer_on_identity_confusion_matches_truth_training() {
    let cfg = TrainConfig {
        pretrain_epochs: 30,
        ..quick()
    };
    let mut gap = 0.0;
    for seed in 0..3 {
        let ds = identity(seed, 300, 2.0);
        let cl = train_dl_cl(&ds, &TrainConfig { seed, ..cfg.clone() }).unwrap();
        let mut st = TrainState::new(&ds, &TrainConfig { seed, ..cfg.clone() }).unwrap();
        let inst = ds.split_indices(Split::Train);
        let truth = ds.ground_truth().unwrap();
        let ys: Vec<usize> = inst.iter().map(|&n| truth[n]).collect();
        let h = train_supervised(&mut st, &ds, &cfg, &inst, &ys).unwrap();
        gap += h[best_epoch(&h)].test_accuracy.unwrap() - cl.report.test_accuracy.unwrap();
    }
    assert!(gap / 3.0 < 0.02, "mean gap {}", gap / 3.0);
}

#[test]
fn majority_vote_on_identity_confusion_equals_truth_training() {
    let ds = identity(4, 120, 2.0);
    let cfg = quick();
    let mv = train_dl_mv(&ds, &cfg).unwrap();
    let mut st = TrainState::new(&ds, &cfg).unwrap();
    let inst = ds.split_indices(Split::Train);
    let truth = ds.ground_truth().unwrap();
    let ys: Vec<usize> = inst.iter().map(|&n| truth[n]).collect();
    let h = train_supervised(&mut st, &ds, &cfg, &inst, &ys).unwrap();
    assert_eq!(mv.report.epochs, h);
    let all: Vec<_> = st.bundle.store.ids().collect();
    assert_eq!(mv.bundle.param_hash(&all), st.bundle.param_hash(&all));
}

#[test]
fn single_annotation_majority_vote_equals_raw_labels() {
    let syn = SynthConfig {
        num_instances: 120,
        num_annotators: 8,
        redundancy: 1.0,
        ..SynthConfig::default()
    };
    let ds = synthesize_dataset(&syn, 5).unwrap().dataset;
    let cfg = quick();
    let mv = train_dl_mv(&ds, &cfg).unwrap();
    let mut st = TrainState::new(&ds, &cfg).unwrap();
    let mut raw: Vec<(usize, usize)> = ds.annotations().iter().map(|a| (a.instance, a.label)).collect();
    raw.sort_unstable();
    let (inst, ys): (Vec<usize>, Vec<usize>) = raw.into_iter().unzip();
    let h = train_supervised(&mut st, &ds, &cfg, &inst, &ys).unwrap();
    assert_eq!(mv.report.epochs, h);
}

#[test]
fn pretrained_generator_reproduces_clean_annotations() {
    let ds = identity(6, 300, 5.0);
    let cfg = TrainConfig {
        pretrain_epochs: 30,
        generator_pretrain_epochs: 30,
        ..quick()
    };
    let st = pretrained(&ds, &cfg);
    let zhat = classifier_probs(&st.bundle, ds.instance_features()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise_dim = st.bundle.dims.noise_dim;
    let hits = ds
        .annotations()
        .iter()
        .filter(|a| {
            let noise: Vec<f64> = (0..noise_dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            let p = generate_distribution(
                &st.bundle,
                ds.instance_features().row(a.instance),
                ds.annotator_features().row(a.annotator),
                zhat.row(a.instance),
                &noise,
            )
            .unwrap();
            argmax(&p) == a.label
        })
        .count();
    let rate = hits as f64 / ds.annotations().len() as f64;
    assert!(rate >= 0.9, "argmax agreement {rate}");
}

fn authentic_vs_random_auc(st: &TrainState, ds: &CrowdDataset, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst: Vec<usize> = ds.annotations().iter().map(|a| a.instance).collect();
    let who: Vec<usize> = ds.annotations().iter().map(|a| a.annotator).collect();
    let real: Vec<usize> = ds.annotations().iter().map(|a| a.label).collect();
    let fake: Vec<usize> = real.iter().map(|_| rng.random_range(0..ds.num_classes())).collect();
    let (x, e) = (ds.instance_features(), ds.annotator_features());
    let (pa, _) = score_triplets(&st.bundle, x, e, &inst, &who, &real).unwrap();
    let (pr, _) = score_triplets(&st.bundle, x, e, &inst, &who, &fake).unwrap();
    auc(&pa, &pr).unwrap()
}

fn medium(seed: u64) -> CrowdDataset {
    let syn = SynthConfig {
        num_instances: 300,
        num_annotators: 10,
        ..SynthConfig::default()
    };
    synthesize_dataset(&syn, seed).unwrap().dataset
}

#[test]
fn discriminator_learns_label_plausibility_against_random_labels() {
    let ds = medium(7);
    let cfg = TrainConfig {
        pretrain_epochs: 30,
        ..quick()
    };
    let mut st = TrainState::new(&ds, &cfg).unwrap();
    pretrain_dl_cl(&mut st, &ds, &cfg).unwrap();
    let zhat = classifier_probs(&st.bundle, ds.instance_features()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let samples: Vec<LoggedSample> = ds
            .annotations()
            .iter()
            .map(|a| LoggedSample {
                instance: a.instance,
                annotator: a.annotator,
                label: rng.random_range(0..ds.num_classes()),
                g0: 0.25,
                authentic: false,
                noise: vec![0.0; cfg.noise_dim],
                latent: 0,
            })
            .collect();
        let n = samples.len();
        let logged = LoggedEpoch {
            samples,
            entropies: vec![1.0; n],
            zhat: zhat.clone(),
        };
        let all: Vec<usize> = (0..n).collect();
        update_discriminator(&mut st, &ds, &cfg, &logged, &all).unwrap();
    }
    let a = authentic_vs_random_auc(&st, &ds, 11);
    assert!(a > 0.6, "AUC {a}");
}

/// Against a maximum-likelihood generator the discriminator's optimum is
/// close to 0.5 for every label, so it does not learn to reject random
/// labels; measured AUC is about 0.5.
#[test]
#[ignore = "does not hold: the pretrained discriminator scores random labels like authentic ones"]
fn pretrained_discriminator_prefers_authentic_over_random_labels() {
    let ds = medium(7);
    let st = pretrained(&ds, &TrainConfig { pretrain_epochs: 30, ..quick() });
    let a = authentic_vs_random_auc(&st, &ds, 11);
    assert!(a > 0.6, "AUC {a}");
}

#[test]
fn export_fills_every_missing_training_pair() {
    let ds = small(8, 0.6);
    let cfg = quick();
    let out = train_crowding(&ds, &cfg).unwrap();
    let rows = export_augmented(&ds, &out.bundle, 1).unwrap();
    let train = ds.split_indices(Split::Train).len();
    let authentic = rows.iter().filter(|r| r.authentic).count();
    assert_eq!(authentic, ds.annotations().len());
    assert_eq!(rows.len(), train * ds.num_annotators());
    assert_eq!(rows, export_augmented(&ds, &out.bundle, 1).unwrap());
    let csv = augmented_csv(&rows);
    assert_eq!(csv.lines().next(), Some("instance,annotator,label,authentic"));
    assert_eq!(csv.lines().count(), rows.len() + 1);
}
