//! Synthetic crowds with controllable annotator confusion and sparsity.
//!
//! Instances come from `|C|` isotropic Gaussians whose centroids sit on a
//! circle in the first two feature dimensions. Each annotator follows a
//! symmetric confusion matrix with diagonal equal to its reliability. With
//! weight `difficulty_sensitivity` an annotation instead comes from an
//! instance-dependent channel that flips the label toward the nearest other
//! class centroid with probability equal to the instance difficulty.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{Annotation, CrowdDataset, Split};
use crate::config::{render_kv, KvFile};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Training instances; validation and test instances are added on top.
    pub num_instances: usize,
    pub num_annotators: usize,
    pub feature_dim: usize,
    pub reliability_min: f64,
    pub reliability_max: f64,
    /// Average annotations per training instance.
    pub redundancy: f64,
    pub difficulty_sensitivity: f64,
    /// Radius of the circle the class centroids lie on.
    pub class_separation: f64,
    /// Standard deviation of the class-conditional Gaussians.
    pub feature_noise: f64,
    /// Held-out fractions of the total instance count.
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            num_instances: 500,
            num_annotators: 20,
            feature_dim: 2,
            reliability_min: 0.55,
            reliability_max: 0.85,
            redundancy: 2.0,
            difficulty_sensitivity: 0.0,
            class_separation: 2.0,
            feature_noise: 1.0,
            validation_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

impl SynthConfig {
    /// LabelMe-sized crowd: 8 classes, 1000 training instances, 59
    /// annotators, 2.5 annotations per instance.
    pub fn labelme_shaped() -> Self {
        Self {
            num_classes: 8,
            num_instances: 1000,
            num_annotators: 59,
            redundancy: 2.5,
            ..Self::default()
        }
    }

    /// Music-sized crowd: 10 classes, 700 training instances, 44
    /// annotators, 4.2 annotations per instance.
    pub fn music_shaped() -> Self {
        Self {
            num_classes: 10,
            num_instances: 700,
            num_annotators: 44,
            redundancy: 4.2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes as f64;
        if self.num_classes < 2 || self.num_instances == 0 || self.num_annotators == 0 {
            return Err(Error::Config(
                "synthetic data needs >= 2 classes, >= 1 instance and >= 1 annotator".into(),
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if !(self.redundancy >= 1.0) {
            return Err(Error::Config(format!(
                "redundancy {} < 1: every instance needs an annotation",
                self.redundancy
            )));
        }
        if self.redundancy > self.num_annotators as f64 {
            return Err(Error::Config(format!(
                "redundancy {} exceeds the {} available annotators",
                self.redundancy, self.num_annotators
            )));
        }
        let lo = self.reliability_min;
        let hi = self.reliability_max;
        if !(lo > 1.0 / c && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "reliability range [{lo}, {hi}] must lie in (1/{}, 1]",
                self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.difficulty_sensitivity) {
            return Err(Error::Config("difficulty_sensitivity must be in [0, 1]".into()));
        }
        let held = self.validation_fraction + self.test_fraction;
        if self.validation_fraction < 0.0 || self.test_fraction < 0.0 || held >= 1.0 {
            return Err(Error::Config("held-out fractions must be >= 0 and sum below 1".into()));
        }
        if !(self.class_separation > 0.0 && self.feature_noise > 0.0) {
            return Err(Error::Config("class_separation and feature_noise must be positive".into()));
        }
        Ok(())
    }

    /// Consumes the synthesis keys from a config file.
    pub fn from_kv(kv: &mut KvFile) -> Result<Self> {
        let mut cfg = Self::default();
        kv.take_into("num_classes", &mut cfg.num_classes)?;
        kv.take_into("num_instances", &mut cfg.num_instances)?;
        kv.take_into("num_annotators", &mut cfg.num_annotators)?;
        kv.take_into("feature_dim", &mut cfg.feature_dim)?;
        kv.take_into("reliability_min", &mut cfg.reliability_min)?;
        kv.take_into("reliability_max", &mut cfg.reliability_max)?;
        kv.take_into("redundancy", &mut cfg.redundancy)?;
        kv.take_into("difficulty_sensitivity", &mut cfg.difficulty_sensitivity)?;
        kv.take_into("class_separation", &mut cfg.class_separation)?;
        kv.take_into("feature_noise", &mut cfg.feature_noise)?;
        kv.take_into("validation_fraction", &mut cfg.validation_fraction)?;
        kv.take_into("test_fraction", &mut cfg.test_fraction)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        render_kv(&[
            ("num_classes", self.num_classes.to_string()),
            ("num_instances", self.num_instances.to_string()),
            ("num_annotators", self.num_annotators.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("reliability_min", self.reliability_min.to_string()),
            ("reliability_max", self.reliability_max.to_string()),
            ("redundancy", self.redundancy.to_string()),
            ("difficulty_sensitivity", self.difficulty_sensitivity.to_string()),
            ("class_separation", self.class_separation.to_string()),
            ("feature_noise", self.feature_noise.to_string()),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
        ])
    }

    fn held_out_counts(&self) -> (usize, usize) {
        let train_share = 1.0 - self.validation_fraction - self.test_fraction;
        let total = self.num_instances as f64 / train_share;
        (
            (total * self.validation_fraction).round() as usize,
            (total * self.test_fraction).round() as usize,
        )
    }
}

/// A Dawid–Skene style annotator with an instance-difficulty channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorModel {
    /// Row-stochastic; row = true class, column = emitted label.
    pub confusion: Tensor,
    pub difficulty_sensitivity: f64,
}

impl AnnotatorModel {
    /// Symmetric confusion with `reliability` on the diagonal.
    pub fn symmetric(num_classes: usize, reliability: f64, difficulty_sensitivity: f64) -> Self {
        let off = (1.0 - reliability) / (num_classes - 1) as f64;
        let mut confusion = Tensor::filled(&[num_classes, num_classes], off);
        for c in 0..num_classes {
            confusion.set2(c, c, reliability);
        }
        Self {
            confusion,
            difficulty_sensitivity,
        }
    }

    pub fn reliability(&self) -> f64 {
        self.confusion.get2(0, 0)
    }

    /// Emits one label for an instance of class `truth`.
    pub fn emit(&self, truth: usize, difficulty: f64, nearest_other: usize, rng: &mut impl Rng) -> usize {
        if rng.random::<f64>() < self.difficulty_sensitivity {
            if rng.random::<f64>() < difficulty {
                nearest_other
            } else {
                truth
            }
        } else {
            sample_categorical(self.confusion.row(truth), rng)
        }
    }
}

pub(crate) fn sample_categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver of mass past the last entry
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Everything the generator knows, including the hidden annotator models.
#[derive(Debug, Clone)]
pub struct SyntheticCrowd {
    pub dataset: CrowdDataset,
    pub annotators: Vec<AnnotatorModel>,
    pub centroids: Tensor,
    /// Instance difficulty in `[0, 1]` per instance.
    pub difficulty: Vec<f64>,
}

pub fn class_centroids(cfg: &SynthConfig, rng: &mut impl Rng) -> Tensor {
    let c = cfg.num_classes;
    let d = cfg.feature_dim;
    let mut t = Tensor::zeros(&[c, d]);
    for k in 0..c {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
        if d == 1 {
            t.set2(k, 0, cfg.class_separation * k as f64);
            continue;
        }
        t.set2(k, 0, cfg.class_separation * angle.cos());
        t.set2(k, 1, cfg.class_separation * angle.sin());
        for j in 2..d {
            let z: f64 = StandardNormal.sample(rng);
            t.set2(k, j, 0.5 * cfg.class_separation * z);
        }
    }
    t
}

/// Margin-based difficulty and the nearest centroid other than `truth`.
///
/// Difficulty is `1 − (d₂ − d₁)/(d₂ + d₁)` for the two nearest centroids.
pub fn instance_difficulty(x: &[f64], centroids: &Tensor, truth: usize) -> (f64, usize) {
    let dist: Vec<f64> = (0..centroids.rows())
        .map(|k| {
            centroids
                .row(k)
                .iter()
                .zip(x)
                .map(|(c, v)| (c - v) * (c - v))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    let (d1, d2) = (dist[order[0]], dist[order[1]]);
    let difficulty = if d1 + d2 > 0.0 {
        1.0 - (d2 - d1) / (d2 + d1)
    } else {
        1.0
    };
    let nearest_other = *order.iter().find(|&&k| k != truth).expect("at least 2 classes");
    (difficulty, nearest_other)
}

pub fn synthesize_dataset(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCrowd> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.num_classes;
    let d = cfg.feature_dim;
    let centroids = class_centroids(cfg, &mut rng);

    let (n_val, n_test) = cfg.held_out_counts();
    let n_train = cfg.num_instances;
    let n = n_train + n_val + n_test;

    let mut features = Tensor::zeros(&[n, d]);
    let mut truth = Vec::with_capacity(n);
    let mut difficulty = Vec::with_capacity(n);
    let mut nearest_other = Vec::with_capacity(n);
    for i in 0..n {
        let z = rng.random_range(0..c);
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.set2(i, j, centroids.get2(z, j) + cfg.feature_noise * noise);
        }
        let (diff, other) = instance_difficulty(features.row(i), &centroids, z);
        truth.push(z);
        difficulty.push(diff);
        nearest_other.push(other);
    }

    let annotators: Vec<AnnotatorModel> = (0..cfg.num_annotators)
        .map(|_| {
            let rel = if cfg.reliability_max > cfg.reliability_min {
                rng.random_range(cfg.reliability_min..=cfg.reliability_max)
            } else {
                cfg.reliability_min
            };
            AnnotatorModel::symmetric(c, rel, cfg.difficulty_sensitivity)
        })
        .collect();

    let floor = cfg.redundancy.floor();
    let frac = cfg.redundancy - floor;
    let mut annotations = Vec::new();
    for i in 0..n_train {
        let mut k = floor as usize;
        if rng.random::<f64>() < frac {
            k += 1;
        }
        let k = k.clamp(1, cfg.num_annotators);
        let mut chosen = sample(&mut rng, cfg.num_annotators, k).into_vec();
        chosen.sort_unstable();
        for r in chosen {
            let label = annotators[r].emit(truth[i], difficulty[i], nearest_other[i], &mut rng);
            annotations.push(Annotation {
                instance: i,
                annotator: r,
                label,
            });
        }
    }

    let mut splits = vec![Split::Train; n_train];
    splits.extend(std::iter::repeat_n(Split::Validation, n_val));
    splits.extend(std::iter::repeat_n(Split::Test, n_test));

    let dataset = CrowdDataset::new(
        c,
        features,
        None,
        cfg.num_annotators,
        annotations,
        Some(truth),
        Some(splits),
    )?;
    Ok(SyntheticCrowd {
        dataset,
        annotators,
        centroids,
        difficulty,
    })
}
