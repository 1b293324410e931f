use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{render_kv, KvFile};
use crate::error::{Error, Result};

/// How the CRM multiplier `μ` is chosen each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MuPolicy {
    Fixed(f64),
    /// Candidates are these multiples of the epoch's mean loss; the one with
    /// the best validation accuracy wins.
    Grid(Vec<f64>),
}

/// Model variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// No information loss (`λ = 0`).
    CrowdG,
    /// Generator ignores instance features.
    NoInstance,
    /// Generator ignores annotator features.
    NoAnnotator,
    /// Uniform instead of entropy-weighted selection.
    RandomSelection,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::CrowdG,
        Variant::NoInstance,
        Variant::NoAnnotator,
        Variant::RandomSelection,
        Variant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "crowding",
            Variant::CrowdG => "crowdg",
            Variant::NoInstance => "crowding-u",
            Variant::NoAnnotator => "crowding-i",
            Variant::RandomSelection => "crowding-r",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "crowding" | "full" => Ok(Variant::Full),
            "crowdg" => Ok(Variant::CrowdG),
            "crowding-u" | "u" => Ok(Variant::NoInstance),
            "crowding-i" | "i" => Ok(Variant::NoAnnotator),
            "crowding-r" | "r" => Ok(Variant::RandomSelection),
            _ => Err(Error::UnknownVariant(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the information loss.
    pub lambda: f64,
    /// Normalized-entropy threshold splitting instances between the
    /// generator and classifier updates.
    pub threshold: f64,
    pub mu: MuPolicy,
    /// Learning rate of the pretraining stages and the baselines.
    pub lr_pretrain: f64,
    pub lr_classifier: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    /// Minibatch passes per module per epoch over that module's samples.
    pub inner_passes: usize,
    pub epochs: usize,
    /// Crowd-layer (and majority-vote baseline) training epochs.
    pub pretrain_epochs: usize,
    pub generator_pretrain_epochs: usize,
    pub discriminator_pretrain_epochs: usize,
    pub batch_size: usize,
    /// Logged samples per CRM minibatch; 0 means all of them.
    pub crm_batch_size: usize,
    /// Largest number of pairs generated per epoch; larger grids are
    /// subsampled uniformly.
    pub grid_cap: usize,
    pub noise_dim: usize,
    /// Coefficient of the discriminator output penalty.
    pub beta: f64,
    pub dropout: f64,
    pub lca: bool,
    pub generator_uses_instance: bool,
    pub generator_uses_annotator: bool,
    pub entropy_selection: bool,
    /// Update classifier and generator jointly instead of in two steps.
    pub one_step: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            threshold: 0.5,
            mu: MuPolicy::Grid(vec![0.0, 0.5, 1.0]),
            lr_pretrain: 1e-3,
            lr_classifier: 2e-4,
            lr_generator: 2e-4,
            lr_discriminator: 2e-4,
            inner_passes: 5,
            epochs: 40,
            pretrain_epochs: 60,
            generator_pretrain_epochs: 30,
            discriminator_pretrain_epochs: 5,
            batch_size: 64,
            crm_batch_size: 512,
            grid_cap: 100_000,
            noise_dim: 8,
            beta: 1e-4,
            dropout: 0.5,
            lca: true,
            generator_uses_instance: true,
            generator_uses_annotator: true,
            entropy_selection: true,
            one_step: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must be in (0, 1), got {}", self.threshold));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.inner_passes == 0 || self.batch_size == 0 || self.grid_cap == 0 || self.noise_dim == 0 {
            return bad("inner_passes, batch_size, grid_cap and noise_dim must be positive".into());
        }
        for (name, lr) in [
            ("lr_pretrain", self.lr_pretrain),
            ("lr_classifier", self.lr_classifier),
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        match &self.mu {
            MuPolicy::Grid(g) if g.is_empty() => bad("mu_grid must not be empty".into()),
            MuPolicy::Fixed(m) if !m.is_finite() => bad("mu must be finite".into()),
            _ => Ok(()),
        }
    }

    /// The configuration of an ablation variant derived from `self`.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let mut cfg = self.clone();
        match variant {
            Variant::Full => {}
            Variant::CrowdG => cfg.lambda = 0.0,
            Variant::NoInstance => cfg.generator_uses_instance = false,
            Variant::NoAnnotator => cfg.generator_uses_annotator = false,
            Variant::RandomSelection => cfg.entropy_selection = false,
        }
        cfg
    }

    /// Which ablation variant this configuration amounts to, if any single
    /// one.
    pub fn variant(&self) -> Option<Variant> {
        let flags = [
            self.lambda == 0.0,
            !self.generator_uses_instance,
            !self.generator_uses_annotator,
            !self.entropy_selection,
        ];
        match flags {
            [false, false, false, false] => Some(Variant::Full),
            [true, false, false, false] => Some(Variant::CrowdG),
            [false, true, false, false] => Some(Variant::NoInstance),
            [false, false, true, false] => Some(Variant::NoAnnotator),
            [false, false, false, true] => Some(Variant::RandomSelection),
            _ => None,
        }
    }

    /// Consumes training keys from a config file; absent keys keep their
    /// defaults.
    pub fn from_kv(kv: &mut KvFile) -> Result<Self> {
        let mut c = Self::default();
        kv.take_into("lambda", &mut c.lambda)?;
        kv.take_into("threshold", &mut c.threshold)?;
        if let Some(mu) = kv.take_parsed::<f64>("mu")? {
            c.mu = MuPolicy::Fixed(mu);
        }
        if let Some(grid) = kv.take_list::<f64>("mu_grid")? {
            if matches!(c.mu, MuPolicy::Fixed(_)) {
                return Err(Error::Config("set either `mu` or `mu_grid`, not both".into()));
            }
            c.mu = MuPolicy::Grid(grid);
        }
        if let Some(lr) = kv.take_parsed::<f64>("lr")? {
            c.lr_classifier = lr;
            c.lr_generator = lr;
            c.lr_discriminator = lr;
        }
        kv.take_into("lr_pretrain", &mut c.lr_pretrain)?;
        kv.take_into("lr_classifier", &mut c.lr_classifier)?;
        kv.take_into("lr_generator", &mut c.lr_generator)?;
        kv.take_into("lr_discriminator", &mut c.lr_discriminator)?;
        kv.take_into("inner_passes", &mut c.inner_passes)?;
        kv.take_into("epochs", &mut c.epochs)?;
        kv.take_into("pretrain_epochs", &mut c.pretrain_epochs)?;
        kv.take_into("generator_pretrain_epochs", &mut c.generator_pretrain_epochs)?;
        kv.take_into("discriminator_pretrain_epochs", &mut c.discriminator_pretrain_epochs)?;
        kv.take_into("batch_size", &mut c.batch_size)?;
        kv.take_into("crm_batch_size", &mut c.crm_batch_size)?;
        kv.take_into("grid_cap", &mut c.grid_cap)?;
        kv.take_into("noise_dim", &mut c.noise_dim)?;
        kv.take_into("beta", &mut c.beta)?;
        kv.take_into("dropout", &mut c.dropout)?;
        kv.take_into("lca", &mut c.lca)?;
        kv.take_into("generator_uses_instance", &mut c.generator_uses_instance)?;
        kv.take_into("generator_uses_annotator", &mut c.generator_uses_annotator)?;
        kv.take_into("entropy_selection", &mut c.entropy_selection)?;
        kv.take_into("one_step", &mut c.one_step)?;
        kv.take_into("seed", &mut c.seed)?;
        if let Some(v) = kv.take_str("variant") {
            let variant: Variant = v.parse()?;
            c = c.for_variant(variant);
        }
        c.validate()?;
        Ok(c)
    }

    /// Every key with its resolved value, in the format `from_kv` reads.
    pub fn to_kv(&self) -> String {
        let f = |v: f64| format!("{v:?}");
        let mut pairs = vec![("lambda", f(self.lambda)), ("threshold", f(self.threshold))];
        match &self.mu {
            MuPolicy::Fixed(m) => pairs.push(("mu", f(*m))),
            MuPolicy::Grid(g) => pairs.push((
                "mu_grid",
                g.iter().map(|&v| f(v)).collect::<Vec<_>>().join(", "),
            )),
        }
        pairs.extend([
            ("lr_pretrain", f(self.lr_pretrain)),
            ("lr_classifier", f(self.lr_classifier)),
            ("lr_generator", f(self.lr_generator)),
            ("lr_discriminator", f(self.lr_discriminator)),
            ("inner_passes", self.inner_passes.to_string()),
            ("epochs", self.epochs.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("generator_pretrain_epochs", self.generator_pretrain_epochs.to_string()),
            ("discriminator_pretrain_epochs", self.discriminator_pretrain_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("crm_batch_size", self.crm_batch_size.to_string()),
            ("grid_cap", self.grid_cap.to_string()),
            ("noise_dim", self.noise_dim.to_string()),
            ("beta", f(self.beta)),
            ("dropout", f(self.dropout)),
            ("lca", self.lca.to_string()),
            ("generator_uses_instance", self.generator_uses_instance.to_string()),
            ("generator_uses_annotator", self.generator_uses_annotator.to_string()),
            ("entropy_selection", self.entropy_selection.to_string()),
            ("one_step", self.one_step.to_string()),
            ("seed", self.seed.to_string()),
        ]);
        render_kv(&pairs)
    }
}
