use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{DiscSpec, SegNetSpec, StyleGenSpec};

/// Which parts of the method are switched on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flags {
    /// Output-space adversarial alignment.
    pub at: bool,
    /// Mean-teacher consistency; the teacher is also the evaluated model.
    pub se: bool,
    /// Style-transferred copies of the source batch.
    pub aug: bool,
    /// Pseudo-label self-training after the adversarial stage.
    pub st: bool,
    /// Multi-scale testing.
    pub mst: bool,
}

/// Cumulative ablation ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationMode {
    #[serde(rename = "noadapt")]
    NoAdapt,
    #[serde(rename = "at")]
    At,
    #[serde(rename = "at-se")]
    AtSe,
    #[serde(rename = "at-se-aug")]
    AtSeAug,
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "full-mst")]
    FullMst,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::NoAdapt,
        AblationMode::At,
        AblationMode::AtSe,
        AblationMode::AtSeAug,
        AblationMode::Full,
        AblationMode::FullMst,
    ];

    pub fn flags(self) -> Flags {
        let rank = self as usize;
        Flags {
            at: rank >= 1,
            se: rank >= 2,
            aug: rank >= 3,
            st: rank >= 4,
            mst: rank >= 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::NoAdapt => "noadapt",
            AblationMode::At => "at",
            AblationMode::AtSe => "at-se",
            AblationMode::AtSeAug => "at-se-aug",
            AblationMode::Full => "full",
            AblationMode::FullMst => "full-mst",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("mode", format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_con: f64,
    pub lambda_adv: f64,
    /// EMA smoothing of the teacher.
    pub alpha: f64,
    pub student_lr: f64,
    pub momentum: f64,
    pub disc_lr: f64,
    pub disc_beta1: f64,
    pub disc_beta2: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub maxiter: usize,
    pub batch_source: usize,
    pub batch_target: usize,
    pub flags: Flags,
    /// Student adversarial gradient from the target term only.
    pub adv_target_only: bool,
    pub seed: u64,
    pub eval_interval: usize,
    /// Target images scored at each evaluation; 0 means all.
    pub eval_images: usize,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_interval: usize,
    pub self_train_iters: usize,
    pub self_train_lr: f64,
    pub mst_scales: Vec<f64>,
    pub segnet: SegNetSpec,
}

impl Default for TrainConfig {
    /// Desk-scale defaults for the 64x64 synthetic benchmark.
    fn default() -> Self {
        TrainConfig {
            lambda_con: 3.0,
            // 3000 iterations of a 15k-parameter net: a shorter EMA horizon
            // and a stronger adversarial weight than the large-scale setting
            lambda_adv: 0.01,
            alpha: 0.99,
            student_lr: 0.01,
            momentum: 0.9,
            disc_lr: 1e-4,
            disc_beta1: 0.9,
            disc_beta2: 0.99,
            weight_decay: 5e-5,
            power: 0.9,
            maxiter: 3000,
            batch_source: 2,
            batch_target: 2,
            flags: Flags::default(),
            adv_target_only: false,
            seed: 0,
            eval_interval: 100,
            eval_images: 64,
            checkpoint_interval: 0,
            self_train_iters: 1000,
            self_train_lr: 0.005,
            mst_scales: vec![0.75, 1.0, 1.25],
            segnet: SegNetSpec::default(),
        }
    }
}

impl TrainConfig {
    /// Hyper-parameters of the original large-scale setting.
    pub fn paper_scale() -> Self {
        TrainConfig {
            lambda_adv: 0.001,
            alpha: 0.999,
            student_lr: 2.5e-5,
            disc_lr: 1e-4,
            maxiter: 80_000,
            batch_source: 1,
            batch_target: 1,
            eval_interval: 2000,
            eval_images: 0,
            self_train_iters: 80_000,
            self_train_lr: 2.5e-5,
            mst_scales: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            ..TrainConfig::default()
        }
    }

    pub fn with_mode(mut self, mode: AblationMode) -> Self {
        self.flags = mode.flags();
        self
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_con: self.lambda_con,
            lambda_adv: self.lambda_adv,
            ..LossWeights::default()
        }
    }

    pub fn disc_spec(&self) -> DiscSpec {
        DiscSpec::new(self.segnet.class_count)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", format!("{} not in [0, 1]", self.alpha)));
        }
        for (f, v) in [
            ("student_lr", self.student_lr),
            ("disc_lr", self.disc_lr),
            ("self_train_lr", self.self_train_lr),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(f, format!("{v} must be finite and >= 0")));
            }
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::invalid("power", format!("{} must be positive", self.power)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", format!("{} not in [0, 1)", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.disc_beta1) || !(0.0..1.0).contains(&self.disc_beta2) {
            return Err(Error::invalid("disc_beta1/disc_beta2", "must lie in [0, 1)"));
        }
        if self.maxiter == 0 {
            return Err(Error::invalid("maxiter", "must be at least 1"));
        }
        if self.batch_source == 0 || self.batch_target == 0 {
            return Err(Error::invalid("batch_source/batch_target", "must be at least 1"));
        }
        if self.eval_interval == 0 {
            return Err(Error::invalid("eval_interval", "must be at least 1"));
        }
        if self.mst_scales.is_empty() || self.mst_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("mst_scales", "must be a non-empty list of positive scales"));
        }
        self.segnet.validate()
    }
}

/// Style-transfer network pre-training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TgstnConfig {
    pub lambda_sem: f64,
    pub lambda_per: f64,
    pub g_lr: f64,
    pub d_lr: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub epochs: usize,
    pub batch_source: usize,
    pub batch_target: usize,
    /// Generator minimises `−log D(G(x_s))` instead of `log(1 − D(G(x_s)))`.
    pub non_saturating: bool,
    pub seed: u64,
    pub generator: StyleGenSpec,
}

impl Default for TgstnConfig {
    fn default() -> Self {
        TgstnConfig {
            lambda_sem: 10.0,
            lambda_per: 1.0,
            g_lr: 5e-4,
            d_lr: 5e-5,
            weight_decay: 5e-5,
            power: 0.9,
            epochs: 5,
            batch_source: 2,
            batch_target: 2,
            non_saturating: false,
            seed: 0,
            generator: StyleGenSpec::default(),
        }
    }
}

impl TgstnConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_sem: self.lambda_sem,
            lambda_per: self.lambda_per,
            ..LossWeights::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        for (f, v) in [("g_lr", self.g_lr), ("d_lr", self.d_lr), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(f, format!("{v} must be finite and >= 0")));
            }
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::invalid("power", format!("{} must be positive", self.power)));
        }
        if self.batch_source == 0 || self.batch_target == 0 {
            return Err(Error::invalid("batch_source/batch_target", "must be at least 1"));
        }
        self.generator.validate()
    }
}
