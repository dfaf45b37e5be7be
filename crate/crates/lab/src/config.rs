//! Run configuration: one key-value document with dotted section keys.
//!
//! Every configurable field of every stage lives here, with defaults matching
//! the shipped `configs/paper-defaults`. Parsing starts from defaults,
//! applies overrides, and rejects unknown keys; `dump()` emits the effective
//! configuration in canonical order so a run can be reproduced from its
//! output directory alone.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use difflab_core::data::DatasetSpec;
use difflab_core::model::{DenoiserConfig, GuidanceConfig};
use difflab_core::schedule::NoiseSchedule;
use difflab_core::train::TrainConfig;
use difflab_core::RewriteConfig;

use crate::error::LabError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    pub schedule_t_train: usize,
    pub schedule_beta_start: f64,
    pub schedule_beta_end: f64,
    pub schedule_t_infer: usize,

    pub model_hidden_width: usize,
    pub model_hidden_layers: usize,
    pub model_time_feature_dim: usize,
    pub model_cond_dim: usize,

    pub data_image_size: usize,
    pub data_domains: Vec<String>,
    pub data_per_domain: usize,
    pub data_size_min: f64,
    pub data_size_max: f64,
    pub data_center_jitter: f64,
    pub data_intensity_min: f64,
    pub data_intensity_max: f64,
    pub data_eval_count: usize,
    pub data_eval_domain: String,
    pub data_eval_size_min: f64,
    pub data_eval_size_max: f64,
    pub data_eval_center_jitter: f64,
    pub data_eval_intensity_min: f64,
    pub data_eval_intensity_max: f64,

    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_lr: f64,
    pub train_cond_dropout: f64,

    pub guidance_scale: f64,
    pub guidance_enabled: bool,
    pub invert_guided: bool,

    pub rewrite_lambda: f64,
    pub rewrite_inner_steps: usize,
    pub rewrite_lr: f64,
    pub rewrite_warm_start: bool,
    pub rewrite_optimizer_bypass: bool,

    pub align_outer_steps: usize,

    pub edit_source_label: String,
    pub edit_target_label: String,
    pub edit_strength: f64,

    pub oracle_epochs: usize,
    pub oracle_lr: f64,
    pub oracle_holdout: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            schedule_t_train: 1000,
            schedule_beta_start: 1e-4,
            schedule_beta_end: 0.02,
            schedule_t_infer: 60,
            model_hidden_width: 256,
            model_hidden_layers: 3,
            model_time_feature_dim: 32,
            model_cond_dim: 16,
            data_image_size: 16,
            data_domains: vec!["circle".into(), "square".into()],
            data_per_domain: 250,
            data_size_min: 3.0,
            data_size_max: 5.5,
            data_center_jitter: 1.5,
            data_intensity_min: 0.6,
            data_intensity_max: 1.0,
            data_eval_count: 20,
            data_eval_domain: "circle".into(),
            data_eval_size_min: 4.5,
            data_eval_size_max: 6.5,
            data_eval_center_jitter: 2.0,
            data_eval_intensity_min: 0.6,
            data_eval_intensity_max: 1.0,
            train_epochs: 200,
            train_batch_size: 64,
            train_lr: 1e-3,
            train_cond_dropout: 0.1,
            guidance_scale: 2.0,
            guidance_enabled: true,
            invert_guided: false,
            rewrite_lambda: 1.0,
            rewrite_inner_steps: 10,
            rewrite_lr: 1e-3,
            rewrite_warm_start: true,
            rewrite_optimizer_bypass: false,
            align_outer_steps: 30,
            edit_source_label: "circle".into(),
            edit_target_label: "square".into(),
            edit_strength: 1.0,
            oracle_epochs: 300,
            oracle_lr: 0.05,
            oracle_holdout: 0.2,
        }
    }
}

macro_rules! set_field {
    ($cfg:expr, $key:expr, $value:expr, {
        $($name:literal => $field:ident : $kind:tt),+ $(,)?
    }) => {
        match $key {
            $($name => { $cfg.$field = parse_value!($key, $value, $kind)?; })+
            other => {
                return Err(LabError::Config(format!("unknown key '{other}'")));
            }
        }
    };
}

macro_rules! parse_value {
    ($key:expr, $value:expr, usize) => {
        $value
            .parse::<usize>()
            .map_err(|_| LabError::Config(format!("key '{}': expected an integer, got '{}'", $key, $value)))
    };
    ($key:expr, $value:expr, u64) => {
        $value
            .parse::<u64>()
            .map_err(|_| LabError::Config(format!("key '{}': expected an integer, got '{}'", $key, $value)))
    };
    ($key:expr, $value:expr, f64) => {
        $value
            .parse::<f64>()
            .map_err(|_| LabError::Config(format!("key '{}': expected a number, got '{}'", $key, $value)))
    };
    ($key:expr, $value:expr, bool) => {
        match $value {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(LabError::Config(format!(
                "key '{}': expected true/false, got '{}'",
                $key, other
            ))),
        }
    };
    ($key:expr, $value:expr, string) => {
        Ok::<String, LabError>($value.to_string())
    };
    ($key:expr, $value:expr, list) => {
        Ok::<Vec<String>, LabError>(
            $value
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        )
    };
}

impl RunConfig {
    /// Parse a config document on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, LabError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                LabError::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            set_field!(cfg, key, value, {
                "seed" => seed: u64,
                "schedule.t_train" => schedule_t_train: usize,
                "schedule.beta_start" => schedule_beta_start: f64,
                "schedule.beta_end" => schedule_beta_end: f64,
                "schedule.t_infer" => schedule_t_infer: usize,
                "model.hidden_width" => model_hidden_width: usize,
                "model.hidden_layers" => model_hidden_layers: usize,
                "model.time_feature_dim" => model_time_feature_dim: usize,
                "model.cond_dim" => model_cond_dim: usize,
                "data.image_size" => data_image_size: usize,
                "data.domains" => data_domains: list,
                "data.per_domain" => data_per_domain: usize,
                "data.size_min" => data_size_min: f64,
                "data.size_max" => data_size_max: f64,
                "data.center_jitter" => data_center_jitter: f64,
                "data.intensity_min" => data_intensity_min: f64,
                "data.intensity_max" => data_intensity_max: f64,
                "data.eval_count" => data_eval_count: usize,
                "data.eval_domain" => data_eval_domain: string,
                "data.eval_size_min" => data_eval_size_min: f64,
                "data.eval_size_max" => data_eval_size_max: f64,
                "data.eval_center_jitter" => data_eval_center_jitter: f64,
                "data.eval_intensity_min" => data_eval_intensity_min: f64,
                "data.eval_intensity_max" => data_eval_intensity_max: f64,
                "train.epochs" => train_epochs: usize,
                "train.batch_size" => train_batch_size: usize,
                "train.lr" => train_lr: f64,
                "train.cond_dropout" => train_cond_dropout: f64,
                "guidance.scale" => guidance_scale: f64,
                "guidance.enabled" => guidance_enabled: bool,
                "invert.guided" => invert_guided: bool,
                "rewrite.lambda" => rewrite_lambda: f64,
                "rewrite.inner_steps" => rewrite_inner_steps: usize,
                "rewrite.lr" => rewrite_lr: f64,
                "rewrite.warm_start" => rewrite_warm_start: bool,
                "rewrite.optimizer_bypass" => rewrite_optimizer_bypass: bool,
                "align.outer_steps" => align_outer_steps: usize,
                "edit.source_label" => edit_source_label: string,
                "edit.target_label" => edit_target_label: string,
                "edit.strength" => edit_strength: f64,
                "oracle.epochs" => oracle_epochs: usize,
                "oracle.lr" => oracle_lr: f64,
                "oracle.holdout" => oracle_holdout: f64,
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LabError::MissingInput(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The effective configuration in canonical order.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "schedule.t_train = {}", self.schedule_t_train);
        let _ = writeln!(s, "schedule.beta_start = {}", self.schedule_beta_start);
        let _ = writeln!(s, "schedule.beta_end = {}", self.schedule_beta_end);
        let _ = writeln!(s, "schedule.t_infer = {}", self.schedule_t_infer);
        let _ = writeln!(s, "model.hidden_width = {}", self.model_hidden_width);
        let _ = writeln!(s, "model.hidden_layers = {}", self.model_hidden_layers);
        let _ = writeln!(s, "model.time_feature_dim = {}", self.model_time_feature_dim);
        let _ = writeln!(s, "model.cond_dim = {}", self.model_cond_dim);
        let _ = writeln!(s, "data.image_size = {}", self.data_image_size);
        let _ = writeln!(s, "data.domains = {}", self.data_domains.join(","));
        let _ = writeln!(s, "data.per_domain = {}", self.data_per_domain);
        let _ = writeln!(s, "data.size_min = {}", self.data_size_min);
        let _ = writeln!(s, "data.size_max = {}", self.data_size_max);
        let _ = writeln!(s, "data.center_jitter = {}", self.data_center_jitter);
        let _ = writeln!(s, "data.intensity_min = {}", self.data_intensity_min);
        let _ = writeln!(s, "data.intensity_max = {}", self.data_intensity_max);
        let _ = writeln!(s, "data.eval_count = {}", self.data_eval_count);
        let _ = writeln!(s, "data.eval_domain = {}", self.data_eval_domain);
        let _ = writeln!(s, "data.eval_size_min = {}", self.data_eval_size_min);
        let _ = writeln!(s, "data.eval_size_max = {}", self.data_eval_size_max);
        let _ = writeln!(s, "data.eval_center_jitter = {}", self.data_eval_center_jitter);
        let _ = writeln!(s, "data.eval_intensity_min = {}", self.data_eval_intensity_min);
        let _ = writeln!(s, "data.eval_intensity_max = {}", self.data_eval_intensity_max);
        let _ = writeln!(s, "train.epochs = {}", self.train_epochs);
        let _ = writeln!(s, "train.batch_size = {}", self.train_batch_size);
        let _ = writeln!(s, "train.lr = {}", self.train_lr);
        let _ = writeln!(s, "train.cond_dropout = {}", self.train_cond_dropout);
        let _ = writeln!(s, "guidance.scale = {}", self.guidance_scale);
        let _ = writeln!(s, "guidance.enabled = {}", self.guidance_enabled);
        let _ = writeln!(s, "invert.guided = {}", self.invert_guided);
        let _ = writeln!(s, "rewrite.lambda = {}", self.rewrite_lambda);
        let _ = writeln!(s, "rewrite.inner_steps = {}", self.rewrite_inner_steps);
        let _ = writeln!(s, "rewrite.lr = {}", self.rewrite_lr);
        let _ = writeln!(s, "rewrite.warm_start = {}", self.rewrite_warm_start);
        let _ = writeln!(s, "rewrite.optimizer_bypass = {}", self.rewrite_optimizer_bypass);
        let _ = writeln!(s, "align.outer_steps = {}", self.align_outer_steps);
        let _ = writeln!(s, "edit.source_label = {}", self.edit_source_label);
        let _ = writeln!(s, "edit.target_label = {}", self.edit_target_label);
        let _ = writeln!(s, "edit.strength = {}", self.edit_strength);
        let _ = writeln!(s, "oracle.epochs = {}", self.oracle_epochs);
        let _ = writeln!(s, "oracle.lr = {}", self.oracle_lr);
        let _ = writeln!(s, "oracle.holdout = {}", self.oracle_holdout);
        s
    }

    /// SHA-256 of the effective configuration text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.dump().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Check every module's preconditions before any work starts.
    pub fn validate(&self) -> Result<(), LabError> {
        self.schedule()?;
        self.denoiser_config()
            .validate_for(self.data_image_size)
            .map_err(|e| LabError::Config(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| LabError::Config(e.to_string()))?;
        self.guidance()
            .map_err(|e| LabError::Config(e.to_string()))?;
        self.rewrite_config()
            .validate()
            .map_err(|e| LabError::Config(e.to_string()))?;
        self.train_dataset_spec()
            .validate()
            .map_err(|e| LabError::Config(e.to_string()))?;
        self.eval_dataset_spec()
            .validate()
            .map_err(|e| LabError::Config(e.to_string()))?;
        if self.align_outer_steps == 0 {
            return Err(LabError::Config("align.outer_steps must be positive".into()));
        }
        if !self.data_domains.contains(&self.data_eval_domain) {
            return Err(LabError::Config(format!(
                "data.eval_domain '{}' is not among data.domains",
                self.data_eval_domain
            )));
        }
        for (key, label) in [
            ("edit.source_label", &self.edit_source_label),
            ("edit.target_label", &self.edit_target_label),
        ] {
            if !self.data_domains.contains(label) {
                return Err(LabError::Config(format!(
                    "{key} '{label}' is not among data.domains"
                )));
            }
        }
        if !self.edit_strength.is_finite() {
            return Err(LabError::Config("edit.strength must be finite".into()));
        }
        if self.oracle_epochs == 0 || !(self.oracle_lr > 0.0) {
            return Err(LabError::Config(
                "oracle.epochs and oracle.lr must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.oracle_holdout) {
            return Err(LabError::Config("oracle.holdout must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, LabError> {
        NoiseSchedule::linear(
            self.schedule_t_train,
            self.schedule_beta_start,
            self.schedule_beta_end,
        )
        .and_then(|s| s.infer_subsequence(self.schedule_t_infer))
        .map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        let mut c = DenoiserConfig::new(
            self.data_image_size * self.data_image_size,
            self.schedule_t_train,
        );
        c.hidden_width = self.model_hidden_width;
        c.hidden_layers = self.model_hidden_layers;
        c.time_feature_dim = self.model_time_feature_dim;
        c.cond_dim = self.model_cond_dim;
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            lr: self.train_lr,
            seed: self.seed,
            cond_dropout: self.train_cond_dropout,
        }
    }

    pub fn guidance(&self) -> Result<GuidanceConfig, difflab_core::Error> {
        GuidanceConfig::new(self.guidance_scale, self.guidance_enabled)
    }

    pub fn rewrite_config(&self) -> RewriteConfig {
        RewriteConfig {
            lambda: self.rewrite_lambda,
            inner_steps: self.rewrite_inner_steps,
            lr: self.rewrite_lr,
            warm_start: self.rewrite_warm_start,
            optimizer_bypass: self.rewrite_optimizer_bypass,
        }
    }

    pub fn train_dataset_spec(&self) -> DatasetSpec {
        let mut spec = DatasetSpec::new(
            self.data_domains.clone(),
            self.data_per_domain,
            self.data_image_size,
            sub_seed(self.seed, difflab_core::rng::streams::DATA_TRAIN),
        );
        spec.size_range = (self.data_size_min, self.data_size_max);
        spec.center_jitter = self.data_center_jitter;
        spec.intensity_range = (self.data_intensity_min, self.data_intensity_max);
        spec
    }

    /// The evaluation draw is allowed its own parameter ranges; by default it
    /// sits at and slightly past the top of the training ranges, playing the
    /// role of a user-supplied image the model was not fit to.
    pub fn eval_dataset_spec(&self) -> DatasetSpec {
        let mut spec = DatasetSpec::new(
            vec![self.data_eval_domain.clone()],
            self.data_eval_count,
            self.data_image_size,
            sub_seed(self.seed, difflab_core::rng::streams::DATA_EVAL),
        );
        spec.size_range = (self.data_eval_size_min, self.data_eval_size_max);
        spec.center_jitter = self.data_eval_center_jitter;
        spec.intensity_range = (self.data_eval_intensity_min, self.data_eval_intensity_max);
        spec
    }

    pub fn oracle_config(&self) -> difflab_core::metrics::OracleConfig {
        difflab_core::metrics::OracleConfig {
            epochs: self.oracle_epochs,
            lr: self.oracle_lr,
            holdout: self.oracle_holdout,
            seed: self.seed,
        }
    }
}

/// Derive a stage-local seed from the root seed and a stream label.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    difflab_core::CounterRng::new(seed, stream).next_u64()
}

trait ValidateFor {
    fn validate_for(&self, image_size: usize) -> Result<(), difflab_core::Error>;
}

impl ValidateFor for DenoiserConfig {
    fn validate_for(&self, image_size: usize) -> Result<(), difflab_core::Error> {
        // construction through init would validate; here a cheap structural check
        if self.latent_len != image_size * image_size {
            return Err(difflab_core::Error::Misaligned {
                what: "latent length vs image size",
                expected: image_size * image_size,
                got: self.latent_len,
            });
        }
        if self.time_feature_dim % 2 != 0 || self.time_feature_dim == 0 {
            return Err(difflab_core::Error::InvalidParam {
                name: "model.time_feature_dim",
                message: "must be positive and even".into(),
            });
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 || self.cond_dim == 0 {
            return Err(difflab_core::Error::InvalidParam {
                name: "model dimensions",
                message: "must be positive".into(),
            });
        }
        Ok(())
    }
}
