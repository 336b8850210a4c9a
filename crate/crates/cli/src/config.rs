use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;
use fedxgb::fed::{DropoutPhase, FedConfig};
use fedxgb::simnet::DropoutSchedule;
use fedxgb::xgboost::{BaseScore, BoostConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Libsvm,
    Csv,
    Mnist,
    /// Generated census-like data; `dataset` is ignored.
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    KeySharing,
    Upload,
    Reveal,
}

impl From<Phase> for DropoutPhase {
    fn from(p: Phase) -> Self {
        match p {
            Phase::KeySharing => DropoutPhase::KeySharing,
            Phase::Upload => DropoutPhase::Upload,
            Phase::Reveal => DropoutPhase::Reveal,
        }
    }
}

/// Every knob of a run. Read from a TOML file, then overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub format: DataFormat,
    pub label_column: String,
    /// IDX label file for the `mnist` format.
    pub labels: Option<PathBuf>,
    /// Keep this many rows after a seeded shuffle. The synthetic generator
    /// produces 2000 when unset.
    pub rows: Option<usize>,
    pub train_fraction: f64,
    pub n_users: usize,
    /// Defaults to `ceil(0.6 * n_users)`.
    pub threshold: Option<usize>,
    pub standby: usize,
    pub sec_param: u32,
    /// Group parameters written by `keygen`; generated from the seed otherwise.
    pub params_file: Option<PathBuf>,
    pub rounds: usize,
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub bins: usize,
    pub feature_subsample: f64,
    pub min_child_hessian: f64,
    /// Fixed base margin; the prior log-odds is used when absent.
    pub base_score: Option<f64>,
    pub frac_bits: u32,
    pub dropout_rate: f64,
    pub dropout_period: u32,
    pub dropout_phase: Phase,
    pub rekey_per_tree: bool,
    pub rejoin: bool,
    pub timing: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            format: DataFormat::Synthetic,
            label_column: "label".into(),
            labels: None,
            rows: None,
            train_fraction: 0.8,
            n_users: 10,
            threshold: None,
            standby: 0,
            sec_param: 128,
            params_file: None,
            rounds: 10,
            max_depth: 3,
            lambda: 1.0,
            gamma: 0.0,
            learning_rate: 0.3,
            bins: 1,
            feature_subsample: 1.0,
            min_child_hessian: 1.0,
            base_score: None,
            frac_bits: fedxgb::codec::DEFAULT_FRAC_BITS,
            dropout_rate: 0.0,
            dropout_period: 10,
            dropout_phase: Phase::Upload,
            rekey_per_tree: true,
            rejoin: true,
            timing: false,
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn threshold(&self) -> usize {
        self.threshold.unwrap_or_else(|| (self.n_users * 3).div_ceil(5).max(1))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.n_users == 0 {
            return usage("n_users must be at least 1".into());
        }
        let t = self.threshold();
        if t == 0 || t > self.n_users {
            return usage(format!("threshold {t} must be in [1, n_users = {}]", self.n_users));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return usage(format!("dropout_rate {} must be in [0, 1)", self.dropout_rate));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return usage(format!("train_fraction {} must be in (0, 1]", self.train_fraction));
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return usage(format!("feature_subsample {} must be in (0, 1]", self.feature_subsample));
        }
        if self.bins == 0 {
            return usage("bins must be at least 1".into());
        }
        if self.lambda <= 0.0 {
            return usage("lambda must be positive".into());
        }
        if self.sec_param < fedxgb::group_math::MIN_SEC_PARAM {
            return usage(format!("sec_param must be at least {}", fedxgb::group_math::MIN_SEC_PARAM));
        }
        if self.format != DataFormat::Synthetic && self.dataset.is_none() {
            return usage("dataset path required for this format".into());
        }
        if self.format == DataFormat::Mnist && self.labels.is_none() {
            return usage("mnist format needs a labels file".into());
        }
        Ok(())
    }

    pub fn boost(&self) -> BoostConfig {
        BoostConfig {
            rounds: self.rounds,
            max_depth: self.max_depth,
            lambda: self.lambda,
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            feature_subsample: self.feature_subsample,
            bins: self.bins,
            min_child_hessian: self.min_child_hessian,
            base_score: self.base_score.map_or(BaseScore::Prior, BaseScore::Fixed),
            frac_bits: self.frac_bits,
            seed: self.seed,
        }
    }

    pub fn fed(&self) -> FedConfig {
        let mut fc = FedConfig::new(self.boost(), self.threshold());
        fc.dropout =
            DropoutSchedule { period: self.dropout_period, rate: self.dropout_rate, seed: self.seed };
        fc.dropout_phase = self.dropout_phase.into();
        fc.standby = self.standby;
        fc.rekey_per_tree = self.rekey_per_tree;
        fc.rejoin = self.rejoin;
        fc.measure_time = self.timing;
        fc
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig { output_dir: PathBuf::new(), ..self.clone() };
        format!("{:x}", Sha256::digest(canonical.to_toml().as_bytes()))
    }
}

/// Flags that override config fields.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// TOML file with any subset of the configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long, short = 'n')]
    pub n_users: Option<usize>,
    #[arg(long, short = 't')]
    pub threshold: Option<usize>,
    #[arg(long)]
    pub standby: Option<usize>,
    #[arg(long)]
    pub sec_param: Option<u32>,
    #[arg(long)]
    pub params_file: Option<PathBuf>,
    #[arg(long, short = 'k')]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub feature_subsample: Option<f64>,
    #[arg(long)]
    pub min_child_hessian: Option<f64>,
    #[arg(long)]
    pub base_score: Option<f64>,
    #[arg(long)]
    pub frac_bits: Option<u32>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    #[arg(long)]
    pub dropout_period: Option<u32>,
    #[arg(long, value_enum)]
    pub dropout_phase: Option<Phase>,
    #[arg(long)]
    pub rekey_per_tree: Option<bool>,
    #[arg(long)]
    pub rejoin: Option<bool>,
    /// Record handler time in cpu_ms columns (makes output non-reproducible).
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short = 'o')]
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() { c.$field = v; }
            )*};
        }
        set!(
            format,
            label_column,
            train_fraction,
            n_users,
            standby,
            sec_param,
            rounds,
            max_depth,
            lambda,
            gamma,
            learning_rate,
            bins,
            feature_subsample,
            min_child_hessian,
            frac_bits,
            dropout_rate,
            dropout_period,
            dropout_phase,
            rekey_per_tree,
            rejoin,
            seed,
            output_dir
        );
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() { c.$field = self.$field.clone(); }
            )*};
        }
        set_opt!(dataset, labels, rows, threshold, params_file, base_score);
        if self.timing {
            c.timing = true;
        }
        c.validate()?;
        Ok(c)
    }
}
