//! Experiment runner: federated training, paired comparison against the
//! centralized trainer, secure-aggregation cost sweeps and key generation.

pub mod bench;
pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fedxgb::data_io::{self, partition, synthetic_adult, Dataset};
use fedxgb::fed::{shards_from_partition, FedRun, Federation};
use fedxgb::group_math::{generate_group, GroupParams};
use fedxgb::simnet::METRICS_CSV_HEADER;
use fedxgb::stream_rng;
use fedxgb::xgboost::loss::log_loss;
use fedxgb::xgboost::model::accuracy_of;
use fedxgb::xgboost::train::centralized_train;
use fedxgb::xgboost::{BoostModel, OneVsRest};

pub use config::{DataFormat, ExperimentConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] fedxgb::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Train/test split of the configured dataset and the number of classes.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub classes: usize,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, usize)> {
    let path = || cfg.dataset.clone().expect("validated");
    let mut ds = match cfg.format {
        DataFormat::Synthetic => synthetic_adult(cfg.rows.unwrap_or(2000), cfg.seed),
        DataFormat::Libsvm => data_io::load_libsvm(path())?,
        DataFormat::Csv => data_io::load_csv(path(), &cfg.label_column)?,
        DataFormat::Mnist => data_io::load_mnist_idx(path(), cfg.labels.clone().expect("validated"))?,
    };
    if let Some(rows) = cfg.rows {
        if rows < ds.len() {
            ds = ds.sample(rows, &mut stream_rng(cfg.seed, "row-sample"));
        }
    }
    let binary = ds.labels.iter().all(|&y| y == -1.0 || y == 0.0 || y == 1.0);
    if binary && cfg.format != DataFormat::Mnist {
        ds.binarize_labels()?;
        return Ok((ds, 2));
    }
    let mut classes = 0usize;
    for (i, &y) in ds.labels.iter().enumerate() {
        if y < 0.0 || y.fract() != 0.0 || y > 255.0 {
            return Err(
                fedxgb::Error::Schema(format!("row {}: label {y} is not a class index", i + 1)).into()
            );
        }
        classes = classes.max(y as usize + 1);
    }
    Ok((ds, classes))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (ds, classes) = load_dataset(cfg)?;
    let (train, test) = ds.train_test_split(cfg.train_fraction, &mut stream_rng(cfg.seed, "train-test"));
    Ok(Prepared { train, test, classes })
}

pub fn group_params(cfg: &ExperimentConfig) -> Result<GroupParams> {
    if let Some(p) = &cfg.params_file {
        return Ok(GroupParams::from_bytes(&fs::read(p)?)?);
    }
    Ok(generate_group(cfg.sec_param, &mut stream_rng(cfg.seed, "keygen"))?)
}

/// Binary labels of one class for one-vs-rest, or the labels themselves.
fn class_labels(labels: &[f64], classes: usize, class: usize) -> Vec<f64> {
    if classes <= 2 {
        labels.to_vec()
    } else {
        labels.iter().map(|&y| f64::from(y == class as f64)).collect()
    }
}

fn class_count(classes: usize) -> usize {
    if classes <= 2 {
        1
    } else {
        classes
    }
}

/// A trained model: one binary ensemble, or one per class.
#[derive(Clone, Debug, PartialEq)]
pub enum Trained {
    Binary(BoostModel),
    OneVsRest(OneVsRest),
}

impl Trained {
    fn from_models(mut models: Vec<BoostModel>) -> Self {
        if models.len() == 1 {
            Trained::Binary(models.remove(0))
        } else {
            Trained::OneVsRest(OneVsRest { models })
        }
    }

    pub fn rounds(&self) -> usize {
        match self {
            Trained::Binary(m) => m.trees.len(),
            Trained::OneVsRest(o) => o.models.first().map_or(0, |m| m.trees.len()),
        }
    }

    pub fn truncated(&self, k: usize) -> Trained {
        match self {
            Trained::Binary(m) => Trained::Binary(m.truncated(k)),
            Trained::OneVsRest(o) => {
                Trained::OneVsRest(OneVsRest { models: o.models.iter().map(|m| m.truncated(k)).collect() })
            }
        }
    }

    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        match self {
            Trained::Binary(m) => accuracy_of(ds.rows.iter().map(|x| m.predict(x)), &ds.labels),
            Trained::OneVsRest(o) => o.accuracy(&ds.rows, &ds.labels),
        }
    }

    /// Binary log-loss, averaged over classes for one-vs-rest.
    pub fn loss(&self, ds: &Dataset) -> f64 {
        let models = match self {
            Trained::Binary(m) => std::slice::from_ref(m),
            Trained::OneVsRest(o) => o.models.as_slice(),
        };
        let classes = if models.len() == 1 { 2 } else { models.len() };
        let total: f64 = models
            .iter()
            .enumerate()
            .map(|(c, m)| {
                let margins: Vec<f64> = ds.rows.iter().map(|x| m.predict(x)).collect();
                log_loss(&margins, &class_labels(&ds.labels, classes, c))
            })
            .sum();
        total / models.len() as f64
    }

    pub fn dump(&self) -> String {
        match self {
            Trained::Binary(m) => m.dump(),
            Trained::OneVsRest(o) => o.dump(),
        }
    }
}

pub fn train_centralized(cfg: &ExperimentConfig, data: &Prepared) -> Result<Trained> {
    let boost = cfg.boost();
    let models = (0..class_count(data.classes))
        .map(|c| {
            let labels = class_labels(&data.train.labels, data.classes, c);
            centralized_train(&data.train.rows, &labels, &data.train.feature_domains, &boost)
        })
        .collect::<fedxgb::Result<Vec<_>>>()?;
    Ok(Trained::from_models(models))
}

pub fn train_federated(
    cfg: &ExperimentConfig,
    data: &Prepared,
    params: &GroupParams,
) -> Result<(Trained, Vec<FedRun>)> {
    let total_users = cfg.n_users + cfg.standby;
    let part = partition(data.train.len(), total_users, &mut stream_rng(cfg.seed, "partition"))?;
    let mut runs = Vec::new();
    for c in 0..class_count(data.classes) {
        let labels = class_labels(&data.train.labels, data.classes, c);
        let shards = shards_from_partition(&data.train.rows, &labels, &part);
        let mut fed = Federation::new(params.clone(), shards, &data.train.feature_domains, cfg.fed())?;
        runs.push(fed.train()?);
    }
    let models = runs.iter().map(|r| r.model.clone()).collect();
    Ok((Trained::from_models(models), runs))
}

fn header(command: &str, cfg: &ExperimentConfig) -> String {
    format!("# fedxgb {command} config_sha256={}\n", cfg.hash())
}

fn run_id(cfg: &ExperimentConfig) -> String {
    cfg.hash()[..12].to_string()
}

fn write(dir: &Path, name: &str, body: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body)?;
    files.push(path);
    Ok(())
}

pub struct TrainReport {
    pub test_accuracy: f64,
    pub aborted_trees: usize,
    pub files: Vec<PathBuf>,
}

pub fn accuracy_table(cfg: &ExperimentConfig, model: &Trained, data: &Prepared) -> String {
    let id = run_id(cfg);
    let mut out = String::from("run_id,round,train_accuracy,test_accuracy,train_loss,test_loss\n");
    for k in 0..=model.rounds() {
        let m = model.truncated(k);
        writeln!(
            out,
            "{id},{k},{:.6},{:.6},{:.6},{:.6}",
            m.accuracy(&data.train),
            m.accuracy(&data.test),
            m.loss(&data.train),
            m.loss(&data.test)
        )
        .unwrap();
    }
    out
}

fn metrics_table(cfg: &ExperimentConfig, runs: &[FedRun]) -> String {
    let id = run_id(cfg);
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for (c, run) in runs.iter().enumerate() {
        let rid = if runs.len() == 1 { id.clone() } else { format!("{id}-c{c}") };
        for row in run.metrics.csv_rows(&rid) {
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

/// Federated training; writes accuracy.csv, metrics.csv, model.txt and
/// config.toml into the output directory.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let params = group_params(cfg)?;
    let (model, runs) = train_federated(cfg, &data, &params)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let head = header("train", cfg);
    let mut files = Vec::new();
    write(dir, "accuracy.csv", &(head.clone() + &accuracy_table(cfg, &model, &data)), &mut files)?;
    write(dir, "metrics.csv", &(head.clone() + &metrics_table(cfg, &runs)), &mut files)?;
    write(dir, "model.txt", &(head.clone() + &model.dump()), &mut files)?;
    write(dir, "config.toml", &(head + &cfg.to_toml()), &mut files)?;
    Ok(TrainReport {
        test_accuracy: model.accuracy(&data.test),
        aborted_trees: runs.iter().map(|r| r.aborted_trees.len()).sum(),
        files,
    })
}

pub struct CompareReport {
    pub federated_accuracy: f64,
    pub centralized_accuracy: f64,
    /// `federated - centralized`, in percentage points.
    pub delta_pp: f64,
    pub identical_models: bool,
    pub files: Vec<PathBuf>,
}

/// Federated and centralized training on the same split, bins and seed.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<CompareReport> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let params = group_params(cfg)?;
    let (fed, runs) = train_federated(cfg, &data, &params)?;
    let central = train_centralized(cfg, &data)?;
    let id = run_id(cfg);
    let mut table = String::from("run_id,round,federated_test_accuracy,centralized_test_accuracy,delta_pp\n");
    for k in 0..=fed.rounds() {
        let f = fed.truncated(k).accuracy(&data.test);
        let c = central.truncated(k).accuracy(&data.test);
        writeln!(table, "{id},{k},{f:.6},{c:.6},{:.4}", 100.0 * (f - c)).unwrap();
    }
    let federated_accuracy = fed.accuracy(&data.test);
    let centralized_accuracy = central.accuracy(&data.test);
    let delta_pp = 100.0 * (federated_accuracy - centralized_accuracy);
    let identical_models = fed.dump() == central.dump();
    let summary = format!(
        "run_id,federated_test_accuracy,centralized_test_accuracy,delta_pp,identical_models\n\
         {id},{federated_accuracy:.6},{centralized_accuracy:.6},{delta_pp:.4},{identical_models}\n"
    );

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let head = header("compare", cfg);
    let mut files = Vec::new();
    write(dir, "accuracy.csv", &(head.clone() + &table), &mut files)?;
    write(dir, "compare.csv", &(head.clone() + &summary), &mut files)?;
    write(dir, "metrics.csv", &(head.clone() + &metrics_table(cfg, &runs)), &mut files)?;
    write(dir, "model.txt", &(head.clone() + &fed.dump()), &mut files)?;
    write(dir, "model_centralized.txt", &(head.clone() + &central.dump()), &mut files)?;
    write(dir, "config.toml", &(head + &cfg.to_toml()), &mut files)?;
    Ok(CompareReport { federated_accuracy, centralized_accuracy, delta_pp, identical_models, files })
}

/// Generates group parameters and writes them in binary form.
pub fn cmd_keygen(sec_param: u32, seed: u64, out: &Path) -> Result<GroupParams> {
    if sec_param < fedxgb::group_math::MIN_SEC_PARAM {
        return Err(CliError::Usage(format!(
            "sec_param must be at least {}",
            fedxgb::group_math::MIN_SEC_PARAM
        )));
    }
    let params = generate_group(sec_param, &mut stream_rng(seed, "keygen"))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, params.to_bytes())?;
    Ok(params)
}

/// Writes census-like data in libsvm form with `-1/+1` labels.
pub fn cmd_synth(rows: usize, seed: u64, out: &Path) -> Result<()> {
    let mut ds = synthetic_adult(rows, seed);
    for y in &mut ds.labels {
        *y = if *y > 0.5 { 1.0 } else { -1.0 };
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, data_io::write_libsvm(&ds))?;
    Ok(())
}
