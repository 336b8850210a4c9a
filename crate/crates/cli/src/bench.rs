//! Cost sweep of a single secure aggregation over user count, vector length
//! and dropout rate.

use std::fmt::Write as _;
use std::time::Duration;

use fedxgb::codec::{encode, FixedPointConfig};
use fedxgb::fed::{DropoutPhase, FedConfig, Federation};
use fedxgb::group_math::GroupParams;
use fedxgb::simnet::Entity;
use fedxgb::xgboost::BoostConfig;
use fedxgb::{stream_rng, Error, UserId};
use rand::seq::index::sample;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub users: Vec<usize>,
    pub lengths: Vec<usize>,
    pub rates: Vec<f64>,
    pub trials: usize,
    /// Threshold as a fraction of `n`, rounded up.
    pub threshold_fraction: f64,
    /// Inputs are drawn uniformly from `[-max_input, max_input]`.
    pub max_input: i64,
    pub timing: bool,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            users: vec![10, 20, 50, 100],
            lengths: vec![100, 500, 1000],
            rates: vec![0.0, 0.1, 0.2, 0.3],
            trials: 1,
            threshold_fraction: 0.6,
            max_input: 8,
            timing: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub n: usize,
    pub m: usize,
    pub rate: f64,
    pub trial: usize,
    pub threshold: usize,
    pub dropped: usize,
    pub active: usize,
    pub aborted: bool,
    /// Largest deviation of the aggregate from the plaintext sum of the
    /// surviving users' inputs; `None` when aborted.
    pub max_error: Option<f64>,
    pub server_sent: u64,
    pub server_recv: u64,
    pub user_sent_mean: f64,
    pub user_recv_mean: f64,
    pub server_cpu: Duration,
    pub user_cpu_mean: Duration,
}

pub const SWEEP_CSV_HEADER: &str = "n,m,dropout_rate,trial,threshold,dropped,active,aborted,max_error,\
server_bytes_sent,server_bytes_recv,user_bytes_sent_mean,user_bytes_recv_mean,server_cpu_ms,user_cpu_ms_mean";

impl CellResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.1},{:.1},{:.3},{:.3}",
            self.n,
            self.m,
            self.rate,
            self.trial,
            self.threshold,
            self.dropped,
            self.active,
            self.aborted,
            self.max_error.map_or(String::new(), |e| format!("{e:e}")),
            self.server_sent,
            self.server_recv,
            self.user_sent_mean,
            self.user_recv_mean,
            self.server_cpu.as_secs_f64() * 1e3,
            self.user_cpu_mean.as_secs_f64() * 1e3,
        )
    }
}

/// Runs key setup and one aggregation of `m` real inputs per user, with
/// `round(rate * n)` users disconnecting before upload.
pub fn run_cell(
    params: &GroupParams,
    n: usize,
    m: usize,
    rate: f64,
    trial: usize,
    sweep: &SweepConfig,
    frac_bits: u32,
) -> fedxgb::Result<CellResult> {
    let threshold = ((sweep.threshold_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = stream_rng(sweep.seed, &format!("bench-{n}-{m}-{rate}-{trial}"));
    let boost = BoostConfig { frac_bits, seed: rng.gen(), ..BoostConfig::default() };
    let mut cfg = FedConfig::new(boost, threshold);
    cfg.measure_time = sweep.timing;
    let shards = (1..=n as u32).map(|u| (UserId(u), Vec::new(), Vec::new())).collect();
    let mut fed = Federation::new(params.clone(), shards, &[], cfg)?;
    let codec = FixedPointConfig::new(frac_bits, params.n.clone());
    codec.check_headroom(n as f64 * sweep.max_input as f64)?;

    let scale = 2f64.powi(-(frac_bits as i32));
    let mut inputs = Vec::with_capacity(n);
    for u in 1..=n as u32 {
        let xs: Vec<f64> =
            (0..m).map(|_| rng.gen_range(-sweep.max_input..=sweep.max_input) as f64 * scale).collect();
        let encoded = xs.iter().map(|&x| encode(x, &codec)).collect::<fedxgb::Result<Vec<_>>>()?;
        fed.user_mut(UserId(u)).expect("registered").set_input(encoded);
        inputs.push(xs);
    }
    let dropped = ((rate * n as f64).round() as usize).min(n);
    for i in sample(&mut rng, n, dropped) {
        fed.schedule_drop(UserId(i as u32 + 1), DropoutPhase::Upload);
    }

    fed.start_epoch()?;
    let outcome = match fed.secure_aggregate() {
        Ok(o) => Some(o),
        Err(Error::RoundAbort { .. }) => None,
        Err(e) => return Err(e),
    };
    let max_error = outcome.as_ref().map(|o| {
        (0..m)
            .map(|j| {
                let expected: f64 = o.active.iter().map(|u| inputs[u.0 as usize - 1][j]).sum();
                (o.values[j] - expected).abs()
            })
            .fold(0.0, f64::max)
    });

    let metrics = fed.bus.snapshot_metrics();
    let (server_sent, server_recv) = metrics.entity_bytes(Entity::Server);
    let (mut us, mut ur) = (0u64, 0u64);
    let mut ucpu = Duration::ZERO;
    for u in 1..=n as u32 {
        let (s, r) = metrics.entity_bytes(Entity::User(UserId(u)));
        us += s;
        ur += r;
        ucpu += metrics.entity_cpu(Entity::User(UserId(u)));
    }
    Ok(CellResult {
        n,
        m,
        rate,
        trial,
        threshold,
        dropped,
        active: outcome.as_ref().map_or(n - dropped, |o| o.active.len()),
        aborted: outcome.is_none(),
        max_error,
        server_sent,
        server_recv,
        user_sent_mean: us as f64 / n as f64,
        user_recv_mean: ur as f64 / n as f64,
        server_cpu: metrics.entity_cpu(Entity::Server),
        user_cpu_mean: ucpu / n as u32,
    })
}

/// Every cell of the grid, in `n`, `m`, rate, trial order.
pub fn run_sweep(params: &GroupParams, sweep: &SweepConfig) -> fedxgb::Result<Vec<CellResult>> {
    let mut out = Vec::new();
    for &n in &sweep.users {
        for &m in &sweep.lengths {
            for &rate in &sweep.rates {
                for trial in 0..sweep.trials {
                    out.push(run_cell(params, n, m, rate, trial, sweep, 0)?);
                }
            }
        }
    }
    Ok(out)
}

pub fn sweep_csv(header_comment: &str, cells: &[CellResult]) -> String {
    let mut out = format!("{header_comment}{SWEEP_CSV_HEADER}\n");
    for c in cells {
        writeln!(out, "{}", c.csv_row()).unwrap();
    }
    out
}

/// Ordinary least squares fit of `y` on polynomial features of `x` up to
/// `degree`. Returns the coefficients (constant first) and the residual sum
/// of squares.
pub fn poly_fit(x: &[f64], y: &[f64], degree: usize) -> (Vec<f64>, f64) {
    let k = degree + 1;
    let mut a = vec![vec![0.0; k + 1]; k];
    for (&xi, &yi) in x.iter().zip(y) {
        let pows: Vec<f64> = (0..k).map(|d| xi.powi(d as i32)).collect();
        for r in 0..k {
            for c in 0..k {
                a[r][c] += pows[r] * pows[c];
            }
            a[r][k] += pows[r] * yi;
        }
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                let pivot = a[col].clone();
                for (x, p) in a[r].iter_mut().zip(&pivot).skip(col) {
                    *x -= f * p;
                }
            }
        }
    }
    let coef: Vec<f64> = (0..k).map(|i| a[i][k] / a[i][i]).collect();
    let rss = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let fit: f64 = coef.iter().enumerate().map(|(d, c)| c * xi.powi(d as i32)).sum();
            (yi - fit).powi(2)
        })
        .sum();
    (coef, rss)
}

pub fn r_squared(y: &[f64], rss: f64) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if tss == 0.0 {
        1.0
    } else {
        1.0 - rss / tss
    }
}

/// Gaussian AIC `n ln(RSS/n) + 2k` for a fit with `k` parameters.
pub fn aic(samples: usize, rss: f64, params: usize) -> f64 {
    let n = samples as f64;
    n * (rss.max(f64::MIN_POSITIVE) / n).ln() + 2.0 * params as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_fit_recovers_exact_quadratic() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 2.0 * v + 0.5 * v * v).collect();
        let (c, rss) = poly_fit(&x, &y, 2);
        assert!((c[0] - 3.0).abs() < 1e-8 && (c[1] - 2.0).abs() < 1e-8 && (c[2] - 0.5).abs() < 1e-9);
        assert!(rss < 1e-12);
        let (_, rss1) = poly_fit(&x, &y, 1);
        assert!(aic(10, rss, 3) < aic(10, rss1, 2));
        assert!(r_squared(&y, rss1) < 1.0);
    }
}
