//! Synthetic federated datasets: interval regression with Dirichlet-mixed
//! client supports and the two-moons classification task.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{CoreError, Result};
use crate::federation::{DatasetShard, Split};
use crate::rng::{derive_seed, rng_from_seed};

/// Points in the noiseless held-out regression grid.
pub const TEST_GRID_POINTS: usize = 512;

/// Interval-regression generator settings. Each client draws its own
/// mixture over the intervals from a Dirichlet, making supports non-iid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionGenConfig {
    pub intervals: Vec<(f64, f64)>,
    pub noise_std: f64,
    pub num_clients: usize,
    pub points_per_client: usize,
    pub dirichlet_alpha: Vec<f64>,
    pub seed: u64,
}

impl RegressionGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() {
            return Err(CoreError::InvalidConfig("no intervals given".into()));
        }
        for &(lo, hi) in &self.intervals {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(CoreError::InvalidConfig(format!(
                    "interval ({lo}, {hi}) is not an increasing finite pair"
                )));
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "noise std must be finite and non-negative, got {}",
                self.noise_std
            )));
        }
        if self.num_clients == 0 || self.points_per_client == 0 {
            return Err(CoreError::InvalidConfig(
                "need at least one client and one point per client".into(),
            ));
        }
        if self.dirichlet_alpha.len() != self.intervals.len() {
            return Err(CoreError::InvalidConfig(format!(
                "{} alpha entries for {} intervals",
                self.dirichlet_alpha.len(),
                self.intervals.len()
            )));
        }
        if self.dirichlet_alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(CoreError::InvalidConfig(
                "dirichlet alpha entries must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Two-moons generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoonsGenConfig {
    pub num_clients: usize,
    pub points_per_client: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl MoonsGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 || self.points_per_client == 0 {
            return Err(CoreError::InvalidConfig(
                "need at least one client and one point per client".into(),
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "noise std must be finite and non-negative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Noiseless evaluation grid over the regression support.
#[derive(Clone, Debug, PartialEq)]
pub struct TestGrid {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

/// The noiseless regression target.
pub fn ground_truth(x: f64) -> f64 {
    1.5 * (0.4 * PI * x).sin() + 1.5 * (2.0 * PI * x).cos()
}

/// The three disjoint supports used by the 1-D regression task.
pub fn default_intervals() -> Vec<(f64, f64)> {
    vec![(-0.8, -0.6), (-0.2, 0.0), (0.5, 0.8)]
}

/// Generates one shard per client. Each client first draws interval
/// proportions from Dirichlet(alpha) (via normalized Gamma draws), then
/// samples inputs uniformly within proportion-chosen intervals and labels
/// them with the noisy ground truth. Also returns the shared noiseless
/// test grid: evenly spaced by arc length across the interval union.
pub fn gen_interval_regression(
    cfg: &RegressionGenConfig,
) -> Result<(Vec<DatasetShard>, TestGrid)> {
    cfg.validate()?;
    let mut shards = Vec::with_capacity(cfg.num_clients);
    for m in 0..cfg.num_clients {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, "regression-client", m as u64));
        let proportions = dirichlet(&cfg.dirichlet_alpha, &mut rng);
        let n = cfg.points_per_client;
        let mut inputs = Array2::zeros((n, 1));
        let mut targets = Array2::zeros((n, 1));
        for i in 0..n {
            let j = pick_index(&proportions, rng.random());
            let (lo, hi) = cfg.intervals[j];
            let x = lo + (hi - lo) * rng.random::<f64>();
            let eps: f64 = rng.sample(StandardNormal);
            inputs[[i, 0]] = x;
            targets[[i, 0]] = ground_truth(x) + cfg.noise_std * eps;
        }
        shards.push(DatasetShard::new(m, inputs, targets)?);
    }
    let grid_inputs = union_grid(&cfg.intervals, TEST_GRID_POINTS);
    let grid_targets = grid_inputs.mapv(ground_truth);
    Ok((
        shards,
        TestGrid {
            inputs: grid_inputs,
            targets: grid_targets,
        },
    ))
}

fn dirichlet(alpha: &[f64], rng: &mut crate::rng::SeededRng) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("validated alpha").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|g| g / total).collect()
}

fn pick_index(proportions: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (j, p) in proportions.iter().enumerate() {
        cum += p;
        if u < cum {
            return j;
        }
    }
    proportions.len() - 1
}

/// `n` points spaced evenly by arc length over the union of the intervals,
/// endpoints included. Intervals are walked in ascending order.
fn union_grid(intervals: &[(f64, f64)], n: usize) -> Array2<f64> {
    let mut sorted: Vec<(f64, f64)> = intervals.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lengths: Vec<f64> = sorted.iter().map(|&(lo, hi)| hi - lo).collect();
    let total: f64 = lengths.iter().sum();
    let mut grid = Array2::zeros((n, 1));
    for i in 0..n {
        let s = if n == 1 {
            0.0
        } else {
            total * i as f64 / (n - 1) as f64
        };
        let mut remaining = s;
        let mut x = sorted[sorted.len() - 1].1;
        for (&(lo, _), &len) in sorted.iter().zip(&lengths) {
            if remaining <= len {
                x = lo + remaining;
                break;
            }
            remaining -= len;
        }
        grid[[i, 0]] = x;
    }
    grid
}

/// `n` points spaced evenly across the full span from the lowest to the
/// highest interval endpoint, with a flag per point marking whether it
/// falls inside the support union. Gaps between intervals probe the
/// model's out-of-support behavior.
pub fn span_grid(intervals: &[(f64, f64)], n: usize) -> Result<(Array2<f64>, Vec<bool>)> {
    if intervals.is_empty() || n < 2 {
        return Err(CoreError::InvalidConfig(
            "span grid needs intervals and at least two points".into(),
        ));
    }
    let lo = intervals.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = intervals
        .iter()
        .map(|p| p.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut grid = Array2::zeros((n, 1));
    let mut in_support = Vec::with_capacity(n);
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        grid[[i, 0]] = x;
        in_support.push(intervals.iter().any(|&(a, b)| x >= a && x <= b));
    }
    Ok((grid, in_support))
}

/// Generates one balanced two-moons shard per client: class 0 on the arc
/// (cos t, sin t), class 1 on (1 - cos t, 0.5 - sin t), t uniform on
/// [0, pi], plus isotropic Gaussian noise. Class 0 gets the extra point
/// when the per-client count is odd; rows are blocked by class.
pub fn gen_moons(cfg: &MoonsGenConfig) -> Result<Vec<DatasetShard>> {
    cfg.validate()?;
    let mut shards = Vec::with_capacity(cfg.num_clients);
    for m in 0..cfg.num_clients {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, "moons-client", m as u64));
        let n = cfg.points_per_client;
        let n0 = n.div_ceil(2);
        let mut inputs = Array2::zeros((n, 2));
        let mut targets = Array2::zeros((n, 2));
        for i in 0..n {
            let t = PI * rng.random::<f64>();
            let (cx, cy, class) = if i < n0 {
                (t.cos(), t.sin(), 0)
            } else {
                (1.0 - t.cos(), 0.5 - t.sin(), 1)
            };
            let ex: f64 = rng.sample(StandardNormal);
            let ey: f64 = rng.sample(StandardNormal);
            inputs[[i, 0]] = cx + cfg.noise_std * ex;
            inputs[[i, 1]] = cy + cfg.noise_std * ey;
            targets[[i, class]] = 1.0;
        }
        shards.push(DatasetShard::new(m, inputs, targets)?);
    }
    Ok(shards)
}

/// Marks `round(fraction * n)` uniformly chosen rows as held-out test
/// points. The split must leave at least one training row.
pub fn split_train_test(shard: &DatasetShard, fraction: f64, seed: u64) -> Result<DatasetShard> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CoreError::InvalidConfig(format!(
            "test fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    shard.validate()?;
    let n = shard.num_points();
    let num_test = (fraction * n as f64).round() as usize;
    if num_test >= n {
        return Err(CoreError::InvalidConfig(format!(
            "holding out {num_test} of {n} rows leaves no training data"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut split = vec![Split::Train; n];
    for i in rand::seq::index::sample(&mut rng, n, num_test) {
        split[i] = Split::Test;
    }
    let mut out = shard.clone();
    out.split = split;
    out.validate()?;
    Ok(out)
}
