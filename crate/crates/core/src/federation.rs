//! Simulated federated protocols: one-shot coreset upload with weighted
//! server aggregation, a round-based averaging baseline, and exact
//! communication accounting.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::bpc::{learn_coreset, BpcFklConfig, LabelMode, Pseudocoreset};
use crate::error::{CoreError, Result};
use crate::nn::{init_params, LikelihoodSpec, MlpArchitecture, ParamVector};
use crate::posterior::{GradientAscent, LikelihoodTerm, Optimizer, PriorSpec, TargetDensity};
use crate::rng::{derive_seed, rng_from_seed};

/// Row role inside a client shard.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One client's local dataset with its train/test partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetShard {
    pub client_id: usize,
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub split: Vec<Split>,
}

impl DatasetShard {
    /// A shard with every row marked as training data.
    pub fn new(client_id: usize, inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        let split = vec![Split::Train; inputs.nrows()];
        let shard = DatasetShard {
            client_id,
            inputs,
            targets,
            split,
        };
        shard.validate()?;
        Ok(shard)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.nrows() == 0 {
            return Err(CoreError::Empty(format!(
                "shard {} has no data points",
                self.client_id
            )));
        }
        if self.targets.nrows() != self.inputs.nrows() || self.split.len() != self.inputs.nrows()
        {
            return Err(CoreError::DimensionMismatch(format!(
                "shard {}: {} input rows, {} target rows, {} split marks",
                self.client_id,
                self.inputs.nrows(),
                self.targets.nrows(),
                self.split.len()
            )));
        }
        if !self.inputs.iter().all(|v| v.is_finite())
            || !self.targets.iter().all(|v| v.is_finite())
        {
            return Err(CoreError::NonFinite(format!(
                "shard {} data",
                self.client_id
            )));
        }
        Ok(())
    }

    pub fn num_points(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.ncols()
    }

    fn indices_of(&self, role: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_train(&self) -> usize {
        self.split.iter().filter(|s| **s == Split::Train).count()
    }

    pub fn num_test(&self) -> usize {
        self.num_points() - self.num_train()
    }

    /// Owned copies of the rows with the given role, `(inputs, targets)`.
    pub fn rows(&self, role: Split) -> (Array2<f64>, Array2<f64>) {
        let idx = self.indices_of(role);
        (
            self.inputs.select(Axis(0), &idx),
            self.targets.select(Axis(0), &idx),
        )
    }
}

/// One client coreset with its aggregation weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedCoreset {
    pub coreset: Pseudocoreset,
    pub weight: f64,
}

/// The server-side aggregate: the concatenation of client coresets, each
/// weighted by `M * n_m / N` so equal shards get weight one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerCoreset {
    pub entries: Vec<WeightedCoreset>,
    pub total_data_size: usize,
    pub num_clients: usize,
}

impl ServerCoreset {
    /// Weights coresets by their client's data count: `w_m = M * n_m / N`.
    pub fn aggregate(coresets: Vec<Pseudocoreset>, data_sizes: &[usize]) -> Result<Self> {
        if coresets.is_empty() {
            return Err(CoreError::Empty("no coresets to aggregate".into()));
        }
        if coresets.len() != data_sizes.len() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} coresets but {} data sizes",
                coresets.len(),
                data_sizes.len()
            )));
        }
        if data_sizes.contains(&0) {
            return Err(CoreError::Empty("client with zero data points".into()));
        }
        let m = coresets.len();
        let n_total: usize = data_sizes.iter().sum();
        let entries = coresets
            .into_iter()
            .zip(data_sizes)
            .map(|(coreset, &n)| WeightedCoreset {
                coreset,
                weight: m as f64 * n as f64 / n_total as f64,
            })
            .collect();
        Ok(ServerCoreset {
            entries,
            total_data_size: n_total,
            num_clients: m,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != self.num_clients {
            return Err(CoreError::DimensionMismatch(format!(
                "{} entries for {} clients",
                self.entries.len(),
                self.num_clients
            )));
        }
        for e in &self.entries {
            e.coreset.validate()?;
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(CoreError::InvalidConfig(format!(
                    "aggregation weight must be positive, got {}",
                    e.weight
                )));
            }
        }
        Ok(())
    }
}

/// Direction of a simulated transfer. `Down` is server to client.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Down,
    Up,
}

/// One simulated transfer. `floats` counts 32-bit reals; `ints` counts
/// integer class indices sent instead of one-hot rows for frozen labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommEvent {
    pub round: usize,
    pub direction: Direction,
    pub client_id: usize,
    pub floats: u64,
    pub ints: u64,
    pub method: String,
}

/// Append-only account of all simulated client-server traffic.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    events: Vec<CommEvent>,
}

/// Exact transfer totals; floats and integer label indices kept separate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommTotals {
    pub floats: u64,
    pub ints: u64,
}

impl CommLedger {
    pub fn new() -> Self {
        CommLedger::default()
    }

    pub fn record(&mut self, event: CommEvent) {
        self.events.push(event);
    }

    pub fn extend_from(&mut self, other: &CommLedger) {
        self.events.extend(other.events.iter().cloned());
    }

    pub fn events(&self) -> &[CommEvent] {
        &self.events
    }

    /// Canonical report order, independent of execution scheduling.
    pub fn normalize(&mut self) {
        self.events.sort_by(|a, b| {
            (a.round, a.client_id, a.direction, &a.method)
                .cmp(&(b.round, b.client_id, b.direction, &b.method))
        });
    }

    /// Exact totals over all events, or only those with a matching method.
    pub fn totals(&self, method: Option<&str>) -> CommTotals {
        let mut t = CommTotals::default();
        for e in &self.events {
            if method.is_none_or(|m| m == e.method) {
                t.floats += e.floats;
                t.ints += e.ints;
            }
        }
        t
    }
}

/// Free-function alias for [`CommLedger::totals`].
pub fn comm_totals(ledger: &CommLedger, method: Option<&str>) -> CommTotals {
    ledger.totals(method)
}

/// Cumulative float count at the first trace point whose metric crosses
/// `threshold` (`at_least` picks the crossing direction); `None` if never.
pub fn floats_to_reach(trace: &[(u64, f64)], threshold: f64, at_least: bool) -> Option<u64> {
    trace
        .iter()
        .find(|(_, metric)| {
            if at_least {
                *metric >= threshold
            } else {
                *metric <= threshold
            }
        })
        .map(|(floats, _)| *floats)
}

/// The one-shot protocol: every client learns a pseudocoreset from its local
/// shard and uploads it once; the server aggregates with data-proportional
/// weights. No other traffic occurs.
pub fn run_bpc_fl(
    shards: &[DatasetShard],
    arch: &MlpArchitecture,
    prior: &PriorSpec,
    cfg: &BpcFklConfig,
) -> Result<(ServerCoreset, CommLedger)> {
    if shards.is_empty() {
        return Err(CoreError::Empty("no client shards".into()));
    }
    let mut ledger = CommLedger::new();
    let mut coresets = Vec::with_capacity(shards.len());
    let mut data_sizes = Vec::with_capacity(shards.len());
    for shard in shards {
        let coreset = learn_coreset(shard, arch, prior, cfg).map_err(|e| CoreError::Client {
            client_id: shard.client_id,
            source: Box::new(e),
        })?;
        let k = coreset.num_points() as u64;
        let label_floats = match coreset.label_mode {
            LabelMode::Learnable => coreset.label_dim() as u64,
            LabelMode::Frozen => 0,
        };
        ledger.record(CommEvent {
            round: 0,
            direction: Direction::Up,
            client_id: shard.client_id,
            floats: k * (coreset.input_dim() as u64 + label_floats),
            ints: if coreset.label_mode == LabelMode::Frozen {
                k
            } else {
                0
            },
            method: "bpc_fl".into(),
        });
        data_sizes.push(shard.num_train());
        coresets.push(coreset);
    }
    ledger.normalize();
    Ok((ServerCoreset::aggregate(coresets, &data_sizes)?, ledger))
}

/// The density the server samples from: prior plus one weighted likelihood
/// term per client coreset. Invariant under permuting the entries.
pub fn server_target(
    sc: &ServerCoreset,
    arch: &MlpArchitecture,
    prior: &PriorSpec,
    lik: &LikelihoodSpec,
) -> TargetDensity {
    TargetDensity {
        arch: arch.clone(),
        prior: *prior,
        terms: sc
            .entries
            .iter()
            .map(|e| LikelihoodTerm {
                inputs: e.coreset.z.clone(),
                targets: e.coreset.y_hat.clone(),
                lik: *lik,
                weight: e.weight,
            })
            .collect(),
    }
}

/// A client's local objective as a log-density: mean log-likelihood over its
/// training rows minus the shared L2 penalty, so shards of different sizes
/// see comparable gradient scales.
pub fn client_objective(
    shard: &DatasetShard,
    arch: &MlpArchitecture,
    prior: &PriorSpec,
    lik: &LikelihoodSpec,
) -> Result<TargetDensity> {
    let (inputs, targets) = shard.rows(Split::Train);
    if inputs.nrows() == 0 {
        return Err(CoreError::Empty(format!(
            "shard {} has no training rows",
            shard.client_id
        )));
    }
    let weight = 1.0 / inputs.nrows() as f64;
    Ok(TargetDensity {
        arch: arch.clone(),
        prior: *prior,
        terms: vec![LikelihoodTerm {
            inputs,
            targets,
            lik: *lik,
            weight,
        }],
    })
}

/// Settings for the round-based averaging baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedAvgConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local_steps: usize,
    pub client_optimizer: Optimizer,
    pub client_step_size: f64,
    pub server_optimizer: Optimizer,
    pub server_step_size: f64,
    /// Optional warm start; round 0 begins here instead of a random init.
    pub init: Option<ParamVector>,
    pub seed: u64,
}

impl FedAvgConfig {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if self.clients_per_round == 0 || self.clients_per_round > num_clients {
            return Err(CoreError::InvalidConfig(format!(
                "clients_per_round must lie in 1..={num_clients}, got {}",
                self.clients_per_round
            )));
        }
        if self.local_steps == 0 {
            return Err(CoreError::InvalidConfig(
                "local_steps must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("client step size", self.client_step_size),
            ("server step size", self.server_step_size),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CoreError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        self.client_optimizer.validate()?;
        self.server_optimizer.validate()?;
        Ok(())
    }
}

/// Round-based federated averaging. Each round the server broadcasts its
/// parameters to a sampled client subset; every sampled client takes
/// `local_steps` optimizer steps on its local objective and uploads the
/// parameter difference; the server treats the data-weighted mean difference
/// as a pseudo-gradient for its own optimizer. Returns the server parameters
/// before any round and after each round, plus the traffic ledger.
/// `upfront` events (e.g. the coreset cost behind a warm start) are copied
/// into the ledger ahead of the round traffic.
pub fn run_fedavg(
    shards: &[DatasetShard],
    arch: &MlpArchitecture,
    prior: &PriorSpec,
    lik: &LikelihoodSpec,
    cfg: &FedAvgConfig,
    method: &str,
    upfront: Option<&CommLedger>,
) -> Result<(Vec<ParamVector>, CommLedger)> {
    if shards.is_empty() {
        return Err(CoreError::Empty("no client shards".into()));
    }
    cfg.validate(shards.len())?;
    arch.validate()?;
    let p = arch.param_count();
    if let Some(init) = &cfg.init {
        if init.len() != p {
            return Err(CoreError::DimensionMismatch(format!(
                "warm-start init has {} parameters, architecture needs {p}",
                init.len()
            )));
        }
    }

    let objectives: Vec<TargetDensity> = shards
        .iter()
        .map(|s| client_objective(s, arch, prior, lik))
        .collect::<Result<_>>()?;
    let train_sizes: Vec<f64> = shards.iter().map(|s| s.num_train() as f64).collect();

    let mut ledger = CommLedger::new();
    if let Some(up) = upfront {
        ledger.extend_from(up);
    }

    let mut theta = match &cfg.init {
        Some(init) => init.clone(),
        None => init_params(arch, derive_seed(cfg.seed, "fedavg-init", 0))?,
    };
    let mut per_round = Vec::with_capacity(cfg.rounds + 1);
    per_round.push(theta.clone());

    let mut server_opt = GradientAscent::new(cfg.server_optimizer, cfg.server_step_size, p);
    let mut grad = ParamVector::zeros(p);
    let mut scratch = ParamVector::zeros(p);

    for round in 1..=cfg.rounds {
        let mut participants: Vec<usize> = rand::seq::index::sample(
            &mut rng_from_seed(derive_seed(cfg.seed, "round-participants", round as u64)),
            shards.len(),
            cfg.clients_per_round,
        )
        .into_vec();
        // Ascending order fixes the float summation order regardless of how
        // the sample iterator happens to enumerate.
        participants.sort_unstable();

        let mut delta_sum = Array1::<f64>::zeros(p);
        let mut size_sum = 0.0;
        for &m in &participants {
            let mut local = theta.clone();
            let mut client_opt =
                GradientAscent::new(cfg.client_optimizer, cfg.client_step_size, p);
            for _ in 0..cfg.local_steps {
                objectives[m].grad_log_unnorm_into(&local, &mut grad, &mut scratch)?;
                if !client_opt.step(&mut local.values, &grad.values) {
                    return Err(CoreError::Diverged {
                        step: round,
                        context: format!("averaging round, client {}", shards[m].client_id),
                    });
                }
            }
            delta_sum.scaled_add(train_sizes[m], &(&local.values - &theta.values));
            size_sum += train_sizes[m];
            for direction in [Direction::Down, Direction::Up] {
                ledger.record(CommEvent {
                    round,
                    direction,
                    client_id: shards[m].client_id,
                    floats: p as u64,
                    ints: 0,
                    method: method.into(),
                });
            }
        }
        let pseudo_grad = delta_sum / size_sum;
        if !server_opt.step(&mut theta.values, &pseudo_grad) {
            return Err(CoreError::Diverged {
                step: round,
                context: "averaging server update".into(),
            });
        }
        per_round.push(theta.clone());
    }
    ledger.normalize();
    Ok((per_round, ledger))
}
