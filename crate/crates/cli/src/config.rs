//! Experiment configuration: one JSON document selects a task preset and
//! overrides any subset of its settings. Unknown keys are rejected so typos
//! fail loudly, and the fully resolved settings are echoed into every run
//! report so an experiment can be reproduced from its artifacts alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bpcfl_core::bpc::{BpcFklConfig, LabelMode, PretrainConfig};
use bpcfl_core::datagen::default_intervals;
use bpcfl_core::federation::FedAvgConfig;
use bpcfl_core::nn::{
    Activation, GroupNormSpec, LikelihoodSpec, MlpArchitecture, ParamVector, Task,
};
use bpcfl_core::posterior::{HmcConfig, OptConfig, Optimizer, PriorSpec};
use bpcfl_core::rng::derive_seed;

use crate::{CliError, Result};

/// Which built-in experiment supplies the defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPreset {
    /// 1-d interval regression with non-iid client supports.
    Regression,
    /// Two-moons binary classification.
    Moons,
}

impl TaskPreset {
    pub fn task(self) -> Task {
        match self {
            TaskPreset::Regression => Task::Regression,
            TaskPreset::Moons => Task::Classification,
        }
    }
}

/// Dataset overrides; every field falls back to the preset.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub num_clients: Option<usize>,
    pub points_per_client: Option<usize>,
    pub noise_std: Option<f64>,
    pub test_fraction: Option<f64>,
    /// Regression only: sampling intervals as `[lo, hi]` pairs.
    pub intervals: Option<Vec<(f64, f64)>>,
    /// Regression only: Dirichlet concentration over the intervals.
    pub dirichlet_alpha: Option<Vec<f64>>,
}

/// Group normalization toggle with optional shape overrides.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupNormSetting {
    pub enabled: bool,
    #[serde(default)]
    pub num_groups: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

/// Network overrides; input and output widths are fixed by the task.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureSection {
    pub hidden_layers: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub group_norm: Option<GroupNormSetting>,
}

/// Expert-trajectory pretraining overrides. `batch_size` zero means
/// full-batch gradients.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub num_trajectories: Option<usize>,
    pub num_steps: Option<usize>,
    pub save_interval: Option<usize>,
    pub step_size: Option<f64>,
    pub optimizer: Option<Optimizer>,
    pub batch_size: Option<usize>,
}

/// Coreset-learner overrides.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpcSection {
    pub coreset_size: Option<usize>,
    pub sigma_z: Option<f64>,
    pub step_size_x: Option<f64>,
    pub step_size_y: Option<f64>,
    pub num_updates: Option<usize>,
    pub coreset_chain_len: Option<usize>,
    pub data_chain_len: Option<usize>,
    pub noise_samples: Option<usize>,
    pub sigma_eps: Option<f64>,
    pub sampler: Option<Optimizer>,
    pub sampler_step_size: Option<f64>,
    pub batch_trajectories: Option<usize>,
    pub pretrain: Option<PretrainSection>,
}

/// Averaging-baseline overrides.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedAvgSection {
    pub rounds: Option<usize>,
    pub clients_per_round: Option<usize>,
    pub local_steps: Option<usize>,
    pub client_optimizer: Option<Optimizer>,
    pub client_step_size: Option<f64>,
    pub server_optimizer: Option<Optimizer>,
    pub server_step_size: Option<f64>,
}

/// One way of turning the server coreset posterior into parameter samples.
/// Optimizers yield a single MAP point; HMC yields a sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum DownstreamMethod {
    Sgd {
        step_size: f64,
        num_steps: usize,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        step_size: f64,
        num_steps: usize,
    },
    Hmc {
        step_size: f64,
        num_integration_steps: usize,
        inverse_mass: f64,
        num_steps: usize,
        num_samples_kept: usize,
    },
}

impl DownstreamMethod {
    /// Stable identifier used in artifact names and report rows.
    pub fn name(&self) -> &'static str {
        match self {
            DownstreamMethod::Sgd { .. } => "sgd",
            DownstreamMethod::Adam { .. } => "adam",
            DownstreamMethod::Hmc { .. } => "hmc",
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |r: bpcfl_core::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        match *self {
            DownstreamMethod::Sgd {
                step_size,
                num_steps,
                momentum,
            } => check(
                OptConfig {
                    optimizer: Optimizer::Sgd { momentum },
                    step_size,
                    num_steps,
                }
                .validate(),
            ),
            DownstreamMethod::Adam {
                step_size,
                num_steps,
            } => check(
                OptConfig {
                    optimizer: Optimizer::adam_default(),
                    step_size,
                    num_steps,
                }
                .validate(),
            ),
            DownstreamMethod::Hmc {
                step_size,
                num_integration_steps,
                inverse_mass,
                num_steps,
                num_samples_kept,
            } => check(
                HmcConfig {
                    step_size,
                    num_integration_steps,
                    inverse_mass,
                    num_steps,
                    num_samples_kept,
                    seed: 0,
                }
                .validate(),
            ),
        }
    }
}

/// The experiment file as written by the user: a task plus optional
/// overrides for each stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskPreset,
    #[serde(default)]
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub architecture: Option<ArchitectureSection>,
    #[serde(default)]
    pub prior_precision: Option<f64>,
    #[serde(default)]
    pub likelihood: Option<LikelihoodSpec>,
    #[serde(default)]
    pub bpc: Option<BpcSection>,
    #[serde(default)]
    pub fedavg: Option<FedAvgSection>,
    #[serde(default)]
    pub downstream: Option<Vec<DownstreamMethod>>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses an experiment file. I/O and JSON problems are config errors.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved dataset settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSettings {
    pub num_clients: usize,
    pub points_per_client: usize,
    pub noise_std: f64,
    pub test_fraction: f64,
    pub intervals: Option<Vec<(f64, f64)>>,
    pub dirichlet_alpha: Option<Vec<f64>>,
}

/// Fully resolved pretraining settings (trajectory seeds are derived per
/// run seed, so they are not part of the static config).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSettings {
    pub num_trajectories: usize,
    pub num_steps: usize,
    pub save_interval: usize,
    pub step_size: f64,
    pub optimizer: Optimizer,
    pub batch_size: Option<usize>,
}

/// Fully resolved coreset-learner settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpcSettings {
    pub coreset_size: usize,
    pub sigma_z: f64,
    pub step_size_x: f64,
    pub step_size_y: f64,
    pub num_updates: usize,
    pub coreset_chain_len: usize,
    pub data_chain_len: usize,
    pub noise_samples: usize,
    pub sigma_eps: f64,
    pub sampler: Optimizer,
    pub sampler_step_size: f64,
    pub batch_trajectories: usize,
    pub pretrain: PretrainSettings,
}

/// Fully resolved averaging-baseline settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedAvgSettings {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local_steps: usize,
    pub client_optimizer: Optimizer,
    pub client_step_size: f64,
    pub server_optimizer: Optimizer,
    pub server_step_size: f64,
}

/// Every setting pinned down; echoed verbatim into run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub task: TaskPreset,
    pub dataset: DatasetSettings,
    pub architecture: MlpArchitecture,
    pub prior_precision: f64,
    pub likelihood: LikelihoodSpec,
    pub bpc: BpcSettings,
    pub fedavg: FedAvgSettings,
    pub downstream: Vec<DownstreamMethod>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl ResolvedConfig {
    pub fn prior(&self) -> PriorSpec {
        PriorSpec {
            precision: self.prior_precision,
        }
    }

    /// Labels are frozen one-hots when classification runs with a zero
    /// pseudo-label step size; otherwise they are learnable.
    pub fn label_mode(&self) -> LabelMode {
        if self.task.task() == Task::Classification && self.bpc.step_size_y == 0.0 {
            LabelMode::Frozen
        } else {
            LabelMode::Learnable
        }
    }

    /// The core learner config for one run; `bpc_seed` is the run-derived
    /// master seed and pretraining trajectory seeds branch off it.
    pub fn bpc_config(&self, bpc_seed: u64) -> BpcFklConfig {
        let p = &self.bpc.pretrain;
        BpcFklConfig {
            coreset_size: self.bpc.coreset_size,
            sigma_z: self.bpc.sigma_z,
            step_size_x: self.bpc.step_size_x,
            step_size_y: self.bpc.step_size_y,
            num_updates: self.bpc.num_updates,
            coreset_chain_len: self.bpc.coreset_chain_len,
            data_chain_len: self.bpc.data_chain_len,
            noise_samples: self.bpc.noise_samples,
            sigma_eps: self.bpc.sigma_eps,
            sampler: self.bpc.sampler,
            sampler_step_size: self.bpc.sampler_step_size,
            batch_trajectories: self.bpc.batch_trajectories,
            pretrain: PretrainConfig {
                num_trajectories: p.num_trajectories,
                num_steps: p.num_steps,
                save_interval: p.save_interval,
                step_size: p.step_size,
                optimizer: p.optimizer,
                batch_size: p.batch_size,
                seeds: (0..p.num_trajectories as u64)
                    .map(|i| derive_seed(bpc_seed, "pretrain-init", i))
                    .collect(),
            },
            lik: self.likelihood,
            seed: bpc_seed,
        }
    }

    /// The baseline config for one run.
    pub fn fedavg_config(&self, seed: u64, init: Option<ParamVector>) -> FedAvgConfig {
        FedAvgConfig {
            rounds: self.fedavg.rounds,
            clients_per_round: self.fedavg.clients_per_round,
            local_steps: self.fedavg.local_steps,
            client_optimizer: self.fedavg.client_optimizer,
            client_step_size: self.fedavg.client_step_size,
            server_optimizer: self.fedavg.server_optimizer,
            server_step_size: self.fedavg.server_step_size,
            init,
            seed,
        }
    }
}

/// The defaults for a task, as a resolved config with empty seeds.
fn preset(task: TaskPreset) -> ResolvedConfig {
    match task {
        TaskPreset::Regression => ResolvedConfig {
            task,
            dataset: DatasetSettings {
                num_clients: 5,
                points_per_client: 100,
                noise_std: 0.3,
                test_fraction: 0.2,
                intervals: Some(default_intervals()),
                dirichlet_alpha: Some(vec![1.0; default_intervals().len()]),
            },
            architecture: MlpArchitecture::new(
                vec![1, 128, 128, 128, 1],
                Activation::Swish,
                None,
                Task::Regression,
            )
            .expect("preset architecture is valid"),
            prior_precision: 1e-2,
            likelihood: LikelihoodSpec::Gaussian { sigma: 0.3 },
            bpc: BpcSettings {
                coreset_size: 6,
                sigma_z: 1.0,
                step_size_x: 0.01,
                step_size_y: 1.0,
                num_updates: 400,
                coreset_chain_len: 200,
                data_chain_len: 150,
                noise_samples: 10,
                sigma_eps: 1e-2,
                sampler: Optimizer::adam_default(),
                sampler_step_size: 1e-2,
                batch_trajectories: 10,
                pretrain: PretrainSettings {
                    num_trajectories: 100,
                    num_steps: 300,
                    save_interval: 5,
                    step_size: 1e-2,
                    optimizer: Optimizer::adam_default(),
                    batch_size: Some(20),
                },
            },
            fedavg: FedAvgSettings {
                rounds: 40,
                clients_per_round: 5,
                local_steps: 10,
                client_optimizer: Optimizer::adam_default(),
                client_step_size: 1e-2,
                server_optimizer: Optimizer::adam_default(),
                server_step_size: 0.1,
            },
            downstream: vec![
                DownstreamMethod::Adam {
                    step_size: 1e-2,
                    num_steps: 300,
                },
                DownstreamMethod::Hmc {
                    step_size: 1e-3,
                    num_integration_steps: 20,
                    inverse_mass: 0.02,
                    num_steps: 200,
                    num_samples_kept: 40,
                },
            ],
            seeds: Vec::new(),
            output_dir: PathBuf::from("runs/regression"),
        },
        TaskPreset::Moons => ResolvedConfig {
            task,
            dataset: DatasetSettings {
                num_clients: 5,
                points_per_client: 20,
                noise_std: 0.14,
                test_fraction: 0.2,
                intervals: None,
                dirichlet_alpha: None,
            },
            architecture: MlpArchitecture::new(
                vec![2, 50, 50, 50, 2],
                Activation::Relu,
                Some(GroupNormSpec {
                    num_groups: 2,
                    epsilon: 1e-5,
                }),
                Task::Classification,
            )
            .expect("preset architecture is valid"),
            prior_precision: 1e-1,
            likelihood: LikelihoodSpec::CategoricalSoftmax,
            bpc: BpcSettings {
                coreset_size: 5,
                sigma_z: 0.6,
                step_size_x: 1e-3,
                step_size_y: 0.0,
                num_updates: 700,
                coreset_chain_len: 200,
                data_chain_len: 150,
                noise_samples: 10,
                sigma_eps: 1e-2,
                sampler: Optimizer::adam_default(),
                sampler_step_size: 1e-2,
                batch_trajectories: 20,
                pretrain: PretrainSettings {
                    num_trajectories: 100,
                    num_steps: 400,
                    save_interval: 5,
                    step_size: 1e-2,
                    optimizer: Optimizer::adam_default(),
                    batch_size: Some(50),
                },
            },
            fedavg: FedAvgSettings {
                rounds: 40,
                clients_per_round: 5,
                local_steps: 10,
                client_optimizer: Optimizer::adam_default(),
                client_step_size: 1e-2,
                server_optimizer: Optimizer::adam_default(),
                server_step_size: 0.1,
            },
            downstream: vec![
                DownstreamMethod::Sgd {
                    step_size: 2e-2,
                    num_steps: 500,
                    momentum: 0.0,
                },
                DownstreamMethod::Hmc {
                    step_size: 2e-3,
                    num_integration_steps: 30,
                    inverse_mass: 0.01,
                    num_steps: 200,
                    num_samples_kept: 50,
                },
            ],
            seeds: Vec::new(),
            output_dir: PathBuf::from("runs/moons"),
        },
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Applies the file's overrides onto the task preset and validates the
/// combination.
pub fn resolve(cfg: &ExperimentConfig) -> Result<ResolvedConfig> {
    let mut out = preset(cfg.task);

    if let Some(ds) = &cfg.dataset {
        if cfg.task == TaskPreset::Moons
            && (ds.intervals.is_some() || ds.dirichlet_alpha.is_some())
        {
            return Err(bad(
                "intervals and dirichlet_alpha only apply to the regression task",
            ));
        }
        set(&mut out.dataset.num_clients, &ds.num_clients);
        set(&mut out.dataset.points_per_client, &ds.points_per_client);
        set(&mut out.dataset.noise_std, &ds.noise_std);
        set(&mut out.dataset.test_fraction, &ds.test_fraction);
        if ds.intervals.is_some() {
            out.dataset.intervals = ds.intervals.clone();
        }
        if ds.dirichlet_alpha.is_some() {
            out.dataset.dirichlet_alpha = ds.dirichlet_alpha.clone();
        }
    }

    if let Some(arch) = &cfg.architecture {
        let (input, output) = match cfg.task {
            TaskPreset::Regression => (1, 1),
            TaskPreset::Moons => (2, 2),
        };
        let hidden = arch
            .hidden_layers
            .clone()
            .unwrap_or_else(|| out.architecture.layer_widths[1..out.architecture.layer_widths.len() - 1].to_vec());
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend(hidden);
        widths.push(output);
        let activation = arch.activation.unwrap_or(out.architecture.activation);
        let group_norm = match &arch.group_norm {
            None => out.architecture.group_norm,
            Some(setting) if !setting.enabled => None,
            Some(setting) => {
                let base = out.architecture.group_norm;
                Some(GroupNormSpec {
                    num_groups: setting
                        .num_groups
                        .or(base.map(|g| g.num_groups))
                        .unwrap_or(2),
                    epsilon: setting.epsilon.or(base.map(|g| g.epsilon)).unwrap_or(1e-5),
                })
            }
        };
        out.architecture =
            MlpArchitecture::new(widths, activation, group_norm, cfg.task.task())
                .map_err(|e| bad(e.to_string()))?;
    }

    if let Some(p) = cfg.prior_precision {
        out.prior_precision = p;
    }
    if let Some(lik) = cfg.likelihood {
        out.likelihood = lik;
    }

    if let Some(b) = &cfg.bpc {
        set(&mut out.bpc.coreset_size, &b.coreset_size);
        set(&mut out.bpc.sigma_z, &b.sigma_z);
        set(&mut out.bpc.step_size_x, &b.step_size_x);
        set(&mut out.bpc.step_size_y, &b.step_size_y);
        set(&mut out.bpc.num_updates, &b.num_updates);
        set(&mut out.bpc.coreset_chain_len, &b.coreset_chain_len);
        set(&mut out.bpc.data_chain_len, &b.data_chain_len);
        set(&mut out.bpc.noise_samples, &b.noise_samples);
        set(&mut out.bpc.sigma_eps, &b.sigma_eps);
        set(&mut out.bpc.sampler, &b.sampler);
        set(&mut out.bpc.sampler_step_size, &b.sampler_step_size);
        set(&mut out.bpc.batch_trajectories, &b.batch_trajectories);
        if let Some(p) = &b.pretrain {
            set(&mut out.bpc.pretrain.num_trajectories, &p.num_trajectories);
            set(&mut out.bpc.pretrain.num_steps, &p.num_steps);
            set(&mut out.bpc.pretrain.save_interval, &p.save_interval);
            set(&mut out.bpc.pretrain.step_size, &p.step_size);
            set(&mut out.bpc.pretrain.optimizer, &p.optimizer);
            if let Some(batch) = p.batch_size {
                out.bpc.pretrain.batch_size = if batch == 0 { None } else { Some(batch) };
            }
        }
    }

    if let Some(f) = &cfg.fedavg {
        set(&mut out.fedavg.rounds, &f.rounds);
        set(&mut out.fedavg.clients_per_round, &f.clients_per_round);
        set(&mut out.fedavg.local_steps, &f.local_steps);
        set(&mut out.fedavg.client_optimizer, &f.client_optimizer);
        set(&mut out.fedavg.client_step_size, &f.client_step_size);
        set(&mut out.fedavg.server_optimizer, &f.server_optimizer);
        set(&mut out.fedavg.server_step_size, &f.server_step_size);
    }

    if let Some(d) = &cfg.downstream {
        out.downstream = d.clone();
    }
    if let Some(seeds) = &cfg.seeds {
        out.seeds = seeds.clone();
    } else {
        out.seeds = vec![0, 1, 2, 3, 4];
    }
    if let Some(dir) = &cfg.output_dir {
        out.output_dir = dir.clone();
    }

    validate_resolved(&out)?;
    Ok(out)
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

fn validate_resolved(cfg: &ResolvedConfig) -> Result<()> {
    if cfg.seeds.is_empty() {
        return Err(bad("seeds must list at least one run seed"));
    }
    let mut sorted = cfg.seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != cfg.seeds.len() {
        return Err(bad("seeds must be distinct"));
    }

    match (cfg.task, &cfg.likelihood) {
        (TaskPreset::Regression, LikelihoodSpec::Gaussian { .. }) => {}
        (TaskPreset::Moons, LikelihoodSpec::CategoricalSoftmax) => {}
        (TaskPreset::Regression, _) => {
            return Err(bad("the regression task needs a gaussian likelihood"));
        }
        (TaskPreset::Moons, _) => {
            return Err(bad(
                "the moons task needs the categorical_softmax likelihood",
            ));
        }
    }
    cfg.likelihood.validate().map_err(|e| bad(e.to_string()))?;
    cfg.prior().validate().map_err(|e| bad(e.to_string()))?;
    cfg.architecture.validate().map_err(|e| bad(e.to_string()))?;

    let ds = &cfg.dataset;
    if !(ds.test_fraction.is_finite() && (0.0..1.0).contains(&ds.test_fraction)) {
        return Err(bad(format!(
            "test_fraction must lie in [0, 1), got {}",
            ds.test_fraction
        )));
    }
    match cfg.task {
        TaskPreset::Regression => {
            let intervals = ds
                .intervals
                .as_ref()
                .ok_or_else(|| bad("regression needs sampling intervals"))?;
            let alpha = ds
                .dirichlet_alpha
                .as_ref()
                .ok_or_else(|| bad("regression needs dirichlet_alpha"))?;
            bpcfl_core::datagen::RegressionGenConfig {
                intervals: intervals.clone(),
                noise_std: ds.noise_std,
                num_clients: ds.num_clients,
                points_per_client: ds.points_per_client,
                dirichlet_alpha: alpha.clone(),
                seed: 0,
            }
            .validate()
            .map_err(|e| bad(e.to_string()))?;
        }
        TaskPreset::Moons => {
            bpcfl_core::datagen::MoonsGenConfig {
                num_clients: ds.num_clients,
                points_per_client: ds.points_per_client,
                noise_std: ds.noise_std,
                seed: 0,
            }
            .validate()
            .map_err(|e| bad(e.to_string()))?;
        }
    }

    cfg.bpc_config(0).validate().map_err(|e| bad(e.to_string()))?;
    cfg.fedavg_config(0, None)
        .validate(cfg.dataset.num_clients)
        .map_err(|e| bad(e.to_string()))?;

    if cfg.downstream.is_empty() {
        return Err(bad("downstream must list at least one method"));
    }
    let mut names: Vec<&str> = cfg.downstream.iter().map(|d| d.name()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != cfg.downstream.len() {
        return Err(bad("downstream methods must be distinct"));
    }
    for method in &cfg.downstream {
        method.validate()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(task: TaskPreset) -> ExperimentConfig {
        ExperimentConfig {
            task,
            dataset: None,
            architecture: None,
            prior_precision: None,
            likelihood: None,
            bpc: None,
            fedavg: None,
            downstream: None,
            seeds: None,
            output_dir: None,
        }
    }

    #[test]
    fn presets_resolve_for_both_tasks() {
        for task in [TaskPreset::Regression, TaskPreset::Moons] {
            let resolved = resolve(&minimal(task)).unwrap();
            assert_eq!(resolved.seeds, vec![0, 1, 2, 3, 4]);
            assert_eq!(resolved.dataset.num_clients, 5);
        }
    }

    #[test]
    fn regression_preset_matches_its_headline_settings() {
        let r = resolve(&minimal(TaskPreset::Regression)).unwrap();
        assert_eq!(r.architecture.layer_widths, vec![1, 128, 128, 128, 1]);
        assert_eq!(r.architecture.group_norm, None);
        assert_eq!(r.bpc.coreset_size, 6);
        assert_eq!(r.bpc.step_size_y, 1.0);
        assert_eq!(r.likelihood, LikelihoodSpec::Gaussian { sigma: 0.3 });
        assert_eq!(r.label_mode(), LabelMode::Learnable);
    }

    #[test]
    fn moons_preset_freezes_labels() {
        let r = resolve(&minimal(TaskPreset::Moons)).unwrap();
        assert_eq!(r.architecture.layer_widths, vec![2, 50, 50, 50, 2]);
        assert!(r.architecture.group_norm.is_some());
        assert_eq!(r.bpc.coreset_size, 5);
        assert_eq!(r.bpc.step_size_y, 0.0);
        assert_eq!(r.label_mode(), LabelMode::Frozen);
    }

    #[test]
    fn minimal_json_parses() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"task": "moons"}"#).unwrap();
        assert_eq!(cfg.task, TaskPreset::Moons);
        assert!(cfg.dataset.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let top = serde_json::from_str::<ExperimentConfig>(
            r#"{"task": "moons", "typo_key": 1}"#,
        );
        assert!(top.is_err());
        let nested = serde_json::from_str::<ExperimentConfig>(
            r#"{"task": "moons", "dataset": {"num_client": 3}}"#,
        );
        assert!(nested.is_err());
        let deep = serde_json::from_str::<ExperimentConfig>(
            r#"{"task": "moons", "bpc": {"pretrain": {"save_intervals": 5}}}"#,
        );
        assert!(deep.is_err());
    }

    #[test]
    fn overrides_land_in_the_resolved_config() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{
                "task": "regression",
                "dataset": {"points_per_client": 12, "test_fraction": 0.25},
                "architecture": {"hidden_layers": [8, 8]},
                "bpc": {"num_updates": 3, "pretrain": {"num_trajectories": 2, "batch_size": 0}},
                "fedavg": {"rounds": 2, "clients_per_round": 3},
                "downstream": [{"method": "adam", "step_size": 0.01, "num_steps": 5}],
                "seeds": [7],
                "output_dir": "out/custom"
            }"#,
        )
        .unwrap();
        let r = resolve(&cfg).unwrap();
        assert_eq!(r.dataset.points_per_client, 12);
        assert_eq!(r.architecture.layer_widths, vec![1, 8, 8, 1]);
        assert_eq!(r.bpc.num_updates, 3);
        assert_eq!(r.bpc.pretrain.num_trajectories, 2);
        assert_eq!(r.bpc.pretrain.batch_size, None);
        assert_eq!(r.fedavg.rounds, 2);
        assert_eq!(r.downstream.len(), 1);
        assert_eq!(r.seeds, vec![7]);
        assert_eq!(r.output_dir, PathBuf::from("out/custom"));
    }

    #[test]
    fn group_norm_can_be_toggled_off_and_on() {
        let off: ExperimentConfig = serde_json::from_str(
            r#"{"task": "moons", "architecture": {"group_norm": {"enabled": false}}}"#,
        )
        .unwrap();
        assert_eq!(resolve(&off).unwrap().architecture.group_norm, None);

        let on: ExperimentConfig = serde_json::from_str(
            r#"{
                "task": "regression",
                "architecture": {"group_norm": {"enabled": true, "num_groups": 4}}
            }"#,
        )
        .unwrap();
        let gn = resolve(&on).unwrap().architecture.group_norm.unwrap();
        assert_eq!(gn.num_groups, 4);
        assert_eq!(gn.epsilon, 1e-5);
    }

    #[test]
    fn mismatched_task_and_likelihood_is_a_config_error() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"task": "moons", "likelihood": {"gaussian": {"sigma": 0.3}}}"#,
        )
        .unwrap();
        assert!(matches!(resolve(&cfg), Err(CliError::Config(_))));
    }

    #[test]
    fn interval_overrides_are_rejected_for_moons() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"task": "moons", "dataset": {"intervals": [[0.0, 1.0]]}}"#,
        )
        .unwrap();
        assert!(matches!(resolve(&cfg), Err(CliError::Config(_))));
    }

    #[test]
    fn empty_or_duplicate_seeds_are_config_errors() {
        let mut cfg = minimal(TaskPreset::Regression);
        cfg.seeds = Some(vec![]);
        assert!(matches!(resolve(&cfg), Err(CliError::Config(_))));
        cfg.seeds = Some(vec![3, 3]);
        assert!(matches!(resolve(&cfg), Err(CliError::Config(_))));
    }

    #[test]
    fn duplicate_downstream_methods_are_rejected() {
        let mut cfg = minimal(TaskPreset::Regression);
        cfg.downstream = Some(vec![
            DownstreamMethod::Adam {
                step_size: 0.01,
                num_steps: 5,
            },
            DownstreamMethod::Adam {
                step_size: 0.02,
                num_steps: 9,
            },
        ]);
        assert!(matches!(resolve(&cfg), Err(CliError::Config(_))));
    }

    #[test]
    fn resolved_config_round_trips_through_json() {
        let r = resolve(&minimal(TaskPreset::Moons)).unwrap();
        let text = serde_json::to_string_pretty(&r).unwrap();
        let back: ResolvedConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn downstream_method_json_uses_a_method_tag() {
        let text = r#"{"method": "hmc", "step_size": 0.002, "num_integration_steps": 30,
                       "inverse_mass": 0.01, "num_steps": 200, "num_samples_kept": 50}"#;
        let m: DownstreamMethod = serde_json::from_str(text).unwrap();
        assert_eq!(m.name(), "hmc");
        let sgd: DownstreamMethod =
            serde_json::from_str(r#"{"method": "sgd", "step_size": 0.02, "num_steps": 500}"#)
                .unwrap();
        assert_eq!(
            sgd,
            DownstreamMethod::Sgd {
                step_size: 0.02,
                num_steps: 500,
                momentum: 0.0
            }
        );
    }
}
