//! The deterministic per-seed pipeline: generate and split client shards,
//! learn and aggregate pseudocoresets, run downstream posterior inference,
//! run the averaging baselines, and write artifacts. Every random stream is
//! derived from the run seed, so rerunning a seed reproduces its artifacts
//! byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use bpcfl_core::bpc::{pretrain_bank, LabelMode, TrajectoryBank};
use bpcfl_core::datagen::{
    gen_interval_regression, gen_moons, span_grid, split_train_test, MoonsGenConfig,
    RegressionGenConfig,
};
use bpcfl_core::eval::{metrics_bundle, uncertainty_gap_ratio, MetricsRecord};
use bpcfl_core::federation::{
    run_bpc_fl, run_fedavg, server_target, CommEvent, CommLedger, CommTotals, DatasetShard,
    Direction, ServerCoreset,
};
use bpcfl_core::io::{format_real, write_server_coreset};
use bpcfl_core::nn::{init_params, LikelihoodSpec, MlpArchitecture, ParamVector};
use bpcfl_core::posterior::{
    hmc_sample, map_optimize, predictive_mc, HmcConfig, OptConfig, Optimizer, TargetDensity,
};
use bpcfl_core::rng::derive_seed;

use crate::config::{DownstreamMethod, ResolvedConfig, TaskPreset};
use crate::{CliError, Result};

/// Points on the wide uniform grid used for the in/out-of-support
/// uncertainty comparison (regression only).
pub const SPAN_GRID_POINTS: usize = 256;
/// Size of the freshly generated classification test set.
pub const TEST_SET_POINTS: usize = 1000;

/// Held-out evaluation data for one run. `span` carries the wide grid and
/// its in-support mask when the task distinguishes support regions.
pub struct EvalData {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub span: Option<(Array2<f64>, Vec<bool>)>,
}

/// One evaluated point of a communication-metric trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub metrics: MetricsRecord,
}

/// Final evaluation of one method within a seed run. `extra` holds
/// method-specific scalars such as `gap_ratio` or `acceptance_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub metrics: MetricsRecord,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

/// Everything recorded about one seed, echoing the resolved config so the
/// report alone suffices to reproduce the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub config: ResolvedConfig,
    pub methods: Vec<MethodReport>,
    pub comm: BTreeMap<String, CommTotals>,
}

/// In-memory result of one seed run.
pub struct SeedRun {
    pub report: SeedReport,
    pub traces: BTreeMap<String, Vec<TraceRow>>,
    pub server: ServerCoreset,
    pub bpc_ledger: CommLedger,
}

/// Generates the client shards and evaluation data for one run seed.
pub fn stage_data(cfg: &ResolvedConfig, seed: u64) -> Result<(Vec<DatasetShard>, EvalData)> {
    let data_seed = derive_seed(seed, "data", 0);
    let (mut shards, eval) = match cfg.task {
        TaskPreset::Regression => {
            let intervals = cfg
                .dataset
                .intervals
                .clone()
                .ok_or_else(|| CliError::Config("regression needs intervals".into()))?;
            let alpha = cfg
                .dataset
                .dirichlet_alpha
                .clone()
                .ok_or_else(|| CliError::Config("regression needs dirichlet_alpha".into()))?;
            let gen = RegressionGenConfig {
                intervals: intervals.clone(),
                noise_std: cfg.dataset.noise_std,
                num_clients: cfg.dataset.num_clients,
                points_per_client: cfg.dataset.points_per_client,
                dirichlet_alpha: alpha,
                seed: data_seed,
            };
            let (shards, grid) = gen_interval_regression(&gen)?;
            let span = span_grid(&intervals, SPAN_GRID_POINTS)?;
            (
                shards,
                EvalData {
                    inputs: grid.inputs,
                    targets: grid.targets,
                    span: Some(span),
                },
            )
        }
        TaskPreset::Moons => {
            let shards = gen_moons(&MoonsGenConfig {
                num_clients: cfg.dataset.num_clients,
                points_per_client: cfg.dataset.points_per_client,
                noise_std: cfg.dataset.noise_std,
                seed: data_seed,
            })?;
            let test = gen_moons(&MoonsGenConfig {
                num_clients: 1,
                points_per_client: TEST_SET_POINTS,
                noise_std: cfg.dataset.noise_std,
                seed: derive_seed(seed, "test-data", 0),
            })?;
            let test = test.into_iter().next().expect("one test shard");
            (
                shards,
                EvalData {
                    inputs: test.inputs,
                    targets: test.targets,
                    span: None,
                },
            )
        }
    };
    for shard in &mut shards {
        *shard = split_train_test(
            shard,
            cfg.dataset.test_fraction,
            derive_seed(data_seed, "split", shard.client_id as u64),
        )?;
    }
    Ok((shards, eval))
}

/// The fixed optimization run used to find a posterior mode, both as the
/// HMC warm start and as the averaging baseline's warm start.
pub fn map_preset(task: TaskPreset) -> OptConfig {
    match task {
        TaskPreset::Regression => OptConfig {
            optimizer: Optimizer::adam_default(),
            step_size: 1e-2,
            num_steps: 300,
        },
        TaskPreset::Moons => OptConfig {
            optimizer: Optimizer::Sgd { momentum: 0.0 },
            step_size: 2e-2,
            num_steps: 500,
        },
    }
}

/// Predictive metrics of a sample set, plus the out/in-support uncertainty
/// ratio when the evaluation data carries a span grid.
fn evaluate_samples(
    samples: &[ParamVector],
    eval: &EvalData,
    arch: &MlpArchitecture,
    lik: &LikelihoodSpec,
) -> Result<(MetricsRecord, Option<f64>)> {
    let summary = predictive_mc(arch, samples, &eval.inputs, lik)?;
    let metrics = metrics_bundle(&summary, &eval.targets)?;
    let gap = match &eval.span {
        Some((inputs, mask)) => {
            let span_summary = predictive_mc(arch, samples, inputs, lik)?;
            Some(uncertainty_gap_ratio(&span_summary, mask)?)
        }
        None => None,
    };
    Ok((metrics, gap))
}

/// Draws parameters from the server coreset posterior with one downstream
/// method. Optimizers return the single mode they find; HMC warm-starts at
/// a mode and returns its kept samples plus the acceptance rate.
pub fn run_downstream(
    method: &DownstreamMethod,
    target: &TargetDensity,
    cfg: &ResolvedConfig,
    seed: u64,
    index: usize,
) -> Result<(Vec<ParamVector>, BTreeMap<String, f64>)> {
    let init = init_params(
        &cfg.architecture,
        derive_seed(seed, "downstream-init", index as u64),
    )?;
    match *method {
        DownstreamMethod::Sgd {
            step_size,
            num_steps,
            momentum,
        } => {
            let opt = OptConfig {
                optimizer: Optimizer::Sgd { momentum },
                step_size,
                num_steps,
            };
            Ok((vec![map_optimize(target, &init, &opt)?], BTreeMap::new()))
        }
        DownstreamMethod::Adam {
            step_size,
            num_steps,
        } => {
            let opt = OptConfig {
                optimizer: Optimizer::adam_default(),
                step_size,
                num_steps,
            };
            Ok((vec![map_optimize(target, &init, &opt)?], BTreeMap::new()))
        }
        DownstreamMethod::Hmc {
            step_size,
            num_integration_steps,
            inverse_mass,
            num_steps,
            num_samples_kept,
        } => {
            let warm = map_optimize(target, &init, &map_preset(cfg.task))?;
            let hmc = HmcConfig {
                step_size,
                num_integration_steps,
                inverse_mass,
                num_steps,
                num_samples_kept,
                seed: derive_seed(seed, "hmc", index as u64),
            };
            let run = hmc_sample(target, &warm, &hmc)?;
            let mut extra = BTreeMap::new();
            extra.insert("acceptance_rate".to_string(), run.acceptance_rate);
            Ok((run.samples, extra))
        }
    }
}

/// Cumulative float count of all ledger events up to and including `round`.
fn floats_through_round(ledger: &CommLedger, round: usize) -> u64 {
    ledger
        .events()
        .iter()
        .filter(|e| e.round <= round)
        .map(|e| e.floats)
        .sum()
}

/// Evaluates every per-round parameter state of an averaging run against
/// the cumulative traffic that produced it.
pub fn fedavg_trace(
    per_round: &[ParamVector],
    ledger: &CommLedger,
    eval: &EvalData,
    arch: &MlpArchitecture,
    lik: &LikelihoodSpec,
) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::with_capacity(per_round.len());
    for (round, params) in per_round.iter().enumerate() {
        let summary = predictive_mc(arch, std::slice::from_ref(params), &eval.inputs, lik)?;
        let mut metrics = metrics_bundle(&summary, &eval.targets)?;
        metrics.floats_cum = floats_through_round(ledger, round);
        rows.push(TraceRow { round, metrics });
    }
    Ok(rows)
}

/// Reconstructs the one-shot upload ledger implied by a server coreset, for
/// stages that load the coreset from disk instead of learning it in-process.
pub fn coreset_upfront_ledger(server: &ServerCoreset) -> CommLedger {
    let mut ledger = CommLedger::new();
    for entry in &server.entries {
        let c = &entry.coreset;
        let k = c.num_points() as u64;
        let label_floats = match c.label_mode {
            LabelMode::Learnable => c.label_dim() as u64,
            LabelMode::Frozen => 0,
        };
        ledger.record(CommEvent {
            round: 0,
            direction: Direction::Up,
            client_id: c.owner,
            floats: k * (c.input_dim() as u64 + label_floats),
            ints: if c.label_mode == LabelMode::Frozen { k } else { 0 },
            method: "bpc_fl".into(),
        });
    }
    ledger.normalize();
    ledger
}

/// Runs the whole pipeline for one seed: coreset federation, downstream
/// inference, and both averaging baselines (cold, and warm-started from the
/// coreset posterior mode with the coreset upload charged upfront).
pub fn run_seed(cfg: &ResolvedConfig, seed: u64) -> Result<SeedRun> {
    let (shards, eval) = stage_data(cfg, seed)?;
    let prior = cfg.prior();
    let arch = &cfg.architecture;
    let lik = &cfg.likelihood;

    let bpc_cfg = cfg.bpc_config(derive_seed(seed, "bpc", 0));
    let (server, bpc_ledger) = run_bpc_fl(&shards, arch, &prior, &bpc_cfg)?;
    let target = server_target(&server, arch, &prior, lik);
    let uplink = bpc_ledger.totals(None);

    let mut methods = Vec::new();
    let mut traces = BTreeMap::new();

    for (index, method) in cfg.downstream.iter().enumerate() {
        let (samples, mut extra) = run_downstream(method, &target, cfg, seed, index)?;
        let (mut metrics, gap) = evaluate_samples(&samples, &eval, arch, lik)?;
        metrics.floats_cum = uplink.floats;
        if let Some(g) = gap {
            extra.insert("gap_ratio".to_string(), g);
        }
        traces.insert(
            method.name().to_string(),
            vec![TraceRow {
                round: 0,
                metrics: metrics.clone(),
            }],
        );
        methods.push(MethodReport {
            method: method.name().to_string(),
            metrics,
            extra,
        });
    }

    let fedavg_seed = derive_seed(seed, "fedavg", 0);
    let cold_cfg = cfg.fedavg_config(fedavg_seed, None);
    let (cold_rounds, cold_ledger) =
        run_fedavg(&shards, arch, &prior, lik, &cold_cfg, "fedavg_cold", None)?;
    let cold_trace = fedavg_trace(&cold_rounds, &cold_ledger, &eval, arch, lik)?;

    let warm_init = map_optimize(
        &target,
        &init_params(arch, derive_seed(seed, "warm-start", 0))?,
        &map_preset(cfg.task),
    )?;
    let warm_cfg = cfg.fedavg_config(fedavg_seed, Some(warm_init));
    let (warm_rounds, warm_ledger) = run_fedavg(
        &shards,
        arch,
        &prior,
        lik,
        &warm_cfg,
        "fedavg_warm",
        Some(&bpc_ledger),
    )?;
    let warm_trace = fedavg_trace(&warm_rounds, &warm_ledger, &eval, arch, lik)?;

    let mut comm = BTreeMap::new();
    comm.insert("bpc_fl".to_string(), bpc_ledger.totals(Some("bpc_fl")));
    comm.insert(
        "fedavg_cold".to_string(),
        cold_ledger.totals(Some("fedavg_cold")),
    );
    comm.insert(
        "fedavg_warm".to_string(),
        warm_ledger.totals(Some("fedavg_warm")),
    );

    for (name, trace) in [("fedavg_cold", cold_trace), ("fedavg_warm", warm_trace)] {
        let last = trace.last().expect("at least the initial round");
        methods.push(MethodReport {
            method: name.to_string(),
            metrics: last.metrics.clone(),
            extra: BTreeMap::new(),
        });
        traces.insert(name.to_string(), trace);
    }

    Ok(SeedRun {
        report: SeedReport {
            seed,
            config: cfg.clone(),
            methods,
            comm,
        },
        traces,
        server,
        bpc_ledger,
    })
}

/// Pretrains (or loads, when present) the expert trajectory bank for one
/// shard under a seed directory.
pub fn bank_for_shard(
    dir: &Path,
    shard: &DatasetShard,
    cfg: &ResolvedConfig,
    bpc_cfg: &bpcfl_core::bpc::BpcFklConfig,
) -> Result<TrajectoryBank> {
    let bank_dir = dir.join(format!("bank_client_{:02}", shard.client_id));
    if bank_dir.is_dir() {
        Ok(bpcfl_core::io::read_bank(&bank_dir)?)
    } else {
        let bank = pretrain_bank(shard, &cfg.architecture, &cfg.prior(), bpc_cfg)?;
        bpcfl_core::io::write_bank(&bank_dir, &bank)?;
        Ok(bank)
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

/// Writes one metric trace as CSV: a `round,floats_cum` prefix and the
/// metric columns, empty where a metric does not apply to the task.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut text = String::from("round,floats_cum,nll,accuracy,rmse,ece\n");
    for row in rows {
        let m = &row.metrics;
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.round,
            m.floats_cum,
            format_real(m.nll),
            format_opt(m.accuracy),
            format_opt(m.rmse),
            format_opt(m.ece),
        ));
    }
    write_atomic(path, text.as_bytes())
}

/// Writes the per-seed artifacts: the JSON report, the server coreset, and
/// one trace CSV per method.
pub fn write_seed_artifacts(dir: &Path, run: &SeedRun) -> Result<()> {
    fs::create_dir_all(dir)?;
    let report = serde_json::to_string_pretty(&run.report)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(&dir.join("report.json"), format!("{report}\n").as_bytes())?;
    write_server_coreset(&dir.join("server_coreset.json"), &run.server)?;
    for (name, rows) in &run.traces {
        write_trace_csv(&dir.join(format!("trace_{name}.csv")), rows)?;
    }
    Ok(())
}

/// The metrics of one method report in a fixed order, for aggregation.
fn metric_entries(m: &MethodReport) -> Vec<(String, f64)> {
    let mut out = vec![("nll".to_string(), m.metrics.nll)];
    if let Some(a) = m.metrics.accuracy {
        out.push(("accuracy".to_string(), a));
    }
    if let Some(r) = m.metrics.rmse {
        out.push(("rmse".to_string(), r));
    }
    if let Some(e) = m.metrics.ece {
        out.push(("ece".to_string(), e));
    }
    for (k, v) in &m.extra {
        out.push((k.clone(), *v));
    }
    out.push(("floats_cum".to_string(), m.metrics.floats_cum as f64));
    out
}

/// Merges per-seed reports into `method,metric,mean,std` rows (population
/// standard deviation across seeds), ordered as the methods appear in the
/// first report.
pub fn write_aggregate(path: &Path, reports: &[&SeedReport]) -> Result<()> {
    let first = reports
        .first()
        .ok_or_else(|| CliError::Runtime("no seed reports to aggregate".into()))?;
    let mut text = String::from("method,metric,mean,std\n");
    for (mi, method) in first.methods.iter().enumerate() {
        for (metric, _) in metric_entries(method) {
            let mut values = Vec::with_capacity(reports.len());
            for report in reports {
                let m = report.methods.get(mi).filter(|m| m.method == method.method);
                let m = m.ok_or_else(|| {
                    CliError::Runtime(format!(
                        "seed {} report lacks method {}",
                        report.seed, method.method
                    ))
                })?;
                let value = metric_entries(m)
                    .into_iter()
                    .find(|(name, _)| *name == metric)
                    .map(|(_, v)| v)
                    .ok_or_else(|| {
                        CliError::Runtime(format!(
                            "seed {} report lacks metric {metric} for {}",
                            report.seed, method.method
                        ))
                    })?;
                values.push(value);
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            text.push_str(&format!(
                "{},{metric},{},{}\n",
                method.method,
                format_real(mean),
                format_real(var.sqrt()),
            ));
        }
    }
    write_atomic(path, text.as_bytes())
}

/// Runs every configured seed sequentially, writing per-seed artifacts and
/// the cross-seed aggregate under the output directory.
pub fn run_experiment(cfg: &ResolvedConfig) -> Result<Vec<SeedRun>> {
    fs::create_dir_all(&cfg.output_dir)?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let run = run_seed(cfg, seed)?;
        write_seed_artifacts(&cfg.output_dir.join(format!("seed_{seed}")), &run)?;
        runs.push(run);
    }
    let reports: Vec<&SeedReport> = runs.iter().map(|r| &r.report).collect();
    write_aggregate(&cfg.output_dir.join("aggregate.csv"), &reports)?;
    Ok(runs)
}

/// Writes via a temporary file and rename so an interrupted run never
/// leaves a half-written artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| CliError::Runtime(format!("{} has no parent", path.display())))?;
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "artifact".to_string())
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{resolve, ExperimentConfig};

    /// A configuration small enough to run the full pipeline in a test.
    fn tiny_config(task: &str) -> ResolvedConfig {
        let text = format!(
            r#"{{
                "task": "{task}",
                "dataset": {{"num_clients": 2, "points_per_client": 12, "test_fraction": 0.25}},
                "architecture": {{"hidden_layers": [6]}},
                "bpc": {{
                    "coreset_size": 2,
                    "num_updates": 4,
                    "coreset_chain_len": 5,
                    "data_chain_len": 6,
                    "noise_samples": 2,
                    "batch_trajectories": 2,
                    "pretrain": {{"num_trajectories": 3, "num_steps": 24, "save_interval": 3, "batch_size": 0}}
                }},
                "fedavg": {{"rounds": 3, "clients_per_round": 2, "local_steps": 2}},
                "downstream": [
                    {{"method": "adam", "step_size": 0.01, "num_steps": 20}},
                    {{"method": "hmc", "step_size": 0.01, "num_integration_steps": 3,
                      "inverse_mass": 0.1, "num_steps": 10, "num_samples_kept": 4}}
                ],
                "seeds": [11],
                "output_dir": "unused"
            }}"#
        );
        let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
        resolve(&cfg).unwrap()
    }

    #[test]
    fn stage_data_is_deterministic_and_split() {
        for task in ["regression", "moons"] {
            let cfg = tiny_config(task);
            let (a, eval_a) = stage_data(&cfg, 7).unwrap();
            let (b, eval_b) = stage_data(&cfg, 7).unwrap();
            assert_eq!(a, b);
            assert_eq!(eval_a.inputs, eval_b.inputs);
            let (c, _) = stage_data(&cfg, 8).unwrap();
            assert_ne!(a[0].inputs, c[0].inputs);
            for shard in &a {
                assert_eq!(shard.num_points(), 12);
                assert_eq!(shard.num_test(), 3);
            }
        }
    }

    #[test]
    fn regression_eval_has_a_span_and_moons_does_not() {
        let (_, eval) = stage_data(&tiny_config("regression"), 1).unwrap();
        let (inputs, mask) = eval.span.expect("regression span grid");
        assert_eq!(inputs.nrows(), SPAN_GRID_POINTS);
        assert_eq!(mask.len(), SPAN_GRID_POINTS);
        assert!(mask.iter().any(|m| *m) && mask.iter().any(|m| !*m));

        let (_, eval) = stage_data(&tiny_config("moons"), 1).unwrap();
        assert!(eval.span.is_none());
        assert_eq!(eval.inputs.nrows(), TEST_SET_POINTS);
    }

    #[test]
    fn a_full_tiny_seed_run_produces_consistent_reports() {
        let cfg = tiny_config("moons");
        let run = run_seed(&cfg, 11).unwrap();
        let names: Vec<&str> = run.report.methods.iter().map(|m| m.method.as_str()).collect();
        assert_eq!(names, vec!["adam", "hmc", "fedavg_cold", "fedavg_warm"]);
        for m in &run.report.methods {
            m.metrics.validate().unwrap();
            assert!(m.metrics.accuracy.is_some());
            assert!(m.metrics.ece.is_some());
            assert!(m.metrics.rmse.is_none());
        }
        // One up event per client, coreset floats charged to every method.
        let up = run.report.comm["bpc_fl"];
        assert_eq!(up.floats, 2 * 2 * 2); // 2 clients x K=2 x input dim 2
        assert_eq!(up.ints, 2 * 2); // frozen labels as class indices
        let warm = &run.traces["fedavg_warm"];
        let cold = &run.traces["fedavg_cold"];
        assert_eq!(
            warm[0].metrics.floats_cum,
            cold[0].metrics.floats_cum + up.floats
        );
        // Round traffic: 2 participants x P floats each way per round.
        let p = cfg.architecture.param_count() as u64;
        assert_eq!(
            cold.last().unwrap().metrics.floats_cum,
            3 * 2 * 2 * p
        );
        let hmc = run
            .report
            .methods
            .iter()
            .find(|m| m.method == "hmc")
            .unwrap();
        assert!(hmc.extra.contains_key("acceptance_rate"));
    }

    #[test]
    fn a_regression_seed_run_reports_rmse_and_gap() {
        let cfg = tiny_config("regression");
        let run = run_seed(&cfg, 3).unwrap();
        for m in &run.report.methods {
            assert!(m.metrics.rmse.is_some());
            assert!(m.metrics.accuracy.is_none());
        }
        let hmc = run
            .report
            .methods
            .iter()
            .find(|m| m.method == "hmc")
            .unwrap();
        assert!(hmc.extra["gap_ratio"].is_finite());
        // Learnable labels: K=2 points x (input + label) floats x 2 clients.
        assert_eq!(run.report.comm["bpc_fl"].floats, 2 * 2 * 2);
        assert_eq!(run.report.comm["bpc_fl"].ints, 0);
    }

    #[test]
    fn rerunning_a_seed_reproduces_artifacts_byte_for_byte() {
        let cfg = tiny_config("moons");
        let dir = tempfile::tempdir().unwrap();
        let mut contents = Vec::new();
        for pass in 0..2 {
            let run = run_seed(&cfg, 11).unwrap();
            let out = dir.path().join(format!("pass_{pass}"));
            write_seed_artifacts(&out, &run).unwrap();
            write_aggregate(&out.join("aggregate.csv"), &[&run.report]).unwrap();
            let mut files: Vec<_> = fs::read_dir(&out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            files.sort();
            contents.push(
                files
                    .into_iter()
                    .map(|f| (f.file_name().unwrap().to_owned(), fs::read(&f).unwrap()))
                    .collect::<Vec<_>>(),
            );
        }
        assert_eq!(contents[0], contents[1]);
    }

    #[test]
    fn upfront_ledger_reconstruction_matches_the_learned_one() {
        let cfg = tiny_config("moons");
        let run = run_seed(&cfg, 11).unwrap();
        assert_eq!(coreset_upfront_ledger(&run.server), run.bpc_ledger);
    }

    #[test]
    fn trace_csv_has_one_row_per_round_plus_the_start() {
        let cfg = tiny_config("moons");
        let run = run_seed(&cfg, 11).unwrap();
        assert_eq!(run.traces["fedavg_cold"].len(), cfg.fedavg.rounds + 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &run.traces["fedavg_cold"]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), cfg.fedavg.rounds + 2);
        assert!(text.starts_with("round,floats_cum,nll,accuracy,rmse,ece\n"));
    }
}
