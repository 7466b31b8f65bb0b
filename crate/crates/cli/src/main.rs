//! `bpcfl`: run one-shot Bayesian federated learning experiments from a
//! JSON config, either end to end or stage by stage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use bpcfl::config::{resolve, ExperimentConfig, ResolvedConfig};
use bpcfl::runner::{
    self, bank_for_shard, coreset_upfront_ledger, stage_data, write_aggregate, write_trace_csv,
    MethodReport, SeedReport, TraceRow,
};
use bpcfl::{CliError, Result};

use bpcfl_core::bpc::learn_coreset_with_bank;
use bpcfl_core::federation::{run_fedavg, server_target, ServerCoreset};
use bpcfl_core::io::{
    read_coreset, read_server_coreset, read_shards, write_coreset, write_server_coreset,
    write_shards,
};
use bpcfl_core::posterior::predictive_mc;
use bpcfl_core::rng::derive_seed;

#[derive(Parser)]
#[command(
    name = "bpcfl",
    version,
    about = "One-shot Bayesian federated learning with pseudocoresets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed end to end and write all artifacts.
    Run {
        /// Experiment JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the resolved config and exit without running anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Generate one seed's shards and pretrain its expert trajectory banks.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Stage directory (default: <output_dir>/seed_<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn one pseudocoreset per client, reusing banks when present.
    LearnCoreset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge the client coresets into the weighted server coreset.
    Aggregate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run downstream posterior inference on the server coreset.
    Downstream {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the averaging baselines (cold start, plus a warm start from the
    /// coreset posterior mode when a server coreset artifact exists).
    Fedavg {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge existing per-seed reports into aggregate.csv.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ CliError::Config(_)) => {
            eprintln!("{err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(1)
        }
    }
}

fn load(config: &Path) -> Result<ResolvedConfig> {
    resolve(&ExperimentConfig::load(config)?)
}

fn seed_dir(cfg: &ResolvedConfig, seed: u64, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| cfg.output_dir.join(format!("seed_{seed}")))
}

fn print_method_line(seed: u64, m: &MethodReport) {
    let mut parts = vec![format!("nll {:.4}", m.metrics.nll)];
    if let Some(a) = m.metrics.accuracy {
        parts.push(format!("acc {a:.4}"));
    }
    if let Some(r) = m.metrics.rmse {
        parts.push(format!("rmse {r:.4}"));
    }
    if let Some(e) = m.metrics.ece {
        parts.push(format!("ece {e:.4}"));
    }
    for (k, v) in &m.extra {
        parts.push(format!("{k} {v:.4}"));
    }
    parts.push(format!("floats {}", m.metrics.floats_cum));
    println!("seed {seed} {:<12} {}", m.method, parts.join("  "));
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            dry_run,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if dry_run {
                let text = serde_json::to_string_pretty(&cfg)
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                println!("{text}");
                return Ok(());
            }
            let started = Instant::now();
            let runs = runner::run_experiment(&cfg)?;
            for run in &runs {
                for m in &run.report.methods {
                    print_method_line(run.report.seed, m);
                }
            }
            println!(
                "wrote {} seed dirs and aggregate.csv under {} in {:.1}s",
                runs.len(),
                cfg.output_dir.display(),
                started.elapsed().as_secs_f64()
            );
            Ok(())
        }
        Command::Pretrain { config, seed, out } => {
            let cfg = load(&config)?;
            let dir = seed_dir(&cfg, seed, out);
            std::fs::create_dir_all(&dir)?;
            let (shards, _) = stage_data(&cfg, seed)?;
            write_shards(&dir.join("shards.csv"), &shards)?;
            let bpc_cfg = cfg.bpc_config(derive_seed(seed, "bpc", 0));
            for shard in &shards {
                let bank = bank_for_shard(&dir, shard, &cfg, &bpc_cfg)?;
                println!(
                    "client {}: bank with {} trajectories x {} checkpoints",
                    shard.client_id,
                    bank.trajectories.len(),
                    bank.num_checkpoints()
                );
            }
            Ok(())
        }
        Command::LearnCoreset { config, seed, out } => {
            let cfg = load(&config)?;
            let dir = seed_dir(&cfg, seed, out);
            std::fs::create_dir_all(&dir)?;
            let (shards, _) = stage_data(&cfg, seed)?;
            write_shards(&dir.join("shards.csv"), &shards)?;
            let bpc_cfg = cfg.bpc_config(derive_seed(seed, "bpc", 0));
            for shard in &shards {
                let bank = bank_for_shard(&dir, shard, &cfg, &bpc_cfg)?;
                let coreset =
                    learn_coreset_with_bank(shard, &bank, &cfg.architecture, &bpc_cfg)?;
                let path = dir.join(format!("coreset_{:02}.csv", shard.client_id));
                write_coreset(&path, &coreset)?;
                println!(
                    "client {}: coreset with {} points -> {}",
                    shard.client_id,
                    coreset.num_points(),
                    path.display()
                );
            }
            Ok(())
        }
        Command::Aggregate { config, seed, out } => {
            let cfg = load(&config)?;
            let dir = seed_dir(&cfg, seed, out);
            let shards = read_shards(&dir.join("shards.csv"))?;
            let mut coresets = Vec::with_capacity(shards.len());
            let mut sizes = Vec::with_capacity(shards.len());
            for shard in &shards {
                let path = dir.join(format!("coreset_{:02}.csv", shard.client_id));
                coresets.push(read_coreset(&path, shard.client_id, cfg.label_mode())?);
                sizes.push(shard.num_train());
            }
            let server = ServerCoreset::aggregate(coresets, &sizes)?;
            let path = dir.join("server_coreset.json");
            write_server_coreset(&path, &server)?;
            println!(
                "aggregated {} client coresets ({} points) -> {}",
                server.num_clients,
                server
                    .entries
                    .iter()
                    .map(|e| e.coreset.num_points())
                    .sum::<usize>(),
                path.display()
            );
            Ok(())
        }
        Command::Downstream { config, seed, out } => {
            let cfg = load(&config)?;
            let dir = seed_dir(&cfg, seed, out);
            let server = read_server_coreset(&dir.join("server_coreset.json"))?;
            let (_, eval) = stage_data(&cfg, seed)?;
            let target = server_target(&server, &cfg.architecture, &cfg.prior(), &cfg.likelihood);
            let uplink = coreset_upfront_ledger(&server).totals(None);
            let mut methods = Vec::new();
            for (index, method) in cfg.downstream.iter().enumerate() {
                let (samples, mut extra) =
                    runner::run_downstream(method, &target, &cfg, seed, index)?;
                let summary =
                    predictive_mc(&cfg.architecture, &samples, &eval.inputs, &cfg.likelihood)?;
                let mut metrics = bpcfl_core::eval::metrics_bundle(&summary, &eval.targets)?;
                metrics.floats_cum = uplink.floats;
                if let Some((span_inputs, mask)) = &eval.span {
                    let span_summary = predictive_mc(
                        &cfg.architecture,
                        &samples,
                        span_inputs,
                        &cfg.likelihood,
                    )?;
                    extra.insert(
                        "gap_ratio".to_string(),
                        bpcfl_core::eval::uncertainty_gap_ratio(&span_summary, mask)?,
                    );
                }
                write_trace_csv(
                    &dir.join(format!("trace_{}.csv", method.name())),
                    &[TraceRow {
                        round: 0,
                        metrics: metrics.clone(),
                    }],
                )?;
                let report = MethodReport {
                    method: method.name().to_string(),
                    metrics,
                    extra,
                };
                print_method_line(seed, &report);
                methods.push(report);
            }
            let text = serde_json::to_string_pretty(&methods)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            std::fs::write(dir.join("downstream.json"), format!("{text}\n"))?;
            Ok(())
        }
        Command::Fedavg { config, seed, out } => {
            let cfg = load(&config)?;
            let dir = seed_dir(&cfg, seed, out);
            std::fs::create_dir_all(&dir)?;
            let (shards, eval) = stage_data(&cfg, seed)?;
            let fedavg_seed = derive_seed(seed, "fedavg", 0);
            let prior = cfg.prior();

            let mut variants = vec![("fedavg_cold", None, None)];
            let server_path = dir.join("server_coreset.json");
            let upfront;
            if server_path.is_file() {
                let server = read_server_coreset(&server_path)?;
                let target =
                    server_target(&server, &cfg.architecture, &prior, &cfg.likelihood);
                let init = bpcfl_core::nn::init_params(
                    &cfg.architecture,
                    derive_seed(seed, "warm-start", 0),
                )?;
                let warm = bpcfl_core::posterior::map_optimize(
                    &target,
                    &init,
                    &runner::map_preset(cfg.task),
                )?;
                upfront = coreset_upfront_ledger(&server);
                variants.push(("fedavg_warm", Some(warm), Some(&upfront)));
            } else {
                println!("no server coreset found, running the cold baseline only");
            }

            let mut methods = Vec::new();
            for (name, init, upfront) in variants {
                let fcfg = cfg.fedavg_config(fedavg_seed, init);
                let (rounds, ledger) = run_fedavg(
                    &shards,
                    &cfg.architecture,
                    &prior,
                    &cfg.likelihood,
                    &fcfg,
                    name,
                    upfront,
                )?;
                let trace = runner::fedavg_trace(
                    &rounds,
                    &ledger,
                    &eval,
                    &cfg.architecture,
                    &cfg.likelihood,
                )?;
                write_trace_csv(&dir.join(format!("trace_{name}.csv")), &trace)?;
                let last = trace.last().expect("initial round always present");
                let report = MethodReport {
                    method: name.to_string(),
                    metrics: last.metrics.clone(),
                    extra: Default::default(),
                };
                print_method_line(seed, &report);
                methods.push(report);
            }
            let text = serde_json::to_string_pretty(&methods)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            std::fs::write(dir.join("fedavg.json"), format!("{text}\n"))?;
            Ok(())
        }
        Command::Report { config } => {
            let cfg = load(&config)?;
            let mut reports = Vec::with_capacity(cfg.seeds.len());
            for &seed in &cfg.seeds {
                let path = cfg
                    .output_dir
                    .join(format!("seed_{seed}"))
                    .join("report.json");
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    CliError::Runtime(format!("cannot read {}: {e}", path.display()))
                })?;
                let report: SeedReport = serde_json::from_str(&text).map_err(|e| {
                    CliError::Runtime(format!("{}: {e}", path.display()))
                })?;
                reports.push(report);
            }
            let refs: Vec<&SeedReport> = reports.iter().collect();
            let path = cfg.output_dir.join("aggregate.csv");
            write_aggregate(&path, &refs)?;
            println!("aggregated {} seed reports -> {}", refs.len(), path.display());
            Ok(())
        }
    }
}

