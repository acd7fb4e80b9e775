mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use leaps_core::analysis::{compare, config_hash, glauber_ground_truth, ObservableReport, ReportMeta};
use leaps_core::leqnet::{load_checkpoint_for, save_checkpoint, FluxNet, FreeEnergyNet};
use leaps_core::rng::{self, domain};
use leaps_core::sampler::{Sampler, Transport};
use leaps_core::trainer::{write_history_csv, TrainState, Trainer};
use leaps_core::verify::{format_table, run_battery, Level};
use leaps_core::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "leaps", version, about = "Train, run and check locally equivariant CTMC samplers")]
struct Cli {
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the config value.
    #[arg(long, global = true, env = "LEAPS_THREADS")]
    threads: Option<usize>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a flux net; writes checkpoint.ckpt, train_state.bin and history.csv.
    Train {
        config: PathBuf,
        /// Continue from a saved training state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many iterations in this invocation.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Run the sampler; writes ensemble.bin, diagnostics.ndjson and a report.
    Sample {
        config: PathBuf,
        /// Defaults to checkpoint.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Zero transport: annealed importance sampling / SMC.
        #[arg(long)]
        ais: bool,
    },
    /// Run the exact-oracle verification battery.
    Verify {
        #[arg(long, value_enum, default_value_t = LevelArg::Fast)]
        level: LevelArg,
        /// Also check a saved net.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Summarize one run directory or compare two.
    Report {
        #[arg(num_args = 1..=2, required = true)]
        dirs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error.root() {
            Error::Config(_) => 2,
            Error::ManifestMismatch(_) | Error::Format(_) => 3,
            Error::GeometryMismatch(_) => 4,
            _ => 1,
        };
        Failure { code, error }
    }
}

/// Errors that mean "this checkpoint or state does not fit the config".
fn checkpoint_failure(error: Error) -> Failure {
    match error.root() {
        Error::GeometryMismatch(_) | Error::ManifestMismatch(_) | Error::Format(_) => Failure { code: 3, error },
        _ => error.into(),
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Train { config, resume, stop_after } => {
            let cfg = load_config(&cli, config)?;
            train(&cfg, resume.as_deref(), *stop_after)
        }
        Command::Sample { config, checkpoint, ais } => {
            let cfg = load_config(&cli, config)?;
            sample(&cfg, checkpoint.as_deref(), *ais)
        }
        Command::Verify { level, checkpoint } => {
            set_threads(cli.threads);
            let level = match level {
                LevelArg::Fast => Level::Fast,
                LevelArg::Full => Level::Full,
            };
            verify(level, cli.seed.unwrap_or(0), checkpoint.as_deref())
        }
        Command::Report { dirs } => report(dirs, cli.output.as_deref()),
    }
}

fn load_config(cli: &Cli, path: &Path) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.output {
        cfg.output_dir = out.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    set_threads(cfg.threads);
    Ok(cfg)
}

fn set_threads(n: Option<usize>) {
    if let Some(n) = n.filter(|&n| n > 0) {
        // Fails only if the pool already exists, which leaves its size unchanged.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn train(cfg: &RunConfig, resume: Option<&Path>, stop_after: Option<usize>) -> CliResult {
    let target = cfg.target.build()?;
    let out = &cfg.output_dir;
    cfg.write_resolved(out)?;
    let mut trainer = match resume {
        Some(path) => {
            let state = TrainState::load(path).map_err(checkpoint_failure)?;
            Trainer::resume(state, &target, cfg.train.clone(), cfg.sampler.clone(), cfg.seed).map_err(checkpoint_failure)?
        }
        None => {
            let net = FluxNet::init(cfg.net_spec(&target), &mut rng::stream(cfg.seed, domain::INIT, u64::MAX))?;
            let gphi = FreeEnergyNet::init(cfg.train.free_energy_hidden, &mut rng::stream(cfg.seed, domain::INIT, u64::MAX - 1))?;
            Trainer::new(net, gphi, &target, cfg.train.clone(), cfg.sampler.clone(), cfg.seed)?
        }
    };
    let total = cfg.train.iterations;
    let every = (total / 20).max(1);
    let mut done = 0;
    while !trainer.is_done() && stop_after.is_none_or(|n| done < n) {
        let row = trainer.step()?;
        done += 1;
        if (row.iter + 1) % every == 0 || row.iter + 1 == total {
            let probe = row.ess_probe.map(|e| format!(" ess_probe {e:.4}")).unwrap_or_default();
            eprintln!("iter {:>6}/{total}  loss {:.6e}  t_max {:.3}{probe}", row.iter + 1, row.loss, row.t_max);
        }
    }
    let state = trainer.state();
    save_checkpoint(out.join("checkpoint.ckpt"), &state.net, &state.gphi)?;
    state.save(out.join("train_state.bin"))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("history.csv")).map_err(Error::from)?);
    write_history_csv(&state.history, &mut f)?;
    f.flush().map_err(Error::from)?;
    println!("trained {} iterations; outputs in {}", state.iter, out.display());
    Ok(())
}

fn sample(cfg: &RunConfig, checkpoint: Option<&Path>, ais: bool) -> CliResult {
    let target = cfg.target.build()?;
    let out = &cfg.output_dir;
    let loaded = if ais {
        None
    } else {
        let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join("checkpoint.ckpt"));
        let (net, _) =
            load_checkpoint_for(&path, &cfg.net_spec(&target), cfg.train.free_energy_hidden).map_err(checkpoint_failure)?;
        Some(net)
    };
    let text = cfg.write_resolved(out)?;
    let transport = loaded.as_ref().map_or(Transport::None, Transport::Net);
    let start = Instant::now();
    let (ens, diag) = Sampler::new(&target, transport, cfg.sampler.clone())?.run(cfg.seed)?;
    ens.save(out.join("ensemble.bin"))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("diagnostics.ndjson")).map_err(Error::from)?);
    diag.write_ndjson(&mut f)?;
    f.flush().map_err(Error::from)?;
    let label = if ais { "ais" } else { "leaps" };
    let meta = ReportMeta {
        label: label.into(),
        config_hash: config_hash(&text),
        seed: cfg.seed,
        wall_ms: start.elapsed().as_millis(),
    };
    let report = ObservableReport::from_ensemble(&ens, Some(&diag), meta)?;
    report.write_dir(out)?;
    println!(
        "{label}: {} walkers, {} steps, final ESS {:.4}, <|m|> {:.4} +- {:.4}",
        ens.len(),
        cfg.sampler.n_steps,
        report.final_ess,
        report.abs_magnetization_mean,
        report.abs_magnetization_err
    );
    if let (Some(z), Some(e)) = (report.log_z, report.log_z_err) {
        println!("log Z = {z:.6} +- {e:.6}");
    }
    let a = &cfg.analysis;
    if a.glauber_sweeps > 0 {
        let start = Instant::now();
        let states = glauber_ground_truth(&target, a.glauber_sweeps, a.glauber_burn_in, a.glauber_thin, cfg.seed)?;
        let meta = ReportMeta {
            label: "glauber".into(),
            config_hash: config_hash(&text),
            seed: cfg.seed,
            wall_ms: start.elapsed().as_millis(),
        };
        let truth = ObservableReport::from_mcmc(&states, meta)?;
        truth.write_dir(out.join("glauber"))?;
        let cmp = compare(&report, &truth)?;
        cmp.write_dir(out)?;
        print!("{}", cmp.table());
    }
    Ok(())
}

fn verify(level: Level, seed: u64, checkpoint: Option<&Path>) -> CliResult {
    let results = run_battery(level, seed, checkpoint);
    print!("{}", format_table(&results));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            error: Error::Domain(format!("failing properties: {}", failed.join(", "))),
        })
    }
}

fn report(dirs: &[PathBuf], output: Option<&Path>) -> CliResult {
    let a = ObservableReport::read_dir(&dirs[0])?;
    let Some(second) = dirs.get(1) else {
        println!("{} ({}x{}, {} samples)", a.meta.label, a.rows, a.cols, a.n_samples);
        println!("final ESS       {:.6}", a.final_ess);
        println!("<|m|>           {:.6} +- {:.6}", a.abs_magnetization_mean, a.abs_magnetization_err);
        if let (Some(z), Some(e)) = (a.log_z, a.log_z_err) {
            println!("log Z           {z:.6} +- {e:.6}");
        }
        return Ok(());
    };
    let b = ObservableReport::read_dir(second)?;
    let cmp = compare(&a, &b)?;
    print!("{}", cmp.table());
    if let Some(dir) = output {
        cmp.write_dir(dir)?;
    }
    Ok(())
}
