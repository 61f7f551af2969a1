//! Command-line front end: data generation, training, evaluation, figure
//! sweeps and numerical self-checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mml_beam::channels::{make_mixed_dataset, write_dataset, ChannelModel};
use mml_beam::harness::experiment::checkpoint_path;
use mml_beam::harness::{
    emit_results, run_eval, run_figure, run_training, ExperimentConfig, Figure, Method, TrainMethod,
};
use mml_beam::nn::gradcheck::pipeline_gradcheck;
use mml_beam::nn::read_checkpoint;
use mml_beam::objective::{wsr, SystemConfig};
use mml_beam::rng::{stream, stream_rng};
use mml_beam::wmmse::{grid_oracle, wmmse_multistart};
use mml_beam::{Error, Result};

#[derive(Parser)]
#[command(name = "mml", version, about = "Multi-user MISO beamforming with meta-learned WMMSE components")]
struct Cli {
    /// Experiment configuration file (key = value with [sections]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Stream progress and per-epoch records to stdout.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a channel dataset (the configured training mix unless --model).
    GenData {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value = "dataset.mmlc")]
        file: String,
    },
    /// Train a model per configured SNR and seed.
    Train {
        #[arg(long)]
        method: String,
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Evaluate one method and write `eval_<method>.csv`.
    Eval {
        #[arg(long)]
        method: String,
        #[arg(long)]
        snr: Option<f64>,
        /// Checkpoint used for every SNR and seed; defaults to the one
        /// `train` wrote into the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Reproduce one figure's table: fig5, fig6, fig7 or fig8.
    Figure { id: String },
    /// Compare WMMSE against the exhaustive structure grid.
    Oracle {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 41)]
        grid_steps: usize,
        #[arg(long, default_value_t = 10.0)]
        snr: f64,
    },
    /// Finite-difference check of the full pipeline gradient.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        draws: u64,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 10.0)]
        snr: f64,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn snrs(cfg: &ExperimentConfig, snr: Option<f64>) -> Vec<f64> {
    snr.map_or_else(|| cfg.snr_db.clone(), |s| vec![s])
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    let verbose = cli.verbose;
    match &cli.command {
        Command::GenData { model, count, file } => {
            ensure_dir(out)?;
            let mix = match model {
                Some(m) => vec![(ChannelModel::parse(m)?, 1.0)],
                None => cfg.train.mix.clone(),
            };
            let n = count.unwrap_or(cfg.train.dataset_size);
            let data = make_mixed_dataset(
                &mut stream_rng(cfg.seeds[0], stream::DATASET),
                &mix,
                n,
                cfg.system.antennas,
                cfg.system.users,
            )?;
            let path = out.join(file);
            write_dataset(&path, &data)?;
            println!("{}", path.display());
        }
        Command::Train { method, snr } => {
            let method = TrainMethod::parse(method)?;
            cfg.echo(out)?;
            for s in snrs(&cfg, *snr) {
                for &seed in &cfg.seeds {
                    let mut on_epoch = |r: &mml_beam::meta::EpochRecord| {
                        if verbose {
                            println!(
                                "{{\"snr_db\":{s},\"seed\":{seed},\"epoch\":{},\"support_loss\":{},\"query_loss\":{}}}",
                                r.epoch, r.support_loss, r.query_loss
                            );
                        }
                    };
                    let path = run_training(&cfg, method, s, seed, out, &mut on_epoch)?;
                    println!("{}", path.display());
                }
            }
        }
        Command::Eval { method, snr, checkpoint } => {
            let method = Method::parse(method).map_err(|e| Error::Usage(e.to_string()))?;
            let fixed = checkpoint.as_deref().map(read_checkpoint).transpose()?;
            let mut rows = Vec::new();
            for s in snrs(&cfg, *snr) {
                for &seed in &cfg.seeds {
                    let params = match (&fixed, method) {
                        (Some(p), _) => Some(p.clone()),
                        (None, Method::Unsupervised | Method::Maml | Method::Mml) => {
                            let tm = if method == Method::Unsupervised {
                                TrainMethod::Unsupervised
                            } else {
                                TrainMethod::Maml
                            };
                            let path = checkpoint_path(out, tm, s, seed);
                            if !path.exists() {
                                return Err(Error::Usage(format!(
                                    "method {} needs --checkpoint or a trained {}",
                                    method.as_str(),
                                    path.display()
                                )));
                            }
                            Some(read_checkpoint(&path)?)
                        }
                        (None, _) => None,
                    };
                    if verbose {
                        println!("eval {} snr={s} seed={seed}", method.as_str());
                    }
                    rows.extend(run_eval(&cfg, method, s, seed, params.as_ref())?);
                }
            }
            let path = out.join(format!("eval_{}.csv", method.as_str()));
            emit_results(&rows, &path, cfg.json)?;
            println!("{}", path.display());
        }
        Command::Figure { id } => {
            let figure = Figure::parse(id)?;
            let mut progress = |msg: &str| {
                if verbose {
                    println!("{msg}");
                }
            };
            let path = run_figure(&cfg, figure, out, &mut progress)?;
            println!("{}", path.display());
        }
        Command::Oracle { instances, grid_steps, snr } => {
            let sys = cfg.system_at(*snr);
            let mut rng = stream_rng(cfg.seeds[0], stream::TEST);
            let mut solver_rng = stream_rng(cfg.seeds[0], stream::WMMSE);
            let mut worst = f64::INFINITY;
            for i in 0..*instances {
                let h = mml_beam::channels::sample_realization(
                    &mut rng,
                    &ChannelModel::Rayleigh,
                    sys.antennas,
                    sys.users,
                );
                let (_, best) = grid_oracle(&h, &sys, *grid_steps)?;
                let out = wmmse_multistart(
                    &h,
                    &sys,
                    cfg.test.wmmse_iters,
                    cfg.test.wmmse_eps,
                    cfg.test.wmmse_random_starts,
                    &mut solver_rng,
                )?;
                let ratio = wsr(&h, &out.v, &sys) / best;
                worst = worst.min(ratio);
                println!("instance {i}: wmmse/oracle = {ratio:.6}");
            }
            println!("min ratio {worst:.6}");
        }
        Command::Gradcheck { draws, h, tol, snr } => {
            let mut worst = 0.0f64;
            for n in [2usize, 3] {
                let sys = SystemConfig::new(n, n, *snr);
                let count = if n == 2 { *draws } else { (*draws / 4).max(1) };
                for d in 0..count {
                    let r = pipeline_gradcheck(&sys, &cfg.meta.hidden, 1, d, *h, *tol)?;
                    worst = worst.max(r.max_rel_error);
                    println!(
                        "N=K={n} draw {d}: max_rel_error {:.3e} checked {} skipped {}",
                        r.max_rel_error, r.checked, r.skipped
                    );
                }
            }
            println!("worst {worst:.3e} (tol {tol:e})");
            if !(worst < *tol) {
                return Err(Error::Degenerate(format!(
                    "gradient check failed: {worst:e} >= {tol:e}"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
