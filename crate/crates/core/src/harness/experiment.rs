//! Training runs, method evaluation and the four figure sweeps.

use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, Method};
use super::results::{emit_results, ResultRow, Slot};
use crate::channels::{make_mixed_dataset, sample_realization, ChannelModel, ChannelRealization};
use crate::error::{Error, Result};
use crate::linalg::{normalize_to_power, total_power};
use crate::memory::{mml_test_loop, MemoryConfig};
use crate::meta::{initial_params, meta_train, unsupervised_train, EpochRecord, TrainLog};
use crate::nn::checkpoint::write_checkpoint;
use crate::nn::mlp::feature_dim;
use crate::nn::pipeline::{PipelineOptions, VInit};
use crate::nn::PredictorParams;
use crate::objective::{wsr, SystemConfig};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::stats::{mean, std_dev};
use crate::wmmse::wmmse_multistart;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMethod {
    Maml,
    Unsupervised,
}

impl TrainMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "maml" => Ok(TrainMethod::Maml),
            "unsupervised" => Ok(TrainMethod::Unsupervised),
            other => Err(Error::Usage(format!(
                "training method must be maml or unsupervised, got `{other}`"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMethod::Maml => "maml",
            TrainMethod::Unsupervised => "unsupervised",
        }
    }
}

/// The mixed training set of one seed.
pub fn train_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ChannelRealization>> {
    make_mixed_dataset(
        &mut stream_rng(seed, stream::DATASET),
        &cfg.train.mix,
        cfg.train.dataset_size,
        cfg.system.antennas,
        cfg.system.users,
    )
}

pub fn pipeline_options(cfg: &ExperimentConfig, seed: u64) -> PipelineOptions {
    let v_init = match cfg.system.v_init {
        VInit::Mrt => VInit::Mrt,
        VInit::Random { .. } => VInit::Random {
            seed: derive_seed(seed, stream::V_INIT),
        },
    };
    PipelineOptions { v_init }
}

pub fn checkpoint_path(out: &Path, method: TrainMethod, snr_db: f64, seed: u64) -> PathBuf {
    out.join("checkpoints")
        .join(format!("{}_snr{}_seed{}.ckpt", method.as_str(), snr_db, seed))
}

/// Trains one model; deterministic in `(cfg, method, snr_db, seed)`.
pub fn train_params(
    cfg: &ExperimentConfig,
    method: TrainMethod,
    snr_db: f64,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(PredictorParams, TrainLog)> {
    let sys = cfg.system_at(snr_db);
    let data = train_dataset(cfg, seed)?;
    let opts = pipeline_options(cfg, seed);
    match method {
        TrainMethod::Maml => meta_train(&data, &cfg.meta, &sys, &opts, seed, on_epoch),
        TrainMethod::Unsupervised => unsupervised_train(
            &data,
            &sys,
            &opts,
            &cfg.meta.hidden,
            cfg.train.unsup_lr,
            cfg.train.unsup_epochs,
            cfg.train.unsup_batch,
            seed,
            on_epoch,
        ),
    }
}

/// Trains and writes the checkpoint plus a `.log.csv` training log beside it.
pub fn run_training(
    cfg: &ExperimentConfig,
    method: TrainMethod,
    snr_db: f64,
    seed: u64,
    out: &Path,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<PathBuf> {
    let (params, log) = train_params(cfg, method, snr_db, seed, on_epoch)?;
    let path = checkpoint_path(out, method, snr_db, seed);
    let dir = path.parent().expect("checkpoint path has a parent");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_checkpoint(&path, &params)?;
    let log_path = path.with_extension("log.csv");
    std::fs::write(&log_path, log.to_csv()).map_err(|e| Error::io(&log_path, e))?;
    Ok(path)
}

/// Test stream of one seed: `slots` batches of `slot_size` realizations.
pub fn test_stream(cfg: &ExperimentConfig, seed: u64) -> Vec<Vec<ChannelRealization>> {
    let t = &cfg.test;
    let mut rng = stream_rng(seed, stream::TEST);
    (0..t.slots)
        .map(|slot| {
            let model = if t.episodic && (slot / t.episode_len) % 2 == 1 {
                t.episodic_alt
            } else {
                t.channel
            };
            (0..t.slot_size)
                .map(|_| sample_realization(&mut rng, &model, cfg.system.antennas, cfg.system.users))
                .collect()
        })
        .collect()
}

fn check_shape(params: &PredictorParams, sys: &SystemConfig) -> Result<()> {
    if params.users() != sys.users || params.u_net.input_dim() != feature_dim(sys.antennas, sys.users) {
        return Err(Error::Usage(format!(
            "checkpoint does not match N={}, K={}",
            sys.antennas, sys.users
        )));
    }
    Ok(())
}

fn rows_from_slots(
    method: Method,
    snr_db: f64,
    seed: u64,
    per_slot: &[Vec<f64>],
) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = per_slot
        .iter()
        .enumerate()
        .map(|(t, r)| ResultRow {
            method,
            snr_db,
            seed,
            slot: Slot::Index(t + 1),
            wsr_mean: mean(r),
            wsr_std: std_dev(r),
            samples: r.len(),
        })
        .collect();
    let all: Vec<f64> = per_slot.iter().flatten().copied().collect();
    rows.push(ResultRow {
        method,
        snr_db,
        seed,
        slot: Slot::Final,
        wsr_mean: mean(&all),
        wsr_std: std_dev(&all),
        samples: all.len(),
    });
    rows
}

/// Per-sample WSR of each test slot for one method.
pub fn eval_wsr(
    cfg: &ExperimentConfig,
    method: Method,
    snr_db: f64,
    seed: u64,
    checkpoint: Option<&PredictorParams>,
) -> Result<Vec<Vec<f64>>> {
    let sys = cfg.system_at(snr_db);
    let opts = pipeline_options(cfg, seed);
    let stream = test_stream(cfg, seed);
    let trained = || -> Result<&PredictorParams> {
        let p = checkpoint.ok_or_else(|| {
            Error::Usage(format!("method {} needs a checkpoint", method.as_str()))
        })?;
        check_shape(p, &sys)?;
        Ok(p)
    };
    let no_memory = MemoryConfig {
        capacity: 0,
        ..cfg.memory.clone()
    };
    match method {
        Method::Wmmse => {
            let mut rng = stream_rng(derive_seed(seed, snr_db.to_bits()), stream::WMMSE);
            stream
                .iter()
                .map(|batch| {
                    batch
                        .iter()
                        .map(|h| {
                            let out = wmmse_multistart(
                                h,
                                &sys,
                                cfg.test.wmmse_iters,
                                cfg.test.wmmse_eps,
                                cfg.test.wmmse_random_starts,
                                &mut rng,
                            )?;
                            let v = normalize_to_power(&out.v, sys.power)?;
                            debug_assert!(total_power(&v) <= sys.power * (1.0 + 1e-9));
                            Ok(wsr(h, &v, &sys))
                        })
                        .collect()
                })
                .collect()
        }
        Method::Unsupervised => {
            let p = trained()?;
            stream
                .iter()
                .map(|batch| crate::memory::batch_wsr(p, batch, &sys, &opts))
                .collect()
        }
        Method::Maml => {
            let out = mml_test_loop(trained()?, &stream, &cfg.meta, &no_memory, &sys, &opts)?;
            Ok(out.wsr)
        }
        Method::MamlNoPretrain => {
            let fresh = initial_params(&sys, &cfg.meta.hidden, seed)?;
            let out = mml_test_loop(&fresh, &stream, &cfg.meta, &no_memory, &sys, &opts)?;
            Ok(out.wsr)
        }
        Method::Mml => {
            let out = mml_test_loop(trained()?, &stream, &cfg.meta, &cfg.memory, &sys, &opts)?;
            Ok(out.wsr)
        }
    }
}

/// Per-slot rows plus a `final` row for one method, SNR and seed.
pub fn run_eval(
    cfg: &ExperimentConfig,
    method: Method,
    snr_db: f64,
    seed: u64,
    checkpoint: Option<&PredictorParams>,
) -> Result<Vec<ResultRow>> {
    let per_slot = eval_wsr(cfg, method, snr_db, seed, checkpoint)?;
    Ok(rows_from_slots(method, snr_db, seed, &per_slot))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig5,
    Fig6,
    Fig7,
    Fig8,
}

impl Figure {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "fig5" => Ok(Figure::Fig5),
            "fig6" => Ok(Figure::Fig6),
            "fig7" => Ok(Figure::Fig7),
            "fig8" => Ok(Figure::Fig8),
            other => Err(Error::Usage(format!("unknown figure `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
            Figure::Fig8 => "fig8",
        }
    }

    pub fn test_channel(self) -> ChannelModel {
        match self {
            Figure::Fig5 => ChannelModel::Rician {
                k_factor: crate::channels::DEFAULT_RICIAN_K,
            },
            Figure::Fig6 => ChannelModel::Rayleigh,
            Figure::Fig7 => ChannelModel::Nakagami { m: 1.0 },
            Figure::Fig8 => ChannelModel::Nakagami { m: 10.0 },
        }
    }
}

/// Every configured method over the SNR grid and seeds, training models on
/// demand. Returns all rows in report order.
pub fn sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<ResultRow>> {
    let wants = |m: Method| cfg.methods.contains(&m);
    let mut rows = Vec::new();
    for &snr in &cfg.snr_db {
        for &seed in &cfg.seeds {
            let mut load = |tm: TrainMethod| -> Result<PredictorParams> {
                progress(&format!("train {} snr={snr} seed={seed}", tm.as_str()));
                let path = run_training(cfg, tm, snr, seed, out, &mut |_| {})?;
                crate::nn::read_checkpoint(&path)
            };
            let maml = if wants(Method::Maml) || wants(Method::Mml) {
                Some(load(TrainMethod::Maml)?)
            } else {
                None
            };
            let unsup = if wants(Method::Unsupervised) {
                Some(load(TrainMethod::Unsupervised)?)
            } else {
                None
            };
            for &method in &cfg.methods {
                progress(&format!("eval {} snr={snr} seed={seed}", method.as_str()));
                let ckpt = match method {
                    Method::Unsupervised => unsup.as_ref(),
                    Method::Maml | Method::Mml => maml.as_ref(),
                    _ => None,
                };
                rows.extend(run_eval(cfg, method, snr, seed, ckpt)?);
            }
        }
    }
    super::results::sort_rows(&mut rows);
    Ok(rows)
}

/// Runs one figure's sweep and writes `<out>/<fig>.csv`.
pub fn run_figure(
    cfg: &ExperimentConfig,
    figure: Figure,
    out: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    cfg.test.channel = figure.test_channel();
    cfg.echo(out)?;
    let rows = sweep(&cfg, out, progress)?;
    let path = out.join(format!("{}.csv", figure.as_str()));
    emit_results(&rows, &path, cfg.json)?;
    Ok(path)
}
