//! Loss-ranked replay memory and the memory-assisted test-time loop.
//!
//! Each slot admits the most recent fresh samples unconditionally and fills
//! the remaining capacity with the retained samples that currently incur the
//! largest loss.

use std::path::Path;

use crate::channels::{write_dataset, ChannelRealization};
use crate::error::{Error, Result};
use crate::meta::{adapt_on_test, MetaConfig};
use crate::nn::pipeline::{evaluate, PipelineOptions, Reduction};
use crate::nn::PredictorParams;
use crate::objective::{wsr, SystemConfig};
use crate::stats::{mean, std_dev};

pub const DEFAULT_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    /// Unique within one memory's lifetime.
    pub id: u64,
    pub sample: ChannelRealization,
    pub last_loss: f64,
    pub inserted_at: usize,
}

/// Which entries compete for the slots not reserved for fresh samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPool {
    /// Previously retained entries only.
    #[default]
    Retained,
    /// Retained entries plus the fresh samples that were not admitted directly.
    Union,
}

impl RankPool {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "retained" => Ok(RankPool::Retained),
            "union" => Ok(RankPool::Union),
            other => Err(Error::Argument(format!("unknown rank pool `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RankPool::Retained => "retained",
            RankPool::Union => "union",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryConfig {
    pub capacity: usize,
    /// Share of the capacity reserved for fresh samples each slot.
    pub fresh_fraction: f64,
    pub rank_pool: RankPool,
    /// How the losses of memory and fresh samples are combined when adapting.
    pub adapt_reduction: Reduction,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            capacity: DEFAULT_CAPACITY,
            fresh_fraction: 0.5,
            rank_pool: RankPool::Retained,
            adapt_reduction: Reduction::Mean,
        }
    }
}

impl MemoryConfig {
    pub fn with_capacity(capacity: usize) -> Self {
        MemoryConfig {
            capacity,
            ..MemoryConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fresh_fraction) {
            return Err(Error::Argument(format!(
                "fresh_fraction {} outside [0, 1]",
                self.fresh_fraction
            )));
        }
        Ok(())
    }

    /// Slots reserved for fresh samples when `fresh` of them arrive.
    pub fn fresh_slots(&self, fresh: usize) -> usize {
        let reserve = (self.capacity as f64 * self.fresh_fraction).ceil() as usize;
        fresh.min(reserve).min(self.capacity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorySet {
    entries: Vec<MemoryEntry>,
    config: MemoryConfig,
    next_id: u64,
}

impl MemorySet {
    pub fn new(config: MemoryConfig) -> Result<Self> {
        config.validate()?;
        Ok(MemorySet {
            entries: Vec::new(),
            config,
            next_id: 0,
        })
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &ChannelRealization> {
        self.entries.iter().map(|e| &e.sample)
    }

    /// Wraps fresh samples as entries stamped with slot `t`; losses unset.
    fn admit(&mut self, fresh: &[ChannelRealization], t: usize) -> Vec<MemoryEntry> {
        fresh
            .iter()
            .map(|s| {
                let id = self.next_id;
                self.next_id += 1;
                MemoryEntry {
                    id,
                    sample: s.clone(),
                    last_loss: f64::NAN,
                    inserted_at: t,
                }
            })
            .collect()
    }

    /// Dataset file of the retained samples plus a CSV loss table.
    pub fn dump(&self, dataset: &Path, table: &Path) -> Result<()> {
        let samples: Vec<ChannelRealization> = self.samples().cloned().collect();
        write_dataset(dataset, &samples)?;
        let mut csv = String::from("index,loss,inserted_at\n");
        for (i, e) in self.entries.iter().enumerate() {
            csv.push_str(&format!("{i},{},{}\n", e.last_loss, e.inserted_at));
        }
        std::fs::write(table, csv).map_err(|e| Error::io(table, e))
    }
}

fn score(
    entries: &mut [MemoryEntry],
    params: &PredictorParams,
    sys: &SystemConfig,
    opts: &PipelineOptions,
) -> Result<()> {
    if entries.is_empty() {
        return Ok(());
    }
    let batch: Vec<ChannelRealization> = entries.iter().map(|e| e.sample.clone()).collect();
    let (_, losses) = evaluate(params, &batch, sys, opts)?;
    for (e, l) in entries.iter_mut().zip(losses) {
        e.last_loss = l;
    }
    Ok(())
}

/// Recomputes every entry's loss under `params`.
pub fn score_entries(
    mem: &MemorySet,
    params: &PredictorParams,
    sys: &SystemConfig,
    opts: &PipelineOptions,
) -> Result<MemorySet> {
    let mut out = mem.clone();
    score(&mut out.entries, params, sys, opts)?;
    Ok(out)
}

/// Indices of the `count` highest-loss entries, hardest first. Ties go to the
/// fresher entry, then to the lower index.
pub fn rank_hardest(entries: &[MemoryEntry], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ea, eb) = (&entries[a], &entries[b]);
        eb.last_loss
            .total_cmp(&ea.last_loss)
            .then(eb.inserted_at.cmp(&ea.inserted_at))
            .then(a.cmp(&b))
    });
    idx.truncate(count);
    idx
}

/// Selection step of the update on already scored entries: the most recent
/// fresh samples first, then the hardest of the ranking pool.
pub fn select_entries(
    old: Vec<MemoryEntry>,
    fresh: Vec<MemoryEntry>,
    config: &MemoryConfig,
) -> Vec<MemoryEntry> {
    let m = config.capacity;
    if m == 0 {
        return Vec::new();
    }
    let pi = config.fresh_slots(fresh.len());
    let split = fresh.len() - pi;
    let mut fresh = fresh;
    let admitted = fresh.split_off(split);
    let pool = match config.rank_pool {
        RankPool::Retained => old,
        RankPool::Union => old.into_iter().chain(fresh).collect(),
    };
    let mut keep = rank_hardest(&pool, m - pi);
    keep.sort_unstable();
    let mut pool: Vec<Option<MemoryEntry>> = pool.into_iter().map(Some).collect();
    let mut out: Vec<MemoryEntry> = keep.into_iter().filter_map(|i| pool[i].take()).collect();
    out.extend(admitted);
    out
}

/// Admits slot-`t` samples and keeps the hardest retained entries, all scored
/// under `params`.
pub fn update_memory(
    mem: &MemorySet,
    fresh: &[ChannelRealization],
    t: usize,
    params: &PredictorParams,
    sys: &SystemConfig,
    opts: &PipelineOptions,
) -> Result<MemorySet> {
    let mut out = mem.clone();
    if out.config.capacity == 0 {
        out.entries.clear();
        return Ok(out);
    }
    let mut all = std::mem::take(&mut out.entries);
    let n_old = all.len();
    let new = out.admit(fresh, t);
    all.extend(new);
    score(&mut all, params, sys, opts)?;
    let fresh_scored = all.split_off(n_old);
    out.entries = select_entries(all, fresh_scored, &out.config);
    debug_assert!(out.entries.len() <= out.config.capacity);
    Ok(out)
}

/// Per-slot record of the test loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: usize,
    pub wsr_mean: f64,
    pub wsr_std: f64,
    pub samples: usize,
    pub memory_len: usize,
}

#[derive(Debug, Clone)]
pub struct MmlOutcome {
    pub params: PredictorParams,
    pub slots: Vec<SlotRecord>,
    /// Per-sample WSR of every slot, in stream order.
    pub wsr: Vec<Vec<f64>>,
    pub memory: MemorySet,
}

/// WSR of the normalized predicted beamformers on `batch`.
pub fn batch_wsr(
    params: &PredictorParams,
    batch: &[ChannelRealization],
    sys: &SystemConfig,
    opts: &PipelineOptions,
) -> Result<Vec<f64>> {
    let (beams, _) = evaluate(params, batch, sys, opts)?;
    Ok(batch.iter().zip(&beams).map(|(h, v)| wsr(h, v, sys)).collect())
}

/// Evaluate on each incoming slot, adapt on memory plus the slot, then update
/// the memory. With capacity 0 this is plain test-time adaptation on each
/// slot alone.
pub fn mml_test_loop(
    phi: &PredictorParams,
    stream: &[Vec<ChannelRealization>],
    meta: &MetaConfig,
    mem_cfg: &MemoryConfig,
    sys: &SystemConfig,
    opts: &PipelineOptions,
) -> Result<MmlOutcome> {
    let mut params = phi.clone();
    let mut mem = MemorySet::new(mem_cfg.clone())?;
    let mut slots = Vec::with_capacity(stream.len());
    let mut all_wsr = Vec::with_capacity(stream.len());
    for (t, batch) in stream.iter().enumerate() {
        let rates = batch_wsr(&params, batch, sys, opts)?;
        let mut adapt_batch: Vec<ChannelRealization> = mem.samples().cloned().collect();
        adapt_batch.extend(batch.iter().cloned());
        params = adapt_on_test(
            &params,
            &adapt_batch,
            meta.inner_lr,
            meta.adapt_steps,
            mem_cfg.adapt_reduction,
            sys,
            opts,
        )?;
        mem = update_memory(&mem, batch, t, &params, sys, opts)?;
        if mem.len() > mem_cfg.capacity {
            return Err(Error::Degenerate(format!(
                "memory holds {} entries, capacity {}",
                mem.len(),
                mem_cfg.capacity
            )));
        }
        slots.push(SlotRecord {
            slot: t + 1,
            wsr_mean: mean(&rates),
            wsr_std: std_dev(&rates),
            samples: rates.len(),
            memory_len: mem.len(),
        });
        all_wsr.push(rates);
    }
    Ok(MmlOutcome {
        params,
        slots,
        wsr: all_wsr,
        memory: mem,
    })
}
