//! First-order meta-learning of the component predictor, plus the
//! unsupervised baseline.
//!
//! Inner steps are plain gradient steps on the summed support loss. The outer
//! step evaluates the summed query loss at each task's adapted parameters and
//! applies the sum of those gradients to the meta-parameters with Adam
//! (first-order approximation: no differentiation through the inner step).

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::channels::{task_from_pool, ChannelRealization, Task};
use crate::error::{Error, Result};
use crate::nn::optim::{sgd_step, AdamState};
use crate::nn::pipeline::{loss_and_grad, PipelineOptions, Reduction};
use crate::nn::PredictorParams;
use crate::objective::SystemConfig;
use crate::rng::{stream, stream_rng};

/// Hyperparameters of the two loops and of test-time adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub n_s: usize,
    pub n_q: usize,
    pub n_t: usize,
    pub epochs: usize,
    pub inner_steps: usize,
    /// Gradient steps per test-time adaptation call.
    pub adapt_steps: usize,
    /// Combination of per-sample losses in inner and adaptation steps.
    pub inner_reduction: Reduction,
    pub hidden: Vec<usize>,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_lr: 0.01,
            outer_lr: 0.001,
            n_s: 40,
            n_q: 40,
            n_t: 40,
            epochs: 200,
            inner_steps: 1,
            adapt_steps: 5,
            inner_reduction: Reduction::Sum,
            hidden: crate::nn::DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr >= 0.0) || !(self.outer_lr > 0.0) {
            return Err(Error::Argument("learning rates must be positive".into()));
        }
        if self.n_s == 0 || self.n_q == 0 || self.n_t == 0 {
            return Err(Error::Argument("n_s, n_q and n_t must be >= 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Argument("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// One completed training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss on the support sets before adaptation.
    pub support_loss: f64,
    /// Mean per-sample loss on the query sets after adaptation.
    pub query_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// CSV with header `epoch,support_loss,query_loss,seconds`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,support_loss,query_loss,seconds\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{:.3}\n",
                r.epoch, r.support_loss, r.query_loss, r.seconds
            ));
        }
        s
    }
}

fn per_sample(total: f64, count: usize, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => total / count as f64,
        Reduction::Mean => total,
    }
}

/// `steps` gradient steps `theta <- theta - a * grad` on `support`.
pub fn inner_adapt(
    theta: &PredictorParams,
    support: &[ChannelRealization],
    a: f64,
    steps: usize,
    reduction: Reduction,
    sys: &SystemConfig,
    opts: &PipelineOptions,
) -> Result<PredictorParams> {
    if support.is_empty() {
        return Err(Error::Argument("adaptation on an empty batch".into()));
    }
    let mut flat = theta.to_flat();
    let mut current = theta.clone();
    for _ in 0..steps {
        let (_, g) = loss_and_grad(&current, support, sys, opts, reduction)?;
        flat = sgd_step(&flat, &g, a);
        current.set_flat(&flat)?;
    }
    Ok(current)
}

/// Test-time adaptation; the same mechanics as [`inner_adapt`].
pub fn adapt_on_test(
    phi: &PredictorParams,
    batch: &[ChannelRealization],
    a: f64,
    adapt_steps: usize,
    reduction: Reduction,
    sys: &SystemConfig,
    opts: &PipelineOptions,
) -> Result<PredictorParams> {
    if adapt_steps == 0 {
        if batch.is_empty() {
            return Err(Error::Argument("adaptation on an empty batch".into()));
        }
        return Ok(phi.clone());
    }
    inner_adapt(phi, batch, a, adapt_steps, reduction, sys, opts)
}

/// Losses observed during one outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterStats {
    pub support_loss: f64,
    pub query_loss: f64,
    /// Accumulated first-order meta-gradient.
    pub meta_grad: Vec<f64>,
}

/// Per-task query gradient at the adapted parameters, plus support and
/// query losses.
pub fn task_gradient(
    phi: &PredictorParams,
    task: &Task,
    cfg: &MetaConfig,
    sys: &SystemConfig,
    opts: &PipelineOptions,
) -> Result<(Vec<f64>, f64, f64)> {
    let mut theta = phi.clone();
    let mut flat = theta.to_flat();
    let mut support_loss = None;
    for _ in 0..cfg.inner_steps {
        let (l, g) = loss_and_grad(&theta, &task.support, sys, opts, cfg.inner_reduction)?;
        support_loss.get_or_insert(l);
        flat = sgd_step(&flat, &g, cfg.inner_lr);
        theta.set_flat(&flat)?;
    }
    let support_loss = match support_loss {
        Some(l) => per_sample(l, task.support.len(), cfg.inner_reduction),
        None => {
            let (l, _) = loss_and_grad(phi, &task.support, sys, opts, Reduction::Mean)?;
            l
        }
    };
    let (q, g) = loss_and_grad(&theta, &task.query, sys, opts, Reduction::Sum)?;
    Ok((g, support_loss, q / task.query.len() as f64))
}

/// One meta update of `phi` from a set of tasks, tasks merged in order.
pub fn outer_update(
    phi: &PredictorParams,
    tasks: &[Task],
    cfg: &MetaConfig,
    sys: &SystemConfig,
    opts: &PipelineOptions,
    adam: &mut AdamState,
) -> Result<(PredictorParams, OuterStats)> {
    if tasks.is_empty() {
        return Err(Error::Argument("outer update needs at least one task".into()));
    }
    let mut acc = vec![0.0; phi.num_params()];
    let (mut support, mut query) = (0.0, 0.0);
    for task in tasks {
        let (g, s, q) = task_gradient(phi, task, cfg, sys, opts)?;
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi;
        }
        support += s;
        query += q;
    }
    let mut flat = phi.to_flat();
    adam.step(&mut flat, &acc, cfg.outer_lr);
    let next = phi.with_flat(&flat)?;
    let n = tasks.len() as f64;
    Ok((
        next,
        OuterStats {
            support_loss: support / n,
            query_loss: query / n,
            meta_grad: acc,
        },
    ))
}

/// Fresh parameters for a run seeded by `seed`.
pub fn initial_params(sys: &SystemConfig, hidden: &[usize], seed: u64) -> Result<PredictorParams> {
    PredictorParams::new(
        sys.antennas,
        sys.users,
        hidden,
        &mut stream_rng(seed, stream::INIT),
    )
}

/// Meta-training over tasks resampled from `dataset` every epoch.
pub fn meta_train(
    dataset: &[ChannelRealization],
    cfg: &MetaConfig,
    sys: &SystemConfig,
    opts: &PipelineOptions,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(PredictorParams, TrainLog)> {
    cfg.validate()?;
    sys.validate()?;
    if dataset.len() < cfg.n_s + cfg.n_q {
        return Err(Error::Argument(format!(
            "dataset of {} realizations cannot supply tasks of {} + {}",
            dataset.len(),
            cfg.n_s,
            cfg.n_q
        )));
    }
    let mut phi = initial_params(sys, &cfg.hidden, seed)?;
    let mut adam = AdamState::new(phi.num_params());
    let mut task_rng = stream_rng(seed, stream::TASKS);
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let tasks = (0..cfg.n_t)
            .map(|_| task_from_pool(&mut task_rng, dataset, cfg.n_s, cfg.n_q))
            .collect::<Result<Vec<_>>>()?;
        let (next, stats) = outer_update(&phi, &tasks, cfg, sys, opts, &mut adam)?;
        phi = next;
        let record = EpochRecord {
            epoch,
            support_loss: stats.support_loss,
            query_loss: stats.query_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok((phi, log))
}

/// Plain Adam on the mean loss over shuffled minibatches of the dataset.
#[allow(clippy::too_many_arguments)]
pub fn unsupervised_train(
    dataset: &[ChannelRealization],
    sys: &SystemConfig,
    opts: &PipelineOptions,
    hidden: &[usize],
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(PredictorParams, TrainLog)> {
    sys.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("unsupervised training on an empty dataset".into()));
    }
    if batch_size == 0 || !(lr > 0.0) {
        return Err(Error::Argument("batch size and learning rate must be positive".into()));
    }
    let mut params = initial_params(sys, hidden, seed)?;
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len());
    let mut rng = stream_rng(seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 1..=epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<ChannelRealization> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let (l, g) = loss_and_grad(&params, &batch, sys, opts, Reduction::Mean)?;
            adam.step(&mut flat, &g, lr);
            params.set_flat(&flat)?;
            total += l;
            batches += 1;
        }
        let mean = total / batches as f64;
        let record = EpochRecord {
            epoch,
            support_loss: mean,
            query_loss: mean,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{make_mixed_dataset, make_task, sample_realization, ChannelModel};
    use crate::nn::pipeline::evaluate;
    use crate::rng::seeded;

    fn small_meta() -> MetaConfig {
        MetaConfig {
            n_s: 8,
            n_q: 8,
            n_t: 4,
            epochs: 3,
            hidden: vec![16, 16],
            ..MetaConfig::default()
        }
    }

    fn rayleigh(seed: u64, count: usize) -> Vec<ChannelRealization> {
        let mut rng = seeded(seed);
        (0..count)
            .map(|_| sample_realization(&mut rng, &ChannelModel::Rayleigh, 2, 2))
            .collect()
    }

    fn bits(p: &PredictorParams) -> Vec<u64> {
        p.to_flat().iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn zero_rate_is_identity_and_input_untouched() {
        let sys = SystemConfig::new(2, 2, 10.0);
        let theta = initial_params(&sys, &[16], 1).unwrap();
        let before = bits(&theta);
        let data = rayleigh(2, 8);
        let out = inner_adapt(&theta, &data, 0.0, 1, Reduction::Sum, &sys, &PipelineOptions::default())
            .unwrap();
        assert_eq!(bits(&out), before);
        let _ = inner_adapt(&theta, &data, 0.01, 3, Reduction::Sum, &sys, &PipelineOptions::default())
            .unwrap();
        assert_eq!(bits(&theta), before);
    }

    #[test]
    fn one_step_is_sgd_on_recomputed_gradient() {
        let sys = SystemConfig::new(2, 2, 10.0);
        let opts = PipelineOptions::default();
        let theta = initial_params(&sys, &[16], 3).unwrap();
        let data = rayleigh(4, 8);
        let out = inner_adapt(&theta, &data, 0.01, 1, Reduction::Sum, &sys, &opts).unwrap();
        let (_, g) = loss_and_grad(&theta, &data, &sys, &opts, Reduction::Sum).unwrap();
        assert_eq!(bits(&out), sgd_step(&theta.to_flat(), &g, 0.01).iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn adapt_on_test_shares_inner_adapt() {
        let sys = SystemConfig::new(2, 2, 10.0);
        let opts = PipelineOptions::default();
        let theta = initial_params(&sys, &[16], 5).unwrap();
        let data = rayleigh(6, 8);
        let a = adapt_on_test(&theta, &data, 0.01, 2, Reduction::Sum, &sys, &opts).unwrap();
        let b = inner_adapt(&theta, &data, 0.01, 2, Reduction::Sum, &sys, &opts).unwrap();
        assert_eq!(bits(&a), bits(&b));
        let c = adapt_on_test(&theta, &data, 0.01, 0, Reduction::Sum, &sys, &opts).unwrap();
        assert_eq!(bits(&c), bits(&theta));
    }

    #[test]
    fn zero_inner_rate_collapses_to_adam_on_query() {
        let sys = SystemConfig::new(2, 2, 10.0);
        let opts = PipelineOptions::default();
        let cfg = MetaConfig {
            inner_lr: 0.0,
            ..small_meta()
        };
        let phi = initial_params(&sys, &cfg.hidden, 7).unwrap();
        let task = make_task(&mut seeded(8), &ChannelModel::Rayleigh, 8, 8, 2, 2).unwrap();
        let mut adam = AdamState::new(phi.num_params());
        let (next, _) = outer_update(&phi, std::slice::from_ref(&task), &cfg, &sys, &opts, &mut adam).unwrap();

        let (_, g) = loss_and_grad(&phi, &task.query, &sys, &opts, Reduction::Sum).unwrap();
        let mut flat = phi.to_flat();
        AdamState::new(flat.len()).step(&mut flat, &g, cfg.outer_lr);
        assert_eq!(bits(&next), flat.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn meta_gradient_is_sum_of_task_gradients() {
        let sys = SystemConfig::new(2, 2, 10.0);
        let opts = PipelineOptions::default();
        let cfg = small_meta();
        let phi = initial_params(&sys, &cfg.hidden, 9).unwrap();
        let mut rng = seeded(10);
        let tasks: Vec<Task> = (0..5)
            .map(|_| make_task(&mut rng, &ChannelModel::Rayleigh, 8, 8, 2, 2).unwrap())
            .collect();
        let (_, stats) =
            outer_update(&phi, &tasks, &cfg, &sys, &opts, &mut AdamState::new(phi.num_params())).unwrap();
        let mut expected = vec![0.0; phi.num_params()];
        for t in &tasks {
            let (g, _, _) = task_gradient(&phi, t, &cfg, &sys, &opts).unwrap();
            for (e, gi) in expected.iter_mut().zip(g) {
                *e += gi;
            }
        }
        assert_eq!(stats.meta_grad, expected);

        // reversed order agrees up to reassociation
        let rev: Vec<Task> = tasks.iter().rev().cloned().collect();
        let (_, rstats) =
            outer_update(&phi, &rev, &cfg, &sys, &opts, &mut AdamState::new(phi.num_params())).unwrap();
        let scale = expected.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in rstats.meta_grad.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn meta_train_edge_cases() {
        let sys = SystemConfig::new(2, 2, 10.0);
        let opts = PipelineOptions::default();
        let data = rayleigh(11, 40);
        let cfg0 = MetaConfig {
            epochs: 0,
            ..small_meta()
        };
        let (p, log) = meta_train(&data, &cfg0, &sys, &opts, 3, &mut |_| {}).unwrap();
        assert_eq!(p, initial_params(&sys, &cfg0.hidden, 3).unwrap());
        assert!(log.epochs.is_empty());

        let cfg = small_meta();
        let (a, la) = meta_train(&data, &cfg, &sys, &opts, 3, &mut |_| {}).unwrap();
        let (b, _) = meta_train(&data, &cfg, &sys, &opts, 3, &mut |_| {}).unwrap();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(la.epochs.len(), 3);

        let tiny = rayleigh(12, 10);
        assert!(matches!(
            meta_train(&tiny, &cfg, &sys, &opts, 3, &mut |_| {}),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn unsupervised_edge_cases() {
        let sys = SystemConfig::new(2, 2, 10.0);
        let opts = PipelineOptions::default();
        let data = rayleigh(13, 20);
        let (p, _) = unsupervised_train(&data, &sys, &opts, &[16], 1e-3, 0, 8, 4, &mut |_| {}).unwrap();
        assert_eq!(p, initial_params(&sys, &[16], 4).unwrap());
        assert!(unsupervised_train(&[], &sys, &opts, &[16], 1e-3, 1, 8, 4, &mut |_| {}).is_err());
    }

    #[test]
    fn adaptation_reduces_support_loss() {
        let sys = SystemConfig::new(3, 3, 10.0);
        let opts = PipelineOptions::default();
        let mut improved = 0;
        for trial in 0..20 {
            let theta = initial_params(&sys, &[64, 64], 100 + trial).unwrap();
            let support: Vec<_> = {
                let mut rng = seeded(200 + trial);
                (0..40)
                    .map(|_| sample_realization(&mut rng, &ChannelModel::Rayleigh, 3, 3))
                    .collect()
            };
            let before = evaluate(&theta, &support, &sys, &opts).unwrap().1;
            let adapted = inner_adapt(&theta, &support, 0.01, 1, Reduction::Sum, &sys, &opts).unwrap();
            let after = evaluate(&adapted, &support, &sys, &opts).unwrap().1;
            if after.iter().sum::<f64>() <= before.iter().sum::<f64>() {
                improved += 1;
            }
        }
        assert!(improved >= 19, "{improved}/20");
    }

    #[test]
    fn meta_training_lowers_query_loss() {
        let sys = SystemConfig::new(2, 2, 10.0);
        let data = rayleigh(21, 120);
        let cfg = MetaConfig {
            epochs: 50,
            ..small_meta()
        };
        let (_, log) = meta_train(&data, &cfg, &sys, &PipelineOptions::default(), 2, &mut |_| {}).unwrap();
        let avg = |r: &[EpochRecord]| r.iter().map(|e| e.query_loss).sum::<f64>() / r.len() as f64;
        let (head, tail) = (avg(&log.epochs[..5]), avg(&log.epochs[45..]));
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn unsupervised_overfits_one_sample() {
        let sys = SystemConfig::new(2, 2, 10.0);
        let opts = PipelineOptions::default();
        let one = rayleigh(31, 1);
        let start = initial_params(&sys, &[16, 16], 5).unwrap();
        let (p, _) = unsupervised_train(&one, &sys, &opts, &[16, 16], 1e-2, 300, 1, 5, &mut |_| {}).unwrap();
        let before = evaluate(&start, &one, &sys, &opts).unwrap().1[0];
        let after = evaluate(&p, &one, &sys, &opts).unwrap().1[0];
        assert!(after < before - 0.05, "{before} -> {after}");
    }

    #[test]
    fn mixed_dataset_trains() {
        let sys = SystemConfig::new(2, 2, 10.0);
        let data = make_mixed_dataset(
            &mut seeded(1),
            &[(ChannelModel::Rayleigh, 0.5), (ChannelModel::Rician { k_factor: 3.0 }, 0.5)],
            60,
            2,
            2,
        )
        .unwrap();
        let (_, log) = meta_train(&data, &small_meta(), &sys, &PipelineOptions::default(), 1, &mut |_| {})
            .unwrap();
        assert!(log.epochs.iter().all(|r| r.query_loss.is_finite()));
        assert!(log.to_csv().starts_with("epoch,support_loss,query_loss,seconds\n"));
    }
}
