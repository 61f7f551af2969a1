//! Central finite-difference verification of gradients.

use crate::channels::{sample_realization, ChannelModel};
use crate::error::Result;
use crate::nn::pipeline::{loss_and_grad, reconstruct_and_loss, PipelineOptions, Reduction};
use crate::nn::tape::Tape;
use crate::nn::PredictorParams;
use crate::objective::SystemConfig;
use crate::rng::{stream, stream_rng};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates whose difference stencil crossed a kink.
    pub skipped: usize,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `f` at `params`.
///
/// The relative error of coordinate `i` is
/// `|fd_i - g_i| / max(|fd_i|, |g_i|, floor)`, where `floor` is
/// `1e-5 * max_j |g_j|` (at least `1e-9`) so that coordinates with vanishing
/// derivatives are judged on an absolute scale tied to the whole gradient.
pub fn finite_diff_check<F>(f: F, params: &[f64], analytic: &[f64], h: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    finite_diff_check_piecewise(|x| (f(x), Vec::new()), params, analytic, h, tol)
}

/// As [`finite_diff_check`] for a piecewise-smooth `f` that also reports which
/// piece it evaluated (for example the ReLU activity pattern). Coordinates
/// whose `+h` or `-h` evaluation lands on a different piece than `params` are
/// skipped, since a difference quotient across a kink is no derivative.
pub fn finite_diff_check_piecewise<F>(
    f: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    tol: f64,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> (f64, Vec<bool>),
{
    assert!(h > 0.0, "step must be positive");
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-5 * scale).max(1e-9);
    let (_, center) = f(params);
    let mut x = params.to_vec();
    let mut worst = (0.0f64, 0usize);
    let mut skipped = 0;
    for i in 0..params.len() {
        let orig = x[i];
        x[i] = orig + h;
        let (fp, pp) = f(&x);
        x[i] = orig - h;
        let (fm, pm) = f(&x);
        x[i] = orig;
        if pp != center || pm != center {
            skipped += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let denom = fd.abs().max(analytic[i].abs()).max(floor);
        let err = (fd - analytic[i]).abs() / denom;
        if err > worst.0 || err.is_nan() {
            worst = (if err.is_nan() { f64::INFINITY } else { err }, i);
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: params.len() - skipped,
        skipped,
        passed: worst.0 < tol,
    }
}

/// Checks the gradient of the mean channel-to-loss pipeline for one random
/// draw of network parameters and a Rayleigh batch.
pub fn pipeline_gradcheck(
    sys: &SystemConfig,
    hidden: &[usize],
    batch: usize,
    seed: u64,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let params = PredictorParams::new(
        sys.antennas,
        sys.users,
        hidden,
        &mut stream_rng(seed, stream::INIT),
    )?;
    let mut rng = stream_rng(seed, stream::TEST);
    let data: Vec<_> = (0..batch)
        .map(|_| sample_realization(&mut rng, &ChannelModel::Rayleigh, sys.antennas, sys.users))
        .collect();
    let opts = PipelineOptions::default();
    let (_, g) = loss_and_grad(&params, &data, sys, &opts, Reduction::Mean)?;
    let f = |x: &[f64]| {
        let p = params.with_flat(x).expect("same shape");
        let mut tape = Tape::new();
        match reconstruct_and_loss(&p, &data, sys, &opts, &mut tape) {
            Ok(graph) => {
                let root = tape.mean(graph.losses);
                (tape.value(root).item(), tape.relu_pattern())
            }
            Err(_) => (f64::NAN, Vec::new()),
        }
    };
    Ok(finite_diff_check_piecewise(f, &params.to_flat(), &g, h, tol))
}
