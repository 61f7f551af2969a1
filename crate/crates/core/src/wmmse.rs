//! WMMSE beamforming and its low-dimensional decomposition.
//!
//! A beamformer is described by three components: the receive coefficients
//! `u`, the MSE weights `w` and the power multiplier `mu`. Given them, the
//! beamformer is recovered as
//!
//! ```text
//! v_k = alpha_k u_k w_k (S + mu I)^{-1} h_k,   S = sum_k alpha_k |u_k|^2 w_k h_k h_k^H
//! ```
//!
//! with `u` used unconjugated, which makes the WMMSE iterate a fixed point of
//! the decomposition. The same module holds the classical alternating solver
//! and an exhaustive search over the optimal-structure parameterization that
//! serves as a reference for it.

use std::cell::RefCell;

use rand::Rng;

use crate::channels::{sample_rayleigh, ChannelRealization};
use crate::error::{Error, Result};
use crate::linalg::{
    dot_h, hermitian_rank1_sum, norm_sqr, normalize_to_power, total_power, CMat, CVec, HpdFactor,
    C64,
};
use crate::objective::{gain_matrix, wsr, BeamPredictor, SystemConfig};
use crate::rng::SimRng;

pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_RANDOM_STARTS: usize = 2;
/// Relative bracket width at which the multiplier bisection stops.
pub const MU_REL_TOL: f64 = 1e-15;

/// `(u, w, mu)`; `w_k >= 1` and `mu >= 0` for anything derived from a beamformer.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentTriple {
    pub u: CVec,
    pub w: Vec<f64>,
    pub mu: f64,
}

/// Virtual and actual power allocations of the optimal-structure beamformer.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureParams {
    pub lambda: Vec<f64>,
    pub p: Vec<f64>,
}

fn received_power(gains: &[Vec<f64>], k: usize) -> (f64, f64) {
    let total: f64 = gains[k].iter().sum();
    (total, total - gains[k][k])
}

/// `w_k = (sigma2 + sum_j |h_k^H v_j|^2) / (sigma2 + sum_{j != k} |h_k^H v_j|^2)`.
pub fn compute_w(h: &ChannelRealization, v: &CMat, cfg: &SystemConfig) -> Vec<f64> {
    let gains = gain_matrix(h, v);
    (0..h.users())
        .map(|k| {
            let (total, interference) = received_power(&gains, k);
            (cfg.sigma2 + total) / (cfg.sigma2 + interference)
        })
        .collect()
}

/// `u_k = h_k^H v_k / (sigma2 + sum_j |h_k^H v_j|^2)`.
pub fn compute_u(h: &ChannelRealization, v: &CMat, cfg: &SystemConfig) -> CVec {
    let gains = gain_matrix(h, v);
    (0..h.users())
        .map(|k| {
            let (total, _) = received_power(&gains, k);
            dot_h(h.h(k), &v.column(k)) / (cfg.sigma2 + total)
        })
        .collect()
}

fn check_triple(h: &ChannelRealization, u: &[C64], w: &[f64], cfg: &SystemConfig) -> Result<()> {
    let k = h.users();
    if u.len() != k || w.len() != k || cfg.alpha.len() != k {
        return Err(Error::Argument(format!(
            "component lengths u={}, w={}, alpha={} for K={k}",
            u.len(),
            w.len(),
            cfg.alpha.len()
        )));
    }
    Ok(())
}

/// `S = sum_k alpha_k |u_k|^2 w_k h_k h_k^H`.
pub fn s_matrix(h: &ChannelRealization, u: &[C64], w: &[f64], cfg: &SystemConfig) -> Result<CMat> {
    check_triple(h, u, w, cfg)?;
    let coeffs: Vec<f64> = (0..h.users())
        .map(|k| cfg.alpha[k] * u[k].norm_sqr() * w[k])
        .collect();
    hermitian_rank1_sum(&coeffs, h.all(), h.antennas())
}

fn reconstruct_with(
    h: &ChannelRealization,
    u: &[C64],
    w: &[f64],
    factor: &HpdFactor,
    cfg: &SystemConfig,
) -> CMat {
    let n = h.antennas();
    let mut v = CMat::zeros(n, h.users());
    for k in 0..h.users() {
        let x = factor.solve_vec(h.h(k));
        let beta = u[k] * (cfg.alpha[k] * w[k]);
        let col: CVec = x.iter().map(|xi| beta * xi).collect();
        v.set_column(k, &col);
    }
    v
}

/// Recovers the beamformer from its components.
pub fn reconstruct_v(
    h: &ChannelRealization,
    comps: &ComponentTriple,
    cfg: &SystemConfig,
) -> Result<CMat> {
    let s = s_matrix(h, &comps.u, &comps.w, cfg)?;
    let factor = HpdFactor::new(&s, comps.mu)?;
    Ok(reconstruct_with(h, &comps.u, &comps.w, &factor, cfg))
}

/// Transmit power of the reconstruction at multiplier `mu`, infinite when
/// `S + mu I` is numerically singular.
fn power_at(h: &ChannelRealization, u: &[C64], w: &[f64], s: &CMat, mu: f64, cfg: &SystemConfig) -> f64 {
    match HpdFactor::new(s, mu) {
        Ok(f) => total_power(&reconstruct_with(h, u, w, &f, cfg)),
        Err(_) => f64::INFINITY,
    }
}

/// Smallest `mu >= 0` whose reconstruction meets the power budget.
///
/// Returns 0 when the unconstrained reconstruction already fits. Otherwise an
/// upper bracket is found by doubling and the bracket is bisected; the upper
/// end is returned so the budget is never exceeded.
pub fn solve_mu(h: &ChannelRealization, u: &[C64], w: &[f64], cfg: &SystemConfig) -> Result<f64> {
    check_triple(h, u, w, cfg)?;
    if u.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::Degenerate("all receive coefficients are zero".into()));
    }
    let s = s_matrix(h, u, w, cfg)?;
    let p = cfg.power;
    if power_at(h, u, w, &s, 0.0, cfg) <= p {
        return Ok(0.0);
    }
    let scale = (s.trace().re / h.antennas() as f64).max(1e-300);
    let mut lo = 0.0;
    let mut hi = scale;
    let mut guard = 0;
    while power_at(h, u, w, &s, hi, cfg) > p {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 2000 || !hi.is_finite() {
            return Err(Error::Degenerate("no multiplier meets the power budget".into()));
        }
    }
    for _ in 0..300 {
        if hi - lo <= MU_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if power_at(h, u, w, &s, mid, cfg) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Result of the alternating WMMSE iteration.
#[derive(Debug, Clone)]
pub struct WmmseOutcome {
    pub v: CMat,
    pub comps: ComponentTriple,
    pub iterations: usize,
    /// WSR of the starting point followed by every iterate.
    pub wsr_trace: Vec<f64>,
}

fn random_start<R: Rng + ?Sized>(rng: &mut R, cfg: &SystemConfig) -> Result<CMat> {
    let cols: Vec<CVec> = (0..cfg.users)
        .map(|_| sample_rayleigh(rng, cfg.antennas))
        .collect();
    normalize_to_power(&CMat::from_columns(cfg.antennas, &cols)?, cfg.power)
}

/// One WMMSE update `V -> (u, w, mu) -> V'`.
pub fn wmmse_step(
    h: &ChannelRealization,
    v: &CMat,
    cfg: &SystemConfig,
) -> Result<(CMat, ComponentTriple)> {
    let u = compute_u(h, v, cfg);
    let w = compute_w(h, v, cfg);
    let mu = solve_mu(h, &u, &w, cfg)?;
    let comps = ComponentTriple { u, w, mu };
    let next = reconstruct_v(h, &comps, cfg)?;
    Ok((next, comps))
}

/// Alternating WMMSE: [`wmmse_multistart`] with [`DEFAULT_RANDOM_STARTS`]
/// seeded random starts.
pub fn wmmse_solve<R: Rng + ?Sized>(
    h: &ChannelRealization,
    cfg: &SystemConfig,
    max_iters: usize,
    eps: f64,
    rng: &mut R,
) -> Result<WmmseOutcome> {
    wmmse_multistart(h, cfg, max_iters, eps, DEFAULT_RANDOM_STARTS, rng)
}

/// Alternating WMMSE from the given start; returns the best iterate.
pub fn wmmse_from(
    h: &ChannelRealization,
    cfg: &SystemConfig,
    v0: CMat,
    max_iters: usize,
    eps: f64,
) -> Result<WmmseOutcome> {
    if max_iters == 0 || !(eps > 0.0) {
        return Err(Error::Argument("max_iters >= 1 and eps > 0 required".into()));
    }
    cfg.validate()?;
    let mut v = v0;
    let mut trace = vec![wsr(h, &v, cfg)];
    let mut best = (trace[0], v.clone(), None);
    let mut iterations = 0;
    for _ in 0..max_iters {
        let (next, comps) = match wmmse_step(h, &v, cfg) {
            Ok(x) => x,
            Err(_) => break,
        };
        iterations += 1;
        let delta = next
            .as_slice()
            .iter()
            .zip(v.as_slice())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let rate = wsr(h, &next, cfg);
        trace.push(rate);
        if rate >= best.0 || best.2.is_none() {
            best = (rate, next.clone(), Some(comps));
        }
        v = next;
        if delta < eps {
            break;
        }
    }
    let (_, v, comps) = best;
    let comps = match comps {
        Some(c) => c,
        None => ComponentTriple {
            u: compute_u(h, &v, cfg),
            w: compute_w(h, &v, cfg),
            mu: 0.0,
        },
    };
    Ok(WmmseOutcome {
        v,
        comps,
        iterations,
        wsr_trace: trace,
    })
}

/// Best of several WMMSE runs: a regularized zero-forcing start, one start
/// per user that serves that user alone, then `random_starts` seeded random
/// starts. WMMSE cannot revive a user whose beam has collapsed to zero, so on
/// strongly correlated channels a single start may switch off the wrong user;
/// the single-user starts cover exactly that case.
pub fn wmmse_multistart<R: Rng + ?Sized>(
    h: &ChannelRealization,
    cfg: &SystemConfig,
    max_iters: usize,
    eps: f64,
    random_starts: usize,
    rng: &mut R,
) -> Result<WmmseOutcome> {
    cfg.validate()?;
    let k = cfg.users;
    let equal = vec![cfg.power / k as f64; k];
    let mut starts = vec![structure_beamformer(
        h,
        &StructureParams {
            lambda: equal.clone(),
            p: equal,
        },
        cfg,
    )?];
    if k > 1 {
        for user in 0..k {
            let mut p = vec![0.0; k];
            p[user] = cfg.power;
            starts.push(structure_beamformer(
                h,
                &StructureParams {
                    lambda: vec![0.0; k],
                    p,
                },
                cfg,
            )?);
        }
    }
    for _ in 0..random_starts {
        starts.push(random_start(rng, cfg)?);
    }
    let mut best: Option<(f64, WmmseOutcome)> = None;
    for v0 in starts {
        let out = wmmse_from(h, cfg, v0, max_iters, eps)?;
        let rate = wsr(h, &out.v, cfg);
        if best.as_ref().is_none_or(|(r, _)| rate > *r) {
            best = Some((rate, out));
        }
    }
    Ok(best.expect("at least one start").1)
}

/// WMMSE as a [`BeamPredictor`]; each call consumes starts from one seeded stream.
pub struct WmmsePredictor {
    pub max_iters: usize,
    pub eps: f64,
    rng: RefCell<SimRng>,
}

impl WmmsePredictor {
    pub fn new(rng: SimRng) -> Self {
        WmmsePredictor {
            max_iters: DEFAULT_MAX_ITERS,
            eps: DEFAULT_EPS,
            rng: RefCell::new(rng),
        }
    }
}

impl BeamPredictor for WmmsePredictor {
    fn beamformer(&self, h: &ChannelRealization, cfg: &SystemConfig) -> Result<CMat> {
        let mut rng = self.rng.borrow_mut();
        Ok(wmmse_solve(h, cfg, self.max_iters, self.eps, &mut *rng)?.v)
    }
}

/// Unit-norm directions `(I + sum_j lambda_j/sigma2 h_j h_j^H)^{-1} h_k`.
fn structure_directions(
    h: &ChannelRealization,
    lambda: &[f64],
    cfg: &SystemConfig,
) -> Result<Vec<CVec>> {
    let coeffs: Vec<f64> = lambda.iter().map(|l| l / cfg.sigma2).collect();
    let a = hermitian_rank1_sum(&coeffs, h.all(), h.antennas())?;
    let factor = HpdFactor::new(&a, 1.0)?;
    Ok((0..h.users())
        .map(|k| {
            let x = factor.solve_vec(h.h(k));
            let norm = norm_sqr(&x).sqrt();
            x.into_iter().map(|z| z / norm).collect()
        })
        .collect())
}

/// Beamformer of the optimal-structure family for given `(lambda, p)`.
pub fn structure_beamformer(
    h: &ChannelRealization,
    sp: &StructureParams,
    cfg: &SystemConfig,
) -> Result<CMat> {
    let k = h.users();
    if sp.lambda.len() != k || sp.p.len() != k {
        return Err(Error::Argument("lambda and p need K entries".into()));
    }
    if sp.lambda.iter().chain(&sp.p).any(|x| *x < 0.0) {
        return Err(Error::Argument("lambda and p must be nonnegative".into()));
    }
    let dirs = structure_directions(h, &sp.lambda, cfg)?;
    let cols: Vec<CVec> = dirs
        .into_iter()
        .zip(&sp.p)
        .map(|(d, &p)| d.into_iter().map(|z| z * p.sqrt()).collect())
        .collect();
    CMat::from_columns(h.antennas(), &cols)
}

/// All compositions of `total` into `parts` nonnegative integers, lexicographic.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Exhaustive search over `(lambda, p)` on a simplex grid with `grid_steps`
/// points per dimension. Ties keep the first maximum in iteration order.
pub fn grid_oracle(
    h: &ChannelRealization,
    cfg: &SystemConfig,
    grid_steps: usize,
) -> Result<(CMat, f64)> {
    let k = h.users();
    if k > 3 {
        return Err(Error::Capability(format!(
            "grid oracle supports K <= 3, got K = {k}"
        )));
    }
    if grid_steps < 5 {
        return Err(Error::Argument("grid_steps must be >= 5".into()));
    }
    let denom = (grid_steps - 1) as f64;
    let grid: Vec<Vec<f64>> = compositions(grid_steps - 1, k)
        .into_iter()
        .map(|c| c.into_iter().map(|i| cfg.power * i as f64 / denom).collect())
        .collect();

    let mut best: Option<(f64, StructureParams)> = None;
    for lambda in &grid {
        let dirs = structure_directions(h, lambda, cfg)?;
        // |h_i^H d_j|^2 for unit directions
        let g: Vec<Vec<f64>> = (0..k)
            .map(|i| dirs.iter().map(|d| dot_h(h.h(i), d).norm_sqr()).collect())
            .collect();
        for p in &grid {
            let rate: f64 = (0..k)
                .map(|i| {
                    let interference: f64 = (0..k).filter(|&j| j != i).map(|j| g[i][j] * p[j]).sum();
                    cfg.alpha[i] * (1.0 + g[i][i] * p[i] / (cfg.sigma2 + interference)).log2()
                })
                .sum();
            if best.as_ref().is_none_or(|(b, _)| rate > *b) {
                best = Some((
                    rate,
                    StructureParams {
                        lambda: lambda.clone(),
                        p: p.clone(),
                    },
                ));
            }
        }
    }
    let (_, sp) = best.expect("grid is nonempty");
    let v = structure_beamformer(h, &sp, cfg)?;
    let rate = wsr(h, &v, cfg);
    Ok((v, rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{sample_realization, ChannelModel};
    use crate::objective::sinrs;
    use crate::rng::seeded;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn random_instance(seed: u64, n: usize, k: usize) -> (ChannelRealization, CMat) {
        let mut rng = seeded(seed);
        let h = sample_realization(&mut rng, &ChannelModel::Rayleigh, n, k);
        let cols: Vec<_> = (0..k).map(|_| sample_rayleigh(&mut rng, n)).collect();
        (h, CMat::from_columns(n, &cols).unwrap())
    }

    fn scalar_cfg(power: f64) -> SystemConfig {
        SystemConfig::new(1, 1, 0.0).with_power(power)
    }

    #[test]
    fn w_examples() {
        let cfg = SystemConfig::new(2, 2, 0.0);
        let h = ChannelRealization::new(vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]]).unwrap();
        let v = CMat::identity(2);
        assert_eq!(compute_w(&h, &v, &cfg), vec![2.0, 2.0]);
        assert_eq!(compute_w(&h, &CMat::zeros(2, 2), &cfg), vec![1.0, 1.0]);
    }

    #[test]
    fn w_is_one_plus_sinr() {
        for seed in 0..200 {
            let (h, v) = random_instance(seed, 3, 3);
            let cfg = SystemConfig::new(3, 3, 10.0);
            for (w, s) in compute_w(&h, &v, &cfg).iter().zip(sinrs(&h, &v, &cfg)) {
                assert!(*w >= 1.0);
                assert!((w - (1.0 + s)).abs() <= 1e-12 * w);
            }
        }
    }

    #[test]
    fn u_examples_and_bound() {
        let cfg = SystemConfig::new(2, 2, 0.0);
        let h = ChannelRealization::new(vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]]).unwrap();
        assert_eq!(compute_u(&h, &CMat::identity(2), &cfg), vec![c(0.5), c(0.5)]);
        assert_eq!(compute_u(&h, &CMat::zeros(2, 2), &cfg), vec![c(0.0), c(0.0)]);

        for seed in 0..100 {
            let (h, v) = random_instance(seed, 3, 3);
            let cfg = SystemConfig::new(3, 3, 10.0).with_sigma2(0.5);
            for (k, u) in compute_u(&h, &v, &cfg).iter().enumerate() {
                let bound = norm_sqr(&v.column(k)).sqrt() * norm_sqr(h.h(k)).sqrt() / cfg.sigma2;
                assert!(u.norm() <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn reconstruct_examples() {
        let cfg = scalar_cfg(1.0);
        let h = ChannelRealization::new(vec![vec![c(1.0)]]).unwrap();
        let comps = ComponentTriple {
            u: vec![c(0.5)],
            w: vec![2.0],
            mu: 0.5,
        };
        let v = reconstruct_v(&h, &comps, &cfg).unwrap();
        assert!((v[(0, 0)] - c(1.0)).norm() < 1e-15);

        let cfg2 = SystemConfig::new(2, 1, 0.0);
        let h2 = ChannelRealization::new(vec![vec![c(1.0), c(0.0)]]).unwrap();
        let v2 = reconstruct_v(&h2, &comps, &cfg2).unwrap();
        assert!((v2[(0, 0)] - c(1.0)).norm() < 1e-15);
        assert_eq!(v2[(1, 0)], c(0.0));

        let singular = ComponentTriple { mu: 0.0, ..comps };
        assert!(matches!(
            reconstruct_v(&h2, &singular, &cfg2),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn reconstruct_keeps_phase_of_u() {
        // h = 1, v = i is a fixed point: u = i/2, and u must enter unconjugated.
        let cfg = scalar_cfg(1.0);
        let h = ChannelRealization::new(vec![vec![c(1.0)]]).unwrap();
        let v = CMat::from_columns(1, &[vec![C64::new(0.0, 1.0)]]).unwrap();
        let (next, comps) = wmmse_step(&h, &v, &cfg).unwrap();
        assert!((comps.u[0] - C64::new(0.0, 0.5)).norm() < 1e-15);
        assert!((next[(0, 0)] - C64::new(0.0, 1.0)).norm() < 1e-9);
    }

    #[test]
    fn solve_mu_examples() {
        let h = ChannelRealization::new(vec![vec![c(1.0)]]).unwrap();
        let mu = solve_mu(&h, &[c(0.5)], &[2.0], &scalar_cfg(1.0)).unwrap();
        assert!((mu - 0.5).abs() < 1e-8, "{mu}");

        assert_eq!(solve_mu(&h, &[c(0.5)], &[2.0], &scalar_cfg(1e12)).unwrap(), 0.0);

        assert!(matches!(
            solve_mu(&h, &[c(0.0)], &[2.0], &scalar_cfg(1.0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn solve_mu_hits_budget() {
        for seed in 0..50 {
            let (h, v) = random_instance(seed, 3, 3);
            let cfg = SystemConfig::new(3, 3, 10.0);
            let v = normalize_to_power(&v, cfg.power).unwrap();
            let u = compute_u(&h, &v, &cfg);
            let w = compute_w(&h, &v, &cfg);
            let mu = solve_mu(&h, &u, &w, &cfg).unwrap();
            let p = total_power(&reconstruct_v(&h, &ComponentTriple { u, w, mu }, &cfg).unwrap());
            if mu > 0.0 {
                assert!((p - cfg.power).abs() <= 1e-8 * cfg.power, "seed {seed}: {p}");
            } else {
                assert!(p <= cfg.power);
            }
        }
    }

    #[test]
    fn single_user_converges_to_mrt() {
        for seed in 0..20 {
            let mut rng = seeded(seed);
            let cfg = SystemConfig::new(3, 1, 10.0);
            let h = sample_realization(&mut rng, &ChannelModel::Rayleigh, 3, 1);
            let out = wmmse_solve(&h, &cfg, 200, 1e-9, &mut rng).unwrap();
            let mrt = normalize_to_power(&CMat::from_columns(3, &[h.h(0).to_vec()]).unwrap(), cfg.power)
                .unwrap();
            // remove the global phase
            let phase = dot_h(&mrt.column(0), &out.v.column(0));
            let phase = phase / phase.norm();
            let err: f64 = mrt
                .as_slice()
                .iter()
                .zip(out.v.as_slice())
                .map(|(a, b)| (a * phase - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn wsr_trace_is_monotone() {
        for seed in 0..100 {
            let mut rng = seeded(1000 + seed);
            let cfg = SystemConfig::new(3, 3, 10.0);
            let h = sample_realization(&mut rng, &ChannelModel::Rayleigh, 3, 3);
            let out = wmmse_solve(&h, &cfg, 200, 1e-6, &mut rng).unwrap();
            for pair in out.wsr_trace[1..].windows(2) {
                assert!(pair[1] >= pair[0] - 1e-8, "seed {seed}: {pair:?}");
            }
            assert!(total_power(&out.v) <= cfg.power * (1.0 + 1e-9));
        }
    }

    #[test]
    fn converged_point_is_a_fixed_point() {
        for seed in 0..20 {
            let mut rng = seeded(500 + seed);
            let cfg = SystemConfig::new(3, 3, 10.0);
            let h = sample_realization(&mut rng, &ChannelModel::Rayleigh, 3, 3);
            let out = wmmse_solve(&h, &cfg, 2000, 1e-10, &mut rng).unwrap();
            let (again, _) = wmmse_step(&h, &out.v, &cfg).unwrap();
            let err: f64 = again
                .as_slice()
                .iter()
                .zip(out.v.as_slice())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn structure_examples() {
        let mut rng = seeded(4);
        let cfg = SystemConfig::new(3, 1, 10.0);
        let h = sample_realization(&mut rng, &ChannelModel::Rayleigh, 3, 1);
        let v = structure_beamformer(
            &h,
            &StructureParams {
                lambda: vec![cfg.power],
                p: vec![cfg.power],
            },
            &cfg,
        )
        .unwrap();
        let n = norm_sqr(h.h(0)).sqrt();
        for i in 0..3 {
            assert!((v[(i, 0)] - h.h(0)[i] * (cfg.power.sqrt() / n)).norm() < 1e-12);
        }

        let cfg3 = SystemConfig::new(3, 3, 10.0);
        let h3 = sample_realization(&mut rng, &ChannelModel::Rayleigh, 3, 3);
        let sp = StructureParams {
            lambda: vec![0.0; 3],
            p: vec![2.0, 3.0, cfg3.power - 5.0],
        };
        let v3 = structure_beamformer(&h3, &sp, &cfg3).unwrap();
        for k in 0..3 {
            let nk = norm_sqr(h3.h(k)).sqrt();
            for i in 0..3 {
                assert!((v3[(i, k)] - h3.h(k)[i] * (sp.p[k].sqrt() / nk)).norm() < 1e-12);
            }
        }
        assert!((total_power(&v3) - cfg3.power).abs() <= 1e-12 * cfg3.power);
    }

    #[test]
    fn grid_oracle_single_user_is_mrt() {
        let mut rng = seeded(6);
        let cfg = SystemConfig::new(2, 1, 10.0);
        let h = sample_realization(&mut rng, &ChannelModel::Rayleigh, 2, 1);
        let (_, rate) = grid_oracle(&h, &cfg, 5).unwrap();
        let closed = (1.0 + cfg.power * norm_sqr(h.h(0)) / cfg.sigma2).log2();
        assert!((rate - closed).abs() <= 1e-12 * closed);
    }

    #[test]
    fn grid_oracle_refines_and_rejects() {
        let mut rng = seeded(7);
        let cfg = SystemConfig::new(2, 2, 10.0);
        let h = sample_realization(&mut rng, &ChannelModel::Rayleigh, 2, 2);
        let coarse = grid_oracle(&h, &cfg, 5).unwrap().1;
        let fine = grid_oracle(&h, &cfg, 21).unwrap().1;
        assert!(fine >= coarse);
        assert!(grid_oracle(&h, &cfg, 4).is_err());

        let cfg4 = SystemConfig::new(4, 4, 10.0);
        let h4 = sample_realization(&mut rng, &ChannelModel::Rayleigh, 4, 4);
        assert!(matches!(grid_oracle(&h4, &cfg4, 5), Err(Error::Capability(_))));
    }

    #[test]
    fn multistart_matches_grid_oracle() {
        let cfg = SystemConfig::new(2, 2, 10.0);
        let mut rng = seeded(40);
        for _ in 0..30 {
            let h = sample_realization(&mut rng, &ChannelModel::Rayleigh, 2, 2);
            let (_, best) = grid_oracle(&h, &cfg, 41).unwrap();
            let out = wmmse_multistart(&h, &cfg, 200, 1e-6, 2, &mut rng).unwrap();
            assert!(wsr(&h, &out.v, &cfg) >= 0.99 * best);
            assert!(total_power(&out.v) <= cfg.power * (1.0 + 1e-9));
        }
    }

    #[test]
    fn multistart_never_loses_to_its_random_start() {
        let cfg = SystemConfig::new(3, 3, 15.0);
        for seed in 0..20 {
            let h = sample_realization(&mut seeded(seed), &ChannelModel::Rayleigh, 3, 3);
            // the multistart consumes the same random start as the single run
            let v0 = random_start(&mut seeded(900 + seed), &cfg).unwrap();
            let single = wmmse_from(&h, &cfg, v0, 200, 1e-6).unwrap();
            let multi = wmmse_multistart(&h, &cfg, 200, 1e-6, 1, &mut seeded(900 + seed)).unwrap();
            assert!(wsr(&h, &multi.v, &cfg) >= wsr(&h, &single.v, &cfg));
        }
    }

    #[test]
    fn compositions_cover_simplex() {
        let c = compositions(4, 3);
        assert_eq!(c.len(), 15);
        assert!(c.iter().all(|x| x.iter().sum::<usize>() == 4));
    }
}
