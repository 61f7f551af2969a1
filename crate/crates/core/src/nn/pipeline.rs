//! The differentiable path channel -> (u, w, mu) -> beamformer -> loss.
//!
//! Complex quantities travel through the tape as interleaved `(re, im)`
//! pairs. A batch of beamformers is a `B x 2NK` tensor whose row holds
//! `V[n, k]` at columns `2 (k N + n)` and `2 (k N + n) + 1` (user-major, then
//! antenna), matching the dataset layout.
//!
//! Gradients of complex stages use the convention `g = dL/dRe + i dL/dIm`.
//! The Hermitian solve in the reconstruction is differentiated by solving
//! against the same Cholesky factor a second time, never by forming an
//! inverse.

use rand::SeedableRng;

use super::mlp::{mlp_forward, BoundPredictor, PredictorParams};
use super::tape::{CustomOp, Tape, Tensor, Var};
use crate::channels::{sample_rayleigh, ChannelRealization};
use crate::error::{Error, Result};
use crate::linalg::{dot_h, hermitian_rank1_sum, normalize_to_power, CMat, CVec, HpdFactor, C64};
use crate::objective::{loss_from_gains, BeamPredictor, LossVariant, SystemConfig};
use crate::rng::{derive_seed, SimRng};

/// `mu_floor = MU_FLOOR_REL * sigma2`.
pub const MU_FLOOR_REL: f64 = 1e-4;

/// The beamformer estimate fed to the networks alongside the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VInit {
    /// Per-user matched filter `sqrt(P/K) h_k / |h_k|`.
    #[default]
    Mrt,
    /// Complex Gaussian matrix normalized to `P`, seeded per realization.
    Random { seed: u64 },
}

impl VInit {
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        match s.trim() {
            "mrt" => Ok(VInit::Mrt),
            "random" => Ok(VInit::Random { seed }),
            other => Err(Error::Argument(format!("unknown v_init `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            VInit::Mrt => "mrt",
            VInit::Random { .. } => "random",
        }
    }
}

fn realization_seed(h: &ChannelRealization, seed: u64) -> u64 {
    h.all()
        .iter()
        .flatten()
        .fold(seed, |acc, z| derive_seed(acc ^ z.re.to_bits(), z.im.to_bits()))
}

/// The starting beamformer for one realization.
pub fn initial_beamformer(h: &ChannelRealization, cfg: &SystemConfig, v_init: VInit) -> Result<CMat> {
    let n = h.antennas();
    let cols: Vec<CVec> = match v_init {
        VInit::Mrt => h.all().to_vec(),
        VInit::Random { seed } => {
            let mut rng = SimRng::seed_from_u64(realization_seed(h, seed));
            (0..h.users()).map(|_| sample_rayleigh(&mut rng, n)).collect()
        }
    };
    let cols: Vec<CVec> = match v_init {
        VInit::Mrt => cols
            .into_iter()
            .map(|c| {
                let norm = crate::linalg::norm_sqr(&c).sqrt().max(f64::MIN_POSITIVE);
                c.into_iter().map(|z| z / norm).collect()
            })
            .collect(),
        VInit::Random { .. } => cols,
    };
    normalize_to_power(&CMat::from_columns(n, &cols)?, cfg.power)
}

fn push_interleaved(out: &mut Vec<f64>, zs: impl Iterator<Item = C64>) {
    for z in zs {
        out.push(z.re);
        out.push(z.im);
    }
}

/// Network input: re/im of every channel entry, then of the starting beamformer.
pub fn features(batch: &[ChannelRealization], cfg: &SystemConfig, v_init: VInit) -> Result<Tensor> {
    let (n, k) = (cfg.antennas, cfg.users);
    let width = 4 * n * k;
    let mut data = Vec::with_capacity(batch.len() * width);
    for h in batch {
        if h.antennas() != n || h.users() != k {
            return Err(Error::Argument(format!(
                "realization is {}x{}, config expects K={k}, N={n}",
                h.users(),
                h.antennas()
            )));
        }
        push_interleaved(&mut data, h.all().iter().flatten().copied());
        let v = initial_beamformer(h, cfg, v_init)?;
        push_interleaved(&mut data, (0..k).flat_map(|j| v.column(j)));
    }
    Ok(Tensor::new(batch.len(), width, data))
}

/// Tape handles of the predicted components: `u` is `B x 2K` interleaved,
/// `w` is `B x K`, `mu` is `B x 1`.
#[derive(Debug, Clone, Copy)]
pub struct ComponentVars {
    pub u: Var,
    pub w: Var,
    pub mu: Var,
}

/// Runs the three networks and applies the output transforms
/// `w = 1 + softplus(.)` and `mu = softplus(.) + mu_floor`.
pub fn predict_components(
    bound: &BoundPredictor,
    x: Var,
    cfg: &SystemConfig,
    tape: &mut Tape,
) -> Result<ComponentVars> {
    let u = mlp_forward(&bound.u, x, tape)?;
    let w_raw = mlp_forward(&bound.w, x, tape)?;
    let mu_raw = mlp_forward(&bound.mu, x, tape)?;
    let w = tape.softplus(w_raw, 1.0);
    let mu = tape.softplus(mu_raw, MU_FLOOR_REL * cfg.sigma2);
    Ok(ComponentVars { u, w, mu })
}

fn row_to_cvec(row: &[f64]) -> CVec {
    row.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect()
}

/// Row of a `B x 2NK` beamformer tensor as an `N x K` matrix.
pub fn row_to_beamformer(row: &[f64], antennas: usize, users: usize) -> CMat {
    let flat = row_to_cvec(row);
    let mut v = CMat::zeros(antennas, users);
    for k in 0..users {
        v.set_column(k, &flat[k * antennas..(k + 1) * antennas]);
    }
    v
}

struct ReconstructOp {
    channels: Vec<ChannelRealization>,
    alpha: Vec<f64>,
    factors: Vec<HpdFactor>,
    // x_k = (S + mu I)^{-1} h_k per sample and user
    solved: Vec<Vec<CVec>>,
}

/// `v_k = alpha_k u_k w_k (S + mu I)^{-1} h_k` for every sample of the batch.
pub fn reconstruct_node(
    tape: &mut Tape,
    comps: ComponentVars,
    batch: &[ChannelRealization],
    cfg: &SystemConfig,
) -> Result<Var> {
    let (n, k) = (cfg.antennas, cfg.users);
    let (uv, wv, muv) = (tape.value(comps.u), tape.value(comps.w), tape.value(comps.mu));
    let mut out = Tensor::zeros(batch.len(), 2 * n * k);
    let mut factors = Vec::with_capacity(batch.len());
    let mut solved = Vec::with_capacity(batch.len());
    for (b, h) in batch.iter().enumerate() {
        let u = row_to_cvec(uv.row(b));
        let w = wv.row(b);
        let mu = muv.row(b)[0];
        let coeffs: Vec<f64> = (0..k).map(|j| cfg.alpha[j] * u[j].norm_sqr() * w[j]).collect();
        let s = hermitian_rank1_sum(&coeffs, h.all(), n)?;
        let factor = HpdFactor::new(&s, mu)?;
        let xs: Vec<CVec> = (0..k).map(|j| factor.solve_vec(h.h(j))).collect();
        let row = out.row_mut(b);
        for j in 0..k {
            let beta = u[j] * (cfg.alpha[j] * w[j]);
            for i in 0..n {
                let z = beta * xs[j][i];
                row[2 * (j * n + i)] = z.re;
                row[2 * (j * n + i) + 1] = z.im;
            }
        }
        factors.push(factor);
        solved.push(xs);
    }
    let op = ReconstructOp {
        channels: batch.to_vec(),
        alpha: cfg.alpha.clone(),
        factors,
        solved,
    };
    Ok(tape.custom(vec![comps.u, comps.w, comps.mu], out, Box::new(op)))
}

impl CustomOp for ReconstructOp {
    fn name(&self) -> &'static str {
        "reconstruct"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (uv, wv) = (inputs[0], inputs[1]);
        let k = self.alpha.len();
        let mut gu = Tensor::zeros(uv.rows, uv.cols);
        let mut gw = Tensor::zeros(wv.rows, wv.cols);
        let mut gmu = Tensor::zeros(inputs[2].rows, 1);
        for (b, h) in self.channels.iter().enumerate() {
            let n = h.antennas();
            let u = row_to_cvec(uv.row(b));
            let w = wv.row(b);
            let gv = row_to_cvec(grad.row(b));
            let xs = &self.solved[b];
            let mut g_u = vec![C64::new(0.0, 0.0); k];
            let mut g_w = vec![0.0; k];
            let mut g_c = vec![0.0; k];
            let mut g_mu = 0.0;
            for j in 0..k {
                let gvj = &gv[j * n..(j + 1) * n];
                let a = self.alpha[j] * w[j];
                let beta = u[j] * a;
                // v_j = beta_j x_j
                let g_beta = dot_h(&xs[j], gvj);
                g_u[j] += g_beta * a;
                g_w[j] += self.alpha[j] * (g_beta.conj() * u[j]).re;
                let g_x: CVec = gvj.iter().map(|g| beta.conj() * g).collect();
                // x_j = A^{-1} h_j  =>  dL = -Re(y^H dA x_j), y = A^{-1} g_x
                let y = self.factors[b].solve_vec(&g_x);
                g_mu -= dot_h(&y, &xs[j]).re;
                for (l, g_cl) in g_c.iter_mut().enumerate() {
                    let hl = h.h(l);
                    *g_cl -= (dot_h(&y, hl) * dot_h(hl, &xs[j])).re;
                }
            }
            // c_l = alpha_l |u_l|^2 w_l
            for l in 0..k {
                g_w[l] += g_c[l] * self.alpha[l] * u[l].norm_sqr();
                g_u[l] += u[l] * (2.0 * g_c[l] * self.alpha[l] * w[l]);
            }
            let row = gu.row_mut(b);
            for l in 0..k {
                row[2 * l] = g_u[l].re;
                row[2 * l + 1] = g_u[l].im;
            }
            gw.row_mut(b).copy_from_slice(&g_w);
            gmu.data[b] = g_mu;
        }
        vec![gu, gw, gmu]
    }
}

struct NormalizeOp {
    power: f64,
}

/// Scales every row so the beamformer's total power equals `power`.
pub fn normalize_node(tape: &mut Tape, v: Var, power: f64) -> Result<Var> {
    let x = tape.value(v);
    let mut out = x.clone();
    for b in 0..x.rows {
        let norm = x.row(b).iter().map(|p| p * p).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Degenerate(format!(
                "reconstructed beamformer {b} has norm {norm}"
            )));
        }
        let c = power.sqrt() / norm;
        out.row_mut(b).iter_mut().for_each(|p| *p *= c);
    }
    Ok(tape.custom(vec![v], out, Box::new(NormalizeOp { power })))
}

impl CustomOp for NormalizeOp {
    fn name(&self) -> &'static str {
        "normalize"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let x = inputs[0];
        let mut gx = Tensor::zeros(x.rows, x.cols);
        for b in 0..x.rows {
            let v = x.row(b);
            let g = grad.row(b);
            let nsq: f64 = v.iter().map(|p| p * p).sum();
            let c = self.power.sqrt() / nsq.sqrt();
            let proj: f64 = g.iter().zip(v).map(|(p, q)| p * q).sum::<f64>() / nsq;
            for ((o, gi), vi) in gx.row_mut(b).iter_mut().zip(g).zip(v) {
                *o = c * (gi - vi * proj);
            }
        }
        vec![gx]
    }
}

struct SumRateLossOp {
    channels: Vec<ChannelRealization>,
    sigma2: f64,
    variant: LossVariant,
}

fn cross_gains(h: &ChannelRealization, v: &[C64]) -> Vec<Vec<C64>> {
    let (n, k) = (h.antennas(), h.users());
    (0..k)
        .map(|i| (0..k).map(|j| dot_h(h.h(i), &v[j * n..(j + 1) * n])).collect())
        .collect()
}

/// Per-sample sum-rate loss, `B x 1`.
pub fn sum_rate_loss_node(
    tape: &mut Tape,
    v: Var,
    batch: &[ChannelRealization],
    cfg: &SystemConfig,
) -> Var {
    let x = tape.value(v);
    let data = batch
        .iter()
        .enumerate()
        .map(|(b, h)| {
            let z = cross_gains(h, &row_to_cvec(x.row(b)));
            let gains: Vec<Vec<f64>> = z
                .iter()
                .map(|r| r.iter().map(|c| c.norm_sqr()).collect())
                .collect();
            loss_from_gains(&gains, cfg.sigma2, cfg.loss_variant)
        })
        .collect();
    let op = SumRateLossOp {
        channels: batch.to_vec(),
        sigma2: cfg.sigma2,
        variant: cfg.loss_variant,
    };
    tape.custom(vec![v], Tensor::new(batch.len(), 1, data), Box::new(op))
}

impl CustomOp for SumRateLossOp {
    fn name(&self) -> &'static str {
        "sum_rate_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let x = inputs[0];
        let mut gx = Tensor::zeros(x.rows, x.cols);
        for (b, h) in self.channels.iter().enumerate() {
            let (n, k) = (h.antennas(), h.users());
            let z = cross_gains(h, &row_to_cvec(x.row(b)));
            let g2: Vec<Vec<f64>> = z
                .iter()
                .map(|r| r.iter().map(|c| c.norm_sqr()).collect())
                .collect();
            let scale = grad.data[b] / k as f64;
            // d/d|z_ij|^2 of the loss, z_ij = h_i^H v_j
            let mut dg = vec![vec![0.0; k]; k];
            match self.variant {
                LossVariant::Consistent => {
                    for i in 0..k {
                        let total: f64 = self.sigma2 + g2[i].iter().sum::<f64>();
                        let interference = total - g2[i][i];
                        for j in 0..k {
                            let mut d = 1.0 / total;
                            if j != i {
                                d -= 1.0 / interference;
                            }
                            dg[i][j] = -scale * d;
                        }
                    }
                }
                LossVariant::Verbatim => {
                    let diag_sum: f64 = (0..k).map(|i| g2[i][i]).sum();
                    let interference: Vec<f64> =
                        (0..k).map(|i| self.sigma2 + diag_sum - g2[i][i]).collect();
                    let term: Vec<f64> = (0..k)
                        .map(|i| 1.0 / (interference[i] + g2[i][i]) - 1.0 / interference[i])
                        .collect();
                    let term_sum: f64 = term.iter().sum();
                    for j in 0..k {
                        let own = 1.0 / (interference[j] + g2[j][j]);
                        dg[j][j] = -scale * (own + term_sum - term[j]);
                    }
                }
            }
            let row = gx.row_mut(b);
            for i in 0..k {
                let hi = h.h(i);
                for j in 0..k {
                    if dg[i][j] == 0.0 {
                        continue;
                    }
                    let gz = z[i][j] * (2.0 * dg[i][j]);
                    for a in 0..n {
                        let g = hi[a] * gz;
                        row[2 * (j * n + a)] += g.re;
                        row[2 * (j * n + a) + 1] += g.im;
                    }
                }
            }
        }
        vec![gx]
    }
}

/// Options of the learned predictor that are not part of the physical system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PipelineOptions {
    pub v_init: VInit,
}

/// Handles of one recorded channel-to-loss evaluation.
#[derive(Debug, Clone)]
pub struct LossGraph {
    pub params: BoundPredictor,
    pub components: ComponentVars,
    /// Normalized beamformers, `B x 2NK`.
    pub beamformers: Var,
    /// Per-sample losses, `B x 1`.
    pub losses: Var,
}

/// Records predict -> reconstruct -> normalize -> loss for a batch.
pub fn reconstruct_and_loss(
    params: &PredictorParams,
    batch: &[ChannelRealization],
    cfg: &SystemConfig,
    opts: &PipelineOptions,
    tape: &mut Tape,
) -> Result<LossGraph> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let bound = params.bind(tape);
    let x = tape.leaf(features(batch, cfg, opts.v_init)?);
    let components = predict_components(&bound, x, cfg, tape)?;
    let v = reconstruct_node(tape, components, batch, cfg)?;
    let beamformers = normalize_node(tape, v, cfg.power)?;
    let losses = sum_rate_loss_node(tape, beamformers, batch, cfg);
    Ok(LossGraph {
        params: bound,
        components,
        beamformers,
        losses,
    })
}

/// How per-sample losses are combined into the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

impl Reduction {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::Argument(format!("unknown reduction `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        }
    }
}

/// Flattened gradient aligned with [`PredictorParams::to_flat`].
pub fn grad(tape: &Tape, root: Var, bound: &BoundPredictor) -> Vec<f64> {
    let grads = tape.backward(root);
    let mut out = Vec::new();
    for leaf in bound.leaves() {
        match grads.wrt(leaf) {
            Some(g) => out.extend_from_slice(&g.data),
            None => out.extend(std::iter::repeat_n(0.0, tape.value(leaf).data.len())),
        }
    }
    out
}

/// Objective value and its gradient with respect to every parameter.
pub fn loss_and_grad(
    params: &PredictorParams,
    batch: &[ChannelRealization],
    cfg: &SystemConfig,
    opts: &PipelineOptions,
    reduction: Reduction,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let graph = reconstruct_and_loss(params, batch, cfg, opts, &mut tape)?;
    let root = match reduction {
        Reduction::Sum => tape.sum(graph.losses),
        Reduction::Mean => tape.mean(graph.losses),
    };
    let value = tape.value(root).item();
    Ok((value, grad(&tape, root, &graph.params)))
}

/// Forward-only evaluation: normalized beamformers and per-sample losses.
pub fn evaluate(
    params: &PredictorParams,
    batch: &[ChannelRealization],
    cfg: &SystemConfig,
    opts: &PipelineOptions,
) -> Result<(Vec<CMat>, Vec<f64>)> {
    let mut tape = Tape::new();
    let graph = reconstruct_and_loss(params, batch, cfg, opts, &mut tape)?;
    let v = tape.value(graph.beamformers);
    let beams = (0..batch.len())
        .map(|b| row_to_beamformer(v.row(b), cfg.antennas, cfg.users))
        .collect();
    Ok((beams, tape.value(graph.losses).data.clone()))
}

/// Predicted components for one realization, outside any training graph.
pub fn components_of(
    params: &PredictorParams,
    h: &ChannelRealization,
    cfg: &SystemConfig,
    opts: &PipelineOptions,
) -> Result<crate::wmmse::ComponentTriple> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.leaf(features(std::slice::from_ref(h), cfg, opts.v_init)?);
    let c = predict_components(&bound, x, cfg, &mut tape)?;
    Ok(crate::wmmse::ComponentTriple {
        u: row_to_cvec(tape.value(c.u).row(0)),
        w: tape.value(c.w).row(0).to_vec(),
        mu: tape.value(c.mu).item(),
    })
}

/// A trained parameter set used as a [`BeamPredictor`].
pub struct NeuralPredictor<'a> {
    pub params: &'a PredictorParams,
    pub opts: PipelineOptions,
}

impl BeamPredictor for NeuralPredictor<'_> {
    fn beamformer(&self, h: &ChannelRealization, cfg: &SystemConfig) -> Result<CMat> {
        let (mut beams, _) = evaluate(self.params, std::slice::from_ref(h), cfg, &self.opts)?;
        Ok(beams.remove(0))
    }
}
