//! SINR, weighted sum rate and the sum-rate training loss.

use crate::channels::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{dot_h, CMat};

/// Which interference term the training loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossVariant {
    /// Interference received at user `i`: `sum_{j != i} |h_i^H v_j|^2`.
    #[default]
    Consistent,
    /// Literal printed form: `sum_{j != i} |h_j^H v_j|^2`.
    Verbatim,
}

impl LossVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "consistent" => Ok(LossVariant::Consistent),
            "verbatim" => Ok(LossVariant::Verbatim),
            other => Err(Error::Argument(format!("unknown loss variant `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LossVariant::Consistent => "consistent",
            LossVariant::Verbatim => "verbatim",
        }
    }
}

/// Physical system parameters shared by every module.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub antennas: usize,
    pub users: usize,
    pub sigma2: f64,
    pub power: f64,
    pub alpha: Vec<f64>,
    pub loss_variant: LossVariant,
}

impl SystemConfig {
    /// Unit weights, unit noise, `P = 10^(snr_db/10)`.
    pub fn new(antennas: usize, users: usize, snr_db: f64) -> Self {
        SystemConfig {
            antennas,
            users,
            sigma2: 1.0,
            power: 10f64.powf(snr_db / 10.0),
            alpha: vec![1.0; users],
            loss_variant: LossVariant::Consistent,
        }
    }

    pub fn with_power(mut self, power: f64) -> Self {
        self.power = power;
        self
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Self {
        self.sigma2 = sigma2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.users == 0 {
            return Err(Error::Argument("N and K must be >= 1".into()));
        }
        if !(self.sigma2 > 0.0) || !(self.power > 0.0) {
            return Err(Error::Argument("sigma2 and P must be positive".into()));
        }
        if self.alpha.len() != self.users || self.alpha.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Argument(format!(
                "alpha must hold {} positive weights",
                self.users
            )));
        }
        Ok(())
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power / self.sigma2).log10()
    }
}

/// `|h_k^H v_j|^2` for all `(k, j)`, row `k` = receiving user.
pub fn gain_matrix(h: &ChannelRealization, v: &CMat) -> Vec<Vec<f64>> {
    let cols = v.columns();
    (0..h.users())
        .map(|k| cols.iter().map(|vj| dot_h(h.h(k), vj).norm_sqr()).collect())
        .collect()
}

pub fn sinr(h: &ChannelRealization, v: &CMat, cfg: &SystemConfig, k: usize) -> f64 {
    assert!(k < h.users(), "user index {k} out of range");
    let gains = gain_matrix(h, v);
    sinr_from_gains(&gains, cfg.sigma2, k)
}

fn sinr_from_gains(gains: &[Vec<f64>], sigma2: f64, k: usize) -> f64 {
    let signal = gains[k][k];
    let interference: f64 = gains[k]
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, g)| g)
        .sum();
    signal / (sigma2 + interference)
}

pub fn sinrs(h: &ChannelRealization, v: &CMat, cfg: &SystemConfig) -> Vec<f64> {
    let gains = gain_matrix(h, v);
    (0..h.users())
        .map(|k| sinr_from_gains(&gains, cfg.sigma2, k))
        .collect()
}

/// `sum_k alpha_k log2(1 + SINR_k)` in bits/s/Hz.
pub fn wsr(h: &ChannelRealization, v: &CMat, cfg: &SystemConfig) -> f64 {
    sinrs(h, v, cfg)
        .iter()
        .zip(&cfg.alpha)
        .map(|(s, a)| a * (1.0 + s).log2())
        .sum()
}

/// `-(1/K) sum_i ln(1 + SINR_i)`, with the interference term chosen by
/// `cfg.loss_variant`.
pub fn sum_rate_loss(h: &ChannelRealization, v: &CMat, cfg: &SystemConfig) -> f64 {
    let gains = gain_matrix(h, v);
    loss_from_gains(&gains, cfg.sigma2, cfg.loss_variant)
}

pub(crate) fn loss_from_gains(gains: &[Vec<f64>], sigma2: f64, variant: LossVariant) -> f64 {
    let k = gains.len();
    let mut total = 0.0;
    for i in 0..k {
        let interference: f64 = match variant {
            LossVariant::Consistent => (0..k).filter(|&j| j != i).map(|j| gains[i][j]).sum(),
            LossVariant::Verbatim => (0..k).filter(|&j| j != i).map(|j| gains[j][j]).sum(),
        };
        total += (1.0 + gains[i][i] / (sigma2 + interference)).ln();
    }
    -total / k as f64
}

/// Anything that maps a channel realization to a beamformer.
pub trait BeamPredictor {
    fn beamformer(&self, h: &ChannelRealization, cfg: &SystemConfig) -> Result<CMat>;
}

/// Mean of [`sum_rate_loss`] over a batch, using the predictor's beamformers.
pub fn batch_loss<P: BeamPredictor + ?Sized>(
    batch: &[ChannelRealization],
    predictor: &P,
    cfg: &SystemConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Argument("batch_loss on an empty batch".into()));
    }
    let mut total = 0.0;
    for h in batch {
        let v = predictor.beamformer(h, cfg)?;
        total += sum_rate_loss(h, &v, cfg);
    }
    Ok(total / batch.len() as f64)
}
