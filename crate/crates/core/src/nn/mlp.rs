//! Multilayer perceptrons and the three-network component predictor.

use rand::Rng;

use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
/// Initial bias of the u-network output layer; keeps the first
/// reconstruction away from the all-zero beamformer.
pub const U_OUTPUT_BIAS: f64 = 0.1;

/// Fully connected network: ReLU between layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// `(weight out x in, bias 1 x out)` per layer.
    layers: Vec<(Tensor, Tensor)>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Argument(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                (Tensor::new(fan_out, fan_in, w), Tensor::zeros(1, fan_out))
            })
            .collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Argument(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|p| (Tensor::zeros(p[1], p[0]), Tensor::zeros(1, p[1])))
            .collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.data.len() + b.data.len()).sum()
    }

    pub fn layer_mut(&mut self, i: usize) -> (&mut Tensor, &mut Tensor) {
        let (w, b) = &mut self.layers[i];
        (w, b)
    }

    pub fn output_bias_mut(&mut self) -> &mut Tensor {
        &mut self.layers.last_mut().unwrap().1
    }

    /// Weights then bias, layer by layer.
    pub fn extend_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in &self.layers {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(&b.data);
        }
    }

    /// Reads parameters in [`Mlp::extend_flat`] order; returns the count consumed.
    pub fn read_flat(&mut self, flat: &[f64]) -> usize {
        let mut pos = 0;
        for (w, b) in &mut self.layers {
            let nw = w.data.len();
            w.data.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = b.data.len();
            b.data.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        pos
    }

    /// Places every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
            .collect();
        BoundMlp { layers }
    }
}

/// Tape handles for one network's parameters.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
}

impl BoundMlp {
    pub fn leaves(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// Forward pass of a bound network on a `B x in` input.
pub fn mlp_forward(net: &BoundMlp, x: Var, tape: &mut Tape) -> Result<Var> {
    let first_w = tape.value(net.layers[0].0);
    if tape.value(x).cols != first_w.cols {
        return Err(Error::Argument(format!(
            "input width {} does not match network input {}",
            tape.value(x).cols,
            first_w.cols
        )));
    }
    let mut h = x;
    let last = net.layers.len() - 1;
    for (i, &(w, b)) in net.layers.iter().enumerate() {
        h = tape.affine(h, w, b);
        if i < last {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Parameters of the three component networks.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    pub u_net: Mlp,
    pub w_net: Mlp,
    pub mu_net: Mlp,
}

/// Feature width for `N` antennas and `K` users: re/im of `H` and of the
/// current beamformer.
pub fn feature_dim(antennas: usize, users: usize) -> usize {
    4 * antennas * users
}

impl PredictorParams {
    pub fn new<R: Rng + ?Sized>(
        antennas: usize,
        users: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let input = feature_dim(antennas, users);
        let sizes = |out: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let mut u_net = Mlp::new(&sizes(2 * users), rng)?;
        u_net
            .output_bias_mut()
            .data
            .iter_mut()
            .for_each(|b| *b = U_OUTPUT_BIAS);
        let w_net = Mlp::new(&sizes(users), rng)?;
        let mu_net = Mlp::new(&sizes(1), rng)?;
        Ok(PredictorParams { u_net, w_net, mu_net })
    }

    pub fn zeros(antennas: usize, users: usize, hidden: &[usize]) -> Result<Self> {
        let input = feature_dim(antennas, users);
        let sizes = |out: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        Ok(PredictorParams {
            u_net: Mlp::zeros(&sizes(2 * users))?,
            w_net: Mlp::zeros(&sizes(users))?,
            mu_net: Mlp::zeros(&sizes(1))?,
        })
    }

    pub fn nets(&self) -> [&Mlp; 3] {
        [&self.u_net, &self.w_net, &self.mu_net]
    }

    pub fn users(&self) -> usize {
        self.w_net.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.nets().iter().map(|n| n.num_params()).sum()
    }

    /// u-net, then w-net, then mu-net parameters.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for net in self.nets() {
            net.extend_flat(&mut out);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Argument(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut pos = self.u_net.read_flat(flat);
        pos += self.w_net.read_flat(&flat[pos..]);
        self.mu_net.read_flat(&flat[pos..]);
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundPredictor {
        BoundPredictor {
            u: self.u_net.bind(tape),
            w: self.w_net.bind(tape),
            mu: self.mu_net.bind(tape),
        }
    }
}

/// Tape handles for all three networks.
#[derive(Debug, Clone)]
pub struct BoundPredictor {
    pub u: BoundMlp,
    pub w: BoundMlp,
    pub mu: BoundMlp,
}

impl BoundPredictor {
    pub fn leaves(&self) -> impl Iterator<Item = Var> + '_ {
        self.u.leaves().chain(self.w.leaves()).chain(self.mu.leaves())
    }
}
