//! First-order optimizers over flat parameter vectors.

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `params - lr * grads`.
pub fn sgd_step(params: &[f64], grads: &[f64], lr: f64) -> Vec<f64> {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    params.iter().zip(grads).map(|(p, g)| p - lr * g).collect()
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update in place; `t` advances by one.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Functional form: returns the updated parameters and state for step `t`
/// (the state must have taken `t - 1` steps).
pub fn adam_step(
    state: &AdamState,
    params: &[f64],
    grads: &[f64],
    lr: f64,
    t: u64,
) -> (Vec<f64>, AdamState) {
    assert!(t >= 1, "Adam steps are counted from 1");
    assert_eq!(state.t + 1, t, "state is at step {}, asked for step {t}", state.t);
    let mut next = state.clone();
    let mut p = params.to_vec();
    next.step(&mut p, grads, lr);
    (p, next)
}
