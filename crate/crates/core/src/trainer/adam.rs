//! Bias-corrected Adam over flat parameter groups.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    /// Keeps the moments of entries whose block is retained. `stride` is the
    /// number of scalars per Gaussian in this group.
    pub fn retain_blocks(&mut self, keep: &[bool], stride: usize) {
        let filter = |src: &[f64]| -> Vec<f64> {
            src.chunks_exact(stride).zip(keep).filter(|(_, k)| **k).flat_map(|(c, _)| c.iter().copied()).collect()
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }
}

/// One Adam update: `p -= lr · m̂ / (√v̂ + ε)`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    if state.m.len() != params.len() {
        *state = AdamState { step: state.step, ..AdamState::new(params.len()) };
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}
