use super::net::{DenseNet, GradBundle};
use crate::error::{Error, Result};

/// Moment buffers for the adaptive-moment (Adam) optimizer.
///
/// Starts empty; the first step sizes the buffers from the gradient bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every parameter of `net`.
pub fn adam_step(net: &mut DenseNet, grads: &GradBundle, state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::Domain(format!("learning rate {lr} must be positive")));
    }
    net.check_congruent(grads)?;
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient in Adam step".into()));
    }
    let n = net.param_count();
    if state.first.is_empty() {
        state.first = vec![0.0; n];
        state.second = vec![0.0; n];
    } else if state.first.len() != n {
        return Err(Error::dim(format!(
            "optimizer state holds {} moments for {n} parameters",
            state.first.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);

    let mut i = 0;
    let mut update = |p: &mut f64, g: f64| {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
        i += 1;
    };
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        for (p, &d) in layer.weight.as_mut_slice().iter_mut().zip(g.weight.as_slice()) {
            update(p, d);
        }
        for (p, &d) in layer.bias.iter_mut().zip(&g.bias) {
            update(p, d);
        }
    }
    Ok(())
}
