use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// First and second moment estimates, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam step that *descends* along `grads`; `t` counts
/// steps from 1. Pass the negated gradient to maximize.
pub fn adam_step(
    params: &[f64],
    grads: &[f64],
    moments: &AdamMoments,
    t: u64,
    config: &TrainConfig,
) -> Result<(Vec<f64>, AdamMoments)> {
    let n = params.len();
    if grads.len() != n || moments.m.len() != n || moments.v.len() != n {
        return Err(Error::dims("adam_step: gradient length", n, grads.len()));
    }
    if t == 0 {
        return Err(Error::param("t", "step counter starts at 1"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            group: format!("gradient entry {i}"),
            iteration: t as usize,
        });
    }
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let mut out = Vec::with_capacity(n);
    let mut next = AdamMoments::zeros(n);
    for i in 0..n {
        let m = b1 * moments.m[i] + (1.0 - b1) * grads[i];
        let v = b2 * moments.v[i] + (1.0 - b2) * grads[i] * grads[i];
        next.m[i] = m;
        next.v[i] = v;
        out.push(params[i] - config.learning_rate * (m / c1) / ((v / c2).sqrt() + config.adam_eps));
    }
    Ok((out, next))
}
