use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamMoments};
use super::config::TrainConfig;
use super::init::{default_num_inducing, init_model};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::elbo::group_norms;
use crate::model::{elbo_and_grad, elbo_with_noise, full_batch, ElboBreakdown, ElboNoise, ModelState, ParamGroup};

/// Seed offset for the fixed full-batch evaluation noise.
const EVAL_SEED_SALT: u64 = 0x5eed_e7a1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Stochastic ELBO at each executed iteration.
    pub history: Vec<ElboBreakdown>,
    pub wall_ms: Vec<f64>,
    /// Max-abs ELBO gradient per group at the last iteration.
    pub final_grad_norms: Vec<(ParamGroup, f64)>,
    /// Fixed-seed full-batch ELBO of the initial and returned states.
    pub initial_eval: f64,
    pub final_eval: f64,
    /// Iteration after which the returned snapshot was taken (0 = initial).
    pub best_iteration: usize,
    pub converged: bool,
}

impl TrainTrace {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// Full-batch ELBO with noise drawn from a seed fixed by `config.seed`.
pub fn eval_elbo(state: &ModelState, data: &Dataset, config: &TrainConfig) -> Result<ElboBreakdown> {
    let noise = ElboNoise::from_seed(
        config.seed ^ EVAL_SEED_SALT,
        data.n(),
        state.q(),
        state.k(),
        config.mc_samples_discrete,
    );
    elbo_with_noise(state, data, &full_batch(data.n()), &noise)
}

fn mean(xs: &[ElboBreakdown]) -> f64 {
    xs.iter().map(|b| b.total).sum::<f64>() / xs.len() as f64
}

fn first_non_finite_group(state: &ModelState, grad: &[f64]) -> Option<ParamGroup> {
    state
        .layout()
        .into_iter()
        .find(|(_, r)| grad[r.clone()].iter().any(|g| !g.is_finite()))
        .map(|(g, _)| g)
}

fn non_finite_term(b: &ElboBreakdown) -> &'static str {
    [
        (b.ell_disc, "elbo.ell_disc"),
        (b.ell_cont, "elbo.ell_cont"),
        (b.kl_u_disc, "elbo.kl_u_disc"),
        (b.kl_u_cont, "elbo.kl_u_cont"),
        (b.kl_x, "elbo.kl_x"),
    ]
    .into_iter()
    .find(|(v, _)| !v.is_finite())
    .map_or("elbo.total", |(_, n)| n)
}

/// Maximizes the ELBO jointly over every parameter group with Adam.
///
/// Every `eval_every` iterations (and at the end) the full-batch ELBO is
/// evaluated with a fixed noise seed; the best such snapshot, including
/// the initial state, is returned. Stops at `max_iters` or once the mean
/// ELBO over the last `convergence_window` iterations improves on the
/// window before it by less than `convergence_tol`.
///
/// Without `init`, the state comes from [`init_model`] with
/// `Q = min(8, N, D)` and the default inducing count.
pub fn fit(data: &Dataset, config: &TrainConfig, init: Option<ModelState>) -> Result<(ModelState, TrainTrace)> {
    config.validate()?;
    let mut state = match init {
        Some(s) => s,
        None => init_model(
            data,
            8.min(data.n()).min(data.d()),
            default_num_inducing(data.n()),
            config.seed,
        )?,
    };
    state.validate()?;
    if state.n() != data.n() || state.d() != data.d() || state.k() != data.k() {
        return Err(Error::InvalidData(format!(
            "initial state is {}x{} with {} classes, data is {}x{} with {} classes",
            state.n(),
            state.d(),
            state.k(),
            data.n(),
            data.d(),
            data.k()
        )));
    }
    state.config.mc_samples_discrete = config.mc_samples_discrete;
    let batch_size = config.effective_batch(data.n())?;

    let initial = eval_elbo(&state, data, config)?;
    if !initial.is_finite() {
        return Err(Error::NonFinite {
            group: non_finite_term(&initial).to_string(),
            iteration: 0,
        });
    }
    let mut best = (initial.total, state.clone(), 0usize);
    let mut trace = TrainTrace {
        history: Vec::new(),
        wall_ms: Vec::new(),
        final_grad_norms: Vec::new(),
        initial_eval: initial.total,
        final_eval: initial.total,
        best_iteration: 0,
        converged: false,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = state.pack();
    let mut moments = AdamMoments::zeros(params.len());
    let window = config.convergence_window;
    for it in 1..=config.max_iters {
        let started = Instant::now();
        let batch = if batch_size == data.n() {
            full_batch(data.n())
        } else {
            let mut b = index::sample(&mut rng, data.n(), batch_size).into_vec();
            b.sort_unstable();
            b
        };
        let noise = ElboNoise::draw(&mut rng, batch.len(), state.q(), state.k(), config.mc_samples_discrete);
        let (b, g) = elbo_and_grad(&state, data, &batch, &noise).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::NonFinite {
                group: format!("inducing covariance ({e})"),
                iteration: it,
            },
            e => e,
        })?;
        if !b.is_finite() {
            return Err(Error::NonFinite {
                group: non_finite_term(&b).to_string(),
                iteration: it,
            });
        }
        let grad = g.pack();
        if let Some(group) = first_non_finite_group(&state, &grad) {
            return Err(Error::NonFinite {
                group: group.name().to_string(),
                iteration: it,
            });
        }
        let neg: Vec<f64> = grad.iter().map(|v| -v).collect();
        let (next, m) = adam_step(&params, &neg, &moments, it as u64, config)?;
        params = next;
        moments = m;
        state.unpack(&params)?;
        if let Some(group) = first_non_finite_group(&state, &params) {
            return Err(Error::NonFinite {
                group: group.name().to_string(),
                iteration: it,
            });
        }
        trace.history.push(b);
        trace.wall_ms.push(started.elapsed().as_secs_f64() * 1e3);
        trace.final_grad_norms = group_norms(&state, &grad);

        let converged = window > 0 && it >= 2 * window && {
            let h = &trace.history;
            mean(&h[h.len() - window..]) - mean(&h[h.len() - 2 * window..h.len() - window]) < config.convergence_tol
        };
        if it % config.eval_every == 0 || it == config.max_iters || converged {
            // a failing evaluation only disqualifies this snapshot
            if let Ok(e) = eval_elbo(&state, data, config) {
                if e.is_finite() && e.total > best.0 {
                    best = (e.total, state.clone(), it);
                }
            }
        }
        if converged {
            trace.converged = true;
            log::debug!("converged at iteration {it}");
            break;
        }
        if it % 100 == 0 {
            log::debug!("iteration {it}: elbo {:.4}", b.total);
        }
    }
    trace.final_eval = best.0;
    trace.best_iteration = best.2;
    Ok((best.1, trace))
}

/// Trace as a comma-separated table. `wall_ms` is written as 0 unless
/// `with_wall_time` is set, so that the table is reproducible by default.
pub fn trace_table(trace: &TrainTrace, with_wall_time: bool) -> String {
    let mut out = String::from("iteration,ell_disc,ell_cont,kl_u_disc,kl_u_cont,kl_x,total,wall_ms\n");
    for (i, b) in trace.history.iter().enumerate() {
        let ms = if with_wall_time { trace.wall_ms[i] } else { 0.0 };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            i + 1,
            b.ell_disc,
            b.ell_cont,
            b.kl_u_disc,
            b.kl_u_cont,
            b.kl_x,
            b.total,
            ms
        ));
    }
    out
}
