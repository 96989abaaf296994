use crate::data::Dataset;
use crate::error::Result;
use crate::model::testing::{random_dataset, random_state};
use crate::model::{elbo_and_grad, elbo_with_noise, full_batch, ElboNoise, ModelState, ParamGroup};

/// Denominator floor of the relative error, so entries whose true
/// derivative is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub n_params: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)` per coordinate, with `n`
/// the central difference of `f` at `x` with step `h`.
pub fn check_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], analytic: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let dn = f(&p);
            p[i] = x[i];
            let num = (up - dn) / (2.0 * h);
            let a = analytic[i];
            let err = (a - num).abs() / a.abs().max(num.abs()).max(REL_ERROR_FLOOR);
            if err.is_nan() {
                f64::INFINITY
            } else {
                err
            }
        })
        .collect()
}

fn run(
    state: &ModelState,
    data: &Dataset,
    h: f64,
    tol: f64,
    seed: u64,
    corrupt: Option<usize>,
) -> Result<GradCheckReport> {
    let batch = full_batch(data.n());
    let noise = ElboNoise::from_seed(
        seed,
        data.n(),
        state.q(),
        state.k(),
        state.config.mc_samples_discrete.max(1),
    );
    let (_, g) = elbo_and_grad(state, data, &batch, &noise)?;
    let mut analytic = g.pack();
    if let Some(i) = corrupt {
        let i = i % analytic.len();
        analytic[i] += 1.0;
    }
    let x = state.pack();
    let mut probe = state.clone();
    let errors = check_gradient(
        |p| {
            probe.unpack(p).expect("length checked by pack");
            elbo_with_noise(&probe, data, &batch, &noise).map_or(f64::NAN, |b| b.total)
        },
        &x,
        &analytic,
        h,
    );
    let groups = state
        .layout()
        .into_iter()
        .map(|(group, r)| {
            let max_rel_error = errors[r.clone()].iter().copied().fold(0.0, f64::max);
            GroupCheck {
                group,
                n_params: r.len(),
                max_rel_error,
                passed: max_rel_error <= tol,
            }
        })
        .collect();
    Ok(GradCheckReport { groups, tol })
}

/// Compares the analytic ELBO gradient against central differences on the
/// full batch, with all Monte-Carlo noise frozen by `seed`.
pub fn grad_check(state: &ModelState, data: &Dataset, h: f64, tol: f64, seed: u64) -> Result<GradCheckReport> {
    run(state, data, h, tol, seed, None)
}

/// As [`grad_check`], after adding 1 to analytic gradient entry `index`
/// (modulo the parameter count). Exists to show the checker catches errors.
pub fn grad_check_corrupted(
    state: &ModelState,
    data: &Dataset,
    h: f64,
    tol: f64,
    seed: u64,
    index: usize,
) -> Result<GradCheckReport> {
    run(state, data, h, tol, seed, Some(index))
}

/// Random model and data with N=6, D=2, K=2, M=3, Q=2.
pub fn tiny_model(seed: u64) -> (ModelState, Dataset) {
    (random_state(seed, 6, 2, 2, 3, 2), random_dataset(seed, 6, 2, 2))
}
