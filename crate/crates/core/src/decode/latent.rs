use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::one_hot;
use crate::error::{Error, Result};
use crate::math::gaussian::{kl_diag_term, standard_normal_matrix};
use crate::model::likelihood::{ell_continuous_grad, ell_discrete_grad};
use crate::model::svgp::GpPath;
use crate::model::{ElboNoise, LatentVariational, ModelState};
use crate::train::{adam_step, AdamMoments, TrainConfig};

const EVAL_SEED_SALT: u64 = 0xdec0_de00;
/// Discrete draws used by the fixed-seed snapshot objective.
const EVAL_SAMPLES: usize = 8;

/// Variational posterior over test latents against a frozen model.
#[derive(Debug, Clone, PartialEq)]
pub struct TestLatent {
    pub mu_star: DMatrix<f64>,
    pub log_scale_star: DMatrix<f64>,
}

impl TestLatent {
    pub fn new(mu_star: DMatrix<f64>, log_scale_star: DMatrix<f64>) -> Result<Self> {
        LatentVariational::new(mu_star.clone(), log_scale_star.clone())?;
        Ok(Self {
            mu_star,
            log_scale_star,
        })
    }

    pub fn n(&self) -> usize {
        self.mu_star.nrows()
    }

    pub fn q(&self) -> usize {
        self.mu_star.ncols()
    }

    pub fn scale(&self) -> DMatrix<f64> {
        self.log_scale_star.map(f64::exp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestInit {
    /// Posterior mean of the nearest training observation (Euclidean, in
    /// model space).
    Nearest,
    /// Standard-normal means.
    Random { seed: u64 },
}

/// Initial test latent; scales start at 0.1 either way.
pub fn initial_test_latent(model: &ModelState, y_cont_star: &DMatrix<f64>, init: TestInit) -> Result<TestLatent> {
    if y_cont_star.ncols() != model.d() {
        return Err(Error::dims(
            "test observations: feature count",
            model.d(),
            y_cont_star.ncols(),
        ));
    }
    let (n, q) = (y_cont_star.nrows(), model.q());
    let mu = match init {
        TestInit::Nearest => {
            let a = &model.anchors;
            let mut mu = DMatrix::zeros(n, q);
            for i in 0..n {
                let mut best = (f64::INFINITY, 0);
                for r in 0..a.nrows() {
                    let d2 = (a.row(r) - y_cont_star.row(i)).norm_squared();
                    if d2 < best.0 {
                        best = (d2, r);
                    }
                }
                mu.set_row(i, &model.latent.mu.row(best.1));
            }
            mu
        }
        TestInit::Random { seed } => standard_normal_matrix(&mut ChaCha8Rng::seed_from_u64(seed), n, q),
    };
    TestLatent::new(mu, DMatrix::from_element(n, q, 0.1f64.ln()))
}

/// Value of the test-latent objective, split by term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestObjective {
    pub ell_cont: f64,
    /// Zero when no labels take part.
    pub ell_disc: f64,
    pub kl_x: f64,
    pub total: f64,
}

/// Gradients w.r.t. `mu_star` and `log_scale_star`.
type LatentGrad = (DMatrix<f64>, DMatrix<f64>);

struct Problem<'a> {
    model: &'a ModelState,
    cont: GpPath<'a>,
    disc: Option<GpPath<'a>>,
    y_cont: &'a DMatrix<f64>,
    y_disc: Option<DMatrix<f64>>,
}

impl<'a> Problem<'a> {
    fn new(model: &'a ModelState, y_cont: &'a DMatrix<f64>, labels: Option<&[usize]>) -> Result<Self> {
        if y_cont.ncols() != model.d() {
            return Err(Error::dims(
                "test observations: feature count",
                model.d(),
                y_cont.ncols(),
            ));
        }
        if y_cont.nrows() == 0 {
            return Err(Error::InvalidData("no test observations".into()));
        }
        if y_cont.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite test observation".into()));
        }
        let y_disc = match labels {
            Some(l) => {
                if l.len() != y_cont.nrows() {
                    return Err(Error::dims("test labels", y_cont.nrows(), l.len()));
                }
                if let Some(&bad) = l.iter().find(|&&c| c >= model.k()) {
                    return Err(Error::InvalidData(format!("label {bad} outside 0..{}", model.k())));
                }
                Some(one_hot(l, model.k()))
            }
            None => None,
        };
        let cont = GpPath::new(&model.inducing_cont, &model.kernel_cont)?;
        let disc = match y_disc {
            Some(_) => Some(GpPath::new(&model.inducing_disc, &model.kernel_disc)?),
            None => None,
        };
        Ok(Self {
            model,
            cont,
            disc,
            y_cont,
            y_disc,
        })
    }

    fn evaluate(&self, lat: &TestLatent, noise: &ElboNoise, want_grad: bool) -> (TestObjective, Option<LatentGrad>) {
        let x = lat
            .mu_star
            .zip_zip_map(&lat.log_scale_star, &noise.x_eps, |m, ls, e| m + ls.exp() * e);
        let fc = self.cont.forward(&x);
        let ec = ell_continuous_grad(self.y_cont, &fc.marginals, &self.model.noise);
        let mut gx = want_grad.then(|| self.cont.backward(&x, &fc, &ec.g_mean, &ec.g_var, 0.0).x);
        let mut ell_disc = 0.0;
        if let (Some(disc), Some(y)) = (&self.disc, &self.y_disc) {
            let fd = disc.forward(&x);
            let ed = ell_discrete_grad(y, &fd.marginals, &noise.f_eps);
            ell_disc = ed.value;
            if let Some(g) = gx.as_mut() {
                *g += disc.backward(&x, &fd, &ed.g_mean, &ed.g_var, 0.0).x;
            }
        }
        let kl_x: f64 = lat
            .mu_star
            .iter()
            .zip(lat.log_scale_star.iter())
            .map(|(&m, &ls)| kl_diag_term(m, ls))
            .sum();
        let obj = TestObjective {
            ell_cont: ec.value,
            ell_disc,
            kl_x,
            total: ec.value + ell_disc - kl_x,
        };
        let grads = gx.map(|gx| {
            let g_mu = &gx - &lat.mu_star;
            let g_ls = DMatrix::from_fn(lat.n(), lat.q(), |i, j| {
                let ls = lat.log_scale_star[(i, j)];
                gx[(i, j)] * noise.x_eps[(i, j)] * ls.exp() + 1.0 - (2.0 * ls).exp()
            });
            (g_mu, g_ls)
        });
        (obj, grads)
    }

    fn eval_noise(&self, n: usize, seed: u64) -> ElboNoise {
        ElboNoise::from_seed(seed ^ EVAL_SEED_SALT, n, self.model.q(), self.model.k(), EVAL_SAMPLES)
    }

    fn optimize(&self, init: TestLatent, opt: &TrainConfig) -> Result<TestLatent> {
        opt.validate()?;
        let (n, q) = (init.n(), init.q());
        if q != self.model.q() || n != self.y_cont.nrows() {
            return Err(Error::dims("initial test latent rows", self.y_cont.nrows(), n));
        }
        let eval_noise = self.eval_noise(n, opt.seed);
        let score = |lat: &TestLatent| {
            let v = self.evaluate(lat, &eval_noise, false).0.total;
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut best = (score(&init), init.clone());
        let mut lat = init;
        let mut params: Vec<f64> = lat.mu_star.iter().chain(lat.log_scale_star.iter()).copied().collect();
        let mut moments = AdamMoments::zeros(params.len());
        let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
        for it in 1..=opt.max_iters {
            let noise = ElboNoise::draw(&mut rng, n, q, self.model.k(), opt.mc_samples_discrete);
            let (obj, g) = self.evaluate(&lat, &noise, true);
            if !obj.total.is_finite() {
                return Err(Error::NonFinite {
                    group: "test latent objective".into(),
                    iteration: it,
                });
            }
            let (g_mu, g_ls) = g.expect("gradient requested");
            let neg: Vec<f64> = g_mu.iter().chain(g_ls.iter()).map(|v| -v).collect();
            let (next, m) = adam_step(&params, &neg, &moments, it as u64, opt)?;
            params = next;
            moments = m;
            lat.mu_star.copy_from_slice(&params[..n * q]);
            lat.log_scale_star.copy_from_slice(&params[n * q..]);
            if it % opt.eval_every == 0 || it == opt.max_iters {
                let s = score(&lat);
                if s > best.0 {
                    best = (s, lat.clone());
                }
            }
        }
        Ok(best.1)
    }
}

/// Test-latent objective at `latent` with fixed noise from `seed`: the
/// continuous expected log-likelihood, plus the discrete one when `labels`
/// are given, minus `KL(q(X*) || N(0, I))`.
pub fn test_objective(
    model: &ModelState,
    latent: &TestLatent,
    y_cont_star: &DMatrix<f64>,
    labels: Option<&[usize]>,
    seed: u64,
) -> Result<TestObjective> {
    let p = Problem::new(model, y_cont_star, labels)?;
    if latent.q() != model.q() || latent.n() != y_cont_star.nrows() {
        return Err(Error::dims("test latent rows", y_cont_star.nrows(), latent.n()));
    }
    Ok(p.evaluate(latent, &p.eval_noise(latent.n(), seed), false).0)
}

/// Optimizes `q(X*)` using both observations and labels; the model is only
/// read. Starts from [`TestInit::Nearest`].
pub fn infer_latent(
    model: &ModelState,
    y_cont_star: &DMatrix<f64>,
    labels: &[usize],
    opt: &TrainConfig,
) -> Result<TestLatent> {
    let init = initial_test_latent(model, y_cont_star, TestInit::Nearest)?;
    infer_latent_from(model, y_cont_star, labels, opt, init)
}

pub fn infer_latent_from(
    model: &ModelState,
    y_cont_star: &DMatrix<f64>,
    labels: &[usize],
    opt: &TrainConfig,
    init: TestLatent,
) -> Result<TestLatent> {
    Problem::new(model, y_cont_star, Some(labels))?.optimize(init, opt)
}

/// Optimizes `q(X*)` from continuous observations alone. Starts from
/// [`TestInit::Nearest`].
pub fn decode_latent(model: &ModelState, y_cont_star: &DMatrix<f64>, opt: &TrainConfig) -> Result<TestLatent> {
    let init = initial_test_latent(model, y_cont_star, TestInit::Nearest)?;
    decode_latent_from(model, y_cont_star, opt, init)
}

pub fn decode_latent_from(
    model: &ModelState,
    y_cont_star: &DMatrix<f64>,
    opt: &TrainConfig,
    init: TestLatent,
) -> Result<TestLatent> {
    Problem::new(model, y_cont_star, None)?.optimize(init, opt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::model_to_json;
    use crate::model::testing::{random_dataset, random_state};

    fn setup() -> (ModelState, DMatrix<f64>, Vec<usize>) {
        let model = random_state(4, 10, 3, 2, 4, 2);
        let test = random_dataset(40, 5, 3, 2);
        (model, test.y_continuous().clone(), test.labels().to_vec())
    }

    fn short() -> TrainConfig {
        TrainConfig {
            max_iters: 60,
            ..TrainConfig::decode_default()
        }
    }

    #[test]
    fn zero_iterations_returns_init() {
        let (model, y, l) = setup();
        let opt = TrainConfig {
            max_iters: 0,
            ..short()
        };
        let init = initial_test_latent(&model, &y, TestInit::Nearest).unwrap();
        assert_eq!(decode_latent(&model, &y, &opt).unwrap(), init);
        assert_eq!(infer_latent(&model, &y, &l, &opt).unwrap(), init);
    }

    #[test]
    fn nearest_init_copies_training_mean() {
        let (model, _, _) = setup();
        let y = DMatrix::from_fn(2, 3, |i, j| model.anchors[(i * 3, j)] + 1e-9);
        let init = initial_test_latent(&model, &y, TestInit::Nearest).unwrap();
        assert_eq!(init.mu_star.row(0), model.latent.mu.row(0));
        assert_eq!(init.mu_star.row(1), model.latent.mu.row(3));
        assert!(init.log_scale_star.iter().all(|v| (v - 0.1f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn frozen_model_and_determinism() {
        let (model, y, l) = setup();
        let before = model_to_json(&model).unwrap();
        let a = decode_latent(&model, &y, &short()).unwrap();
        let b = decode_latent(&model, &y, &short()).unwrap();
        let _ = infer_latent(&model, &y, &l, &short()).unwrap();
        assert_eq!(a, b);
        assert_eq!(model_to_json(&model).unwrap(), before);
    }

    #[test]
    fn optimization_does_not_lower_snapshot_objective() {
        let (model, y, l) = setup();
        let opt = short();
        let init = initial_test_latent(&model, &y, TestInit::Random { seed: 3 }).unwrap();
        let dec = decode_latent_from(&model, &y, &opt, init.clone()).unwrap();
        let f0 = test_objective(&model, &init, &y, None, opt.seed).unwrap().total;
        let f1 = test_objective(&model, &dec, &y, None, opt.seed).unwrap().total;
        assert!(f1 >= f0);
        let inf = infer_latent_from(&model, &y, &l, &opt, dec.clone()).unwrap();
        let g_dec = test_objective(&model, &dec, &y, Some(&l), opt.seed).unwrap().total;
        let g_inf = test_objective(&model, &inf, &y, Some(&l), opt.seed).unwrap().total;
        assert!(g_inf >= g_dec);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (model, y, l) = setup();
        let p = Problem::new(&model, &y, Some(&l)).unwrap();
        let lat = initial_test_latent(&model, &y, TestInit::Random { seed: 1 }).unwrap();
        let noise = p.eval_noise(lat.n(), 2);
        let (_, g) = p.evaluate(&lat, &noise, true);
        let (g_mu, g_ls) = g.unwrap();
        let h = 1e-5;
        for (which, analytic) in [(0, &g_mu), (1, &g_ls)] {
            for idx in 0..analytic.len() {
                let mut up = lat.clone();
                let mut dn = lat.clone();
                let (u, d) = if which == 0 {
                    (&mut up.mu_star, &mut dn.mu_star)
                } else {
                    (&mut up.log_scale_star, &mut dn.log_scale_star)
                };
                u[idx] += h;
                d[idx] -= h;
                let fd = (p.evaluate(&up, &noise, false).0.total - p.evaluate(&dn, &noise, false).0.total) / (2.0 * h);
                let a = analytic[idx];
                assert!(
                    (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3) < 1e-5,
                    "{which}/{idx}: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn shape_errors() {
        let (model, y, l) = setup();
        assert!(decode_latent(&model, &DMatrix::zeros(3, 2), &short()).is_err());
        assert!(infer_latent(&model, &y, &l[..2], &short()).is_err());
        assert!(infer_latent(&model, &y, &[5; 5], &short()).is_err());
    }
}
