//! Sparse variational GP marginals and their reverse-mode gradients.
//!
//! For a latent point `x` and output `c`, with `a = K_mm^{-1} k_mx`:
//!
//! ```text
//! mean = a^T m_c
//! var  = k_xx - k_xm a + a^T S_c a
//! ```
//!
//! `K_mm` always carries a fixed diagonal jitter (`INDUCING_JITTER`) and,
//! if that is not enough, whatever the Cholesky ladder adds on top. Both
//! are treated as constants when differentiating.

use nalgebra::{DMatrix, DVector};

use super::state::InducingVariational;
use crate::error::{Error, Result};
use crate::math::chol::{chol_jitter, CholeskyFactor, DEFAULT_JITTER};
use crate::math::gaussian::kl_factor_vs_prior;
use crate::math::kernel::{gram_backward, gram_values, KernelParams};

pub const INDUCING_JITTER: f64 = 1e-6;

/// Per-point, per-output marginal moments of `q(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalGaussians {
    pub mean: DMatrix<f64>,
    pub variance: DMatrix<f64>,
}

/// Marginal moments of `q(f(x))` at each row of `x_batch`.
pub fn svgp_marginal(
    x_batch: &DMatrix<f64>,
    inducing: &InducingVariational,
    params: &KernelParams,
) -> Result<MarginalGaussians> {
    inducing.validate()?;
    if x_batch.ncols() != inducing.q() {
        return Err(Error::dims(
            "svgp_marginal: latent dimension",
            inducing.q(),
            x_batch.ncols(),
        ));
    }
    if params.dim() != inducing.q() {
        return Err(Error::dims(
            "svgp_marginal: kernel dimension",
            inducing.q(),
            params.dim(),
        ));
    }
    let path = GpPath::new(inducing, params)?;
    Ok(path.forward(x_batch).marginals)
}

/// Gradients produced by one GP path.
#[derive(Debug, Clone)]
pub(crate) struct PathGrad {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub m: DMatrix<f64>,
    /// Gradient w.r.t. the packed factor parameters: lower triangle with
    /// the diagonal entries taken w.r.t. `ln L_ii`.
    pub s: Vec<DMatrix<f64>>,
    pub log_lengthscales: Vec<f64>,
    pub log_variance: f64,
}

pub(crate) struct Forward {
    pub marginals: MarginalGaussians,
    kxm: DMatrix<f64>,
    a: DMatrix<f64>,
    /// `L_c^T a` for each output.
    t: Vec<DMatrix<f64>>,
}

/// One GP path (inducing variational + kernel) with `K_mm` factored once.
pub(crate) struct GpPath<'a> {
    pub inducing: &'a InducingVariational,
    pub kernel: &'a KernelParams,
    kmm: DMatrix<f64>,
    /// The matrix `chol` actually factors, jitter included.
    factored: DMatrix<f64>,
    chol: CholeskyFactor,
}

impl<'a> GpPath<'a> {
    pub fn new(inducing: &'a InducingVariational, kernel: &'a KernelParams) -> Result<Self> {
        let kmm = gram_values(&inducing.z, &inducing.z, kernel);
        let mut jittered = kmm.clone();
        for i in 0..jittered.nrows() {
            jittered[(i, i)] += INDUCING_JITTER;
        }
        let chol = chol_jitter(&jittered, DEFAULT_JITTER)?;
        for i in 0..jittered.nrows() {
            jittered[(i, i)] += chol.jitter_used();
        }
        Ok(Self {
            inducing,
            kernel,
            kmm,
            factored: jittered,
            chol,
        })
    }

    pub fn chol(&self) -> &CholeskyFactor {
        &self.chol
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Forward {
        let iv = self.inducing;
        let kxm = gram_values(x, &iv.z, self.kernel);
        let kmx = kxm.transpose();
        let mut a = self.chol.solve(&kmx);
        // one step of iterative refinement; K_mm is often badly conditioned
        a += self.chol.solve(&(&kmx - &self.factored * &a));
        let mean = a.transpose() * &iv.m;
        let v = self.kernel.signal_variance();
        let b = x.nrows();
        // k_xx - k_xm a, per point
        let explained: Vec<f64> = (0..b).map(|i| kxm.row(i).transpose().dot(&a.column(i))).collect();
        let mut variance = DMatrix::zeros(b, iv.outputs());
        let mut t = Vec::with_capacity(iv.outputs());
        for (c, l) in iv.s_factors.iter().enumerate() {
            let tc = l.transpose() * &a;
            for i in 0..b {
                variance[(i, c)] = v - explained[i] + tc.column(i).norm_squared();
            }
            t.push(tc);
        }
        Forward {
            marginals: MarginalGaussians { mean, variance },
            kxm,
            a,
            t,
        }
    }

    /// `sum_c KL(q(u_c) || N(0, K_mm))`.
    pub fn kl(&self) -> f64 {
        let iv = self.inducing;
        (0..iv.outputs())
            .map(|c| kl_factor_vs_prior(&iv.m.column(c).into_owned(), &iv.s_factors[c], &self.chol))
            .sum()
    }

    /// Back-propagates `d obj / d mean`, `d obj / d var` and
    /// `kl_weight * d KL / d (...)` onto the inputs and path parameters.
    pub fn backward(
        &self,
        x: &DMatrix<f64>,
        fwd: &Forward,
        g_mean: &DMatrix<f64>,
        g_var: &DMatrix<f64>,
        kl_weight: f64,
    ) -> PathGrad {
        let iv = self.inducing;
        let (m_ind, b, outputs) = (iv.num_inducing(), x.nrows(), iv.outputs());
        let a = &fwd.a;
        let g_row: DVector<f64> = DVector::from_fn(b, |i, _| g_var.row(i).sum());

        // d obj / d a
        let mut a_bar = &iv.m * g_mean.transpose();
        for i in 0..b {
            let gi = g_row[i];
            for j in 0..m_ind {
                a_bar[(j, i)] -= gi * fwd.kxm[(i, j)];
            }
        }
        let mut g_m = a * g_mean;
        let mut g_s = Vec::with_capacity(outputs);
        for c in 0..outputs {
            let l = &iv.s_factors[c];
            let mut t_scaled = fwd.t[c].clone();
            for i in 0..b {
                t_scaled.column_mut(i).scale_mut(g_var[(i, c)]);
            }
            // a_bar += 2 S_c a diag(g_var_c) = 2 L_c (L_c^T a) diag(g_var_c)
            a_bar += 2.0 * l * &t_scaled;
            // d obj / d L_c = 2 a diag(g_var_c) a^T L_c = 2 a diag(g_var_c) T_c^T
            let g_l = 2.0 * a * t_scaled.transpose();
            g_s.push(g_l);
        }

        let w = self.chol.solve(&a_bar);
        let mut g_kmx = w.clone();
        for i in 0..b {
            let gi = g_row[i];
            for j in 0..m_ind {
                g_kmx[(j, i)] -= gi * a[(j, i)];
            }
        }
        let mut g_kmm = -(&w * a.transpose());

        if kl_weight != 0.0 {
            // KL_c = 1/2 (tr(K^-1 S_c) + m_c^T K^-1 m_c - M + ln|K| - ln|S_c|)
            let k_inv = self.chol.solve(&DMatrix::identity(m_ind, m_ind));
            let mut second = DMatrix::zeros(m_ind, m_ind);
            for c in 0..outputs {
                let l = &iv.s_factors[c];
                let mc = iv.m.column(c);
                second += l * l.transpose() + mc * mc.transpose();
                let kinv_m = &k_inv * mc;
                for j in 0..m_ind {
                    g_m[(j, c)] += kl_weight * kinv_m[j];
                }
                let kinv_l = &k_inv * l;
                for i in 0..m_ind {
                    for j in 0..=i {
                        let mut g = kinv_l[(i, j)];
                        if i == j {
                            g -= 1.0 / l[(i, i)];
                        }
                        g_s[c][(i, j)] += kl_weight * g;
                    }
                }
            }
            let kinv_second_kinv = &k_inv * second * &k_inv;
            g_kmm += kl_weight * 0.5 * (outputs as f64 * &k_inv - kinv_second_kinv);
        }

        // restrict to the lower triangle and move the diagonal to log space
        for (c, g) in g_s.iter_mut().enumerate() {
            let l = &iv.s_factors[c];
            for i in 0..m_ind {
                for j in i + 1..m_ind {
                    g[(i, j)] = 0.0;
                }
                g[(i, i)] *= l[(i, i)];
            }
        }

        let cross = gram_backward(x, &iv.z, self.kernel, &fwd.kxm, &g_kmx.transpose());
        let auto = gram_backward(&iv.z, &iv.z, self.kernel, &self.kmm, &g_kmm);
        let mut log_ll = cross.log_lengthscales;
        for (g, h) in log_ll.iter_mut().zip(&auto.log_lengthscales) {
            *g += h;
        }
        let log_v = cross.log_variance + auto.log_variance + self.kernel.signal_variance() * g_row.sum();

        PathGrad {
            x: cross.rows,
            z: cross.cols + auto.rows + auto.cols,
            m: g_m,
            s: g_s,
            log_lengthscales: log_ll,
            log_variance: log_v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::kernel::gram;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| scale * (rng.random::<f64>() * 2.0 - 1.0))
    }

    fn random_lower(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, m, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => 0.3 * (rng.random::<f64>() - 0.5),
            std::cmp::Ordering::Equal => 0.2 + rng.random::<f64>() * 0.6,
            std::cmp::Ordering::Less => 0.0,
        })
    }

    #[test]
    fn prior_q_recovers_prior_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..100 {
            let q = 1 + trial % 3;
            let m = 2 + trial % 4;
            let kernel = KernelParams::new(
                &(0..q).map(|_| 0.5 + rng.random::<f64>() * 2.0).collect::<Vec<_>>(),
                0.5 + rng.random::<f64>(),
            )
            .unwrap();
            let z = random_matrix(&mut rng, m, q, 2.0);
            let mut kmm = gram(&z, &z, &kernel).unwrap().values;
            for i in 0..m {
                kmm[(i, i)] += INDUCING_JITTER;
            }
            let l = nalgebra::Cholesky::new(kmm).unwrap().unpack();
            let iv = InducingVariational::new(z, DMatrix::zeros(m, 2), vec![l.clone(), l]).unwrap();
            let x = random_matrix(&mut rng, 5, q, 2.0);
            let marg = svgp_marginal(&x, &iv, &kernel).unwrap();
            for i in 0..5 {
                for c in 0..2 {
                    assert!(marg.mean[(i, c)].abs() <= 1e-8);
                    assert!((marg.variance[(i, c)] - kernel.signal_variance()).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn single_inducing_point_at_x() {
        let kernel = KernelParams::new(&[1.0, 1.0], 1.0).unwrap();
        let z = DMatrix::from_row_slice(1, 2, &[0.4, -0.2]);
        let iv = InducingVariational::new(
            z.clone(),
            DMatrix::from_element(1, 1, 0.7),
            vec![DMatrix::from_element(1, 1, 0.3)],
        )
        .unwrap();
        let marg = svgp_marginal(&z, &iv, &kernel).unwrap();
        assert_relative_eq!(marg.mean[(0, 0)], 0.7, epsilon = 1e-5);
        assert_relative_eq!(marg.variance[(0, 0)], 0.09, epsilon = 1e-5);
    }

    /// Dense oracle: builds the joint covariance of (f(x), u), conditions
    /// f on u, and integrates u against q(u) without any shared code path.
    fn dense_oracle(x: &DMatrix<f64>, iv: &InducingVariational, kernel: &KernelParams) -> MarginalGaussians {
        let k = |a: &[f64], b: &[f64]| crate::math::ard_rbf(a, b, kernel).unwrap();
        let m = iv.num_inducing();
        let row = |mat: &DMatrix<f64>, i: usize| mat.row(i).iter().copied().collect::<Vec<f64>>();
        let mut kuu = DMatrix::from_fn(m, m, |i, j| k(&row(&iv.z, i), &row(&iv.z, j)));
        for i in 0..m {
            kuu[(i, i)] += INDUCING_JITTER;
        }
        let kuu_inv = kuu.try_inverse().unwrap();
        let mut mean = DMatrix::zeros(x.nrows(), iv.outputs());
        let mut var = DMatrix::zeros(x.nrows(), iv.outputs());
        for b in 0..x.nrows() {
            let xb = row(x, b);
            let kfu = DVector::from_fn(m, |j, _| k(&xb, &row(&iv.z, j)));
            let proj = &kuu_inv * &kfu;
            let cond_var = k(&xb, &xb) - kfu.dot(&proj);
            for c in 0..iv.outputs() {
                let s = iv.covariance(c);
                mean[(b, c)] = proj.dot(&iv.m.column(c));
                var[(b, c)] = cond_var + proj.dot(&(&s * &proj));
            }
        }
        MarginalGaussians { mean, variance: var }
    }

    #[test]
    fn matches_dense_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let q = 2;
            let kernel = KernelParams::new(
                &[0.8 + rng.random::<f64>(), 0.8 + rng.random::<f64>()],
                1.0 + rng.random::<f64>(),
            )
            .unwrap();
            let z = random_matrix(&mut rng, 3, q, 1.5);
            let iv = InducingVariational::new(
                z,
                random_matrix(&mut rng, 3, 2, 1.0),
                vec![random_lower(&mut rng, 3), random_lower(&mut rng, 3)],
            )
            .unwrap();
            let x = random_matrix(&mut rng, 2, q, 1.5);
            let got = svgp_marginal(&x, &iv, &kernel).unwrap();
            let want = dense_oracle(&x, &iv, &kernel);
            assert!((got.mean - want.mean).amax() <= 1e-8);
            assert!((got.variance - want.variance).amax() <= 1e-8);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let kernel = KernelParams::new(&[1.0, 1.0], 1.0).unwrap();
        let iv = InducingVariational::with_identity(DMatrix::zeros(2, 2), 1, 0.1).unwrap();
        assert!(svgp_marginal(&DMatrix::zeros(3, 3), &iv, &kernel).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let kernel = KernelParams::new(&[0.9, 1.3], 1.2).unwrap();
        let z = random_matrix(&mut rng, 3, 2, 1.0);
        let iv = InducingVariational::new(
            z,
            random_matrix(&mut rng, 3, 2, 1.0),
            vec![random_lower(&mut rng, 3), random_lower(&mut rng, 3)],
        )
        .unwrap();
        let x = random_matrix(&mut rng, 4, 2, 1.0);
        let gm = random_matrix(&mut rng, 4, 2, 1.0);
        let gv = random_matrix(&mut rng, 4, 2, 1.0);
        let obj = |x: &DMatrix<f64>, iv: &InducingVariational, k: &KernelParams| {
            let p = GpPath::new(iv, k).unwrap();
            let f = p.forward(x);
            f.marginals.mean.component_mul(&gm).sum() + f.marginals.variance.component_mul(&gv).sum() - p.kl()
        };
        let path = GpPath::new(&iv, &kernel).unwrap();
        let fwd = path.forward(&x);
        let g = path.backward(&x, &fwd, &gm, &gv, -1.0);
        let h = 1e-6;
        let check = |an: f64, fd: f64| {
            assert!((an - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "analytic {an} fd {fd}");
        };
        for i in 0..4 {
            for d in 0..2 {
                let (mut p, mut m) = (x.clone(), x.clone());
                p[(i, d)] += h;
                m[(i, d)] -= h;
                check(g.x[(i, d)], (obj(&p, &iv, &kernel) - obj(&m, &iv, &kernel)) / (2.0 * h));
            }
        }
        for i in 0..3 {
            for d in 0..2 {
                let (mut p, mut m) = (iv.clone(), iv.clone());
                p.z[(i, d)] += h;
                m.z[(i, d)] -= h;
                check(g.z[(i, d)], (obj(&x, &p, &kernel) - obj(&x, &m, &kernel)) / (2.0 * h));
                let (mut p, mut m) = (iv.clone(), iv.clone());
                p.m[(i, d)] += h;
                m.m[(i, d)] -= h;
                check(g.m[(i, d)], (obj(&x, &p, &kernel) - obj(&x, &m, &kernel)) / (2.0 * h));
            }
        }
        for c in 0..2 {
            for i in 0..3 {
                for j in 0..=i {
                    let (mut p, mut m) = (iv.clone(), iv.clone());
                    if i == j {
                        p.s_factors[c][(i, i)] *= h.exp();
                        m.s_factors[c][(i, i)] *= (-h).exp();
                    } else {
                        p.s_factors[c][(i, j)] += h;
                        m.s_factors[c][(i, j)] -= h;
                    }
                    check(
                        g.s[c][(i, j)],
                        (obj(&x, &p, &kernel) - obj(&x, &m, &kernel)) / (2.0 * h),
                    );
                }
            }
        }
        for d in 0..2 {
            let mut lp = kernel.log_lengthscales().to_vec();
            let mut lm = lp.clone();
            lp[d] += h;
            lm[d] -= h;
            let kp = KernelParams::from_log(lp, kernel.log_variance()).unwrap();
            let km = KernelParams::from_log(lm, kernel.log_variance()).unwrap();
            check(
                g.log_lengthscales[d],
                (obj(&x, &iv, &kp) - obj(&x, &iv, &km)) / (2.0 * h),
            );
        }
        let kp = KernelParams::from_log(kernel.log_lengthscales().to_vec(), kernel.log_variance() + h).unwrap();
        let km = KernelParams::from_log(kernel.log_lengthscales().to_vec(), kernel.log_variance() - h).unwrap();
        check(g.log_variance, (obj(&x, &iv, &kp) - obj(&x, &iv, &km)) / (2.0 * h));
    }
}
