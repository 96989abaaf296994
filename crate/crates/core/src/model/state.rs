use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::math::KernelParams;

/// `q(X) = prod_i N(mu_i, diag(exp(log_scale_i))^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVariational {
    pub mu: DMatrix<f64>,
    pub log_scale: DMatrix<f64>,
}

impl LatentVariational {
    pub fn new(mu: DMatrix<f64>, log_scale: DMatrix<f64>) -> Result<Self> {
        let l = Self { mu, log_scale };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.shape() != self.log_scale.shape() {
            return Err(Error::dims(
                "latent log_scale rows",
                self.mu.nrows(),
                self.log_scale.nrows(),
            ));
        }
        if self.mu.ncols() == 0 {
            return Err(Error::param("latent", "latent dimension must be at least 1"));
        }
        if !self.mu.iter().all(|v| v.is_finite()) {
            return Err(Error::param("latent.mu", "non-finite entry"));
        }
        if !self.log_scale.iter().all(|v| v.exp() > 0.0 && v.exp().is_finite()) {
            return Err(Error::param("latent.log_scale", "scales must be positive and finite"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.mu.nrows()
    }

    pub fn q(&self) -> usize {
        self.mu.ncols()
    }

    pub fn scale(&self) -> DMatrix<f64> {
        self.log_scale.map(f64::exp)
    }
}

/// Inducing locations and a Gaussian `q(u_c) = N(m_c, L_c L_c^T)` per output.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingVariational {
    pub z: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub s_factors: Vec<DMatrix<f64>>,
}

impl InducingVariational {
    pub fn new(z: DMatrix<f64>, m: DMatrix<f64>, s_factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let iv = Self { z, m, s_factors };
        iv.validate()?;
        Ok(iv)
    }

    /// Zero means and `scale * I` covariance factors.
    pub fn with_identity(z: DMatrix<f64>, outputs: usize, scale: f64) -> Result<Self> {
        let m = z.nrows();
        Self::new(
            z,
            DMatrix::zeros(m, outputs),
            vec![DMatrix::identity(m, m) * scale; outputs],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.z.nrows();
        if m == 0 {
            return Err(Error::param("inducing.z", "need at least one inducing point"));
        }
        if self.m.nrows() != m {
            return Err(Error::dims("inducing.m rows", m, self.m.nrows()));
        }
        if self.s_factors.len() != self.m.ncols() {
            return Err(Error::dims(
                "inducing.s_factors count",
                self.m.ncols(),
                self.s_factors.len(),
            ));
        }
        for (c, l) in self.s_factors.iter().enumerate() {
            if l.shape() != (m, m) {
                return Err(Error::dims(format!("inducing.s_factors[{c}] rows"), m, l.nrows()));
            }
            for i in 0..m {
                if !(l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
                    return Err(Error::param(
                        format!("inducing.s_factors[{c}]"),
                        "diagonal must be positive",
                    ));
                }
                for j in i + 1..m {
                    if l[(i, j)] != 0.0 {
                        return Err(Error::param(
                            format!("inducing.s_factors[{c}]"),
                            "must be lower triangular",
                        ));
                    }
                }
            }
        }
        if !self.z.iter().chain(self.m.iter()).all(|v| v.is_finite()) {
            return Err(Error::param("inducing", "non-finite entry"));
        }
        Ok(())
    }

    pub fn num_inducing(&self) -> usize {
        self.z.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.m.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn covariance(&self, c: usize) -> DMatrix<f64> {
        &self.s_factors[c] * self.s_factors[c].transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    pub log_sigma: Vec<f64>,
}

impl NoiseParams {
    pub fn new(sigma: &[f64]) -> Result<Self> {
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::param(
                "noise.sigma",
                format!("must be positive and finite, got {s}"),
            ));
        }
        Ok(Self {
            log_sigma: sigma.iter().map(|s| s.ln()).collect(),
        })
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub num_inducing: usize,
    pub mc_samples_discrete: usize,
    pub seed: u64,
}

/// How raw dataset columns map into the model's observation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub selected_features: Vec<String>,
    pub standardizer: Standardizer,
}

/// Complete model state: variational posteriors, kernel and noise
/// parameters, plus the training observations (`anchors`, in model space)
/// whose rows line up with `latent.mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub latent: LatentVariational,
    pub inducing_cont: InducingVariational,
    pub inducing_disc: InducingVariational,
    pub kernel_cont: KernelParams,
    pub kernel_disc: KernelParams,
    pub noise: NoiseParams,
    pub config: ModelConfig,
    pub anchors: DMatrix<f64>,
    pub preprocessing: Option<Preprocessing>,
}

/// Parameter groups in packing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    LatentMu,
    LatentLogScale,
    ContZ,
    ContM,
    ContSFactors,
    DiscZ,
    DiscM,
    DiscSFactors,
    KernelCont,
    KernelDisc,
    NoiseLogSigma,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 11] = [
        ParamGroup::LatentMu,
        ParamGroup::LatentLogScale,
        ParamGroup::ContZ,
        ParamGroup::ContM,
        ParamGroup::ContSFactors,
        ParamGroup::DiscZ,
        ParamGroup::DiscM,
        ParamGroup::DiscSFactors,
        ParamGroup::KernelCont,
        ParamGroup::KernelDisc,
        ParamGroup::NoiseLogSigma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::LatentMu => "latent.mu",
            ParamGroup::LatentLogScale => "latent.log_scale",
            ParamGroup::ContZ => "inducing_cont.z",
            ParamGroup::ContM => "inducing_cont.m",
            ParamGroup::ContSFactors => "inducing_cont.s_factors",
            ParamGroup::DiscZ => "inducing_disc.z",
            ParamGroup::DiscM => "inducing_disc.m",
            ParamGroup::DiscSFactors => "inducing_disc.s_factors",
            ParamGroup::KernelCont => "kernel_cont",
            ParamGroup::KernelDisc => "kernel_disc",
            ParamGroup::NoiseLogSigma => "noise.log_sigma",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }
}

impl std::fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

fn read_row_major(src: &[f64], m: &mut DMatrix<f64>) -> usize {
    let c = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..c {
            m[(i, j)] = src[i * c + j];
        }
    }
    m.len()
}

/// Lower triangle, row by row; `log_diag` stores `ln L_ii` on the diagonal.
pub(crate) fn push_lower(out: &mut Vec<f64>, l: &DMatrix<f64>, log_diag: bool) {
    for i in 0..l.nrows() {
        for j in 0..=i {
            out.push(if i == j && log_diag { l[(i, i)].ln() } else { l[(i, j)] });
        }
    }
}

fn read_lower(src: &[f64], l: &mut DMatrix<f64>) -> usize {
    let mut k = 0;
    for i in 0..l.nrows() {
        for j in 0..=i {
            l[(i, j)] = if i == j { src[k].exp() } else { src[k] };
            k += 1;
        }
    }
    k
}

fn inducing_len(iv: &InducingVariational) -> [usize; 3] {
    let m = iv.num_inducing();
    [iv.z.len(), iv.m.len(), iv.outputs() * m * (m + 1) / 2]
}

impl ModelState {
    pub fn n(&self) -> usize {
        self.latent.n()
    }

    pub fn q(&self) -> usize {
        self.latent.q()
    }

    pub fn d(&self) -> usize {
        self.inducing_cont.outputs()
    }

    pub fn k(&self) -> usize {
        self.inducing_disc.outputs()
    }

    pub fn validate(&self) -> Result<()> {
        self.latent.validate()?;
        self.inducing_cont.validate()?;
        self.inducing_disc.validate()?;
        self.kernel_cont.validate()?;
        self.kernel_disc.validate()?;
        let q = self.q();
        for (what, got) in [
            ("inducing_cont.z columns", self.inducing_cont.q()),
            ("inducing_disc.z columns", self.inducing_disc.q()),
            ("kernel_cont lengthscales", self.kernel_cont.dim()),
            ("kernel_disc lengthscales", self.kernel_disc.dim()),
            ("config.latent_dim", self.config.latent_dim),
        ] {
            if got != q {
                return Err(Error::dims(what, q, got));
            }
        }
        if self.noise.log_sigma.len() != self.d() {
            return Err(Error::dims(
                "noise.log_sigma length",
                self.d(),
                self.noise.log_sigma.len(),
            ));
        }
        if !self
            .noise
            .log_sigma
            .iter()
            .all(|l| l.exp() > 0.0 && l.exp().is_finite())
        {
            return Err(Error::param("noise.log_sigma", "sigma must be positive and finite"));
        }
        if self.anchors.shape() != (self.n(), self.d()) {
            return Err(Error::dims("anchors rows", self.n(), self.anchors.nrows()));
        }
        if self.k() < 2 {
            return Err(Error::param("inducing_disc", "need at least 2 classes"));
        }
        Ok(())
    }

    /// Index ranges of each parameter group in the packed vector.
    pub fn layout(&self) -> Vec<(ParamGroup, Range<usize>)> {
        let [cz, cm, cs] = inducing_len(&self.inducing_cont);
        let [dz, dm, ds] = inducing_len(&self.inducing_disc);
        let sizes = [
            self.latent.mu.len(),
            self.latent.log_scale.len(),
            cz,
            cm,
            cs,
            dz,
            dm,
            ds,
            self.kernel_cont.dim() + 1,
            self.kernel_disc.dim() + 1,
            self.noise.log_sigma.len(),
        ];
        let mut start = 0;
        ParamGroup::ALL
            .iter()
            .zip(sizes)
            .map(|(&g, len)| {
                let r = start..start + len;
                start += len;
                (g, r)
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layout().last().map_or(0, |(_, r)| r.end)
    }

    /// All free parameters as one unconstrained vector.
    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        push_row_major(&mut out, &self.latent.mu);
        push_row_major(&mut out, &self.latent.log_scale);
        for iv in [&self.inducing_cont, &self.inducing_disc] {
            push_row_major(&mut out, &iv.z);
            push_row_major(&mut out, &iv.m);
            for l in &iv.s_factors {
                push_lower(&mut out, l, true);
            }
        }
        for k in [&self.kernel_cont, &self.kernel_disc] {
            out.extend_from_slice(k.log_lengthscales());
            out.push(k.log_variance());
        }
        out.extend_from_slice(&self.noise.log_sigma);
        out
    }

    /// Inverse of [`pack`](Self::pack).
    pub fn unpack(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::dims("packed parameter length", self.num_params(), params.len()));
        }
        let mut at = 0;
        at += read_row_major(&params[at..], &mut self.latent.mu);
        at += read_row_major(&params[at..], &mut self.latent.log_scale);
        for iv in [&mut self.inducing_cont, &mut self.inducing_disc] {
            at += read_row_major(&params[at..], &mut iv.z);
            at += read_row_major(&params[at..], &mut iv.m);
            for l in iv.s_factors.iter_mut() {
                at += read_lower(&params[at..], l);
            }
        }
        for k in [&mut self.kernel_cont, &mut self.kernel_disc] {
            let q = k.dim();
            k.log_lengthscales_mut().copy_from_slice(&params[at..at + q]);
            k.set_log_variance(params[at + q]);
            at += q + 1;
        }
        let d = self.noise.log_sigma.len();
        self.noise.log_sigma.copy_from_slice(&params[at..at + d]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::random_state;

    #[test]
    fn pack_unpack_round_trip() {
        let s = random_state(5, 7, 3, 2, 4, 2);
        let p = s.pack();
        assert_eq!(p.len(), s.num_params());
        let mut t = s.clone();
        t.unpack(&vec![0.0; p.len()]).unwrap();
        t.unpack(&p).unwrap();
        for (a, b) in s.pack().iter().zip(t.pack()) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + a.abs()));
        }
        let layout = s.layout();
        assert_eq!(layout.len(), ParamGroup::ALL.len());
        assert_eq!(layout[0].1, 0..14);
    }

    #[test]
    fn group_names_round_trip() {
        for g in ParamGroup::ALL {
            assert_eq!(ParamGroup::from_name(g.name()), Some(g));
        }
    }

    #[test]
    fn validation_catches_shape_errors() {
        let mut s = random_state(1, 6, 2, 2, 3, 2);
        assert!(s.validate().is_ok());
        s.noise.log_sigma.pop();
        assert!(s.validate().is_err());
        let mut s = random_state(1, 6, 2, 2, 3, 2);
        s.inducing_disc.s_factors[0][(0, 1)] = 0.3;
        assert!(s.validate().is_err());
    }
}
