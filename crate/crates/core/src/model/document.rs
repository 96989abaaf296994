//! Versioned JSON form of [`ModelState`]. Matrices are stored row-major
//! with explicit shapes; `f64` values round-trip exactly.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::state::{InducingVariational, LatentVariational, ModelConfig, ModelState, NoiseParams, Preprocessing};
use crate::error::{Error, Result};
use crate::math::KernelParams;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "ldgd-model";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter());
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn into_dmatrix(self, what: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Format(format!(
                "{what}: {}x{} matrix carries {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Latent {
    mu: Matrix,
    log_scale: Matrix,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Inducing {
    z: Matrix,
    m: Matrix,
    s_factors: Vec<Matrix>,
}

impl Inducing {
    fn from_state(iv: &InducingVariational) -> Self {
        Self {
            z: Matrix::from_dmatrix(&iv.z),
            m: Matrix::from_dmatrix(&iv.m),
            s_factors: iv.s_factors.iter().map(Matrix::from_dmatrix).collect(),
        }
    }

    fn into_state(self, what: &str) -> Result<InducingVariational> {
        let s = self
            .s_factors
            .into_iter()
            .map(|m| m.into_dmatrix(what))
            .collect::<Result<Vec<_>>>()?;
        InducingVariational::new(self.z.into_dmatrix(what)?, self.m.into_dmatrix(what)?, s)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    version: u32,
    config: ModelConfig,
    latent: Latent,
    inducing_cont: Inducing,
    inducing_disc: Inducing,
    kernel_cont: KernelParams,
    kernel_disc: KernelParams,
    log_sigma: Vec<f64>,
    anchors: Matrix,
    preprocessing: Option<Preprocessing>,
}

pub fn model_to_json(state: &ModelState) -> Result<String> {
    let doc = Document {
        format: FORMAT_TAG.to_string(),
        version: MODEL_FORMAT_VERSION,
        config: state.config.clone(),
        latent: Latent {
            mu: Matrix::from_dmatrix(&state.latent.mu),
            log_scale: Matrix::from_dmatrix(&state.latent.log_scale),
        },
        inducing_cont: Inducing::from_state(&state.inducing_cont),
        inducing_disc: Inducing::from_state(&state.inducing_disc),
        kernel_cont: state.kernel_cont.clone(),
        kernel_disc: state.kernel_disc.clone(),
        log_sigma: state.noise.log_sigma.clone(),
        anchors: Matrix::from_dmatrix(&state.anchors),
        preprocessing: state.preprocessing.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json(text: &str) -> Result<ModelState> {
    let doc: Document = serde_json::from_str(text).map_err(|e| Error::Format(format!("model document: {e}")))?;
    if doc.format != FORMAT_TAG {
        return Err(Error::Format(format!(
            "expected format \"{FORMAT_TAG}\", found \"{}\"",
            doc.format
        )));
    }
    if doc.version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {} (this build reads {MODEL_FORMAT_VERSION})",
            doc.version
        )));
    }
    let state = ModelState {
        latent: LatentVariational::new(
            doc.latent.mu.into_dmatrix("latent.mu")?,
            doc.latent.log_scale.into_dmatrix("latent.log_scale")?,
        )?,
        inducing_cont: doc.inducing_cont.into_state("inducing_cont")?,
        inducing_disc: doc.inducing_disc.into_state("inducing_disc")?,
        kernel_cont: doc.kernel_cont,
        kernel_disc: doc.kernel_disc,
        noise: NoiseParams {
            log_sigma: doc.log_sigma,
        },
        config: doc.config,
        anchors: doc.anchors.into_dmatrix("anchors")?,
        preprocessing: doc.preprocessing,
    };
    state.validate()?;
    Ok(state)
}

pub fn save_model(path: &Path, state: &ModelState) -> Result<()> {
    std::fs::write(path, model_to_json(state)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
