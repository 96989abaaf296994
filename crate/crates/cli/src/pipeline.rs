//! Steps shared by train, decode and cv: feature selection,
//! standardization, initialization, training and decoding.

use ldgd_core::data::{select_top_k, Standardizer};
use ldgd_core::decode::{decode_latent_from, initial_test_latent, predict_labels, DecodeResult, TestInit};
use ldgd_core::math::KernelParams;
use ldgd_core::model::{ModelState, NoiseParams, Preprocessing};
use ldgd_core::train::{default_num_inducing, fit, init_model, TrainTrace};
use ldgd_core::Dataset;
use nalgebra::DMatrix;

use crate::config::{LatentInit, RunConfig};
use crate::error::{CliError, Result};

/// Training data mapped into model space plus the mapping itself.
pub struct Prepared {
    pub data: Dataset,
    pub preprocessing: Preprocessing,
}

/// Keeps the top `k_features` columns by point-biserial |r| (all columns
/// when `k_features >= D`), then z-scores with this data's statistics.
pub fn prepare_training(raw: &Dataset, k_features: usize) -> Result<Prepared> {
    let selected = if k_features >= raw.d() {
        raw.clone()
    } else {
        select_top_k(raw, k_features)?.0
    };
    let standardizer = Standardizer::fit(selected.y_continuous());
    let data = selected.with_continuous(standardizer.apply(selected.y_continuous())?)?;
    Ok(Prepared {
        preprocessing: Preprocessing {
            selected_features: data.feature_names().to_vec(),
            standardizer,
        },
        data,
    })
}

/// Continuous observations of `raw` in the model's feature space.
pub fn to_model_space(model: &ModelState, raw: &Dataset) -> Result<DMatrix<f64>> {
    let Some(pre) = &model.preprocessing else {
        if raw.d() != model.d() {
            return Err(ldgd_core::Error::DimensionMismatch {
                context: "dataset features vs model".into(),
                expected: model.d(),
                found: raw.d(),
            }
            .into());
        }
        return Ok(raw.y_continuous().clone());
    };
    let names = raw.feature_names();
    let cols = pre
        .selected_features
        .iter()
        .map(|f| {
            names.iter().position(|n| n == f).ok_or_else(|| {
                CliError::Core(ldgd_core::Error::InvalidData(format!(
                    "dataset lacks feature `{f}` used by the model"
                )))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let y = DMatrix::from_fn(raw.n(), cols.len(), |i, j| raw.y_continuous()[(i, cols[j])]);
    Ok(pre.standardizer.apply(&y)?)
}

pub fn initial_state(cfg: &RunConfig, data: &Dataset) -> Result<ModelState> {
    let m = cfg.model.num_inducing.unwrap_or_else(|| default_num_inducing(data.n()));
    let mut state = init_model(data, cfg.model.latent_dim, m, cfg.model.seed)?;
    let q = cfg.model.latent_dim;
    state.kernel_cont = KernelParams::isotropic(q, cfg.model.lengthscale_init, cfg.model.variance_init)?;
    state.kernel_disc = state.kernel_cont.clone();
    let sd = Standardizer::fit(data.y_continuous()).sd;
    let sigma: Vec<f64> = sd.iter().map(|s| cfg.model.noise_init_scale * s).collect();
    state.noise = NoiseParams::new(&sigma)?;
    Ok(state)
}

/// Preprocess, initialize and fit on `raw`.
pub fn train(cfg: &RunConfig, raw: &Dataset) -> Result<(ModelState, TrainTrace)> {
    let prepared = prepare_training(raw, cfg.features.k_features)?;
    let init = initial_state(cfg, &prepared.data)?;
    let (mut model, trace) = fit(&prepared.data, &cfg.train, Some(init))?;
    model.preprocessing = Some(prepared.preprocessing);
    Ok((model, trace))
}

/// Label-free decoding of model-space observations.
pub fn decode(cfg: &RunConfig, model: &ModelState, y_star: &DMatrix<f64>) -> Result<DecodeResult> {
    let init = match cfg.decode.init {
        LatentInit::Nearest => TestInit::Nearest,
        LatentInit::Random => TestInit::Random { seed: cfg.decode.seed },
    };
    let start = initial_test_latent(model, y_star, init)?;
    let latent = decode_latent_from(model, y_star, &cfg.decode.optimizer(), start)?;
    Ok(predict_labels(model, &latent, cfg.decode.n_samples, cfg.decode.seed)?)
}

/// Latent dimensions ordered by discrete-path relevance, most relevant
/// first (ties to the lower index).
pub fn relevance_order(model: &ModelState) -> Vec<usize> {
    let r = model.kernel_disc.relevance();
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    order
}
