use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::latent::TestLatent;
use crate::error::{Error, Result};
use crate::math::gaussian::{sigmoid, standard_normal_matrix};
use crate::model::svgp::GpPath;
use crate::model::ModelState;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Rows sum to one.
    pub class_probs: DMatrix<f64>,
    pub predicted: Vec<usize>,
    pub latent: TestLatent,
}

/// Row argmax, lowest index on ties.
fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, v) in row.enumerate() {
        if v > best.0 {
            best = (v, k);
        }
    }
    best.1
}

/// Normalizes per-class Bernoulli means into class probabilities.
pub(crate) fn normalize_rows(means: &DMatrix<f64>) -> DMatrix<f64> {
    let k = means.ncols();
    let mut p = means.clone();
    for mut row in p.row_iter_mut() {
        let s: f64 = row.sum();
        if s > 0.0 && s.is_finite() {
            row /= s;
        } else {
            row.fill(1.0 / k as f64);
        }
    }
    p
}

/// Averages `sigmoid(f)` over `n_samples` joint draws of the latent and of
/// the discrete-path marginals, then normalizes across classes.
pub fn predict_labels(model: &ModelState, latent: &TestLatent, n_samples: usize, seed: u64) -> Result<DecodeResult> {
    if latent.q() != model.q() {
        return Err(Error::dims("predict: latent dimension", model.q(), latent.q()));
    }
    if n_samples == 0 {
        return Err(Error::param("n_samples", "must be at least 1"));
    }
    let (n, q, k) = (latent.n(), model.q(), model.k());
    let path = GpPath::new(&model.inducing_disc, &model.kernel_disc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = latent.scale();
    let mut means = DMatrix::zeros(n, k);
    for _ in 0..n_samples {
        let eps = standard_normal_matrix(&mut rng, n, q);
        let x = &latent.mu_star + scale.component_mul(&eps);
        let marg = path.forward(&x).marginals;
        let f_eps = standard_normal_matrix(&mut rng, n, k);
        for i in 0..n {
            for c in 0..k {
                let f = marg.mean[(i, c)] + marg.variance[(i, c)].max(0.0).sqrt() * f_eps[(i, c)];
                means[(i, c)] += sigmoid(f);
            }
        }
    }
    means /= n_samples as f64;
    let class_probs = normalize_rows(&means);
    let predicted = class_probs.row_iter().map(|r| argmax(r.iter().copied())).collect();
    Ok(DecodeResult {
        class_probs,
        predicted,
        latent: latent.clone(),
    })
}

/// `trial_id,p_class0..p_class{K-1},predicted[,truth]` as comma-separated text.
pub fn decode_table(result: &DecodeResult, trial_ids: &[String], truth: Option<&[usize]>) -> Result<String> {
    let n = result.predicted.len();
    if trial_ids.len() != n {
        return Err(Error::dims("decode table: trial ids", n, trial_ids.len()));
    }
    if let Some(t) = truth {
        if t.len() != n {
            return Err(Error::dims("decode table: truth labels", n, t.len()));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["trial_id".to_string()];
    header.extend((0..result.class_probs.ncols()).map(|c| format!("p_class{c}")));
    header.push("predicted".into());
    if truth.is_some() {
        header.push("truth".into());
    }
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..n {
        let mut rec = vec![trial_ids[i].clone()];
        rec.extend(result.class_probs.row(i).iter().map(|p| p.to_string()));
        rec.push(result.predicted[i].to_string());
        if let Some(t) = truth {
            rec.push(t[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::KernelParams;
    use crate::model::testing::random_state;

    fn latent(n: usize, q: usize) -> TestLatent {
        TestLatent::new(
            DMatrix::from_fn(n, q, |i, j| (i as f64) * 0.4 - (j as f64) * 0.3),
            DMatrix::from_element(n, q, -1.0),
        )
        .unwrap()
    }

    #[test]
    fn rows_sum_to_one() {
        for seed in 0..10 {
            let model = random_state(seed, 8, 2, 3, 4, 2);
            let r = predict_labels(&model, &latent(6, 2), 50, seed).unwrap();
            for row in r.class_probs.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            }
            assert_eq!(r, predict_labels(&model, &latent(6, 2), 50, seed).unwrap());
        }
    }

    #[test]
    fn flat_discrete_path_is_uniform() {
        let mut model = random_state(2, 8, 2, 3, 4, 2);
        model.inducing_disc.m.fill(0.0);
        model.kernel_disc = KernelParams::from_log(vec![0.0, 0.0], -700.0).unwrap();
        let r = predict_labels(&model, &latent(4, 2), 20, 0).unwrap();
        for p in r.class_probs.iter() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(r.predicted.iter().all(|&c| c == 0));
    }

    #[test]
    fn normalization_arithmetic() {
        let p = normalize_rows(&DMatrix::from_row_slice(1, 2, &[0.9, 0.1]));
        assert!((p[(0, 0)] - 0.9).abs() < 1e-15 && (p[(0, 1)] - 0.1).abs() < 1e-15);
        let p = normalize_rows(&DMatrix::from_row_slice(1, 2, &[0.6, 0.2]));
        assert!((p[(0, 0)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax([0.25, 0.5, 0.5, 0.25].into_iter()), 1);
        assert_eq!(argmax([0.5, 0.5].into_iter()), 0);
    }

    #[test]
    fn table_layout() {
        let model = random_state(1, 8, 2, 2, 4, 2);
        let r = predict_labels(&model, &latent(3, 2), 10, 0).unwrap();
        let ids: Vec<String> = (0..3).map(|i| format!("t{i}")).collect();
        let t = decode_table(&r, &ids, None).unwrap();
        assert!(t.starts_with("trial_id,p_class0,p_class1,predicted\n"));
        assert_eq!(t.lines().count(), 4);
        let t = decode_table(&r, &ids, Some(&[0, 1, 0])).unwrap();
        assert!(t.lines().next().unwrap().ends_with(",truth"));
        assert!(decode_table(&r, &ids[..2], None).is_err());
    }
}
