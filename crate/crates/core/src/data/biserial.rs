//! Point-biserial feature ranking for two-class problems.

use log::warn;

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// A point-biserial score; `degenerate` marks a constant feature or a
/// single-class label vector, for which the score is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiserialScore {
    pub r: f64,
    pub degenerate: bool,
}

/// `r = (mean_1 - mean_0) / s_N * sqrt(n_0 n_1 / N^2)` with `s_N` the
/// population standard deviation of the feature.
pub fn point_biserial(feature: &[f64], labels: &[bool]) -> Result<BiserialScore> {
    if feature.len() != labels.len() {
        return Err(Error::dims("point_biserial: labels", feature.len(), labels.len()));
    }
    let n = feature.len();
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = n - n1;
    let degenerate = BiserialScore {
        r: 0.0,
        degenerate: true,
    };
    if n0 == 0 || n1 == 0 {
        return Ok(degenerate);
    }
    let nf = n as f64;
    let mean = feature.iter().sum::<f64>() / nf;
    let var = feature.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let sd = var.sqrt();
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        return Ok(degenerate);
    }
    let (mut s0, mut s1) = (0.0, 0.0);
    for (x, &l) in feature.iter().zip(labels) {
        if l {
            s1 += x;
        } else {
            s0 += x;
        }
    }
    let (m0, m1) = (s0 / n0 as f64, s1 / n1 as f64);
    let r = (m1 - m0) / sd * ((n0 as f64 * n1 as f64) / (nf * nf)).sqrt();
    Ok(BiserialScore {
        // rounding can push a perfect correlation a hair past 1
        r: r.clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRanking {
    /// Score per original feature index.
    pub scores: Vec<f64>,
    /// Feature indices sorted by descending `|r|`, ties by lower index.
    pub order: Vec<usize>,
    /// Features whose score was degenerate.
    pub degenerate: Vec<usize>,
}

impl FeatureRanking {
    pub fn top(&self, k: usize) -> Vec<usize> {
        let mut keep: Vec<usize> = self.order.iter().take(k).copied().collect();
        keep.sort_unstable();
        keep
    }
}

pub fn rank_features(data: &Dataset) -> Result<FeatureRanking> {
    if data.k() != 2 {
        return Err(Error::InvalidData(format!(
            "point-biserial ranking needs exactly 2 classes, dataset has {}",
            data.k()
        )));
    }
    let labels: Vec<bool> = data.labels().iter().map(|&l| l != 0).collect();
    let y = data.y_continuous();
    let mut scores = Vec::with_capacity(data.d());
    let mut degenerate = Vec::new();
    for j in 0..data.d() {
        let col: Vec<f64> = y.column(j).iter().copied().collect();
        let s = point_biserial(&col, &labels)?;
        if s.degenerate {
            warn!(
                "feature `{}` is constant or labels are single-class; score set to 0",
                data.feature_names()[j]
            );
            degenerate.push(j);
        }
        scores.push(s.r);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    Ok(FeatureRanking {
        scores,
        order,
        degenerate,
    })
}

/// Keeps the `k_features` columns with the largest `|r|`, in their
/// original column order, and returns the full ranking alongside.
pub fn select_top_k(data: &Dataset, k_features: usize) -> Result<(Dataset, FeatureRanking)> {
    if k_features == 0 || k_features > data.d() {
        return Err(Error::param(
            "k_features",
            format!("must be in 1..={}, got {k_features}", data.d()),
        ));
    }
    let ranking = rank_features(data)?;
    let reduced = data.select_columns(&ranking.top(k_features))?;
    Ok((reduced, ranking))
}
