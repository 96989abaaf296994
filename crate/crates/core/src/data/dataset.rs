use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Continuous observations paired with one class label per trial.
///
/// Labels are stored as class indices; `y_discrete()` expands them to the
/// one-hot `N x K` matrix, so every row has exactly one hot entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trial_ids: Vec<String>,
    y_continuous: DMatrix<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        trial_ids: Vec<String>,
        y_continuous: DMatrix<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let (n, d) = y_continuous.shape();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no trials".into()));
        }
        if d < 1 {
            return Err(Error::InvalidData("need at least 1 feature column".into()));
        }
        if n_classes < 2 {
            return Err(Error::InvalidData(format!("need at least 2 classes, got {n_classes}")));
        }
        if labels.len() != n {
            return Err(Error::dims("dataset labels", n, labels.len()));
        }
        if trial_ids.len() != n {
            return Err(Error::dims("dataset trial ids", n, trial_ids.len()));
        }
        if feature_names.len() != d {
            return Err(Error::dims("dataset feature names", d, feature_names.len()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::InvalidData(format!(
                "row {i}: label {l} outside [0, {n_classes})"
            )));
        }
        for i in 0..n {
            for j in 0..d {
                if !y_continuous[(i, j)].is_finite() {
                    return Err(Error::InvalidData(format!(
                        "non-finite value at row {i}, column {j} ({})",
                        feature_names[j]
                    )));
                }
            }
        }
        Ok(Self {
            trial_ids,
            y_continuous,
            labels,
            n_classes,
            feature_names,
        })
    }

    /// Builds a dataset with generated trial ids (`t0`, `t1`, ...) and
    /// feature names (`f0`, `f1`, ...).
    pub fn from_parts(y_continuous: DMatrix<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let ids = (0..y_continuous.nrows()).map(|i| format!("t{i}")).collect();
        let names = (0..y_continuous.ncols()).map(|j| format!("f{j}")).collect();
        Self::new(ids, y_continuous, labels, n_classes, names)
    }

    pub fn n(&self) -> usize {
        self.y_continuous.nrows()
    }

    pub fn d(&self) -> usize {
        self.y_continuous.ncols()
    }

    pub fn k(&self) -> usize {
        self.n_classes
    }

    pub fn y_continuous(&self) -> &DMatrix<f64> {
        &self.y_continuous
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn trial_ids(&self) -> &[String] {
        &self.trial_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn y_discrete(&self) -> DMatrix<f64> {
        one_hot(&self.labels, self.n_classes)
    }

    /// Rows in the given order. Needs at least two rows.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let y = DMatrix::from_fn(rows.len(), self.d(), |i, j| self.y_continuous[(rows[i], j)]);
        Self::new(
            rows.iter().map(|&i| self.trial_ids[i].clone()).collect(),
            y,
            rows.iter().map(|&i| self.labels[i]).collect(),
            self.n_classes,
            self.feature_names.clone(),
        )
    }

    /// Keeps the given feature columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.d()) {
            return Err(Error::InvalidData(format!("column {c} out of range")));
        }
        let y = DMatrix::from_fn(self.n(), cols.len(), |i, j| self.y_continuous[(i, cols[j])]);
        Self::new(
            self.trial_ids.clone(),
            y,
            self.labels.clone(),
            self.n_classes,
            cols.iter().map(|&c| self.feature_names[c].clone()).collect(),
        )
    }

    pub fn with_continuous(&self, y: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.trial_ids.clone(),
            y,
            self.labels.clone(),
            self.n_classes,
            self.feature_names.clone(),
        )
    }
}

pub fn one_hot(labels: &[usize], k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(labels.len(), k);
    for (i, &l) in labels.iter().enumerate() {
        out[(i, l)] = 1.0;
    }
    out
}

/// Converts a one-hot matrix back to class indices, rejecting rows that do
/// not have exactly one entry equal to 1 (the rest 0).
pub fn labels_from_one_hot(y: &DMatrix<f64>) -> Result<Vec<usize>> {
    (0..y.nrows())
        .map(|i| {
            let row = y.row(i);
            let hot: Vec<usize> = (0..y.ncols()).filter(|&j| row[j] == 1.0).collect();
            let rest_zero = (0..y.ncols()).all(|j| row[j] == 1.0 || row[j] == 0.0);
            match hot.as_slice() {
                [j] if rest_zero => Ok(*j),
                _ => Err(Error::InvalidData(format!("row {i} is not one-hot"))),
            }
        })
        .collect()
}
