//! Stratified k-fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    assignments: Vec<usize>,
    k_folds: usize,
}

impl FoldSplit {
    /// Every index in its own fold.
    pub fn leave_one_out(n: usize) -> Self {
        Self {
            assignments: (0..n).collect(),
            k_folds: n,
        }
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn k_folds(&self) -> usize {
        self.k_folds
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Shuffles each class, concatenates the classes and deals the result
/// round-robin into folds. Fold sizes then differ by at most one and each
/// class lands in each fold `floor` or `ceil` of its share.
pub fn kfold_split(labels: &[usize], k_folds: usize, seed: u64) -> Result<FoldSplit> {
    if k_folds < 2 {
        return Err(Error::param("k_folds", format!("must be at least 2, got {k_folds}")));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < k_folds {
            return Err(Error::InvalidData(format!(
                "class {c} has {} members, fewer than {k_folds} folds",
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; labels.len()];
    let mut pos = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignments[i] = pos % k_folds;
            pos += 1;
        }
    }
    Ok(FoldSplit { assignments, k_folds })
}
