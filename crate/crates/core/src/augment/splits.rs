//! Leave-one-out-per-class train/test splits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::rng::substream;

/// Upper bound on enumerated plans.
pub const MAX_PLANS: usize = 1 << 22;

/// One split: for each class, the index (within that class) of the single
/// held-out test sample. All other samples of the class are training data.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Position of the plan in enumeration order.
    pub split_id: usize,
    pub samples_per_class: usize,
    pub held_out: Vec<usize>,
}

impl SplitPlan {
    pub fn classes(&self) -> usize {
        self.held_out.len()
    }

    pub fn test_index(&self, class: usize) -> usize {
        self.held_out[class]
    }

    pub fn train_indices(&self, class: usize) -> Vec<usize> {
        (0..self.samples_per_class)
            .filter(|&i| i != self.held_out[class])
            .collect()
    }

    /// Maps per-class member lists (dataset indices of each class, in order)
    /// to `(train, test)` dataset indices.
    pub fn partition(&self, members: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (c, m) in members.iter().enumerate() {
            for (i, &idx) in m.iter().enumerate().take(self.samples_per_class) {
                if i == self.held_out[c] {
                    test.push(idx);
                } else {
                    train.push(idx);
                }
            }
        }
        (train, test)
    }

    pub fn hamming(&self, other: &SplitPlan) -> usize {
        self.held_out
            .iter()
            .zip(&other.held_out)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// All `samples_per_class ^ classes` plans in lexicographic order of their
/// held-out vectors (class 0 most significant).
pub fn enumerate_splits(
    samples_per_class: usize,
    classes: usize,
) -> Result<Vec<SplitPlan>, AugmentError> {
    if samples_per_class < 2 {
        return Err(AugmentError::InsufficientSamples {
            need: 2,
            got: samples_per_class,
        });
    }
    let total = u32::try_from(classes)
        .ok()
        .and_then(|c| samples_per_class.checked_pow(c))
        .filter(|&t| t <= MAX_PLANS)
        .ok_or_else(|| {
            AugmentError::InvalidConfig(format!(
                "{samples_per_class}^{classes} splits exceed the enumeration limit"
            ))
        })?;
    Ok((0..total)
        .map(|id| {
            let mut held_out = vec![0; classes];
            let mut rest = id;
            for slot in held_out.iter_mut().rev() {
                *slot = rest % samples_per_class;
                rest /= samples_per_class;
            }
            SplitPlan {
                split_id: id,
                samples_per_class,
                held_out,
            }
        })
        .collect())
}

/// Greedy max-min Hamming selection of `count` plans.
///
/// The first plan is drawn at random; each further pick maximises its
/// minimum Hamming distance to the plans chosen so far, with ties broken
/// uniformly at random. The result is a pure function of the inputs.
pub fn select_diverse(plans: &[SplitPlan], count: usize, seed: u64) -> Vec<SplitPlan> {
    let count = count.min(plans.len());
    if count == 0 {
        return Vec::new();
    }
    let mut rng = substream(seed, &[0x5e1ec7]);
    let mut chosen = vec![false; plans.len()];
    let mut min_dist = vec![usize::MAX; plans.len()];
    let mut out = Vec::with_capacity(count);
    let mut pick = rng.random_range(0..plans.len());
    loop {
        chosen[pick] = true;
        out.push(plans[pick].clone());
        if out.len() == count {
            break;
        }
        for (i, p) in plans.iter().enumerate() {
            if !chosen[i] {
                min_dist[i] = min_dist[i].min(p.hamming(&plans[pick]));
            }
        }
        let best = (0..plans.len())
            .filter(|&i| !chosen[i])
            .map(|i| min_dist[i])
            .max()
            .expect("unchosen plans remain");
        let ties: Vec<usize> = (0..plans.len())
            .filter(|&i| !chosen[i] && min_dist[i] == best)
            .collect();
        pick = ties[rng.random_range(0..ties.len())];
    }
    out
}
