//! Observation encoding shared by the learning agents.
//!
//! The network input is the single scalar `f(x) / n`. Because only `n + 1`
//! distinct observations exist, batches are collapsed onto their distinct
//! states before running a network; per-sample gradients are then summed
//! back onto those rows, which gives the same loss gradient as running every
//! sample separately.

use crate::neural::Matrix;

pub fn encode_state(fitness: usize, n: usize) -> f64 {
    fitness as f64 / n as f64
}

/// Inverse of [`encode_state`].
pub fn decode_state(state: f64, n: usize) -> usize {
    (state * n as f64).round() as usize
}

/// Distinct states of a batch and the row each sample maps to.
#[derive(Clone, Debug)]
pub struct StateGroups {
    pub rows: Matrix,
    pub row_of: Vec<usize>,
}

impl StateGroups {
    pub fn new(states: impl IntoIterator<Item = f64>, n: usize) -> Self {
        let mut slot = vec![usize::MAX; n + 1];
        let mut unique = Vec::new();
        let row_of = states
            .into_iter()
            .map(|s| {
                let key = decode_state(s, n).min(n);
                if slot[key] == usize::MAX {
                    slot[key] = unique.len();
                    unique.push(s);
                }
                slot[key]
            })
            .collect();
        Self {
            rows: Matrix::column(unique),
            row_of,
        }
    }

    pub fn unique_count(&self) -> usize {
        self.rows.rows()
    }
}
