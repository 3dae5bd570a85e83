//! Adam optimizer with lazy (sparse) row updates: only rows carrying a
//! gradient in a given step have their moment estimates advanced.

use std::collections::BTreeMap;

use super::TrainError;
use crate::mat::Mat;

/// Adam moment decay rates and the denominator fuzz term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates plus the global step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Mat,
    second: Mat,
    step: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState {
            first: Mat::zeros(rows, cols),
            second: Mat::zeros(rows, cols),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam step over the rows present in `grads`,
    /// applied in ascending row order. Rows without gradients keep their
    /// (stale) moments and are not touched.
    pub fn apply(
        &mut self,
        params: &mut Mat,
        grads: &BTreeMap<usize, Vec<f64>>,
        learning_rate: f64,
        hyper: &AdamHyper,
    ) -> Result<(), TrainError> {
        self.step += 1;
        let bias1 = 1.0 - hyper.beta1.powi(self.step as i32);
        let bias2 = 1.0 - hyper.beta2.powi(self.step as i32);
        for (&row, grad) in grads {
            if row >= params.rows() {
                return Err(TrainError::RowOutOfRange {
                    row,
                    rows: params.rows(),
                });
            }
            if grad.len() != params.cols() {
                return Err(TrainError::DimensionMismatch {
                    expected: params.cols(),
                    found: grad.len(),
                });
            }
            let m = self.first.row_mut(row);
            for (mv, &g) in m.iter_mut().zip(grad) {
                *mv = hyper.beta1 * *mv + (1.0 - hyper.beta1) * g;
            }
            let v = self.second.row_mut(row);
            for (vv, &g) in v.iter_mut().zip(grad) {
                *vv = hyper.beta2 * *vv + (1.0 - hyper.beta2) * g * g;
            }
            let target = params.row_mut(row);
            for (col, value) in target.iter_mut().enumerate() {
                let m_hat = self.first.get(row, col) / bias1;
                let v_hat = self.second.get(row, col) / bias2;
                *value -= learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(grad: f64) -> BTreeMap<usize, Vec<f64>> {
        let mut map = BTreeMap::new();
        map.insert(0, vec![grad]);
        map
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        for g in [0.5, -2.0, 10.0] {
            let mut params = Mat::from_rows(&[vec![1.0]]);
            let mut state = AdamState::new(1, 1);
            state
                .apply(&mut params, &single(g), 0.01, &AdamHyper::default())
                .unwrap();
            let delta = params.get(0, 0) - 1.0;
            assert_abs_diff_eq!(delta, -0.01 * g.signum(), epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = Mat::from_rows(&[vec![1.0, -2.0], vec![3.0, 4.0]]);
        let before = params.clone();
        let mut state = AdamState::new(2, 2);
        let mut grads = BTreeMap::new();
        grads.insert(0, vec![0.0, 0.0]);
        state
            .apply(&mut params, &grads, 0.1, &AdamHyper::default())
            .unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn untouched_rows_never_move() {
        let mut params = Mat::from_rows(&[vec![1.0], vec![5.0]]);
        let mut state = AdamState::new(2, 1);
        for _ in 0..10 {
            state
                .apply(&mut params, &single(1.0), 0.1, &AdamHyper::default())
                .unwrap();
        }
        assert_eq!(params.get(1, 0), 5.0);
        assert!(params.get(0, 0) < 1.0);
    }

    #[test]
    fn descends_a_quadratic() {
        // f(x) = x^2 from x = 1: |x| strictly decreasing toward 0
        let mut params = Mat::from_rows(&[vec![1.0]]);
        let mut state = AdamState::new(1, 1);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let grad = 2.0 * params.get(0, 0);
            state
                .apply(&mut params, &single(grad), 0.1, &AdamHyper::default())
                .unwrap();
            let x = params.get(0, 0);
            assert!(x.abs() < prev.abs(), "not descending: {x} vs {prev}");
            prev = x;
        }
        assert!(prev.abs() < 0.2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = Mat::from_rows(&[vec![1.0, 2.0]]);
        let mut state = AdamState::new(1, 2);
        let mut grads = BTreeMap::new();
        grads.insert(0, vec![1.0]);
        assert!(matches!(
            state.apply(&mut params, &grads, 0.1, &AdamHyper::default()),
            Err(TrainError::DimensionMismatch { .. })
        ));
        let mut grads = BTreeMap::new();
        grads.insert(7, vec![1.0, 1.0]);
        assert!(matches!(
            state.apply(&mut params, &grads, 0.1, &AdamHyper::default()),
            Err(TrainError::RowOutOfRange { .. })
        ));
    }
}
