//! Contrastive losses over embedding dot products, with analytic
//! gradients for every input vector.
//!
//! All three losses share the convention: positives should score high
//! under the sigmoid of the anchor dot product, negatives low. Gradients
//! are returned per input slot, so a vector appearing twice in `positives`
//! receives two independent gradient entries.

use super::TrainError;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow on either tail.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Loss value, its positive/negative decomposition and the gradients with
/// respect to every input vector.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: f64,
    pub positive_part: f64,
    pub negative_part: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positives: Vec<Vec<f64>>,
    pub grad_negatives: Vec<Vec<f64>>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    for (a, &x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

fn mean_of(vectors: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for v in vectors {
        axpy(&mut mean, 1.0, v);
    }
    let scale = 1.0 / vectors.len() as f64;
    for m in &mut mean {
        *m *= scale;
    }
    mean
}

fn check_inputs(
    anchor: &[f64],
    positives: &[&[f64]],
    negatives: &[&[f64]],
) -> Result<(), TrainError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(TrainError::EmptySampleSet);
    }
    for v in positives.iter().chain(negatives.iter()) {
        if v.len() != anchor.len() {
            return Err(TrainError::DimensionMismatch {
                expected: anchor.len(),
                found: v.len(),
            });
        }
    }
    Ok(())
}

/// Per-sample sigmoid loss: `-mean_j ln s(e_i . e_j)` over positives minus
/// `mean_j ln(1 - s(e_i . e_j))` over negatives.
pub fn loss_individual(
    anchor: &[f64],
    positives: &[&[f64]],
    negatives: &[&[f64]],
) -> Result<LossOutput, TrainError> {
    check_inputs(anchor, positives, negatives)?;
    let dim = anchor.len();
    let inv_p = 1.0 / positives.len() as f64;
    let inv_n = 1.0 / negatives.len() as f64;
    let mut positive_part = 0.0;
    let mut negative_part = 0.0;
    let mut grad_anchor = vec![0.0; dim];
    let mut grad_positives = Vec::with_capacity(positives.len());
    let mut grad_negatives = Vec::with_capacity(negatives.len());
    for v in positives {
        let z = dot(anchor, v);
        positive_part -= inv_p * log_sigmoid(z);
        let dz = -inv_p * (1.0 - sigmoid(z));
        axpy(&mut grad_anchor, dz, v);
        let mut g = vec![0.0; dim];
        axpy(&mut g, dz, anchor);
        grad_positives.push(g);
    }
    for v in negatives {
        let z = dot(anchor, v);
        // ln(1 - s(z)) = ln s(-z)
        negative_part -= inv_n * log_sigmoid(-z);
        let dz = inv_n * sigmoid(z);
        axpy(&mut grad_anchor, dz, v);
        let mut g = vec![0.0; dim];
        axpy(&mut g, dz, anchor);
        grad_negatives.push(g);
    }
    Ok(LossOutput {
        total: positive_part + negative_part,
        positive_part,
        negative_part,
        grad_anchor,
        grad_positives,
        grad_negatives,
    })
}

/// Aggregate sigmoid loss over the mean positive and mean negative
/// embeddings.
pub fn loss_aggregate(
    anchor: &[f64],
    positives: &[&[f64]],
    negatives: &[&[f64]],
) -> Result<LossOutput, TrainError> {
    check_inputs(anchor, positives, negatives)?;
    let dim = anchor.len();
    let pos_mean = mean_of(positives, dim);
    let neg_mean = mean_of(negatives, dim);
    let z_pos = dot(anchor, &pos_mean);
    let z_neg = dot(anchor, &neg_mean);
    let positive_part = -log_sigmoid(z_pos);
    let negative_part = -log_sigmoid(-z_neg);
    let d_pos = -(1.0 - sigmoid(z_pos));
    let d_neg = sigmoid(z_neg);
    let mut grad_anchor = vec![0.0; dim];
    axpy(&mut grad_anchor, d_pos, &pos_mean);
    axpy(&mut grad_anchor, d_neg, &neg_mean);
    let per_pos = d_pos / positives.len() as f64;
    let per_neg = d_neg / negatives.len() as f64;
    let grad_positives = positives
        .iter()
        .map(|_| {
            let mut g = vec![0.0; dim];
            axpy(&mut g, per_pos, anchor);
            g
        })
        .collect();
    let grad_negatives = negatives
        .iter()
        .map(|_| {
            let mut g = vec![0.0; dim];
            axpy(&mut g, per_neg, anchor);
            g
        })
        .collect();
    Ok(LossOutput {
        total: positive_part + negative_part,
        positive_part,
        negative_part,
        grad_anchor,
        grad_positives,
        grad_negatives,
    })
}

/// Hybrid loss: the per-sample sigmoid term over positives plus a softmax
/// contrasting the mean positive embedding against each negative.
pub fn loss_hybrid(
    anchor: &[f64],
    positives: &[&[f64]],
    negatives: &[&[f64]],
) -> Result<LossOutput, TrainError> {
    check_inputs(anchor, positives, negatives)?;
    let dim = anchor.len();
    let inv_p = 1.0 / positives.len() as f64;

    let mut positive_part = 0.0;
    let mut grad_anchor = vec![0.0; dim];
    let mut grad_positives: Vec<Vec<f64>> = Vec::with_capacity(positives.len());
    for v in positives {
        let z = dot(anchor, v);
        positive_part -= inv_p * log_sigmoid(z);
        let dz = -inv_p * (1.0 - sigmoid(z));
        axpy(&mut grad_anchor, dz, v);
        let mut g = vec![0.0; dim];
        axpy(&mut g, dz, anchor);
        grad_positives.push(g);
    }

    let pos_mean = mean_of(positives, dim);
    let z_pos = dot(anchor, &pos_mean);
    let z_negs: Vec<f64> = negatives.iter().map(|v| dot(anchor, v)).collect();
    // log-sum-exp over [z_pos, z_negs...] with max subtraction
    let max_z = z_negs.iter().fold(z_pos, |m, &z| m.max(z));
    let mut sum_exp = (z_pos - max_z).exp();
    let exp_negs: Vec<f64> = z_negs.iter().map(|&z| (z - max_z).exp()).collect();
    sum_exp += exp_negs.iter().sum::<f64>();
    let lse = max_z + sum_exp.ln();
    let negative_part = lse - z_pos;

    let prob_pos = (z_pos - max_z).exp() / sum_exp;
    // d(term)/d z_pos = prob_pos - 1; d(term)/d z_neg_j = prob_j
    axpy(&mut grad_anchor, prob_pos - 1.0, &pos_mean);
    let per_pos = (prob_pos - 1.0) * inv_p;
    for g in &mut grad_positives {
        axpy(g, per_pos, anchor);
    }
    let mut grad_negatives = Vec::with_capacity(negatives.len());
    for (v, &e) in negatives.iter().zip(&exp_negs) {
        let prob = e / sum_exp;
        axpy(&mut grad_anchor, prob, v);
        let mut g = vec![0.0; dim];
        axpy(&mut g, prob, anchor);
        grad_negatives.push(g);
    }
    Ok(LossOutput {
        total: positive_part + negative_part,
        positive_part,
        negative_part,
        grad_anchor,
        grad_positives,
        grad_negatives,
    })
}

/// Hypersphere penalty over one row: `lambda (|e|^2 - 1)^2` with gradient
/// `4 lambda (|e|^2 - 1) e`.
pub fn reg_penalty_row(row: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let norm_sq: f64 = row.iter().map(|x| x * x).sum();
    let excess = norm_sq - 1.0;
    let loss = lambda * excess * excess;
    let scale = 4.0 * lambda * excess;
    (loss, row.iter().map(|x| scale * x).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const LN_2: f64 = std::f64::consts::LN_2;

    fn refs(vectors: &[Vec<f64>]) -> Vec<&[f64]> {
        vectors.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn individual_orthogonal_case() {
        let anchor = vec![1.0, 0.0];
        let pos = vec![vec![0.0, 1.0]];
        let neg = vec![vec![0.0, -1.0]];
        let out = loss_individual(&anchor, &refs(&pos), &refs(&neg)).unwrap();
        assert_abs_diff_eq!(out.total, 2.0 * LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(out.positive_part, LN_2, epsilon = 1e-12);
    }

    #[test]
    fn individual_analytic_case() {
        // one positive at dot = ln 3 (sigma = 0.75), one negative at dot 0
        let z = 3.0f64.ln();
        let anchor = vec![1.0, 0.0];
        let pos = vec![vec![z, 0.0]];
        let neg = vec![vec![0.0, 1.0]];
        let out = loss_individual(&anchor, &refs(&pos), &refs(&neg)).unwrap();
        assert_abs_diff_eq!(out.total, -(0.75f64.ln()) - 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn aggregate_orthogonal_case() {
        let anchor = vec![1.0, 0.0, 0.0];
        let pos = vec![vec![0.0, 1.0, 0.0], vec![0.0, -1.0, 0.0]];
        let neg = vec![vec![0.0, 0.0, 1.0]];
        let out = loss_aggregate(&anchor, &refs(&pos), &refs(&neg)).unwrap();
        assert_abs_diff_eq!(out.total, 2.0 * LN_2, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_mean_is_idempotent_on_duplicates() {
        let anchor = vec![0.3, -0.4, 0.6];
        let one = vec![vec![0.2, 0.9, -0.1]];
        let two = vec![vec![0.2, 0.9, -0.1], vec![0.2, 0.9, -0.1]];
        let neg = vec![vec![-0.5, 0.1, 0.2]];
        let a = loss_aggregate(&anchor, &refs(&one), &refs(&neg)).unwrap();
        let b = loss_aggregate(&anchor, &refs(&two), &refs(&neg)).unwrap();
        assert_abs_diff_eq!(a.total, b.total, epsilon = 1e-12);
    }

    #[test]
    fn hybrid_balanced_case() {
        // one pos, one neg, all dots 0: sigmoid term ln 2, softmax term ln 2
        let anchor = vec![1.0, 0.0, 0.0];
        let pos = vec![vec![0.0, 1.0, 0.0]];
        let neg = vec![vec![0.0, 0.0, 1.0]];
        let out = loss_hybrid(&anchor, &refs(&pos), &refs(&neg)).unwrap();
        assert_abs_diff_eq!(out.total, 2.0 * LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(out.negative_part, LN_2, epsilon = 1e-12);
    }

    #[test]
    fn hybrid_softmax_saturates() {
        // positive dot 30, negative dot 0: softmax term below 1e-12
        let anchor = vec![1.0, 0.0];
        let pos = vec![vec![30.0, 0.0]];
        let neg = vec![vec![0.0, 1.0]];
        let out = loss_hybrid(&anchor, &refs(&pos), &refs(&neg)).unwrap();
        assert!(out.negative_part < 1e-12, "term {}", out.negative_part);
    }

    #[test]
    fn singleton_individual_equals_aggregate() {
        let anchor = vec![0.3, -0.4, 0.6, 0.1];
        let pos = vec![vec![0.2, 0.9, -0.1, 0.5]];
        let neg = vec![vec![-0.5, 0.1, 0.2, -0.3]];
        let a = loss_individual(&anchor, &refs(&pos), &refs(&neg)).unwrap();
        let b = loss_aggregate(&anchor, &refs(&pos), &refs(&neg)).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert_eq!(a.grad_anchor, b.grad_anchor);
        assert_eq!(a.grad_positives, b.grad_positives);
        assert_eq!(a.grad_negatives, b.grad_negatives);
    }

    #[test]
    fn empty_sets_are_rejected() {
        let anchor = vec![1.0, 0.0];
        let some = vec![vec![0.0, 1.0]];
        assert!(matches!(
            loss_individual(&anchor, &[], &refs(&some)),
            Err(TrainError::EmptySampleSet)
        ));
        assert!(matches!(
            loss_hybrid(&anchor, &refs(&some), &[]),
            Err(TrainError::EmptySampleSet)
        ));
    }

    #[test]
    fn penalty_cases() {
        let (loss, grad) = reg_penalty_row(&[1.0, 0.0], 0.001);
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-15);
        assert!(grad.iter().all(|&g| g.abs() < 1e-15));
        let (loss, _) = reg_penalty_row(&[1.0, 1.0], 0.001); // norm sqrt(2)
        assert_abs_diff_eq!(loss, 0.001, epsilon = 1e-15);
    }

    #[test]
    fn log_sigmoid_is_stable_at_extremes() {
        assert_abs_diff_eq!(log_sigmoid(0.0), -LN_2, epsilon = 1e-15);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        let v = log_sigmoid(-800.0);
        assert_abs_diff_eq!(v, -800.0, epsilon = 1e-9);
        assert!(v.is_finite());
    }
}
