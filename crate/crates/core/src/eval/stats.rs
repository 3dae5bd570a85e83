//! Rank correlation and the one-sided Welch t-test used to compare hedge
//! volatilities.

use statrs::function::beta::beta_reg;

use super::EvalError;
use crate::similarity::pearson;

/// Average ranks (1-based), ties sharing the mean of their rank range.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the average rank
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average-rank transforms.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(EvalError::SeriesTooShort(x.len()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    Ok(pearson(&rx, &ry)?)
}

#[derive(Debug, Clone, Copy)]
pub struct WelchResult {
    pub t: f64,
    pub degrees_of_freedom: f64,
    /// One-sided p-value for mean(a) < mean(b).
    pub p_value: f64,
}

fn mean_and_var(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Student t lower CDF via the regularized incomplete beta function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let half_tail = 0.5 * beta_reg(df / 2.0, 0.5, x);
    if t <= 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// Welch unequal-variance t-test with Satterthwaite degrees of freedom,
/// one-sided for the alternative mean(a) < mean(b). Two zero-variance
/// samples with equal means return p = 0.5 by convention.
pub fn welch_t_test_one_sided(a: &[f64], b: &[f64]) -> Result<WelchResult, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::SampleTooSmall(a.len().min(b.len())));
    }
    let (mean_a, var_a) = mean_and_var(a);
    let (mean_b, var_b) = mean_and_var(b);
    let se_a = var_a / a.len() as f64;
    let se_b = var_b / b.len() as f64;
    let se = se_a + se_b;
    if se == 0.0 {
        let df = (a.len() + b.len() - 2) as f64;
        return Ok(if mean_a == mean_b {
            WelchResult {
                t: 0.0,
                degrees_of_freedom: df,
                p_value: 0.5,
            }
        } else {
            WelchResult {
                t: if mean_a < mean_b {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                },
                degrees_of_freedom: df,
                p_value: if mean_a < mean_b { 0.0 } else { 1.0 },
            }
        });
    }
    let t = (mean_a - mean_b) / se.sqrt();
    let df = se * se
        / (se_a * se_a / (a.len() as f64 - 1.0) + se_b * se_b / (b.len() as f64 - 1.0));
    Ok(WelchResult {
        t,
        degrees_of_freedom: df,
        p_value: student_t_cdf(t, df),
    })
}

#[cfg(test)]
#[allow(clippy::excessive_precision)] // frozen reference constants
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 30.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn spearman_monotone_transforms() {
        let x = [0.3f64, 1.2, 2.0, 5.5, 9.1];
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect(); // strictly increasing
        assert_abs_diff_eq!(spearman(&x, &y).unwrap(), 1.0, epsilon = 1e-12);
        let rev: Vec<f64> = x.iter().rev().cloned().collect();
        assert_abs_diff_eq!(spearman(&x, &rev).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn spearman_tied_case_matches_hand_ranks() {
        // ranks x: [1, 2.5, 2.5, 4], y: [4, 2.5, 2.5, 1] -> correlation -1
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[4.0, 3.0, 3.0, 1.0]).unwrap();
        assert_abs_diff_eq!(r, -1.0, epsilon = 1e-12);
        assert!(matches!(
            spearman(&[1.0], &[1.0]),
            Err(EvalError::SeriesTooShort(1))
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn welch_identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let result = welch_t_test_one_sided(&a, &a).unwrap();
        assert_abs_diff_eq!(result.t, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(result.p_value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn welch_separated_means() {
        let b = [10.0, 10.001, 9.999, 10.0005, 9.9995];
        let a: Vec<f64> = b.iter().map(|v| v - 10.0).collect();
        let result = welch_t_test_one_sided(&a, &b).unwrap();
        assert!(result.p_value < 1e-6, "p = {}", result.p_value);
        // reversed direction: p near 1
        let reversed = welch_t_test_one_sided(&b, &a).unwrap();
        assert!(reversed.p_value > 1.0 - 1e-6);
    }

    #[test]
    fn welch_frozen_ten_vs_ten() {
        // frozen 40-digit reference evaluation of the Welch formula
        let a = [12.1, 11.4, 12.8, 11.9, 12.3, 12.0, 11.7, 12.5, 11.6, 12.2];
        let b = [12.9, 13.4, 12.6, 13.1, 13.8, 12.7, 13.0, 13.5, 12.8, 13.2];
        let result = welch_t_test_one_sided(&a, &b).unwrap();
        assert_abs_diff_eq!(result.t, -5.8243520603649057812, epsilon = 1e-10);
        assert_abs_diff_eq!(result.degrees_of_freedom, 17.78048780487804878, epsilon = 1e-10);
        assert_abs_diff_eq!(result.p_value, 8.4946174174440331245e-6, epsilon = 1e-10);
    }

    #[test]
    fn welch_zero_variance_conventions() {
        let flat = [2.0, 2.0, 2.0];
        let result = welch_t_test_one_sided(&flat, &flat).unwrap();
        assert_abs_diff_eq!(result.p_value, 0.5, epsilon = 1e-15);
        let higher = [3.0, 3.0, 3.0];
        let result = welch_t_test_one_sided(&flat, &higher).unwrap();
        assert_abs_diff_eq!(result.p_value, 0.0, epsilon = 1e-15);
        assert!(matches!(
            welch_t_test_one_sided(&[1.0], &flat),
            Err(EvalError::SampleTooSmall(1))
        ));
    }

    #[test]
    fn t_cdf_symmetry_and_known_points() {
        assert_abs_diff_eq!(student_t_cdf(0.0, 7.0), 0.5, epsilon = 1e-12);
        for t in [0.5, 1.0, 2.5] {
            let upper = student_t_cdf(t, 9.0);
            let lower = student_t_cdf(-t, 9.0);
            assert_abs_diff_eq!(upper + lower, 1.0, epsilon = 1e-12);
        }
        // t table: P(T_10 <= 1.812) = 0.95
        assert_abs_diff_eq!(student_t_cdf(1.812, 10.0), 0.95, epsilon = 5e-4);
        // large df approaches the normal CDF
        assert_abs_diff_eq!(student_t_cdf(1.96, 1e6), 0.975, epsilon = 1e-3);
    }
}
