//! Reconstruction errors and the batch-mean labelling rules.
//!
//! The "≥ batch mean" comparisons are decided exactly: `x_i ≥ mean(x)` is
//! evaluated as the sign of `n·x_i − Σ x_j` with error-free transformations,
//! so labels depend only on the values and not on summation rounding.

use super::ModelError;

/// Adds `x` to a nonoverlapping expansion (increasing magnitude).
fn grow(partials: &mut Vec<f64>, mut x: f64) {
    let mut i = 0;
    for j in 0..partials.len() {
        let mut y = partials[j];
        if x.abs() < y.abs() {
            std::mem::swap(&mut x, &mut y);
        }
        let hi = x + y;
        let lo = y - (hi - x);
        if lo != 0.0 {
            partials[i] = lo;
            i += 1;
        }
        x = hi;
    }
    partials.truncate(i);
    partials.push(x);
}

fn expansion_sign(partials: &[f64]) -> std::cmp::Ordering {
    partials
        .iter()
        .rev()
        .find(|&&p| p != 0.0)
        .map_or(std::cmp::Ordering::Equal, |p| p.total_cmp(&0.0))
}

/// `out[i] = x_i ≥ mean(x)`, decided exactly.
pub fn at_least_mean(x: &[f64]) -> Result<Vec<bool>, ModelError> {
    if x.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteError { index: i, value: x[i] });
    }
    let mut sum = Vec::new();
    for &v in x {
        grow(&mut sum, v);
    }
    let n = x.len() as f64;
    Ok(x.iter()
        .map(|&v| {
            let p = n * v;
            let err = n.mul_add(v, -p);
            let mut acc = Vec::with_capacity(sum.len() + 2);
            for t in sum.iter().map(|s| -s).chain([p, err]) {
                grow(&mut acc, t);
            }
            expansion_sign(&acc) != std::cmp::Ordering::Less
        })
        .collect())
}

/// Initial pseudo-labels: texture (1) iff the error is at least the batch
/// mean.
pub fn assign_initial_labels(errors: &[f64]) -> Result<Vec<u8>, ModelError> {
    Ok(at_least_mean(errors)?.into_iter().map(u8::from).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CleanPhase<'a> {
    /// Only scores above the gate flip a label to texture; the rest keep
    /// their prior label.
    FirstEpoch { prior: &'a [u8] },
    /// Texture iff the score is at least the batch mean.
    Later,
}

pub fn clean_labels(scores: &[f64], phase: CleanPhase<'_>, beta: f64) -> Result<Vec<u8>, ModelError> {
    if scores.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    match phase {
        CleanPhase::FirstEpoch { prior } => {
            if prior.len() != scores.len() {
                return Err(ModelError::BatchMismatch {
                    expected: scores.len(),
                    found: prior.len(),
                });
            }
            if !(beta > 0.0 && beta < 1.0) {
                return Err(ModelError::BadThreshold(beta));
            }
            Ok(scores
                .iter()
                .zip(prior)
                .map(|(&phi, &l)| if phi > beta { 1 } else { l })
                .collect())
        }
        CleanPhase::Later => Ok(at_least_mean(scores)?.into_iter().map(u8::from).collect()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMode {
    /// Distance to the input.
    Standard,
    /// Distance to the fixed Gaussian target.
    Gaussian,
}

/// `‖g − ĝ‖₁` or `‖g̃_f − ĝ‖₁`.
pub fn compute_error(g: &[f64], recon: &[f64], mode: ErrorMode, gaussian: &[f64]) -> Result<f64, ModelError> {
    let target = match mode {
        ErrorMode::Standard => g,
        ErrorMode::Gaussian => gaussian,
    };
    if target.len() != recon.len() {
        return Err(ModelError::BatchMismatch {
            expected: target.len(),
            found: recon.len(),
        });
    }
    Ok(target.iter().zip(recon).map(|(a, b)| (a - b).abs()).sum())
}

/// Mean binary cross-entropy over `(φ, l)` pairs, φ clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn tlc_loss_value(pairs: &[(f64, u8)]) -> Result<f64, ModelError> {
    if pairs.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let s: f64 = pairs
        .iter()
        .map(|&(phi, l)| {
            let p = phi.clamp(1e-7, 1.0 - 1e-7);
            let l = l as f64;
            -(l * p.ln() + (1.0 - l) * (1.0 - p).ln())
        })
        .sum();
    Ok(s / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_labels_hand_examples() {
        assert_eq!(assign_initial_labels(&[1.0, 2.0, 3.0]).unwrap(), vec![0, 1, 1]);
        assert_eq!(assign_initial_labels(&[0.7; 5]).unwrap(), vec![1; 5]);
        assert!(matches!(assign_initial_labels(&[]), Err(ModelError::EmptyBatch)));
        assert!(matches!(
            assign_initial_labels(&[1.0, f64::NAN]),
            Err(ModelError::NonFiniteError { index: 1, .. })
        ));
    }

    #[test]
    fn exact_mean_comparison() {
        // the rounded mean equals 0.2 here while the exact mean is larger
        let x = [0.2, 0.30000000000000004, 0.1];
        let naive = x.iter().sum::<f64>() / 3.0;
        assert!(x[0] >= naive);
        assert_eq!(at_least_mean(&x).unwrap(), vec![false, true, false]);
        // repeated values equal to the mean are texture
        assert_eq!(at_least_mean(&[1e16, 1.0, 1e16, 1.0]).unwrap(), vec![true, false, true, false]);
    }

    #[test]
    fn clean_hand_examples() {
        assert_eq!(clean_labels(&[0.2, 0.6, 0.7], CleanPhase::Later, 0.5).unwrap(), vec![0, 1, 1]);
        assert_eq!(clean_labels(&[0.3; 4], CleanPhase::Later, 0.5).unwrap(), vec![1; 4]);
        let prior = [0, 1, 0];
        assert_eq!(
            clean_labels(&[0.9, 0.1, 0.4], CleanPhase::FirstEpoch { prior: &prior }, 0.5).unwrap(),
            vec![1, 1, 0]
        );
        assert!(matches!(clean_labels(&[], CleanPhase::Later, 0.5), Err(ModelError::EmptyBatch)));
    }

    #[test]
    fn errors_hand_examples() {
        assert_eq!(compute_error(&[1.0, 0.0], &[0.0, 1.0], ErrorMode::Standard, &[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(compute_error(&[1.0, 2.0], &[1.0, 2.0], ErrorMode::Standard, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(compute_error(&[1.0, 2.0], &[0.5, 0.5], ErrorMode::Gaussian, &[0.5, 0.5]).unwrap(), 0.0);
        assert!(compute_error(&[1.0], &[1.0, 2.0], ErrorMode::Standard, &[0.0]).is_err());
    }

    #[test]
    fn bce_hand_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((tlc_loss_value(&[(0.5, 1)]).unwrap() - ln2).abs() < 1e-12);
        assert!((tlc_loss_value(&[(0.5, 0)]).unwrap() - ln2).abs() < 1e-12);
        assert!(tlc_loss_value(&[(1.0, 1)]).unwrap() < 1e-6);
    }
}
