//! Central-difference verification of reverse-mode gradients.

use rand::Rng;

use super::{Bound, Graph, ParamSet, Result, Scalar, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a − n| / max(|a|, |n|, 1e-8)` over the sampled coordinates.
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares the analytic gradient of `f` at `params` with central
/// differences of step `h` on `samples` randomly chosen coordinates (all
/// coordinates if there are fewer).
pub fn grad_check<T, F>(params: &ParamSet<T>, h: f64, samples: usize, rng: &mut impl Rng, f: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &Bound) -> Var,
{
    if !(h > 0.0) {
        return Err(TensorError::BadStep(h));
    }
    let eval = |p: &ParamSet<T>| -> Result<f64> {
        let mut g = Graph::new();
        let b = g.bind(p);
        let loss = f(&mut g, &b);
        let v = g.value(loss).item().as_f64();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TensorError::NonFiniteLoss)
        }
    };

    let mut g = Graph::new();
    let b = g.bind(params);
    let loss = f(&mut g, &b);
    if !g.value(loss).item().as_f64().is_finite() {
        return Err(TensorError::NonFiniteLoss);
    }
    let analytic = g.backward(loss).for_params(&b, params);

    let total = params.parameter_count();
    let coords: Vec<(usize, usize)> = if total <= samples {
        (0..params.len())
            .flat_map(|s| (0..params.get(s).len()).map(move |i| (s, i)))
            .collect()
    } else {
        let offsets: Vec<usize> = params
            .tensors()
            .iter()
            .scan(0, |acc, t| {
                let o = *acc;
                *acc += t.len();
                Some(o)
            })
            .collect();
        (0..samples)
            .map(|_| {
                let flat = rng.random_range(0..total);
                let slot = offsets.partition_point(|&o| o <= flat) - 1;
                (slot, flat - offsets[slot])
            })
            .collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: coords.len(),
        worst: None,
    };
    let mut work = params.clone();
    for (slot, i) in coords {
        let orig = work.get(slot).data()[i];
        work.get_mut(slot).data_mut()[i] = T::of(orig.as_f64() + h);
        let up = eval(&work)?;
        work.get_mut(slot).data_mut()[i] = T::of(orig.as_f64() - h);
        let down = eval(&work)?;
        work.get_mut(slot).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[slot].data()[i].as_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some((params.names()[slot].clone(), i));
            }
        }
    }
    Ok(report)
}
