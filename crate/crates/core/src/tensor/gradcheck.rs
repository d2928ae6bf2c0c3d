use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Bound, ParamStore, Precision, Real, Tape, Var};
use crate::error::{Error, Result};

/// A scalar function of a parameter store, evaluable in either precision.
pub trait Objective {
    fn loss<'t, T: Real>(&self, tape: &'t Tape<T>, params: &Bound<'t, '_, T>) -> Result<Var<'t, T>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    /// Relative error of every checked coordinate, in check order.
    pub errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn count_above(&self, threshold: f64) -> usize {
        self.errors.iter().filter(|&&e| e >= threshold).count()
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_f64<O: Objective>(objective: &O, params: &ParamStore<f64>) -> Result<f64> {
    let tape = Tape::new();
    let bound = Bound::new(&tape, params);
    Ok(objective.loss(&tape, &bound)?.item())
}

fn analytic<O: Objective, T: Real>(objective: &O, params: &ParamStore<f64>) -> Result<Vec<Option<Vec<f64>>>> {
    let params_t: ParamStore<T> = params.cast();
    let tape = Tape::new();
    let bound = Bound::new(&tape, &params_t);
    let loss = objective.loss(&tape, &bound)?;
    if !loss.item().as_f64().is_finite() {
        return Err(Error::Numeric("loss is not finite at the base point".into()));
    }
    loss.backward()?;
    let mut out = vec![None; params.len()];
    for (id, g) in bound.into_grads() {
        out[id] = Some(g.into_iter().map(Real::as_f64).collect());
    }
    Ok(out)
}

/// Compares analytic gradients against central differences.
///
/// The analytic gradient is computed at `precision`; the finite differences
/// are always evaluated in 64-bit. For each trainable tensor at most
/// `max_per_tensor` coordinates are checked (all when `None`), chosen
/// deterministically from `seed`. Returns the maximum of
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<O: Objective>(
    objective: &O,
    params: &ParamStore<f64>,
    precision: Precision,
    eps: f64,
    max_per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    let grads = match precision {
        Precision::F64 => analytic::<O, f64>(objective, params)?,
        Precision::F32 => analytic::<O, f32>(objective, params)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_values: None,
        checked: 0,
        errors: Vec::new(),
    };
    for id in 0..params.len() {
        if !params.tensor(id).requires_grad {
            continue;
        }
        let len = params.tensor(id).len();
        let coords: Vec<usize> = match max_per_tensor {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for c in coords {
            let original = work.tensor(id).data()[c];
            work.tensor_mut(id).data_mut()[c] = original + eps;
            let plus = eval_f64(objective, &work)?;
            work.tensor_mut(id).data_mut()[c] = original - eps;
            let minus = eval_f64(objective, &work)?;
            work.tensor_mut(id).data_mut()[c] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became non-finite when perturbing {}[{c}]",
                    params.name(id)
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[id].as_ref().map_or(0.0, |g| g[c]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            report.errors.push(err);
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((params.name(id).to_string(), c));
                report.worst_values = Some((a, numeric));
            }
        }
    }
    Ok(report)
}
