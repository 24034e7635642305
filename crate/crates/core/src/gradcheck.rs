//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward function on constant
//! tensors, so it shares no code with the backward rules it checks.

use crate::error::Result;
use crate::tensor::Tensor;

/// One input to a gradient check.
#[derive(Clone, Debug)]
pub struct CheckInput {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl CheckInput {
    pub fn new(name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Self {
        CheckInput {
            name: name.into(),
            shape: shape.to_vec(),
            value,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Default finite-difference step for `f64`.
pub const DEFAULT_STEP: f64 = 1e-6;
/// Gradient norms below this are compared absolutely. Central differences
/// at [`DEFAULT_STEP`] resolve about `1e-9` per element, so an exactly zero
/// gradient (a key bias under softmax, say) reads as noise of that size.
pub const NORM_FLOOR: f64 = 1e-3;

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(NORM_FLOOR)
}

/// Compare the backward pass of scalar function `f` against central
/// differences on every element of every input.
pub fn check<F>(inputs: &[CheckInput], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves = inputs
        .iter()
        .map(|i| Tensor::parameter(i.value.clone(), &i.shape))
        .collect::<Result<Vec<_>>>()?;
    f(&leaves)?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(t, i)| t.grad().unwrap_or_else(|| vec![0.0; i.value.len()]))
        .collect();

    let mut values: Vec<Vec<f64>> = inputs.iter().map(|i| i.value.clone()).collect();
    let eval = |values: &[Vec<f64>]| -> Result<f64> {
        let ts = values
            .iter()
            .zip(inputs)
            .map(|(v, i)| Tensor::new(v.clone(), &i.shape))
            .collect::<Result<Vec<_>>>()?;
        f(&ts)?.item()
    };

    let mut entries = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.value.len()];
        for j in 0..input.value.len() {
            let orig = values[k][j];
            values[k][j] = orig + step;
            let plus = eval(&values)?;
            values[k][j] = orig - step;
            let minus = eval(&values)?;
            values[k][j] = orig;
            numeric[j] = (plus - minus) / (2.0 * step);
        }
        let rel_error = relative_error(&analytic[k], &numeric);
        entries.push(GradCheckEntry {
            name: input.name.clone(),
            analytic: analytic[k].clone(),
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport { entries })
}
