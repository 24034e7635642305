use crate::error::{Error, Result};
use crate::params::ParamSet;

/// SGD with Nesterov momentum and L2 weight decay folded into the gradient:
///
/// ```text
/// g ← g + wd·p
/// v ← m·v + g
/// p ← p − lr·(g + m·v)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(params: &ParamSet, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: params.entries().iter().map(|e| vec![0.0; e.value.len()]).collect(),
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// One update. Every parameter needs a gradient of matching length.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.velocity.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} gradients and {} velocity buffers for {} parameters",
                grads.len(),
                self.velocity.len(),
                params.len()
            )));
        }
        for (i, e) in params.entries().iter().enumerate() {
            match &grads[i] {
                None => return Err(Error::MissingGradient(e.name.clone())),
                Some(g) if g.len() != e.value.len() => {
                    return Err(Error::ShapeMismatch {
                        op: "sgd step",
                        lhs: e.shape.clone(),
                        rhs: vec![g.len()],
                    })
                }
                Some(_) => {}
            }
        }
        let (m, wd) = (self.momentum, self.weight_decay);
        for ((e, g), v) in params.entries_mut().iter_mut().zip(grads).zip(&mut self.velocity) {
            let g = g.as_ref().expect("checked above");
            for ((p, &gi), vi) in e.value.iter_mut().zip(g).zip(v.iter_mut()) {
                let gi = gi + wd * *p;
                *vi = m * *vi + gi;
                *p -= lr * (gi + m * *vi);
            }
        }
        Ok(())
    }
}
