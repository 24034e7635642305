//! Named parameter storage.
//!
//! A [`ParamSet`] owns the parameter values as plain buffers so one model can
//! be shared read-only across threads. Each forward pass binds the set into
//! [`Params`], a list of graph leaves local to the calling thread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], value: Vec<f64>) -> Result<ParamId> {
        if self.id_of(name).is_some() {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        if value.len() != shape.iter().product::<usize>() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "parameter",
                lhs: shape.to_vec(),
                rhs: vec![value.len()],
            });
        }
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Graph leaves that accumulate gradients.
    pub fn bind(&self) -> Params {
        self.bind_with(true)
    }

    /// Constant leaves, for inference without graph recording.
    pub fn bind_frozen(&self) -> Params {
        self.bind_with(false)
    }

    fn bind_with(&self, requires_grad: bool) -> Params {
        let tensors = self
            .entries
            .iter()
            .map(|e| {
                if requires_grad {
                    Tensor::parameter(e.value.clone(), &e.shape)
                } else {
                    Tensor::new(e.value.clone(), &e.shape)
                }
                .expect("entries are validated on insert")
            })
            .collect();
        Params { tensors }
    }

    /// Copy values from another set with identical names and shapes.
    pub fn assign(&mut self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::config(format!(
                "parameter count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::config(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
            a.value.clone_from(&b.value);
        }
        Ok(())
    }
}

/// Parameters bound as graph leaves for one forward pass.
pub struct Params {
    tensors: Vec<Tensor>,
}

impl Params {
    /// Wrap externally built leaves; order must follow the owning [`ParamSet`].
    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Params { tensors }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Gradient per parameter, `None` where backward never reached it.
    pub fn grads(&self) -> Vec<Option<Vec<f64>>> {
        self.tensors.iter().map(Tensor::grad).collect()
    }
}

/// Initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    /// Glorot uniform over `(fan_in, fan_out)`.
    Xavier { fan_in: usize, fan_out: usize },
    /// Glorot uniform times the builder's residual gain. Used for the last
    /// projection of a residual branch.
    Branch { fan_in: usize, fan_out: usize },
    Normal { std: f64 },
    /// Identity on the leading square block of a 2-D (or stacked 3-D) weight.
    Identity,
}

/// Registers parameters under a hierarchical name prefix.
pub struct ParamBuilder {
    set: ParamSet,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
    residual_gain: f64,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        ParamBuilder {
            set: ParamSet::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
            residual_gain: 1.0,
        }
    }

    /// Scale applied to [`Init::Branch`] parameters from here on.
    pub fn set_residual_gain(&mut self, gain: f64) {
        self.residual_gain = gain;
    }

    /// Run `f` with `name` appended to the prefix.
    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![0.0; n],
            Init::Xavier { fan_in, fan_out } => self.glorot(n, fan_in, fan_out, 1.0),
            Init::Branch { fan_in, fan_out } => self.glorot(n, fan_in, fan_out, self.residual_gain),
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(Error::invalid)?;
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
            Init::Identity => {
                let (rows, cols) = match shape {
                    [r, c] => (*r, *c),
                    [_, r, c] => (*r, *c),
                    _ => return Err(Error::invalid("identity init needs a 2-D or 3-D shape")),
                };
                let mut v = vec![0.0; n];
                for block in v.chunks_mut(rows * cols) {
                    for i in 0..rows.min(cols) {
                        block[i * cols + i] = 1.0;
                    }
                }
                v
            }
        };
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        self.set.insert(&full, shape, value)
    }

    fn glorot(&mut self, n: usize, fan_in: usize, fan_out: usize, gain: f64) -> Vec<f64> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        (0..n)
            .map(|_| gain * self.rng.random_range(-bound..bound))
            .collect()
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}
