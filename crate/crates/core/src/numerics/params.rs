use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// A named parameter with its gradient accumulator and momentum buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    #[serde(skip_serializing, default = "empty_matrix")]
    pub grad: Matrix,
    #[serde(skip_serializing, default = "empty_matrix")]
    pub velocity: Matrix,
    pub trainable: bool,
}

fn empty_matrix() -> Matrix {
    Matrix::zeros(0, 0)
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            velocity: Matrix::zeros(r, c),
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Restores gradient and velocity buffers after deserialisation.
    pub(crate) fn restore_buffers(&mut self) {
        let (r, c) = self.value.shape();
        if self.grad.shape() != (r, c) {
            self.grad = Matrix::zeros(r, c);
        }
        if self.velocity.shape() != (r, c) {
            self.velocity = Matrix::zeros(r, c);
        }
    }

    /// Bit patterns of the current values, for exact before/after comparisons.
    pub fn value_bits(&self) -> Vec<u64> {
        self.value.data().iter().map(|v| v.to_bits()).collect()
    }
}

/// Anything that owns an indexable list of parameters.
///
/// The optimiser and the finite-difference checker work through this trait so
/// that a whole model can be stepped or checked without flattening it.
pub trait ParamHost {
    fn num_params(&self) -> usize;
    fn param(&self, i: usize) -> &Param;
    fn param_mut(&mut self, i: usize) -> &mut Param;

    fn zero_grads(&mut self) {
        for i in 0..self.num_params() {
            self.param_mut(i).zero_grad();
        }
    }

    fn reset_velocities(&mut self) {
        for i in 0..self.num_params() {
            self.param_mut(i).velocity.fill(0.0);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, param: Param) -> usize {
        self.params.push(param);
        self.params.len() - 1
    }

    pub fn pop(&mut self) -> Option<Param> {
        self.params.pop()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<&Param> {
        self.params
            .get(i)
            .ok_or_else(|| Error::Contract(format!("no parameter at index {i}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub(crate) fn restore_buffers(&mut self) {
        self.params.iter_mut().for_each(Param::restore_buffers);
    }
}

impl ParamHost for ParamSet {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn param(&self, i: usize) -> &Param {
        &self.params[i]
    }

    fn param_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }
}

/// Uniform in ±√(6 / (fan_in + fan_out)).
pub fn xavier_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("length matches by construction")
}
