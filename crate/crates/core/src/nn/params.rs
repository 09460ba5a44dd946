use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Handle of one tensor inside a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "parameter {name} registered twice"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Glorot-uniform initialised `rows × cols` weight.
    pub fn glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(name, rows, cols, limit, rng)
    }

    /// Weight drawn uniformly from `[-limit, limit]`.
    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        limit: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let w = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..=limit));
        self.add(name, w)
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    /// `self += scale · direction`.
    pub fn add_scaled(&mut self, scale: f64, direction: &Gradients) {
        for (t, d) in self.tensors.iter_mut().zip(&direction.0) {
            t.scaled_add(scale, d);
        }
    }

    /// `self − other`, tensor by tensor.
    pub fn difference(&self, other: &ParameterSet) -> Gradients {
        Gradients(
            self.tensors
                .iter()
                .zip(&other.tensors)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_compatible(&self, other: &ParameterSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Shape("parameter names differ".into()));
        }
        for (i, (a, b)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            if a.dim() != b.dim() {
                return Err(Error::Shape(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.names[i],
                    b.dim(),
                    a.dim()
                )));
            }
        }
        Ok(())
    }
}

/// One gradient tensor per parameter, aligned with a [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Array2<f64>>);

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Gradients(
            params
                .tensors
                .iter()
                .map(|t| Array2::zeros(t.dim()))
                .collect(),
        )
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.0 {
            *a *= s;
        }
    }

    pub fn dot(&self, other: &Gradients) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a * b).sum())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}
