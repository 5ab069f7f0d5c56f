//! Named parameter storage shared by all models.

use super::error::{NumError, Result};
use super::graph::{Graph, Tensor};
use super::rng::Rng;

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of named parameters. Bind order == storage order,
/// which Adam and the checkpoint format both rely on.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> usize {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        self.params.len() - 1
    }

    /// Kaiming-uniform weight: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    pub fn add_kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut Rng) -> usize {
        let bound = (6.0 / fan_in as f32).sqrt();
        let mut data = vec![0.0f32; shape.iter().product()];
        rng.fill_uniform(&mut data, -bound, bound);
        self.add(name, shape, data)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        self.add(name, shape, vec![0.0; shape.iter().product()])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Sum of squared entries over every parameter (for weight penalties
    /// computed outside the graph; the in-graph penalty binds tensors).
    pub fn sq_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.data.iter())
            .map(|v| (*v as f64) * (*v as f64))
            .sum()
    }

    /// Create one graph leaf per parameter, in store order.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Vec<Tensor>> {
        self.params
            .iter()
            .map(|p| g.leaf(p.data.clone(), &p.shape, trainable))
            .collect()
    }

    /// Gather gradients for bound tensors, zeros where none accumulated.
    pub fn grads(&self, g: &Graph, bound: &[Tensor]) -> Vec<Vec<f32>> {
        self.params
            .iter()
            .zip(bound)
            .map(|(p, t)| {
                g.grad(*t)
                    .map(|gr| gr.to_vec())
                    .unwrap_or_else(|| vec![0.0; p.data.len()])
            })
            .collect()
    }

    /// Exact byte-level equality of all parameter buffers.
    pub fn bits_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.shape == b.shape
                    && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    pub fn validate_shapes(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(NumError::InvalidArgument(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.shape != b.shape {
                return Err(NumError::ShapeMismatch {
                    node: 0,
                    expected: a.shape.clone(),
                    got: b.shape.clone(),
                });
            }
        }
        Ok(())
    }
}
