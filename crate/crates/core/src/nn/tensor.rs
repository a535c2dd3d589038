use serde::{Deserialize, Serialize};

/// A named, shaped parameter array with its accumulated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(skip)]
    grad: Vec<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(values.len(), n, "values do not match shape {shape:?}");
        Self {
            name: name.into(),
            shape,
            grad: vec![0.0; n],
            values,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![v; n])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    /// Mutable access to values and gradient at once.
    pub fn split_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.grad).all(|v| v.is_finite())
    }

    /// Restores the gradient buffer after deserialization.
    pub(crate) fn ensure_grad(&mut self) {
        if self.grad.len() != self.values.len() {
            self.grad = vec![0.0; self.values.len()];
        }
    }
}
