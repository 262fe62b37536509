//! Learnable parameter storage: named f64 arrays that bind onto a fresh
//! gradient tape for each forward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{GradTape, Tensor, TensorId};

/// One learnable array. Initialization is fan-in-scaled uniform on
/// ±sqrt(6/fan_in); biases start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param { data: vec![0.0; n], shape: shape.to_vec() }
    }

    pub fn constant(v: f64, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param { data: vec![v; n], shape: shape.to_vec() }
    }

    pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Param { data, shape: shape.to_vec() }
    }

    pub fn from_parts(data: Vec<f64>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Param { data, shape }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Register this parameter as a gradient leaf on `tape`.
    pub fn bind(&self, tape: &mut GradTape) -> TensorId {
        tape.leaf(
            Tensor::new(self.data.clone(), &self.shape)
                .expect("parameter invariants hold")
                .with_grad(),
        )
    }
}

/// Visitor over a parameter collection in its canonical (serialization and
/// optimizer) order.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn named_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, p| out.push((name.to_string(), p.shape().to_vec())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| n += p.len());
        n
    }
}
