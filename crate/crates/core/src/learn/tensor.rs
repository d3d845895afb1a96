//! Dense row-major f64 tensors and named parameter sets.

use super::LearnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Panics if `data.len()` differs from the product of `shape`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, LearnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(LearnError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Ordered list of named tensors. Order is part of the checkpoint format.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Appends a parameter and returns its slot index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(Param { name: name.into(), value });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.params[i].value
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].value
    }

    pub fn name(&self, i: usize) -> &str {
        &self.params[i].name
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Tensor::zeros(p.value.shape().to_vec()),
                })
                .collect(),
        }
    }

    /// Adds `g` into slot `i`; shapes must already agree.
    pub fn accumulate(&mut self, i: usize, g: &Tensor) {
        let dst = self.params[i].value.data_mut();
        debug_assert_eq!(dst.len(), g.len());
        for (d, s) in dst.iter_mut().zip(g.data()) {
            *d += s;
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (i, p) in other.params.iter().enumerate() {
            self.accumulate(i, &p.value);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for p in &self.params {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    /// Overwrites every parameter from a flat vector in slot order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), LearnError> {
        if flat.len() != self.num_scalars() {
            return Err(LearnError::Shape(format!(
                "flat parameter vector has {} values, model expects {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}
