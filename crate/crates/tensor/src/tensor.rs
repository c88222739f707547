use crate::error::{arg_err, shape_err, Result};
use crate::Real;
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err("Tensor::new", shape, &[data.len()]);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Samples from N(0, std²).
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(std * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Samples uniformly from [lo, hi).
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(rng.gen_range(lo..hi)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err("reshape", &self.shape, shape);
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape("dot", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape("axpy", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn scale_inplace(&mut self, alpha: T) {
        for a in &mut self.data {
            *a = *a * alpha;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|a| *a = value);
    }

    pub fn check_same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(op, &self.shape, &other.shape);
        }
        Ok(())
    }

    /// Copies sample `i` of a batched tensor out as a batch of one.
    pub fn batch_item(&self, i: usize) -> Result<Self> {
        if self.shape.is_empty() || i >= self.shape[0] {
            return arg_err("batch_item", format!("index {i} for shape {:?}", self.shape));
        }
        let per: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Self {
            shape,
            data: self.data[i * per..(i + 1) * per].to_vec(),
        })
    }

    /// Concatenates tensors along the leading (batch) axis.
    pub fn stack_batch(items: &[&Self]) -> Result<Self> {
        let Some(first) = items.first() else {
            return arg_err("stack_batch", "no tensors");
        };
        let tail = &first.shape[1..];
        let mut data = Vec::with_capacity(items.iter().map(|t| t.numel()).sum());
        let mut lead = 0;
        for t in items {
            if &t.shape[1..] != tail {
                return shape_err("stack_batch", &first.shape, &t.shape);
            }
            lead += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = lead;
        Ok(Self { shape, data })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }
}
