use crate::error::{Error, Result};

/// Row-major `(batch, channels, length)` array. Dense activations use
/// `length == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    /// `(batch, features)` matrix.
    pub fn matrix(batch: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        Self::new([batch, features, 1], data)
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub(crate) fn from_raw(shape: [usize; 3], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn length(&self) -> usize {
        self.shape[2]
    }

    /// Values per batch item.
    pub fn item_size(&self) -> usize {
        self.shape[1] * self.shape[2]
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

    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.item_size();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let l = self.shape[2];
        let start = (b * self.shape[1] + c) * l;
        &self.data[start..start + l]
    }

    /// Same data viewed as `(batch, channels * length, 1)`.
    pub fn flattened(self) -> Tensor {
        let [b, c, l] = self.shape;
        Tensor {
            shape: [b, c * l, 1],
            data: self.data,
        }
    }

    pub fn reshaped(self, shape: [usize; 3]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot view {:?} as {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Gathers batch items `idx` in order.
    pub fn select(&self, idx: &[usize]) -> Tensor {
        let n = self.item_size();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(self.item(i));
        }
        Tensor {
            shape: [idx.len(), self.shape[1], self.shape[2]],
            data,
        }
    }
}
