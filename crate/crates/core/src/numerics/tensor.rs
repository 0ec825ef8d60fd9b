use super::NumericsError;

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension, treating a scalar as a batch of one.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Same data under a new shape.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NumericsError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NumericsError::ShapeMismatch {
                context: "reshape",
                expected: shape.to_vec(),
                found: self.shape,
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Row `i` of a tensor viewed as `[batch, rest]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.data.len() / self.batch().max(1);
        &self.data[i * width..(i + 1) * width]
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor, NumericsError> {
        let Some(first) = parts.first() else {
            return Ok(Tensor::zeros(&[0]));
        };
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for part in parts {
            if part.shape != first.shape {
                return Err(NumericsError::ShapeMismatch {
                    context: "stack",
                    expected: first.shape.clone(),
                    found: part.shape.clone(),
                });
            }
            data.extend_from_slice(&part.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Concatenates along the leading axis.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor, NumericsError> {
        let Some(first) = parts.first() else {
            return Ok(Tensor::zeros(&[0]));
        };
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for part in parts {
            if &part.shape[1..] != tail {
                return Err(NumericsError::ShapeMismatch {
                    context: "concat",
                    expected: first.shape.clone(),
                    found: part.shape.clone(),
                });
            }
            rows += part.shape[0];
            data.extend_from_slice(&part.data);
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        Ok(Tensor { shape, data })
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let width = self.data.len() / self.batch().max(1);
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * width..end * width].to_vec(),
        }
    }
}
