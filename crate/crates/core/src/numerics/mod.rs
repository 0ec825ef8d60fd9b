//! Small hand-differentiated network kernel: convolution, dense, ReLU and
//! elementwise-product layers with explicit forward/backward passes, an
//! RMSProp optimiser, flat binary checkpoints and a finite-difference
//! gradient checker.

mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod tensor;

use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, GradCheckReport, ParamLocation};
pub use layers::{backward, forward, Cache, Layer, LayerGrads, LayerSpec};
pub use optim::RmsProp;
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{context}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("expected {expected} {what}, found {found}")]
    Arity {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("stale cache: {0}")]
    StaleCache(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m×k` and `op(b)` is
/// `k×n`, all row-major; the flags select transposed storage.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Parameter gradients laid out like a network's `layers[i].params[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Vec<Tensor>>);

impl Gradients {
    pub fn zeros_like(layers: &[Layer]) -> Self {
        Self(
            layers
                .iter()
                .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect(),
        )
    }

    /// Adds a layer's parameter gradients into slot `layer`.
    pub fn accumulate(&mut self, layer: usize, grads: &[Tensor]) {
        for (acc, g) in self.0[layer].iter_mut().zip(grads) {
            acc.add_scaled(g, 1.0);
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_scaled(y, scale);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().flatten().for_each(|t| t.scale(factor));
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, t| m.max(t.max_abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(Tensor::all_finite)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter().flatten()
    }
}

/// Total scalar parameter count.
pub fn param_count(layers: &[Layer]) -> usize {
    layers.iter().map(|l| l.spec.param_count()).sum()
}

/// Runs single-input layers `layers[range]` in sequence, keeping caches.
pub fn forward_chain(
    layers: &[Layer],
    range: std::ops::Range<usize>,
    input: Tensor,
) -> Result<(Tensor, Vec<Cache>), NumericsError> {
    let mut caches = Vec::with_capacity(range.len());
    let mut x = input;
    for layer in &layers[range] {
        let (y, cache) = layer.forward(&[&x])?;
        caches.push(cache);
        x = y;
    }
    Ok((x, caches))
}

/// Backward through `layers[range]` given the caches of [`forward_chain`];
/// parameter gradients are added into `grads`, the input gradient returned.
pub fn backward_chain(
    layers: &[Layer],
    range: std::ops::Range<usize>,
    caches: &[Cache],
    upstream: Tensor,
    grads: &mut Gradients,
) -> Result<Tensor, NumericsError> {
    if caches.len() != range.len() {
        return Err(NumericsError::StaleCache(format!(
            "{} caches for {} layers",
            caches.len(),
            range.len()
        )));
    }
    let mut g = upstream;
    for (i, cache) in range.clone().zip(caches).rev() {
        let lg = layers[i].backward(cache, &g)?;
        grads.accumulate(i, &lg.params);
        g = lg.inputs.into_iter().next().expect("single-input layer");
    }
    Ok(g)
}

/// Inference through `layers[range]` without caches.
pub fn infer_chain(layers: &[Layer], range: std::ops::Range<usize>, input: Tensor) -> Result<Tensor, NumericsError> {
    let mut x = input;
    for layer in &layers[range] {
        x = layer.infer(&[&x])?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_handles_transposes() {
        // a = [[1,2,3],[4,5,6]], b = [[1,0],[0,1],[1,1]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // aᵀ stored as [3×2]
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [1.0; 4];
        gemm(2, 3, 2, &at, true, &bt, true, &mut c2, 1.0);
        assert_eq!(c2, [5.0, 6.0, 11.0, 12.0]);
    }
}
