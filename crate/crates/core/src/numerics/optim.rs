use super::{Gradients, Layer, NumericsError, Tensor};

/// RMSProp with a running mean of squared gradients per parameter:
/// `v ← ρ·v + (1−ρ)·g²`, `θ ← θ − α·g/√(v+ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub step_size: f64,
    pub decay: f64,
    pub epsilon: f64,
    mean_square: Vec<Vec<Tensor>>,
}

impl RmsProp {
    pub const DEFAULT_STEP_SIZE: f64 = 5e-4;
    pub const DEFAULT_DECAY: f64 = 0.99;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(step_size: f64) -> Self {
        Self {
            step_size,
            decay: Self::DEFAULT_DECAY,
            epsilon: Self::DEFAULT_EPSILON,
            mean_square: Vec::new(),
        }
    }

    pub fn mean_square(&self) -> &[Vec<Tensor>] {
        &self.mean_square
    }

    /// Applies one update. On a non-finite or misaligned gradient nothing is
    /// modified.
    pub fn step(&mut self, layers: &mut [Layer], grads: &Gradients) -> Result<(), NumericsError> {
        if grads.0.len() != layers.len() {
            return Err(NumericsError::Arity {
                what: "gradient layers",
                expected: layers.len(),
                found: grads.0.len(),
            });
        }
        for (i, (layer, g)) in layers.iter().zip(&grads.0).enumerate() {
            if g.len() != layer.params.len() {
                return Err(NumericsError::Arity {
                    what: "gradient tensors",
                    expected: layer.params.len(),
                    found: g.len(),
                });
            }
            for (j, (p, gt)) in layer.params.iter().zip(g).enumerate() {
                if p.shape() != gt.shape() {
                    return Err(NumericsError::ShapeMismatch {
                        context: "gradient",
                        expected: p.shape().to_vec(),
                        found: gt.shape().to_vec(),
                    });
                }
                if !gt.all_finite() {
                    return Err(NumericsError::NonFinite(format!("gradient of layer {i} tensor {j}")));
                }
            }
        }
        if self.mean_square.is_empty() {
            self.mean_square = Gradients::zeros_like(layers).0;
        }
        let (rho, alpha, eps) = (self.decay, self.step_size, self.epsilon);
        for ((layer, g), v) in layers.iter_mut().zip(&grads.0).zip(&mut self.mean_square) {
            for ((p, gt), vt) in layer.params.iter_mut().zip(g).zip(v) {
                for ((theta, &gi), vi) in p.data_mut().iter_mut().zip(gt.data()).zip(vt.data_mut()) {
                    *vi = rho * *vi + (1.0 - rho) * gi * gi;
                    *theta -= alpha * gi / (*vi + eps).sqrt();
                }
            }
        }
        Ok(())
    }
}
