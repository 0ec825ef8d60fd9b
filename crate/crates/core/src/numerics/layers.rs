use rand::Rng;

use super::{gemm, NumericsError, Tensor};

/// One of the layer kinds the networks are built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// Valid convolution over `[batch, height, width, channels]` input with a
    /// square `kernel` and equal `stride` on both axes.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Affine map over `[batch, ...]`; trailing axes are flattened.
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    Relu,
    /// Elementwise product of two equally shaped inputs.
    Product,
}

impl LayerSpec {
    pub fn input_arity(&self) -> usize {
        match self {
            LayerSpec::Product => 2,
            _ => 1,
        }
    }

    /// Weight then bias shape for parametrised kinds, nothing otherwise.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![kernel * kernel * in_channels, out_channels], vec![out_channels]],
            LayerSpec::Dense { fan_in, fan_out } => vec![vec![fan_in, fan_out], vec![fan_out]],
            LayerSpec::Relu | LayerSpec::Product => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Output shape for a given (first) input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NumericsError> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let ok = input.len() == 4
                    && input[3] == in_channels
                    && input[1] >= kernel
                    && input[2] >= kernel
                    && stride > 0;
                if !ok {
                    return Err(NumericsError::ShapeMismatch {
                        context: "conv2d input",
                        expected: vec![input.first().copied().unwrap_or(0), kernel, kernel, in_channels],
                        found: input.to_vec(),
                    });
                }
                let oh = (input[1] - kernel) / stride + 1;
                let ow = (input[2] - kernel) / stride + 1;
                Ok(vec![input[0], oh, ow, out_channels])
            }
            LayerSpec::Dense { fan_in, fan_out } => {
                let width: usize = input.iter().skip(1).product();
                if input.is_empty() || width != fan_in {
                    return Err(NumericsError::ShapeMismatch {
                        context: "dense input",
                        expected: vec![input.first().copied().unwrap_or(0), fan_in],
                        found: input.to_vec(),
                    });
                }
                Ok(vec![input[0], fan_out])
            }
            LayerSpec::Relu | LayerSpec::Product => Ok(input.to_vec()),
        }
    }

    /// He-scaled uniform weights, zero biases.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<Tensor> {
        let fan_in = match *self {
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => kernel * kernel * in_channels,
            LayerSpec::Dense { fan_in, .. } => fan_in,
            _ => return Vec::new(),
        };
        let bound = (6.0 / fan_in as f64).sqrt();
        let shapes = self.param_shapes();
        let n: usize = shapes[0].iter().product();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        vec![
            Tensor::new(shapes[0].clone(), weights).expect("shape matches count"),
            Tensor::zeros(&shapes[1]),
        ]
    }
}

/// A layer spec with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Tensor>,
}

impl Layer {
    pub fn new(spec: LayerSpec, rng: &mut impl Rng) -> Self {
        Self {
            params: spec.init(rng),
            spec,
        }
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Cache), NumericsError> {
        forward(&self.spec, &self.params, inputs)
    }

    pub fn backward(&self, cache: &Cache, upstream: &Tensor) -> Result<LayerGrads, NumericsError> {
        backward(&self.spec, &self.params, cache, upstream)
    }

    /// Forward pass that keeps nothing for backward.
    pub fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor, NumericsError> {
        check_inputs(&self.spec, &self.params, inputs)?;
        let input = inputs[0];
        match self.spec {
            LayerSpec::Conv2d { .. } => {
                let (out, _) = conv_forward(&self.spec, &self.params, input)?;
                Ok(out)
            }
            LayerSpec::Dense { .. } => dense_forward(&self.spec, &self.params, input),
            LayerSpec::Relu => Ok(relu(input)),
            LayerSpec::Product => Ok(product(input, inputs[1])),
        }
    }
}

/// Whatever backward needs from the matching forward call.
#[derive(Clone, Debug)]
pub struct Cache {
    spec: LayerSpec,
    input_shapes: Vec<Vec<usize>>,
    output_shape: Vec<usize>,
    saved: Vec<Tensor>,
}

impl Cache {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

/// Gradients with respect to each input and each parameter tensor.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub inputs: Vec<Tensor>,
    pub params: Vec<Tensor>,
}

fn check_inputs(spec: &LayerSpec, params: &[Tensor], inputs: &[&Tensor]) -> Result<(), NumericsError> {
    if inputs.len() != spec.input_arity() {
        return Err(NumericsError::Arity {
            what: "inputs",
            expected: spec.input_arity(),
            found: inputs.len(),
        });
    }
    let shapes = spec.param_shapes();
    if params.len() != shapes.len() {
        return Err(NumericsError::Arity {
            what: "parameter tensors",
            expected: shapes.len(),
            found: params.len(),
        });
    }
    for (p, s) in params.iter().zip(&shapes) {
        if p.shape() != s.as_slice() {
            return Err(NumericsError::ShapeMismatch {
                context: "parameter",
                expected: s.clone(),
                found: p.shape().to_vec(),
            });
        }
    }
    if *spec == LayerSpec::Product && inputs[0].shape() != inputs[1].shape() {
        return Err(NumericsError::ShapeMismatch {
            context: "product operands",
            expected: inputs[0].shape().to_vec(),
            found: inputs[1].shape().to_vec(),
        });
    }
    spec.output_shape(inputs[0].shape())?;
    Ok(())
}

pub fn forward(spec: &LayerSpec, params: &[Tensor], inputs: &[&Tensor]) -> Result<(Tensor, Cache), NumericsError> {
    check_inputs(spec, params, inputs)?;
    let input = inputs[0];
    let (output, saved) = match spec {
        LayerSpec::Conv2d { .. } => {
            let (out, patches) = conv_forward(spec, params, input)?;
            (out, vec![patches])
        }
        LayerSpec::Dense { .. } => (dense_forward(spec, params, input)?, vec![input.clone()]),
        LayerSpec::Relu => (relu(input), vec![input.clone()]),
        LayerSpec::Product => (product(input, inputs[1]), vec![input.clone(), inputs[1].clone()]),
    };
    let cache = Cache {
        spec: *spec,
        input_shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
        output_shape: output.shape().to_vec(),
        saved,
    };
    Ok((output, cache))
}

pub fn backward(
    spec: &LayerSpec,
    params: &[Tensor],
    cache: &Cache,
    upstream: &Tensor,
) -> Result<LayerGrads, NumericsError> {
    if cache.spec != *spec {
        return Err(NumericsError::StaleCache(format!(
            "cache from {:?} used for {:?}",
            cache.spec, spec
        )));
    }
    if upstream.shape() != cache.output_shape.as_slice() {
        return Err(NumericsError::StaleCache(format!(
            "upstream gradient {:?} does not match forward output {:?}",
            upstream.shape(),
            cache.output_shape
        )));
    }
    let shapes = spec.param_shapes();
    if params.len() != shapes.len() || params.iter().zip(&shapes).any(|(p, s)| p.shape() != s.as_slice()) {
        return Err(NumericsError::StaleCache(
            "parameter shapes changed since forward".into(),
        ));
    }
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => {
            let patches = &cache.saved[0];
            let (m, kkc) = (patches.shape()[0], patches.shape()[1]);
            let f = out_channels;
            let dy = upstream.data();
            let mut dw = vec![0.0; kkc * f];
            gemm(kkc, m, f, patches.data(), true, dy, false, &mut dw, 0.0);
            let db = column_sums(dy, m, f);
            let mut dp = vec![0.0; m * kkc];
            gemm(m, f, kkc, dy, false, params[0].data(), true, &mut dp, 0.0);
            let in_shape = &cache.input_shapes[0];
            let dx = col2im(&dp, in_shape, &cache.output_shape, in_channels, kernel, stride);
            Ok(LayerGrads {
                inputs: vec![Tensor::new(in_shape.clone(), dx)?],
                params: vec![Tensor::new(vec![kkc, f], dw)?, Tensor::new(vec![f], db)?],
            })
        }
        LayerSpec::Dense { fan_in, fan_out } => {
            let x = &cache.saved[0];
            let b = x.batch();
            let dy = upstream.data();
            let mut dw = vec![0.0; fan_in * fan_out];
            gemm(fan_in, b, fan_out, x.data(), true, dy, false, &mut dw, 0.0);
            let db = column_sums(dy, b, fan_out);
            let mut dx = vec![0.0; b * fan_in];
            gemm(b, fan_out, fan_in, dy, false, params[0].data(), true, &mut dx, 0.0);
            Ok(LayerGrads {
                inputs: vec![Tensor::new(cache.input_shapes[0].clone(), dx)?],
                params: vec![Tensor::new(vec![fan_in, fan_out], dw)?, Tensor::new(vec![fan_out], db)?],
            })
        }
        LayerSpec::Relu => {
            let x = &cache.saved[0];
            let dx = x
                .data()
                .iter()
                .zip(upstream.data())
                .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                .collect();
            Ok(LayerGrads {
                inputs: vec![Tensor::new(x.shape().to_vec(), dx)?],
                params: Vec::new(),
            })
        }
        LayerSpec::Product => {
            let (a, b) = (&cache.saved[0], &cache.saved[1]);
            Ok(LayerGrads {
                inputs: vec![product(upstream, b), product(upstream, a)],
                params: Vec::new(),
            })
        }
    }
}

fn column_sums(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
    out
}

fn dense_forward(spec: &LayerSpec, params: &[Tensor], input: &Tensor) -> Result<Tensor, NumericsError> {
    let LayerSpec::Dense { fan_in, fan_out } = *spec else {
        unreachable!("dense_forward on {spec:?}")
    };
    let b = input.batch();
    let mut out = Vec::with_capacity(b * fan_out);
    for _ in 0..b {
        out.extend_from_slice(params[1].data());
    }
    gemm(
        b,
        fan_in,
        fan_out,
        input.data(),
        false,
        params[0].data(),
        false,
        &mut out,
        1.0,
    );
    Tensor::new(vec![b, fan_out], out)
}

/// Returns the output and the im2col patch matrix `[b*oh*ow, k*k*c]`.
fn conv_forward(spec: &LayerSpec, params: &[Tensor], input: &Tensor) -> Result<(Tensor, Tensor), NumericsError> {
    let LayerSpec::Conv2d {
        in_channels: c,
        out_channels: f,
        kernel: k,
        stride: s,
    } = *spec
    else {
        unreachable!("conv_forward on {spec:?}")
    };
    let out_shape = spec.output_shape(input.shape())?;
    let (b, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let kkc = k * k * c;
    let m = b * oh * ow;
    let x = input.data();
    let mut patches = Vec::with_capacity(m * kkc);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ki in 0..k {
                    let row = (bi * h + oy * s + ki) * w;
                    let start = (row + ox * s) * c;
                    patches.extend_from_slice(&x[start..start + k * c]);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(m * f);
    for _ in 0..m {
        out.extend_from_slice(params[1].data());
    }
    gemm(m, kkc, f, &patches, false, params[0].data(), false, &mut out, 1.0);
    Ok((Tensor::new(out_shape, out)?, Tensor::new(vec![m, kkc], patches)?))
}

fn col2im(dp: &[f64], in_shape: &[usize], out_shape: &[usize], c: usize, k: usize, s: usize) -> Vec<f64> {
    let (b, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut dx = vec![0.0; b * h * w * c];
    let kc = k * c;
    let mut p = 0;
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ki in 0..k {
                    let start = ((bi * h + oy * s + ki) * w + ox * s) * c;
                    for (d, g) in dx[start..start + kc].iter_mut().zip(&dp[p..p + kc]) {
                        *d += g;
                    }
                    p += kc;
                }
            }
        }
    }
    dx
}

fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn product(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        let (y, cache) = forward(&LayerSpec::Relu, &[], &[&x]).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = backward(&LayerSpec::Relu, &[], &cache, &Tensor::from_vec(vec![5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.inputs[0].data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let spec = LayerSpec::Dense { fan_in: 3, fan_out: 3 };
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let params = vec![Tensor::new(vec![3, 3], w).unwrap(), Tensor::zeros(&[3])];
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.25, 0.0, -7.0]).unwrap();
        let (y, _) = forward(&spec, &params, &[&x]).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dense_weight_grad_is_outer_product() {
        let spec = LayerSpec::Dense { fan_in: 2, fan_out: 3 };
        let params = spec.init(&mut ChaCha8Rng::seed_from_u64(0));
        let x = Tensor::new(vec![1, 2], vec![0.5, -1.5]).unwrap();
        let up = Tensor::new(vec![1, 3], vec![1.0, 2.0, -3.0]).unwrap();
        let (_, cache) = forward(&spec, &params, &[&x]).unwrap();
        let g = backward(&spec, &params, &cache, &up).unwrap();
        let expected: Vec<f64> = [0.5, -1.5]
            .iter()
            .flat_map(|xi| up.data().iter().map(move |u| xi * u))
            .collect();
        assert_eq!(g.params[0].data(), expected.as_slice());
        assert_eq!(g.params[1].data(), up.data());
    }

    #[test]
    fn conv_output_shape_for_mastery_input() {
        let spec = LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 16,
            kernel: 2,
            stride: 2,
        };
        assert_eq!(spec.output_shape(&[1, 10, 10, 3]).unwrap(), vec![1, 5, 5, 16]);
        let params = spec.init(&mut ChaCha8Rng::seed_from_u64(1));
        let (y, _) = forward(&spec, &params, &[&Tensor::zeros(&[1, 10, 10, 3])]).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5, 16]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let spec = LayerSpec::Conv2d {
            in_channels: 2,
            out_channels: 3,
            kernel: 2,
            stride: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = spec.init(&mut rng);
        params[1] = Tensor::from_vec(vec![0.1, -0.2, 0.3]);
        let x: Vec<f64> = (0..2 * 3 * 4 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(vec![2, 3, 4, 2], x).unwrap();
        let (y, _) = forward(&spec, &params, &[&x]).unwrap();
        let w = params[0].data();
        for b in 0..2 {
            for oy in 0..2 {
                for ox in 0..3 {
                    for f in 0..3 {
                        let mut acc = params[1].data()[f];
                        for ki in 0..2 {
                            for kj in 0..2 {
                                for c in 0..2 {
                                    let xi = x.data()[((b * 3 + oy + ki) * 4 + ox + kj) * 2 + c];
                                    acc += xi * w[((ki * 2 + kj) * 2 + c) * 3 + f];
                                }
                            }
                        }
                        let got = y.data()[((b * 2 + oy) * 3 + ox) * 3 + f];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let spec = LayerSpec::Dense { fan_in: 4, fan_out: 2 };
        let params = spec.init(&mut ChaCha8Rng::seed_from_u64(0));
        let err = forward(&spec, &params, &[&Tensor::zeros(&[1, 3])]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 4]") && msg.contains("[1, 3]"), "{msg}");
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let dense = LayerSpec::Dense { fan_in: 2, fan_out: 2 };
        let params = dense.init(&mut ChaCha8Rng::seed_from_u64(0));
        let x = Tensor::zeros(&[1, 2]);
        let (_, relu_cache) = forward(&LayerSpec::Relu, &[], &[&x]).unwrap();
        let err = backward(&dense, &params, &relu_cache, &x).unwrap_err();
        assert!(matches!(err, NumericsError::StaleCache(_)));
        let (_, cache) = forward(&dense, &params, &[&x]).unwrap();
        let err = backward(&dense, &params, &cache, &Tensor::zeros(&[2, 2])).unwrap_err();
        assert!(matches!(err, NumericsError::StaleCache(_)));
    }

    #[test]
    fn infer_matches_forward() {
        let spec = LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 4,
            kernel: 2,
            stride: 2,
        };
        let layer = Layer::new(spec, &mut ChaCha8Rng::seed_from_u64(9));
        let x = Tensor::filled(&[2, 6, 6, 3], 0.3);
        assert_eq!(layer.infer(&[&x]).unwrap(), layer.forward(&[&x]).unwrap().0);
    }
}
