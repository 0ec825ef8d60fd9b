//! Flat binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic "MGCK" | version u32 | layer count u32
//! per layer:   kind u8 | four u32 dimensions
//! then every parameter tensor of every layer, in order, as f64 LE
//! ```
//!
//! Dimensions are `in, out, kernel, stride` for convolutions, `fan_in,
//! fan_out, 0, 0` for dense layers and zeros otherwise.

use std::io::{Read, Write};

use super::{Layer, LayerSpec, NumericsError, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn encode_spec(spec: &LayerSpec) -> (u8, [u32; 4]) {
    let d = |x: usize| u32::try_from(x).expect("layer dimension fits in u32");
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => (0, [d(in_channels), d(out_channels), d(kernel), d(stride)]),
        LayerSpec::Dense { fan_in, fan_out } => (1, [d(fan_in), d(fan_out), 0, 0]),
        LayerSpec::Relu => (2, [0; 4]),
        LayerSpec::Product => (3, [0; 4]),
    }
}

fn decode_spec(kind: u8, dims: [u32; 4]) -> Result<LayerSpec, NumericsError> {
    let [a, b, c, d] = dims.map(|x| x as usize);
    Ok(match kind {
        0 => LayerSpec::Conv2d {
            in_channels: a,
            out_channels: b,
            kernel: c,
            stride: d,
        },
        1 => LayerSpec::Dense { fan_in: a, fan_out: b },
        2 => LayerSpec::Relu,
        3 => LayerSpec::Product,
        k => return Err(NumericsError::Checkpoint(format!("unknown layer kind {k}"))),
    })
}

pub fn write_checkpoint(out: &mut impl Write, layers: &[Layer]) -> Result<(), NumericsError> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&u32::try_from(layers.len()).expect("layer count").to_le_bytes())?;
    for layer in layers {
        let (kind, dims) = encode_spec(&layer.spec);
        out.write_all(&[kind])?;
        for d in dims {
            out.write_all(&d.to_le_bytes())?;
        }
    }
    for layer in layers {
        for p in &layer.params {
            for x in p.data() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u32(input: &mut impl Read) -> Result<u32, NumericsError> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Vec<Layer>, NumericsError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NumericsError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(input)?;
    if version != CHECKPOINT_VERSION {
        return Err(NumericsError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(input)? as usize;
    let mut specs = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let mut kind = [0u8; 1];
        input.read_exact(&mut kind)?;
        let mut dims = [0u32; 4];
        for d in &mut dims {
            *d = read_u32(input)?;
        }
        specs.push(decode_spec(kind[0], dims)?);
    }
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut params = Vec::new();
        for shape in spec.param_shapes() {
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            input.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.push(Tensor::new(shape, data)?);
        }
        layers.push(Layer { spec, params });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(NumericsError::Checkpoint("trailing bytes".into()));
    }
    Ok(layers)
}
