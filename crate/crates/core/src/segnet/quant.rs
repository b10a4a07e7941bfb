//! Per-layer symmetric int8 weight quantization and the weights file.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! "FVSN"                      magic
//! u16 version = 1
//! u16 layer count = 5
//! per layer:
//!   u8 kh = 3, u8 kw = 3, u16 c_in, u16 c_out
//!   f32 scale
//!   i8 x (kh * kw * c_in * c_out)   kernel, [ky][kx][c_in][c_out]
//! per layer:
//!   f32 x c_out                     bias, full precision
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ConvLayer, Real, SegNet, SegNetShape, SegnetError};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"FVSN";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub cin: usize,
    pub cout: usize,
    /// Weight = value * scale.
    pub scale: f32,
    pub values: Vec<i8>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNet {
    pub shape: SegNetShape,
    pub layers: [QuantizedLayer; 5],
}

fn quantize_layer<T: Real>(l: &ConvLayer<T>) -> QuantizedLayer {
    let max = l.kernel.iter().map(|v| v.to_f64().abs()).fold(0.0, f64::max);
    let scale = if max > 0.0 { (max / 127.0) as f32 } else { 1.0 };
    let values = l
        .kernel
        .iter()
        .map(|v| (v.to_f64() / f64::from(scale)).round().clamp(-127.0, 127.0) as i8)
        .collect();
    QuantizedLayer {
        cin: l.cin,
        cout: l.cout,
        scale,
        values,
        bias: l.bias.iter().map(|b| b.to_f64() as f32).collect(),
    }
}

impl QuantizedNet {
    /// Symmetric quantization with `scale = max|w| / 127` per layer.
    pub fn quantize<T: Real>(net: &SegNet<T>) -> Result<Self, SegnetError> {
        net.validate()?;
        Ok(Self {
            shape: net.shape,
            layers: std::array::from_fn(|i| quantize_layer(&net.layers[i])),
        })
    }

    pub fn dequantize<T: Real>(&self) -> SegNet<T> {
        SegNet {
            shape: self.shape,
            layers: std::array::from_fn(|i| {
                let q = &self.layers[i];
                let s = f64::from(q.scale);
                ConvLayer {
                    cin: q.cin,
                    cout: q.cout,
                    kernel: q.values.iter().map(|&v| T::from_f64(f64::from(v) * s)).collect(),
                    bias: q.bias.iter().map(|&b| T::from_f64(f64::from(b))).collect(),
                }
            }),
        }
    }

    /// Kernel bytes at one byte per weight.
    pub fn payload_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload_bytes() + 128);
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u16).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&[3, 3]);
            out.extend_from_slice(&(l.cin as u16).to_le_bytes());
            out.extend_from_slice(&(l.cout as u16).to_le_bytes());
            out.extend_from_slice(&l.scale.to_le_bytes());
            out.extend(l.values.iter().map(|&v| v as u8));
        }
        for l in &self.layers {
            for b in &l.bias {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SegnetError> {
        let mut r = bytes;
        let bad = |m: &str| SegnetError::MalformedWeights(m.to_string());
        let mut take = |n: usize| -> Result<&[u8], SegnetError> {
            if r.len() < n {
                return Err(SegnetError::MalformedWeights("file truncated".into()));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(4)? != WEIGHTS_MAGIC {
            return Err(bad("bad magic"));
        }
        let u16_at = |b: &[u8]| u16::from_le_bytes([b[0], b[1]]);
        let version = u16_at(take(2)?);
        if version != WEIGHTS_VERSION {
            return Err(SegnetError::MalformedWeights(format!("unsupported version {version}")));
        }
        if u16_at(take(2)?) != 5 {
            return Err(bad("expected 5 layers"));
        }
        let mut headers = Vec::with_capacity(5);
        for _ in 0..5 {
            let h = take(10)?;
            if h[0] != 3 || h[1] != 3 {
                return Err(bad("only 3x3 kernels are supported"));
            }
            let (cin, cout) = (u16_at(&h[2..4]) as usize, u16_at(&h[4..6]) as usize);
            let scale = f32::from_le_bytes([h[6], h[7], h[8], h[9]]);
            if !(scale.is_finite() && scale > 0.0) {
                return Err(bad("scale must be positive"));
            }
            let values = take(9 * cin * cout)?.iter().map(|&b| b as i8).collect();
            headers.push((cin, cout, scale, values));
        }
        let mut layers = Vec::with_capacity(5);
        for (cin, cout, scale, values) in headers {
            let bias = take(4 * cout)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            layers.push(QuantizedLayer {
                cin,
                cout,
                scale,
                values,
                bias,
            });
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let shape = SegNetShape {
            input_channels: layers[0].cin,
            conv1: layers[0].cout,
            conv2: layers[1].cout,
            conv3: layers[2].cout,
            conv4: layers[3].cout,
        };
        let net = QuantizedNet {
            shape,
            layers: layers.try_into().expect("five layers"),
        };
        net.dequantize::<f32>().validate()?;
        Ok(net)
    }
}

pub fn write_weights(net: &QuantizedNet, path: &Path) -> Result<(), SegnetError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&net.to_bytes())?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<QuantizedNet, SegnetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    QuantizedNet::from_bytes(&bytes)
}
