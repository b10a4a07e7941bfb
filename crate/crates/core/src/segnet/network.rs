use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    concat_channels, conv_backward, conv_cols, im2col, maxpool_4x4_with_argmax, maxpool_backward, relu,
    relu_backward, sigmoid, split_channels, upsample_4x, upsample_backward, ConvGrad, ConvLayer, POOL,
};
use super::{Real, ResourceLedger, SegnetError, Tensor};

/// Channel widths of the five convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegNetShape {
    pub input_channels: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub conv3: usize,
    pub conv4: usize,
}

impl SegNetShape {
    /// The deployed network: 3 -> 16 -> 16 -> pool -> 16 -> up -> (16+16) -> 8 -> 1.
    pub const TABLE: SegNetShape = SegNetShape {
        input_channels: 3,
        conv1: 16,
        conv2: 16,
        conv3: 16,
        conv4: 8,
    };

    /// `(c_in, c_out)` of each convolution.
    pub fn layer_channels(&self) -> [(usize, usize); 5] {
        [
            (self.input_channels, self.conv1),
            (self.conv1, self.conv2),
            (self.conv2, self.conv3),
            (self.conv3 + self.conv2, self.conv4),
            (self.conv4, 1),
        ]
    }
}

impl Default for SegNetShape {
    fn default() -> Self {
        Self::TABLE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegNet<T> {
    pub shape: SegNetShape,
    pub layers: [ConvLayer<T>; 5],
}

/// Probability map, thresholded mask and the cost ledger of one forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference<T> {
    pub probability: Tensor<T>,
    /// 1 where probability > 0.5, row-major `h x w`.
    pub mask: Vec<u8>,
    pub ledger: ResourceLedger,
}

/// Intermediate values kept for backpropagation.
pub(crate) struct Cache<T> {
    cols: [Vec<T>; 5],
    z: [Tensor<T>; 4],
    pool_arg: Vec<u32>,
    pub(crate) logits: Tensor<T>,
    h: usize,
    w: usize,
}

pub type Gradients<T> = [ConvGrad<T>; 5];

impl<T: Real> SegNet<T> {
    pub fn zeros(shape: SegNetShape) -> Self {
        Self {
            shape,
            layers: shape.layer_channels().map(|(ci, co)| ConvLayer::zeros(ci, co)),
        }
    }

    /// He-normal kernels (std sqrt(2 / fan_in)), zero biases.
    pub fn init(shape: SegNetShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(shape);
        for layer in &mut net.layers {
            let normal = Normal::new(0.0, (2.0 / (9 * layer.cin) as f64).sqrt()).expect("positive std");
            for k in &mut layer.kernel {
                *k = T::from_f64(normal.sample(&mut rng));
            }
        }
        net
    }

    pub fn validate(&self) -> Result<(), SegnetError> {
        for (layer, (ci, co)) in self.layers.iter().zip(self.shape.layer_channels()) {
            layer.validate()?;
            if (layer.cin, layer.cout) != (ci, co) {
                return Err(SegnetError::MalformedWeights(format!(
                    "layer is 3x3x{}x{}, architecture needs 3x3x{ci}x{co}",
                    layer.cin, layer.cout
                )));
            }
        }
        Ok(())
    }

    /// Kernel weights (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.len()).sum()
    }

    pub fn convert<U: Real>(&self) -> SegNet<U> {
        SegNet {
            shape: self.shape,
            layers: std::array::from_fn(|i| self.layers[i].convert()),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), SegnetError> {
        self.validate()?;
        if x.c != self.shape.input_channels {
            return Err(SegnetError::ChannelMismatch {
                expected: self.shape.input_channels,
                actual: x.c,
            });
        }
        if x.h == 0 || x.w == 0 || x.h % POOL != 0 || x.w % POOL != 0 {
            return Err(SegnetError::NotDivisible {
                h: x.h,
                w: x.w,
                factor: POOL,
            });
        }
        Ok(())
    }

    /// conv1 -> ReLU -> conv2 -> ReLU (skip) -> maxpool -> conv3 -> ReLU ->
    /// upsample -> concat(skip) -> conv4 -> ReLU -> conv5 -> sigmoid -> > 0.5.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Inference<T>, SegnetError> {
        self.check_input(x)?;
        let mut ledger = ResourceLedger::new(self.weight_count());
        let (h, w) = (x.h, x.w);
        let l = &self.layers;
        let a1 = relu(&conv_cols(&im2col(x), h, w, &l[0]));
        ledger.conv("conv1", &a1, l[0].macs(h, w));
        let a2 = relu(&conv_cols(&im2col(&a1), h, w, &l[1]));
        ledger.conv("conv2", &a2, l[1].macs(h, w));
        let (p, _) = maxpool_4x4_with_argmax(&a2)?;
        ledger.other("maxpool", &p);
        let a3 = relu(&conv_cols(&im2col(&p), p.h, p.w, &l[2]));
        ledger.conv("conv3", &a3, l[2].macs(p.h, p.w));
        let u = upsample_4x(&a3);
        ledger.other("upsample", &u);
        let cat = concat_channels(&u, &a2)?;
        ledger.other("concat", &cat);
        let a4 = relu(&conv_cols(&im2col(&cat), h, w, &l[3]));
        ledger.conv("conv4", &a4, l[3].macs(h, w));
        let z5 = conv_cols(&im2col(&a4), h, w, &l[4]);
        ledger.conv("conv5", &z5, l[4].macs(h, w));
        let probability = Tensor {
            data: z5.data.iter().map(|&v| sigmoid(v)).collect(),
            ..z5
        };
        let half = T::from_f64(0.5);
        let mask = probability.data.iter().map(|&p| u8::from(p > half)).collect();
        Ok(Inference {
            probability,
            mask,
            ledger,
        })
    }

    pub(crate) fn forward_cache(&self, x: &Tensor<T>) -> Result<Cache<T>, SegnetError> {
        self.check_input(x)?;
        let (h, w) = (x.h, x.w);
        let l = &self.layers;
        let c0 = im2col(x);
        let z1 = conv_cols(&c0, h, w, &l[0]);
        let c1 = im2col(&relu(&z1));
        let z2 = conv_cols(&c1, h, w, &l[1]);
        let a2 = relu(&z2);
        let (p, pool_arg) = maxpool_4x4_with_argmax(&a2)?;
        let c2 = im2col(&p);
        let z3 = conv_cols(&c2, p.h, p.w, &l[2]);
        let cat = concat_channels(&upsample_4x(&relu(&z3)), &a2)?;
        let c3 = im2col(&cat);
        let z4 = conv_cols(&c3, h, w, &l[3]);
        let c4 = im2col(&relu(&z4));
        let logits = conv_cols(&c4, h, w, &l[4]);
        Ok(Cache {
            cols: [c0, c1, c2, c3, c4],
            z: [z1, z2, z3, z4],
            pool_arg,
            logits,
            h,
            w,
        })
    }

    /// Backpropagate `dlogits` (gradient of the loss with respect to the
    /// conv5 output) through the cached forward pass.
    pub(crate) fn backward(&self, cache: &Cache<T>, dlogits: &Tensor<T>) -> Gradients<T> {
        let l = &self.layers;
        let (h, w) = (cache.h, cache.w);
        let (ph, pw) = (h / POOL, w / POOL);
        let mut g: Gradients<T> = std::array::from_fn(|i| ConvGrad::zeros_like(&l[i]));
        let [z1, z2, z3, z4] = &cache.z;

        let mut d4 = conv_backward(&cache.cols[4], h, w, &l[4], dlogits, &mut g[4], true).expect("input grad");
        relu_backward(z4, &mut d4);
        let dcat = conv_backward(&cache.cols[3], h, w, &l[3], &d4, &mut g[3], true).expect("input grad");
        let (du, dskip) = split_channels(&dcat, self.shape.conv3);
        let mut d3 = upsample_backward(&du);
        relu_backward(z3, &mut d3);
        let dp = conv_backward(&cache.cols[2], ph, pw, &l[2], &d3, &mut g[2], true).expect("input grad");
        let mut d2 = maxpool_backward(&dp, &cache.pool_arg, h, w);
        for (a, &b) in d2.data.iter_mut().zip(&dskip.data) {
            *a += b;
        }
        relu_backward(z2, &mut d2);
        let mut d1 = conv_backward(&cache.cols[1], h, w, &l[1], &d2, &mut g[1], true).expect("input grad");
        relu_backward(z1, &mut d1);
        conv_backward(&cache.cols[0], h, w, &l[0], &d1, &mut g[0], false);
        g
    }
}

#[cfg(test)]
mod tests {
    use super::super::layers::tests::{assert_close, naive_conv, random_tensor};
    use super::*;
    use rand::Rng;

    fn naive_forward(net: &SegNet<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let r = |t: Tensor<f64>| relu(&t);
        let a1 = r(naive_conv(x, &net.layers[0]));
        let a2 = r(naive_conv(&a1, &net.layers[1]));
        // Pool and upsample by direct indexing.
        let (ph, pw) = (a2.h / 4, a2.w / 4);
        let mut p = Tensor::zeros(ph, pw, a2.c);
        for y in 0..ph {
            for x in 0..pw {
                for c in 0..a2.c {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..4 {
                        for dx in 0..4 {
                            m = m.max(a2.at(4 * y + dy, 4 * x + dx, c));
                        }
                    }
                    let i = p.index(y, x, c);
                    p.data[i] = m;
                }
            }
        }
        let a3 = r(naive_conv(&p, &net.layers[2]));
        let mut cat = Tensor::zeros(a2.h, a2.w, a3.c + a2.c);
        for y in 0..a2.h {
            for x in 0..a2.w {
                for c in 0..a3.c {
                    let i = cat.index(y, x, c);
                    cat.data[i] = a3.at(y / 4, x / 4, c);
                }
                for c in 0..a2.c {
                    let i = cat.index(y, x, a3.c + c);
                    cat.data[i] = a2.at(y, x, c);
                }
            }
        }
        let a4 = r(naive_conv(&cat, &net.layers[3]));
        let z5 = naive_conv(&a4, &net.layers[4]);
        Tensor {
            data: z5.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
            ..z5
        }
    }

    #[test]
    fn full_forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..3 {
            let mut net = SegNet::<f64>::init(SegNetShape::TABLE, seed);
            for l in &mut net.layers {
                for b in &mut l.bias {
                    *b = rng.gen_range(-0.1..0.1);
                }
            }
            let x = random_tensor(&mut rng, 8, 12, 3);
            let got = net.forward(&x).unwrap().probability;
            assert_close(&got.data, &naive_forward(&net, &x).data, 1e-9);
        }
    }

    #[test]
    fn zero_network_predicts_background() {
        let net = SegNet::<f32>::zeros(SegNetShape::TABLE);
        let out = net.forward(&Tensor::filled(72, 88, 3, 0.7)).unwrap();
        assert!(out.probability.data.iter().all(|&p| p == 0.5));
        assert!(out.mask.iter().all(|&m| m == 0));
    }

    #[test]
    fn rejects_bad_inputs_and_weights() {
        let net = SegNet::<f32>::zeros(SegNetShape::TABLE);
        assert!(net.forward(&Tensor::zeros(72, 88, 1)).is_err());
        assert!(net.forward(&Tensor::zeros(70, 88, 3)).is_err());
        let mut bad = net.clone();
        bad.layers[2].kernel.pop();
        assert!(matches!(bad.forward(&Tensor::zeros(72, 88, 3)), Err(SegnetError::MalformedWeights(_))));
    }

    #[test]
    fn table_ledger_and_shape_chain() {
        let net = SegNet::<f32>::init(SegNetShape::TABLE, 0);
        let ledger = net.forward(&Tensor::filled(72, 88, 3, 0.3)).unwrap().ledger;
        let rows: Vec<(&str, usize, usize, usize)> =
            ledger.layers.iter().map(|l| (l.name.as_str(), l.width, l.height, l.channels)).collect();
        assert_eq!(
            rows,
            [
                ("conv1", 88, 72, 16),
                ("conv2", 88, 72, 16),
                ("maxpool", 22, 18, 16),
                ("conv3", 22, 18, 16),
                ("upsample", 88, 72, 16),
                ("concat", 88, 72, 32),
                ("conv4", 88, 72, 8),
                ("conv5", 88, 72, 1),
            ]
        );
        assert_eq!(ledger.conv_macs(), [2_737_152, 14_598_144, 912_384, 14_598_144, 456_192]);
        assert_eq!(ledger.total_macs(), 33_302_016);
        assert_eq!(ledger.weight_bytes, 7416);
        assert_eq!(ledger.layers[2].activation_bytes, 6336);
        assert_eq!(ledger.layers[4].activation_bytes, 101_376);
        assert_eq!(ledger.peak_activation_bytes(), 202_752);
        for (l, (ci, co)) in ledger.conv_macs().iter().zip(SegNetShape::TABLE.layer_channels()) {
            let (h, w) = if ci == 16 && co == 16 && *l < 1_000_000 { (18, 22) } else { (72, 88) };
            assert_eq!(*l, (h * w * co * 9 * ci) as u64);
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = SegNet::<f32>::init(SegNetShape::TABLE, 5);
        assert_eq!(a, SegNet::init(SegNetShape::TABLE, 5));
        assert_ne!(a, SegNet::init(SegNetShape::TABLE, 6));
        assert_eq!(a.weight_count(), 7416);
    }
}
