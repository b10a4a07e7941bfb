use super::{Real, SegnetError, Tensor};

pub const POOL: usize = 4;

/// 3x3 convolution weights, kernel stored `[ky][kx][c_in][c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub cin: usize,
    pub cout: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            kernel: vec![T::ZERO; 9 * cin * cout],
            bias: vec![T::ZERO; cout],
        }
    }

    pub fn validate(&self) -> Result<(), SegnetError> {
        if self.cin == 0 || self.cout == 0 || self.kernel.len() != 9 * self.cin * self.cout || self.bias.len() != self.cout
        {
            return Err(SegnetError::MalformedWeights(format!(
                "3x3x{}x{} layer has {} kernel and {} bias values",
                self.cin,
                self.cout,
                self.kernel.len(),
                self.bias.len()
            )));
        }
        if !self.kernel.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(SegnetError::NonFinite);
        }
        Ok(())
    }

    pub fn kernel_index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * 3 + kx) * self.cin + ci) * self.cout + co
    }

    /// Multiply-accumulates of one application to an `h x w` input.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        (h * w * self.cout * 9 * self.cin) as u64
    }

    pub fn convert<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            cin: self.cin,
            cout: self.cout,
            kernel: self.kernel.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            bias: self.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Zero-padded 3x3 patches: one row per output pixel, columns ordered
/// `(ky, kx, c)` to match the kernel layout.
pub(crate) fn im2col<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let (h, w, c) = x.shape();
    let row_len = 9 * c;
    let mut cols = vec![T::ZERO; h * w * row_len];
    for y in 0..h {
        for xx in 0..w {
            let row = &mut cols[(y * w + xx) * row_len..][..row_len];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = x.index(sy as usize, sx as usize, 0);
                    row[(ky * 3 + kx) * c..][..c].copy_from_slice(&x.data[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(dcols: &[T], h: usize, w: usize, c: usize) -> Tensor<T> {
    let row_len = 9 * c;
    let mut dx = Tensor::zeros(h, w, c);
    for y in 0..h {
        for xx in 0..w {
            let row = &dcols[(y * w + xx) * row_len..][..row_len];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = dx.index(sy as usize, sx as usize, 0);
                    for (d, &g) in dx.data[dst..dst + c].iter_mut().zip(&row[(ky * 3 + kx) * c..][..c]) {
                        *d += g;
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn conv_cols<T: Real>(cols: &[T], h: usize, w: usize, layer: &ConvLayer<T>) -> Tensor<T> {
    let n = h * w;
    let mut out = Tensor::zeros(h, w, layer.cout);
    for px in out.data.chunks_exact_mut(layer.cout) {
        px.copy_from_slice(&layer.bias);
    }
    let k = 9 * layer.cin;
    T::gemm(
        n,
        k,
        layer.cout,
        (cols, k as isize, 1),
        (&layer.kernel, layer.cout as isize, 1),
        T::ONE,
        (&mut out.data, layer.cout as isize, 1),
    );
    out
}

/// Same-padded, stride-1 3x3 convolution. Returns the output and its MAC
/// count `h * w * c_out * 9 * c_in`.
pub fn conv2d_3x3_same<T: Real>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<(Tensor<T>, u64), SegnetError> {
    if x.c != layer.cin {
        return Err(SegnetError::ChannelMismatch {
            expected: layer.cin,
            actual: x.c,
        });
    }
    Ok((conv_cols(&im2col(x), x.h, x.w, layer), layer.macs(x.h, x.w)))
}

/// Accumulated parameter gradient of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad<T> {
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvGrad<T> {
    pub fn zeros_like(layer: &ConvLayer<T>) -> Self {
        Self {
            kernel: vec![T::ZERO; layer.kernel.len()],
            bias: vec![T::ZERO; layer.bias.len()],
        }
    }

    pub fn add(&mut self, other: &ConvGrad<T>) {
        for (a, &b) in self.kernel.iter_mut().zip(&other.kernel).chain(self.bias.iter_mut().zip(&other.bias)) {
            *a += b;
        }
    }
}

/// Backward pass of [`conv_cols`]: accumulates the parameter gradient and,
/// if `need_input_grad`, returns the gradient with respect to the input.
pub(crate) fn conv_backward<T: Real>(
    cols: &[T],
    h: usize,
    w: usize,
    layer: &ConvLayer<T>,
    dout: &Tensor<T>,
    grad: &mut ConvGrad<T>,
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let n = h * w;
    let k = 9 * layer.cin;
    let co = layer.cout;
    for px in dout.data.chunks_exact(co) {
        for (b, &g) in grad.bias.iter_mut().zip(px) {
            *b += g;
        }
    }
    // dK (k x co) += cols^T (k x n) * dout (n x co)
    T::gemm(
        k,
        n,
        co,
        (cols, 1, k as isize),
        (&dout.data, co as isize, 1),
        T::ONE,
        (&mut grad.kernel, co as isize, 1),
    );
    if !need_input_grad {
        return None;
    }
    // dcols (n x k) = dout (n x co) * K^T (co x k)
    let mut dcols = vec![T::ZERO; n * k];
    T::gemm(
        n,
        co,
        k,
        (&dout.data, co as isize, 1),
        (&layer.kernel, 1, co as isize),
        T::ZERO,
        (&mut dcols, k as isize, 1),
    );
    Some(col2im_add(&dcols, h, w, layer.cin))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        h: x.h,
        w: x.w,
        c: x.c,
        data: x.data.iter().map(|&v| v.max(T::ZERO)).collect(),
    }
}

/// Zero the gradient where the pre-activation was not positive.
pub(crate) fn relu_backward<T: Real>(pre: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &z) in grad.data.iter_mut().zip(&pre.data) {
        if !(z > T::ZERO) {
            *g = T::ZERO;
        }
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    T::ONE / (T::ONE + (-v).exp())
}

fn check_divisible<T>(x: &Tensor<T>) -> Result<(), SegnetError> {
    if x.h % POOL != 0 || x.w % POOL != 0 || x.h == 0 || x.w == 0 {
        return Err(SegnetError::NotDivisible {
            h: x.h,
            w: x.w,
            factor: POOL,
        });
    }
    Ok(())
}

/// Non-overlapping 4x4 max pooling; also returns, per output value, the
/// flat input index it came from (first maximum in row-major block order).
pub fn maxpool_4x4_with_argmax<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>), SegnetError> {
    check_divisible(x)?;
    let (oh, ow) = (x.h / POOL, x.w / POOL);
    let mut out = Tensor::zeros(oh, ow, x.c);
    let mut arg = vec![0u32; oh * ow * x.c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..x.c {
                let mut best_i = x.index(oy * POOL, ox * POOL, ch);
                for dy in 0..POOL {
                    for dx in 0..POOL {
                        let i = x.index(oy * POOL + dy, ox * POOL + dx, ch);
                        if x.data[i] > x.data[best_i] {
                            best_i = i;
                        }
                    }
                }
                let o = out.index(oy, ox, ch);
                out.data[o] = x.data[best_i];
                arg[o] = best_i as u32;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool_4x4<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, SegnetError> {
    Ok(maxpool_4x4_with_argmax(x)?.0)
}

/// Route each output gradient back to the input position that won the max.
pub(crate) fn maxpool_backward<T: Real>(dy: &Tensor<T>, arg: &[u32], h: usize, w: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(h, w, dy.c);
    for (&g, &i) in dy.data.iter().zip(arg) {
        dx.data[i as usize] += g;
    }
    dx
}

/// Nearest-neighbour upsampling by 4 in both directions.
pub fn upsample_4x<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(x.h * POOL, x.w * POOL, x.c);
    for y in 0..out.h {
        for xx in 0..out.w {
            let src = x.index(y / POOL, xx / POOL, 0);
            let dst = out.index(y, xx, 0);
            out.data[dst..dst + x.c].copy_from_slice(&x.data[src..src + x.c]);
        }
    }
    out
}

/// Sum the gradients of every replica back onto its source value.
pub(crate) fn upsample_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(dy.h / POOL, dy.w / POOL, dy.c);
    for y in 0..dy.h {
        for xx in 0..dy.w {
            let src = dy.index(y, xx, 0);
            let dst = dx.index(y / POOL, xx / POOL, 0);
            for ch in 0..dy.c {
                dx.data[dst + ch] += dy.data[src + ch];
            }
        }
    }
    dx
}

/// Channel-wise concatenation, `a`'s channels first.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, SegnetError> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(SegnetError::Shape(format!(
            "cannot concatenate {}x{} with {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    let c = a.c + b.c;
    let mut data = Vec::with_capacity(a.h * a.w * c);
    for (pa, pb) in a.data.chunks_exact(a.c).zip(b.data.chunks_exact(b.c)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Ok(Tensor { h: a.h, w: a.w, c, data })
}

/// Inverse of [`concat_channels`]: the first `ca` channels, then the rest.
pub(crate) fn split_channels<T: Real>(x: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let cb = x.c - ca;
    let mut a = Vec::with_capacity(x.h * x.w * ca);
    let mut b = Vec::with_capacity(x.h * x.w * cb);
    for px in x.data.chunks_exact(x.c) {
        a.extend_from_slice(&px[..ca]);
        b.extend_from_slice(&px[ca..]);
    }
    (
        Tensor { h: x.h, w: x.w, c: ca, data: a },
        Tensor { h: x.h, w: x.w, c: cb, data: b },
    )
}
