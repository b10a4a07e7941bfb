use super::{Real, SegnetError};

/// Height x width x channels, channel-fastest (HWC) row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<T>) -> Result<Self, SegnetError> {
        if data.len() != h * w * c {
            return Err(SegnetError::Shape(format!(
                "{} values cannot fill {h}x{w}x{c}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SegnetError::NonFinite);
        }
        Ok(Self { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![T::ZERO; h * w * c],
        }
    }

    pub fn filled(h: usize, w: usize, c: usize, v: T) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![v; h * w * c],
        }
    }

    /// (height, width, channels)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn index(&self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.w + x) * self.c + ch
    }

    pub fn at(&self, y: usize, x: usize, ch: usize) -> T {
        self.data[self.index(y, x, ch)]
    }

    /// Interleaved 8-bit RGB scaled to [0, 1].
    pub fn from_rgb8(h: usize, w: usize, rgb: &[u8]) -> Result<Self, SegnetError> {
        let scale = T::from_f64(1.0 / 255.0);
        Self::new(h, w, 3, rgb.iter().map(|&v| T::from_f64(f64::from(v)) * scale).collect())
    }

    /// Copy of the `ch x cw` window with top-left corner (y0, x0).
    pub fn crop(&self, y0: usize, x0: usize, ch: usize, cw: usize) -> Self {
        assert!(y0 + ch <= self.h && x0 + cw <= self.w, "crop outside tensor");
        let mut data = Vec::with_capacity(ch * cw * self.c);
        for y in y0..y0 + ch {
            let row = self.index(y, x0, 0);
            data.extend_from_slice(&self.data[row..row + cw * self.c]);
        }
        Self {
            h: ch,
            w: cw,
            c: self.c,
            data,
        }
    }

    pub fn convert<U: Real>(&self) -> Tensor<U> {
        Tensor {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}
