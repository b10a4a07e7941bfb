use serde::{Deserialize, Serialize};

use super::DatapathError;

pub const NUM_CAMERAS: usize = 5;
pub const QCIF_WIDTH: u16 = 176;
pub const QCIF_HEIGHT: u16 = 144;
pub const DOWNSAMPLED_WIDTH: u16 = 88;
pub const DOWNSAMPLED_HEIGHT: u16 = 72;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelFormat {
    /// 5-6-5 bits, high byte first on the wire.
    Rgb565,
    Rgb888,
}

impl PixelFormat {
    pub fn bytes_per_pixel(self) -> usize {
        match self {
            PixelFormat::Rgb565 => 2,
            PixelFormat::Rgb888 => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            PixelFormat::Rgb565 => 0,
            PixelFormat::Rgb888 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<PixelFormat> {
        match code {
            0 => Some(PixelFormat::Rgb565),
            1 => Some(PixelFormat::Rgb888),
            _ => None,
        }
    }
}

/// One camera image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub camera_id: u8,
    pub frame_counter: u32,
    pub width: u16,
    pub height: u16,
    pub format: PixelFormat,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(
        camera_id: u8,
        frame_counter: u32,
        width: u16,
        height: u16,
        format: PixelFormat,
        pixels: Vec<u8>,
    ) -> Result<Self, DatapathError> {
        let frame = Frame {
            camera_id,
            frame_counter,
            width,
            height,
            format,
            pixels,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn blank(camera_id: u8, frame_counter: u32, width: u16, height: u16, format: PixelFormat) -> Self {
        let len = width as usize * height as usize * format.bytes_per_pixel();
        Frame {
            camera_id,
            frame_counter,
            width,
            height,
            format,
            pixels: vec![0; len],
        }
    }

    pub fn payload_len(&self) -> usize {
        self.width as usize * self.height as usize * self.format.bytes_per_pixel()
    }

    pub fn validate(&self) -> Result<(), DatapathError> {
        if self.camera_id as usize >= NUM_CAMERAS {
            return Err(DatapathError::InvalidCamera(self.camera_id));
        }
        if self.width == 0 || self.height == 0 {
            return Err(DatapathError::EmptyFrame);
        }
        if self.pixels.len() != self.payload_len() {
            return Err(DatapathError::FrameSize {
                expected: self.payload_len(),
                actual: self.pixels.len(),
            });
        }
        Ok(())
    }

    pub fn is_qcif(&self) -> bool {
        self.width == QCIF_WIDTH && self.height == QCIF_HEIGHT
    }

    /// RGB888 copy of this frame. RGB565 channels are widened by bit
    /// replication so that 0 and full scale map to 0 and 255.
    pub fn to_rgb888(&self) -> Frame {
        let pixels = match self.format {
            PixelFormat::Rgb888 => self.pixels.clone(),
            PixelFormat::Rgb565 => self
                .pixels
                .chunks_exact(2)
                .flat_map(|p| rgb565_to_rgb888(u16::from_be_bytes([p[0], p[1]])))
                .collect(),
        };
        self.with_pixels(PixelFormat::Rgb888, pixels)
    }

    /// RGB565 copy, truncating each channel to its field width.
    pub fn to_rgb565(&self) -> Frame {
        let pixels = match self.format {
            PixelFormat::Rgb565 => self.pixels.clone(),
            PixelFormat::Rgb888 => self
                .pixels
                .chunks_exact(3)
                .flat_map(|p| rgb888_to_rgb565(p[0], p[1], p[2]).to_be_bytes())
                .collect(),
        };
        self.with_pixels(PixelFormat::Rgb565, pixels)
    }

    fn with_pixels(&self, format: PixelFormat, pixels: Vec<u8>) -> Frame {
        Frame {
            camera_id: self.camera_id,
            frame_counter: self.frame_counter,
            width: self.width,
            height: self.height,
            format,
            pixels,
        }
    }
}

pub fn rgb565_to_rgb888(v: u16) -> [u8; 3] {
    let r = ((v >> 11) & 0x1f) as u8;
    let g = ((v >> 5) & 0x3f) as u8;
    let b = (v & 0x1f) as u8;
    [(r << 3) | (r >> 2), (g << 2) | (g >> 4), (b << 3) | (b >> 2)]
}

pub fn rgb888_to_rgb565(r: u8, g: u8, b: u8) -> u16 {
    (u16::from(r >> 3) << 11) | (u16::from(g >> 2) << 5) | u16::from(b >> 3)
}

/// 2x2 box filter: each output pixel is the per-channel mean of its input
/// block, rounded half up. Output is always RGB888.
pub fn downsample_2x2(frame: &Frame) -> Result<Frame, DatapathError> {
    frame.validate()?;
    if frame.width % 2 != 0 || frame.height % 2 != 0 {
        return Err(DatapathError::OddDimensions {
            width: frame.width,
            height: frame.height,
        });
    }
    let src = frame.to_rgb888();
    let (w, h) = (frame.width as usize, frame.height as usize);
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0u8; ow * oh * 3];
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..3 {
                let at = |yy: usize, xx: usize| u32::from(src.pixels[(yy * w + xx) * 3 + c]);
                let sum = at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1);
                out[(y * ow + x) * 3 + c] = ((sum + 2) / 4) as u8;
            }
        }
    }
    Ok(Frame {
        camera_id: frame.camera_id,
        frame_counter: frame.frame_counter,
        width: ow as u16,
        height: oh as u16,
        format: PixelFormat::Rgb888,
        pixels: out,
    })
}
