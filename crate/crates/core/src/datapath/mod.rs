//! Camera datapath: DCMI-style framing of the five fingertip camera
//! streams, bounded buffering, serialization onto one channel, 2x2
//! downsampling and link fault injection.

mod dcmi;
mod fault;
mod frame;
mod mux;
mod pnm;

pub use dcmi::{
    dcmi_decode, dcmi_encode, decode_stream, packet_spans, DecodeEvent, DecodeStats, FrameTag, SyncLoss,
    SyncLossKind,
};
pub use fault::{inject_fault, FaultPolicy};
pub use frame::{
    downsample_2x2, rgb565_to_rgb888, rgb888_to_rgb565, Frame, PixelFormat, DOWNSAMPLED_HEIGHT,
    DOWNSAMPLED_WIDTH, NUM_CAMERAS, QCIF_HEIGHT, QCIF_WIDTH,
};
pub use mux::{
    mux_serialize, BufferBudget, DropPolicy, Mux, MuxConfig, MuxStats, MuxStream, DEFAULT_BUFFER_CAPACITY,
    FRAME_RATE_HZ, LINK_RATE_BITS_PER_S,
};
pub use pnm::{read_ppm, write_ppm};

#[derive(Debug, thiserror::Error)]
pub enum DatapathError {
    #[error("camera id {0} out of range 0..5")]
    InvalidCamera(u8),
    #[error("frame has zero width or height")]
    EmptyFrame,
    #[error("pixel buffer holds {actual} bytes, header implies {expected}")]
    FrameSize { expected: usize, actual: usize },
    #[error("2x2 downsampling needs even dimensions, got {width}x{height}")]
    OddDimensions { width: u16, height: u16 },
    #[error("frame {0}x{1} exceeds the largest encodable size")]
    FrameTooLarge(u16, u16),
    #[error("mux input must be 176x144 RGB565, got camera {camera} {width}x{height} {format:?}")]
    NotQcif {
        camera: u8,
        width: u16,
        height: u16,
        format: PixelFormat,
    },
    #[error("camera {camera}: frame counter {counter} does not follow {previous}")]
    CounterOrder { camera: u8, previous: u32, counter: u32 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}
