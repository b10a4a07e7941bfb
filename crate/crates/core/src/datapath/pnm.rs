use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::{DatapathError, Frame, PixelFormat};

/// Write a frame as a binary portable pixmap (P6), converting to RGB888.
pub fn write_ppm(frame: &Frame, path: &Path) -> Result<(), DatapathError> {
    frame.validate()?;
    let rgb = frame.to_rgb888();
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&rgb.pixels, u32::from(rgb.width), u32::from(rgb.height), ExtendedColorType::Rgb8)?;
    Ok(())
}

/// Read a P6 pixmap into an RGB888 frame with the given tag.
pub fn read_ppm(path: &Path, camera_id: u8, frame_counter: u32) -> Result<Frame, DatapathError> {
    let reader = image::ImageReader::open(path)?.with_guessed_format()?;
    let img = reader.decode()?.to_rgb8();
    let (w, h) = img.dimensions();
    let (Ok(width), Ok(height)) = (u16::try_from(w), u16::try_from(h)) else {
        return Err(DatapathError::FrameTooLarge(u16::MAX, u16::MAX));
    };
    Frame::new(camera_id, frame_counter, width, height, PixelFormat::Rgb888, img.into_raw())
}
