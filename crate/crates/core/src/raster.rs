//! Minimal PNG helpers: solid-color encoding for the mock backend and a decode check.

use std::io::Cursor;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("invalid dimensions {0}x{1}")]
    Dimensions(u32, u32),
}

/// Encodes an RGB image of one color.
pub fn solid_png(width: u32, height: u32, rgb: [u8; 3]) -> Result<Vec<u8>, RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::Dimensions(width, height));
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        let pixels: Vec<u8> = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        writer.write_image_data(&pixels)?;
        writer.finish()?;
    }
    Ok(out)
}

/// Fully decodes a PNG and returns its dimensions.
pub fn decode_dimensions(media: &[u8]) -> Result<(u32, u32), RasterError> {
    let decoder = png::Decoder::new(Cursor::new(media));
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or(RasterError::Dimensions(0, 0))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    Ok((info.width, info.height))
}
