use ctdiff_core::volume::{window_to_unit, HuVolume, WindowSpec};

use crate::error::{StudyError, StudyResult};

/// `u` in [0, 1] to an 8-bit gray level, rounding half up.
pub fn gray_level(u: f64) -> u8 {
    (u * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Windowed 8-bit grayscale PNG of slice `z`.
pub fn render_tile(vol: &HuVolume, z: usize, w: &WindowSpec) -> StudyResult<Vec<u8>> {
    if z >= vol.depth() {
        return Err(StudyError::NotFound(format!("slice {z} out of range (0..{})", vol.depth())));
    }
    let slice = vol.slice(z);
    let (h, wd) = slice.dim();
    let mut pixels = Vec::with_capacity(h * wd);
    for &v in slice.iter() {
        pixels.push(gray_level(window_to_unit(v as f64, w)?));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, wd as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| StudyError::Storage(e.to_string()))?;
        writer.write_image_data(&pixels).map_err(|e| StudyError::Storage(e.to_string()))?;
    }
    Ok(out)
}
