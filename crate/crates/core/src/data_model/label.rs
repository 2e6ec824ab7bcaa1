use std::io::Cursor;
use std::path::Path;

use crate::{Error, Result};

/// Per-pixel class ids, row-major; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl LabelMask {
    pub fn new(width: u32, height: u32) -> Self {
        LabelMask {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<u16>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::Dimension(format!(
                "label mask {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                data.len()
            )));
        }
        Ok(LabelMask {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, class_id: u16) {
        self.data[y as usize * self.width as usize + x as usize] = class_id;
    }

    pub fn max_class(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        if let Some(&bad) = self.data.iter().find(|&&v| v > 255) {
            return Err(Error::Range(format!(
                "class id {bad} does not fit in an 8-bit PNG"
            )));
        }
        let pixels: Vec<u8> = self.data.iter().map(|&v| v as u8).collect();
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width, self.height);
            encoder.set_color(png::ColorType::Grayscale);
            encoder.set_depth(png::BitDepth::Eight);
            encoder.set_compression(png::Compression::Balanced);
            let mut writer = encoder
                .write_header()
                .map_err(|e| Error::Png(e.to_string()))?;
            writer
                .write_image_data(&pixels)
                .map_err(|e| Error::Png(e.to_string()))?;
            writer.finish().map_err(|e| Error::Png(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(e.to_string()))?;
        if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Format(format!(
                "label masks must be 8-bit grayscale, found {:?} at {:?}",
                info.color_type, info.bit_depth
            )));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let mut data = Vec::with_capacity(w * h);
        for row in buf.chunks(info.line_size).take(h) {
            data.extend(row[..w].iter().map(|&v| v as u16));
        }
        LabelMask::from_data(info.width, info.height, data)
    }
}

pub fn save_label_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = mask.encode_png()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_label_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    LabelMask::decode_png(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero_mask() {
        let mask = LabelMask::new(5, 3);
        let back = LabelMask::decode_png(&mask.encode_png().unwrap()).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn single_pixel_class() {
        let mut mask = LabelMask::new(4, 4);
        mask.set(1, 1, 3);
        let back = LabelMask::decode_png(&mask.encode_png().unwrap()).unwrap();
        assert_eq!(back.get(1, 1), 3);
        assert_eq!(back.data.iter().filter(|&&v| v != 0).count(), 1);
    }

    #[test]
    fn class_above_255_is_a_range_error() {
        let mut mask = LabelMask::new(2, 2);
        mask.set(0, 0, 256);
        assert!(matches!(mask.encode_png(), Err(Error::Range(_))));
    }

    #[test]
    fn encoding_is_stable() {
        let mut mask = LabelMask::new(16, 9);
        for i in 0..16 {
            mask.set(i, i % 9, (i % 4) as u16);
        }
        assert_eq!(mask.encode_png().unwrap(), mask.encode_png().unwrap());
    }

    proptest! {
        #[test]
        fn png_round_trip(w in 1u32..20, h in 1u32..20, values in prop::collection::vec(0u16..256, 400)) {
            let data = values[..(w * h) as usize].to_vec();
            let mask = LabelMask::from_data(w, h, data).unwrap();
            let back = LabelMask::decode_png(&mask.encode_png().unwrap()).unwrap();
            prop_assert_eq!(back, mask);
        }
    }
}
