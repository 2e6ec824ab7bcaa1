use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PMAP";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Per-pixel class posteriors produced by an external detector.
///
/// `data` holds `num_classes` planes of `height × width` values, row-major,
/// plane 0 being background.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: u32,
    height: u32,
    num_classes: u32,
    data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(width: u32, height: u32, num_classes: u32, data: Vec<f32>) -> Result<Self> {
        let expected = width as usize * height as usize * num_classes as usize;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "probability map {width}x{height}x{num_classes} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        Ok(ProbabilityMap {
            width,
            height,
            num_classes,
            data,
        })
    }

    /// Map filled with background probability 1.
    pub fn background(width: u32, height: u32, num_classes: u32) -> Self {
        let plane = width as usize * height as usize;
        let mut data = vec![0.0; plane * num_classes as usize];
        data[..plane].fill(1.0);
        ProbabilityMap {
            width,
            height,
            num_classes,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn plane(&self, class: u32) -> &[f32] {
        let n = self.width as usize * self.height as usize;
        &self.data[class as usize * n..(class as usize + 1) * n]
    }

    pub fn get(&self, class: u32, x: u32, y: u32) -> f32 {
        self.plane(class)[y as usize * self.width as usize + x as usize]
    }

    /// Sets one probability; values are not renormalised.
    pub fn set(&mut self, class: u32, x: u32, y: u32, value: f32) {
        let n = self.width as usize * self.height as usize;
        let idx = class as usize * n + y as usize * self.width as usize + x as usize;
        self.data[idx] = value;
    }

    /// Largest deviation of a per-pixel class sum from 1.
    pub fn max_sum_deviation(&self) -> f64 {
        let n = self.width as usize * self.height as usize;
        (0..n)
            .map(|i| {
                let s: f64 = (0..self.num_classes as usize)
                    .map(|c| self.data[c * n + i] as f64)
                    .sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Warnings for pixels whose class probabilities do not sum to 1 within 1e-4.
    pub fn validate_sums(&self) -> Vec<String> {
        let dev = self.max_sum_deviation();
        if dev > 1e-4 {
            vec![format!(
                "per-pixel class probabilities deviate from 1 by up to {dev:.3e}"
            )]
        } else {
            Vec::new()
        }
    }
}

/// Rounds a statistic of stored probabilities to the map's `f32` precision and
/// returns the `f64` with the same shortest decimal form, so a mean of `0.9`,
/// `0.8` and `0.7` reads back as `0.8`.
pub fn at_map_precision(value: f64) -> f64 {
    let narrow = value as f32;
    if !narrow.is_finite() {
        return value;
    }
    narrow.to_string().parse().unwrap_or(value)
}

pub fn probmap_to_bytes(map: &ProbabilityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.data.len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, map.height, map.width, map.num_classes] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn probmap_from_bytes(bytes: &[u8]) -> Result<ProbabilityMap> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"PMAP\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, height, width, num_classes) = (word(0), word(1), word(2), word(3));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported PMAP version {version}")));
    }
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "probability map needs at least 2 classes, header declares {num_classes}"
        )));
    }
    let expected = HEADER_LEN as u64 + 4 * height as u64 * width as u64 * num_classes as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ProbabilityMap::new(width, height, num_classes, data)
}

pub fn load_probmap(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    probmap_from_bytes(&bytes)
}

pub fn save_probmap(map: &ProbabilityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, probmap_to_bytes(map)).map_err(|e| Error::io(path, e))
}
