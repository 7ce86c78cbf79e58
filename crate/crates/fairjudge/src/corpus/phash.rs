//! 64-bit difference hash for near-duplicate detection.
//!
//! Pipeline: grayscale (BT.601 luma), exact area-average downscale to a
//! 9x8 grid, then one sign bit per horizontal gradient, row-major with
//! the first bit in the most significant position. All arithmetic is f64,
//! so hashes are identical across platforms.

use serde::{Deserialize, Serialize};

use super::CorpusError;

pub const DHASH_ALGORITHM: &str = "dhash/9x8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptualHash {
    pub bits: u64,
}

impl PerceptualHash {
    pub fn hamming(&self, other: &PerceptualHash) -> u32 {
        (self.bits ^ other.bits).count_ones()
    }

    pub fn algorithm(&self) -> &'static str {
        DHASH_ALGORITHM
    }
}

/// Hash raw encoded image bytes (any format the `image` crate decodes).
pub fn phash(image_bytes: &[u8]) -> Result<PerceptualHash, CorpusError> {
    let img = image::load_from_memory(image_bytes)
        .map_err(|e| CorpusError::BadImage(e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(CorpusError::BadImage("zero-sized image".into()));
    }
    let mut luma = vec![0.0f64; w * h];
    for (i, px) in img.pixels().enumerate() {
        let [r, g, b] = px.0;
        luma[i] = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    }
    Ok(dhash_cells(&grid_average(&luma, w, h)))
}

/// Pack gradient sign bits from a 9x8 cell grid (row-major, 9 per row).
/// A bit is set exactly when the right cell is brighter than the left, so
/// a constant image hashes to zero.
pub fn dhash_cells(cells: &[f64; 72]) -> PerceptualHash {
    let mut bits = 0u64;
    for row in 0..8 {
        for col in 0..8 {
            let left = cells[row * 9 + col];
            let right = cells[row * 9 + col + 1];
            bits = (bits << 1) | u64::from(right > left);
        }
    }
    PerceptualHash { bits }
}

/// Exact box-filter average of an arbitrary-size grayscale image onto the
/// 9x8 grid, handling fractional cell boundaries by area weighting.
fn grid_average(luma: &[f64], w: usize, h: usize) -> [f64; 72] {
    let mut cells = [0.0f64; 72];
    for row in 0..8usize {
        let y0 = row as f64 * h as f64 / 8.0;
        let y1 = (row + 1) as f64 * h as f64 / 8.0;
        for col in 0..9usize {
            let x0 = col as f64 * w as f64 / 9.0;
            let x1 = (col + 1) as f64 * w as f64 / 9.0;
            let mut acc = 0.0;
            let mut area = 0.0;
            let py0 = y0.floor() as usize;
            let py1 = (y1.ceil() as usize).min(h);
            let px0 = x0.floor() as usize;
            let px1 = (x1.ceil() as usize).min(w);
            for py in py0..py1 {
                let cover_y = overlap(py as f64, py as f64 + 1.0, y0, y1);
                if cover_y <= 0.0 {
                    continue;
                }
                for px in px0..px1 {
                    let cover_x = overlap(px as f64, px as f64 + 1.0, x0, x1);
                    if cover_x <= 0.0 {
                        continue;
                    }
                    let weight = cover_x * cover_y;
                    acc += luma[py * w + px] * weight;
                    area += weight;
                }
            }
            cells[row * 9 + col] = if area > 0.0 { acc / area } else { 0.0 };
        }
    }
    cells
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode_png(w: u32, h: u32, pixel: impl Fn(u32, u32) -> u8) -> Vec<u8> {
        let img = image::GrayImage::from_fn(w, h, |x, y| image::Luma([pixel(x, y)]));
        let mut bytes = Vec::new();
        image::DynamicImage::ImageLuma8(img)
            .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .unwrap();
        bytes
    }

    #[test]
    fn uniform_black_hashes_to_zero() {
        let bytes = encode_png(90, 80, |_, _| 0);
        assert_eq!(phash(&bytes).unwrap().bits, 0);
    }

    #[test]
    fn half_black_half_white_sets_one_column() {
        // Boundary at x=40 lands exactly on the edge between grid columns
        // 3 and 4, so the only positive gradient per row is at bit c=3.
        let bytes = encode_png(90, 80, |x, _| if x < 40 { 0 } else { 255 });
        let hash = phash(&bytes).unwrap();
        assert_eq!(hash.bits, 0x1010101010101010);
    }

    #[test]
    fn identical_bytes_hash_identically() {
        let bytes = encode_png(33, 47, |x, y| ((x * 7 + y * 13) % 251) as u8);
        assert_eq!(phash(&bytes).unwrap(), phash(&bytes).unwrap());
    }

    #[test]
    fn undecodable_input_is_an_error() {
        assert!(matches!(phash(b"not an image"), Err(CorpusError::BadImage(_))));
    }

    #[test]
    fn hamming_counts_bit_flips() {
        let a = PerceptualHash { bits: 0b1010 };
        let b = PerceptualHash { bits: 0b0110 };
        assert_eq!(a.hamming(&b), 2);
        assert_eq!(a.hamming(&a), 0);
    }
}
