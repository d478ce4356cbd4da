use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::{HiddenSequence, Source};
use crate::tensor::{Affine, Matrix, Vector};

/// Anything that turns an image into patch-level hidden states.
pub trait VisionEncoder {
    fn width(&self) -> usize;
    fn patch_size(&self) -> u32;
    fn encode(&self, image: &RgbImage) -> Result<HiddenSequence>;
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::InvalidInput(format!("undecodable image: {e}")))
}

/// Number of patches on the grid; partial patches at the border are dropped.
pub fn patch_grid(width: u32, height: u32, patch: u32) -> Result<(u32, u32)> {
    if patch == 0 || width < patch || height < patch {
        return Err(Error::InvalidInput(format!(
            "image {width}x{height} is smaller than one {patch}x{patch} patch"
        )));
    }
    Ok((width / patch, height / patch))
}

/// A frozen ViT-style patch embedder.
///
/// Each patch is average-pooled on a `pool x pool` grid per channel, mapped to
/// the model width by a fixed random projection, offset by a sinusoidal
/// position code and squashed with `tanh`. The parameters are derived from a
/// seed and never trained.
#[derive(Debug, Clone)]
pub struct PatchEncoder {
    patch: u32,
    pool: u32,
    projection: Affine,
    seed: u64,
}

impl PatchEncoder {
    pub fn new(patch: u32, width: usize, seed: u64) -> Self {
        let pool = [4, 2, 1]
            .into_iter()
            .find(|p| patch % p == 0 && *p <= patch)
            .unwrap();
        let features = (pool * pool * 3) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut projection = Affine::random(features, width, &mut rng);
        projection.weight *= 2.0;
        Self {
            patch,
            pool,
            projection,
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn patch_features(&self, image: &RgbImage, px: u32, py: u32) -> Vector {
        let cell = self.patch / self.pool;
        let mut out = Vector::zeros((self.pool * self.pool * 3) as usize);
        let norm = 255.0 * (cell * cell) as f64;
        for cy in 0..self.pool {
            for cx in 0..self.pool {
                let mut acc = [0.0f64; 3];
                for y in 0..cell {
                    for x in 0..cell {
                        let p = image.get_pixel(
                            px * self.patch + cx * cell + x,
                            py * self.patch + cy * cell + y,
                        );
                        for c in 0..3 {
                            acc[c] += p[c] as f64;
                        }
                    }
                }
                let base = ((cy * self.pool + cx) * 3) as usize;
                for c in 0..3 {
                    out[base + c] = acc[c] / norm - 0.5;
                }
            }
        }
        out
    }
}

fn position_code(index: usize, width: usize) -> Vector {
    Vector::from_shape_fn(width, |j| {
        let rate = 1.0 / 10_000f64.powf((2 * (j / 2)) as f64 / width as f64);
        let angle = index as f64 * rate;
        0.1 * if j % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

impl VisionEncoder for PatchEncoder {
    fn width(&self) -> usize {
        self.projection.output_dim()
    }

    fn patch_size(&self) -> u32 {
        self.patch
    }

    fn encode(&self, image: &RgbImage) -> Result<HiddenSequence> {
        let (cols, rows) = patch_grid(image.width(), image.height(), self.patch)?;
        let width = self.width();
        let mut out = Matrix::zeros(((cols * rows) as usize, width));
        for py in 0..rows {
            for px in 0..cols {
                let idx = (py * cols + px) as usize;
                let feat = self.patch_features(image, px, py);
                let h = self.projection.apply_vec(&feat) + position_code(idx, width);
                out.row_mut(idx).assign(&h.mapv(f64::tanh));
            }
        }
        HiddenSequence::new(out, Source::Vision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: u32, h: u32) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb([200, 30, 90]))
    }

    #[test]
    fn grid_arithmetic() {
        let enc = PatchEncoder::new(16, 8, 0);
        let h = enc.encode(&solid(32, 32)).unwrap();
        assert_eq!(h.shape(), (4, 8));
        assert_eq!(h.source(), Source::Vision);
        assert_eq!(patch_grid(40, 33, 16).unwrap(), (2, 2));
    }

    #[test]
    fn undersized_image_is_rejected() {
        let enc = PatchEncoder::new(16, 8, 0);
        assert!(matches!(
            enc.encode(&solid(8, 8)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn garbage_bytes_are_rejected() {
        assert!(matches!(
            decode_image(b"not a png"),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn encoding_is_deterministic_and_colour_sensitive() {
        let enc = PatchEncoder::new(16, 8, 0);
        let a = enc.encode(&solid(32, 32)).unwrap();
        assert_eq!(a, enc.encode(&solid(32, 32)).unwrap());
        let other = RgbImage::from_pixel(32, 32, image::Rgb([10, 200, 10]));
        assert_ne!(a, enc.encode(&other).unwrap());
        assert_eq!(
            a,
            PatchEncoder::new(16, 8, 0).encode(&solid(32, 32)).unwrap()
        );
    }
}
