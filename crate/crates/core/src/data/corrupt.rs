use crate::data::image::Image;
use crate::prelude::*;
use crate::rng;
use crate::{Error, Result};

/// Corrupted copy of an image and the pasted region, for evaluation only.
#[derive(Clone, Debug, PartialEq)]
pub struct Occlusion {
    pub image: Image,
    /// Row-major, one flag per pixel.
    pub mask: Vec<bool>,
}

/// Pastes a uniformly coloured `patch × patch` square at a random position.
pub fn corrupt_occlusion(image: &Image, patch: usize, seed: u64) -> Result<Occlusion> {
    if patch > image.width || patch > image.height {
        return Err(Error::invalid(format!(
            "patch {patch} larger than {}×{} image",
            image.width, image.height
        )));
    }
    let mut out = image.clone();
    let mut mask = vec![false; image.pixels()];
    if patch == 0 {
        return Ok(Occlusion { image: out, mask });
    }
    let mut r = rng::seeded(seed);
    let top = rng::int_inclusive(&mut r, 0, image.height - patch);
    let left = rng::int_inclusive(&mut r, 0, image.width - patch);
    let colour: Vec<f64> = (0..image.channels)
        .map(|_| rng::uniform(&mut r, 0.0, 1.0))
        .collect();
    for row in top..top + patch {
        for col in left..left + patch {
            mask[row * image.width + col] = true;
            for (ch, &v) in colour.iter().enumerate() {
                out.set(row, col, ch, v);
            }
        }
    }
    Ok(Occlusion { image: out, mask })
}
