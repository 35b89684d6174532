use crate::data::image::Image;
use crate::prelude::*;
use crate::rng;
use crate::{Error, Result};

/// Grid on which generated intensities lie. Differences of values on this
/// grid are exact in `f64`.
pub const VIDEO_GRID: f64 = 1.0 / 16_777_216.0;

pub fn snap_to_grid(v: f64) -> f64 {
    (v / VIDEO_GRID).round() * VIDEO_GRID
}

/// Static background with one moving square sprite.
#[derive(Clone, Debug, PartialEq)]
pub struct SpriteVideo {
    pub frames: Vec<Image>,
    pub background: Image,
    /// Per-frame sprite masks, row-major.
    pub masks: Vec<Vec<bool>>,
}

/// `frames` grayscale frames of `size × size`. The background is a sum of a
/// few smooth bumps; the sprite is a `size/4` square of constant intensity
/// moving on a straight line across the frame.
pub fn gen_sprite_video(frames: usize, size: usize, seed: u64) -> Result<SpriteVideo> {
    if frames < 2 {
        return Err(Error::invalid("a video needs at least two frames"));
    }
    if size < 4 {
        return Err(Error::invalid("video frames must be at least 4×4"));
    }
    let mut r = rng::seeded(seed);
    let mut bg = Image::filled(size, size, 1, 0.0);
    let base = rng::uniform(&mut r, 0.25, 0.4);
    let bumps: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            [
                rng::uniform(&mut r, -0.8, 0.8),
                rng::uniform(&mut r, -0.8, 0.8),
                rng::uniform(&mut r, 0.3, 0.7),
                rng::uniform(&mut r, -0.15, 0.25),
            ]
        })
        .collect();
    for row in 0..size {
        let y = -1.0 + (2 * row + 1) as f64 / size as f64;
        for col in 0..size {
            let x = -1.0 + (2 * col + 1) as f64 / size as f64;
            let v = bumps.iter().fold(base, |acc, b| {
                let d2 = (x - b[0]).powi(2) + (y - b[1]).powi(2);
                acc + b[3] * (-d2 / (2.0 * b[2] * b[2])).exp()
            });
            bg.set(row, col, 0, snap_to_grid(v.clamp(0.0, 1.0)));
        }
    }
    let side = (size / 4).max(1);
    let span = (size - side) as f64;
    let start = [rng::uniform(&mut r, 0.0, span), rng::uniform(&mut r, 0.0, 0.3 * span)];
    let end = [rng::uniform(&mut r, 0.0, span), rng::uniform(&mut r, 0.7 * span, span)];
    let bright = rng::uniform(&mut r, 0.0, 1.0) < 0.5;
    let level = snap_to_grid(if bright { 0.95 } else { 0.02 });
    let mut out = Vec::with_capacity(frames);
    let mut masks = Vec::with_capacity(frames);
    for t in 0..frames {
        let a = t as f64 / (frames - 1) as f64;
        let top = (start[1] + a * (end[1] - start[1])).round() as usize;
        let left = (start[0] + a * (end[0] - start[0])).round() as usize;
        let mut frame = bg.clone();
        let mut mask = vec![false; size * size];
        for row in top..top + side {
            for col in left..left + side {
                frame.set(row, col, 0, level);
                mask[row * size + col] = true;
            }
        }
        out.push(frame);
        masks.push(mask);
    }
    Ok(SpriteVideo {
        frames: out,
        background: bg,
        masks,
    })
}
