use crate::data::{grid_coords, Image};
use crate::nid::SparseCode;
use crate::prelude::*;
use crate::tasks::adapt::{adapt_code, pixel_block, CodeInit};
use crate::tasks::config::{LossKind, TaskConfig};
use crate::tasks::model::TrainedModel;
use crate::Result;

#[derive(Clone, Debug)]
pub struct Inpainting {
    /// The coded field on the full pixel grid, clamped to `[0, 1]`.
    pub restored: Image,
    pub code: SparseCode,
    pub losses: Vec<f64>,
}

/// Restores an image with unknown corruption by an ℓ1 code fit from a
/// random start. Every pixel is treated as an observation; the ℓ1 loss
/// lets the sparse code ignore outliers it cannot represent.
pub fn inpaint(model: &TrainedModel, corrupted: &Image, cfg: &TaskConfig) -> Result<Inpainting> {
    let coords = grid_coords(corrupted.width, corrupted.height);
    let block = pixel_block(coords.clone(), corrupted.to_tensor(), LossKind::L1);
    let fit = adapt_code(model, &[block], &CodeInit::Noise(cfg.init_noise), cfg)?;
    let values = model.dictionary.combine(&fit.code, &coords)?;
    let restored = Image::from_tensor(corrupted.width, corrupted.height, &values)?.clamped();
    Ok(Inpainting {
        restored,
        code: fit.code,
        losses: fit.losses,
    })
}
