//! Seeded generators for synthetic corpora, plus image corruption.
//!
//! Every generator is a pure function of its arguments and seed.

mod blobs;
mod corrupt;
mod image;
mod phantom;
mod polygon;
mod video;

pub use blobs::{gen_blob_image, gen_blob_images};
pub use corrupt::{corrupt_occlusion, Occlusion};
pub use image::{grid_coords, quantize, Image};
pub use phantom::{gen_phantoms, Ellipse, Phantom};
pub use polygon::{gen_polygon_sdf, ConvexPolygon, PolygonSamples};
pub use video::{gen_sprite_video, snap_to_grid, SpriteVideo, VIDEO_GRID};
