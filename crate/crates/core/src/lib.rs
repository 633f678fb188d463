//! Progressive streaming toolkit for 3D Gaussian splat scenes.
//!
//! The pipeline: load a trained scene ([`ply`]), measure how much each splat
//! contributes to the training views ([`ordering::tally_contributions`]),
//! turn that into a priority order ([`ordering`]), cut the ordered scene into
//! independently decodable chunks ([`chunk`]) and measure how good every
//! prefix looks ([`eval`]).

pub mod cameras;
pub mod chunk;
pub mod eval;
pub mod exec;
pub mod fixtures;
pub mod image;
pub mod model;
pub mod ordering;
pub mod ply;
pub mod raster;

pub use chunk::{decode_stream, make_chunks, ChunkManifest, ChunkOptions, ChunkSizes, Encoding};
pub use eval::{evaluate_curve, psnr, ssim, EvalOptions, MetricCurve};
pub use exec::Exec;
pub use image::Image;
pub use model::{activate, sh_to_rgb, ActivatedGaussian, Camera, Gaussian, ModelError, Scene};
pub use ordering::{ContributionTally, Ordering, Strategy};
pub use ply::{load_ply, write_ply, PlyError};
pub use raster::{render, RenderError, RenderOptions, RenderOutput};
