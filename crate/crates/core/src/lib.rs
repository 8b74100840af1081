//! Modulo video simulation and high-bit-depth reconstruction.

pub mod datagen;
pub mod error;
pub mod flow;
pub mod imaging;
pub mod io;
pub mod modulo;
pub mod select;
pub mod ssvit;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use modulo::{
    apply_mask_update, fold_clip, masks_from_counts, run_inference, sliding_window_reconstruct,
    BinaryFoldMask, ClipShape, FoldCountMap, IntClip, MaskPredictor, OraclePredictor, RealClip,
};
