//! Synthetic moving-object sequences, normalization, splitting, and the
//! `STDS` file format.

pub mod file;
pub mod prep;
pub mod synth;

pub use file::DatasetFile;
pub use prep::{denormalize, normalize, split, Split};
pub use synth::{gen_bouncing_blobs, gen_moving_digits, generate, reflect, Kind, MotionSpec, Object};
