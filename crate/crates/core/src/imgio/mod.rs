//! Image stacks, TIFF I/O and deterministic synthetic phantoms.

mod phantom;
mod stack;
mod tiff;

pub use phantom::{generate_phantom, shepp_logan_image, PhantomKind, PhantomSpec, SHEPP_LOGAN_MODIFIED};
pub use stack::{BitDepth, Dims, ImageStack, LabelMap};
pub use tiff::{read_stack, read_stack_from, write_stack, write_stack_to};
