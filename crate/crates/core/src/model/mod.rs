//! The two network variants: architecture description, parameters, forward and
//! backward passes, and the on-disk format.

pub mod arch;
pub mod format;
pub mod graph;
pub mod params;

pub use arch::{symmetric_encdec, ArchSpec, EncDecLayer, LayerId, Mode};
pub use format::{decode_model, encode_model, load_model, save_model};
pub use graph::{backward, backward_branches, forward, infer, Branches, Context, Forward};
pub use params::{build_model, Gradients, Layer, LayerGrad, ModelParams};
