//! Task-model architectures, per-task parameter vectors and the
//! classification losses.

mod arch;
mod net;
mod params;

pub use arch::{ArchSpec, Layer, LayerSlot, LossKind};
pub use net::LossEval;
pub use params::{build, build_for_task, LayerView, ParamSet};

#[cfg(test)]
mod tests;
