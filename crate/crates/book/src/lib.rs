//! Guide chapters compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/ring.md")]
pub mod ring {}

#[doc = include_str!("../../../book/src/kernels.md")]
pub mod kernels {}

#[doc = include_str!("../../../book/src/density-model.md")]
pub mod density_model {}

#[doc = include_str!("../../../book/src/controller.md")]
pub mod controller {}

#[doc = include_str!("../../../book/src/agents.md")]
pub mod agents {}

#[doc = include_str!("../../../book/src/bounds.md")]
pub mod bounds {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
