//! Numerical laboratory for type III Ricci flows on symmetric model metrics.
//!
//! The crate evolves reduced metrics under Ricci flow, solves heat and
//! conjugate heat equations along the flow, evaluates the expander entropy
//! `W+` and checks the gradient, Harnack, kernel-envelope and Sobolev estimates
//! numerically. The blow-down module rescales long-time flows and measures how
//! close they come to an expanding gradient soliton.

pub mod blowdown;
pub mod bounds;
pub mod entropy;
pub mod error;
pub mod field;
pub mod fixtures;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod heat;
pub mod io;
pub mod soliton;

pub use bounds::BoundReport;
pub use error::{Error, Result};
pub use field::{ScalarField, SymTensorField};
pub use flow::{FlowTrace, StepPolicy};
pub use geometry::{Backend, CurvatureReport, MetricState};
pub use grid::{GridSpec, Point};
pub use heat::{Direction, KernelSolution};
