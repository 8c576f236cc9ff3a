//! Multiview 3D curve drawing: reconstructs a graph of 3D curves and
//! junctions from calibrated images of curve fragments.

pub mod averaging;
pub mod config;
pub mod consistency;
pub mod curve;
pub mod dataset;
pub mod drawing;
pub mod eval;
pub mod geometry;
pub mod hypothesis;
pub mod io;
pub mod pipeline;
pub mod spatial;
pub mod synth;
pub mod verification;
