//! Small dense networks: a ReLU trunk with two linear heads, Adam, and the
//! `CGWT` checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod network;

pub use adam::Adam;
pub use network::{Dense, ForwardCache, Network, Scalar};
