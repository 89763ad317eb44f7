//! Pseudo steering-angle labels from vehicle pose sequences.
//!
//! Poses come from LiDAR scan matching ([`odometry`]) or from an external
//! SLAM run; [`steering`] turns pose pairs into steering-wheel angles through
//! Ackermann geometry; [`simulator`] produces exact ground truth to check them
//! against; [`pipeline`] wires the stages together and handles file formats;
//! [`ssrl`] demonstrates the underlying self-supervised regression principle
//! on a Gaussian toy task.

pub mod geometry;
pub mod odometry;
pub mod pipeline;
pub mod simulator;
pub mod ssrl;
pub mod steering;
