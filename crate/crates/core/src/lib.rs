pub mod cli;
pub mod convex;
pub mod cosim;
pub mod network;
pub mod powerflow;
pub mod primary;
pub mod secondary;
