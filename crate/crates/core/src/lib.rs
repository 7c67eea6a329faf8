//! Learning air traffic controllers' conflict-resolution reactions from
//! surveillance tracks and controller event logs.

pub mod confdet;
pub mod evofan;
pub mod geokin;
pub mod labeler;
pub mod pipeline;
pub mod reactmodel;
pub mod synthgen;
pub mod trajstore;
pub mod wmetrics;
