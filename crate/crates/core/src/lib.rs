pub mod dataset;
pub mod dielectric;
pub mod fdm;
pub mod frw;
pub mod geometry;
pub mod linalg;
pub mod nn;
pub mod reference;
pub mod symmetry;
