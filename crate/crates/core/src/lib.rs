#![no_std]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod geom;
pub mod linalg;
pub mod lsq;
pub mod nn;
pub mod nominal;
pub mod odom;
pub mod sensor;
pub mod simulate;
pub mod train;

pub use error::{Error, Result};
