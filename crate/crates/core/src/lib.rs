//! Orlicz-Besov extension experiments on rasterized planar domains.
//!
//! The pipeline runs bottom-up: a [`young::YoungFunction`] fixes the
//! modular, [`geometry::DomainGrid`] rasterizes the domain, a
//! [`whitney::WhitneyCover`] tiles the complement, [`reflection`] assigns each
//! cube a reflected region inside the domain, and [`extension`] assembles the
//! extension operator whose energy is measured by [`norms`].

// NaN-rejecting `!(x > 0.0)` guards and index loops over parallel arrays are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod extension;
pub mod geometry;
pub mod norms;
pub mod numeric;
pub mod probes;
pub mod reflection;
pub mod whitney;
pub mod young;

pub use error::{Error, Result};
pub use young::YoungFunction;
