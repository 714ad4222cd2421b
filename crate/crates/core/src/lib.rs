// SPDX-License-Identifier: MIT OR Apache-2.0

mod binio;
pub mod editor;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod steering;

pub use error::{Error, Result};
