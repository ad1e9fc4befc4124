//! Overconvergent modular symbols and p-adic L-functions of refined modular forms.

pub mod arith;
pub mod classical;
pub mod dist;
pub mod error;
pub mod family;
pub mod lfun;
pub mod linalg;
pub mod ovsymb;
pub mod padic;
pub mod selftest;

pub use error::{Error, Result};
pub use padic::{CharValue, Character, CycloExt, PadicNum, SParam, Zmod};
