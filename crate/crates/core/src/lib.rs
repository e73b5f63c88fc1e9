//! Analysis chain for multi-mode whispering-gallery-mode ESR spectroscopy:
//! spin-Hamiltonian level diagrams, Fano lineshape fitting, mode tracking
//! across magnetic-field sweeps, avoided-crossing coupling fits, impurity
//! identification and spin-concentration estimates.

pub mod consts;
pub mod coupling;
pub mod error;
pub mod linalg;
pub mod lineshape;
pub mod lm;
pub mod modemap;
pub mod species;
pub mod spinham;
pub mod synth;

pub use consts::{Constants, CODATA};
pub use error::{Error, Result};
