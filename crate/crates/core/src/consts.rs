//! Pinned physical constants.
//!
//! Energies and frequencies are ordinary (not angular) Hz throughout the
//! crate; magnetic fields are tesla. Values are CODATA and fixed here so
//! golden numbers stay reproducible.

/// Bohr magneton divided by the Planck constant, Hz/T.
pub const MU_B_OVER_H_HZ_PER_T: f64 = 13.996_244_936e9;

/// Planck constant, J s.
pub const H_JS: f64 = 6.626_070_15e-34;

/// Vacuum permeability, N A^-2.
pub const MU0_N_PER_A2: f64 = 1.256_637_062_12e-6;

/// Physical constants bundle. Every operation that touches a magnetic
/// moment or an absolute energy takes one of these, so a caller can
/// override a value (e.g. from a CLI config) without rebuilding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    /// mu_B / h in Hz/T.
    pub mu_b_over_h_hz_per_t: f64,
    /// Planck constant in J s.
    pub h_js: f64,
    /// Vacuum permeability in N/A^2.
    pub mu0_n_per_a2: f64,
}

/// The pinned CODATA set.
pub const CODATA: Constants = Constants {
    mu_b_over_h_hz_per_t: MU_B_OVER_H_HZ_PER_T,
    h_js: H_JS,
    mu0_n_per_a2: MU0_N_PER_A2,
};

impl Default for Constants {
    fn default() -> Self {
        CODATA
    }
}

impl Constants {
    /// Bohr magneton in J/T, derived so that `mu_b / h` is exactly the
    /// pinned ratio.
    pub fn mu_b_j_per_t(&self) -> f64 {
        self.mu_b_over_h_hz_per_t * self.h_js
    }

    /// Reduced Planck constant in J s.
    pub fn hbar_js(&self) -> f64 {
        self.h_js / std::f64::consts::TAU
    }
}
