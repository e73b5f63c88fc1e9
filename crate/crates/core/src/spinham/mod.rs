//! Spin operators, Stevens operators and the crystal-field + Zeeman
//! Hamiltonian for arbitrary integer or half-integer spin.
//!
//! The Hamiltonian is
//!
//! ```text
//! H = g_L (mu_B/h) B Sz + sum_kq B_kq O_kq      (Hz)
//! ```
//!
//! with the tetragonal S4-site operator set (2,0), (4,0), (4,4), (6,0),
//! (6,4). Stevens coefficients are supplied in GHz and converted on input.

mod diagram;

pub use diagram::{
    level_diagram, transitions, zero_field_levels, zfs, LevelDiagram, LevelLabel, TrackingWarning,
    TransitionLine, ZfsEntry,
};

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::consts::Constants;
use crate::error::{Error, Result};
use crate::linalg::CMat;

pub use crate::linalg::{eigh, Eigh};

/// Spin quantum number, stored as 2S so that half-integers are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Spin {
    twice: u32,
}

impl Spin {
    /// Construct from 2S. Requires a Hilbert space of at least two levels.
    pub fn from_twice(twice: u32) -> Result<Self> {
        if twice == 0 {
            return Err(Error::InvalidSpin("0".into()));
        }
        Ok(Spin { twice })
    }

    /// Construct from S as a float; rejects values that are not N/2.
    pub fn from_value(s: f64) -> Result<Self> {
        let twice = 2.0 * s;
        if !twice.is_finite() || twice < 1.0 || (twice - twice.round()).abs() > 1e-9 {
            return Err(Error::InvalidSpin(format!("{s}")));
        }
        Spin::from_twice(twice.round() as u32)
    }

    /// Parse "7/2", "3" or "3.5".
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Some((num, den)) = text.split_once('/') {
            let num: u32 = num
                .trim()
                .parse()
                .map_err(|_| Error::InvalidSpin(text.into()))?;
            let den: u32 = den
                .trim()
                .parse()
                .map_err(|_| Error::InvalidSpin(text.into()))?;
            if den != 2 || num == 0 {
                return Err(Error::InvalidSpin(text.into()));
            }
            return Spin::from_twice(num);
        }
        let s: f64 = text.parse().map_err(|_| Error::InvalidSpin(text.into()))?;
        Spin::from_value(s)
    }

    pub fn twice(self) -> u32 {
        self.twice
    }

    pub fn value(self) -> f64 {
        self.twice as f64 / 2.0
    }

    /// Hilbert-space dimension 2S+1.
    pub fn dim(self) -> usize {
        self.twice as usize + 1
    }

    /// Projection values S, S-1, ..., -S in basis order.
    pub fn m_values(self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| (self.twice as f64 - 2.0 * k as f64) / 2.0)
            .collect()
    }
}

impl std::fmt::Display for Spin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.twice % 2 == 0 {
            write!(f, "{}", self.twice / 2)
        } else {
            write!(f, "{}/2", self.twice)
        }
    }
}

/// Sz and the ladder operators for one spin, dimensionless.
#[derive(Debug, Clone)]
pub struct SpinMatrices {
    pub sz: CMat,
    pub s_plus: CMat,
    pub s_minus: CMat,
}

/// Build Sz, S+ and S- in the |S>, |S-1>, ..., |-S> basis.
///
/// Ladder elements follow `<m+1|S+|m> = sqrt(S(S+1) - m(m+1))`.
pub fn spin_matrices(spin: Spin) -> SpinMatrices {
    let dim = spin.dim();
    let s = spin.value();
    let x = s * (s + 1.0);
    let ms = spin.m_values();
    let sz = CMat::from_diag(&ms);
    let mut s_plus = CMat::zeros(dim);
    for k in 1..dim {
        let m = ms[k];
        s_plus[(k - 1, k)] = Complex64::new((x - m * (m + 1.0)).sqrt(), 0.0);
    }
    let s_minus = s_plus.adjoint();
    SpinMatrices { sz, s_plus, s_minus }
}

/// The five Stevens indices allowed by the S4 site symmetry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StevensIndex {
    B20,
    B40,
    B44,
    B60,
    B64,
}

impl StevensIndex {
    pub const ALL: [StevensIndex; 5] = [
        StevensIndex::B20,
        StevensIndex::B40,
        StevensIndex::B44,
        StevensIndex::B60,
        StevensIndex::B64,
    ];

    pub fn k(self) -> u32 {
        match self {
            StevensIndex::B20 => 2,
            StevensIndex::B40 | StevensIndex::B44 => 4,
            StevensIndex::B60 | StevensIndex::B64 => 6,
        }
    }

    pub fn q(self) -> u32 {
        match self {
            StevensIndex::B20 | StevensIndex::B40 | StevensIndex::B60 => 0,
            StevensIndex::B44 | StevensIndex::B64 => 4,
        }
    }

    pub fn from_kq(k: u32, q: u32) -> Result<Self> {
        match (k, q) {
            (2, 0) => Ok(StevensIndex::B20),
            (4, 0) => Ok(StevensIndex::B40),
            (4, 4) => Ok(StevensIndex::B44),
            (6, 0) => Ok(StevensIndex::B60),
            (6, 4) => Ok(StevensIndex::B64),
            _ => Err(Error::UnsupportedStevens { k, q }),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StevensIndex::B20 => "B20",
            StevensIndex::B40 => "B40",
            StevensIndex::B44 => "B44",
            StevensIndex::B60 => "B60",
            StevensIndex::B64 => "B64",
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        StevensIndex::ALL
            .into_iter()
            .find(|i| i.label() == label)
            .ok_or_else(|| {
                let mut chars = label.chars();
                let k = chars.nth(1).and_then(|c| c.to_digit(10)).unwrap_or(0);
                let q = chars.next().and_then(|c| c.to_digit(10)).unwrap_or(0);
                Error::UnsupportedStevens { k, q }
            })
    }
}

/// Stevens operator O_kq for the supported (k,q) pairs.
///
/// Abragam-Bleaney convention with X = S(S+1):
///   O20 = 3 Sz^2 - X
///   O40 = 35 Sz^4 - (30X - 25) Sz^2 + 3X^2 - 6X
///   O44 = (S+^4 + S-^4) / 2
///   O60 = 231 Sz^6 - (315X - 735) Sz^4 + (105X^2 - 525X + 294) Sz^2
///         - 5X^3 + 40X^2 - 60X
///   O64 = [(S+^4 + S-^4)(11 Sz^2 - X - 38) + h.c.] / 4
pub fn stevens_operator(spin: Spin, index: StevensIndex) -> CMat {
    let s = spin.value();
    let x = s * (s + 1.0);
    let ms = spin.m_values();
    match index {
        StevensIndex::B20 => {
            let d: Vec<f64> = ms.iter().map(|m| 3.0 * m * m - x).collect();
            CMat::from_diag(&d)
        }
        StevensIndex::B40 => {
            let d: Vec<f64> = ms
                .iter()
                .map(|m| {
                    let m2 = m * m;
                    35.0 * m2 * m2 - (30.0 * x - 25.0) * m2 + 3.0 * x * x - 6.0 * x
                })
                .collect();
            CMat::from_diag(&d)
        }
        StevensIndex::B60 => {
            let d: Vec<f64> = ms
                .iter()
                .map(|m| {
                    let m2 = m * m;
                    231.0 * m2 * m2 * m2 - (315.0 * x - 735.0) * m2 * m2
                        + (105.0 * x * x - 525.0 * x + 294.0) * m2
                        - 5.0 * x * x * x
                        + 40.0 * x * x
                        - 60.0 * x
                })
                .collect();
            CMat::from_diag(&d)
        }
        StevensIndex::B44 => {
            let m = spin_matrices(spin);
            let p4 = ladder_fourth(&m.s_plus);
            let mut out = p4.adjoint();
            out.scaled_add(1.0, &p4);
            out.scale(0.5);
            out
        }
        StevensIndex::B64 => {
            let m = spin_matrices(spin);
            let p4 = ladder_fourth(&m.s_plus);
            let mut a = p4.adjoint();
            a.scaled_add(1.0, &p4);
            let d: Vec<f64> = ms.iter().map(|mv| 11.0 * mv * mv - x - 38.0).collect();
            let b = CMat::from_diag(&d);
            let mut out = a.matmul(&b);
            out.scaled_add(1.0, &b.matmul(&a));
            out.scale(0.25);
            out
        }
    }
}

/// Stevens operator addressed by raw (k, q); unsupported pairs are rejected.
pub fn stevens_operator_kq(spin: Spin, k: u32, q: u32) -> Result<CMat> {
    Ok(stevens_operator(spin, StevensIndex::from_kq(k, q)?))
}

fn ladder_fourth(s_plus: &CMat) -> CMat {
    let sq = s_plus.matmul(s_plus);
    sq.matmul(&sq)
}

/// A spin species: spin, Lande g-factor and Stevens coefficient table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SpinSystemRepr", into = "SpinSystemRepr")]
pub struct SpinSystem {
    label: String,
    spin: Spin,
    lande_g: f64,
    /// Coefficients in GHz.
    stevens_ghz: BTreeMap<StevensIndex, f64>,
}

impl SpinSystem {
    pub fn new(
        label: impl Into<String>,
        spin: Spin,
        lande_g: f64,
        stevens_ghz: &[(StevensIndex, f64)],
    ) -> Result<Self> {
        if !lande_g.is_finite() {
            return Err(Error::InvalidParams(format!(
                "Lande g must be finite, got {lande_g}"
            )));
        }
        let mut map = BTreeMap::new();
        for &(idx, v) in stevens_ghz {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "Stevens coefficient {} must be finite",
                    idx.label()
                )));
            }
            map.insert(idx, v);
        }
        Ok(SpinSystem {
            label: label.into(),
            spin,
            lande_g,
            stevens_ghz: map,
        })
    }

    /// Construct with raw (k, q) pairs; unknown pairs are rejected.
    pub fn with_kq(
        label: impl Into<String>,
        spin: Spin,
        lande_g: f64,
        stevens_ghz: &[((u32, u32), f64)],
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(stevens_ghz.len());
        for &((k, q), v) in stevens_ghz {
            entries.push((StevensIndex::from_kq(k, q)?, v));
        }
        SpinSystem::new(label, spin, lande_g, &entries)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn lande_g(&self) -> f64 {
        self.lande_g
    }

    pub fn stevens_ghz(&self) -> &BTreeMap<StevensIndex, f64> {
        &self.stevens_ghz
    }

    /// Zeeman + crystal-field Hamiltonian at `field_t` tesla, in Hz.
    pub fn hamiltonian(&self, field_t: f64, consts: &Constants) -> Result<CMat> {
        if !field_t.is_finite() {
            return Err(Error::InvalidParams(format!(
                "field must be finite, got {field_t}"
            )));
        }
        let mats = spin_matrices(self.spin);
        let mut h = CMat::zeros(self.spin.dim());
        h.scaled_add(self.lande_g * consts.mu_b_over_h_hz_per_t * field_t, &mats.sz);
        for (&idx, &ghz) in &self.stevens_ghz {
            if ghz != 0.0 {
                h.scaled_add(ghz * 1e9, &stevens_operator(self.spin, idx));
            }
        }
        Ok(h)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            msg: e.to_string(),
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("spin system serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct SpinSystemRepr {
    label: String,
    spin: String,
    lande_g: f64,
    stevens_ghz: BTreeMap<String, f64>,
}

impl TryFrom<SpinSystemRepr> for SpinSystem {
    type Error = Error;
    fn try_from(r: SpinSystemRepr) -> Result<Self> {
        let spin = Spin::parse(&r.spin)?;
        let mut entries = Vec::new();
        for (key, v) in &r.stevens_ghz {
            entries.push((StevensIndex::from_label(key)?, *v));
        }
        SpinSystem::new(r.label, spin, r.lande_g, &entries)
    }
}

impl From<SpinSystem> for SpinSystemRepr {
    fn from(s: SpinSystem) -> Self {
        SpinSystemRepr {
            label: s.label,
            spin: s.spin.to_string(),
            lande_g: s.lande_g,
            stevens_ghz: s
                .stevens_ghz
                .iter()
                .map(|(k, v)| (k.label().to_string(), *v))
                .collect(),
        }
    }
}

/// The Gd3+ in CaWO4 system with the published coefficients.
pub fn gd_cawo4() -> SpinSystem {
    SpinSystem::new(
        "CaWO4:Gd3+",
        Spin::from_twice(7).unwrap(),
        1.99,
        &[
            (StevensIndex::B20, -9.215e-1),
            (StevensIndex::B40, -1.139e-3),
            (StevensIndex::B44, -7.015e-3),
            (StevensIndex::B60, 5.935e-7),
            (StevensIndex::B64, 4.747e-7),
        ],
    )
    .unwrap()
}
