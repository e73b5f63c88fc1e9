//! Energy-level diagrams over a magnetic-field grid, with adiabatic level
//! tracking, transition enumeration and zero-field splittings.

use num_complex::Complex64;

use crate::consts::Constants;
use crate::error::{Error, Result};
use crate::linalg::{eigh, CMat};

use super::SpinSystem;

/// Level name by dominant Sz character, stored as 2m.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LevelLabel {
    pub twice_m: i32,
}

impl LevelLabel {
    pub fn m(&self) -> f64 {
        self.twice_m as f64 / 2.0
    }
}

impl std::fmt::Display for LevelLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tm = self.twice_m;
        if tm % 2 == 0 {
            if tm == 0 {
                write!(f, "0")
            } else {
                write!(f, "{:+}", tm / 2)
            }
        } else {
            write!(f, "{:+}/2", tm)
        }
    }
}

/// Field interval where eigenvector overlap tracking dropped below 0.7.
#[derive(Debug, Clone, Copy)]
pub struct TrackingWarning {
    pub b_lo_tesla: f64,
    pub b_hi_tesla: f64,
    pub min_overlap: f64,
}

/// Eigenenergies over a field grid with adiabatically tracked columns.
#[derive(Debug, Clone)]
pub struct LevelDiagram {
    /// Strictly increasing field values, tesla.
    pub field_grid: Vec<f64>,
    /// `energies[t][col]` in Hz; columns are adiabatically continuous.
    pub energies: Vec<Vec<f64>>,
    /// Dominant Sz character of each column at the first grid point.
    pub labels: Vec<LevelLabel>,
    pub system: SpinSystem,
    /// Intervals where tracking was ambiguous (overlap < 0.7).
    pub warnings: Vec<TrackingWarning>,
}

impl LevelDiagram {
    /// Column index for a label, if that character is present.
    pub fn column_of(&self, label: LevelLabel) -> Option<usize> {
        self.labels.iter().position(|l| *l == label)
    }
}

struct GaugedLevels {
    energies: Vec<f64>,
    labels: Vec<LevelLabel>,
    vectors: CMat,
    /// Cluster index per level (degenerate groups).
    clusters: Vec<usize>,
}

/// Diagonalize at one field and gauge-fix degenerate clusters so labels are
/// deterministic: within a degenerate cluster the basis is rotated to
/// diagonalize Sz, ordered toward positive Sz first.
fn gauged_levels(system: &SpinSystem, field_t: f64, consts: &Constants) -> Result<GaugedLevels> {
    let h = system.hamiltonian(field_t, consts)?;
    let eig = eigh(&h)?;
    let n = eig.values.len();
    let ms = system.spin().m_values();

    let span = eig.values[n - 1] - eig.values[0];
    let scale = eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-8 * span.max(scale).max(1.0);

    // degenerate clusters over the ascending eigenvalues
    let mut clusters = vec![0usize; n];
    let mut cluster = 0usize;
    for i in 1..n {
        if eig.values[i] - eig.values[i - 1] > tol {
            cluster += 1;
        }
        clusters[i] = cluster;
    }

    let mut vectors = eig.vectors;
    let mut order: Vec<usize> = (0..n).collect();
    let mut sz_exp = vec![0.0_f64; n];

    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && clusters[end + 1] == clusters[start] {
            end += 1;
        }
        let size = end - start + 1;
        if size > 1 {
            // Sz in the cluster basis
            let mut szc = CMat::zeros(size);
            for a in 0..size {
                for b in 0..size {
                    let mut acc = Complex64::ZERO;
                    for k in 0..n {
                        acc += vectors[(k, start + a)].conj()
                            * ms[k]
                            * vectors[(k, start + b)];
                    }
                    szc[(a, b)] = acc;
                }
            }
            let sub = eigh(&szc)?;
            // rotate cluster vectors into the Sz eigenbasis
            let mut rotated = vec![vec![Complex64::ZERO; size]; n];
            for (kv, row) in rotated.iter_mut().enumerate() {
                for (b, slot) in row.iter_mut().enumerate() {
                    for a in 0..size {
                        *slot += vectors[(kv, start + a)] * sub.vectors[(a, b)];
                    }
                }
            }
            for b in 0..size {
                for k in 0..n {
                    vectors[(k, start + b)] = rotated[k][b];
                }
                sz_exp[start + b] = sub.values[b];
            }
            // positive Sz first within the cluster
            order[start..=end].sort_by(|&a, &b| sz_exp[b].partial_cmp(&sz_exp[a]).unwrap());
        } else {
            let mut acc = 0.0;
            for k in 0..n {
                acc += vectors[(k, start)].norm_sqr() * ms[k];
            }
            sz_exp[start] = acc;
        }
        start = end + 1;
    }

    let mut energies = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut out_vectors = CMat::zeros(n);
    let mut out_clusters = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        energies.push(eig.values[src]);
        out_clusters.push(clusters[src]);
        for k in 0..n {
            out_vectors[(k, dst)] = vectors[(k, src)];
        }
        // dominant basis weight; scanning from m = +S keeps exact ties positive
        let mut best = 0usize;
        let mut best_w = -1.0;
        for k in 0..n {
            let w = out_vectors[(k, dst)].norm_sqr();
            if w > best_w {
                best_w = w;
                best = k;
            }
        }
        labels.push(LevelLabel {
            twice_m: system.spin().twice() as i32 - 2 * best as i32,
        });
    }

    Ok(GaugedLevels {
        energies,
        labels,
        vectors: out_vectors,
        clusters: out_clusters,
    })
}

/// Diagonalize `system` over `field_grid` and adiabatically track levels by
/// maximal eigenvector overlap between consecutive field points.
pub fn level_diagram(
    system: &SpinSystem,
    field_grid: &[f64],
    consts: &Constants,
) -> Result<LevelDiagram> {
    if field_grid.is_empty() {
        return Err(Error::InvalidGrid("field grid is empty".into()));
    }
    if field_grid.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidGrid("field grid contains non-finite values".into()));
    }
    if field_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(
            "field grid must be strictly increasing".into(),
        ));
    }

    let first = gauged_levels(system, field_grid[0], consts)?;
    let n = first.energies.len();
    let labels = first.labels.clone();
    let mut energies = vec![first.energies.clone()];
    let mut warnings = Vec::new();
    let mut prev = first.vectors;

    for t in 1..field_grid.len() {
        let h = system.hamiltonian(field_grid[t], consts)?;
        let eig = eigh(&h)?;
        // overlap[i][j] = |<prev_i | new_j>|
        let mut pairs: Vec<(f64, f64, usize, usize)> = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut ov = Complex64::ZERO;
                for k in 0..n {
                    ov += prev[(k, i)].conj() * eig.vectors[(k, j)];
                }
                let de = (eig.values[j] - energies[t - 1][i]).abs();
                pairs.push((ov.norm(), de, i, j));
            }
        }
        // greedy maximal-overlap assignment, ties toward eigenvalue proximity
        pairs.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.partial_cmp(&b.1).unwrap())
        });
        let mut col_of = vec![usize::MAX; n];
        let mut taken = vec![false; n];
        let mut assigned = 0;
        let mut min_overlap = f64::INFINITY;
        for (ov, _, i, j) in pairs {
            if col_of[i] == usize::MAX && !taken[j] {
                col_of[i] = j;
                taken[j] = true;
                min_overlap = min_overlap.min(ov);
                assigned += 1;
                if assigned == n {
                    break;
                }
            }
        }
        if min_overlap < 0.7 {
            warnings.push(TrackingWarning {
                b_lo_tesla: field_grid[t - 1],
                b_hi_tesla: field_grid[t],
                min_overlap,
            });
        }
        let mut row = Vec::with_capacity(n);
        let mut next = CMat::zeros(n);
        for i in 0..n {
            let j = col_of[i];
            row.push(eig.values[j]);
            for k in 0..n {
                next[(k, i)] = eig.vectors[(k, j)];
            }
        }
        energies.push(row);
        prev = next;
    }

    Ok(LevelDiagram {
        field_grid: field_grid.to_vec(),
        energies,
        labels,
        system: system.clone(),
        warnings,
    })
}

/// One transition line sampled over the diagram's field grid.
#[derive(Debug, Clone)]
pub struct TransitionLine {
    pub lower: LevelLabel,
    pub upper: LevelLabel,
    /// |delta m| between the adiabatic labels.
    pub delta_sz: u32,
    /// (tesla, Hz) samples; frequencies are non-negative.
    pub freq_of_field: Vec<(f64, f64)>,
    /// Transition frequency at zero field, Hz.
    pub zfs_hz: f64,
}

/// Enumerate transition lines between diagram columns with
/// `1 <= delta_sz <= max_delta_sz`. Pairs are ordered by energy at the
/// first grid point; frequencies are absolute differences per field point.
pub fn transitions(
    diagram: &LevelDiagram,
    max_delta_sz: u32,
    consts: &Constants,
) -> Result<Vec<TransitionLine>> {
    let n = diagram.labels.len();
    if diagram.energies.is_empty() {
        return Err(Error::InvalidGrid("empty diagram".into()));
    }
    let zero_field = zero_field_levels(&diagram.system, consts)?;
    let e0_of = |label: LevelLabel| -> Option<f64> {
        let matches: Vec<&(LevelLabel, f64)> = zero_field
            .iter()
            .filter(|(l, _)| *l == label)
            .collect();
        (matches.len() == 1).then(|| matches[0].1)
    };

    let first = &diagram.energies[0];
    let mut lines = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j || first[j] < first[i] || (first[j] == first[i] && j < i) {
                continue;
            }
            let tm_l = diagram.labels[i].twice_m;
            let tm_u = diagram.labels[j].twice_m;
            let dsz = (tm_u - tm_l).unsigned_abs() / 2;
            if dsz < 1 || dsz > max_delta_sz {
                continue;
            }
            let freq_of_field: Vec<(f64, f64)> = diagram
                .field_grid
                .iter()
                .zip(&diagram.energies)
                .map(|(&b, row)| (b, (row[j] - row[i]).abs()))
                .collect();
            let zfs_hz = match (e0_of(diagram.labels[i]), e0_of(diagram.labels[j])) {
                (Some(a), Some(b)) => (b - a).abs(),
                // fall back to pairing ascending zero-field energies with
                // ascending first-point energies when labels are ambiguous
                _ => {
                    let mut zf: Vec<f64> = zero_field.iter().map(|(_, e)| *e).collect();
                    zf.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let mut order: Vec<usize> = (0..n).collect();
                    order.sort_by(|&a, &b| first[a].partial_cmp(&first[b]).unwrap());
                    let rank_i = order.iter().position(|&k| k == i).unwrap();
                    let rank_j = order.iter().position(|&k| k == j).unwrap();
                    (zf[rank_j] - zf[rank_i]).abs()
                }
            };
            lines.push(TransitionLine {
                lower: diagram.labels[i],
                upper: diagram.labels[j],
                delta_sz: dsz,
                freq_of_field,
                zfs_hz,
            });
        }
    }
    Ok(lines)
}

/// Zero-field levels with gauge-fixed labels, ascending in energy.
pub fn zero_field_levels(
    system: &SpinSystem,
    consts: &Constants,
) -> Result<Vec<(LevelLabel, f64)>> {
    let g = gauged_levels(system, 0.0, consts)?;
    let mut out: Vec<(LevelLabel, f64)> = g
        .labels
        .iter()
        .zip(&g.energies)
        .map(|(l, e)| (*l, *e))
        .collect();
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    Ok(out)
}

/// One zero-field splitting entry.
#[derive(Debug, Clone, Copy)]
pub struct ZfsEntry {
    pub lower: LevelLabel,
    pub upper: LevelLabel,
    pub f_hz: f64,
}

/// Zero-field transition frequencies between distinct Kramers doublets,
/// plus the (numerically zero) internal splitting of each degenerate pair.
pub fn zfs(system: &SpinSystem, consts: &Constants) -> Result<Vec<ZfsEntry>> {
    let g = gauged_levels(system, 0.0, consts)?;
    let n = g.energies.len();

    // cluster bounds in column order (clusters are contiguous)
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || g.clusters[i] != g.clusters[start] {
            groups.push((start, i - 1));
            start = i;
        }
    }

    let mut entries = Vec::new();
    // internal splittings of +-m partners inside each degenerate cluster
    for &(a, b) in &groups {
        for i in a..=b {
            for j in (i + 1)..=b {
                if g.labels[i].twice_m == -g.labels[j].twice_m && g.labels[i].twice_m != 0 {
                    let (lo, hi) = if g.labels[i].twice_m < 0 { (i, j) } else { (j, i) };
                    entries.push(ZfsEntry {
                        lower: g.labels[lo],
                        upper: g.labels[hi],
                        f_hz: (g.energies[i] - g.energies[j]).abs(),
                    });
                }
            }
        }
    }
    // gaps between clusters, labelled by each cluster's most-positive member
    let rep = |range: (usize, usize)| -> (LevelLabel, f64) {
        let (a, b) = range;
        let mut label = g.labels[a];
        for i in a..=b {
            if g.labels[i].twice_m > label.twice_m {
                label = g.labels[i];
            }
        }
        let mean = g.energies[a..=b].iter().sum::<f64>() / (b - a + 1) as f64;
        (label, mean)
    };
    for gi in 0..groups.len() {
        for gj in (gi + 1)..groups.len() {
            let (la, ea) = rep(groups[gi]);
            let (lb, eb) = rep(groups[gj]);
            let (lower, upper, f) = if ea <= eb {
                (la, lb, eb - ea)
            } else {
                (lb, la, ea - eb)
            };
            entries.push(ZfsEntry {
                lower,
                upper,
                f_hz: f,
            });
        }
    }
    entries.sort_by(|a, b| a.f_hz.partial_cmp(&b.f_hz).unwrap());
    Ok(entries)
}
