//! The 3-wave collision operator, its cutoff variant, the weak-form pairing,
//! the kernel-stripped gain/loss split and the entropy dissipation, all
//! assembled from the triad table.
//!
//! Assembly uses the merge form: each unordered triad (k; k1, k2) is visited
//! once and deposits, with multiplicity m = 2 (m = 1 when k1 = k2),
//!
//! ```text
//! F = f1 f2 - f f1 - f f2,    c = m h^3 weight kernel_factor F
//! out[k] += c,   out[k1] -= c,   out[k2] -= c
//! ```
//!
//! which reproduces both integrals of the strong form because the second is
//! the k <-> k1, k <-> k2 relabeling of the first. Momentum conservation is
//! exact by antisymmetry; energy conservation holds to O(theta) because the
//! stored mismatch |omega - omega1 - omega2| is bounded by the kernel
//! support. The optional energy projection rescales the merged-slot deposit
//! by (omega1 + omega2)/omega(k), which zeroes the energy defect per triple
//! at the price of an O(theta) momentum defect; it is off by default.

use crate::accum::tree_sum;
use crate::error::{Error, Result};
use crate::lattice::Grid;
use crate::resonance::TriadTable;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Number of triples per deterministic reduction chunk. Fixed so that the
/// merge order, and hence every bit of the output, is independent of the
/// worker count.
const CHUNK: usize = 4096;

/// A scalar sample f(k) (or g = 1/f) on every grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Field {
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Field {
            values: vec![value; grid.node_count()],
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(usize) -> f64) -> Self {
        Field {
            values: (0..grid.node_count()).map(|i| f(i)).collect(),
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Field { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Smooth truncation confining a field and its gradient magnitude to
/// [1/(2N), 2N]; N = infinity disables the cutoff entirely.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub n: f64,
}

impl CutoffSpec {
    pub fn new(n: f64) -> Result<Self> {
        if !(n > 1.0) {
            return Err(Error::Config(format!("cutoff N must be > 1, got {n}")));
        }
        Ok(CutoffSpec { n })
    }

    pub fn infinite() -> Self {
        CutoffSpec { n: f64::INFINITY }
    }

    pub fn is_infinite(&self) -> bool {
        self.n.is_infinite()
    }

    /// C^1 bump: 0 on [0, 1/(2N)] and [2N, inf), 1 on [1/N, N], cubic
    /// smoothstep across the transitions.
    pub fn rho(&self, z: f64) -> f64 {
        if self.n.is_infinite() {
            return 1.0;
        }
        let n = self.n;
        if z <= 0.0 {
            return 0.0;
        }
        let lo0 = 0.5 / n;
        let lo1 = 1.0 / n;
        if z <= lo0 {
            0.0
        } else if z < lo1 {
            smoothstep((z - lo0) / (lo1 - lo0))
        } else if z <= n {
            1.0
        } else if z < 2.0 * n {
            1.0 - smoothstep((z - n) / n)
        } else {
            0.0
        }
    }

    /// chi_N[f](k) = rho_N[f(k)] rho_N[|grad f|(k)] per node.
    pub fn chi_field(&self, grid: &Grid, f: &Field) -> Vec<f64> {
        if self.n.is_infinite() {
            return vec![1.0; grid.node_count()];
        }
        let grad = gradient_magnitude(grid, f);
        f.values()
            .iter()
            .zip(grad.values())
            .map(|(&v, &g)| self.rho(v) * self.rho(g))
            .collect()
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Euclidean norm of the centered-difference gradient with periodic wrap.
pub fn gradient_magnitude(grid: &Grid, f: &Field) -> Field {
    let h = grid.mesh();
    let v = f.values();
    Field::from_fn(grid, |idx| {
        let k = grid.node_at(idx);
        let mut acc = 0.0;
        for axis in 0..3 {
            let mut step = [0, 0, 0];
            step[axis] = 1;
            let kp = grid.add(k, crate::lattice::Wavevector::new(step[0], step[1], step[2]));
            let km = grid.sub(k, crate::lattice::Wavevector::new(step[0], step[1], step[2]));
            let d = (v[grid.node_index(kp)] - v[grid.node_index(km)]) / (2.0 * h);
            acc += d * d;
        }
        acc.sqrt()
    })
}

struct TripleCtx {
    ik: usize,
    i1: usize,
    i2: usize,
    /// m * h^3 * weight * kernel_factor
    mw: f64,
    /// (omega1 + omega2) / omega(k), the merged-slot energy projection factor
    proj: f64,
}

fn contexts(grid: &Grid, table: &TriadTable) -> Vec<TripleCtx> {
    let h3 = grid.cell_volume();
    table
        .triples()
        .iter()
        .map(|t| {
            let m = if t.k1 == t.k2 { 1.0 } else { 2.0 };
            TripleCtx {
                ik: grid.node_index(t.k),
                i1: grid.node_index(t.k1),
                i2: grid.node_index(t.k2),
                mw: m * h3 * t.weight * t.kernel_factor,
                proj: (grid.omega(t.k1) + grid.omega(t.k2)) / grid.omega(t.k),
            }
        })
        .collect()
}

fn assemble(
    grid: &Grid,
    table: &TriadTable,
    f: &Field,
    chi: Option<&[f64]>,
    energy_projection: bool,
) -> Field {
    let ctx = contexts(grid, table);
    let v = f.values();
    let n = grid.node_count();
    let partials: Vec<Vec<f64>> = ctx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut out = vec![0.0; n];
            for t in chunk {
                let (fk, f1, f2) = (v[t.ik], v[t.i1], v[t.i2]);
                let big_f = f1 * f2 - fk * f1 - fk * f2;
                let mut c = t.mw * big_f;
                if let Some(chi) = chi {
                    c *= chi[t.ik] * chi[t.i1] * chi[t.i2];
                }
                if energy_projection {
                    out[t.ik] += c * t.proj;
                } else {
                    out[t.ik] += c;
                }
                out[t.i1] -= c;
                out[t.i2] -= c;
            }
            out
        })
        .collect();
    let mut out = vec![0.0; n];
    for p in partials {
        for (o, x) in out.iter_mut().zip(p) {
            *o += x;
        }
    }
    Field::from_values(out)
}

/// The discrete collision operator Q_c[f].
pub fn apply_q(grid: &Grid, table: &TriadTable, f: &Field) -> Field {
    assemble(grid, table, f, None, false)
}

/// Right-hand side with optional cutoff and energy projection; the plain
/// operator is the N = infinity, raw-omega case and shares the code path
/// bit for bit.
pub fn apply_rhs(
    grid: &Grid,
    table: &TriadTable,
    f: &Field,
    cutoff: Option<&CutoffSpec>,
    energy_projection: bool,
) -> Field {
    let chi_vec = match cutoff {
        Some(c) if !c.is_infinite() => Some(c.chi_field(grid, f)),
        _ => None,
    };
    assemble(grid, table, f, chi_vec.as_deref(), energy_projection)
}

/// Q_c[f] with the merged-slot energy projection enabled.
pub fn apply_q_projected(grid: &Grid, table: &TriadTable, f: &Field) -> Field {
    assemble(grid, table, f, None, true)
}

/// The cutoff operator Q_c^N[f]; N = infinity reduces to `apply_q` bitwise.
pub fn apply_q_cutoff(grid: &Grid, table: &TriadTable, f: &Field, cutoff: &CutoffSpec) -> Field {
    if cutoff.is_infinite() {
        return apply_q(grid, table, f);
    }
    let chi = cutoff.chi_field(grid, f);
    assemble(grid, table, f, Some(&chi), false)
}

/// Weak-form pairing: identically h^3 sum_k Q_c[f](k) phi(k), assembled
/// triple-wise as m w F (phi - phi1 - phi2) h^3.
pub fn apply_weak(grid: &Grid, table: &TriadTable, f: &Field, phi: &Field) -> f64 {
    let ctx = contexts(grid, table);
    let v = f.values();
    let p = phi.values();
    let h3 = grid.cell_volume();
    let chunk_sums: Vec<f64> = ctx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let terms: Vec<f64> = chunk
                .iter()
                .map(|t| {
                    let (fk, f1, f2) = (v[t.ik], v[t.i1], v[t.i2]);
                    let big_f = f1 * f2 - fk * f1 - fk * f2;
                    t.mw * big_f * (p[t.ik] - p[t.i1] - p[t.i2]) * h3
                })
                .collect();
            tree_sum(&terms)
        })
        .collect();
    tree_sum(&chunk_sums)
}

/// The kernel-stripped cutoff split: returns (Qplus, Qminus, L) with
/// Qplus = g L pointwise and Qplus - Qminus the stripped operator. The field
/// g is never inverted in the assembly; for finite N the cutoff factors are
/// evaluated on f = 1/g per node (zero where g is nonpositive).
pub fn split_q_g(
    grid: &Grid,
    table: &TriadTable,
    g: &Field,
    cutoff: &CutoffSpec,
) -> (Field, Field, Field) {
    let chi: Option<Vec<f64>> = if cutoff.is_infinite() {
        None
    } else {
        let f = Field::from_fn(grid, |i| {
            let gv = g.values()[i];
            if gv > 0.0 {
                1.0 / gv
            } else {
                -1.0
            }
        });
        Some(cutoff.chi_field(grid, &f))
    };
    let ctx = contexts(grid, table);
    let gv = g.values();
    let n = grid.node_count();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = ctx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = vec![0.0; n];
            let mut minus = vec![0.0; n];
            for t in chunk {
                let mut c = t.mw;
                if let Some(chi) = &chi {
                    c *= chi[t.ik] * chi[t.i1] * chi[t.i2];
                }
                let (gk, g1, g2) = (gv[t.ik], gv[t.i1], gv[t.i2]);
                loss[t.ik] += c;
                loss[t.i1] += c;
                loss[t.i2] += c;
                minus[t.ik] += c * (g1 + g2);
                minus[t.i1] += c * (gk - g2);
                minus[t.i2] += c * (gk - g1);
            }
            (loss, minus)
        })
        .collect();
    let mut loss = vec![0.0; n];
    let mut minus = vec![0.0; n];
    for (l, m) in partials {
        for i in 0..n {
            loss[i] += l[i];
            minus[i] += m[i];
        }
    }
    let plus: Vec<f64> = gv.iter().zip(&loss).map(|(&g, &l)| g * l).collect();
    (
        Field::from_values(plus),
        Field::from_values(minus),
        Field::from_values(loss),
    )
}

/// Entropy dissipation D_c[f] = sum over triads of
/// m w h^3 f f1 f2 (1/f1 + 1/f2 - 1/f)^2 >= 0; identical to
/// apply_weak(f, 1/f) up to rounding.
pub fn entropy_dissipation(grid: &Grid, table: &TriadTable, f: &Field) -> Result<f64> {
    for idx in 0..grid.node_count() {
        if !table.occurrences(idx).is_empty() && !(f.values()[idx] > 0.0) {
            return Err(Error::NonpositiveField {
                node: idx,
                value: f.values()[idx],
            });
        }
    }
    let ctx = contexts(grid, table);
    let v = f.values();
    let h3 = grid.cell_volume();
    let chunk_sums: Vec<f64> = ctx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let terms: Vec<f64> = chunk
                .iter()
                .map(|t| {
                    let (fk, f1, f2) = (v[t.ik], v[t.i1], v[t.i2]);
                    let defect = 1.0 / f1 + 1.0 / f2 - 1.0 / fk;
                    t.mw * h3 * fk * f1 * f2 * defect * defect
                })
                .collect();
            tree_sum(&terms)
        })
        .collect();
    Ok(tree_sum(&chunk_sums))
}
