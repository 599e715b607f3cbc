//! Local-equilibrium solves on collisional invariant regions, admissibility
//! probing, and distance/entropy-gap diagnostics.
//!
//! The classical equilibrium on a region is 1/(a omega + b.k) and the
//! quantized one 1/(exp(a omega + b.k) - 1); the pair (a, b) is fixed by the
//! region's energy and momentum through a 4-equation system solved with a
//! damped Newton iteration whose line search keeps a omega + b.k positive on
//! every node of the region.

use crate::accum::tree_sum;
use crate::error::{Error, Result};
use crate::lattice::Grid;
use crate::operator::Field;
use crate::regions::{LocalInvariants, RegionDecomposition};
use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

const MAX_ITERATIONS: usize = 100;
const MULTISTART_AGREE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquilibriumKind {
    Classical,
    Quantized,
}

/// The pair (a, b) defining a local equilibrium on one region.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EquilibriumParams {
    pub a: f64,
    pub b: [f64; 3],
    pub region_id: u32,
    pub kind: EquilibriumKind,
}

impl EquilibriumParams {
    /// a omega(k) + b.k at a node.
    pub fn linear_part(&self, grid: &Grid, node_index: usize) -> f64 {
        let c = grid.coords(grid.node_at(node_index));
        self.a * grid.omega_by_index(node_index) + self.b[0] * c[0] + self.b[1] * c[1] + self.b[2] * c[2]
    }

    /// Equilibrium value at a node; only meaningful on the region where the
    /// linear part is positive.
    pub fn value(&self, grid: &Grid, node_index: usize) -> f64 {
        let z = self.linear_part(grid, node_index);
        match self.kind {
            EquilibriumKind::Classical => 1.0 / z,
            EquilibriumKind::Quantized => 1.0 / z.exp_m1(),
        }
    }

    /// Field equal to the equilibrium on the region and 0 elsewhere.
    pub fn field_on_region(&self, grid: &Grid, decomp: &RegionDecomposition) -> Result<Field> {
        let nodes = decomp.region_nodes(self.region_id)?;
        let mut f = Field::zeros(grid);
        for &i in nodes {
            f.values_mut()[i] = self.value(grid, i);
        }
        Ok(f)
    }
}

/// Uniqueness and conditioning evidence gathered around a converged solve.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AdmissibilityReport {
    /// All multi-start runs that converged agree to 1e-8.
    pub unique: bool,
    /// 2-norm condition number of the Jacobian at the solution.
    pub jacobian_condition: f64,
    /// Perturbed problems (eps-grid on E and M) solved with bounded response.
    pub continuity_ok: bool,
    pub residual: f64,
    pub iterations: usize,
}

struct RegionData {
    omega: Vec<f64>,
    coords: Vec<[f64; 3]>,
    h3: f64,
}

impl RegionData {
    fn gather(grid: &Grid, decomp: &RegionDecomposition, region_id: u32) -> Result<Self> {
        let nodes = decomp.region_nodes(region_id)?;
        Ok(RegionData {
            omega: nodes.iter().map(|&i| grid.omega_by_index(i)).collect(),
            coords: nodes.iter().map(|&i| grid.coords(grid.node_at(i))).collect(),
            h3: grid.cell_volume(),
        })
    }

    fn linear(&self, p: &Vector4<f64>, i: usize) -> f64 {
        let c = self.coords[i];
        p[0] * self.omega[i] + p[1] * c[0] + p[2] * c[1] + p[3] * c[2]
    }

    fn positive(&self, p: &Vector4<f64>) -> bool {
        (0..self.omega.len()).all(|i| self.linear(p, i) > 0.0)
    }

    /// Residual of the 4-equation system against target (E, M).
    fn residual(&self, p: &Vector4<f64>, kind: EquilibriumKind, target: &Vector4<f64>) -> Vector4<f64> {
        let mut sums = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for i in 0..self.omega.len() {
            let z = self.linear(p, i);
            let value = match kind {
                EquilibriumKind::Classical => 1.0 / z,
                EquilibriumKind::Quantized => 1.0 / z.exp_m1(),
            };
            sums[0].push(self.omega[i] * value);
            for axis in 0..3 {
                sums[axis + 1].push(self.coords[i][axis] * value);
            }
        }
        Vector4::new(
            self.h3 * tree_sum(&sums[0]) - target[0],
            self.h3 * tree_sum(&sums[1]) - target[1],
            self.h3 * tree_sum(&sums[2]) - target[2],
            self.h3 * tree_sum(&sums[3]) - target[3],
        )
    }

    /// Analytic Jacobian d residual / d (a, b).
    fn jacobian(&self, p: &Vector4<f64>, kind: EquilibriumKind) -> Matrix4<f64> {
        let mut j = Matrix4::zeros();
        for i in 0..self.omega.len() {
            let z = self.linear(p, i);
            // d value / d z
            let dv = match kind {
                EquilibriumKind::Classical => -1.0 / (z * z),
                EquilibriumKind::Quantized => {
                    let q = 1.0 / z.exp_m1();
                    -q * (1.0 + q)
                }
            };
            let basis = [self.omega[i], self.coords[i][0], self.coords[i][1], self.coords[i][2]];
            for row in 0..4 {
                for col in 0..4 {
                    j[(row, col)] += self.h3 * basis[row] * dv * basis[col];
                }
            }
        }
        j
    }
}

fn condition_number(j: &Matrix4<f64>) -> f64 {
    let sv = j.svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Solve J d = r with row/column equilibration; the raw Jacobian spans many
/// orders of magnitude in the deep quantized regime and plain LU loses the
/// Newton direction.
fn solve_equilibrated(j: &Matrix4<f64>, r: &Vector4<f64>) -> Option<Vector4<f64>> {
    let mut row_scale = [0.0f64; 4];
    for i in 0..4 {
        for c in 0..4 {
            row_scale[i] = row_scale[i].max(j[(i, c)].abs());
        }
        if row_scale[i] == 0.0 {
            return None;
        }
    }
    let mut j1 = *j;
    let mut r1 = *r;
    for i in 0..4 {
        for c in 0..4 {
            j1[(i, c)] /= row_scale[i];
        }
        r1[i] /= row_scale[i];
    }
    let mut col_scale = [0.0f64; 4];
    for c in 0..4 {
        for i in 0..4 {
            col_scale[c] = col_scale[c].max(j1[(i, c)].abs());
        }
        if col_scale[c] == 0.0 {
            return None;
        }
    }
    for c in 0..4 {
        for i in 0..4 {
            j1[(i, c)] /= col_scale[c];
        }
    }
    let y = j1.lu().solve(&r1)?;
    let mut d = y;
    for c in 0..4 {
        d[c] /= col_scale[c];
    }
    Some(d)
}

enum SingleOutcome {
    Converged { p: Vector4<f64>, residual: f64, iterations: usize },
    PositivityBlocked,
    NoConvergence { best_residual: f64 },
}

fn newton_single(
    data: &RegionData,
    kind: EquilibriumKind,
    target: &Vector4<f64>,
    start: Vector4<f64>,
    tol: f64,
) -> SingleOutcome {
    let mut p = start;
    if !data.positive(&p) {
        return SingleOutcome::PositivityBlocked;
    }
    let mut r = data.residual(&p, kind, target);
    let mut rnorm = r.amax();
    let mut best = rnorm;
    for it in 0..MAX_ITERATIONS {
        if rnorm <= tol {
            return SingleOutcome::Converged {
                p,
                residual: rnorm,
                iterations: it,
            };
        }
        let j = data.jacobian(&p, kind);
        let delta = match solve_equilibrated(&j, &(-r)) {
            Some(d) => d,
            None => return SingleOutcome::NoConvergence { best_residual: best },
        };
        // damped line search maintaining positivity on every node
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= 1e-12 {
            let trial = p + delta * lambda;
            if data.positive(&trial) {
                let rt = data.residual(&trial, kind, target);
                let tn = rt.amax();
                if tn < rnorm {
                    p = trial;
                    r = rt;
                    rnorm = tn;
                    best = best.min(tn);
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return SingleOutcome::NoConvergence { best_residual: best };
        }
    }
    if rnorm <= tol {
        SingleOutcome::Converged {
            p,
            residual: rnorm,
            iterations: MAX_ITERATIONS,
        }
    } else {
        SingleOutcome::NoConvergence { best_residual: best }
    }
}

/// Solve the 4-equation system for (a, b) on a region from its invariants.
///
/// Multi-start from 8 perturbed initializations around a0 = m(S_r)/E, b0 = 0;
/// uniqueness is reported as consensus of the converged runs plus Jacobian
/// nonsingularity, and continuity is probed on an eps-grid of perturbed
/// invariants.
pub fn solve_equilibrium(
    grid: &Grid,
    decomp: &RegionDecomposition,
    region_id: u32,
    inv: &LocalInvariants,
    kind: EquilibriumKind,
) -> Result<(EquilibriumParams, AdmissibilityReport)> {
    if !(inv.energy > 0.0) {
        return Err(Error::Inadmissible {
            region_id,
            reason: format!("region energy must be positive, got {}", inv.energy),
        });
    }
    let data = RegionData::gather(grid, decomp, region_id)?;
    let measure = data.h3 * data.omega.len() as f64;
    let a0 = measure / inv.energy;
    let target = Vector4::new(inv.energy, inv.momentum[0], inv.momentum[1], inv.momentum[2]);
    let tol = 1e-12 * (1.0 + inv.energy);

    let b_unit = 0.1 * a0;
    let starts: [Vector4<f64>; 8] = [
        Vector4::new(a0, 0.0, 0.0, 0.0),
        Vector4::new(0.5 * a0, 0.0, 0.0, 0.0),
        Vector4::new(2.0 * a0, 0.0, 0.0, 0.0),
        Vector4::new(4.0 * a0, 0.0, 0.0, 0.0),
        Vector4::new(0.25 * a0, 0.0, 0.0, 0.0),
        Vector4::new(a0, b_unit, 0.0, 0.0),
        Vector4::new(a0, 0.0, b_unit, 0.0),
        Vector4::new(a0, 0.0, 0.0, -b_unit),
    ];

    let mut converged: Vec<(Vector4<f64>, f64, usize)> = Vec::new();
    let mut any_ran = false;
    let mut best_fail = f64::INFINITY;
    for s in starts {
        match newton_single(&data, kind, &target, s, tol) {
            SingleOutcome::Converged { p, residual, iterations } => {
                converged.push((p, residual, iterations))
            }
            SingleOutcome::PositivityBlocked => {}
            SingleOutcome::NoConvergence { best_residual } => {
                any_ran = true;
                best_fail = best_fail.min(best_residual);
            }
        }
    }
    if converged.is_empty() {
        if any_ran {
            return Err(Error::NonConvergence {
                iterations: MAX_ITERATIONS,
                best_residual: best_fail,
            });
        }
        return Err(Error::Inadmissible {
            region_id,
            reason: "positivity unsatisfiable along every damped path".into(),
        });
    }

    // pick the best run, check consensus
    converged.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
    let (p, residual, iterations) = converged[0];
    let mut unique = true;
    for (q, _, _) in &converged[1..] {
        let diff = (p - q).amax();
        if diff > MULTISTART_AGREE * (1.0 + p.amax()) {
            unique = false;
        }
    }

    let j = data.jacobian(&p, kind);
    let jacobian_condition = condition_number(&j);
    if !jacobian_condition.is_finite() {
        return Err(Error::Inadmissible {
            region_id,
            reason: "singular Jacobian at the solution (degenerate region)".into(),
        });
    }

    // continuity probe: eps-grid on (E, M); parameters must respond with
    // bounded sensitivity
    let eps = 1e-5;
    let mut continuity_ok = true;
    for probe in 0..8 {
        let mut t2 = target;
        let comp = probe / 2;
        let sign = if probe % 2 == 0 { 1.0 } else { -1.0 };
        t2[comp] += sign * eps * (1.0 + t2[comp].abs());
        match newton_single(&data, kind, &t2, p, tol.max(1e-12 * (1.0 + t2[0].abs()))) {
            SingleOutcome::Converged { p: p2, .. } => {
                let moved = (p2 - p).amax();
                if moved > 1e6 * eps * (1.0 + p.amax()) {
                    continuity_ok = false;
                }
            }
            _ => continuity_ok = false,
        }
    }

    Ok((
        EquilibriumParams {
            a: p[0],
            b: [p[1], p[2], p[3]],
            region_id,
            kind,
        },
        AdmissibilityReport {
            unique,
            jacobian_condition,
            continuity_ok,
            residual,
            iterations,
        },
    ))
}

/// Quadrature of the equilibrium field's invariants on its region.
pub fn invariants_of_params(
    grid: &Grid,
    decomp: &RegionDecomposition,
    params: &EquilibriumParams,
) -> Result<LocalInvariants> {
    let nodes = decomp.region_nodes(params.region_id)?;
    let h3 = grid.cell_volume();
    let e_terms: Vec<f64> = nodes
        .iter()
        .map(|&i| params.value(grid, i) * grid.omega_by_index(i))
        .collect();
    let mut momentum = [0.0; 3];
    for axis in 0..3 {
        let terms: Vec<f64> = nodes
            .iter()
            .map(|&i| params.value(grid, i) * grid.coords(grid.node_at(i))[axis])
            .collect();
        momentum[axis] = h3 * tree_sum(&terms);
    }
    Ok(LocalInvariants {
        region_id: params.region_id,
        energy: h3 * tree_sum(&e_terms),
        momentum,
    })
}

/// Region-restricted entropy h^3 sum ln f; errors on nonpositive values.
pub fn entropy(grid: &Grid, decomp: &RegionDecomposition, region_id: u32, f: &Field) -> Result<f64> {
    let nodes = decomp.region_nodes(region_id)?;
    for &i in nodes {
        if !(f.values()[i] > 0.0) {
            return Err(Error::NonpositiveField {
                node: i,
                value: f.values()[i],
            });
        }
    }
    let terms: Vec<f64> = nodes.iter().map(|&i| f.values()[i].ln()).collect();
    Ok(grid.cell_volume() * tree_sum(&terms))
}

/// Csiszar-Kullback-type probe: lhs = ||f - F||_L1, rhs = sqrt(entropy gap).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CkReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub entropy_gap: f64,
}

pub fn csiszar_kullback_check(
    grid: &Grid,
    decomp: &RegionDecomposition,
    region_id: u32,
    f: &Field,
    eq: &EquilibriumParams,
) -> Result<CkReport> {
    let inv_f = crate::regions::local_invariants(grid, decomp, region_id, f)?;
    let inv_eq = invariants_of_params(grid, decomp, eq)?;
    let de = (inv_f.energy - inv_eq.energy).abs();
    if de > 1e-8 * (1.0 + inv_eq.energy.abs()) {
        return Err(Error::InvariantMismatch(format!(
            "energy {} vs {}",
            inv_f.energy, inv_eq.energy
        )));
    }
    for axis in 0..3 {
        let dm = (inv_f.momentum[axis] - inv_eq.momentum[axis]).abs();
        if dm > 1e-8 * (1.0 + inv_eq.momentum[axis].abs()) {
            return Err(Error::InvariantMismatch(format!(
                "momentum axis {axis}: {} vs {}",
                inv_f.momentum[axis], inv_eq.momentum[axis]
            )));
        }
    }
    let nodes = decomp.region_nodes(region_id)?;
    let l1_terms: Vec<f64> = nodes
        .iter()
        .map(|&i| (f.values()[i] - eq.value(grid, i)).abs())
        .collect();
    let lhs = grid.cell_volume() * tree_sum(&l1_terms);
    let s_f = entropy(grid, decomp, region_id, f)?;
    let eq_field = eq.field_on_region(grid, decomp)?;
    let s_eq = entropy(grid, decomp, region_id, &eq_field)?;
    let entropy_gap = s_eq - s_f;
    let rhs = entropy_gap.max(0.0).sqrt();
    let ratio = if lhs < 1e-13 && rhs < 1e-13 {
        0.0
    } else {
        lhs / rhs
    };
    Ok(CkReport {
        lhs,
        rhs,
        ratio,
        entropy_gap,
    })
}

/// Region-restricted discrete L^p distance to an equilibrium (h^3-weighted;
/// the max norm for p = infinity). Inputs are assumed valid: p >= 1.
pub fn distance_report(
    grid: &Grid,
    decomp: &RegionDecomposition,
    region_id: u32,
    f: &Field,
    eq: &EquilibriumParams,
    p: f64,
) -> f64 {
    assert!(p >= 1.0, "L^p distance requires p >= 1");
    let nodes = decomp.region_nodes(region_id).expect("valid region");
    if p.is_infinite() {
        return nodes
            .iter()
            .map(|&i| (f.values()[i] - eq.value(grid, i)).abs())
            .fold(0.0, f64::max);
    }
    let terms: Vec<f64> = nodes
        .iter()
        .map(|&i| (f.values()[i] - eq.value(grid, i)).abs().powf(p))
        .collect();
    (grid.cell_volume() * tree_sum(&terms)).powf(1.0 / p)
}

/// Build a strictly positive random field on the region whose (E, M) match
/// the equilibrium's exactly (to rounding): a multiplicative perturbation of
/// the equilibrium followed by a 4-parameter linear correction
/// f <- h (1 + beta omega + gamma.k). Off-region nodes hold 1.0.
pub fn constrained_perturbation(
    grid: &Grid,
    decomp: &RegionDecomposition,
    eq: &EquilibriumParams,
    rel_amplitude: f64,
    seed: u64,
) -> Result<Field> {
    let nodes = decomp.region_nodes(eq.region_id)?.to_vec();
    let target = invariants_of_params(grid, decomp, eq)?;
    let h3 = grid.cell_volume();
    let mut amplitude = rel_amplitude;
    for _attempt in 0..20 {
        // deterministic multiplicative noise
        let mut s = seed.max(1);
        let mut noise = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            2.0 * ((s >> 11) as f64 / (1u64 << 53) as f64) - 1.0
        };
        let mut h = Field::constant(grid, 1.0);
        for &i in &nodes {
            h.values_mut()[i] = eq.value(grid, i) * (1.0 + amplitude * noise());
        }
        // linear correction: solve for (beta, gamma) so invariants match
        let mut a = Matrix4::zeros();
        let mut rhs = Vector4::zeros();
        let inv_h = crate::regions::local_invariants(grid, decomp, eq.region_id, &h)?;
        rhs[0] = target.energy - inv_h.energy;
        for axis in 0..3 {
            rhs[axis + 1] = target.momentum[axis] - inv_h.momentum[axis];
        }
        for &i in &nodes {
            let hv = h.values()[i];
            let c = grid.coords(grid.node_at(i));
            let basis = [grid.omega_by_index(i), c[0], c[1], c[2]];
            let row_weight = [grid.omega_by_index(i), c[0], c[1], c[2]];
            for row in 0..4 {
                for col in 0..4 {
                    a[(row, col)] += h3 * hv * row_weight[row] * basis[col];
                }
            }
        }
        let coef = match a.lu().solve(&rhs) {
            Some(c) => c,
            None => {
                return Err(Error::Inadmissible {
                    region_id: eq.region_id,
                    reason: "degenerate correction system for constrained perturbation".into(),
                })
            }
        };
        let mut f = Field::constant(grid, 1.0);
        let mut positive = true;
        for &i in &nodes {
            let c = grid.coords(grid.node_at(i));
            let m = 1.0
                + coef[0] * grid.omega_by_index(i)
                + coef[1] * c[0]
                + coef[2] * c[1]
                + coef[3] * c[2];
            let v = h.values()[i] * m;
            if !(v > 0.0) {
                positive = false;
                break;
            }
            f.values_mut()[i] = v;
        }
        if positive {
            return Ok(f);
        }
        amplitude *= 0.5;
    }
    Err(Error::Inadmissible {
        region_id: eq.region_id,
        reason: "could not build a positive constrained perturbation".into(),
    })
}
