//! Broadened resonant-triad enumeration and the set index functionals.
//!
//! The frequency delta is replaced by a normalized even kernel of half-width
//! theta; lattice momentum conservation k = k1 + k2 stays exact. Each
//! unordered triad is stored once with k1 <= k2 and carries
//!
//! * `weight`        = phi_theta(omega(k) - omega(k1) - omega(k2)),
//! * `kernel_factor` = 1 / (c_K omega(k) omega(k1) omega(k2)),  c_K in {1, 8}.
//!
//! Enumeration pairs nodes in frequency order so that pairs whose omega-sum
//! cannot land within kernel support of any attainable omega(k) are skipped
//! before the residual is evaluated.

use crate::accum::Compensated;
use crate::error::{Error, Result};
use crate::lattice::{Grid, Wavevector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Shape of the broadening kernel replacing the frequency delta.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    Gaussian,
    Box,
}

/// Normalized broadening kernel: nonnegative, even, unit integral.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BroadeningKernel {
    pub theta: f64,
    pub shape: KernelShape,
    pub cutoff_multiple: f64,
}

impl BroadeningKernel {
    /// Gaussian kernel phi(s) = theta^-1 exp(-pi s^2 / theta^2), support cut at 3 theta.
    pub fn gaussian(theta: f64) -> Self {
        BroadeningKernel {
            theta,
            shape: KernelShape::Gaussian,
            cutoff_multiple: 3.0,
        }
    }

    /// Box kernel phi(s) = (2 theta)^-1 on |s| <= theta.
    pub fn boxcar(theta: f64) -> Self {
        BroadeningKernel {
            theta,
            shape: KernelShape::Box,
            cutoff_multiple: 1.0,
        }
    }

    pub fn with_cutoff(mut self, cutoff_multiple: f64) -> Self {
        self.cutoff_multiple = cutoff_multiple;
        self
    }

    /// Kernel value at frequency mismatch s.
    pub fn eval(&self, s: f64) -> f64 {
        match self.shape {
            KernelShape::Gaussian => {
                (-std::f64::consts::PI * s * s / (self.theta * self.theta)).exp() / self.theta
            }
            KernelShape::Box => {
                if s.abs() <= self.theta {
                    0.5 / self.theta
                } else {
                    0.0
                }
            }
        }
    }

    /// Half-width of the retained support, cutoff_multiple * theta.
    pub fn support(&self) -> f64 {
        self.cutoff_multiple * self.theta
    }

    /// The edge margin omega0 - 2 must survive broadening.
    pub fn validate_margin(&self, grid: &Grid) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::Config(format!("theta must be > 0, got {}", self.theta)));
        }
        if !(self.cutoff_multiple > 0.0) {
            return Err(Error::Config(format!(
                "cutoff_multiple must be > 0, got {}",
                self.cutoff_multiple
            )));
        }
        let margin = grid.omega0() - 2.0;
        if self.theta >= margin {
            return Err(Error::ThetaMargin {
                theta: self.theta,
                margin,
            });
        }
        Ok(())
    }
}

/// Which collision-condition residual a set index functional broadens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionKind {
    Forward,
    Backward,
    Central,
}

/// One broadened resonant interaction (k; k1, k2) with k = k1 + k2 exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResonanceTriple {
    pub k: Wavevector,
    pub k1: Wavevector,
    pub k2: Wavevector,
    pub weight: f64,
    pub kernel_factor: f64,
}

/// Slot of a node inside a stored triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Merged,
    First,
    Second,
}

/// Key identifying the enumeration inputs; two tables with equal keys are
/// bit-identical.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriadKey {
    pub half_width: i32,
    pub omega0: f64,
    pub theta: f64,
    pub shape: KernelShape,
    pub cutoff_multiple: f64,
    pub c_k: f64,
}

impl TriadKey {
    pub fn new(grid: &Grid, kernel: &BroadeningKernel, c_k: f64) -> Self {
        TriadKey {
            half_width: grid.half_width(),
            omega0: grid.omega0(),
            theta: kernel.theta,
            shape: kernel.shape,
            cutoff_multiple: kernel.cutoff_multiple,
            c_k,
        }
    }

    /// Canonical string with exact float bits, used for hashing and cache headers.
    pub fn canonical(&self) -> String {
        format!(
            "d={};omega0={:016x};theta={:016x};shape={:?};cutoff={:016x};c_k={:016x}",
            self.half_width,
            self.omega0.to_bits(),
            self.theta.to_bits(),
            self.shape,
            self.cutoff_multiple.to_bits(),
            self.c_k.to_bits()
        )
    }
}

/// The enumerated triad table plus a per-node occurrence index.
#[derive(Clone, Debug)]
pub struct TriadTable {
    triples: Vec<ResonanceTriple>,
    per_node: Vec<Vec<(u32, Slot)>>,
    key: Option<TriadKey>,
}

impl TriadTable {
    /// Build the occurrence index for an explicit triple list (used by the
    /// cache reader and by tests that craft small components by hand).
    pub fn from_triples(grid: &Grid, mut triples: Vec<ResonanceTriple>, key: Option<TriadKey>) -> Self {
        triples.sort_by_key(|t| (t.k, t.k1, t.k2));
        let mut per_node = vec![Vec::new(); grid.node_count()];
        for (i, t) in triples.iter().enumerate() {
            per_node[grid.node_index(t.k)].push((i as u32, Slot::Merged));
            per_node[grid.node_index(t.k1)].push((i as u32, Slot::First));
            per_node[grid.node_index(t.k2)].push((i as u32, Slot::Second));
        }
        TriadTable {
            triples,
            per_node,
            key,
        }
    }

    pub fn triples(&self) -> &[ResonanceTriple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Triples in which the node with this dense index appears, with slots.
    pub fn occurrences(&self, node_index: usize) -> &[(u32, Slot)] {
        &self.per_node[node_index]
    }

    pub fn key(&self) -> Option<&TriadKey> {
        self.key.as_ref()
    }
}

/// Frequency mismatch, kernel weight and kernel factor of the candidate
/// triad through an unordered daughter pair. Daughters are canonicalized
/// first, so both orders produce identical bits.
pub fn triple_weights(
    grid: &Grid,
    kernel: &BroadeningKernel,
    c_k: f64,
    a: Wavevector,
    b: Wavevector,
) -> (Wavevector, Wavevector, Wavevector, f64, f64, f64) {
    let (k1, k2) = if a <= b { (a, b) } else { (b, a) };
    let k = grid.add(k1, k2);
    let delta = grid.residual_central(k1, k2);
    let weight = kernel.eval(delta);
    let kernel_factor = 1.0 / (c_k * grid.omega(k) * grid.omega(k1) * grid.omega(k2));
    (k, k1, k2, delta, weight, kernel_factor)
}

/// Enumerate all broadened triads on the grid.
///
/// Complexity is O(n^6) worst case; nodes are sorted by frequency and for
/// each first daughter the scan stops once omega1 + omega2 exceeds the
/// largest attainable omega(k) plus kernel support.
pub fn enumerate_triples(grid: &Grid, kernel: &BroadeningKernel, c_k: f64) -> Result<TriadTable> {
    kernel.validate_margin(grid)?;
    if c_k != 1.0 && c_k != 8.0 {
        return Err(Error::Config(format!("c_k must be 1 or 8, got {c_k}")));
    }
    let support = kernel.support();
    // small pad keeps borderline pairs whose canonical-order mismatch rounds
    // just inside the support
    let omega_cap = grid.omega_max() + support + 1e-9;

    // Node ids sorted by frequency; ties broken by id for determinism.
    let mut by_omega: Vec<u32> = (0..grid.node_count() as u32).collect();
    by_omega.sort_by(|&a, &b| {
        grid.omega_by_index(a as usize)
            .partial_cmp(&grid.omega_by_index(b as usize))
            .unwrap()
            .then(a.cmp(&b))
    });

    let positions: Vec<usize> = (0..by_omega.len()).collect();
    let mut triples: Vec<ResonanceTriple> = positions
        .par_chunks(256)
        .map(|chunk| {
            let mut local = Vec::new();
            for &pa in chunk {
                let ia = by_omega[pa] as usize;
                let wa = grid.omega_by_index(ia);
                if wa + grid.omega_min() > omega_cap {
                    continue;
                }
                let a = grid.node_at(ia);
                for &idb in &by_omega[pa..] {
                    let ib = idb as usize;
                    let wb = grid.omega_by_index(ib);
                    if wa + wb > omega_cap {
                        break;
                    }
                    let b = grid.node_at(ib);
                    let (k, k1, k2, delta, weight, kernel_factor) =
                        triple_weights(grid, kernel, c_k, a, b);
                    if delta.abs() <= support {
                        local.push(ResonanceTriple {
                            k,
                            k1,
                            k2,
                            weight,
                            kernel_factor,
                        });
                    }
                }
            }
            local
        })
        .reduce(Vec::new, |mut acc, mut v| {
            acc.append(&mut v);
            acc
        });

    // Frequency-order scanning visits each unordered pair exactly once
    // (positions pa <= pb), but two distinct nodes can share a frequency and
    // appear in either role; canonical (k1, k2) ordering plus the final sort
    // makes the output order-independent.
    triples.sort_by_key(|t| (t.k, t.k1, t.k2));
    Ok(TriadTable::from_triples(
        grid,
        triples,
        Some(TriadKey::new(grid, kernel, c_k)),
    ))
}

fn residual(grid: &Grid, which: CollisionKind, x: Wavevector, y: Wavevector) -> f64 {
    match which {
        CollisionKind::Forward => grid.residual_forward(x, y),
        CollisionKind::Backward => grid.residual_backward(x, y),
        CollisionKind::Central => grid.residual_central(x, y),
    }
}

/// Broadened set index functional: h^3 sum over A of phi_theta(residual(x, y)).
/// Linear in the set, hence finitely additive; compensated accumulation keeps
/// additivity exact up to the final rounding.
pub fn mu_index(
    grid: &Grid,
    kernel: &BroadeningKernel,
    which: CollisionKind,
    set: &[usize],
    x: Wavevector,
) -> f64 {
    let mut acc = Compensated::new();
    for &idx in set {
        let y = grid.node_at(idx);
        acc.add(kernel.eval(residual(grid, which, x, y)));
    }
    grid.cell_volume() * acc.value()
}

/// Report of the index-functional boundedness probe at one interior point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MuBoundReport {
    pub mu3_value: f64,
    pub bound_value: f64,
    pub ratio: f64,
}

fn require_interior(grid: &Grid, x: Wavevector) -> Result<()> {
    if grid.on_edge(x) {
        return Err(Error::EdgeNode(format!("{:?}", x.components())));
    }
    Ok(())
}

/// Evaluate mu3 over the whole torus against the stationary-phase bound
/// 1 / sqrt(prod_j |1 - e^{2 pi i x^j}|).
pub fn mu_bound_check(grid: &Grid, kernel: &BroadeningKernel, x: Wavevector) -> Result<MuBoundReport> {
    require_interior(grid, x)?;
    let all: Vec<usize> = (0..grid.node_count()).collect();
    let mu3 = mu_index(grid, kernel, CollisionKind::Central, &all, x);
    let c = grid.coords(x);
    let mut prod = 1.0;
    for xj in c {
        // |1 - e^{2 pi i xj}| = 2 |sin(pi xj)|
        prod *= 2.0 * (std::f64::consts::PI * xj).sin().abs();
    }
    let bound_value = 1.0 / prod.sqrt();
    Ok(MuBoundReport {
        mu3_value: mu3,
        bound_value,
        ratio: mu3 / bound_value,
    })
}

/// Difference quotient of a whole-torus index functional between two interior
/// nodes; zero by convention when the nodes coincide.
pub fn lipschitz_probe(
    grid: &Grid,
    kernel: &BroadeningKernel,
    which: CollisionKind,
    x: Wavevector,
    x2: Wavevector,
) -> Result<f64> {
    require_interior(grid, x)?;
    require_interior(grid, x2)?;
    if x == x2 {
        return Ok(0.0);
    }
    let all: Vec<usize> = (0..grid.node_count()).collect();
    let a = mu_index(grid, kernel, which, &all, x);
    let b = mu_index(grid, kernel, which, &all, x2);
    Ok((a - b).abs() / grid.distance(x, x2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(d: i32) -> Grid {
        Grid::new(d, 2.5).unwrap()
    }

    /// Naive O(n^6) reference enumeration: all ordered pairs, unordered
    /// deduplication by canonical ordering, no frequency pruning.
    fn brute_force(grid: &Grid, kernel: &BroadeningKernel, c_k: f64) -> Vec<ResonanceTriple> {
        let mut out = Vec::new();
        for i in 0..grid.node_count() {
            for j in i..grid.node_count() {
                let a = grid.node_at(i);
                let b = grid.node_at(j);
                let k = grid.add(a, b);
                let delta = grid.omega(k) - grid.omega(a) - grid.omega(b);
                if delta.abs() <= kernel.support() {
                    out.push(ResonanceTriple {
                        k,
                        k1: a,
                        k2: b,
                        weight: kernel.eval(delta),
                        kernel_factor: 1.0 / (c_k * grid.omega(k) * grid.omega(a) * grid.omega(b)),
                    });
                }
            }
        }
        out.sort_by_key(|t| (t.k, t.k1, t.k2));
        out
    }

    #[test]
    fn rejects_margin_violation() {
        let g = Grid::new(3, 2.4).unwrap();
        let k = BroadeningKernel::boxcar(0.5);
        assert!(matches!(
            enumerate_triples(&g, &k, 1.0),
            Err(Error::ThetaMargin { .. })
        ));
    }

    #[test]
    fn rejects_bad_ck() {
        let g = grid(1);
        let k = BroadeningKernel::boxcar(0.1);
        assert!(enumerate_triples(&g, &k, 2.0).is_err());
    }

    #[test]
    fn brute_force_oracle_d1_box() {
        let g = grid(1);
        let kernel = BroadeningKernel::boxcar(0.1);
        let table = enumerate_triples(&g, &kernel, 1.0).unwrap();
        let reference = brute_force(&g, &kernel, 1.0);
        assert_eq!(table.len(), reference.len());
        for (t, r) in table.triples().iter().zip(&reference) {
            assert_eq!((t.k, t.k1, t.k2), (r.k, r.k1, r.k2));
            assert_eq!(t.weight.to_bits(), r.weight.to_bits());
            assert_eq!(t.kernel_factor.to_bits(), r.kernel_factor.to_bits());
        }
    }

    #[test]
    fn brute_force_oracle_d2_gaussian() {
        let g = grid(2);
        let kernel = BroadeningKernel::gaussian(0.15);
        for c_k in [1.0, 8.0] {
            let table = enumerate_triples(&g, &kernel, c_k).unwrap();
            let reference = brute_force(&g, &kernel, c_k);
            assert_eq!(table.len(), reference.len());
            for (t, r) in table.triples().iter().zip(&reference) {
                assert_eq!((t.k, t.k1, t.k2), (r.k, r.k1, r.k2));
                assert_eq!(t.weight.to_bits(), r.weight.to_bits());
                assert_eq!(t.kernel_factor.to_bits(), r.kernel_factor.to_bits());
            }
        }
    }

    #[test]
    fn origin_appears_in_no_triple() {
        let g = grid(4);
        let kernel = BroadeningKernel::gaussian(0.1);
        let table = enumerate_triples(&g, &kernel, 1.0).unwrap();
        let zero = g.node_index(Wavevector::new(0, 0, 0));
        assert!(table.occurrences(zero).is_empty());
    }

    #[test]
    fn stored_triples_conserve_momentum_exactly() {
        let g = grid(4);
        let kernel = BroadeningKernel::gaussian(0.1);
        let table = enumerate_triples(&g, &kernel, 1.0).unwrap();
        assert!(!table.is_empty(), "expected resonant triads at D=4");
        for t in table.triples() {
            assert_eq!(g.sub(g.sub(t.k, t.k1), t.k2), Wavevector::new(0, 0, 0));
            assert!(t.k1 <= t.k2);
            assert!(t.weight > 0.0);
            let delta = g.omega(t.k) - g.omega(t.k1) - g.omega(t.k2);
            assert!(delta.abs() <= kernel.support());
        }
    }

    #[test]
    fn per_node_index_round_trips() {
        let g = grid(3);
        let kernel = BroadeningKernel::gaussian(0.12);
        let table = enumerate_triples(&g, &kernel, 1.0).unwrap();
        // every occurrence points back at a triple containing the node
        for idx in 0..g.node_count() {
            for &(ti, slot) in table.occurrences(idx) {
                let t = table.triples()[ti as usize];
                let found = match slot {
                    Slot::Merged => t.k,
                    Slot::First => t.k1,
                    Slot::Second => t.k2,
                };
                assert_eq!(g.node_index(found), idx);
            }
        }
        // every triple is indexed from all three slots
        let total: usize = (0..g.node_count()).map(|i| table.occurrences(i).len()).sum();
        assert_eq!(total, 3 * table.len());
    }

    #[test]
    fn enumeration_weights_match_kernel_at_slot_swap() {
        // weight and kernel_factor are symmetric under k1 <-> k2
        let g = grid(3);
        let kernel = BroadeningKernel::gaussian(0.12);
        let table = enumerate_triples(&g, &kernel, 1.0).unwrap();
        for t in table.triples().iter().take(200) {
            let (_, _, _, _, w_swapped, kf_swapped) = triple_weights(&g, &kernel, 1.0, t.k2, t.k1);
            assert_eq!(t.weight.to_bits(), w_swapped.to_bits());
            assert_eq!(t.kernel_factor.to_bits(), kf_swapped.to_bits());
        }
    }

    #[test]
    fn mu_empty_set_is_zero() {
        let g = grid(3);
        let kernel = BroadeningKernel::gaussian(0.1);
        let x = Wavevector::new(1, 2, 3);
        for which in [CollisionKind::Forward, CollisionKind::Backward, CollisionKind::Central] {
            assert_eq!(mu_index(&g, &kernel, which, &[], x), 0.0);
        }
    }

    #[test]
    fn mu_additivity_and_nonnegativity() {
        let g = grid(3);
        let kernel = BroadeningKernel::gaussian(0.1);
        let mut seed = 42u64;
        let mut nxt = || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            seed
        };
        for trial in 0..50 {
            let x = g.node_at((nxt() % g.node_count() as u64) as usize);
            // random disjoint split of a random subset
            let mut a = Vec::new();
            let mut b = Vec::new();
            for idx in 0..g.node_count() {
                match nxt() % 3 {
                    0 => a.push(idx),
                    1 => b.push(idx),
                    _ => {}
                }
            }
            let union: Vec<usize> = a.iter().chain(b.iter()).cloned().collect();
            for which in [CollisionKind::Forward, CollisionKind::Backward, CollisionKind::Central] {
                let ma = mu_index(&g, &kernel, which, &a, x);
                let mb = mu_index(&g, &kernel, which, &b, x);
                let mu = mu_index(&g, &kernel, which, &union, x);
                assert!(ma >= 0.0 && mb >= 0.0, "nonnegativity violated");
                let tol = 4.0 * f64::EPSILON * (ma + mb).abs().max(1e-300);
                assert!(
                    (mu - (ma + mb)).abs() <= tol,
                    "additivity broken at trial {trial}: {mu} vs {}",
                    ma + mb
                );
            }
        }
    }

    #[test]
    fn mu_monotone_under_inclusion() {
        let g = grid(3);
        let kernel = BroadeningKernel::gaussian(0.1);
        let x = Wavevector::new(2, 1, 1);
        let small: Vec<usize> = (0..100).collect();
        let large: Vec<usize> = (0..g.node_count()).collect();
        for which in [CollisionKind::Forward, CollisionKind::Backward, CollisionKind::Central] {
            assert!(
                mu_index(&g, &kernel, which, &small, x)
                    <= mu_index(&g, &kernel, which, &large, x) + 1e-15
            );
        }
    }

    #[test]
    fn mu_bound_check_quarter_point() {
        // On the D=6 grid the exact point (1/4,1/4,1/4) is unrepresentable;
        // verify the bound expression itself at the exact coordinates via a
        // grid whose nodes hit 1/4: none exists (odd lattice), so check the
        // closed form against the frozen value 2^(-3/4).
        let g = grid(6);
        let kernel = BroadeningKernel::gaussian(0.1);
        let x = Wavevector::new(3, 3, 3); // nearest representable to 1/4
        let report = mu_bound_check(&g, &kernel, x).unwrap();
        assert!(report.mu3_value >= 0.0 && report.bound_value.is_finite());
        // frozen closed form at the exact quarter point
        let exact_quarter_bound = 1.0 / (2.0f64.sqrt().powi(3)).sqrt();
        assert!((exact_quarter_bound - 0.5946035575013605).abs() < 1e-15);
    }

    #[test]
    fn mu_bound_check_rejects_edge_components() {
        let g = grid(4);
        let kernel = BroadeningKernel::gaussian(0.1);
        assert!(mu_bound_check(&g, &kernel, Wavevector::new(0, 1, 1)).is_err());
        assert!(mu_bound_check(&g, &kernel, Wavevector::new(1, 1, 1)).is_ok());
    }

    #[test]
    fn lipschitz_probe_conventions() {
        let g = grid(4);
        let kernel = BroadeningKernel::gaussian(0.1);
        let x = Wavevector::new(1, 1, 1);
        assert_eq!(
            lipschitz_probe(&g, &kernel, CollisionKind::Central, x, x).unwrap(),
            0.0
        );
        assert!(lipschitz_probe(&g, &kernel, CollisionKind::Central, x, Wavevector::new(0, 2, 2))
            .is_err());
        let q = lipschitz_probe(&g, &kernel, CollisionKind::Central, x, Wavevector::new(2, 1, 1))
            .unwrap();
        assert!(q.is_finite() && q >= 0.0);
    }
}
