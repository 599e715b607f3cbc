//! Decomposition of the grid into the no-collision region and disjoint
//! collisional invariant regions via triad connectivity, plus per-region
//! measures and local invariants of a field.
//!
//! Two nodes are connected when they share a stored triple; the no-collision
//! region (label 0) holds exactly the nodes appearing in no triple.

use crate::accum::tree_sum;
use crate::error::{Error, Result};
use crate::lattice::{Grid, Wavevector};
use crate::operator::Field;
use crate::resonance::TriadTable;
use serde::Serialize;
use std::collections::BTreeSet;

/// Union-find with path compression and union by size.
struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, x: u32) -> u32 {
        if self.parent[x as usize] != x {
            let root = self.find(self.parent[x as usize]);
            self.parent[x as usize] = root;
        }
        self.parent[x as usize]
    }

    fn union(&mut self, a: u32, b: u32) {
        let mut ra = self.find(a);
        let mut rb = self.find(b);
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

/// Per-node labels partitioning the grid: 0 is the no-collision region,
/// labels 1..=R are collisional invariant regions numbered by their smallest
/// contained node index.
#[derive(Clone, Debug)]
pub struct RegionDecomposition {
    labels: Vec<u32>,
    region_nodes: Vec<Vec<usize>>,
    region_measure: Vec<f64>,
    no_collision_count: usize,
}

impl RegionDecomposition {
    pub fn label(&self, node_index: usize) -> u32 {
        self.labels[node_index]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn region_count(&self) -> usize {
        self.region_nodes.len()
    }

    /// Sorted node indices of region r (1-based label).
    pub fn region_nodes(&self, region_id: u32) -> Result<&[usize]> {
        self.region_nodes
            .get(region_id.wrapping_sub(1) as usize)
            .map(|v| v.as_slice())
            .ok_or(Error::UnknownRegion(region_id))
    }

    /// m(S_r) = h^3 |S_r|.
    pub fn region_measure(&self, region_id: u32) -> Result<f64> {
        self.region_measure
            .get(region_id.wrapping_sub(1) as usize)
            .copied()
            .ok_or(Error::UnknownRegion(region_id))
    }

    pub fn region_ids(&self) -> impl Iterator<Item = u32> {
        1..=self.region_count() as u32
    }

    pub fn no_collision_count(&self) -> usize {
        self.no_collision_count
    }

    pub fn no_collision_nodes(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Union the three slots of every triple; nodes in no triple keep label 0.
pub fn decompose(grid: &Grid, table: &TriadTable) -> RegionDecomposition {
    let n = grid.node_count();
    let mut uf = UnionFind::new(n);
    for t in table.triples() {
        let a = grid.node_index(t.k) as u32;
        let b = grid.node_index(t.k1) as u32;
        let c = grid.node_index(t.k2) as u32;
        uf.union(a, b);
        uf.union(a, c);
    }
    let in_triple: Vec<bool> = (0..n).map(|i| !table.occurrences(i).is_empty()).collect();

    // Components numbered in order of smallest contained node index.
    let mut labels = vec![0u32; n];
    let mut root_label: Vec<u32> = vec![0; n];
    let mut region_nodes: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if !in_triple[i] {
            continue;
        }
        let root = uf.find(i as u32) as usize;
        if root_label[root] == 0 {
            region_nodes.push(Vec::new());
            root_label[root] = region_nodes.len() as u32;
        }
        let label = root_label[root];
        labels[i] = label;
        region_nodes[(label - 1) as usize].push(i);
    }
    let h3 = grid.cell_volume();
    let region_measure: Vec<f64> = region_nodes.iter().map(|v| h3 * v.len() as f64).collect();
    let no_collision_count = n - region_nodes.iter().map(|v| v.len()).sum::<usize>();
    RegionDecomposition {
        labels,
        region_nodes,
        region_measure,
        no_collision_count,
    }
}

/// The n-collision connection hull of x under broadened connectivity:
/// n rounds of expansion by shared triples, returned as sorted node indices.
pub fn n_collision_hull(
    grid: &Grid,
    table: &TriadTable,
    x: Wavevector,
    n: u32,
) -> Result<Vec<usize>> {
    let start = grid.node_index(x);
    if table.occurrences(start).is_empty() {
        return Err(Error::NoCollisionNode(format!("{:?}", x.components())));
    }
    let mut current: BTreeSet<usize> = BTreeSet::new();
    current.insert(start);
    for _ in 0..n {
        let mut next = current.clone();
        for &idx in &current {
            for &(ti, _) in table.occurrences(idx) {
                let t = table.triples()[ti as usize];
                next.insert(grid.node_index(t.k));
                next.insert(grid.node_index(t.k1));
                next.insert(grid.node_index(t.k2));
            }
        }
        if next.len() == current.len() {
            break;
        }
        current = next;
    }
    Ok(current.into_iter().collect())
}

/// Local energy and momentum of a field on one region.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LocalInvariants {
    pub region_id: u32,
    pub energy: f64,
    pub momentum: [f64; 3],
}

/// E = h^3 sum f(k) omega(k), M = h^3 sum f(k) k over the region, with k in
/// torus coordinates in (-1/2, 1/2). Sums use the fixed-shape tree reduction.
pub fn local_invariants(
    grid: &Grid,
    decomp: &RegionDecomposition,
    region_id: u32,
    f: &Field,
) -> Result<LocalInvariants> {
    let nodes = decomp.region_nodes(region_id)?;
    let h3 = grid.cell_volume();
    let e_terms: Vec<f64> = nodes
        .iter()
        .map(|&i| f.values()[i] * grid.omega_by_index(i))
        .collect();
    let mut momentum = [0.0; 3];
    for axis in 0..3 {
        let terms: Vec<f64> = nodes
            .iter()
            .map(|&i| {
                let c = grid.coords(grid.node_at(i));
                f.values()[i] * c[axis]
            })
            .collect();
        momentum[axis] = h3 * tree_sum(&terms);
    }
    Ok(LocalInvariants {
        region_id,
        energy: h3 * tree_sum(&e_terms),
        momentum,
    })
}
