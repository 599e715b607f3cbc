// scratch probe, not part of the repo
use wavekin::equilibrium::*;
use wavekin::lattice::*;
use wavekin::operator::*;
use wavekin::regions::*;
use wavekin::resonance::*;

fn main() {
    let grid = Grid::new(12, 2.5).unwrap();
    let mut s = 42u64;
    let f0 = Field::from_fn(&grid, |_| {
        s ^= s << 13; s ^= s >> 7; s ^= s << 17;
        1.0 + (s >> 11) as f64 / (1u64 << 53) as f64
    });
    // fixed region from theta=0.2, fixed solved field, sweep theta
    let kernel0 = BroadeningKernel::gaussian(0.2);
    let t0 = std::time::Instant::now();
    let table0 = enumerate_triples(&grid, &kernel0, 1.0).unwrap();
    println!("D=12 enumeration at 0.2: {} triads in {:?}", table0.len(), t0.elapsed());
    let decomp0 = decompose(&grid, &table0);
    let rid = decomp0.region_ids().max_by_key(|&r| decomp0.region_nodes(r).unwrap().len()).unwrap();
    let nodes: Vec<usize> = decomp0.region_nodes(rid).unwrap().to_vec();
    let inv = local_invariants(&grid, &decomp0, rid, &f0).unwrap();
    let (params, _) = solve_equilibrium(&grid, &decomp0, rid, &inv, EquilibriumKind::Classical).unwrap();
    let mut f = Field::constant(&grid, 1.0);
    for &i in &nodes { f.values_mut()[i] = params.value(&grid, i); }
    let mut in_region = vec![false; grid.node_count()];
    for &i in &nodes { in_region[i] = true; }
    for theta in [0.2, 0.1, 0.05] {
        let kernel = BroadeningKernel::gaussian(theta);
        let table = enumerate_triples(&grid, &kernel, 1.0).unwrap();
        let q = apply_q(&grid, &table, &f);
        let qinf = nodes.iter().map(|&i| q.values()[i].abs()).fold(0.0f64, f64::max);
        let occ_min = nodes.iter().map(|&i| table.occurrences(i).len()).min().unwrap();
        let singletons = nodes.iter().filter(|&&i| table.occurrences(i).len() <= 2).count();
        println!("theta={} triads={} Qinf={:.4e} occ_min={} sparse_nodes={}", theta, table.len(), qinf, occ_min, singletons);
    }
}
