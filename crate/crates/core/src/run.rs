//! Command drivers behind the CLI: decompose, simulate, equilibrium, indices.
//! Each resolves the config, writes a canonical echo of it into the output
//! directory, and produces the command's files deterministically.

use crate::config::{make_initial, EquilibriumKinds, EquilibriumSource, RunConfig};
use crate::dynamics::{simulate_with, DiagRecord};
use crate::equilibrium::{solve_equilibrium, EquilibriumKind};
use crate::error::{Error, Result};
use crate::io;
use crate::lattice::Grid;
use crate::operator::Field;
use crate::regions::{decompose, local_invariants, LocalInvariants, RegionDecomposition};
use crate::resonance::{
    enumerate_triples, lipschitz_probe, mu_bound_check, mu_index, BroadeningKernel, CollisionKind,
    TriadKey, TriadTable,
};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub struct Prepared {
    pub grid: Grid,
    pub kernel: BroadeningKernel,
    pub table: TriadTable,
    pub decomp: RegionDecomposition,
}

/// Build grid, triad table (through the cache when configured) and the
/// region decomposition.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let grid = cfg.grid()?;
    let kernel = cfg.broadening_kernel();
    let key = TriadKey::new(&grid, &kernel, cfg.c_k);
    let table = match &cfg.cache_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = io::cache_path(dir, &key);
            let cached = if path.exists() {
                io::read_triad_cache(&path, &grid, &key).ok().flatten()
            } else {
                None
            };
            match cached {
                Some(table) => table,
                None => {
                    let table = enumerate_triples(&grid, &kernel, cfg.c_k)?;
                    io::write_triad_cache(&path, &table)?;
                    table
                }
            }
        }
        None => enumerate_triples(&grid, &kernel, cfg.c_k)?,
    };
    let decomp = decompose(&grid, &table);
    Ok(Prepared {
        grid,
        kernel,
        table,
        decomp,
    })
}

fn echo_config(cfg: &RunConfig, outdir: &Path) -> Result<()> {
    let mut resolved = cfg.clone();
    resolved.output_dir = Some(outdir.to_path_buf());
    io::write_json(&outdir.join("config.json"), &resolved)
}

#[derive(Serialize)]
struct DecomposeSummary {
    #[serde(flatten)]
    regions: io::RegionSummary,
    triad_count: usize,
    origin_label: u32,
}

/// Write region labels CSV and the summary JSON.
pub fn run_decompose(cfg: &RunConfig, outdir: &Path) -> Result<()> {
    let prep = prepare(cfg)?;
    std::fs::create_dir_all(outdir)?;
    echo_config(cfg, outdir)?;
    io::write_region_csv(&outdir.join("regions.csv"), &prep.grid, &prep.decomp)?;
    let summary = DecomposeSummary {
        regions: io::region_summary(&prep.grid, &prep.decomp),
        triad_count: prep.table.len(),
        origin_label: prep
            .decomp
            .label(prep.grid.node_index(crate::lattice::Wavevector::new(0, 0, 0))),
    };
    io::write_json(&outdir.join("region_summary.json"), &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct RegionComparison {
    region_id: u32,
    kind: EquilibriumKind,
    a: Option<f64>,
    b: Option<[f64; 3]>,
    initial_energy: f64,
    initial_momentum: [f64; 3],
    l1_initial: Option<f64>,
    l1_final: Option<f64>,
    f0_l1: f64,
    final_over_f0: Option<f64>,
    unique: Option<bool>,
    jacobian_condition: Option<f64>,
    error: Option<String>,
}

/// Integrate the configured initial data, streaming snapshots and
/// diagnostics, then compare the final state against the per-region
/// equilibria solved from the initial invariants.
pub fn run_simulate(cfg: &RunConfig, outdir: &Path) -> Result<()> {
    let prep = prepare(cfg)?;
    let f0 = make_initial(&prep.grid, &cfg.init, true)?;
    std::fs::create_dir_all(outdir)?;
    echo_config(cfg, outdir)?;
    let sim = cfg.sim.to_sim_config(Some(outdir.to_path_buf()))?;

    let mut diag_writer = io::DiagnosticsWriter::create(&outdir.join("diagnostics.jsonl"))?;
    let mut records: Vec<DiagRecord> = Vec::new();
    let mut final_field = f0.clone();
    {
        let records = &mut records;
        let final_field = &mut final_field;
        let grid = &prep.grid;
        let mut sink = |rec: &DiagRecord, f: &Field| -> Result<()> {
            let index = records.len();
            io::write_snapshot_csv(&outdir.join(format!("snapshot_{index:06}.csv")), grid, f)?;
            diag_writer.write(rec)?;
            records.push(rec.clone());
            *final_field = f.clone();
            Ok(())
        };
        simulate_with(&prep.grid, &prep.table, &prep.decomp, &f0, &sim, &mut sink)?;
    }
    diag_writer.flush()?;

    // final per-region comparison against equilibria from initial invariants
    let h3 = prep.grid.cell_volume();
    let mut comparisons = Vec::new();
    for region_id in prep.decomp.region_ids() {
        let nodes = prep.decomp.region_nodes(region_id)?;
        let inv = local_invariants(&prep.grid, &prep.decomp, region_id, &f0)?;
        let f0_l1: f64 = nodes.iter().map(|&i| h3 * f0.values()[i].abs()).sum();
        match solve_equilibrium(&prep.grid, &prep.decomp, region_id, &inv, EquilibriumKind::Classical)
        {
            Ok((params, report)) => {
                let l1 = |f: &Field| -> f64 {
                    nodes
                        .iter()
                        .map(|&i| h3 * (f.values()[i] - params.value(&prep.grid, i)).abs())
                        .sum()
                };
                let l1_initial = l1(&f0);
                let l1_final = l1(&final_field);
                comparisons.push(RegionComparison {
                    region_id,
                    kind: EquilibriumKind::Classical,
                    a: Some(params.a),
                    b: Some(params.b),
                    initial_energy: inv.energy,
                    initial_momentum: inv.momentum,
                    l1_initial: Some(l1_initial),
                    l1_final: Some(l1_final),
                    f0_l1,
                    final_over_f0: Some(l1_final / f0_l1.max(f64::MIN_POSITIVE)),
                    unique: Some(report.unique),
                    jacobian_condition: Some(report.jacobian_condition),
                    error: None,
                });
            }
            Err(e) => comparisons.push(RegionComparison {
                region_id,
                kind: EquilibriumKind::Classical,
                a: None,
                b: None,
                initial_energy: inv.energy,
                initial_momentum: inv.momentum,
                l1_initial: None,
                l1_final: None,
                f0_l1,
                final_over_f0: None,
                unique: None,
                jacobian_condition: None,
                error: Some(e.to_string()),
            }),
        }
    }
    io::write_json(&outdir.join("final_comparison.json"), &comparisons)?;
    Ok(())
}

#[derive(Serialize)]
struct EquilibriumRecord {
    region_id: u32,
    kind: EquilibriumKind,
    a: Option<f64>,
    b: Option<[f64; 3]>,
    energy: f64,
    momentum: [f64; 3],
    residual: Option<f64>,
    unique: Option<bool>,
    jacobian_condition: Option<f64>,
    continuity_ok: Option<bool>,
    error: Option<String>,
}

fn solve_into_record(
    grid: &Grid,
    decomp: &RegionDecomposition,
    inv: &LocalInvariants,
    kind: EquilibriumKind,
) -> EquilibriumRecord {
    match solve_equilibrium(grid, decomp, inv.region_id, inv, kind) {
        Ok((params, report)) => EquilibriumRecord {
            region_id: inv.region_id,
            kind,
            a: Some(params.a),
            b: Some(params.b),
            energy: inv.energy,
            momentum: inv.momentum,
            residual: Some(report.residual),
            unique: Some(report.unique),
            jacobian_condition: Some(report.jacobian_condition),
            continuity_ok: Some(report.continuity_ok),
            error: None,
        },
        Err(e) => EquilibriumRecord {
            region_id: inv.region_id,
            kind,
            a: None,
            b: None,
            energy: inv.energy,
            momentum: inv.momentum,
            residual: None,
            unique: None,
            jacobian_condition: None,
            continuity_ok: None,
            error: Some(e.to_string()),
        },
    }
}

/// Solve the 4-equation systems per region (classical and/or quantized) and
/// write the summary JSON. All results are computed before anything is
/// written, so a bad input produces no partial output.
pub fn run_equilibrium(cfg: &RunConfig, outdir: &Path) -> Result<()> {
    let prep = prepare(cfg)?;
    let kinds: Vec<EquilibriumKind> = match cfg.equilibrium.kind {
        EquilibriumKinds::Classical => vec![EquilibriumKind::Classical],
        EquilibriumKinds::Quantized => vec![EquilibriumKind::Quantized],
        EquilibriumKinds::Both => vec![EquilibriumKind::Classical, EquilibriumKind::Quantized],
    };
    let invariants: Vec<LocalInvariants> = match cfg.equilibrium.source {
        EquilibriumSource::Init => {
            let f = make_initial(&prep.grid, &cfg.init, false)?;
            prep.decomp
                .region_ids()
                .map(|r| local_invariants(&prep.grid, &prep.decomp, r, &f))
                .collect::<Result<_>>()?
        }
        EquilibriumSource::Explicit => {
            let region_id = cfg.equilibrium.region_id.ok_or_else(|| {
                Error::Config("equilibrium.source = explicit requires equilibrium.region_id".into())
            })?;
            let energy = cfg.equilibrium.energy.ok_or_else(|| {
                Error::Config("equilibrium.source = explicit requires equilibrium.energy".into())
            })?;
            prep.decomp.region_nodes(region_id)?;
            vec![LocalInvariants {
                region_id,
                energy,
                momentum: cfg.equilibrium.momentum.unwrap_or([0.0; 3]),
            }]
        }
    };
    let mut records = Vec::new();
    for inv in &invariants {
        for &kind in &kinds {
            records.push(solve_into_record(&prep.grid, &prep.decomp, inv, kind));
        }
    }
    std::fs::create_dir_all(outdir)?;
    echo_config(cfg, outdir)?;
    io::write_json(&outdir.join("equilibrium.json"), &records)?;
    Ok(())
}

#[derive(Serialize)]
struct IndicesSummary {
    points: usize,
    max_mu1: f64,
    max_mu2: f64,
    max_mu3: f64,
    max_ratio_mu3: f64,
    max_lipschitz_quotient: f64,
}

/// Sweep the index functionals over interior nodes and write per-point CSV
/// plus a summary JSON. The sweep does not need the triad table.
pub fn run_indices(cfg: &RunConfig, outdir: &Path) -> Result<()> {
    let grid = cfg.grid()?;
    let kernel = cfg.broadening_kernel();
    kernel.validate_margin(&grid)?;
    let interior: Vec<usize> = (0..grid.node_count())
        .filter(|&i| !grid.on_edge(grid.node_at(i)))
        .collect();
    let max_points = cfg.indices.max_points.max(1);
    let stride = (interior.len() + max_points - 1) / max_points.min(interior.len()).max(1);
    let sweep: Vec<usize> = interior.iter().cloned().step_by(stride.max(1)).collect();
    let all: Vec<usize> = (0..grid.node_count()).collect();

    std::fs::create_dir_all(outdir)?;
    echo_config(cfg, outdir)?;
    use std::io::Write;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(outdir.join("indices.csv"))?);
    writeln!(csv, "ix,iy,iz,mu1,mu2,mu3,bound,ratio3")?;
    let mut summary = IndicesSummary {
        points: sweep.len(),
        max_mu1: 0.0,
        max_mu2: 0.0,
        max_mu3: 0.0,
        max_ratio_mu3: 0.0,
        max_lipschitz_quotient: 0.0,
    };
    for &idx in &sweep {
        let x = grid.node_at(idx);
        let mu1 = mu_index(&grid, &kernel, CollisionKind::Forward, &all, x);
        let mu2 = mu_index(&grid, &kernel, CollisionKind::Backward, &all, x);
        let report = mu_bound_check(&grid, &kernel, x)?;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            x.ix, x.iy, x.iz, mu1, mu2, report.mu3_value, report.bound_value, report.ratio
        )?;
        summary.max_mu1 = summary.max_mu1.max(mu1);
        summary.max_mu2 = summary.max_mu2.max(mu2);
        summary.max_mu3 = summary.max_mu3.max(report.mu3_value);
        summary.max_ratio_mu3 = summary.max_ratio_mu3.max(report.ratio);
        // neighbor probe along z when the neighbor is interior
        let neighbor = grid.add(x, crate::lattice::Wavevector::new(0, 0, 1));
        if !grid.on_edge(neighbor) {
            for which in [CollisionKind::Forward, CollisionKind::Backward, CollisionKind::Central] {
                let q = lipschitz_probe(&grid, &kernel, which, x, neighbor)?;
                summary.max_lipschitz_quotient = summary.max_lipschitz_quotient.max(q);
            }
        }
    }
    csv.flush()?;
    io::write_json(&outdir.join("indices_summary.json"), &summary)?;
    Ok(())
}

/// Resolve the output directory: CLI flag wins, config entry otherwise.
pub fn resolve_outdir(cfg: &RunConfig, cli_output: Option<&Path>) -> Result<PathBuf> {
    match cli_output {
        Some(p) => Ok(p.to_path_buf()),
        None => cfg
            .output_dir
            .clone()
            .ok_or_else(|| Error::Config("no output directory (pass --output or set output_dir)".into())),
    }
}
