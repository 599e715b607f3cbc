//! File formats: snapshot CSV, region CSV and summary JSON, diagnostics
//! JSON-lines, and the triad cache.
//!
//! Floats are serialized with the shortest representation that round-trips,
//! so identical runs produce byte-identical files and cache reads recover
//! exact bits.

use crate::dynamics::DiagRecord;
use crate::error::{Error, Result};
use crate::lattice::Grid;
use crate::operator::Field;
use crate::regions::RegionDecomposition;
use crate::resonance::{ResonanceTriple, TriadKey, TriadTable};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Snapshot CSV with header `ix,iy,iz,f`, rows in dense node order.
pub fn write_snapshot_csv(path: &Path, grid: &Grid, f: &Field) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ix,iy,iz,f")?;
    for idx in 0..grid.node_count() {
        let k = grid.node_at(idx);
        writeln!(w, "{},{},{},{}", k.ix, k.iy, k.iz, f.values()[idx])?;
    }
    Ok(())
}

/// Parse a snapshot CSV; every node must appear exactly once.
pub fn read_snapshot_csv(path: &Path, grid: &Grid) -> Result<Field> {
    let show = || path.display().to_string();
    let malformed = |reason: String| Error::Malformed {
        path: show(),
        reason,
    };
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "ix,iy,iz,f" => {}
        Some(Ok(h)) => return Err(malformed(format!("unexpected header {h:?}"))),
        _ => return Err(malformed("missing header".into())),
    }
    let mut values = vec![f64::NAN; grid.node_count()];
    let mut seen = vec![false; grid.node_count()];
    let d = grid.half_width();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(malformed(format!("line {}: expected 4 columns", lineno + 2)));
        }
        let parse_i = |s: &str| -> Result<i32> {
            s.trim()
                .parse()
                .map_err(|_| malformed(format!("line {}: bad index {s:?}", lineno + 2)))
        };
        let (ix, iy, iz) = (parse_i(parts[0])?, parse_i(parts[1])?, parse_i(parts[2])?);
        if ix.abs() > d || iy.abs() > d || iz.abs() > d {
            return Err(malformed(format!(
                "line {}: index ({ix},{iy},{iz}) outside [-{d},{d}]",
                lineno + 2
            )));
        }
        let v: f64 = parts[3]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("line {}: bad value {:?}", lineno + 2, parts[3])))?;
        let idx = grid.node_index(crate::lattice::Wavevector::new(ix, iy, iz));
        if seen[idx] {
            return Err(malformed(format!("line {}: duplicate node", lineno + 2)));
        }
        seen[idx] = true;
        values[idx] = v;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        let k = grid.node_at(missing);
        return Err(malformed(format!(
            "node ({},{},{}) missing",
            k.ix, k.iy, k.iz
        )));
    }
    Ok(Field::from_values(values))
}

/// Region labels CSV with columns ix,iy,iz,kx,ky,kz,omega,label.
pub fn write_region_csv(path: &Path, grid: &Grid, decomp: &RegionDecomposition) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ix,iy,iz,kx,ky,kz,omega,label")?;
    for idx in 0..grid.node_count() {
        let k = grid.node_at(idx);
        let c = grid.coords(k);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            k.ix,
            k.iy,
            k.iz,
            c[0],
            c[1],
            c[2],
            grid.omega_by_index(idx),
            decomp.label(idx)
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
pub struct RegionSummary {
    pub node_count: usize,
    pub region_count: usize,
    pub no_collision_count: usize,
    pub region_sizes: Vec<usize>,
    pub region_measures: Vec<f64>,
}

pub fn region_summary(grid: &Grid, decomp: &RegionDecomposition) -> RegionSummary {
    RegionSummary {
        node_count: grid.node_count(),
        region_count: decomp.region_count(),
        no_collision_count: decomp.no_collision_count(),
        region_sizes: decomp
            .region_ids()
            .map(|r| decomp.region_nodes(r).unwrap().len())
            .collect(),
        region_measures: decomp
            .region_ids()
            .map(|r| decomp.region_measure(r).unwrap())
            .collect(),
    }
}

/// One JSON object per line per recorded time.
pub struct DiagnosticsWriter {
    w: BufWriter<File>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(DiagnosticsWriter {
            w: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, rec: &DiagRecord) -> Result<()> {
        serde_json::to_writer(&mut self.w, rec)?;
        self.w.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

const CACHE_MAGIC: &str = "# wavekin triad cache v1";

/// Stable file name for a cache key.
pub fn cache_file_name(key: &TriadKey) -> String {
    let digest = Sha256::digest(key.canonical().as_bytes());
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("triads_{hex}.csv")
}

pub fn cache_path(dir: &Path, key: &TriadKey) -> PathBuf {
    dir.join(cache_file_name(key))
}

/// CSV cache: 9 index columns, weight, kernel_factor; the key is carried in
/// a header comment and compared bit-exactly on load.
pub fn write_triad_cache(path: &Path, table: &TriadTable) -> Result<()> {
    let key = table.key().ok_or_else(|| {
        Error::Config("cannot cache a hand-built triad table without a key".into())
    })?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CACHE_MAGIC}")?;
    writeln!(w, "# key {}", key.canonical())?;
    writeln!(w, "ix,iy,iz,ix1,iy1,iz1,ix2,iy2,iz2,weight,kernel_factor")?;
    for t in table.triples() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            t.k.ix,
            t.k.iy,
            t.k.iz,
            t.k1.ix,
            t.k1.iy,
            t.k1.iz,
            t.k2.ix,
            t.k2.iy,
            t.k2.iz,
            t.weight,
            t.kernel_factor
        )?;
    }
    Ok(())
}

/// Load a cache file; Ok(None) signals a key mismatch (stale cache).
pub fn read_triad_cache(path: &Path, grid: &Grid, expect: &TriadKey) -> Result<Option<TriadTable>> {
    let show = || path.display().to_string();
    let malformed = |reason: String| Error::Malformed {
        path: show(),
        reason,
    };
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(l)) if l == CACHE_MAGIC => {}
        _ => return Err(malformed("bad magic line".into())),
    }
    match lines.next() {
        Some(Ok(l)) if l.starts_with("# key ") => {
            if l["# key ".len()..] != expect.canonical() {
                return Ok(None);
            }
        }
        _ => return Err(malformed("missing key line".into())),
    }
    match lines.next() {
        Some(Ok(l)) if l == "ix,iy,iz,ix1,iy1,iz1,ix2,iy2,iz2,weight,kernel_factor" => {}
        _ => return Err(malformed("missing column header".into())),
    }
    let mut triples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 11 {
            return Err(malformed(format!("line {}: expected 11 columns", lineno + 4)));
        }
        let idx = |s: &str| -> Result<i32> {
            s.parse()
                .map_err(|_| malformed(format!("line {}: bad index {s:?}", lineno + 4)))
        };
        let val = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| malformed(format!("line {}: bad float {s:?}", lineno + 4)))
        };
        triples.push(ResonanceTriple {
            k: crate::lattice::Wavevector::new(idx(parts[0])?, idx(parts[1])?, idx(parts[2])?),
            k1: crate::lattice::Wavevector::new(idx(parts[3])?, idx(parts[4])?, idx(parts[5])?),
            k2: crate::lattice::Wavevector::new(idx(parts[6])?, idx(parts[7])?, idx(parts[8])?),
            weight: val(parts[9])?,
            kernel_factor: val(parts[10])?,
        });
    }
    Ok(Some(TriadTable::from_triples(grid, triples, Some(*expect))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resonance::{enumerate_triples, BroadeningKernel};

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(2, 2.5).unwrap();
        let mut s = 3u64;
        let f = Field::from_fn(&grid, |_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        });
        let path = dir.path().join("snap.csv");
        write_snapshot_csv(&path, &grid, &f).unwrap();
        let g = read_snapshot_csv(&path, &grid).unwrap();
        for i in 0..grid.node_count() {
            assert_eq!(f.values()[i].to_bits(), g.values()[i].to_bits());
        }
    }

    #[test]
    fn snapshot_rejects_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(1, 2.5).unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "ix,iy,iz,f\n0,0,0,1.0\n").unwrap();
        assert!(read_snapshot_csv(&path, &grid).is_err()); // missing nodes
        std::fs::write(&path, "wrong\n").unwrap();
        assert!(read_snapshot_csv(&path, &grid).is_err());
    }

    #[test]
    fn triad_cache_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(3, 2.5).unwrap();
        let kernel = BroadeningKernel::gaussian(0.12);
        let table = enumerate_triples(&grid, &kernel, 1.0).unwrap();
        let key = *table.key().unwrap();
        let path = cache_path(dir.path(), &key);
        write_triad_cache(&path, &table).unwrap();
        let loaded = read_triad_cache(&path, &grid, &key).unwrap().unwrap();
        assert_eq!(loaded.len(), table.len());
        for (a, b) in loaded.triples().iter().zip(table.triples()) {
            assert_eq!((a.k, a.k1, a.k2), (b.k, b.k1, b.k2));
            assert_eq!(a.weight.to_bits(), b.weight.to_bits());
            assert_eq!(a.kernel_factor.to_bits(), b.kernel_factor.to_bits());
        }
        // stale key detected by content, not timestamp
        let other_kernel = BroadeningKernel::gaussian(0.13);
        let other_key = crate::resonance::TriadKey::new(&grid, &other_kernel, 1.0);
        assert!(read_triad_cache(&path, &grid, &other_key).unwrap().is_none());
    }
}
