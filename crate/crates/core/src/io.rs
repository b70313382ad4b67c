//! Field binary serialization and CSV formatting.
//!
//! Fields serialize to a flat little-endian stream of 64-bit floats behind
//! a fixed 32-byte header (d, N, L, m). Floats in CSV artifacts carry 17
//! significant digits so reruns diff bytewise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{Field, LatticeConfig, SymbolMode};

/// 17-significant-digit float formatting (round-trips f64 exactly).
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    let lat = field.lattice();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(lat.d() as u64).to_le_bytes())?;
    w.write_all(&(lat.n() as u64).to_le_bytes())?;
    w.write_all(&lat.side_length().to_le_bytes())?;
    w.write_all(&lat.mass().to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<Field> {
    let mut r = BufReader::new(File::open(path)?);
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let d = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf)?;
    let l = f64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    let m = f64::from_le_bytes(u64buf);
    let lat = LatticeConfig::new(d, n, l, m, SymbolMode::DiscreteLaplacian)
        .map_err(|e| Error::MalformedField(e.to_string()))?;
    let mut values = Vec::with_capacity(lat.site_count());
    for _ in 0..lat.site_count() {
        r.read_exact(&mut u64buf)?;
        values.push(f64::from_le_bytes(u64buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::MalformedField("trailing bytes after values".into()));
    }
    Field::new(lat, values)
}

/// Writes a CSV with a fixed column order; cells are preformatted strings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
