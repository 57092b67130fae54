//! CSV artifact writers and readers.
//!
//! Every float is serialized with 17 significant digits, `.` decimal
//! separator, and `\n` line endings, so files round-trip bit-exactly.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::theta::ThetaParticle;
use crate::trps::SpatialGrid;

/// 17-significant-digit scientific notation.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a CSV with the given comma-joined header and numeric rows.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|x| fmt_g17(*x)).collect();
        w.write_all(line.join(",").as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Particle snapshot: `id,x1,x2,x3,p1,p2,p3,s1,s2,s3,m`.
pub fn write_snapshot_csv(path: &Path, particles: &[ThetaParticle]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"id,x1,x2,x3,p1,p2,p3,s1,s2,s3,m\n")?;
    for (id, p) in particles.iter().enumerate() {
        let mut fields = vec![id.to_string()];
        for v in [p.x, p.p, p.s] {
            for k in 0..3 {
                fields.push(fmt_g17(v[k]));
            }
        }
        fields.push(fmt_g17(p.m));
        w.write_all(fields.join(",").as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads a particle snapshot written by [`write_snapshot_csv`].
pub fn read_snapshot_csv(path: &Path) -> io::Result<Vec<ThetaParticle>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != "id,x1,x2,x3,p1,p2,p3,s1,s2,s3,m" {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected snapshot header: {header}"),
        ));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("bad snapshot row: {line}"),
            ));
        }
        let parse = |s: &str| -> io::Result<f64> {
            s.parse()
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{e}: {s}")))
        };
        let mut v = [0.0; 10];
        for (slot, field) in v.iter_mut().zip(&fields[1..]) {
            *slot = parse(field)?;
        }
        out.push(ThetaParticle {
            x: [v[0], v[1], v[2]],
            p: [v[3], v[4], v[5]],
            s: [v[6], v[7], v[8]],
            m: v[9],
        });
    }
    Ok(out)
}

/// Scalar field over grid nodes: `x1,x2,x3,value`.
pub fn write_field_csv(path: &Path, grid: &SpatialGrid, values: &[f64]) -> io::Result<()> {
    if values.len() != grid.len() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "field length does not match grid",
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"x1,x2,x3,value\n")?;
    for (node, value) in grid.nodes().iter().zip(values) {
        let line = format!(
            "{},{},{},{}\n",
            fmt_g17(node[0]),
            fmt_g17(node[1]),
            fmt_g17(node[2]),
            fmt_g17(*value)
        );
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

/// Reads back a numeric CSV (header line returned separately).
pub fn read_csv(path: &Path) -> io::Result<(String, Vec<Vec<f64>>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
        rows.push(row.map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{e} in {line}"))
        })?);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips_17_digits() {
        for &x in &[1.0 / 3.0, -2.718281828459045e-7, 6944.444444444444, 0.0] {
            let s = fmt_g17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.csv");
        let particles = vec![
            ThetaParticle {
                x: [0.1, -0.2, 0.3],
                p: [1.0 / 3.0, 0.0, -7.5],
                s: [0.0, 0.0, 1.0],
                m: 1.25,
            },
            ThetaParticle {
                x: [5e-12, 2.0, -1.0],
                p: [0.0, 0.1, 0.0],
                s: [1.0, 0.0, 0.0],
                m: 0.5,
            },
        ];
        write_snapshot_csv(&path, &particles).unwrap();
        let back = read_snapshot_csv(&path).unwrap();
        assert_eq!(particles, back);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![vec![1.0, 2.5], vec![-0.125, 1e300]];
        write_csv(&path, "a,b", &rows).unwrap();
        let (header, back) = read_csv(&path).unwrap();
        assert_eq!(header, "a,b");
        assert_eq!(rows, back);
    }
}
