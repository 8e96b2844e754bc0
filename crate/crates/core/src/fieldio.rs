//! Displacement field files.
//!
//! Binary layout, little endian: `d, n, S` as u32, the window radius as f64,
//! the site count as u64 and the `d × d` cell row by row as f64. Each site
//! then stores its lattice coordinates (`d` values) followed by its `S·n`
//! displacement values, all f64. Only interior sites are written.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::energy::DisplacementField;
use crate::error::{Error, Result};
use crate::lattice::{InteractionRange, LatticeWindow, Multilattice, Topology};

const MAGIC: &[u8; 4] = b"MLF1";

pub fn write_binary(u: &DisplacementField, lattice: &Multilattice, path: &Path) -> Result<()> {
    let w = u.window();
    let radius = match w.topology() {
        Topology::Ball { radius } => radius,
        Topology::Periodic { .. } => return Err(Error::Invalid("only ball windows can be written".into())),
    };
    let d = lattice.d();
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    for v in [d as u32, u.n() as u32, u.species() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&radius.to_le_bytes())?;
    out.write_all(&(w.interior_len() as u64).to_le_bytes())?;
    for i in 0..d {
        for j in 0..d {
            out.write_all(&lattice.cell()[(i, j)].to_le_bytes())?;
        }
    }
    for site in 0..w.interior_len() {
        let z = w.site(site);
        for &c in &z[..d] {
            out.write_all(&(c as f64).to_le_bytes())?;
        }
        for &v in u.site_values(site) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Read a field written by [`write_binary`] onto a fresh ball window of the
/// given crystal. The stored cell must match the lattice.
pub fn read_binary(path: &Path, lattice: &Multilattice, range: &InteractionRange) -> Result<DisplacementField> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Invalid("not a displacement field file".into()));
    }
    let d = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    let s = read_u32(&mut r)? as usize;
    if d != lattice.d() || n != lattice.n() || s != lattice.species() {
        return Err(Error::Invalid(format!(
            "field has (d, n, S) = ({d}, {n}, {s}), crystal has ({}, {}, {})",
            lattice.d(),
            lattice.n(),
            lattice.species()
        )));
    }
    let radius = read_f64(&mut r)?;
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let count = u64::from_le_bytes(b) as usize;
    for i in 0..d {
        for j in 0..d {
            let f = read_f64(&mut r)?;
            if (f - lattice.cell()[(i, j)]).abs() > 1e-9 {
                return Err(Error::Invalid("stored cell does not match the crystal".into()));
            }
        }
    }
    let window = Arc::new(LatticeWindow::ball(lattice, range, radius)?);
    if window.interior_len() != count {
        return Err(Error::SizeMismatch { expected: window.interior_len(), got: count });
    }
    let mut u = DisplacementField::zeros(window.clone(), s, n);
    for _ in 0..count {
        let mut z = [0i64; 3];
        for c in z.iter_mut().take(d) {
            *c = read_f64(&mut r)?.round() as i64;
        }
        let site =
            window.index_of(z).filter(|&i| window.is_interior(i)).ok_or(Error::OutsideWindow(z[..d].to_vec()))?;
        for k in 0..s * n {
            let v = read_f64(&mut r)?;
            u.values_mut()[site * s * n + k] = v;
        }
    }
    Ok(u)
}

/// One row per interior site: coordinates, position, radius, then values.
pub fn write_csv(u: &DisplacementField, lattice: &Multilattice, path: &Path) -> Result<()> {
    let d = lattice.d();
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    let mut header: Vec<String> = (0..d).map(|i| format!("z{i}")).collect();
    header.extend((0..d).map(|i| format!("x{i}")));
    header.push("r".into());
    for a in 0..u.species() {
        for i in 0..u.n() {
            header.push(format!("u{a}_{i}"));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    let w = u.window();
    for site in 0..w.interior_len() {
        let z = w.site(site);
        let mut row: Vec<String> = z[..d].iter().map(|c| c.to_string()).collect();
        row.extend(lattice.position(z).iter().map(|x| format!("{x:.12e}")));
        row.push(format!("{:.12e}", w.radius(site)));
        row.extend(u.site_values(site).iter().map(|v| format!("{v:.17e}")));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Count the data rows of a CSV field file.
pub fn csv_rows(path: &Path) -> Result<usize> {
    let r = BufReader::new(std::fs::File::open(path)?);
    Ok(r.lines().skip(1).filter(|l| l.as_ref().map(|s| !s.is_empty()).unwrap_or(false)).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::BondTriplet;

    #[test]
    fn binary_round_trip() {
        let l = Multilattice::new(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![0.0, 0.0]], 2).unwrap();
        let ts: Vec<BondTriplet> =
            [[1, 0], [-1, 0], [0, 1], [0, -1]].iter().map(|r| BondTriplet::new([r[0], r[1], 0], 0, 0)).collect();
        let range = InteractionRange::validate(&l, &ts).unwrap();
        let w = Arc::new(LatticeWindow::ball(&l, &range, 4.5).unwrap());
        let u = DisplacementField::from_fn(w, 1, 2, |z, _, i| (z[0] * 3 + z[1]) as f64 + 0.25 * i as f64);
        let dir = std::env::temp_dir().join(format!("mlf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("u.bin");
        write_binary(&u, &l, &p).unwrap();
        let v = read_binary(&p, &l, &range).unwrap();
        assert_eq!(u.values(), v.values());
        let c = dir.join("u.csv");
        write_csv(&u, &l, &c).unwrap();
        assert_eq!(csv_rows(&c).unwrap(), u.window().interior_len());
        std::fs::remove_dir_all(&dir).ok();
    }
}
