//! Grid-function containers.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! magic   b"NDGF"
//! version u32 (= 1)
//! dim     u32
//! rank    u32        0 scalar, 1 vector, 2 matrix
//! axes    dim × { n: u64, lo: f64, hi: f64, periodic: u8 }
//! payload components × nodes × { re: f64, im: f64 }
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use super::{Axis, BoxGrid, GridFunction, Rank, C64};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NDGF";
const VERSION: u32 = 1;

fn rank_code(r: Rank) -> u32 {
    match r {
        Rank::Scalar => 0,
        Rank::Vector => 1,
        Rank::Matrix => 2,
    }
}

pub fn write_binary<W: Write>(u: &GridFunction, mut w: W) -> Result<()> {
    let grid = u.grid();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    w.write_all(&rank_code(u.rank()).to_le_bytes())?;
    for a in grid.axes() {
        w.write_all(&(a.n as u64).to_le_bytes())?;
        w.write_all(&a.lo.to_le_bytes())?;
        w.write_all(&a.hi.to_le_bytes())?;
        w.write_all(&[a.periodic as u8])?;
    }
    let mut buf = Vec::with_capacity(16 * grid.len());
    for comp in u.components() {
        buf.clear();
        for v in comp {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated file: {e}")))?;
    Ok(b)
}

pub fn read_binary<R: Read>(mut r: R) -> Result<GridFunction> {
    if &read_array::<4, _>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let rank = match u32::from_le_bytes(read_array(&mut r)?) {
        0 => Rank::Scalar,
        1 => Rank::Vector,
        2 => Rank::Matrix,
        other => return Err(Error::Format(format!("unknown rank code {other}"))),
    };
    if !(1..=8).contains(&dim) {
        return Err(Error::Format(format!("implausible dimension {dim}")));
    }
    let mut axes = Vec::with_capacity(dim);
    for _ in 0..dim {
        let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let lo = f64::from_le_bytes(read_array(&mut r)?);
        let hi = f64::from_le_bytes(read_array(&mut r)?);
        let periodic = read_array::<1, _>(&mut r)?[0] != 0;
        axes.push(Axis::new(lo, hi, n, periodic).map_err(|e| Error::Format(e.to_string()))?);
    }
    let grid = if dim == 1 {
        // trace grids are written with a single axis
        let host = BoxGrid::new(vec![Axis::new(0.0, 1.0, 4, false)?, axes[0].clone()])?;
        host.trace()
    } else {
        BoxGrid::new(axes)?
    };
    let mut comps = Vec::new();
    let mut raw = vec![0u8; 16 * grid.len()];
    for _ in 0..rank.components(dim) {
        r.read_exact(&mut raw).map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
        comps.push(
            raw.chunks_exact(16)
                .map(|c| {
                    C64::new(
                        f64::from_le_bytes(c[..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect(),
        );
    }
    GridFunction::new(Arc::new(grid), rank, comps)
}

/// CSV dump for grids of dimension ≤ 2: one row per node with coordinates
/// followed by real/imaginary parts of every component.
pub fn write_csv<W: Write>(u: &GridFunction, w: W) -> Result<()> {
    let grid = u.grid();
    if grid.dim() > 2 {
        return Err(Error::invalid(format!("CSV output supports d <= 2, got d = {}", grid.dim())));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=grid.dim()).map(|i| format!("x{i}")).collect();
    if u.rank() == Rank::Scalar {
        header.extend(["re".to_string(), "im".to_string()]);
    } else {
        for c in 0..u.components().len() {
            header.push(format!("c{c}_re"));
            header.push(format!("c{c}_im"));
        }
    }
    out.write_record(&header)?;
    for i in 0..grid.len() {
        let mut row: Vec<String> = grid.point(i).iter().map(|x| format!("{x:.17e}")).collect();
        for comp in u.components() {
            row.push(format!("{:.17e}", comp[i].re));
            row.push(format!("{:.17e}", comp[i].im));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
