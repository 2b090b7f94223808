//! Terrain container and point-cloud text ingestion.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! 0   magic "NPTG"
//! 4   version u32
//! 8   origin f64 x2
//! 24  spacing f64 x2
//! 40  dims u32 x2        (nodes along x, nodes along y)
//! 48  reserved, zero     (pads the header to 64 bytes)
//! 64  height, n_x, n_y, n_z: f64 arrays, row-major with x index as row
//! ```
//!
//! Slope and orientation are recomputed on load. The extrapolation mask is
//! not stored.

use std::io::{BufRead, Read, Write};

use super::{OrientedPoint, TerrainError, TerrainGrid};

pub const TERRAIN_MAGIC: [u8; 4] = *b"NPTG";
pub const TERRAIN_VERSION: u32 = 1;
const HEADER_LEN: usize = 64;

pub fn write_terrain<W: Write>(grid: &TerrainGrid, mut out: W) -> Result<(), TerrainError> {
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&TERRAIN_MAGIC);
    header[4..8].copy_from_slice(&TERRAIN_VERSION.to_le_bytes());
    let [ox, oy] = grid.origin();
    let [sx, sy] = grid.spacing();
    for (k, v) in [ox, oy, sx, sy].iter().enumerate() {
        header[8 + 8 * k..16 + 8 * k].copy_from_slice(&v.to_le_bytes());
    }
    let [nx, ny] = grid.dims();
    let nx = u32::try_from(nx).map_err(|_| TerrainError::Format("grid too large".into()))?;
    let ny = u32::try_from(ny).map_err(|_| TerrainError::Format("grid too large".into()))?;
    header[40..44].copy_from_slice(&nx.to_le_bytes());
    header[44..48].copy_from_slice(&ny.to_le_bytes());
    out.write_all(&header)?;

    let mut buf = Vec::with_capacity(grid.heights().len() * 32);
    buf.extend(grid.heights().iter().flat_map(|v| v.to_le_bytes()));
    for c in 0..3 {
        buf.extend(grid.normals().iter().flat_map(|n| n[c].to_le_bytes()));
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_terrain<R: Read>(mut input: R) -> Result<TerrainGrid, TerrainError> {
    let mut header = [0u8; HEADER_LEN];
    input.read_exact(&mut header)?;
    if header[0..4] != TERRAIN_MAGIC {
        return Err(TerrainError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != TERRAIN_VERSION {
        return Err(TerrainError::Format(format!("unsupported version {version}")));
    }
    let f = |k: usize| f64::from_le_bytes(header[8 + 8 * k..16 + 8 * k].try_into().unwrap());
    let origin = [f(0), f(1)];
    let spacing = [f(2), f(3)];
    let nx = u32::from_le_bytes(header[40..44].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(header[44..48].try_into().unwrap()) as usize;
    let count = nx
        .checked_mul(ny)
        .ok_or_else(|| TerrainError::Format("dims overflow".into()))?;

    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != count * 32 {
        return Err(TerrainError::Format(format!(
            "expected {} payload bytes, found {}",
            count * 32,
            body.len()
        )));
    }
    let array = |k: usize| -> Vec<f64> {
        body[k * count * 8..(k + 1) * count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let height = array(0);
    let (nxs, nys, nzs) = (array(1), array(2), array(3));
    let normal = (0..count).map(|k| [nxs[k], nys[k], nzs[k]]).collect();
    TerrainGrid::from_fields(origin, spacing, [nx, ny], height, normal, None)
}

/// Parses rows of `x y z nx ny nz`; blank lines and `#` comments are skipped.
pub fn read_point_cloud<R: BufRead>(input: R) -> Result<Vec<OrientedPoint>, TerrainError> {
    let mut points = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let values: Vec<f64> = content
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| TerrainError::Format(format!("line {}: {e}", lineno + 1)))?;
        if values.len() != 6 {
            return Err(TerrainError::Format(format!(
                "line {}: expected 6 values, found {}",
                lineno + 1,
                values.len()
            )));
        }
        points.push(OrientedPoint::new(
            [values[0], values[1], values[2]],
            [values[3], values[4], values[5]],
        )?);
    }
    Ok(points)
}
