//! Binary model container and the offline dataset text format.
//!
//! Head record, all little-endian:
//!
//! ```text
//! magic "NPGP", version u32, M u32, D u32 (= 9), lambda f64,
//! lengthscales f64 x D, sigma_f^2 f64, sigma_eps^2 f64,
//! Z_u f64 x (M*D), m_u f64 x M, S_u f64 x (M*M)     (row-major)
//! ```
//!
//! A residual model file is three head records for `(v, beta, r)` in order.

use std::io::{BufRead, Read, Write};

use nalgebra::{DMatrix, DVector};

use super::{GpError, Input, KernelHyper, ResidualModel, SparseGpHead};
use crate::dynamics::GP_INPUT_DIM;

pub const GP_MAGIC: [u8; 4] = *b"NPGP";
pub const GP_VERSION: u32 = 1;

pub fn write_head<W: Write>(head: &SparseGpHead, out: &mut W) -> Result<(), GpError> {
    let m = head.num_inducing();
    let mut buf = Vec::with_capacity(16 + 8 * (12 + m * (GP_INPUT_DIM + 1 + m)));
    buf.extend_from_slice(&GP_MAGIC);
    buf.extend_from_slice(&GP_VERSION.to_le_bytes());
    let m32 = u32::try_from(m).map_err(|_| GpError::Format("too many inducing points".into()))?;
    buf.extend_from_slice(&m32.to_le_bytes());
    buf.extend_from_slice(&(GP_INPUT_DIM as u32).to_le_bytes());
    let hyper = head.hyper();
    let scalars = std::iter::once(head.forgetting())
        .chain(hyper.lengthscales.iter().copied())
        .chain([hyper.signal_var, hyper.noise_var])
        .chain(head.inducing().iter().flatten().copied())
        .chain(head.mean().iter().copied())
        .chain((0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| head.cov()[(i, j)]));
    for v in scalars {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_exact_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>, GpError> {
    let mut bytes = vec![0u8; n * 8];
    input.read_exact(&mut bytes).map_err(truncated)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn truncated(e: std::io::Error) -> GpError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        GpError::Format("truncated model data".into())
    } else {
        GpError::Io(e)
    }
}

pub fn read_head<R: Read>(input: &mut R) -> Result<SparseGpHead, GpError> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header).map_err(truncated)?;
    if header[0..4] != GP_MAGIC {
        return Err(GpError::Format("bad magic".into()));
    }
    let word = |k: usize| u32::from_le_bytes(header[4 * k..4 * k + 4].try_into().unwrap());
    if word(1) != GP_VERSION {
        return Err(GpError::Format(format!("unsupported version {}", word(1))));
    }
    let m = word(2) as usize;
    if word(3) as usize != GP_INPUT_DIM {
        return Err(GpError::Format(format!("input dimension {} is not 9", word(3))));
    }
    if m == 0 || m > 100_000 {
        return Err(GpError::Format(format!("implausible inducing count {m}")));
    }
    let head = read_exact_f64s(input, 1 + GP_INPUT_DIM + 2)?;
    let hyper = KernelHyper {
        lengthscales: std::array::from_fn(|d| head[1 + d]),
        signal_var: head[1 + GP_INPUT_DIM],
        noise_var: head[2 + GP_INPUT_DIM],
    };
    let z = read_exact_f64s(input, m * GP_INPUT_DIM)?;
    let inducing: Vec<Input> = z
        .chunks_exact(GP_INPUT_DIM)
        .map(|c| c.try_into().unwrap())
        .collect();
    let mean = DVector::from_vec(read_exact_f64s(input, m)?);
    let cov = DMatrix::from_row_slice(m, m, &read_exact_f64s(input, m * m)?);
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(GpError::Format("non-finite posterior".into()));
    }
    SparseGpHead::from_parts(inducing, mean, cov, hyper, head[0])
}

pub fn write_model<W: Write>(model: &ResidualModel, mut out: W) -> Result<(), GpError> {
    for head in model.heads() {
        write_head(head, &mut out)?;
    }
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<ResidualModel, GpError> {
    let heads = [
        read_head(&mut input)?,
        read_head(&mut input)?,
        read_head(&mut input)?,
    ];
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(GpError::Format("trailing bytes after three heads".into()));
    }
    ResidualModel::new(heads)
}

/// Writes `(xi, y)` rows as 12 whitespace-separated values.
pub fn write_dataset<W: Write>(rows: &[(Input, [f64; 3])], mut out: W) -> Result<(), GpError> {
    writeln!(
        out,
        "# psi delta v beta r a v_delta alpha gamma dv dbeta dr"
    )?;
    for (z, y) in rows {
        let line: Vec<String> = z.iter().chain(y.iter()).map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<(Input, [f64; 3])>, GpError> {
    let mut rows = Vec::new();
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
            .map_err(|e| GpError::Format(format!("line {}: {e}", lineno + 1)))?;
        if values.len() != GP_INPUT_DIM + 3 {
            return Err(GpError::Format(format!(
                "line {}: expected 12 values, found {}",
                lineno + 1,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GpError::Format(format!("line {}: non-finite value", lineno + 1)));
        }
        rows.push((
            std::array::from_fn(|d| values[d]),
            [values[9], values[10], values[11]],
        ));
    }
    Ok(rows)
}
