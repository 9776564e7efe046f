//! File formats.
//!
//! T3F is the binary tensor format: a 16-byte header (`T3F\0` magic,
//! little-endian `u32` version, 8 reserved zero bytes), three `u64`
//! little-endian dims, then `I1*I2*I3` little-endian `f64` values with the
//! mode-1 index fastest. Matrices travel either as headerless CSV (one row
//! per line) or as T3F with `I3 = 1` (columns become the mode-2 index, so
//! the payload is column-major).

use crate::basis::BasisKind;
use crate::error::{Error, Result};
use crate::hetero::VarianceModel;
use crate::regress::{FitResult, TuningRecord};
use crate::tensor::{Matrix, Tensor3};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"T3F\0";
const VERSION: u32 = 1;

pub fn write_t3f(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_all(&[0u8; 8])?;
    let (i1, i2, i3) = t.dims();
    for d in [i1, i2, i3] {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for v in t.data() {
        w.write_f64::<LittleEndian>(*v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_t3f(path: impl AsRef<Path>) -> Result<Tensor3> {
    let mut r = BufReader::new(std::fs::File::open(&path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a T3F file (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported T3F version {version}")));
    }
    let mut reserved = [0u8; 8];
    r.read_exact(&mut reserved)?;
    let i1 = r.read_u64::<LittleEndian>()? as usize;
    let i2 = r.read_u64::<LittleEndian>()? as usize;
    let i3 = r.read_u64::<LittleEndian>()? as usize;
    let len = i1
        .checked_mul(i2)
        .and_then(|v| v.checked_mul(i3))
        .ok_or_else(|| Error::Format("dims overflow".into()))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(r.read_f64::<LittleEndian>().map_err(|_| {
            Error::Format("truncated T3F payload".into())
        })?);
    }
    Tensor3::from_vec((i1, i2, i3), data)
}

/// A matrix as T3F with a trailing unit mode.
pub fn write_matrix_t3f(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let t = Tensor3::from_vec(
        (m.nrows(), m.ncols(), 1),
        m.as_slice().to_vec(), // column-major = mode-1 fastest
    )?;
    write_t3f(path, &t)
}

pub fn read_matrix_t3f(path: impl AsRef<Path>) -> Result<Matrix> {
    let t = read_t3f(path)?;
    let (r, c, one) = t.dims();
    if one != 1 {
        return Err(Error::Format(format!(
            "expected a matrix (I3 = 1), found I3 = {one}"
        )));
    }
    Ok(Matrix::from_column_slice(r, c, t.data()))
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path.as_ref())
        .map_err(|e| Error::Format(e.to_string()))?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path.as_ref())
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        let row: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Format(format!("bad CSV number: {e}")))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format("ragged CSV rows".into()));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("empty CSV matrix".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("CSV matrix".into()));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(Matrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// JSON sidecar stored next to the T3F payloads of a fit.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FitMeta {
    pub estimator: String,
    pub tuning: TuningRecord,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub basis_kind: (BasisKind, BasisKind),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceModel>,
}

/// Writes `core.t3f`, `coef.t3f`, the basis matrices, and `meta.json` into
/// `dir`; the heteroscedastic loop adds `mean.t3f` and its variance model.
pub fn save_fit(
    dir: impl AsRef<Path>,
    fit: &FitResult,
    estimator: &str,
    variance: Option<&VarianceModel>,
    mean: Option<&Matrix>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_t3f(dir.join("core.t3f"), &fit.core)?;
    write_t3f(dir.join("coef.t3f"), &fit.coef)?;
    write_matrix_t3f(dir.join("u1.t3f"), &fit.basis.u1)?;
    write_matrix_t3f(dir.join("u2.t3f"), &fit.basis.u2)?;
    if let Some(m) = mean {
        write_matrix_t3f(dir.join("mean.t3f"), m)?;
    }
    let meta = FitMeta {
        estimator: estimator.to_string(),
        tuning: fit.tuning.clone(),
        objective_trace: fit.objective_trace.clone(),
        converged: fit.converged,
        basis_kind: (fit.basis.kind1, fit.basis.kind2),
        variance: variance.cloned(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), json)?;
    Ok(())
}

/// Loads the pieces of a saved fit needed downstream: the coefficient
/// tensor, the sidecar, and the mean surface if present.
pub fn load_fit(dir: impl AsRef<Path>) -> Result<(Tensor3, FitMeta, Option<Matrix>)> {
    let dir = dir.as_ref();
    let coef = read_t3f(dir.join("coef.t3f"))?;
    let raw = std::fs::read_to_string(dir.join("meta.json"))?;
    let meta: FitMeta =
        serde_json::from_str(&raw).map_err(|e| Error::Format(format!("meta.json: {e}")))?;
    let mean_path = dir.join("mean.t3f");
    let mean = if mean_path.exists() {
        Some(read_matrix_t3f(mean_path)?)
    } else {
        None
    };
    Ok((coef, meta, mean))
}
