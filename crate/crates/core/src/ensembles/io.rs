//! Dense matrix files: headerless row-major CSV, or a small binary format
//! (`RRIEMAT1`, u64 rows, u64 cols, row-major little-endian f64 values).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::Mat;

use crate::{Error, Real, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"RRIEMAT1";

fn format_err(path: Option<&Path>, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.map(Path::to_path_buf),
        reason: reason.into(),
    }
}

pub fn write_matrix_csv<T: Real, W: Write>(a: &Mat<T>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut record = Vec::with_capacity(a.ncols());
    for i in 0..a.nrows() {
        record.clear();
        record.extend((0..a.ncols()).map(|j| a[(i, j)].as_f64().to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<T: Real, R: Read>(input: R) -> Result<Mat<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|e| format_err(None, format!("row {}: cannot parse `{field}`: {e}", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(format_err(None, "empty matrix"));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| T::lit(rows[i][j])))
}

pub fn write_matrix_binary<T: Real, W: Write>(a: &Mat<T>, mut out: W) -> Result<()> {
    out.write_all(MATRIX_MAGIC)?;
    out.write_all(&(a.nrows() as u64).to_le_bytes())?;
    out.write_all(&(a.ncols() as u64).to_le_bytes())?;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.write_all(&a[(i, j)].as_f64().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_binary<T: Real, R: Read>(mut input: R) -> Result<Mat<T>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(format_err(None, "bad magic"));
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| format_err(None, "dimensions overflow"))?;
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        input
            .read_exact(&mut word)
            .map_err(|_| format_err(None, format!("truncated payload, expected {len} values")))?;
        values.push(f64::from_le_bytes(word));
    }
    Ok(Mat::from_fn(rows, cols, |i, j| T::lit(values[i * cols + j])))
}

/// Reads a matrix file, detecting the binary format by its magic.
pub fn read_matrix<T: Real>(path: &Path) -> Result<Mat<T>> {
    let mut file = BufReader::new(File::open(path)?);
    let mut head = Vec::with_capacity(8);
    (&mut file).take(8).read_to_end(&mut head)?;
    let rest = head.as_slice().chain(file);
    let result = if head.as_slice() == MATRIX_MAGIC {
        read_matrix_binary(rest)
    } else {
        read_matrix_csv(rest)
    };
    result.map_err(|e| match e {
        Error::Format { path: None, reason } => format_err(Some(path), reason),
        other => other,
    })
}

/// Writes a matrix file; `.bin` extensions select the binary format.
pub fn write_matrix<T: Real>(a: &Mat<T>, path: &Path) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => write_matrix_binary(a, out),
        _ => write_matrix_csv(a, out),
    }
}
