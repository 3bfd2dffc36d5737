use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::Estimator;
use super::run::{Aggregate, ExperimentResult};
use crate::{Error, Result};

pub const AGGREGATE_HEADER: &str = "estimator,lambda,mean_mse,stderr,n,m,trials";

const ROWS_HEADER: &str = "estimator,lambda,trial,mse,normalized_mse,seed,stream,runtime_ms,edge_count,error";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlotFormat {
    #[default]
    Csv,
    /// CSV plus a whitespace-separated `.dat` with one block per estimator.
    CsvAndDat,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `<prefix>_rows.csv`, `<prefix>_aggregate.csv` (header
/// [`AGGREGATE_HEADER`]), `<prefix>_aggregate_normalized.csv` and, for
/// [`PlotFormat::CsvAndDat`], `<prefix>_aggregate.dat`. Returns the paths
/// written.
pub fn emit_plot_data(result: &ExperimentResult, prefix: &Path, format: PlotFormat) -> Result<Vec<PathBuf>> {
    if result.aggregates.is_empty() {
        return Err(Error::param("result", "has no aggregates to emit"));
    }
    let mut written = Vec::new();

    let path = with_suffix(prefix, "_rows.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(ROWS_HEADER.split(','))?;
    for r in &result.rows {
        w.write_record([
            r.estimator.as_str().to_string(),
            r.lambda.to_string(),
            r.trial.to_string(),
            r.mse.to_string(),
            r.normalized_mse.to_string(),
            r.seed.to_string(),
            r.stream.to_string(),
            format!("{:.3}", r.runtime_ms),
            r.edge_count.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = with_suffix(prefix, "_aggregate.csv");
    write_aggregate_csv(&result.aggregates, create(&path)?)?;
    written.push(path);

    let path = with_suffix(prefix, "_aggregate_normalized.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record([
        "estimator",
        "lambda",
        "mean_normalized_mse",
        "stderr_normalized",
        "n",
        "m",
        "trials",
    ])?;
    for a in &result.aggregates {
        w.write_record([
            a.estimator.as_str().to_string(),
            a.lambda.to_string(),
            a.mean_normalized_mse.to_string(),
            a.stderr_normalized.to_string(),
            a.n.to_string(),
            a.m.to_string(),
            a.trials.to_string(),
        ])?;
    }
    w.flush()?;
    written.push(path);

    if format == PlotFormat::CsvAndDat {
        let path = with_suffix(prefix, "_aggregate.dat");
        let mut w = create(&path)?;
        let mut first = true;
        for &est in &result.config.estimators {
            if !first {
                writeln!(w, "\n")?;
            }
            first = false;
            writeln!(w, "# {}", est.as_str())?;
            writeln!(w, "# lambda mean_mse stderr mean_normalized_mse stderr_normalized")?;
            for a in result.aggregates.iter().filter(|a| a.estimator == est) {
                writeln!(
                    w,
                    "{} {} {} {} {}",
                    a.lambda, a.mean_mse, a.stderr, a.mean_normalized_mse, a.stderr_normalized
                )?;
            }
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Aggregate table in the [`AGGREGATE_HEADER`] schema. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_aggregate_csv<W: Write>(aggregates: &[Aggregate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER.split(','))?;
    for a in aggregates {
        w.write_record([
            a.estimator.as_str().to_string(),
            a.lambda.to_string(),
            a.mean_mse.to_string(),
            a.stderr.to_string(),
            a.n.to_string(),
            a.m.to_string(),
            a.trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed line of an aggregate CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRecord {
    pub estimator: Estimator,
    pub lambda: f64,
    pub mean_mse: f64,
    pub stderr: f64,
    pub n: usize,
    pub m: usize,
    pub trials: usize,
}

impl From<&Aggregate> for AggregateRecord {
    fn from(a: &Aggregate) -> Self {
        AggregateRecord {
            estimator: a.estimator,
            lambda: a.lambda,
            mean_mse: a.mean_mse,
            stderr: a.stderr,
            n: a.n,
            m: a.m,
            trials: a.trials,
        }
    }
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRecord>> {
    let fmt = |reason: String| Error::Format {
        path: Some(path.to_path_buf()),
        reason,
    };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != AGGREGATE_HEADER {
        return Err(fmt(format!("unexpected header `{}`", header.join(","))));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let float = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|e| fmt(format!("row {}: column {i}: {e}", line + 1)))
        };
        let int = |i: usize| {
            field(i)
                .parse::<usize>()
                .map_err(|e| fmt(format!("row {}: column {i}: {e}", line + 1)))
        };
        out.push(AggregateRecord {
            estimator: field(0).parse().map_err(|e: Error| fmt(e.to_string()))?,
            lambda: float(1)?,
            mean_mse: float(2)?,
            stderr: float(3)?,
            n: int(4)?,
            m: int(5)?,
            trials: int(6)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_experiment, ExperimentConfig, NoiseSpec, PriorSpec};

    fn result() -> ExperimentResult {
        let mut cfg = ExperimentConfig::new(PriorSpec::Gaussian, NoiseSpec::Gaussian, 30, 45);
        cfg.lambda_grid = vec![0.5, 1.0, 3.0];
        cfg.trials = 2;
        run_experiment(&cfg).unwrap()
    }

    #[test]
    fn aggregate_round_trip_is_exact() {
        let res = result();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&res, &dir.path().join("fig"), PlotFormat::CsvAndDat).unwrap();
        assert_eq!(files.len(), 4);
        let agg = dir.path().join("fig_aggregate.csv");
        let text = std::fs::read_to_string(&agg).unwrap();
        assert_eq!(text.lines().next().unwrap(), AGGREGATE_HEADER);
        assert_eq!(text.lines().count(), 1 + 3 * 3);
        let back = read_aggregate_csv(&agg).unwrap();
        let expected: Vec<AggregateRecord> = res.aggregates.iter().map(AggregateRecord::from).collect();
        assert_eq!(back.len(), expected.len());
        for (a, b) in back.iter().zip(&expected) {
            assert_eq!(a.estimator, b.estimator);
            assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
            assert_eq!(a.mean_mse.to_bits(), b.mean_mse.to_bits());
            assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
            assert_eq!((a.n, a.m, a.trials), (b.n, b.m, b.trials));
        }
        let dat = std::fs::read_to_string(dir.path().join("fig_aggregate.dat")).unwrap();
        assert_eq!(dat.matches("# lambda").count(), 3);
    }

    #[test]
    fn rejects_foreign_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_aggregate_csv(&p), Err(Error::Format { .. })));
    }
}
