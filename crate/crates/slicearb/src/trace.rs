//! Demand trace CSV: `t,slice_id,required_throughput_mbps,cqi`.

use std::io::{Read, Write};

use slicearb_core::domain::ValidatedScenario;
use slicearb_core::ingest::{
    validate_trace, DemandSource, IngestError, SyntheticSource, TraceError, TraceRecord, TraceRow,
};
use thiserror::Error;

pub const COLUMNS: [&str; 4] = ["t", "slice_id", "required_throughput_mbps", "cqi"];

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error(transparent)]
    Invalid(#[from] TraceError),
    #[error("reading trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("reading trace: {0}")]
    Io(#[from] std::io::Error),
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    column: &'static str,
    line: usize,
) -> Result<T, TraceError> {
    rec.get(idx)
        .ok_or(TraceError::MissingColumn { column, line })?
        .trim()
        .parse()
        .map_err(|_| TraceError::NonNumericField { column, line })
}

/// Parses and validates a trace; errors carry 1-based file line numbers
/// (the header is line 1). Columns may appear in any order.
pub fn parse_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>, TraceFileError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    let mut idx = [0usize; 4];
    for (slot, column) in idx.iter_mut().zip(COLUMNS) {
        *slot = header.iter().position(|h| h == column).ok_or(TraceError::MissingColumn { column, line: 1 })?;
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cqi: i64 = field(&rec, idx[3], "cqi", line)?;
        if !(1..=15).contains(&cqi) {
            return Err(TraceError::CqiOutOfRange { cqi, line }.into());
        }
        rows.push(TraceRow {
            line,
            record: TraceRecord {
                t: field(&rec, idx[0], "t", line)?,
                slice_id: field(&rec, idx[1], "slice_id", line)?,
                required_throughput: field(&rec, idx[2], "required_throughput_mbps", line)?,
                cqi: cqi as u8,
            },
        });
    }
    Ok(validate_trace(rows)?)
}

/// Writes records with a header row. Throughputs use the shortest
/// representation that reads back to the same `f64`.
pub fn serialize_trace<W: Write>(records: &[TraceRecord], out: W) -> Result<(), TraceFileError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.slice_id.to_string(),
            r.required_throughput.to_string(),
            r.cqi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Records `steps` timesteps of the synthetic generator.
pub fn synthesize_trace(scenario: &ValidatedScenario, steps: u32, seed: u64) -> Result<Vec<TraceRecord>, IngestError> {
    let mut source = SyntheticSource::new(scenario, seed);
    let mut out = Vec::with_capacity(steps as usize * scenario.n_slices());
    let mut prev = None;
    for t in 0..steps {
        let channels = source.sample(t, prev.as_deref(), scenario)?;
        out.extend(scenario.slices.iter().zip(&channels).map(|(s, c)| TraceRecord {
            t,
            slice_id: s.id,
            required_throughput: c.required_throughput,
            cqi: c.cqi,
        }));
        prev = Some(channels);
    }
    Ok(out)
}
