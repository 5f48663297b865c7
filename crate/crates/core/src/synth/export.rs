use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::{CallOutput, SynthError, SyntheticRecord};

pub const CSV_HEADER: [&str; 2] = ["instruct", "output"];

/// One training row: the request text and the canonical serialized call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructOutputPair {
    pub instruct: String,
    pub output: String,
}

impl InstructOutputPair {
    pub fn from_record(rec: &SyntheticRecord) -> Self {
        Self {
            instruct: rec.request.clone(),
            output: rec.output().to_canonical_json(),
        }
    }

    pub fn call(&self) -> Result<CallOutput, serde_json::Error> {
        CallOutput::from_json(&self.output)
    }

    pub fn to_record(&self) -> Result<SyntheticRecord, serde_json::Error> {
        Ok(SyntheticRecord::from_parts(self.instruct.clone(), self.call()?))
    }
}

fn csv_error(e: csv::Error) -> SynthError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SynthError::Io(io),
        other => SynthError::MalformedRow {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Write `instruct,output` rows with RFC 4180 quoting and CRLF line ends.
pub fn export_instruct_csv<W: Write>(recs: &[SyntheticRecord], sink: W) -> Result<usize, SynthError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(sink);
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for rec in recs {
        let pair = InstructOutputPair::from_record(rec);
        w.write_record([&pair.instruct, &pair.output]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(recs.len())
}

pub fn import_instruct_csv<R: Read>(mut source: R) -> Result<Vec<InstructOutputPair>, SynthError> {
    let mut data = Vec::new();
    source.read_to_end(&mut data)?;
    // csv reports a record as starting on the `\n` of a preceding CRLF, so
    // skip terminator bytes before counting lines
    let line_at = |byte: u64| {
        let mut at = byte as usize;
        while matches!(data.get(at), Some(b'\r' | b'\n')) {
            at += 1;
        }
        1 + data[..at].iter().filter(|b| **b == b'\n').count() as u64
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(data.as_slice());
    let mut rows = r.records();
    let header = match rows.next() {
        Some(row) => row.map_err(csv_error)?,
        None => return Err(SynthError::BadHeader { found: String::new() }),
    };
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(SynthError::BadHeader {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for row in rows {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| line_at(p.byte()));
        if row.len() != 2 {
            return Err(SynthError::MalformedRow {
                line,
                message: format!("expected 2 fields, found {}", row.len()),
            });
        }
        let pair = InstructOutputPair {
            instruct: row[0].to_string(),
            output: row[1].to_string(),
        };
        pair.call().map_err(|e| SynthError::MalformedRow {
            line,
            message: format!("output column: {e}"),
        })?;
        out.push(pair);
    }
    Ok(out)
}

/// One record per line.
pub fn write_jsonl<W: Write>(recs: &[SyntheticRecord], mut sink: W) -> Result<(), SynthError> {
    for rec in recs {
        serde_json::to_writer(&mut sink, rec).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn read_jsonl<R: BufRead>(source: R) -> Result<Vec<SyntheticRecord>, SynthError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SyntheticRecord = serde_json::from_str(&line).map_err(|e| SynthError::MalformedJsonLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
