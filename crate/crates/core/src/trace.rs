//! On-disk trace format and the in-memory trace container.
//!
//! A trace stores one input and one output feature per module per timestep.
//! The file format is line-delimited JSON: a header line followed by one
//! line per `(t, module, stream)` record, floats serialized with full
//! round-trip precision.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureVec;

/// Which side of a module a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Input,
    Output,
}

impl Stream {
    pub const BOTH: [Stream; 2] = [Stream::Input, Stream::Output];
}

impl std::fmt::Display for Stream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stream::Input => f.write_str("input"),
            Stream::Output => f.write_str("output"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    #[serde(rename = "type")]
    kind: String,
    version: u32,
    n_modules: usize,
    shape: Vec<usize>,
    timesteps: Vec<i64>,
}

#[derive(Serialize, Deserialize)]
struct FeatureLine {
    #[serde(rename = "type")]
    kind: String,
    t: i64,
    module: usize,
    stream: Stream,
    data: Vec<f64>,
}

/// A complete per-step, per-module feature record for one run.
///
/// Every `(t, module, stream)` triple is present exactly once and all
/// features share one shape; timesteps are strictly decreasing.
#[derive(Debug, Clone)]
pub struct Trace {
    n_modules: usize,
    shape: Vec<usize>,
    timesteps: Vec<i64>,
    t_index: HashMap<i64, usize>,
    /// Dense storage: `[step][module][stream]`, `None` until filled.
    records: Vec<Vec<[Option<FeatureVec>; 2]>>,
}

impl Trace {
    /// Creates an empty trace skeleton for the given run layout.
    pub fn new(n_modules: usize, shape: Vec<usize>, timesteps: Vec<i64>) -> Result<Self> {
        if n_modules == 0 {
            return Err(Error::InvalidConfig(
                "trace needs at least one module".into(),
            ));
        }
        if shape.is_empty() || shape.iter().product::<usize>() == 0 {
            return Err(Error::InvalidConfig(format!(
                "trace shape {:?} is degenerate",
                shape
            )));
        }
        if timesteps.is_empty() {
            return Err(Error::InvalidConfig(
                "trace needs at least one timestep".into(),
            ));
        }
        if !timesteps.windows(2).all(|w| w[1] < w[0]) {
            return Err(Error::InvalidConfig(
                "trace timesteps must strictly decrease".into(),
            ));
        }
        let t_index = timesteps.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let records = vec![vec![[None, None]; n_modules]; timesteps.len()];
        Ok(Self {
            n_modules,
            shape,
            timesteps,
            t_index,
            records,
        })
    }

    pub fn n_modules(&self) -> usize {
        self.n_modules
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Timesteps in run order (strictly decreasing).
    pub fn timesteps(&self) -> &[i64] {
        &self.timesteps
    }

    /// Stores one feature record. Overwriting or storing a wrong shape is a
    /// caller bug and fails.
    pub fn set(&mut self, t: i64, module: usize, stream: Stream, value: FeatureVec) -> Result<()> {
        if value.shape() != self.shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "trace shape {:?}, record shape {:?}",
                self.shape,
                value.shape()
            )));
        }
        let &idx = self
            .t_index
            .get(&t)
            .ok_or_else(|| Error::InvalidConfig(format!("timestep {} not in trace", t)))?;
        if module >= self.n_modules {
            return Err(Error::InvalidConfig(format!(
                "module {} out of range ({} modules)",
                module, self.n_modules
            )));
        }
        let slot = &mut self.records[idx][module][stream as usize];
        if slot.is_some() {
            return Err(Error::InvalidConfig(format!(
                "duplicate record (t {}, module {}, {})",
                t, module, stream
            )));
        }
        *slot = Some(value);
        Ok(())
    }

    /// Fetches one record; the trace must be complete at that triple.
    pub fn get(&self, t: i64, module: usize, stream: Stream) -> Result<&FeatureVec> {
        let &idx = self
            .t_index
            .get(&t)
            .ok_or_else(|| Error::Format(format!("missing timestep {}", t)))?;
        self.records[idx]
            .get(module)
            .and_then(|m| m[stream as usize].as_ref())
            .ok_or_else(|| {
                Error::Format(format!(
                    "missing record (t {}, module {}, {})",
                    t, module, stream
                ))
            })
    }

    /// Confirms every `(t, module, stream)` triple is present.
    pub fn validate_complete(&self) -> Result<()> {
        for (idx, per_module) in self.records.iter().enumerate() {
            for (module, streams) in per_module.iter().enumerate() {
                for stream in Stream::BOTH {
                    if streams[stream as usize].is_none() {
                        return Err(Error::Format(format!(
                            "missing record (t {}, module {}, {})",
                            self.timesteps[idx], module, stream
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes the trace as line-delimited JSON.
    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate_complete()?;
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        let header = HeaderLine {
            kind: "header".into(),
            version: 1,
            n_modules: self.n_modules,
            shape: self.shape.clone(),
            timesteps: self.timesteps.clone(),
        };
        serde_json::to_writer(&mut out, &header).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
        for (idx, per_module) in self.records.iter().enumerate() {
            let t = self.timesteps[idx];
            for (module, streams) in per_module.iter().enumerate() {
                for stream in Stream::BOTH {
                    let value = streams[stream as usize].as_ref().expect("validated");
                    let line = FeatureLine {
                        kind: "feature".into(),
                        t,
                        module,
                        stream,
                        data: value.data().to_vec(),
                    };
                    serde_json::to_writer(&mut out, &line)
                        .map_err(|e| Error::Format(e.to_string()))?;
                    out.write_all(b"\n")?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads and fully validates a trace file.
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut lines = BufReader::new(file).lines();

        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format("empty trace file".into()))??;
        let header: HeaderLine = serde_json::from_str(&header_line)
            .map_err(|e| Error::Format(format!("bad header: {}", e)))?;
        if header.kind != "header" {
            return Err(Error::Format(format!(
                "first line must be a header, found '{}'",
                header.kind
            )));
        }
        if header.version != 1 {
            return Err(Error::Format(format!(
                "unsupported trace version {}",
                header.version
            )));
        }
        // Header consistency is rejected before any record is parsed.
        let mut trace = Trace::new(header.n_modules, header.shape, header.timesteps)
            .map_err(|e| Error::Format(format!("inconsistent header: {}", e)))?;
        let dim: usize = trace.shape.iter().product();

        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FeatureLine = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("bad record: {}", e)))?;
            if record.kind != "feature" {
                return Err(Error::Format(format!(
                    "unexpected line type '{}'",
                    record.kind
                )));
            }
            if record.data.len() != dim {
                return Err(Error::Format(format!(
                    "record (t {}, module {}, {}) has {} values, shape {:?} needs {}",
                    record.t,
                    record.module,
                    record.stream,
                    record.data.len(),
                    trace.shape,
                    dim
                )));
            }
            let value = FeatureVec::new(record.data, trace.shape.clone())
                .map_err(|e| Error::Format(format!("bad record values: {}", e)))?;
            trace
                .set(record.t, record.module, record.stream, value)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        trace.validate_complete()?;
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(data: &[f64]) -> FeatureVec {
        FeatureVec::from_flat(data.to_vec()).unwrap()
    }

    fn small_trace() -> Trace {
        let mut trace = Trace::new(2, vec![2], vec![10, 9, 8]).unwrap();
        for (i, &t) in [10i64, 9, 8].iter().enumerate() {
            for module in 0..2 {
                let base = (i * 10 + module) as f64;
                trace
                    .set(t, module, Stream::Input, fv(&[base, base + 0.5]))
                    .unwrap();
                trace
                    .set(t, module, Stream::Output, fv(&[base + 1.0, -base]))
                    .unwrap();
            }
        }
        trace
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let trace = small_trace();
        trace.write(&path).unwrap();
        let back = Trace::read(&path).unwrap();
        assert_eq!(back.n_modules(), trace.n_modules());
        assert_eq!(back.shape(), trace.shape());
        assert_eq!(back.timesteps(), trace.timesteps());
        for &t in trace.timesteps() {
            for module in 0..trace.n_modules() {
                for stream in Stream::BOTH {
                    let a = trace.get(t, module, stream).unwrap();
                    let b = back.get(t, module, stream).unwrap();
                    assert_eq!(a.data(), b.data());
                }
            }
        }
    }

    #[test]
    fn round_trip_preserves_awkward_floats() {
        let mut trace = Trace::new(1, vec![3], vec![5, 4]).unwrap();
        let vals = [1.0 / 3.0, f64::MIN_POSITIVE, -std::f64::consts::PI];
        for &t in &[5i64, 4] {
            trace.set(t, 0, Stream::Input, fv(&vals)).unwrap();
            trace.set(t, 0, Stream::Output, fv(&vals)).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        trace.write(&path).unwrap();
        let back = Trace::read(&path).unwrap();
        let got = back.get(5, 0, Stream::Input).unwrap();
        for (a, b) in got.data().iter().zip(&vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_file_names_the_missing_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        small_trace().write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        let truncated = dir.path().join("trunc.jsonl");
        std::fs::write(&truncated, lines.join("\n")).unwrap();
        match Trace::read(&truncated) {
            Err(Error::Format(msg)) => {
                assert!(msg.contains("missing record"), "got: {}", msg);
                assert!(msg.contains("t 8"), "got: {}", msg);
                assert!(msg.contains("module 1"), "got: {}", msg);
            }
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn bad_header_is_rejected_before_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"type\":\"header\",\"version\":1,\"n_modules\":1,\"shape\":[0],\"timesteps\":[5,4]}\nnot json\n").unwrap();
        match Trace::read(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("header"), "got: {}", msg),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn record_shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        small_trace().write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let corrupted = text.replacen("\"data\":[0.0,0.5]", "\"data\":[0.0,0.5,1.0]", 1);
        assert_ne!(text, corrupted);
        let path2 = dir.path().join("c.jsonl");
        std::fs::write(&path2, corrupted).unwrap();
        match Trace::read(&path2) {
            Err(Error::Format(msg)) => assert!(msg.contains("values"), "got: {}", msg),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn duplicate_record_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        small_trace().write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let second_line = text.lines().nth(1).unwrap().to_string();
        let dup = format!("{}\n{}\n", text.trim_end(), second_line);
        let path2 = dir.path().join("dup.jsonl");
        std::fs::write(&path2, dup).unwrap();
        match Trace::read(&path2) {
            Err(Error::Format(msg)) => assert!(msg.contains("duplicate"), "got: {}", msg),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }
}
