use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::{OutputFormat, RunConfig};
use crate::CliError;

/// Everything a report carries besides its result.
#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub parallel: bool,
    pub duration_seconds: f64,
    pub config: &'a RunConfig,
    pub result: T,
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// Flatten nested JSON into dotted `key,value` rows.
fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, rows);
            }
        }
        Value::Array(items) => {
            for (i, x) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), x, rows);
            }
        }
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

pub fn render<T: Serialize>(report: &Report<'_, T>, format: OutputFormat) -> Result<Vec<u8>, CliError> {
    match format {
        OutputFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).map_err(io)?;
            out.push(b'\n');
            Ok(out)
        }
        OutputFormat::Csv => {
            let mut rows = vec![
                ("command".to_string(), report.command.to_string()),
                ("version".to_string(), report.version.to_string()),
                ("seed".to_string(), report.seed.to_string()),
                ("threads".to_string(), report.threads.to_string()),
                ("duration_seconds".to_string(), report.duration_seconds.to_string()),
                ("config".to_string(), serde_json::to_string(report.config).map_err(io)?),
            ];
            let result = serde_json::to_value(&report.result).map_err(io)?;
            flatten("result", &result, &mut rows);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["key", "value"]).map_err(io)?;
            for (k, v) in rows {
                w.write_record([k, v]).map_err(io)?;
            }
            w.into_inner().map_err(io)
        }
    }
}

pub fn emit(bytes: &[u8], path: Option<&str>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::Io(format!("{p}: {e}"))),
        None => std::io::stdout().write_all(bytes).map_err(io),
    }
}

/// Writer for `(replica, event_index, time, state)` path dumps.
pub struct PathDump<W: Write> {
    writer: csv::Writer<W>,
}

impl PathDump<Box<dyn Write>> {
    pub fn open(path: Option<&Path>) -> Result<Self, CliError> {
        let sink: Box<dyn Write> = match path {
            Some(p) => Box::new(std::io::BufWriter::new(
                std::fs::File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
            )),
            None => Box::new(std::io::BufWriter::new(std::io::stdout())),
        };
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(["replica", "event_index", "time", "state"]).map_err(io)?;
        Ok(PathDump { writer })
    }
}

impl<W: Write> PathDump<W> {
    pub fn write_path(&mut self, replica: u64, path: &bdpre::simulate::PathRecord) -> Result<(), CliError> {
        self.writer
            .write_record(&[replica.to_string(), "0".into(), "0".into(), path.start_state.to_string()])
            .map_err(io)?;
        for (k, e) in path.events.iter().enumerate() {
            self.writer
                .write_record(&[replica.to_string(), (k + 1).to_string(), e.time.to_string(), e.new_state.to_string()])
                .map_err(io)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(io)
    }
}
