use std::io::{BufRead, Write};

use mlmoments::transport::{TraceRecord, TransportSolution};
use mlmoments::MultiIndex;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    JsonLines,
    Table,
}

/// One output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub op: String,
    pub alpha: Option<MultiIndex>,
    pub value: Vec<f64>,
    pub estimator: Option<String>,
    pub seed: Option<u64>,
    pub mc_samples: Option<usize>,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Record {
    pub fn new(op: &str, value: Vec<f64>, status: &str) -> Self {
        Self {
            op: op.into(),
            alpha: None,
            value,
            estimator: None,
            seed: None,
            mc_samples: None,
            status: status.into(),
            trim: None,
            message: None,
        }
    }
}

pub struct Output {
    format: Format,
    sink: Box<dyn Write>,
    header: bool,
}

fn io(e: std::io::Error) -> CliError {
    CliError::Data(format!("write failed: {e}"))
}

impl Output {
    pub fn open(format: Format, path: Option<&std::path::Path>) -> Result<Self, CliError> {
        let sink: Box<dyn Write> = match path {
            Some(p) => Box::new(std::io::BufWriter::new(
                std::fs::File::create(p).map_err(|e| CliError::Data(format!("cannot create {}: {e}", p.display())))?,
            )),
            None => Box::new(std::io::BufWriter::new(std::io::stdout())),
        };
        Ok(Self {
            format,
            sink,
            header: false,
        })
    }

    pub fn record(&mut self, r: &Record) -> Result<(), CliError> {
        match self.format {
            Format::JsonLines => {
                let line = to_json(r)?;
                writeln!(self.sink, "{line}").map_err(io)
            }
            Format::Table => {
                if !self.header {
                    writeln!(self.sink, "op\talpha\testimator\tstatus\tvalue").map_err(io)?;
                    self.header = true;
                }
                let alpha = r.alpha.as_ref().map_or("-".to_string(), |a| a.to_string());
                let value: Vec<String> = r.value.iter().map(|v| format!("{v:.6}")).collect();
                let mut line = format!(
                    "{}\t{alpha}\t{}\t{}\t{}",
                    r.op,
                    r.estimator.as_deref().unwrap_or("-"),
                    r.status,
                    value.join(" ")
                );
                if let Some(m) = &r.message {
                    line.push_str(&format!("\t# {m}"));
                }
                writeln!(self.sink, "{line}").map_err(io)
            }
        }
    }

    pub fn raw(&mut self, text: &str) -> Result<(), CliError> {
        self.sink.write_all(text.as_bytes()).map_err(io)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.sink.flush().map_err(io)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    op: String,
    status: String,
    seed: u64,
    mc_samples: usize,
    solution: TransportSolution,
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    op: String,
    #[serde(flatten)]
    record: TraceRecord,
}

/// Writes a solution as one header line followed by one line per trace record.
pub fn write_artifact(sol: &TransportSolution, sink: &mut dyn Write) -> Result<(), CliError> {
    let mut head = sol.clone();
    head.trace.clear();
    let header = Header {
        op: "transport".into(),
        status: status_name(sol).into(),
        seed: sol.config.seed,
        mc_samples: sol.config.mc_samples,
        solution: head,
    };
    writeln!(sink, "{}", to_json(&header)?).map_err(io)?;
    for t in &sol.trace {
        let line = TraceLine {
            op: "trace".into(),
            record: *t,
        };
        writeln!(sink, "{}", to_json(&line)?).map_err(io)?;
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string(v).map_err(|e| CliError::Data(e.to_string()))
}

pub fn read_artifact(path: &std::path::Path) -> Result<TransportSolution, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let bad = |k: usize, e: &dyn std::fmt::Display| CliError::Data(format!("{} line {k}: {e}", path.display()));
    let first = match lines.next() {
        Some(l) => l.map_err(|e| bad(1, &e))?,
        None => return Err(CliError::Data(format!("{} is empty", path.display()))),
    };
    let header: Header = serde_json::from_str(&first).map_err(|e| bad(1, &e))?;
    if header.op != "transport" {
        return Err(bad(1, &"not a transport artifact"));
    }
    let mut sol = header.solution;
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(k + 2, &e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TraceLine = serde_json::from_str(&line).map_err(|e| bad(k + 2, &e))?;
        sol.trace.push(t.record);
    }
    Ok(sol)
}

pub fn status_name(sol: &TransportSolution) -> &'static str {
    if sol.converged() {
        "converged"
    } else {
        "unconverged"
    }
}
