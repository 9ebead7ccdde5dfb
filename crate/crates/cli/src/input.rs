use std::path::Path;

use mlmoments::SampleMatrix;

use crate::CliError;

/// Reads a comma-separated numeric table. A first row with any non-numeric
/// field is taken as a header and skipped.
pub fn read_csv(path: &Path) -> Result<SampleMatrix, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    parse_csv(file)
}

pub fn parse_csv<R: std::io::Read>(reader: R) -> Result<SampleMatrix, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("csv: {e}")))?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && width.is_none() => {
                width = Some(record.len());
                continue;
            }
            Err(_) => {
                let bad = record.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or("");
                return Err(CliError::Data(format!("line {line}: {bad:?} is not a number")));
            }
        };
        if let Some(col) = values.iter().position(|v| !v.is_finite()) {
            return Err(CliError::Data(format!("line {line}: non-finite value in column {}", col + 1)));
        }
        match width {
            Some(w) if w != values.len() => {
                return Err(CliError::Data(format!(
                    "line {line}: expected {w} fields, found {}",
                    values.len()
                )))
            }
            _ => width = Some(values.len()),
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(CliError::Data("no data rows".into()));
    }
    SampleMatrix::from_rows(&rows).map_err(|e| CliError::Data(e.to_string()))
}

/// Parses `1,0.8;0.8,1` (rows separated by `;`) or `identity` for a `d × d`
/// matrix, returned row-major.
pub fn parse_matrix(s: &str, dim: Option<usize>) -> Result<(usize, Vec<f64>), CliError> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("identity") {
        let d = match rest.trim_start_matches(':') {
            "" => dim.unwrap_or(2),
            k => k
                .parse()
                .map_err(|_| CliError::Usage(format!("bad identity size in {s:?}")))?,
        };
        let m = (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect();
        return Ok((d, m));
    }
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(parse_list)
        .collect::<Result<_, _>>()?;
    let d = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(CliError::Usage(format!("matrix {s:?} is not square")));
    }
    Ok((d, rows.concat()))
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("cannot parse {p:?} as a number")))
        })
        .collect()
}
