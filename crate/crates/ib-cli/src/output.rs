//! Run manifests and table emission. Every output file starts with a
//! schema line and an embedded manifest line, so a result can always
//! be traced back to the exact invocation that produced it.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::runs::CliError;

/// Echo of one invocation: command, problem, every knob that affects
/// the numbers, and where the results went. No timestamps; reruns of
/// the same manifest must be byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub problem: String,
    pub tool_version: &'static str,
    pub config: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &'static str, problem: &str) -> Self {
        Self {
            command,
            problem: problem.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            config: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }
}

/// One table cell. Floats are printed with 17 significant digits so
/// that parsing the CSV back reproduces the exact doubles.
#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl Cell {
    fn to_csv(&self) -> String {
        match self {
            Cell::F(v) => fmt_float(*v),
            Cell::I(i) => i.to_string(),
            Cell::S(s) => s.clone(),
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            // non-finite floats (padding for deleted clusters) have no
            // JSON number representation and become null
            Cell::F(v) => serde_json::Number::from_f64(*v)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Cell::I(i) => serde_json::Value::from(*i),
            Cell::S(s) => serde_json::Value::from(s.as_str()),
        }
    }
}

pub struct Table {
    pub schema: &'static str,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

/// Path of the JSON mirror sitting next to a CSV output.
pub fn mirror_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

/// Writes the table as CSV to `out` (stdout when `None`), plus a JSON
/// mirror next to it when requested. The manifest is embedded in both.
pub fn emit(
    table: &Table,
    manifest: &RunManifest,
    out: Option<&Path>,
    json_mirror: bool,
) -> Result<(), CliError> {
    let mjson = serde_json::to_string(manifest)
        .map_err(|e| CliError::Input(format!("manifest serialization: {e}")))?;
    let mut text = String::new();
    text.push_str("# schema: ");
    text.push_str(table.schema);
    text.push('\n');
    text.push_str("# manifest: ");
    text.push_str(&mjson);
    text.push('\n');
    text.push_str(&table.columns.join(","));
    text.push('\n');
    for row in &table.rows {
        debug_assert_eq!(row.len(), table.columns.len());
        let cells: Vec<String> = row.iter().map(Cell::to_csv).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, &text)
            .map_err(|e| CliError::Input(format!("writing {}: {e}", path.display())))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| CliError::Input(format!("writing stdout: {e}")))?;
        }
    }
    if json_mirror {
        let out = out.expect("mirror requires a file output");
        let path = mirror_path(out);
        if path == out {
            return Err(CliError::Usage(format!(
                "JSON mirror path {} collides with the CSV output; give --out a non-.json extension",
                path.display()
            )));
        }
        let rows: Vec<Vec<serde_json::Value>> = table
            .rows
            .iter()
            .map(|row| row.iter().map(Cell::to_json).collect())
            .collect();
        let doc = serde_json::json!({
            "manifest": manifest,
            "schema": table.schema,
            "columns": table.columns,
            "rows": rows,
        });
        let text = format!("{:#}\n", doc);
        std::fs::write(&path, text)
            .map_err(|e| CliError::Input(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_csv() {
        for &v in &[
            0.3,
            103.0 / 3200.0,
            std::f64::consts::PI,
            1.0 / 3.0,
            6.25,
            1e-300,
        ] {
            let s = fmt_float(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, v, "{s} did not round-trip");
        }
    }

    #[test]
    fn nan_padding_becomes_null_in_json() {
        assert_eq!(Cell::F(f64::NAN).to_json(), serde_json::Value::Null);
        assert_eq!(Cell::F(1.5).to_json(), serde_json::json!(1.5));
    }

    #[test]
    fn manifest_serialization_is_stable() {
        let mut m = RunManifest::new("track", "bsc:0.3");
        m.set("beta0", 32.0);
        m.set("delta_beta", -0.5);
        let a = serde_json::to_string(&m).unwrap();
        let b = serde_json::to_string(&m).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"command\":\"track\""));
        assert!(a.contains("\"beta0\":\"32\""));
    }

    #[test]
    fn mirror_path_swaps_extension() {
        assert_eq!(
            mirror_path(Path::new("runs/out.csv")),
            PathBuf::from("runs/out.json")
        );
    }
}
