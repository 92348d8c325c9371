//! Versioned JSON and CSV output. Non-finite numbers become `null` and the
//! row records why.

use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value};

use crate::args::Format;
use crate::CliError;

pub const SCHEMA: &str = "mrd/1";

#[derive(Debug, Clone, Default)]
pub struct Row {
    fields: Map<String, Value>,
    nulls: Vec<(String, String)>,
}

impl Row {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num(mut self, key: &str, v: f64) -> Self {
        match serde_json::Number::from_f64(v) {
            Some(n) => {
                self.fields.insert(key.into(), Value::Number(n));
            }
            None => {
                let reason = if v.is_nan() { "not a number" } else { "infinite" };
                self = self.null(key, reason);
            }
        }
        self
    }

    pub fn opt_num(self, key: &str, v: Option<f64>, reason: &str) -> Self {
        match v {
            Some(v) => self.num(key, v),
            None => self.null(key, reason),
        }
    }

    pub fn int(mut self, key: &str, v: u64) -> Self {
        self.fields.insert(key.into(), Value::from(v));
        self
    }

    pub fn text(mut self, key: &str, v: impl Into<String>) -> Self {
        self.fields.insert(key.into(), Value::String(v.into()));
        self
    }

    pub fn boolean(mut self, key: &str, v: bool) -> Self {
        self.fields.insert(key.into(), Value::Bool(v));
        self
    }

    pub fn null(mut self, key: &str, reason: &str) -> Self {
        self.fields.insert(key.into(), Value::Null);
        self.nulls.push((key.into(), reason.into()));
        self
    }

    pub fn to_json(&self) -> Value {
        let mut m = self.fields.clone();
        if !self.nulls.is_empty() {
            let reasons: Map<String, Value> = self
                .nulls
                .iter()
                .map(|(k, r)| (k.clone(), Value::String(r.clone())))
                .collect();
            m.insert("null_reasons".into(), Value::Object(reasons));
        }
        Value::Object(m)
    }

    fn null_summary(&self) -> String {
        self.nulls
            .iter()
            .map(|(k, r)| format!("{k}: {r}"))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone)]
pub struct Document {
    pub command: String,
    pub meta: Map<String, Value>,
    pub rows: Vec<Row>,
}

impl Document {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            meta: Map::new(),
            rows: Vec::new(),
        }
    }

    pub fn meta(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.meta.insert(key.into(), v.into());
        self
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("schema".into(), SCHEMA.into());
        m.insert("command".into(), self.command.clone().into());
        for (k, v) in &self.meta {
            m.insert(k.clone(), v.clone());
        }
        m.insert("rows".into(), Value::Array(self.rows.iter().map(Row::to_json).collect()));
        Value::Object(m)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut columns: Vec<String> = Vec::new();
        for row in &self.rows {
            for k in row.fields.keys() {
                if !columns.contains(k) {
                    columns.push(k.clone());
                }
            }
        }
        let with_reasons = self.rows.iter().any(|r| !r.nulls.is_empty());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = columns.clone();
        if with_reasons {
            header.push("null_reasons".into());
        }
        w.write_record(&header).map_err(io_err)?;
        for row in &self.rows {
            let mut cells: Vec<String> = columns
                .iter()
                .map(|c| match row.fields.get(c) {
                    None | Some(Value::Null) => String::new(),
                    Some(Value::String(s)) => s.clone(),
                    Some(v) => v.to_string(),
                })
                .collect();
            if with_reasons {
                cells.push(row.null_summary());
            }
            w.write_record(&cells).map_err(io_err)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn render(&self, format: Format) -> Result<Vec<u8>, CliError> {
        match format {
            Format::Json => {
                let mut s = serde_json::to_vec_pretty(&self.to_json()).map_err(|e| CliError::Io(e.to_string()))?;
                s.push(b'\n');
                Ok(s)
            }
            Format::Csv => self.to_csv(),
        }
    }
}

fn io_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

pub fn write_output(bytes: &[u8], path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_values_become_null_with_reason() {
        let row = Row::new().num("a", 1.5).num("b", f64::NAN).num("c", f64::INFINITY);
        let j = row.to_json();
        assert_eq!(j["a"], 1.5);
        assert!(j["b"].is_null() && j["c"].is_null());
        assert_eq!(j["null_reasons"]["b"], "not a number");
        assert_eq!(j["null_reasons"]["c"], "infinite");
    }

    #[test]
    fn csv_round_trip() {
        let mut doc = Document::new("test");
        doc.rows.push(Row::new().text("name", "x,y").num("v", 0.25).int("k", 3));
        doc.rows.push(Row::new().text("name", "z").num("v", f64::NAN).int("k", 4));
        let bytes = doc.to_csv().unwrap();
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            vec!["name", "v", "k", "null_reasons"]
        );
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(&rows[0][0], "x,y");
        assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.25);
        assert_eq!(&rows[1][1], "");
        assert_eq!(&rows[1][3], "v: not a number");
    }

    #[test]
    fn json_has_schema_and_parses() {
        let doc = Document::new("estimate").meta("n", 10).meta("note", "ok");
        let bytes = doc.render(Format::Json).unwrap();
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["schema"], SCHEMA);
        assert_eq!(v["command"], "estimate");
        assert_eq!(v["n"], 10);
        assert!(v["rows"].as_array().unwrap().is_empty());
    }
}
