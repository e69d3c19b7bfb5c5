//! Report rendering: CSV with a `# key: value` header block, or JSON.

use std::io::Write;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// A rectangular table whose first column may hold labels.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// Everything a command emits: the resolved configuration, scalar results
/// and one table.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Map<String, Value>,
    pub summary: Map<String, Value>,
    pub table: Table,
}

impl Report {
    pub fn new(command: &str, config: Map<String, Value>) -> Self {
        Self {
            tool: "alspca".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            summary: Map::new(),
            table: Table::default(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.into(), value.into());
    }

    pub fn write<W: Write>(&self, format: Format, w: &mut W) -> std::io::Result<()> {
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut *w, self)?;
                writeln!(w)
            }
            Format::Csv => self.write_csv(w),
        }
    }

    pub fn render(&self, format: Format) -> String {
        let mut buf = Vec::new();
        self.write(format, &mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("report is valid UTF-8")
    }

    fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# tool: {} {}", self.tool, self.version)?;
        writeln!(w, "# command: {}", self.command)?;
        for (k, v) in &self.config {
            writeln!(w, "# config.{k}: {}", scalar_text(v))?;
        }
        for (k, v) in &self.summary {
            writeln!(w, "# {k}: {}", scalar_text(v))?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.table.columns)?;
        for row in &self.table.rows {
            out.write_record(row.iter().map(scalar_text))?;
        }
        out.flush()
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Serializes a config struct into an ordered map for the header block.
pub fn config_map<T: Serialize>(cfg: &T) -> Map<String, Value> {
    match serde_json::to_value(cfg) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

/// JSON number, with NaN rendered as null.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Report {
        let mut cfg = Map::new();
        cfg.insert("r".into(), json!(2));
        cfg.insert("input".into(), json!("synthetic"));
        let mut rep = Report::new("pca", cfg);
        rep.set("cpav_percent", num(99.5));
        rep.table = Table {
            columns: vec!["variable".into(), "PC1".into()],
            rows: vec![vec![json!("X1"), num(0.5)], vec![json!("X2"), num(-0.25)]],
        };
        rep
    }

    #[test]
    fn csv_has_header_block_and_table() {
        let text = sample().render(Format::Csv);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# tool: alspca "));
        assert_eq!(lines[1], "# command: pca");
        assert!(lines.contains(&"# config.r: 2"));
        assert!(lines.contains(&"# config.input: synthetic"));
        assert!(lines.contains(&"# cpav_percent: 99.5"));
        assert!(lines.contains(&"variable,PC1"));
        assert!(lines.contains(&"X2,-0.25"));
    }

    #[test]
    fn json_round_trips() {
        let text = sample().render(Format::Json);
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["command"], "pca");
        assert_eq!(v["config"]["r"], 2);
        assert_eq!(v["table"]["rows"][1][1], -0.25);
    }

    #[test]
    fn nan_becomes_null() {
        assert_eq!(num(f64::NAN), Value::Null);
    }
}
