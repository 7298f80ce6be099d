use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{Map, Number, Value};

use crate::Format;

fn cell(text: &str) -> Value {
    if let Ok(i) = text.parse::<i64>() {
        return Value::from(i);
    }
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Number::from_f64(v).map_or(Value::Null, Value::Number),
        Ok(_) => Value::Null,
        Err(_) if text == "NA" || text.is_empty() => Value::Null,
        Err(_) => Value::String(text.to_string()),
    }
}

/// Rewrites a headed TSV table as JSON lines keyed by the header.
pub fn tsv_to_jsonl(tsv: &str) -> String {
    let mut lines = tsv.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let columns: Vec<&str> = header.split('\t').collect();
    let mut out = String::new();
    for line in lines {
        let row: Map<String, Value> = columns
            .iter()
            .zip(line.split('\t'))
            .map(|(c, v)| (c.to_string(), cell(v)))
            .collect();
        out.push_str(&Value::Object(row).to_string());
        out.push('\n');
    }
    out
}

pub fn emit(out: Option<&Path>, format: Format, tsv: &str) -> Result<()> {
    let text = match format {
        Format::Tsv => tsv.to_string(),
        Format::Jsonl => tsv_to_jsonl(tsv),
    };
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}
