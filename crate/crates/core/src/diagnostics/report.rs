use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::training::csv_err;

/// Writes a header row then one row per record.
pub fn write_csv_rows(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text `key: value` report.
#[derive(Clone, Debug, Default)]
pub struct Summary {
    pub title: String,
    pub entries: Vec<(String, String)>,
}

impl Summary {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let mut s = format!("{}\n", self.title);
        let width = self.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &self.entries {
            let _ = writeln!(s, "  {k:width$}  {v}");
        }
        s
    }
}
