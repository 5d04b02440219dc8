//! Rendering of command summaries as aligned text, CSV or JSON.

use serde_json::Value;

use crate::cli::Format;

#[derive(Debug)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<S: ToString>(&mut self, cells: impl IntoIterator<Item = S>) {
        self.rows
            .push(cells.into_iter().map(|c| c.to_string()).collect());
    }

    /// Two-column metric/value table.
    pub fn metrics<S: ToString>(pairs: impl IntoIterator<Item = (&'static str, S)>) -> Self {
        let mut t = Table::new(["metric", "value"]);
        for (k, v) in pairs {
            t.row([k.to_string(), v.to_string()]);
        }
        t
    }

    fn render_text(&self, out: &mut String) {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String], out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(&self.headers, out);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&rule, out);
        for row in &self.rows {
            line(row, out);
        }
    }

    fn render_csv(&self, out: &mut String) {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        out.push_str(
            &String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells"),
        );
    }
}

/// What a command prints: tables for people and CSV, a JSON value for programs.
#[derive(Debug)]
pub struct Report {
    pub title: String,
    pub tables: Vec<Table>,
    pub lines: Vec<String>,
    pub json: Value,
}

impl Report {
    pub fn new(title: impl Into<String>, json: Value) -> Self {
        Self {
            title: title.into(),
            tables: Vec::new(),
            lines: Vec::new(),
            json,
        }
    }

    pub fn render(&self, format: Format) -> String {
        let mut out = String::new();
        match format {
            Format::Json => {
                out = serde_json::to_string_pretty(&self.json).expect("report serializes");
                out.push('\n');
            }
            Format::Csv => {
                for (i, t) in self.tables.iter().enumerate() {
                    if i > 0 {
                        out.push('\n');
                    }
                    t.render_csv(&mut out);
                }
            }
            Format::Text => {
                out.push_str(&self.title);
                out.push('\n');
                for t in &self.tables {
                    out.push('\n');
                    t.render_text(&mut out);
                }
                if !self.lines.is_empty() {
                    out.push('\n');
                }
                for l in &self.lines {
                    out.push_str(l);
                    out.push('\n');
                }
            }
        }
        out
    }
}
