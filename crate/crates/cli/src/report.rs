//! Method × dataset summary tables (mean ± std over seeds).

use std::path::Path;

use armacell::training::mean_std;

use crate::data::{write_csv, write_file};
use crate::error::Result;

/// Per-seed values of one table cell; `failed` seeds carry no value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellValues {
    pub values: Vec<f64>,
    pub failed: usize,
}

impl CellValues {
    pub fn summary(&self) -> Option<(f64, f64)> {
        (!self.values.is_empty()).then(|| mean_std(&self.values))
    }

    fn render(&self) -> String {
        let Some((m, s)) = self.summary() else {
            return if self.failed > 0 { "failed".into() } else { "".into() };
        };
        let mut text = format!("{m:.4}±{s:.4}");
        if self.failed > 0 {
            let n = self.values.len();
            text.push_str(&format!(" ({n}/{} ok)", n + self.failed));
        }
        text
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub metric: String,
    pub columns: Vec<String>,
    /// Row label and one cell per column (`None` where the method does not apply).
    pub rows: Vec<(String, Vec<Option<CellValues>>)>,
}

impl Table {
    /// Row index of the smallest mean in each column.
    pub fn column_minima(&self) -> Vec<Option<usize>> {
        (0..self.columns.len())
            .map(|c| {
                self.rows
                    .iter()
                    .enumerate()
                    .filter_map(|(r, (_, cells))| {
                        cells[c].as_ref()?.summary().map(|(m, _)| (r, m))
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(r, _)| r)
            })
            .collect()
    }

    fn header(&self) -> Vec<String> {
        std::iter::once("method".to_string())
            .chain(self.columns.iter().cloned())
            .collect()
    }

    fn rendered_rows(&self, bold: bool) -> Vec<Vec<String>> {
        let minima = self.column_minima();
        self.rows
            .iter()
            .enumerate()
            .map(|(r, (label, cells))| {
                std::iter::once(label.clone())
                    .chain(cells.iter().enumerate().map(|(c, cell)| {
                        let text = cell.as_ref().map(CellValues::render).unwrap_or_default();
                        if bold && minima[c] == Some(r) {
                            format!("**{text}**")
                        } else {
                            text
                        }
                    }))
                    .collect()
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = self.header();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(path, &header, &self.rendered_rows(false))
    }

    /// Markdown table; the best mean of every column is in bold.
    pub fn to_text(&self) -> String {
        let header = self.header();
        let rows = self.rendered_rows(true);
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                rows.iter()
                    .map(|r| r[c].chars().count())
                    .chain([header[c].chars().count(), 3])
                    .max()
                    .unwrap_or(3)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let mut out = format!("{} (mean ± std over seeds)\n\n", self.metric);
        out.push_str(&line(&header));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&line(&rule));
        for r in &rows {
            out.push_str(&line(r));
        }
        out
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text())
    }
}
