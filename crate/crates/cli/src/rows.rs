//! Result rows and CSV emission.
//!
//! Every command materializes its output as a list of [`ResultRow`]s with an
//! identical column shape, serialized as RFC-4180-style CSV with a header
//! row, '.' decimal separator and 12 significant digits. Output is
//! byte-identical across runs for identical inputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use prio_market_core::Regime;

/// One cell: a number, text, or empty (error rows leave numerics empty).
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

/// Per-CP outcome columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpColumns {
    pub d: f64,
    pub p: f64,
    pub n: f64,
    pub n1: f64,
    pub n2: f64,
    pub revenue: f64,
}

/// One output row; the column set is fixed per command.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultRow {
    pub scenario_id: String,
    /// Swept values, (column label, value), identical labels across a sweep.
    pub sweep: Vec<(String, f64)>,
    pub regime: Option<Regime>,
    /// Per-CP blocks; present iff the command reports per-CP outcomes.
    pub per_cp: Option<Vec<CpColumns>>,
    pub isp_profit: Option<f64>,
    pub welfare_closed: Option<f64>,
    pub welfare_numeric: Option<f64>,
    pub oracle_max_error: Option<f64>,
    pub adjacency_violations: Option<u64>,
    /// Recipe-specific named columns, appended after the standard block.
    pub extras: Vec<(String, Cell)>,
    /// Error marker: set when a sweep point was infeasible.
    pub error: Option<String>,
    /// Modeling-choice metadata (menu grids, capacity policy, mode).
    pub notes: Option<String>,
}

impl ResultRow {
    pub fn new(scenario_id: impl Into<String>) -> Self {
        ResultRow {
            scenario_id: scenario_id.into(),
            ..Default::default()
        }
    }

    /// Marks the row as failed, clearing every numeric column.
    pub fn with_error(mut self, message: impl Into<String>) -> Self {
        self.error = Some(message.into());
        self.regime = None;
        self.per_cp = None;
        self.isp_profit = None;
        self.welfare_closed = None;
        self.welfare_numeric = None;
        self.oracle_max_error = None;
        self.adjacency_violations = None;
        for (_, cell) in self.extras.iter_mut() {
            *cell = Cell::Empty;
        }
        self
    }
}

/// Formats with 12 significant digits and a '.' separator; deterministic.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (11 - exp).max(0) as usize;
    format!("{:.*}", decimals, x)
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn cell_str(cell: &Cell) -> String {
    match cell {
        Cell::Num(x) => format_sig(*x),
        Cell::Int(i) => i.to_string(),
        Cell::Text(t) => csv_escape(t),
        Cell::Empty => String::new(),
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(format_sig).unwrap_or_default()
}

/// Builds the header for a row shape.
fn header(row: &ResultRow, per_cp_count: usize) -> Vec<String> {
    let mut cols = vec!["scenario_id".to_string()];
    for (label, _) in &row.sweep {
        cols.push(label.clone());
    }
    cols.push("regime".into());
    for j in 1..=per_cp_count {
        for field in ["d", "p", "n", "n1", "n2", "revenue"] {
            cols.push(format!("{field}_{j}"));
        }
    }
    cols.push("isp_profit".into());
    cols.push("welfare_closed".into());
    cols.push("welfare_numeric".into());
    cols.push("oracle_max_error".into());
    cols.push("adjacency_violations".into());
    for (label, _) in &row.extras {
        cols.push(label.clone());
    }
    cols.push("error".into());
    cols.push("notes".into());
    cols
}

fn render(row: &ResultRow, per_cp_count: usize) -> Vec<String> {
    let mut out = vec![csv_escape(&row.scenario_id)];
    for (_, v) in &row.sweep {
        out.push(format_sig(*v));
    }
    out.push(row.regime.map(|r| r.to_string()).unwrap_or_default());
    if per_cp_count > 0 {
        match &row.per_cp {
            Some(blocks) => {
                for b in blocks {
                    out.push(format_sig(b.d));
                    out.push(format_sig(b.p));
                    out.push(format_sig(b.n));
                    out.push(format_sig(b.n1));
                    out.push(format_sig(b.n2));
                    out.push(format_sig(b.revenue));
                }
            }
            None => out.extend(std::iter::repeat_n(String::new(), 6 * per_cp_count)),
        }
    }
    out.push(opt_num(row.isp_profit));
    out.push(opt_num(row.welfare_closed));
    out.push(opt_num(row.welfare_numeric));
    out.push(opt_num(row.oracle_max_error));
    out.push(
        row.adjacency_violations
            .map(|v| v.to_string())
            .unwrap_or_default(),
    );
    for (_, cell) in &row.extras {
        out.push(cell_str(cell));
    }
    out.push(row.error.as_deref().map(csv_escape).unwrap_or_default());
    out.push(row.notes.as_deref().map(csv_escape).unwrap_or_default());
    out
}

/// Serializes rows to CSV text: header plus one line per row.
///
/// All rows must share the first row's shape (same sweep labels, same per-CP
/// width, same extras). Finite-ness of the standard numeric columns is
/// enforced for non-error rows.
pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String, String> {
    let first = rows.first().ok_or("no rows to emit")?;
    // Error rows drop their per-CP block; the header width comes from any
    // row that kept one.
    let shape_cp = rows
        .iter()
        .find_map(|r| r.per_cp.as_ref().map(|b| b.len()))
        .unwrap_or(0);
    let cols = header(first, shape_cp);
    let mut lines = Vec::with_capacity(rows.len() + 1);
    lines.push(cols.join(","));
    for (i, row) in rows.iter().enumerate() {
        let row_cp = row.per_cp.as_ref().map(|b| b.len()).unwrap_or(0);
        if row_cp != 0 && row_cp != shape_cp {
            return Err(format!(
                "row {i}: per-CP width {row_cp} differs from header width {shape_cp}"
            ));
        }
        if row.error.is_none() {
            let finite = row
                .per_cp
                .iter()
                .flatten()
                .flat_map(|b| [b.d, b.p, b.n, b.n1, b.n2, b.revenue])
                .chain(row.isp_profit)
                .chain(row.welfare_closed)
                .chain(row.welfare_numeric)
                .chain(row.oracle_max_error)
                .all(f64::is_finite);
            if !finite {
                return Err(format!("row {i}: non-finite value in a non-error row"));
            }
        }
        let rendered = render(row, shape_cp);
        if rendered.len() != cols.len() {
            return Err(format!(
                "row {i}: {} fields against {} header columns",
                rendered.len(),
                cols.len()
            ));
        }
        lines.push(rendered.join(","));
    }
    let mut text = lines.join("\n");
    text.push('\n');
    Ok(text)
}

/// Writes rows as a CSV file.
pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<(), String> {
    let text = rows_to_csv(rows)?;
    let mut file = fs::File::create(path).map_err(|e| format!("cannot write {path:?}: {e}"))?;
    file.write_all(text.as_bytes())
        .map_err(|e| format!("cannot write {path:?}: {e}"))?;
    Ok(())
}
