//! Result tables and their CSV and json-like renderings.

use std::fmt::Write;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Missing,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Num)
    }
}

/// Twelve significant digits in scientific notation.
pub fn format_num(v: f64) -> String {
    if v == 0.0 {
        // avoid a signed zero in the output
        return format!("{:.11e}", 0.0);
    }
    format!("{v:.11e}")
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> String {
        match self {
            Cell::Num(v) if v.is_finite() => format_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => json_string(s),
            _ => "null".to_string(),
        }
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialise")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Scalar results reported alongside the rows.
    pub summary: Vec<(String, Cell)>,
}

/// Everything needed to reproduce a run.
pub struct Metadata<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config: Vec<String>,
}

const UNITS: &str = "all quantities dimensionless";

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), ..Self::default() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self, meta: &Metadata) -> String {
        let mut out = String::new();
        writeln!(out, "# tool = breakaway {}", env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(out, "# command = {}", meta.command).unwrap();
        writeln!(out, "# seed = {}", meta.seed).unwrap();
        writeln!(out, "# units = {UNITS}").unwrap();
        for line in &meta.config {
            writeln!(out, "# config {line}").unwrap();
        }
        for (k, v) in &self.summary {
            writeln!(out, "# summary {k} = {}", v.csv()).unwrap();
        }
        writeln!(out, "{}", self.columns.join(",")).unwrap();
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }

    pub fn to_json_like(&self, meta: &Metadata) -> String {
        let mut out = String::from("{\n");
        writeln!(out, "  \"tool\": {},", json_string(&format!("breakaway {}", env!("CARGO_PKG_VERSION")))).unwrap();
        writeln!(out, "  \"command\": {},", json_string(meta.command)).unwrap();
        writeln!(out, "  \"seed\": {},", meta.seed).unwrap();
        writeln!(out, "  \"units\": {},", json_string(UNITS)).unwrap();
        let config: Vec<String> = meta
            .config
            .iter()
            .map(|line| {
                let (k, v) = line.split_once(" = ").unwrap_or((line, ""));
                format!("    {}: {}", json_string(k), json_string(v))
            })
            .collect();
        writeln!(out, "  \"config\": {{\n{}\n  }},", config.join(",\n")).unwrap();
        let summary: Vec<String> =
            self.summary.iter().map(|(k, v)| format!("    {}: {}", json_string(k), v.json())).collect();
        if summary.is_empty() {
            out.push_str("  \"summary\": {},\n");
        } else {
            writeln!(out, "  \"summary\": {{\n{}\n  }},", summary.join(",\n")).unwrap();
        }
        let cols: Vec<String> = self.columns.iter().map(|c| json_string(c)).collect();
        writeln!(out, "  \"columns\": [{}],", cols.join(", ")).unwrap();
        let rows: Vec<String> = self
            .rows
            .iter()
            .map(|r| format!("    [{}]", r.iter().map(Cell::json).collect::<Vec<_>>().join(", ")))
            .collect();
        if rows.is_empty() {
            out.push_str("  \"rows\": []\n}\n");
        } else {
            writeln!(out, "  \"rows\": [\n{}\n  ]\n}}", rows.join(",\n")).unwrap();
        }
        out
    }
}
