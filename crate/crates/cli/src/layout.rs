//! Wide-format CSV panels: one time column plus one column per matrix cell,
//! placed through a JSON layout.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use mecm::MatrixSeries;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Placement of CSV columns in the `N₁ x N₂` observation matrix. Cell
/// indices are zero-based `[row, col]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelLayout {
    pub time_column: String,
    #[serde(rename = "rows")]
    pub row_labels: Vec<String>,
    #[serde(rename = "cols")]
    pub col_labels: Vec<String>,
    #[serde(rename = "map")]
    pub column_map: BTreeMap<String, (usize, usize)>,
}

impl PanelLayout {
    /// Layout with columns named `<row>_<col>` for the given labels.
    pub fn from_labels(time_column: &str, row_labels: Vec<String>, col_labels: Vec<String>) -> Self {
        let mut column_map = BTreeMap::new();
        for (i, r) in row_labels.iter().enumerate() {
            for (j, c) in col_labels.iter().enumerate() {
                column_map.insert(format!("{r}_{c}"), (i, j));
            }
        }
        Self {
            time_column: time_column.to_string(),
            row_labels,
            col_labels,
            column_map,
        }
    }

    /// Default layout for simulated panels: rows `R1..`, columns `C1..`.
    pub fn generic(n1: usize, n2: usize) -> Self {
        Self::from_labels(
            "t",
            (1..=n1).map(|i| format!("R{i}")).collect(),
            (1..=n2).map(|j| format!("C{j}")).collect(),
        )
    }

    pub fn n1(&self) -> usize {
        self.row_labels.len()
    }

    pub fn n2(&self) -> usize {
        self.col_labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Layout(m));
        if self.row_labels.is_empty() || self.col_labels.is_empty() {
            return bad("rows and cols must be non-empty".into());
        }
        let cells = self.n1() * self.n2();
        if self.column_map.len() != cells {
            return bad(format!(
                "map has {} columns but the panel has {} cells",
                self.column_map.len(),
                cells
            ));
        }
        if self.column_map.contains_key(&self.time_column) {
            return bad(format!("time column '{}' is also mapped to a cell", self.time_column));
        }
        let mut seen = HashSet::new();
        for (name, &(i, j)) in &self.column_map {
            if i >= self.n1() || j >= self.n2() {
                return bad(format!(
                    "column '{name}' maps to [{i}, {j}], outside the {}x{} panel",
                    self.n1(),
                    self.n2()
                ));
            }
            if !seen.insert((i, j)) {
                return bad(format!("cell [{i}, {j}] is mapped more than once"));
            }
        }
        Ok(())
    }

    /// Mapped column names in column-major cell order.
    pub fn ordered_columns(&self) -> Vec<&str> {
        let mut cols: Vec<(&str, (usize, usize))> =
            self.column_map.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        cols.sort_by_key(|&(_, (i, j))| (j, i));
        cols.into_iter().map(|(k, _)| k).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let layout: Self = read_json(path)?;
        layout.validate()?;
        Ok(layout)
    }
}

/// Companion layout path for a CSV: `data.csv` becomes `data.layout.json`.
pub fn layout_path_for(csv: &Path) -> PathBuf {
    csv.with_extension("layout.json")
}

/// Time-indexed panel of matrix observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub times: Vec<String>,
    pub series: MatrixSeries,
}

fn compare_times(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        _ => a.cmp(b),
    }
}

pub fn load_csv(path: &Path, layout: &PanelLayout) -> Result<Panel> {
    layout.validate()?;
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(csv_err)?.clone();
    let position = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| CliError::Input {
            path: path.to_path_buf(),
            message: format!("header has no column '{name}'"),
        })
    };
    let time_idx = position(&layout.time_column)?;
    let cells: Vec<(usize, &str, (usize, usize))> = layout
        .column_map
        .iter()
        .map(|(name, &cell)| Ok((position(name)?, name.as_str(), cell)))
        .collect::<Result<_>>()?;

    let mut times: Vec<String> = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let data_err = |column: &str, message: String| CliError::Data {
            path: path.to_path_buf(),
            line,
            column: column.to_string(),
            message,
        };
        let time = record.get(time_idx).unwrap_or("").to_string();
        if time.is_empty() {
            return Err(data_err(&layout.time_column, "missing time value".into()));
        }
        if let Some(prev) = times.last() {
            if compare_times(prev, &time) != Ordering::Less {
                return Err(data_err(
                    &layout.time_column,
                    format!("time '{time}' does not strictly follow '{prev}'"),
                ));
            }
        }
        let mut y = DMatrix::zeros(layout.n1(), layout.n2());
        for &(idx, name, (i, j)) in &cells {
            let raw = record.get(idx).unwrap_or("");
            if raw.is_empty() {
                return Err(data_err(name, "missing value".into()));
            }
            let value: f64 = raw
                .parse()
                .map_err(|_| data_err(name, format!("cannot parse '{raw}' as a number")))?;
            if !value.is_finite() {
                return Err(data_err(name, format!("non-finite value '{raw}'")));
            }
            y[(i, j)] = value;
        }
        times.push(time);
        data.push(y);
    }
    if data.is_empty() {
        return Err(CliError::Input {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    Ok(Panel {
        times,
        series: MatrixSeries::new(data)?,
    })
}

pub fn write_csv(path: &Path, panel: &Panel, layout: &PanelLayout) -> Result<()> {
    layout.validate()?;
    let columns = layout.ordered_columns();
    let header = std::iter::once(layout.time_column.as_str()).chain(columns.iter().copied());
    let rows = panel.times.iter().zip(panel.series.iter()).map(|(time, y)| {
        std::iter::once(time.clone())
            .chain(columns.iter().map(|c| {
                let (i, j) = layout.column_map[*c];
                y[(i, j)].to_string()
            }))
            .collect::<Vec<_>>()
    });
    write_table(path, header, rows)
}

/// Writes a header and string rows as CSV.
pub fn write_table<'a, H, R>(path: &Path, header: H, rows: R) -> Result<()>
where
    H: IntoIterator<Item = &'a str>,
    R: IntoIterator<Item = Vec<String>>,
{
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    writer.write_record(header).map_err(csv_err)?;
    for row in rows {
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::io::Write::write_all(&mut w, b"\n").map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
