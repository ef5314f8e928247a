//! Whitespace-separated text tables with a `#`-commented header.
//!
//! Every file starts with `# key value` lines (`kind`, `config_hash`, any
//! metadata, then `columns`), followed by one row per line. Floats are
//! written in shortest round-trip exponent form, so reading a file back
//! reproduces every value bit for bit. Files load directly with
//! `numpy.loadtxt` or gnuplot.
//!
//! Measure files hold one row per `(state, cell)` followed by an overflow
//! row with `state = cell = -1` and NaN centers.

use std::io::{BufRead, Write};

use crate::grid::Grid;
use crate::measure::{BinnedMass, GridMeasure};
use crate::Error;

/// Shortest round-trip text form of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_list<T: ToString>(vals: &[T]) -> String {
    vals.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn fmt_f64_list(vals: &[f64]) -> String {
    vals.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

/// Writes the header block. `meta` entries go between `config_hash` and
/// `columns`.
pub fn write_header<W: Write>(
    out: &mut W,
    kind: &str,
    config_hash: &str,
    meta: &[(&str, String)],
    columns: &[String],
) -> std::io::Result<()> {
    writeln!(out, "# kind {kind}")?;
    writeln!(out, "# config_hash {config_hash}")?;
    for (k, v) in meta {
        writeln!(out, "# {k} {v}")?;
    }
    writeln!(out, "# columns {}", columns.join(" "))
}

/// Header entries describing a grid.
pub fn grid_meta(grid: &Grid) -> Vec<(&'static str, String)> {
    vec![
        ("dim", grid.dim().to_string()),
        ("lo", fmt_f64_list(grid.lo())),
        ("hi", fmt_f64_list(grid.hi())),
        ("bins", fmt_list(grid.bins())),
    ]
}

/// Column names `x1..xd`.
pub fn coordinate_columns(dim: usize) -> Vec<String> {
    (1..=dim).map(|a| format!("x{a}")).collect()
}

/// A parsed table: header entries in file order and the rows' tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// File line number of each row, 1-based.
    pub row_lines: Vec<usize>,
}

impl Table {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, Error> {
        self.get(key).ok_or_else(|| Error::Format { line: 0, message: format!("missing header `{key}`") })
    }

    pub fn kind(&self) -> Result<&str, Error> {
        self.require("kind")
    }

    pub fn config_hash(&self) -> Result<&str, Error> {
        self.require("config_hash")
    }

    fn parse_header<T: std::str::FromStr>(&self, key: &str) -> Result<T, Error> {
        let v = self.require(key)?;
        v.parse().map_err(|_| Error::Format { line: 0, message: format!("bad `{key}` value `{v}`") })
    }

    fn parse_header_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, Error> {
        let v = self.require(key)?;
        v.split(',')
            .map(|t| t.parse().map_err(|_| Error::Format { line: 0, message: format!("bad `{key}` entry `{t}`") }))
            .collect()
    }

    fn grid(&self) -> Result<Grid, Error> {
        let grid =
            Grid::new(self.parse_header_list("lo")?, self.parse_header_list("hi")?, self.parse_header_list("bins")?)?;
        let dim: usize = self.parse_header("dim")?;
        if dim != grid.dim() {
            return Err(Error::Format { line: 0, message: format!("dim {dim} disagrees with the box") });
        }
        Ok(grid)
    }

    fn cell<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T, Error> {
        let line = self.row_lines[row];
        let tok = self.rows[row]
            .get(col)
            .ok_or_else(|| Error::Format { line, message: format!("missing column {}", col + 1) })?;
        tok.parse().map_err(|_| Error::Format { line, message: format!("cannot parse `{tok}`") })
    }
}

/// Reads a whole table.
pub fn read_table<R: BufRead>(input: R) -> Result<Table, Error> {
    let mut header = Vec::new();
    let mut columns = Vec::new();
    let mut rows = Vec::new();
    let mut row_lines = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if !rows.is_empty() {
                return Err(Error::Format { line: i + 1, message: "header line after data".into() });
            }
            let rest = rest.trim();
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            if k == "columns" {
                columns = v.split_whitespace().map(str::to_string).collect();
            }
            header.push((k.to_string(), v.trim().to_string()));
            continue;
        }
        let toks: Vec<String> = trimmed.split_whitespace().map(str::to_string).collect();
        if !columns.is_empty() && toks.len() != columns.len() {
            return Err(Error::Format {
                line: i + 1,
                message: format!("expected {} columns, found {}", columns.len(), toks.len()),
            });
        }
        rows.push(toks);
        row_lines.push(i + 1);
    }
    Ok(Table { header, columns, rows, row_lines })
}

fn expect_kind(table: &Table, kind: &str) -> Result<(), Error> {
    let found = table.kind()?;
    if found != kind {
        return Err(Error::Format { line: 1, message: format!("expected a `{kind}` file, found `{found}`") });
    }
    Ok(())
}

/// Writes a measure with one row per `(state, cell)` and an overflow row.
pub fn write_measure<W: Write>(out: &mut W, mu: &GridMeasure, config_hash: &str) -> std::io::Result<()> {
    let grid = mu.grid();
    let mut meta = grid_meta(grid);
    meta.push(("h", fmt_f64(mu.period())));
    meta.push(("t0", fmt_f64(mu.phase())));
    meta.push(("states", mu.n_states().to_string()));
    let mut columns = vec!["state".to_string(), "cell".into(), "weight".into()];
    columns.extend(coordinate_columns(grid.dim()));
    write_header(out, "measure", config_hash, &meta, &columns)?;
    let nc = grid.cell_count();
    let centers: Vec<String> =
        (0..nc).map(|c| grid.center(c).iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")).collect();
    for s in 0..mu.n_states() {
        for (c, w) in mu.sheet(s).iter().enumerate() {
            writeln!(out, "{s} {c} {} {}", fmt_f64(*w), centers[c])?;
        }
    }
    let nans = vec!["NaN"; grid.dim()].join(" ");
    writeln!(out, "-1 -1 {} {nans}", fmt_f64(mu.overflow()))
}

/// Reads a file written by [`write_measure`]; returns the measure and the
/// config hash.
pub fn read_measure<R: BufRead>(input: R) -> Result<(GridMeasure, String), Error> {
    let table = read_table(input)?;
    expect_kind(&table, "measure")?;
    let grid = table.grid()?;
    let h: f64 = table.parse_header("h")?;
    let t0: f64 = table.parse_header("t0")?;
    let n_states: usize = table.parse_header("states")?;
    let nc = grid.cell_count();
    let mut weights = vec![0.0; n_states * nc];
    let mut seen = vec![false; n_states * nc];
    let mut overflow = None;
    for r in 0..table.rows.len() {
        let line = table.row_lines[r];
        let s: i64 = table.cell(r, 0)?;
        let c: i64 = table.cell(r, 1)?;
        let w: f64 = table.cell(r, 2)?;
        if s == -1 && c == -1 {
            if overflow.replace(w).is_some() {
                return Err(Error::Format { line, message: "second overflow row".into() });
            }
            continue;
        }
        if s < 0 || c < 0 || s as usize >= n_states || c as usize >= nc {
            return Err(Error::Format { line, message: format!("slot ({s}, {c}) out of range") });
        }
        let slot = s as usize * nc + c as usize;
        if std::mem::replace(&mut seen[slot], true) {
            return Err(Error::Format { line, message: format!("duplicate row for ({s}, {c})") });
        }
        weights[slot] = w;
    }
    let overflow = overflow.ok_or_else(|| Error::Format { line: 0, message: "missing overflow row".into() })?;
    let mu = GridMeasure::new(grid, n_states, h, t0, weights, overflow)?;
    Ok((mu, table.config_hash()?.to_string()))
}

/// Writes a set of cells with per-cell counts.
pub fn write_cell_set<W: Write>(
    out: &mut W,
    grid: &Grid,
    cells: &[usize],
    counts: &[(&str, &[u64])],
    meta: &[(&str, String)],
    config_hash: &str,
) -> std::io::Result<()> {
    let mut all_meta = grid_meta(grid);
    all_meta.extend(meta.iter().cloned());
    all_meta.push(("cells", cells.len().to_string()));
    let mut columns = vec!["cell".to_string()];
    columns.extend(counts.iter().map(|(n, _)| n.to_string()));
    columns.extend(coordinate_columns(grid.dim()));
    write_header(out, "limit_set", config_hash, &all_meta, &columns)?;
    for &c in cells {
        write!(out, "{c}")?;
        for (_, v) in counts {
            write!(out, " {}", v[c])?;
        }
        for x in grid.center(c) {
            write!(out, " {}", fmt_f64(x))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a file written by [`write_cell_set`]: the grid, cell indices in
/// file order and the config hash.
pub fn read_cell_set<R: BufRead>(input: R) -> Result<(Grid, Vec<usize>, String), Error> {
    let table = read_table(input)?;
    expect_kind(&table, "limit_set")?;
    let grid = table.grid()?;
    let cells = (0..table.rows.len())
        .map(|r| {
            let c: usize = table.cell(r, 0)?;
            if c >= grid.cell_count() {
                return Err(Error::Format { line: table.row_lines[r], message: format!("cell {c} out of range") });
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok((grid, cells, table.config_hash()?.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(mu: &GridMeasure) -> GridMeasure {
        let mut buf = Vec::new();
        write_measure(&mut buf, mu, "abc123").unwrap();
        let (back, hash) = read_measure(buf.as_slice()).unwrap();
        assert_eq!(hash, "abc123");
        back
    }

    #[test]
    fn measure_file_layout() {
        let g = Grid::new(vec![-3.0], vec![3.0], vec![2]).unwrap();
        let mu = GridMeasure::new(g, 1, 1.0, 0.5, vec![0.25, 0.5], 0.25).unwrap();
        let mut buf = Vec::new();
        write_measure(&mut buf, &mu, "h").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# kind measure\n# config_hash h\n# dim 1\n# lo -3e0\n# hi 3e0\n# bins 2\n# h 1e0\n# t0 5e-1\n\
             # states 1\n# columns state cell weight x1\n0 0 2.5e-1 -1.5e0\n0 1 5e-1 1.5e0\n-1 -1 2.5e-1 NaN\n"
        );
    }

    #[test]
    fn rejects_broken_files() {
        let g = Grid::new(vec![0.0], vec![1.0], vec![2]).unwrap();
        let mu = GridMeasure::new(g, 1, 1.0, 0.0, vec![0.5, 0.5], 0.0).unwrap();
        let mut buf = Vec::new();
        write_measure(&mut buf, &mu, "h").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let no_overflow = text.replace("-1 -1 0e0 NaN\n", "");
        assert!(matches!(read_measure(no_overflow.as_bytes()), Err(Error::Format { .. })));
        let bad = text.replace("0 1 5e-1", "0 1 zz");
        assert!(matches!(read_measure(bad.as_bytes()), Err(Error::Format { line: 12, .. })));
        let wrong_kind = text.replace("kind measure", "kind limit_set");
        assert!(read_measure(wrong_kind.as_bytes()).is_err());
    }

    #[test]
    fn cell_set_roundtrip() {
        let g = Grid::new(vec![0.0, 0.0], vec![8.0, 1.2], vec![10, 10]).unwrap();
        let visits: Vec<u64> = (0..100).collect();
        let mut buf = Vec::new();
        write_cell_set(&mut buf, &g, &[3, 17, 99], &[("visits", &visits)], &[("h", fmt_f64(0.5))], "q").unwrap();
        let (grid, cells, hash) = read_cell_set(buf.as_slice()).unwrap();
        assert_eq!((grid, cells, hash.as_str()), (g, vec![3, 17, 99], "q"));
    }

    proptest! {
        #[test]
        fn measure_roundtrip_is_bit_exact(
            raw in proptest::collection::vec(0.0f64..1.0, 24),
            lo in -10.0f64..0.0,
            width in 0.1f64..10.0,
            phase in 0.0f64..0.7,
        ) {
            let g = Grid::new(vec![lo, lo / 3.0], vec![lo + width, lo / 3.0 + width], vec![3, 4]).unwrap();
            let total: f64 = raw.iter().sum::<f64>() + 1e-3;
            let weights: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let overflow = 1.0 - weights.iter().sum::<f64>();
            let mu = GridMeasure::new(g, 2, 0.7, phase, weights, overflow).unwrap();
            let back = roundtrip(&mu);
            prop_assert_eq!(back.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>(),
                            mu.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.overflow().to_bits(), mu.overflow().to_bits());
            prop_assert_eq!(back, mu);
        }
    }
}
