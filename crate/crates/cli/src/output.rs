//! CSV artifacts with provenance and timestamp comment lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use homog_core::coeffs::Mat;
use homog_core::io::fmt_f64;

/// Prefix of the only line allowed to differ between identical runs.
pub const TIMESTAMP_PREFIX: &str = "# generated unix=";

#[derive(Clone, Debug, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Row) {
        assert_eq!(
            row.0.len(),
            self.header.len(),
            "row width does not match the header"
        );
        self.rows.push(row.0);
    }

    /// Two comment lines (provenance, timestamp), the header, then the rows.
    pub fn render(&self, provenance: &str) -> String {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut s = String::new();
        let _ = writeln!(s, "# {}", provenance.replace(['\n', '\r'], " "));
        let _ = writeln!(s, "{TIMESTAMP_PREFIX}{stamp}");
        let line = |cells: &[String]| cells.iter().map(|c| quote(c)).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "{}", line(&self.header));
        for r in &self.rows {
            let _ = writeln!(s, "{}", line(r));
        }
        s
    }
}

/// Builder for one CSV row.
#[derive(Clone, Debug, Default)]
pub struct Row(Vec<String>);

impl Row {
    pub fn new() -> Self {
        Row(Vec::new())
    }

    pub fn text(mut self, s: impl ToString) -> Self {
        self.0.push(s.to_string());
        self
    }

    pub fn num(mut self, x: f64) -> Self {
        self.0.push(fmt_f64(x));
        self
    }

    pub fn nums(mut self, xs: &[f64]) -> Self {
        self.0.extend(xs.iter().map(|&x| fmt_f64(x)));
        self
    }

    /// Row-major entries.
    pub fn mat(self, m: &Mat) -> Self {
        let c = m.ncols();
        let flat: Vec<f64> = (0..m.nrows() * c).map(|l| m[(l / c, l % c)]).collect();
        self.nums(&flat)
    }
}

/// Column names `{prefix}_1 .. {prefix}_d`.
pub fn vec_cols(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

/// Column names `{prefix}_11 .. {prefix}_dd`, row-major.
pub fn mat_cols(prefix: &str, d: usize) -> Vec<String> {
    (1..=d)
        .flat_map(|i| (1..=d).map(move |j| format!("{prefix}_{i}{j}")))
        .collect()
}

/// Output directory plus the files written so far.
#[derive(Debug)]
pub struct Sink {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)?;
        log::info!("wrote {}", path.display());
        self.written.push(path.clone());
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_with_commas_are_quoted() {
        let mut t = Table::new(["direction", "value"]);
        t.push(Row::new().text("k=[1,2]").num(0.5));
        let s = t.render("homog test");
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# homog test");
        assert!(lines[1].starts_with(TIMESTAMP_PREFIX));
        assert_eq!(lines[2], "direction,value");
        assert_eq!(lines[3], "\"k=[1,2]\",5.0000000000000000e-1");
    }

    #[test]
    fn matrices_flatten_row_major() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let Row(cells) = Row::new().mat(&m);
        let back: Vec<f64> = cells.iter().map(|c| c.parse().unwrap()).collect();
        assert_eq!(back, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mat_cols("a", 2), vec!["a_11", "a_12", "a_21", "a_22"]);
    }

    #[test]
    #[should_panic(expected = "row width")]
    fn ragged_rows_are_rejected() {
        let mut t = Table::new(["a", "b"]);
        t.push(Row::new().num(1.0));
    }
}
