use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Flat key=value run summary. Floats keep 17 significant digits.
#[derive(Default)]
pub struct Summary {
    lines: Vec<(String, String)>,
}

impl Summary {
    pub fn text(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    pub fn float(&mut self, key: &str, value: f64) -> &mut Self {
        self.text(key, format!("{value:.16e}"))
    }

    pub fn opt_float(&mut self, key: &str, value: Option<f64>) -> &mut Self {
        match value {
            Some(v) => self.float(key, v),
            None => self.text(key, "none"),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// A run directory, created on first use.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<RunDir> {
        fs::create_dir_all(path).with_context(|| format!("creating output directory {}", path.display()))?;
        Ok(RunDir { path: path.to_path_buf() })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let p = self.file(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    /// Writes a CSV with the given header and rows of floats.
    pub fn write_rows(&self, name: &str, header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let p = self.file(name);
        let mut out = std::io::BufWriter::new(fs::File::create(&p).with_context(|| format!("writing {}", p.display()))?);
        writeln!(out, "{header}")?;
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}
