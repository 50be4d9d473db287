use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;

pub const GIT_DESCRIBE: &str = env!("MGIC_GIT_DESCRIBE");

/// Where a result came from; written as the last line of every CSV.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub extra: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: String) -> Self {
        Provenance { seed, config_hash, extra: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    pub fn line(&self) -> String {
        let mut s = format!("#git-describe={},#seed={},#config-hash={}", GIT_DESCRIBE, self.seed, self.config_hash);
        for (k, v) in &self.extra {
            let _ = write!(s, ",#{k}={v}");
        }
        s
    }
}

/// A CSV table held in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, prov: &Provenance) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s.push_str(&prov.line());
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path, name: &str, prov: &Provenance) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(name);
        std::fs::write(&path, self.render(prov))?;
        Ok(path)
    }
}

pub fn write_json<S: serde::Serialize>(dir: &Path, name: &str, value: &S) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| crate::error::Error::Contract(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_trailer() {
        let mut t = Table::new(&["epoch", "train_mse"]);
        t.push(vec!["0".into(), num(0.5)]);
        let text = t.render(&Provenance::new(7, "abc".into()).with("head-width", 2));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_mse");
        assert_eq!(lines[1], "0,0.5");
        assert!(lines[2].starts_with("#git-describe="));
        assert!(lines[2].ends_with(",#seed=7,#config-hash=abc,#head-width=2"));
    }
}
