//! Atomic file output and the small delimited tables the commands emit.

use std::io::Write;
use std::path::Path;

use ldgd_core::decode::TestLatent;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Writes through a temporary file in the target directory, then renames.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    s.push('\n');
    atomic_write(path, &s)
}

/// Comma-separated rows built from string cells.
pub struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Result<Self> {
        let mut t = Self {
            w: csv::Writer::from_writer(Vec::new()),
        };
        t.row(header)?;
        Ok(t)
    }

    pub fn row<S: AsRef<str>>(&mut self, cells: &[S]) -> Result<()> {
        self.w
            .write_record(cells.iter().map(|c| c.as_ref()))
            .map_err(|e| CliError::Config(format!("table: {e}")))
    }

    pub fn finish(self) -> Result<String> {
        let bytes = self
            .w
            .into_inner()
            .map_err(|e| CliError::Config(format!("table: {e}")))?;
        String::from_utf8(bytes).map_err(|e| CliError::Config(format!("table: {e}")))
    }
}

/// `trial_id, <prefix>0..` rows of a matrix.
pub fn matrix_table(ids: &[String], prefix: &str, m: &DMatrix<f64>) -> Result<String> {
    let mut header = vec!["trial_id".to_string()];
    header.extend((0..m.ncols()).map(|j| format!("{prefix}{j}")));
    let mut t = Table::new(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(m.row(i).iter().map(|v| v.to_string()));
        t.row(&row)?;
    }
    t.finish()
}

/// `trial_id, mu_0.., scale_0..` rows.
pub fn latent_table(ids: &[String], latent: &TestLatent) -> Result<String> {
    let q = latent.q();
    let mut header = vec!["trial_id".to_string()];
    header.extend((0..q).map(|j| format!("mu_{j}")));
    header.extend((0..q).map(|j| format!("scale_{j}")));
    let mut t = Table::new(&header)?;
    let scale = latent.scale();
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(latent.mu_star.row(i).iter().map(|v| v.to_string()));
        row.extend(scale.row(i).iter().map(|v| v.to_string()));
        t.row(&row)?;
    }
    t.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        atomic_write(&p, "one").unwrap();
        atomic_write(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path().join("sub")).unwrap().count(), 1);
    }

    #[test]
    fn latent_table_shape() {
        let lat = TestLatent::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 3)).unwrap();
        let t = latent_table(&["a".into(), "b".into()], &lat).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "trial_id,mu_0,mu_1,mu_2,scale_0,scale_1,scale_2");
        assert_eq!(lines[1], "a,0,0,0,1,1,1");
    }
}
