use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{CliError, Result};

/// `<out>/<experiment>/`, created on demand.
#[derive(Debug, Clone)]
pub struct ExperimentDir {
    dir: PathBuf,
}

impl ExperimentDir {
    pub fn create(out: &Path, experiment: &str) -> Result<Self> {
        let dir = out.join(experiment);
        fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn file(&self, name: &str) -> Result<(PathBuf, fs::File)> {
        let path = self.dir.join(name);
        let f = fs::File::create(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok((path, f))
    }

    /// Writes `<name>.csv` with the given header through `fill`.
    pub fn csv<H, F>(&self, name: &str, header: H, fill: F) -> Result<()>
    where
        H: IntoIterator,
        H::Item: AsRef<[u8]>,
        F: FnOnce(&mut csv::Writer<BufWriter<fs::File>>) -> csv::Result<()>,
    {
        let (_, f) = self.file(&format!("{name}.csv"))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        w.write_record(header)?;
        fill(&mut w)?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Writes `<name>.csv` with a header taken from the serialized rows.
    pub fn csv_rows<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let (_, f) = self.file(&format!("{name}.csv"))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn svg(&self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(format!("{name}.svg"));
        fs::write(&path, content).map_err(|source| CliError::Io { path, source })
    }

    pub fn report<T: Serialize>(&self, report: &T) -> Result<()> {
        let (_, f) = self.file("report.json")?;
        serde_json::to_writer_pretty(BufWriter::new(f), report)?;
        Ok(())
    }
}
