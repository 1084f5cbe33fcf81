//! CSV run reports. Every table except `timings.csv` is a deterministic
//! function of the inputs and seeds.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};

pub struct Report {
    dir: PathBuf,
    timings: Vec<(String, f64)>,
}

impl Report {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating report directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), timings: Vec::new() })
    }

    pub fn table<I>(&self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        log::debug!("wrote {}", path.display());
        Ok(())
    }

    /// Runs `f`, recording its wall-clock time under `stage`.
    pub fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        self.timings.push((stage.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn finish(self) -> Result<()> {
        let rows: Vec<_> = self.timings.iter().map(|(s, t)| vec![s.clone(), format!("{t:.6}")]).collect();
        self.table("timings.csv", &["stage", "seconds"], rows)
    }
}

/// Shortest decimal that reads back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// `id,label` rows.
pub fn labels_table<'a>(ids: impl IntoIterator<Item = &'a String>, labels: &[usize]) -> Vec<Vec<String>> {
    ids.into_iter().zip(labels).map(|(id, l)| vec![id.clone(), l.to_string()]).collect()
}
