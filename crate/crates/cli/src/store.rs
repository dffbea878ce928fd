//! Output directories, resumable manifests and the cell scheduler.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::plan::ExperimentPlan;

/// Default output directory when neither the plan nor the command line
/// names one.
pub const OUT_ENV: &str = "MDLSEL_OUT";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("mdlsel-out"))
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(RunDir {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes through a temporary file so readers never see half a file.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(&self, name: &str) -> Result<Vec<u8>> {
        let path = self.path(name);
        fs::read(&path).map_err(|e| CliError::io(&path, e))
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }
}

/// Progress record of one pipeline stage. Everything except `updated_at`
/// is a function of the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub plan: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub completed: Vec<String>,
    pub outputs: Vec<String>,
    pub finished: bool,
    pub updated_at: u64,
}

impl Manifest {
    pub fn file_name(stage: &str) -> String {
        format!("{stage}.manifest.json")
    }

    /// Loads the stage manifest, or starts a fresh one. A manifest written
    /// for a different plan is an error rather than silently overwritten.
    pub fn open(dir: &RunDir, stage: &str, plan: &ExperimentPlan) -> Result<Self> {
        let hash = plan.config_hash();
        let name = Self::file_name(stage);
        if dir.exists(&name) {
            let m: Manifest = serde_json::from_slice(&dir.read(&name)?)?;
            if m.config_hash != hash {
                return Err(CliError::HashMismatch {
                    dir: dir.root().to_path_buf(),
                    expected: hash,
                    found: m.config_hash,
                });
            }
            return Ok(m);
        }
        Ok(Manifest {
            stage: stage.into(),
            plan: plan.name.clone(),
            config_hash: hash,
            seeds: BTreeMap::new(),
            completed: Vec::new(),
            outputs: Vec::new(),
            finished: false,
            updated_at: 0,
        })
    }

    pub fn is_done(&self, key: &str) -> bool {
        self.completed.binary_search_by(|k| k.as_str().cmp(key)).is_ok()
    }

    pub fn mark_done(&mut self, key: &str, seed: u64) {
        if let Err(at) = self.completed.binary_search_by(|k| k.as_str().cmp(key)) {
            self.completed.insert(at, key.to_string());
        }
        self.seeds.insert(key.to_string(), seed);
    }

    pub fn save(&mut self, dir: &RunDir) -> Result<()> {
        self.updated_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let mut text = serde_json::to_vec_pretty(self)?;
        text.push(b'\n');
        dir.write(&Self::file_name(&self.stage), &text)?;
        Ok(())
    }
}

/// Runs `compute` over `cells` on a pool of `jobs` threads. Results are
/// handed to `merge` on the calling thread as they complete. Every cell
/// runs even if some fail; the first failure is returned at the end.
pub fn schedule<C, T, F, G>(cells: &[C], jobs: Option<usize>, compute: F, mut merge: G) -> Result<()>
where
    C: Sync,
    T: Send,
    F: Fn(&C) -> Result<T> + Sync,
    G: FnMut(usize, T) -> Result<()>,
{
    if cells.is_empty() {
        return Ok(());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Plan(format!("thread pool: {e}")))?;
    let mut failures: Vec<CliError> = Vec::new();
    let compute = &compute;
    pool.in_place_scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for (i, cell) in cells.iter().enumerate() {
            let tx = tx.clone();
            scope.spawn(move |_| {
                let _ = tx.send((i, compute(cell)));
            });
        }
        drop(tx);
        for (i, result) in rx {
            if let Err(e) = result.and_then(|v| merge(i, v)) {
                failures.push(e);
            }
        }
    });
    match failures.len() {
        0 => Ok(()),
        failed => Err(CliError::Cells {
            failed,
            total: cells.len(),
            first: Box::new(failures.swap_remove(0)),
        }),
    }
}

/// Leading `# config_hash=...` comment of a CSV payload, if any.
pub fn csv_config_hash(text: &str) -> Option<&str> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.trim_start_matches('#').trim().strip_prefix("config_hash="))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdlsel_core::TaskConfig;

    #[test]
    fn manifest_resume_and_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path()).unwrap();
        let plan = ExperimentPlan::desk("m", TaskConfig::scenario_a(0.25));
        let mut m = Manifest::open(&dir, "sweep", &plan).unwrap();
        m.mark_done("b", 2);
        m.mark_done("a", 1);
        m.mark_done("b", 2);
        m.save(&dir).unwrap();
        let back = Manifest::open(&dir, "sweep", &plan).unwrap();
        assert_eq!(back.completed, vec!["a", "b"]);
        assert!(back.is_done("a") && !back.is_done("c"));
        let mut other = plan.clone();
        other.seed = 9;
        assert!(matches!(
            Manifest::open(&dir, "sweep", &other),
            Err(CliError::HashMismatch { .. })
        ));
    }

    #[test]
    fn scheduler_merges_everything_and_reports_failures() {
        let cells: Vec<u32> = (0..20).collect();
        let mut seen = Vec::new();
        schedule(&cells, Some(2), |&c| Ok(c * 2), |i, v| {
            seen.push((i, v));
            Ok(())
        })
        .unwrap();
        seen.sort();
        assert_eq!(seen, (0..20).map(|i| (i as usize, i * 2)).collect::<Vec<_>>());

        let mut merged = 0;
        let err = schedule(
            &cells,
            Some(1),
            |&c| if c % 5 == 0 { Err(CliError::Missing(format!("{c}"))) } else { Ok(c) },
            |_, _| {
                merged += 1;
                Ok(())
            },
        )
        .unwrap_err();
        assert!(matches!(err, CliError::Cells { failed: 4, total: 20, .. }));
        assert_eq!(merged, 16);
    }

    #[test]
    fn reads_hash_comment() {
        assert_eq!(csv_config_hash("# config_hash=ab12\nx,y\n"), Some("ab12"));
        assert_eq!(csv_config_hash("x,y\n# config_hash=ab12\n"), None);
    }
}
