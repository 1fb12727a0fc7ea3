//! Run directory layout, completion markers and the orphan check.
//!
//! ```text
//! runs/<name>/
//!   manifest.json  splits.json
//!   checkpoints/  features/  classifiers/  reports/  plots/
//!   .markers/<job>.done
//! ```

use std::path::{Component, Path, PathBuf};

use encodermi::contrastive::write_atomic;
use encodermi::{Error, Result};
use walkdir::WalkDir;

use crate::manifest::ExperimentManifest;

pub const SUBDIRS: [&str; 5] = ["checkpoints", "features", "classifiers", "reports", "plots"];

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates (or reopens) the run directory of `manifest`, storing a copy
    /// of the manifest. Reopening with a different manifest is an error.
    pub fn open(manifest: &ExperimentManifest) -> Result<Self> {
        let root = manifest.run_dir();
        for sub in SUBDIRS.iter().chain(&[".markers"]) {
            std::fs::create_dir_all(root.join(sub))?;
        }
        let dir = Self { root };
        let copy = dir.path("manifest.json");
        if copy.exists() {
            let stored = ExperimentManifest::load(&copy)?;
            if stored != *manifest {
                return Err(Error::ConfigMismatch(format!(
                    "run directory {} was created from a different manifest (digest {} vs {}); \
                     choose another name or remove it",
                    dir.root.display(),
                    stored.digest(),
                    manifest.digest()
                )));
            }
        } else {
            write_atomic(&copy, manifest.to_json().as_bytes())?;
        }
        dir.remove_stale_temporaries()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    fn marker(&self, job: &str) -> PathBuf {
        self.root.join(".markers").join(format!("{}.done", job.replace('/', "__")))
    }

    pub fn is_done(&self, job: &str) -> bool {
        self.marker(job).exists()
    }

    pub fn mark_done(&self, job: &str) -> Result<()> {
        write_atomic(&self.marker(job), job.as_bytes())
    }

    /// Removes the markers of every job under `prefix/`.
    pub fn clear_jobs(&self, prefix: &str) -> Result<()> {
        let stem = format!("{}__", prefix.replace('/', "__"));
        for entry in std::fs::read_dir(self.root.join(".markers"))? {
            let path = entry?.path();
            if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(&stem)) {
                std::fs::remove_file(path)?;
            }
        }
        Ok(())
    }

    fn remove_stale_temporaries(&self) -> Result<()> {
        for entry in WalkDir::new(&self.root).into_iter().filter_map(|e| e.ok()) {
            let name = entry.file_name().to_string_lossy();
            if entry.file_type().is_file() && name.starts_with('.') && name.ends_with(".tmp") {
                std::fs::remove_file(entry.path())?;
            }
        }
        Ok(())
    }

    /// Files under the run directory that no part of the manifest's
    /// pipeline produces.
    pub fn orphans(&self, manifest: &ExperimentManifest) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for entry in WalkDir::new(&self.root).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Io(e.into()))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(&self.root).expect("walk stays under root").to_path_buf();
            if !is_expected(manifest, &rel, &self.root) {
                out.push(rel);
            }
        }
        Ok(out)
    }

    pub fn check_orphans(&self, manifest: &ExperimentManifest) -> Result<()> {
        let orphans = self.orphans(manifest)?;
        if orphans.is_empty() {
            return Ok(());
        }
        let list: Vec<String> = orphans.iter().map(|p| p.display().to_string()).collect();
        Err(Error::ConfigMismatch(format!("orphan artifacts in {}: {}", self.root.display(), list.join(", "))))
    }
}

fn components(rel: &Path) -> Vec<String> {
    rel.components()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect()
}

fn trial_dir(manifest: &ExperimentManifest, s: &str) -> bool {
    s.strip_prefix('t').and_then(|t| t.parse::<usize>().ok()).is_some_and(|t| t < manifest.trials)
}

fn knowledge_dir(manifest: &ExperimentManifest, s: &str) -> bool {
    manifest.knowledge_settings().iter().any(|k| k.label() == s)
}

fn checkpoint_file(manifest: &ExperimentManifest, name: &str) -> bool {
    if name == "loss.csv" {
        return true;
    }
    name.strip_prefix("epoch-")
        .and_then(|r| r.strip_suffix(".ckpt"))
        .and_then(|e| e.parse::<usize>().ok())
        .is_some_and(|e| e >= 1 && e <= manifest.target.pretrain.epochs)
}

fn is_expected(manifest: &ExperimentManifest, rel: &Path, root: &Path) -> bool {
    let parts = components(rel);
    let p: Vec<&str> = parts.iter().map(String::as_str).collect();
    let ext = |s: &str, e: &[&str]| e.iter().any(|x| s.ends_with(x));
    match p.as_slice() {
        ["manifest.json"] | ["splits.json"] => true,
        [".markers", m] => m.ends_with(".done"),
        ["checkpoints", "target", f] => checkpoint_file(manifest, f),
        ["checkpoints", "shadow", k, t, f] => knowledge_dir(manifest, k) && trial_dir(manifest, t) && checkpoint_file(manifest, f),
        ["checkpoints", "studies", _axis, _value, f] => ext(f, &[".ckpt", ".csv"]),
        ["features", f] => {
            // Cache entries come in score/sidecar pairs.
            let (stem, other) = match f.rsplit_once('.') {
                Some((s, "bin")) => (s, "json"),
                Some((s, "json")) => (s, "bin"),
                _ => return false,
            };
            root.join("features").join(format!("{stem}.{other}")).exists()
        }
        ["classifiers", k, t, f] if knowledge_dir(manifest, k) => {
            trial_dir(manifest, t)
                && manifest.classifiers.methods.iter().any(|m| *f == format!("{}.json", m.as_str()))
        }
        ["classifiers", "downstream", f] => ext(f, &[".json"]),
        ["classifiers", "baselines", id, t] => {
            manifest.baselines.ids.iter().any(|b| b.as_str() == *id) && t.strip_suffix(".json").is_some_and(|t| trial_dir(manifest, t))
        }
        ["classifiers", "studies", _axis, _value, f] => ext(f, &[".json"]),
        ["reports", f] => ext(f, &[".json", ".csv"]),
        ["reports", "studies", f] => ext(f, &[".json", ".csv"]),
        ["plots", f] => ext(f, &[".svg"]),
        _ => false,
    }
}
