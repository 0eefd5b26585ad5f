//! Output directory handling. Every file is written atomically and listed in
//! the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use plap_core::grid::{write_atomic, write_field_dump};
use plap_core::VectorField;

use crate::config::{Experiment, ExperimentConfig};
use crate::failure::Failure;

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// Artifacts were written, but a solver or a check failed.
    Failed,
}

/// Everything needed to rerun an experiment; contains no timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub experiment: Experiment,
    pub status: Status,
    pub message: Option<String>,
    pub cli_version: String,
    pub core_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Files written by the run, relative to the output directory.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, Failure> {
        let path = dir.join(MANIFEST);
        let bytes =
            fs::read(&path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }
}

pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(plap_core::Error::from)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Binary dump `name` plus its JSON sidecar.
    pub fn write_field(&mut self, name: &str, field: &VectorField) -> Result<(), Failure> {
        let path = self.dir.join(name);
        write_field_dump(field, &path)?;
        self.files.push(name.to_string());
        let sidecar = path.with_extension("json");
        if let Some(s) = sidecar.file_name() {
            self.files.push(s.to_string_lossy().into_owned());
        }
        Ok(())
    }

    /// Writes the manifest last, so its presence marks a finished run.
    pub fn finish(
        self,
        experiment: Experiment,
        config: &ExperimentConfig,
        verdict: Result<(), String>,
    ) -> Result<Manifest, Failure> {
        let (status, message) = match verdict {
            Ok(()) => (Status::Ok, None),
            Err(m) => (Status::Failed, Some(m)),
        };
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            experiment,
            status,
            message,
            cli_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: plap_core::VERSION.to_string(),
            seed: config.seed,
            config: config.clone(),
            outputs: self.files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(plap_core::Error::from)?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join(MANIFEST), &bytes)?;
        Ok(manifest)
    }
}
