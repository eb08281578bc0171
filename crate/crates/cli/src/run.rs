//! Run directories and manifests.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub started_at: String,
    pub wall_clock_seconds: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub stages: Vec<Stage>,
}

/// An output directory plus the manifest being assembled for it.
pub struct Run {
    dir: PathBuf,
    manifest: Manifest,
    started: Instant,
    lap: Instant,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), CliError> {
    let mut f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut n = 0u64;
    loop {
        let k = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if k == 0 {
            break;
        }
        n += k as u64;
        h.update(&buf[..k]);
    }
    Ok((hex::encode(h.finalize()), n))
}

impl Run {
    /// Creates `run_dir` if given, else `<out_dir>/<timestamp>-<hash>` where
    /// the hash covers the command and its resolved configuration.
    pub fn create(
        out_dir: &Path,
        run_dir: Option<&Path>,
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        jobs: usize,
    ) -> Result<Run, CliError> {
        let now = chrono::Utc::now();
        let dir = match run_dir {
            Some(d) => d.to_path_buf(),
            None => {
                let mut h = Sha256::new();
                h.update(command.as_bytes());
                h.update(config.to_string().as_bytes());
                let tag = hex::encode(&h.finalize()[..4]);
                out_dir.join(format!("{}-{command}-{tag}", now.format("%Y%m%dT%H%M%S%.3f")))
            }
        };
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        log::info!("writing to {}", dir.display());
        Ok(Run {
            dir,
            manifest: Manifest {
                tool: "trendwatch",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                config,
                seed,
                jobs,
                started_at: now.to_rfc3339(),
                wall_clock_seconds: 0.0,
                inputs: Vec::new(),
                outputs: Vec::new(),
                stages: Vec::new(),
            },
            started: Instant::now(),
            lap: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let (sha256, bytes) = sha256_file(path)?;
        self.manifest.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256,
            bytes,
        });
        Ok(())
    }

    /// Close the current stage under `name`.
    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.manifest.stages.push(Stage {
            name: name.to_string(),
            seconds: (now - self.lap).as_secs_f64(),
        });
        self.lap = now;
    }

    /// Write `name` inside the run directory and record its digest.
    pub fn write<F>(&mut self, name: &str, body: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
    {
        let path = self.dir.join(name);
        {
            let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
            let mut w = BufWriter::new(f);
            body(&mut w)?;
            w.flush().map_err(|e| CliError::io(&path, e))?;
        }
        let (sha256, bytes) = sha256_file(&path)?;
        self.manifest.outputs.push(FileDigest {
            path: name.to_string(),
            sha256,
            bytes,
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Lib(e.into()))?;
            writeln!(w).map_err(|e| CliError::io(name, e))
        })
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let path = self.dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Lib(e.into()))?;
        fs::write(&path, body + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(self.dir)
    }
}
