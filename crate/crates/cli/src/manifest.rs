//! Output directories and the run manifest written into each of them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{io_err, CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a whole input file and records its digest.
pub fn read_input(path: &Path) -> CliResult<(Vec<u8>, FileDigest)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let digest = FileDigest { path: path.display().to_string(), bytes: bytes.len(), sha256: sha256_hex(&bytes) };
    Ok((bytes, digest))
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'static str,
    pub seed: Option<u64>,
    /// Effective settings after merging the config file and flags.
    pub config: &'a C,
    pub config_file: Option<FileDigest>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
}

/// An output directory that remembers which files were written to it.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
    started: Instant,
}

impl OutDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(OutDir { dir: dir.to_path_buf(), written: Vec::new(), started: Instant::now() })
    }

    pub fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> influens::Result<()>) -> CliResult<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        f(&mut w).map_err(|e| match e {
            influens::Error::Io(source) => CliError::Io { path: path.clone(), source },
            other => CliError::Core(other),
        })?;
        w.flush().map_err(io_err(&path))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish<C: Serialize>(
        mut self,
        command: &str,
        seed: Option<u64>,
        config: &C,
        config_file: Option<&Path>,
        inputs: Vec<FileDigest>,
    ) -> CliResult<()> {
        let config_file = config_file.map(|p| read_input(p).map(|(_, d)| d)).transpose()?;
        let manifest = RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            config_file,
            inputs,
            outputs: self.written.clone(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        self.write_json(MANIFEST, &manifest)
    }
}
