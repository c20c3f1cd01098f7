use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = File::open(path).map_err(|e| CliError::reading(path, e.into()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::reading(path, e.into()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct Provenance<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'static str,
    pub config: &'a C,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Output directory whose files are written to a temporary name and renamed into place.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<FileDigest>,
    inputs: Vec<FileDigest>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::args(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Hashes `path` and lists it among the inputs.
    pub fn record_input(&mut self, path: &Path) -> CliResult<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn write<F>(&mut self, name: &str, body: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> CliResult<()>,
    {
        let target = self.path(name);
        let tmp = NamedTempFile::new_in(&self.root)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            body(&mut w)?;
            w.flush()?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(&target).map_err(|e| CliError::from(e.error))?;
        let sha256 = sha256_file(&target)?;
        self.written.push(FileDigest {
            path: name.to_string(),
            sha256,
        });
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn write_tensor(&mut self, name: &str, t: &gloss::Tensor, meta: &gloss::io::TensorMeta) -> CliResult<()> {
        self.write(name, |w| Ok(gloss::io::write_tensor_to(t, w)?))?;
        self.write_json(&format!("{name}.json"), meta)?;
        Ok(())
    }

    pub fn write_mask(&mut self, name: &str, m: &gloss::SupportSet, meta: &gloss::io::TensorMeta) -> CliResult<()> {
        self.write(name, |w| Ok(gloss::io::write_mask_to(m, w)?))?;
        self.write_json(&format!("{name}.json"), meta)?;
        Ok(())
    }

    /// Writes `provenance.json` last, listing every input and output.
    pub fn finish<C: Serialize>(mut self, command: &str, config: &C) -> CliResult<()> {
        let record = Provenance {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.written),
        };
        self.write_json("provenance.json", &record)?;
        Ok(())
    }
}
