use std::fs;
use std::path::{Path, PathBuf};

use blendsa::tabular::{write_csv, ColumnTable, Schema};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub struct OutDir {
    pub root: PathBuf,
    pub files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<OutDir, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Config(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutDir { root: root.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.root.join(name)
    }

    pub fn write_schema(&mut self, stem: &str, schema: &Schema) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(schema).map_err(io)? + "\n";
        let p = self.path(&format!("{stem}.schema.json"));
        fs::write(p, text).map_err(io)
    }

    /// `stem.csv` next to `stem.schema.json`.
    pub fn write_table(&mut self, stem: &str, table: &ColumnTable) -> Result<(), CliError> {
        let p = self.path(&format!("{stem}.csv"));
        write_csv(table, p).map_err(io)?;
        self.write_schema(stem, &table.schema())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(p, text).map_err(io)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(io)? + "\n";
        self.write_text(name, &text)
    }

    /// Last file written: the manifest lists everything before it.
    pub fn finish(mut self, command: &str, config_bytes: &[u8], seed: u64) -> Result<(), CliError> {
        let hash: String = Sha256::digest(config_bytes).iter().map(|b| format!("{b:02x}")).collect();
        let manifest = Manifest {
            command: command.to_string(),
            config_sha256: hash,
            seed,
            blendsa_version: blendsa::VERSION,
            cli_version: env!("CARGO_PKG_VERSION"),
            files: std::mem::take(&mut self.files),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(io)? + "\n";
        fs::write(self.root.join("manifest.json"), text).map_err(io)
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_sha256: String,
    seed: u64,
    blendsa_version: &'static str,
    cli_version: &'static str,
    files: Vec<String>,
}
