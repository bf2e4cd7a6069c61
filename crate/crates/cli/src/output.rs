//! Output files. Every file carries the tool version and config hash: CSV as
//! leading `# key=value` lines, JSON as a `meta` object.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(command: &'static str, config_hash: String, seed: u64) -> Self {
        Meta { tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION"), command, config_hash, seed }
    }

    pub fn preamble(&self) -> Vec<String> {
        vec![
            format!("tool={} {}", self.tool, self.version),
            format!("command={}", self.command),
            format!("config_hash={}", self.config_hash),
            format!("seed={}", self.seed),
        ]
    }
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(name);
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        log::info!("writing {}", path.display());
        Ok(BufWriter::new(file))
    }

    /// JSON document `{"meta": …, <body fields>}`.
    pub fn json<T: Serialize>(&self, name: &str, meta: &Meta, body: &T) -> Result<()> {
        let mut doc = serde_json::to_value(body)?;
        if let serde_json::Value::Object(map) = &mut doc {
            map.insert("meta".into(), serde_json::to_value(meta)?);
        }
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// CSV with the meta preamble, written row by row.
    pub fn csv(&self, name: &str, meta: &Meta) -> Result<csv::Writer<BufWriter<File>>> {
        let mut w = self.file(name)?;
        for line in meta.preamble() {
            writeln!(w, "# {line}")?;
        }
        Ok(csv::Writer::from_writer(w))
    }
}
