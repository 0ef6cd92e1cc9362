use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

/// `run_manifest.txt`: what ran, with which settings, and what it wrote.
/// Written once before work starts and again on success.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub outputs: Vec<PathBuf>,
    path: PathBuf,
}

pub fn build_id() -> String {
    match option_env!("FHDR_GIT_REV") {
        Some(rev) => format!("{} ({rev})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn begin(out_dir: &Path, command: &str, args: &[String], config: String, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
        let m = RunManifest {
            command: command.to_string(),
            args: args.to_vec(),
            config,
            seed,
            started_unix: now(),
            finished_unix: None,
            outputs: Vec::new(),
            path: out_dir.join("run_manifest.txt"),
        };
        m.write()?;
        Ok(m)
    }

    /// Records the outputs that exist and stamps the finish time.
    pub fn finish(mut self, outputs: impl IntoIterator<Item = PathBuf>) -> Result<()> {
        self.outputs = outputs.into_iter().filter(|p| p.exists()).collect();
        self.finished_unix = Some(now());
        self.write()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write(&self) -> Result<()> {
        let mut s = String::new();
        s += &format!("command = {}\n", self.command);
        s += &format!("args = {}\n", self.args.join(" "));
        s += &format!("build = {}\n", build_id());
        s += &format!("seed = {}\n", self.seed);
        s += &format!("started_unix = {}\n", self.started_unix);
        match self.finished_unix {
            Some(t) => s += &format!("finished_unix = {t}\nstatus = ok\n"),
            None => s += "status = running\n",
        }
        for p in &self.outputs {
            s += &format!("output = {}\n", p.display());
        }
        s += "\n[config]\n";
        s += &self.config;
        std::fs::write(&self.path, s).map_err(|e| Error::file(&self.path, e))
    }
}
