//! Artifact writers: JSON files, JSON-lines transcripts, CSV summaries and text reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub struct OutDir {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

impl OutDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(OutDir { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn jsonl(&self, name: &str) -> Result<JsonLines, CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(JsonLines { path, inner: BufWriter::new(file) })
    }

    pub fn csv(&self, name: &str) -> Result<csv::Writer<File>, CliError> {
        Ok(csv::Writer::from_path(self.path(name))?)
    }
}

pub struct JsonLines {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl JsonLines {
    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<(), CliError> {
        serde_json::to_writer(&mut self.inner, value)?;
        self.inner.write_all(b"\n").map_err(io_err(&self.path))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.inner.flush().map_err(io_err(&self.path))
    }
}
