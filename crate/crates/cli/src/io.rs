use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use trustgate_core::backend::{self, TableFormat};
use trustgate_core::{FeatureTable, LogitTable};

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Format {
    Csv,
    Binary,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TableFormat::Csv,
            Format::Binary => TableFormat::Binary,
        }
    }
}

pub fn logits(path: &Path) -> Result<LogitTable> {
    backend::load_logits(path, None).with_context(|| format!("reading {}", path.display()))
}

pub fn features(path: &Path) -> Result<FeatureTable> {
    backend::load_features(path, None).with_context(|| format!("reading {}", path.display()))
}

pub fn text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// True when the file holds a logit table rather than bare numbers.
pub fn looks_like_table(path: &Path) -> Result<bool> {
    let mut head = [0u8; 7];
    let n = File::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .read(&mut head)?;
    Ok(head[..n].starts_with(b"TGLT") || head[..n].starts_with(b"item_id"))
}

pub fn stdout_csv() -> csv::Writer<std::io::StdoutLock<'static>> {
    csv::Writer::from_writer(std::io::stdout().lock())
}

pub fn println(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}")?;
    Ok(())
}
