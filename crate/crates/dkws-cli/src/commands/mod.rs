pub mod fuse;
pub mod gradcheck;
pub mod index;
pub mod score;
pub mod search;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};

use dkws::data::{load_corpus_dir, read_keywords, Corpus};
use dkws::scorer::read_references;
use dkws::trainer::DevSet;

/// Load a corpus directory, defaulting the language id to the directory name.
pub fn load_corpus_arg(dir: &Path, language: Option<&str>) -> Result<Corpus> {
    let language = match language {
        Some(l) => l.to_string(),
        None => crate::config::language_of_dir(dir),
    };
    load_corpus_dir(dir, &language)
        .with_context(|| format!("loading corpus from {}", dir.display()))
}

/// Load a dev set: corpus directory plus keyword and reference files.
pub fn load_dev_set(
    dir: &Path,
    keywords: &Path,
    refs: &Path,
    language: Option<&str>,
) -> Result<DevSet> {
    Ok(DevSet {
        corpus: load_corpus_arg(dir, language)?,
        keywords: read_keywords(keywords)?,
        references: read_references(refs)?,
    })
}
