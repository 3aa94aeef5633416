//! A corpus is a directory of `NAME.ppm` images, each optionally next to
//! `NAME.jsonl` polygon annotations, plus an optional `dictionary.tsv`
//! (the built-in synthetic dictionary otherwise). Images are taken in file
//! name order.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hmic::imagery::{ingest_annotations, load_image, CategoryDictionary};
use hmic::metrics::rd::CorpusItem;
use hmic::synth::default_dictionary;

pub const DICTIONARY_FILE: &str = "dictionary.tsv";

pub fn load_dictionary(path: Option<&Path>) -> Result<CategoryDictionary> {
    match path {
        Some(p) => CategoryDictionary::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(default_dictionary()),
    }
}

pub fn corpus_dictionary(dir: &Path) -> Result<CategoryDictionary> {
    let p = dir.join(DICTIONARY_FILE);
    load_dictionary(p.exists().then_some(p.as_path()))
}

pub fn image_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .ppm images in {}", dir.display());
    }
    Ok(paths)
}

pub fn load_item(path: &Path, dict: &CategoryDictionary) -> Result<CorpusItem> {
    let image = load_image(path).with_context(|| format!("reading {}", path.display()))?;
    let ann = path.with_extension("jsonl");
    let instances = if ann.exists() {
        Some(
            ingest_annotations(&ann, dict, image.width(), image.height())
                .with_context(|| format!("reading {}", ann.display()))?,
        )
    } else {
        None
    };
    let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    Ok(CorpusItem { id, image, instances })
}

pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusItem>> {
    let dict = corpus_dictionary(dir)?;
    image_paths(dir)?.iter().map(|p| load_item(p, &dict)).collect()
}
