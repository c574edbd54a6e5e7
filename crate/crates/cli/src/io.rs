//! Reading and writing corpora, reports and tables from paths or stdio.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use diffgan_core::corpus::{labels_path, read_corpus, read_labels, write_corpus, write_labels};
use diffgan_core::layout::{LabelMap, Layout};
use diffgan_core::nets::checkpoint::digest_bytes;
use diffgan_core::report::FileRef;
use diffgan_core::synth;

pub const CACHE_ENV: &str = "DOGLAYOUT_CACHE";

pub fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    if is_stdio(path) {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).context("reading stdin")?;
        Ok(buf)
    } else {
        fs::read(path).with_context(|| format!("reading {}", path.display()))
    }
}

/// Explicit `--labels`, then the sidecar next to the corpus. Corpora read
/// from stdin without `--labels` use the synthetic vocabulary.
pub fn resolve_labels(corpus: &Path, explicit: Option<&Path>) -> Result<LabelMap> {
    if let Some(p) = explicit {
        return read_labels(p).with_context(|| format!("reading labels {}", p.display()));
    }
    if is_stdio(corpus) {
        return Ok(synth::label_map());
    }
    let side = labels_path(corpus);
    if !side.exists() {
        bail!("{} has no {} sidecar; pass --labels", corpus.display(), side.display());
    }
    read_labels(&side).with_context(|| format!("reading labels {}", side.display()))
}

/// A corpus plus a digest of its exact bytes.
pub struct LoadedCorpus {
    pub layouts: Vec<Layout>,
    pub source: FileRef,
}

pub fn load(path: &Path, labels: &LabelMap) -> Result<LoadedCorpus> {
    let bytes = read_input(path)?;
    let layouts = read_corpus(bytes.as_slice(), labels).with_context(|| format!("parsing corpus {}", path.display()))?;
    Ok(LoadedCorpus { layouts, source: FileRef { path: path.display().to_string(), sha256: digest_bytes(&bytes) } })
}

pub fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if is_stdio(path) {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes)?;
        out.flush()?;
        return Ok(());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Writes a corpus; file outputs also get a `labels.json` sidecar.
pub fn write_layouts(path: &Path, layouts: &[Layout], labels: &LabelMap) -> Result<()> {
    let mut buf = Vec::new();
    write_corpus(&mut buf, layouts, labels)?;
    write_output(path, &buf)?;
    if !is_stdio(path) {
        let side = labels_path(path);
        write_labels(labels, &side).with_context(|| format!("writing {}", side.display()))?;
    }
    Ok(())
}

pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV).map_or_else(|| PathBuf::from(".diffgan-cache"), PathBuf::from)
}

/// Cached feature extractor location for a reference corpus digest.
pub fn cached_fe(corpus_sha256: &str) -> PathBuf {
    cache_dir().join(format!("fe-{}.safetensors", &corpus_sha256[..16.min(corpus_sha256.len())]))
}
