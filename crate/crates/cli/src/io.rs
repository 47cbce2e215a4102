//! Shared file helpers for the subcommands.

use anyhow::{bail, Context, Result};
use hiergram::cooccur::CooccurrenceStats;
use hiergram::hierarchy::ContractedHierarchy;
use hiergram::kernel::KernelSpec;
use std::fs;
use std::path::Path;

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

/// Accepts either a bare kernel object or the wrapped `{"kernel": ...}` form
/// that `fit-kernel` writes, so fitted kernels feed straight into the other
/// subcommands.
pub fn read_kernel(path: &Path) -> Result<KernelSpec> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading kernel {}", path.display()))?;
    let spec: KernelSpec = match serde_json::from_str(&text) {
        Ok(spec) => spec,
        Err(_) => {
            #[derive(serde::Deserialize)]
            struct Wrapped {
                kernel: KernelSpec,
            }
            serde_json::from_str::<Wrapped>(&text)
                .map(|w| w.kernel)
                .with_context(|| format!("parsing kernel {}", path.display()))?
        }
    };
    spec.validate()?;
    Ok(spec)
}

pub fn read_counts(path: &Path) -> Result<CooccurrenceStats> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(CooccurrenceStats::read_from(std::io::BufReader::new(file))?)
}

pub fn write_counts(stats: &CooccurrenceStats, path: &Path) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    stats.write_to(std::io::BufWriter::new(file))?;
    Ok(())
}

pub fn read_hierarchy(path: &Path) -> Result<ContractedHierarchy> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading hierarchy {}", path.display()))?;
    Ok(ContractedHierarchy::from_tsv(&text)?)
}

pub fn read_embedding(path: &Path) -> Result<hiergram::concept::EmbeddingTable> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(hiergram::concept::EmbeddingTable::read_from(
        std::io::BufReader::new(file),
    )?)
}

/// Articles from either a line-per-article file or a directory of files
/// (one article each, read in sorted name order for determinism).
pub fn read_articles(corpus: Option<&Path>, corpus_dir: Option<&Path>) -> Result<Vec<String>> {
    match (corpus, corpus_dir) {
        (Some(path), None) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(text.lines().map(|l| l.to_string()).collect())
        }
        (None, Some(dir)) => {
            let mut paths: Vec<_> = fs::read_dir(dir)
                .with_context(|| format!("listing {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            paths.sort();
            paths
                .iter()
                .map(|p| fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
                .collect()
        }
        _ => bail!("exactly one of --corpus or --corpus-dir is required"),
    }
}

/// Prefix CSV content with the effective-config comment line.
pub fn csv_with_config(config_line: &str, body: &str) -> String {
    format!("# config: {config_line}\n{body}")
}
