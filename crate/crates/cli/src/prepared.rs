//! Split artifacts on disk: client shards, validation and test CSVs, and a
//! manifest with the seed, counts and file hashes.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _};
use fedpoison::data::{self, load_csv, preprocess, Dataset, PreprocessConfig, SplitBundle};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Settings, Source};

pub const DATA_DIR: &str = "data";
pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub name: String,
    pub source: String,
    pub num_features: usize,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub test_rows: usize,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub rows: usize,
    pub sha256: String,
}

impl Manifest {
    pub fn num_clients(&self) -> usize {
        self.files.iter().filter(|f| f.name.starts_with("client_")).count()
    }
}

pub fn data_dir(out: &Path) -> PathBuf {
    out.join(DATA_DIR)
}

fn client_file(i: usize) -> String {
    format!("client_{}.csv", i + 1)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn describe(source: &Source) -> String {
    match source {
        Source::Csv { path, label_column } => match label_column {
            Some(c) => format!("csv {} label_column={c}", path.display()),
            None => format!("csv {}", path.display()),
        },
        Source::Synthetic(s) => format!(
            "synthetic n={} d={} informative={} separation={} noise={} seed={}",
            s.n, s.d, s.informative_feature, s.class_separation, s.noise_sd, s.seed
        ),
    }
}

fn default_name(source: &Source) -> String {
    match source {
        Source::Csv { path, .. } => path
            .file_stem()
            .map(|s| s.to_string_lossy().to_uppercase())
            .unwrap_or_else(|| "DATA".into()),
        Source::Synthetic(_) => "SYN".into(),
    }
}

/// Loads and preprocesses the configured source.
pub fn load_source(settings: &Settings) -> anyhow::Result<(Source, Dataset)> {
    let Some(source) = settings.source.clone() else {
        bail!("no data source: pass --dataset <csv> or --synthetic <spec>");
    };
    let ds = match &source {
        Source::Csv { path, label_column } => {
            let table = load_csv(path, *label_column)?;
            if table.num_missing() > 0 {
                eprintln!(
                    "{}: filled {} missing cells with {}",
                    path.display(),
                    table.num_missing(),
                    settings.preprocess.fill_value
                );
            }
            preprocess(&table, &settings.preprocess)?
        }
        Source::Synthetic(spec) => data::gen_synthetic(spec)?,
    };
    Ok((source, ds))
}

pub fn prepare(settings: &Settings) -> anyhow::Result<Manifest> {
    let (source, ds) = load_source(settings)?;
    let seed = settings.seed.unwrap_or(0);
    let clients = settings.clients.unwrap_or(2);
    let bundle = data::split(&ds, clients, seed)?;

    let dir = data_dir(&settings.out);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut parts: Vec<(String, &Dataset)> = bundle
        .client_shards
        .iter()
        .enumerate()
        .map(|(i, s)| (client_file(i), s))
        .collect();
    parts.push(("validation.csv".into(), &bundle.validation));
    parts.push(("test.csv".into(), &bundle.test));

    let mut files = Vec::with_capacity(parts.len());
    for (name, part) in parts {
        let path = dir.join(&name);
        part.write_csv(&path)?;
        files.push(FileEntry {
            sha256: sha256_file(&path)?,
            name,
            rows: part.len(),
        });
    }
    let manifest = Manifest {
        seed,
        name: settings.name.clone().unwrap_or_else(|| default_name(&source)),
        source: describe(&source),
        num_features: ds.num_features(),
        train_rows: bundle.train_len(),
        validation_rows: bundle.validation.len(),
        test_rows: bundle.test.len(),
        files,
    };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, toml::to_string(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(manifest)
}

/// Reads prepared data back, verifying file hashes against the manifest.
pub fn load_prepared(out: &Path) -> anyhow::Result<(Manifest, SplitBundle)> {
    let dir = data_dir(out);
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        bail!(
            "no prepared data in {}; run `fedpoison prepare` first",
            dir.display()
        );
    }
    let text = std::fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: Manifest =
        toml::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;

    let as_is = PreprocessConfig {
        fill_value: 0.0,
        normalize: false,
    };
    let load = |name: &str| -> anyhow::Result<Dataset> {
        let entry = manifest
            .files
            .iter()
            .find(|f| f.name == name)
            .with_context(|| format!("{name} missing from manifest"))?;
        let path = dir.join(name);
        ensure!(
            sha256_file(&path)? == entry.sha256,
            "{} does not match its manifest hash; rerun `fedpoison prepare`",
            path.display()
        );
        let table = load_csv(&path, None)?;
        ensure!(
            table.num_missing() == 0,
            "{} has missing cells; rerun `fedpoison prepare`",
            path.display()
        );
        Ok(preprocess(&table, &as_is)?)
    };
    let client_shards = (0..manifest.num_clients())
        .map(|i| load(&client_file(i)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    ensure!(!client_shards.is_empty(), "manifest lists no client shards");
    let bundle = SplitBundle {
        client_shards,
        validation: load("validation.csv")?,
        test: load("test.csv")?,
    };
    Ok((manifest, bundle))
}
