//! Flag and config-file handling. Flags override the config file, which
//! overrides built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _};
use clap::{Args, ValueEnum};
use fedpoison::attacks::AttackKind;
use fedpoison::data::{PreprocessConfig, SyntheticSpec};
use fedpoison::nn::TrainConfig;
use serde::Deserialize;

pub const DEFAULT_PERCENTAGES: [f64; 10] = [1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0, 15.0, 20.0, 25.0];
pub const DEFAULT_OUT: &str = "fedpoison-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackArg {
    Lf,
    Fp,
}

impl From<AttackArg> for AttackKind {
    fn from(a: AttackArg) -> Self {
        match a {
            AttackArg::Lf => AttackKind::LabelFlip,
            AttackArg::Fp => AttackKind::FeaturePoison,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// TOML config file with optional [data], [synthetic], [federation] and
    /// [attack] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long, global = true, conflicts_with = "synthetic")]
    pub dataset: Option<PathBuf>,
    /// Synthetic data instead of a CSV, e.g. "n=5000,d=8,informative=0,separation=6,noise=1,seed=0".
    #[arg(long, global = true)]
    pub synthetic: Option<String>,
    /// Zero-based label column of --dataset; defaults to the last column.
    #[arg(long, global = true)]
    pub label_column: Option<usize>,
    /// Dataset name used in scenario ids.
    #[arg(long, global = true)]
    pub name: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub attack: Option<AttackArg>,
    #[arg(long, global = true)]
    pub percent: Option<f64>,
    /// Comma-separated poison percentages for sweep.
    #[arg(long, global = true, value_delimiter = ',')]
    pub percentages: Option<Vec<f64>>,
    /// Force the FP target column instead of ranking by importance.
    #[arg(long, global = true)]
    pub feature_index: Option<usize>,
    #[arg(long, global = true)]
    pub clients: Option<usize>,
    #[arg(long, global = true)]
    pub rounds: Option<usize>,
    #[arg(long, global = true)]
    pub local_epochs: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Concurrent sweep runs.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long = "fp-step3", global = true, value_enum)]
    pub fp_step3: Option<Switch>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    name: Option<String>,
    workers: Option<usize>,
    #[serde(default)]
    data: DataSection,
    synthetic: Option<SyntheticSection>,
    #[serde(default)]
    federation: FederationSection,
    #[serde(default)]
    attack: AttackSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    dataset: Option<PathBuf>,
    label_column: Option<usize>,
    fill_value: Option<f64>,
    normalize: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticSection {
    n: Option<usize>,
    d: Option<usize>,
    informative: Option<usize>,
    separation: Option<f64>,
    noise: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FederationSection {
    clients: Option<usize>,
    rounds: Option<usize>,
    local_epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    dropout: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttackSection {
    kind: Option<String>,
    percent: Option<f64>,
    percentages: Option<Vec<f64>>,
    feature_index: Option<usize>,
    fp_step3: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Csv { path: PathBuf, label_column: Option<usize> },
    Synthetic(SyntheticSpec),
}

/// Fully resolved settings. Fields left `None` fall back to the prepared
/// manifest or to sampled values.
#[derive(Debug, Clone)]
pub struct Settings {
    pub source: Option<Source>,
    pub preprocess: PreprocessConfig,
    pub name: Option<String>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub workers: usize,
    pub clients: Option<usize>,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Option<f64>,
    pub sgd_momentum: f64,
    pub dropout_p: f64,
    pub attack: Option<AttackKind>,
    pub percent: Option<f64>,
    pub percentages: Vec<f64>,
    pub feature_index: Option<usize>,
    pub fp_step3: bool,
}

fn parse_synthetic(text: &str) -> anyhow::Result<SyntheticSection> {
    let mut s = SyntheticSection::default();
    for item in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (key, value) = item
            .split_once('=')
            .with_context(|| format!("--synthetic: expected key=value, got {item:?}"))?;
        let value = value.trim();
        let bad = || format!("--synthetic: invalid value for {key}: {value:?}");
        match key.trim() {
            "n" => s.n = Some(value.parse().with_context(bad)?),
            "d" => s.d = Some(value.parse().with_context(bad)?),
            "informative" => s.informative = Some(value.parse().with_context(bad)?),
            "separation" => s.separation = Some(value.parse().with_context(bad)?),
            "noise" => s.noise = Some(value.parse().with_context(bad)?),
            "seed" => s.seed = Some(value.parse().with_context(bad)?),
            other => bail!("--synthetic: unknown key {other:?}"),
        }
    }
    Ok(s)
}

fn merge_synthetic(flag: SyntheticSection, file: Option<SyntheticSection>) -> SyntheticSection {
    let file = file.unwrap_or_default();
    SyntheticSection {
        n: flag.n.or(file.n),
        d: flag.d.or(file.d),
        informative: flag.informative.or(file.informative),
        separation: flag.separation.or(file.separation),
        noise: flag.noise.or(file.noise),
        seed: flag.seed.or(file.seed),
    }
}

/// Checks that percentages lie in [0, 100] and strictly increase.
pub fn validate_percentages(ps: &[f64]) -> anyhow::Result<()> {
    for p in ps {
        ensure!((0.0..=100.0).contains(p), "percentage {p} outside [0, 100]");
    }
    ensure!(
        ps.windows(2).all(|w| w[0] < w[1]),
        "percentages must be strictly increasing"
    );
    Ok(())
}

fn resolve_relative(base: Option<&Path>, p: PathBuf) -> PathBuf {
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

impl Settings {
    pub fn resolve(opts: &Options) -> anyhow::Result<Settings> {
        let (file, base) = match &opts.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let file: FileConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                (file, path.parent().map(Path::to_path_buf))
            }
            None => (FileConfig::default(), None),
        };
        let base = base.as_deref();
        let seed = opts.seed.or(file.seed);

        let label_column = opts.label_column.or(file.data.label_column);
        let (csv, synth) = if let Some(path) = &opts.dataset {
            (Some(path.clone()), None)
        } else if let Some(text) = &opts.synthetic {
            (None, Some(merge_synthetic(parse_synthetic(text)?, file.synthetic.clone())))
        } else {
            match (&file.data.dataset, &file.synthetic) {
                (Some(_), Some(_)) => bail!("config sets both [data].dataset and [synthetic]"),
                (Some(p), None) => (Some(resolve_relative(base, p.clone())), None),
                (None, s) => (None, s.clone()),
            }
        };
        let source = match (csv, synth) {
            (Some(path), _) => Some(Source::Csv { path, label_column }),
            (None, Some(s)) => {
                let d = SyntheticSpec::default();
                let spec = SyntheticSpec {
                    n: s.n.unwrap_or(d.n),
                    d: s.d.unwrap_or(d.d),
                    informative_feature: s.informative.unwrap_or(d.informative_feature),
                    class_separation: s.separation.unwrap_or(d.class_separation),
                    noise_sd: s.noise.unwrap_or(d.noise_sd),
                    seed: s.seed.or(seed).unwrap_or(0),
                };
                spec.validate()?;
                Some(Source::Synthetic(spec))
            }
            (None, None) => None,
        };

        let attack = match (opts.attack, file.attack.kind.as_deref()) {
            (Some(a), _) => Some(a.into()),
            (None, Some(k)) => Some(k.parse::<AttackKind>().map_err(anyhow::Error::msg)?),
            (None, None) => None,
        };
        let percentages = opts
            .percentages
            .clone()
            .or(file.attack.percentages)
            .unwrap_or_else(|| DEFAULT_PERCENTAGES.to_vec());
        validate_percentages(&percentages)?;
        let percent = opts.percent.or(file.attack.percent);
        if let Some(p) = percent {
            ensure!((0.0..=100.0).contains(&p), "--percent {p} outside [0, 100]");
        }

        let train = TrainConfig::default();
        let pre = PreprocessConfig::default();
        let settings = Settings {
            source,
            preprocess: PreprocessConfig {
                fill_value: file.data.fill_value.unwrap_or(pre.fill_value),
                normalize: file.data.normalize.unwrap_or(pre.normalize),
            },
            name: opts.name.clone().or(file.name),
            seed,
            out: opts
                .out
                .clone()
                .or_else(|| file.out.map(|p| resolve_relative(base, p)))
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            workers: opts.workers.or(file.workers).unwrap_or(1),
            clients: opts.clients.or(file.federation.clients),
            rounds: opts.rounds.or(file.federation.rounds).unwrap_or(20),
            local_epochs: opts.local_epochs.or(file.federation.local_epochs).unwrap_or(1),
            batch_size: file.federation.batch_size.unwrap_or(train.batch_size),
            learning_rate: file.federation.learning_rate,
            sgd_momentum: file.federation.momentum.unwrap_or(train.sgd_momentum),
            dropout_p: file.federation.dropout.unwrap_or(train.dropout_p),
            attack,
            percent,
            percentages,
            feature_index: opts.feature_index.or(file.attack.feature_index),
            fp_step3: match opts.fp_step3 {
                Some(s) => s == Switch::On,
                None => file.attack.fp_step3.unwrap_or(true),
            },
        };
        ensure!(settings.workers >= 1, "--workers must be at least 1");
        ensure!(settings.rounds >= 1, "--rounds must be at least 1");
        if let Some(c) = settings.clients {
            ensure!(c >= 1, "--clients must be at least 1");
        }
        Ok(settings)
    }
}
