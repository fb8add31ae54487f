use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, ensure, Context as _};
use fedpoison::attacks::{AttackKind, AttackSpec};
use fedpoison::data::SplitBundle;
use fedpoison::federation::{
    attack_seed, experiment_seed, fp_feature_report, run_experiment_with, FederationConfig,
};
use fedpoison::importance::{top_feature, write_importance_csv};
use fedpoison::nn::checkpoint;
use fedpoison::report::{
    export_csv, read_csv, scenario_id, sort_records, ExperimentRecord, SuccessRule,
};
use rayon::prelude::*;

use crate::config::Settings;
use crate::prepared::{load_prepared, Manifest};

pub const RESULTS: &str = "results.csv";
pub const IMPORTANCE: &str = "importance.csv";
pub const RUNS_DIR: &str = "runs";
pub const ROUND_LOG: &str = "rounds.log";
pub const MODEL: &str = "model.bin";

/// One (attack, percent) cell of a sweep; `attack: None` is the clean
/// baseline, recorded at 0%.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub attack: Option<AttackKind>,
    pub percent: f64,
}

impl Scenario {
    fn slug(&self) -> String {
        match self.attack {
            Some(kind) => format!("{}-{}", kind.code().to_lowercase(), self.percent),
            None => "baseline".into(),
        }
    }
}

/// Identity of a record, with the percentage at its rendered precision so
/// that keys survive a CSV round trip.
fn record_key(scenario_id: &str, percent: f64) -> (String, String) {
    (scenario_id.to_string(), format!("{percent:.4}"))
}

/// Loaded inputs shared by every experiment of an invocation.
struct Context {
    settings: Settings,
    manifest: Manifest,
    bundle: SplitBundle,
    seed: u64,
    name: String,
}

impl Context {
    fn load(settings: &Settings) -> anyhow::Result<Context> {
        let (manifest, bundle) = load_prepared(&settings.out)?;
        if let Some(c) = settings.clients {
            ensure!(
                c == manifest.num_clients(),
                "--clients {c} does not match the {} prepared shards; rerun `fedpoison prepare`",
                manifest.num_clients()
            );
        }
        Ok(Context {
            seed: settings.seed.unwrap_or(manifest.seed),
            name: settings.name.clone().unwrap_or_else(|| manifest.name.clone()),
            settings: settings.clone(),
            manifest,
            bundle,
        })
    }

    fn federation_config(&self) -> FederationConfig {
        let s = &self.settings;
        let mut cfg = FederationConfig::sampled(experiment_seed(self.seed));
        cfg.num_clients = self.manifest.num_clients();
        cfg.rounds = s.rounds;
        cfg.local_epochs = s.local_epochs;
        cfg.train.batch_size = s.batch_size;
        cfg.train.sgd_momentum = s.sgd_momentum;
        cfg.train.dropout_p = s.dropout_p;
        if let Some(lr) = s.learning_rate {
            cfg.train.learning_rate = lr;
        }
        cfg
    }

    fn scenario_id(&self, scenario: &Scenario) -> String {
        scenario_id(&self.name, scenario.attack)
    }

    /// Runs one scenario, writing its round log and final model under
    /// `runs/<slug>/`. Round lines go to stdout, prefixed when `tag` is set.
    fn execute(&self, scenario: &Scenario, tag: bool) -> anyhow::Result<ExperimentRecord> {
        let id = self.scenario_id(scenario);
        let cfg = self.federation_config();
        let spec = scenario.attack.map(|kind| AttackSpec {
            feature_index: self.settings.feature_index,
            fp_step3: self.settings.fp_step3,
            ..AttackSpec::new(kind, scenario.percent, attack_seed(self.seed, kind, scenario.percent))
        });

        let run_dir = self.settings.out.join(RUNS_DIR).join(scenario.slug());
        std::fs::create_dir_all(&run_dir)
            .with_context(|| format!("creating {}", run_dir.display()))?;
        let log_path = run_dir.join(ROUND_LOG);
        let mut log = std::fs::File::create(&log_path)
            .with_context(|| format!("creating {}", log_path.display()))?;
        let mut log_err = None;
        let prefix = if tag {
            format!("{id} {}% ", scenario.percent)
        } else {
            String::new()
        };

        let outcome = run_experiment_with(&self.bundle, spec.as_ref(), &cfg, |r| {
            println!("{prefix}{r}");
            if let Err(e) = writeln!(log, "{r}") {
                log_err.get_or_insert(e);
            }
        })
        .with_context(|| format!("{id} at {}%", scenario.percent))?;
        if let Some(e) = log_err {
            return Err(e).with_context(|| format!("writing {}", log_path.display()));
        }
        checkpoint::save(&outcome.final_params, run_dir.join(MODEL))?;
        if let Some(stats) = &outcome.fp_stats {
            println!("{prefix}fp_feature={}", stats.feature_index);
        }

        Ok(ExperimentRecord::new(
            id,
            scenario.percent,
            outcome.final_client_losses().to_vec(),
            outcome.server_test_accuracy,
            outcome.asr,
            cfg.train.learning_rate,
            self.seed,
            &SuccessRule::default(),
        ))
    }
}

/// Writes via a temporary file and rename, so an interrupted write never
/// leaves a truncated results file behind.
fn write_results(path: &Path, records: &[ExperimentRecord]) -> anyhow::Result<()> {
    let tmp = path.with_extension("csv.tmp");
    export_csv(records, &tmp)?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn read_results(path: &Path) -> anyhow::Result<Vec<ExperimentRecord>> {
    if path.exists() {
        Ok(read_csv(path)?)
    } else {
        Ok(Vec::new())
    }
}

fn summary(r: &ExperimentRecord) -> String {
    let mut s = format!(
        "{} poison={}% accuracy={:.4}",
        r.scenario_id, r.poison_percent, r.server_accuracy
    );
    if let (Some(asr), Some(ok)) = (r.asr, r.success) {
        s.push_str(&format!(" asr={asr:.4} success={ok}"));
    }
    s
}

pub fn importance(settings: &Settings) -> anyhow::Result<usize> {
    let ctx = Context::load(settings)?;
    let report = fp_feature_report(&ctx.bundle, ctx.federation_config().seed)?;
    let path = settings.out.join(IMPORTANCE);
    write_importance_csv(&report, ctx.bundle.test.feature_names(), &path)?;
    let top = top_feature(&report);
    println!(
        "top_feature={top} name={}",
        ctx.bundle.test.feature_names()[top]
    );
    Ok(top)
}

pub fn run(settings: &Settings) -> anyhow::Result<ExperimentRecord> {
    let scenario = match (settings.attack, settings.percent) {
        (Some(kind), Some(p)) => Scenario { attack: Some(kind), percent: p },
        (Some(_), None) => bail!("--attack needs --percent"),
        (None, Some(_)) => bail!("--percent needs --attack"),
        (None, None) => Scenario { attack: None, percent: 0.0 },
    };
    let ctx = Context::load(settings)?;
    let record = ctx.execute(&scenario, false)?;

    let path = settings.out.join(RESULTS);
    let key = record_key(&record.scenario_id, record.poison_percent);
    let mut records = read_results(&path)?;
    records.retain(|r| record_key(&r.scenario_id, r.poison_percent) != key);
    records.push(record.clone());
    sort_records(&mut records);
    write_results(&path, &records)?;
    println!("{}", summary(&record));
    Ok(record)
}

/// Clean baseline followed by every requested attack at every percentage.
pub fn sweep_scenarios(settings: &Settings) -> Vec<Scenario> {
    let attacks = match settings.attack {
        Some(kind) => vec![kind],
        None => vec![AttackKind::LabelFlip, AttackKind::FeaturePoison],
    };
    let mut out = vec![Scenario { attack: None, percent: 0.0 }];
    for kind in attacks {
        out.extend(settings.percentages.iter().map(|&p| Scenario {
            attack: Some(kind),
            percent: p,
        }));
    }
    out
}

#[derive(Debug)]
pub struct SweepSummary {
    pub results: PathBuf,
    pub completed: usize,
    pub skipped: usize,
    pub failed: Vec<String>,
}

pub fn sweep(settings: &Settings) -> anyhow::Result<SweepSummary> {
    let ctx = Context::load(settings)?;
    let path = settings.out.join(RESULTS);
    let existing = read_results(&path)?;
    if let Some(r) = existing.iter().find(|r| r.seed != ctx.seed) {
        bail!(
            "{} holds results for seed {}, not {}; use another --out",
            path.display(),
            r.seed,
            ctx.seed
        );
    }
    let done: HashSet<_> = existing
        .iter()
        .map(|r| record_key(&r.scenario_id, r.poison_percent))
        .collect();
    let scenarios = sweep_scenarios(settings);
    let pending: Vec<Scenario> = scenarios
        .iter()
        .filter(|s| !done.contains(&record_key(&ctx.scenario_id(s), s.percent)))
        .copied()
        .collect();
    let skipped = scenarios.len() - pending.len();
    if skipped > 0 {
        eprintln!("resuming: {skipped} of {} runs already in {}", scenarios.len(), path.display());
    }

    let records = Mutex::new(existing);
    let failed = Mutex::new(Vec::new());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers)
        .build()
        .context("building worker pool")?;
    pool.install(|| {
        pending.par_iter().for_each(|s| {
            let outcome = ctx.execute(s, true).and_then(|record| {
                println!("{}", summary(&record));
                let mut all = records.lock().unwrap();
                all.push(record);
                sort_records(&mut all);
                write_results(&path, &all)
            });
            if let Err(e) = outcome {
                let msg = format!("{e:#}");
                eprintln!("run failed: {msg}");
                failed.lock().unwrap().push(msg);
            }
        })
    });

    let mut all = records.into_inner().unwrap();
    sort_records(&mut all);
    write_results(&path, &all)?;
    let failed = failed.into_inner().unwrap();
    Ok(SweepSummary {
        results: path,
        completed: pending.len() - failed.len(),
        skipped,
        failed,
    })
}
