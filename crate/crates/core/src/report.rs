//! Experiment records, the success rule and results.csv export.

use std::cmp::Ordering;
use std::path::Path;

use crate::attacks::AttackKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub scenario_id: String,
    pub poison_percent: f64,
    pub client_losses: Vec<f64>,
    pub server_accuracy: f64,
    pub asr: Option<f64>,
    /// Present iff `asr` is.
    pub success: Option<bool>,
    pub learning_rate_used: f64,
    pub seed: u64,
}

impl ExperimentRecord {
    /// Builds a record, applying `rule` when an ASR is available.
    pub fn new(
        scenario_id: String,
        poison_percent: f64,
        client_losses: Vec<f64>,
        server_accuracy: f64,
        asr: Option<f64>,
        learning_rate_used: f64,
        seed: u64,
        rule: &SuccessRule,
    ) -> Self {
        ExperimentRecord {
            scenario_id,
            poison_percent,
            client_losses,
            server_accuracy,
            asr,
            success: asr.map(|a| classify_success(server_accuracy, a, rule)),
            learning_rate_used,
            seed,
        }
    }

    /// Sort and resume key.
    pub fn key(&self) -> (&str, f64) {
        (&self.scenario_id, self.poison_percent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessRule {
    pub threshold: f64,
}

impl Default for SuccessRule {
    fn default() -> Self {
        SuccessRule { threshold: 0.40 }
    }
}

impl SuccessRule {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!("success threshold {threshold} outside [0, 1]")));
        }
        Ok(SuccessRule { threshold })
    }
}

/// An attack succeeds when both accuracy and ASR reach the threshold.
pub fn classify_success(accuracy: f64, asr: f64, rule: &SuccessRule) -> bool {
    accuracy >= rule.threshold && asr >= rule.threshold
}

pub fn scenario_id(dataset_name: &str, attack: Option<AttackKind>) -> String {
    match attack {
        Some(kind) => format!("N_BAU1^{{{dataset_name}-{}}}", kind.code()),
        None => format!("N_BAU1^{{{dataset_name}}}"),
    }
}

/// Orders records by scenario id, then poison percent.
pub fn sort_records(records: &mut [ExperimentRecord]) {
    records.sort_by(|a, b| {
        a.scenario_id
            .cmp(&b.scenario_id)
            .then(a.poison_percent.partial_cmp(&b.poison_percent).unwrap_or(Ordering::Equal))
    });
}

pub fn header(num_clients: usize) -> Vec<String> {
    let mut h = vec!["scenario_id".to_string(), "poison_percent".to_string()];
    h.extend((1..=num_clients).map(|i| format!("client_{i}_loss")));
    h.extend(
        ["server_accuracy", "asr", "success", "learning_rate_used", "seed"].map(String::from),
    );
    h
}

fn fixed(v: f64) -> String {
    format!("{v:.4}")
}

/// Writes `records` in the given order. Every record must have the same
/// number of clients; an empty slice yields a two-client header.
pub fn export_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let num_clients = records.first().map_or(2, |r| r.client_losses.len());
    if let Some(r) = records.iter().find(|r| r.client_losses.len() != num_clients) {
        return Err(Error::DimensionMismatch {
            expected: num_clients,
            found: r.client_losses.len(),
        });
    }
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header(num_clients)).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.scenario_id.clone(), fixed(r.poison_percent)];
        row.extend(r.client_losses.iter().map(|&l| fixed(l)));
        row.push(fixed(r.server_accuracy));
        row.push(r.asr.map(fixed).unwrap_or_default());
        row.push(r.success.map(|s| s.to_string()).unwrap_or_default());
        row.push(format!("{:.4e}", r.learning_rate_used));
        row.push(r.seed.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`export_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let num_clients = headers.iter().filter(|h| h.ends_with("_loss")).count();
    if headers.len() != num_clients + 7 || headers.iter().collect::<Vec<_>>() != header(num_clients) {
        return Err(Error::Config(format!("{}: not a results file", path.display())));
    }
    let bad = |row: usize, what: &str| {
        Error::Config(format!("{}: row {row}: invalid {what}", path.display()))
    };
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(csv_err)?;
        let num = |col: usize, what: &str| -> Result<f64> {
            rec[col].parse::<f64>().map_err(|_| bad(row, what))
        };
        let opt = |col: usize| -> Option<&str> { Some(&rec[col]).filter(|s| !s.is_empty()) };
        let c = num_clients;
        let client_losses = (0..c).map(|j| num(2 + j, "loss")).collect::<Result<Vec<_>>>()?;
        let asr = opt(c + 3).map(|s| s.parse::<f64>().map_err(|_| bad(row, "asr"))).transpose()?;
        let success = opt(c + 4)
            .map(|s| s.parse::<bool>().map_err(|_| bad(row, "success")))
            .transpose()?;
        if asr.is_some() != success.is_some() {
            return Err(bad(row, "asr/success pair"));
        }
        out.push(ExperimentRecord {
            scenario_id: rec[0].to_string(),
            poison_percent: num(1, "poison_percent")?,
            client_losses,
            server_accuracy: num(c + 2, "server_accuracy")?,
            asr,
            success,
            learning_rate_used: num(c + 5, "learning_rate_used")?,
            seed: rec[c + 6].parse().map_err(|_| bad(row, "seed"))?,
        });
    }
    Ok(out)
}
