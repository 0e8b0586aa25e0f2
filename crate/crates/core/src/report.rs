//! Experiment reports, their on-disk files and comparison tables.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Community;
use crate::error::{Error, Result};
use crate::federation::{CommunicationSummary, Mode, RoundLog};
use crate::metrics::{relative_improvement, ConfusionMatrix, Summary};
use crate::nn::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientMetrics {
    pub client: usize,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// Round whose checkpoint was evaluated.
    pub best_round: usize,
    pub confusion: ConfusionMatrix,
}

/// Across-client mean, median and std of each macro metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSummary {
    pub f1: Summary,
    pub precision: Summary,
    pub recall: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunityReport {
    pub membership: Vec<Community>,
    /// Mean share of peer picks that stayed inside community A, over its
    /// members that picked any peer.
    pub intra_a_pct: f64,
    pub intra_b_pct: f64,
    /// Column means of the selection-frequency matrix over clients that
    /// picked any peer.
    pub selected_share_pct: Vec<f64>,
}

impl CommunityReport {
    /// Ids of the least-selected clients, `n` of them, lowest share first.
    pub fn least_selected(&self, n: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.selected_share_pct.len()).collect();
        ids.sort_by(|&a, &b| {
            self.selected_share_pct[a]
                .total_cmp(&self.selected_share_pct[b])
                .then(a.cmp(&b))
        });
        ids.truncate(n);
        ids
    }

    /// Whether every outlier is selected strictly less than every
    /// community member.
    pub fn outliers_least_selected(&self) -> bool {
        let share = |c: Community| {
            self.membership
                .iter()
                .zip(&self.selected_share_pct)
                .filter(move |(m, _)| **m == c)
                .map(|(_, s)| *s)
        };
        let worst_member = share(Community::A)
            .chain(share(Community::B))
            .fold(f64::INFINITY, f64::min);
        share(Community::Outlier).all(|s| s < worst_member)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelativeImprovement {
    pub baseline: Mode,
    pub f1_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub seed: u64,
    pub dataset_signature: String,
    pub rounds: usize,
    pub peers: usize,
    pub clients: Vec<ClientMetrics>,
    /// Mean F1 per class over clients whose test data contains that class.
    pub class_f1: Vec<Option<f64>>,
    pub summary: MetricSummary,
    pub communication: CommunicationSummary,
    pub selection_frequency: Option<Vec<Vec<f64>>>,
    pub communities: Option<CommunityReport>,
    pub relative_improvement: Option<RelativeImprovement>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("report: {e}")))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Fills `relative_improvement` from a baseline report on the same data.
    pub fn set_baseline(&mut self, baseline: &ExperimentReport) -> Result<()> {
        check_signatures(&[self, baseline])?;
        self.relative_improvement = Some(RelativeImprovement {
            baseline: baseline.mode,
            f1_pct: relative_improvement(self.summary.f1.mean, baseline.summary.f1.mean)?,
        });
        Ok(())
    }
}

fn check_signatures(reports: &[&ExperimentReport]) -> Result<()> {
    if let Some(first) = reports.first() {
        if let Some(bad) = reports.iter().find(|r| r.dataset_signature != first.dataset_signature) {
            return Err(Error::config(
                "dataset_signature",
                format!(
                    "{} ({}) does not match {} ({})",
                    bad.dataset_signature, bad.mode, first.dataset_signature, first.mode
                ),
            ));
        }
    }
    Ok(())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse(format!("{}: {e}", path.display()))
}

fn write_csv<F>(path: &Path, header: &[String], mut rows: F) -> Result<()>
where
    F: FnMut(&mut csv::Writer<fs::File>) -> std::result::Result<(), csv::Error>,
{
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(csv_err(path))?;
    rows(&mut w).map_err(csv_err(path))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes every output of one experiment into `dir`:
/// `report.json`, `rounds.jsonl`, `summary.csv`, `clients.csv`,
/// `classes.csv`, `model.json` and, when present, `selection_matrix.csv`.
pub fn write_outputs(dir: &Path, report: &ExperimentReport, logs: &[RoundLog], models: &[ModelParams]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("report.json", &report.to_json())?;

    let path = dir.join("rounds.jsonl");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for log in logs {
        writeln!(f, "{}", log.to_line()).map_err(|e| Error::io(&path, e))?;
    }

    write_summary_csv(&dir.join("summary.csv"), report)?;
    write_clients_csv(&dir.join("clients.csv"), report)?;
    write_classes_csv(&dir.join("classes.csv"), report)?;
    if let Some(freq) = &report.selection_frequency {
        write_matrix_csv(&dir.join("selection_matrix.csv"), freq)?;
    }
    write("model.json", &serde_json::to_string(models).expect("models serialize"))
}

/// One row per metric: mean, median, std.
pub fn write_summary_csv(path: &Path, report: &ExperimentReport) -> Result<()> {
    let header: Vec<String> = ["mode", "metric", "mean", "median", "std"].map(String::from).into();
    let s = &report.summary;
    write_csv(path, &header, |w| {
        for (name, m) in [("f1", s.f1), ("precision", s.precision), ("recall", s.recall)] {
            w.write_record([
                report.mode.name().to_string(),
                name.into(),
                fmt(m.mean),
                fmt(m.median),
                fmt(m.std),
            ])?;
        }
        Ok(())
    })
}

pub fn write_clients_csv(path: &Path, report: &ExperimentReport) -> Result<()> {
    let header: Vec<String> = ["client", "f1", "precision", "recall", "accuracy", "best_round"]
        .map(String::from)
        .into();
    write_csv(path, &header, |w| {
        for c in &report.clients {
            w.write_record([
                c.client.to_string(),
                fmt(c.f1),
                fmt(c.precision),
                fmt(c.recall),
                fmt(c.accuracy),
                c.best_round.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_classes_csv(path: &Path, report: &ExperimentReport) -> Result<()> {
    let header: Vec<String> = ["class", "mean_f1"].map(String::from).into();
    write_csv(path, &header, |w| {
        for (c, f1) in report.class_f1.iter().enumerate() {
            w.write_record([c.to_string(), f1.map(fmt).unwrap_or_default()])?;
        }
        Ok(())
    })
}

pub fn write_matrix_csv(path: &Path, matrix: &[Vec<f64>]) -> Result<()> {
    let mut header = vec!["client".to_string()];
    header.extend((0..matrix.len()).map(|k| k.to_string()));
    write_csv(path, &header, |w| {
        for (j, row) in matrix.iter().enumerate() {
            let mut rec = vec![j.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.2}")));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

/// One row of a comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub mode: Mode,
    pub seed: u64,
    pub summary: MetricSummary,
    pub ri_pct: f64,
    pub ac_pct: f64,
    pub negative_ri: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub baseline: Mode,
    pub rows: Vec<ComparisonRow>,
}

/// Rows in declared mode order. RI is relative to `local_lower` when present,
/// else to the first row after sorting.
pub fn compare(reports: &[ExperimentReport]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::config("reports", "need at least two reports to compare"));
    }
    check_signatures(&reports.iter().collect::<Vec<_>>())?;
    let mut sorted: Vec<&ExperimentReport> = reports.iter().collect();
    sorted.sort_by_key(|r| (r.mode, r.seed));
    let base = sorted
        .iter()
        .find(|r| r.mode == Mode::LocalLower)
        .copied()
        .unwrap_or(sorted[0]);
    let rows = sorted
        .iter()
        .map(|r| {
            let ri = relative_improvement(r.summary.f1.mean, base.summary.f1.mean)?;
            Ok(ComparisonRow {
                mode: r.mode,
                seed: r.seed,
                summary: r.summary,
                ri_pct: ri,
                ac_pct: r.communication.additional_cost_pct,
                negative_ri: ri < 0.0,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ComparisonTable {
        baseline: base.mode,
        rows,
    })
}

impl ComparisonTable {
    pub fn header() -> Vec<String> {
        let mut h = vec!["mode".to_string(), "seed".to_string()];
        for metric in ["f1", "precision", "recall"] {
            for stat in ["mean", "median", "std"] {
                h.push(format!("{metric}_{stat}"));
            }
        }
        h.extend(["ri_pct", "ac_pct", "flag"].map(String::from));
        h
    }

    pub fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut rec = vec![r.mode.name().to_string(), r.seed.to_string()];
                for s in [r.summary.f1, r.summary.precision, r.summary.recall] {
                    rec.extend([fmt(s.mean), fmt(s.median), fmt(s.std)]);
                }
                rec.push(format!("{:.2}", r.ri_pct));
                rec.push(format!("{:.0}", r.ac_pct));
                rec.push(if r.negative_ri {
                    "negative_ri".into()
                } else {
                    String::new()
                });
                rec
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let records = self.records();
        write_csv(path, &Self::header(), |w| {
            for rec in &records {
                w.write_record(rec)?;
            }
            Ok(())
        })
    }

    /// Fixed-width rendering in the `mean (median) ± std` layout.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<14} {:>5} {:>26} {:>26} {:>26} {:>8} {:>6}\n",
            "mode", "seed", "f1", "precision", "recall", "ri%", "ac%"
        );
        let cell = |s: Summary| format!("{:.3} ({:.3}) ± {:.3}", s.mean, s.median, s.std);
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>5} {:>26} {:>26} {:>26} {:>8.2} {:>6.0}{}\n",
                r.mode.name(),
                r.seed,
                cell(r.summary.f1),
                cell(r.summary.precision),
                cell(r.summary.recall),
                r.ri_pct,
                r.ac_pct,
                if r.negative_ri { "  !" } else { "" }
            ));
        }
        out.push_str(&format!("ri relative to {}\n", self.baseline));
        out
    }
}
