use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::{RoundReport, RunOutput, Summary};
use super::HarnessError;
use crate::data::DataError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const VERDICTS_FILE: &str = "verdicts.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const SUMMARY_FILE: &str = "summary.json";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(reports: &[RoundReport]) -> String {
    let n_classes = reports.first().map_or(0, |r| r.confusion.n_classes);
    let mut out = String::from("round,accuracy,loss");
    for c in 0..n_classes {
        write!(out, ",precision_{c}").unwrap();
    }
    for c in 0..n_classes {
        write!(out, ",recall_{c}").unwrap();
    }
    out.push_str(",firm_excluded,no_participants,kmeans_separation\n");
    for r in reports {
        write!(out, "{},{},{}", r.round, r.accuracy, r.loss).unwrap();
        for p in &r.metrics.precision {
            write!(out, ",{}", p.value).unwrap();
        }
        for p in &r.metrics.recall {
            write!(out, ",{}", p.value).unwrap();
        }
        let (firm, none, sep) = match &r.verdict {
            Some(v) => (
                v.firm.iter().filter(|&&f| f).count().to_string(),
                v.no_participants.to_string(),
                opt(v.kmeans_separation),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        writeln!(out, ",{firm},{none},{sep}").unwrap();
    }
    out
}

/// One row per (round, client).
pub fn verdicts_csv(reports: &[RoundReport], summary: &Summary) -> String {
    let mut out = String::from(
        "round,client,role,label,firm,weight,sign_flip_cosine,noise_distance,kmeans_cluster,unreliable_cosine\n",
    );
    for r in reports {
        for (i, role) in summary.roles.iter().enumerate() {
            let weight = opt(r.weights.as_ref().map(|w| w[i]));
            match &r.verdict {
                Some(v) => {
                    let d = &v.diagnostics[i];
                    writeln!(
                        out,
                        "{},{i},{role},{},{},{weight},{},{},{},{}",
                        r.round,
                        v.labels[i],
                        v.firm[i],
                        opt(d.sign_flip_cosine),
                        opt(d.noise_distance),
                        opt(d.kmeans_cluster),
                        opt(d.unreliable_cosine)
                    )
                    .unwrap();
                }
                None => writeln!(out, "{},{i},{role},,,{weight},,,,", r.round).unwrap(),
            }
        }
    }
    out
}

/// Long format: one row per nonzero cell per round.
pub fn confusion_csv(reports: &[RoundReport]) -> String {
    let mut out = String::from("round,truth,predicted,count\n");
    for r in reports {
        let n = r.confusion.n_classes;
        for t in 0..n {
            for p in 0..n {
                let c = r.confusion.get(t, p);
                if c > 0 {
                    writeln!(out, "{},{t},{p},{c}", r.round).unwrap();
                }
            }
        }
    }
    out
}

pub fn summary_json(summary: &Summary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

fn write(path: PathBuf, body: &str) -> Result<(), HarnessError> {
    fs::write(&path, body).map_err(|source| {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
        .into()
    })
}

/// Writes the four report files into `out_dir`, creating it if needed.
pub fn emit_reports(output: &RunOutput, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out_dir).map_err(|source| DataError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let files = [
        (METRICS_FILE, metrics_csv(&output.reports)),
        (
            VERDICTS_FILE,
            verdicts_csv(&output.reports, &output.summary),
        ),
        (CONFUSION_FILE, confusion_csv(&output.reports)),
        (SUMMARY_FILE, summary_json(&output.summary)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        write(path.clone(), &body)?;
        written.push(path);
    }
    Ok(written)
}
