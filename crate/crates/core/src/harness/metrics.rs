use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clients::ClientKind;
use crate::defense::RoundVerdict;
use crate::model::ConfusionMatrix;

/// A ratio with a flag for the 0/0 case, which is reported as 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

impl Ratio {
    pub fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Ratio {
                value: 1.0,
                degenerate: true,
            }
        } else {
            Ratio {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub target_precision: Ratio,
    pub source_recall: Ratio,
    /// `precision[c] = M[c][c] / Σ_i M[i][c]`
    pub precision: Vec<Ratio>,
    /// `recall[c] = M[c][c] / Σ_j M[c][j]`
    pub recall: Vec<Ratio>,
}

/// Rows of `m` are ground truth, columns predictions.
pub fn classification_metrics(m: &ConfusionMatrix, source: usize, target: usize) -> ClassMetrics {
    let n = m.n_classes;
    let precision: Vec<Ratio> = (0..n)
        .map(|c| Ratio::of(m.get(c, c), (0..n).map(|i| m.get(i, c)).sum()))
        .collect();
    let recall: Vec<Ratio> = (0..n)
        .map(|c| Ratio::of(m.get(c, c), m.row(c).iter().sum()))
        .collect();
    ClassMetrics {
        target_precision: precision[target],
        source_recall: recall[source],
        precision,
        recall,
    }
}

/// Detection record for one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDetection {
    pub client: usize,
    pub kind: ClientKind,
    pub detected_rounds: usize,
    /// Round the client became firmly malicious.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub firm_round: Option<usize>,
    /// First round of the streak that led to the firm decision, or for
    /// unreliable clients the first round flagged unreliable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindDetection {
    pub clients: usize,
    pub detected_rounds: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub rounds: usize,
    pub per_kind: BTreeMap<ClientKind, KindDetection>,
    /// Over all malicious and unreliable clients.
    pub overall: Option<f64>,
    pub clients: Vec<ClientDetection>,
    /// Clients that are not malicious but ended up firmly excluded.
    pub false_firm: Vec<usize>,
}

/// Share of client-rounds in which malicious clients were firmly excluded
/// and unreliable clients were flagged unreliable, over `rounds` rounds.
pub fn detection_ratio(
    verdicts: &[RoundVerdict],
    kinds: &[ClientKind],
    rounds: usize,
) -> DetectionSummary {
    let n = kinds.len();
    let mut clients = Vec::new();
    let mut per_kind: BTreeMap<ClientKind, KindDetection> = BTreeMap::new();
    let mut false_firm = Vec::new();
    for (i, &kind) in kinds.iter().enumerate() {
        let firm_round = verdicts.iter().find(|v| v.firm[i]).map(|v| v.round);
        if !kind.is_malicious() && firm_round.is_some() {
            false_firm.push(i);
        }
        if kind == ClientKind::Normal {
            continue;
        }
        let (detected, first_round) = if kind.is_malicious() {
            let detected = verdicts.iter().filter(|v| v.firm[i]).count();
            (detected, firm_round.map(|r| streak_start(verdicts, i, r)))
        } else {
            let flagged = |v: &&RoundVerdict| {
                v.labels[i] == crate::defense::ClientLabel::Unreliable && !v.firm[i]
            };
            let detected = verdicts.iter().filter(flagged).count();
            (detected, verdicts.iter().find(flagged).map(|v| v.round))
        };
        clients.push(ClientDetection {
            client: i,
            kind,
            detected_rounds: detected,
            firm_round: if kind.is_malicious() {
                firm_round
            } else {
                None
            },
            first_round,
        });
        let entry = per_kind.entry(kind).or_insert(KindDetection {
            clients: 0,
            detected_rounds: 0,
            ratio: 0.0,
        });
        entry.clients += 1;
        entry.detected_rounds += detected;
    }
    for e in per_kind.values_mut() {
        e.ratio = e.detected_rounds as f64 / (rounds * e.clients) as f64;
    }
    let tracked: usize = per_kind.values().map(|e| e.clients).sum();
    let overall = (tracked > 0).then(|| {
        per_kind.values().map(|e| e.detected_rounds).sum::<usize>() as f64
            / (rounds * tracked) as f64
    });
    debug_assert!(verdicts.iter().all(|v| v.n_clients() == n));
    DetectionSummary {
        rounds,
        per_kind,
        overall,
        clients,
        false_firm,
    }
}

fn streak_start(verdicts: &[RoundVerdict], i: usize, firm_round: usize) -> usize {
    let by_round: BTreeMap<usize, &RoundVerdict> = verdicts.iter().map(|v| (v.round, v)).collect();
    let threat = by_round[&firm_round].labels[i].threat();
    let mut start = firm_round;
    while start > 1 {
        match by_round.get(&(start - 1)) {
            Some(v)
                if !v.firm[i]
                    && v.labels[i].threat().is_some()
                    && v.labels[i].threat() == threat =>
            {
                start -= 1
            }
            _ => break,
        }
    }
    start
}
