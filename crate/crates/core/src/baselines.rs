//! Robust-aggregation baselines and the server-side aggregator wrapper that
//! puts them and the history defense behind one interface.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::geometric_median;
use crate::defense::{DefenseConfig, DefenseError, MudHog, RoundVerdict};
use crate::hog::{ClientHistory, HogError};
use crate::vecspace::{
    coordinate_median, cosine, squared_distance, weighted_sum, GradientVector, VecError,
};

pub const GEOMED_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregatorError {
    #[error("no client updates")]
    Empty,
    #[error("{needed} clients needed, got {found}")]
    TooFewClients { needed: usize, found: usize },
    #[error("{0} data sizes for {1} updates")]
    SizeMismatch(usize, usize),
    #[error("unknown aggregator {0:?}")]
    UnknownKind(String),
    #[error(transparent)]
    Vec(#[from] VecError),
    #[error(transparent)]
    Hog(#[from] HogError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
}

/// Data-size-weighted mean.
pub fn fedavg(
    grads: &[GradientVector],
    data_sizes: &[usize],
) -> Result<GradientVector, AggregatorError> {
    Ok(weighted_sum(grads, &fedavg_weights(grads, data_sizes)?)?.expect("nonempty"))
}

fn fedavg_weights(
    grads: &[GradientVector],
    data_sizes: &[usize],
) -> Result<Vec<f64>, AggregatorError> {
    if grads.is_empty() {
        return Err(AggregatorError::Empty);
    }
    if grads.len() != data_sizes.len() {
        return Err(AggregatorError::SizeMismatch(data_sizes.len(), grads.len()));
    }
    let total: usize = data_sizes.iter().sum();
    Ok(data_sizes
        .iter()
        .map(|&s| {
            if total == 0 {
                1.0 / grads.len() as f64
            } else {
                s as f64 / total as f64
            }
        })
        .collect())
}

pub fn median_agg(grads: &[GradientVector]) -> Result<GradientVector, AggregatorError> {
    if grads.is_empty() {
        return Err(AggregatorError::Empty);
    }
    Ok(coordinate_median(grads)?)
}

pub fn geomed_agg(grads: &[GradientVector]) -> Result<GradientVector, AggregatorError> {
    if grads.is_empty() {
        return Err(AggregatorError::Empty);
    }
    check_dims(grads)?;
    Ok(geometric_median(grads, GEOMED_TOL))
}

fn check_dims(grads: &[GradientVector]) -> Result<(), AggregatorError> {
    let dim = grads[0].dim();
    match grads.iter().find(|g| g.dim() != dim) {
        Some(g) => Err(VecError::DimensionMismatch {
            expected: dim,
            found: g.dim(),
        }
        .into()),
        None => Ok(()),
    }
}

pub fn default_krum_f(n: usize) -> usize {
    n / 5
}

/// Sum of squared distances from each gradient to its `n − f − 2` nearest
/// other gradients.
pub fn krum_scores(grads: &[GradientVector], f: usize) -> Result<Vec<f64>, AggregatorError> {
    let n = grads.len();
    if n < f + 3 {
        return Err(AggregatorError::TooFewClients {
            needed: f + 3,
            found: n,
        });
    }
    check_dims(grads)?;
    let k = n - f - 2;
    Ok((0..n)
        .map(|i| {
            let mut ds: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| squared_distance(grads[i].as_slice(), grads[j].as_slice()))
                .collect();
            ds.sort_by(f64::total_cmp);
            ds[..k].iter().sum()
        })
        .collect())
}

/// Indices of the `m` lowest scores, ties broken by index.
fn lowest(scores: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(m);
    order
}

pub fn krum(grads: &[GradientVector], f: usize) -> Result<GradientVector, AggregatorError> {
    let scores = krum_scores(grads, f)?;
    Ok(grads[lowest(&scores, 1)[0]].clone())
}

/// Mean of the `m_select` gradients with the lowest Krum scores.
pub fn multi_krum(
    grads: &[GradientVector],
    f: usize,
    m_select: usize,
) -> Result<GradientVector, AggregatorError> {
    let chosen = multi_krum_selection(grads, f, m_select)?;
    Ok(GradientVector::mean(chosen.iter().map(|&i| &grads[i]))?)
}

pub fn multi_krum_selection(
    grads: &[GradientVector],
    f: usize,
    m_select: usize,
) -> Result<Vec<usize>, AggregatorError> {
    let scores = krum_scores(grads, f)?;
    let m = m_select.clamp(1, grads.len());
    Ok(lowest(&scores, m))
}

/// Per-client weights in [0, 1] from pairwise cosine similarity of the
/// cumulative histories, with pardoning and logit squashing.
pub fn foolsgold_weights(histories: &[GradientVector]) -> Result<Vec<f64>, AggregatorError> {
    let n = histories.len();
    if n < 2 {
        return Err(AggregatorError::TooFewClients {
            needed: 2,
            found: n,
        });
    }
    check_dims(histories)?;
    let mut cs = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                cs[i][j] = match cosine(&histories[i], &histories[j]) {
                    Ok(c) => c,
                    Err(VecError::ZeroVector) => 0.0,
                    Err(e) => return Err(e.into()),
                };
            }
        }
    }
    let row_max = |row: &[f64]| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let maxcs: Vec<f64> = cs.iter().map(|r| row_max(r)).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && maxcs[i] < maxcs[j] {
                cs[i][j] *= maxcs[i] / maxcs[j];
            }
        }
    }
    let mut wv: Vec<f64> = cs
        .iter()
        .map(|r| (1.0 - row_max(r)).clamp(0.0, 1.0))
        .collect();
    let top = wv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for w in &mut wv {
        *w /= top;
        if *w == 1.0 {
            *w = 0.99;
        }
        *w = ((*w / (1.0 - *w)).ln() + 0.5).clamp(0.0, 1.0);
    }
    Ok(wv)
}

/// `Σ w·g / Σ w`; falls back to the plain mean when every weight is zero.
pub fn foolsgold_aggregate(
    grads: &[GradientVector],
    weights: &[f64],
) -> Result<GradientVector, AggregatorError> {
    if grads.is_empty() {
        return Err(AggregatorError::Empty);
    }
    let total: f64 = weights.iter().sum();
    let norm: Vec<f64> = if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / grads.len() as f64; grads.len()]
    };
    Ok(weighted_sum(grads, &norm)?.expect("nonempty"))
}

/// Aggregation rule, parsed from strings such as `fedavg`, `krum`,
/// `krum:4`, `multi-krum:4:10`, `foolsgold` or `mudhog`. Omitted Krum
/// parameters take their defaults for the client count at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AggregatorKind {
    FedAvg,
    Median,
    GeoMed,
    Krum {
        f: Option<usize>,
    },
    MultiKrum {
        f: Option<usize>,
        m_select: Option<usize>,
    },
    FoolsGold,
    MudHog,
}

impl AggregatorKind {
    /// One of each, default parameters.
    pub const ALL: [AggregatorKind; 7] = [
        AggregatorKind::FedAvg,
        AggregatorKind::Median,
        AggregatorKind::GeoMed,
        AggregatorKind::Krum { f: None },
        AggregatorKind::MultiKrum {
            f: None,
            m_select: None,
        },
        AggregatorKind::FoolsGold,
        AggregatorKind::MudHog,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::FedAvg => "fedavg",
            AggregatorKind::Median => "median",
            AggregatorKind::GeoMed => "geomed",
            AggregatorKind::Krum { .. } => "krum",
            AggregatorKind::MultiKrum { .. } => "multi-krum",
            AggregatorKind::FoolsGold => "foolsgold",
            AggregatorKind::MudHog => "mudhog",
        }
    }

    /// Checks Krum parameters against the client count.
    pub fn validate(self, n_clients: usize) -> Result<(), AggregatorError> {
        if let AggregatorKind::Krum { f } | AggregatorKind::MultiKrum { f, .. } = self {
            let f = f.unwrap_or_else(|| default_krum_f(n_clients));
            if n_clients < f + 3 || 2 * f + 2 >= n_clients {
                return Err(AggregatorError::TooFewClients {
                    needed: (f + 3).max(2 * f + 3),
                    found: n_clients,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        out.write_str(self.name())?;
        match *self {
            AggregatorKind::Krum { f: Some(f) } => write!(out, ":{f}"),
            AggregatorKind::MultiKrum { f, m_select } => match (f, m_select) {
                (Some(f), Some(m)) => write!(out, ":{f}:{m}"),
                (Some(f), None) => write!(out, ":{f}"),
                (None, Some(m)) => write!(out, "::{m}"),
                (None, None) => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

impl FromStr for AggregatorKind {
    type Err = AggregatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || AggregatorError::UnknownKind(s.to_string());
        let mut parts = s.trim().split(':');
        let head = parts.next().unwrap_or_default().to_ascii_lowercase();
        let mut num = || -> Result<Option<usize>, AggregatorError> {
            match parts.next() {
                None | Some("") => Ok(None),
                Some(p) => p.parse().map(Some).map_err(|_| unknown()),
            }
        };
        let kind = match head.as_str() {
            "fedavg" => AggregatorKind::FedAvg,
            "median" => AggregatorKind::Median,
            "geomed" => AggregatorKind::GeoMed,
            "krum" => AggregatorKind::Krum { f: num()? },
            "multi-krum" | "multikrum" => {
                let f = num()?;
                AggregatorKind::MultiKrum {
                    f,
                    m_select: num()?,
                }
            }
            "foolsgold" => AggregatorKind::FoolsGold,
            "mudhog" | "mud-hog" => AggregatorKind::MudHog,
            _ => return Err(unknown()),
        };
        if parts.next().is_some() {
            return Err(unknown());
        }
        Ok(kind)
    }
}

impl TryFrom<String> for AggregatorKind {
    type Error = AggregatorError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AggregatorKind> for String {
    fn from(k: AggregatorKind) -> Self {
        k.to_string()
    }
}

/// Result of one server aggregation.
#[derive(Debug, Clone)]
pub struct Aggregation {
    pub aggregate: GradientVector,
    /// Effective per-client weight when the rule is a weighted mean;
    /// `None` for the median rules.
    pub weights: Option<Vec<f64>>,
    pub verdict: Option<RoundVerdict>,
}

/// Stateful server aggregator.
#[derive(Debug, Clone)]
pub struct Aggregator {
    kind: AggregatorKind,
    n_clients: usize,
    histories: Vec<ClientHistory>,
    defense: Option<MudHog>,
}

impl Aggregator {
    pub fn new(
        kind: AggregatorKind,
        n_clients: usize,
        defense: &DefenseConfig,
        seed: u64,
    ) -> Result<Self, AggregatorError> {
        kind.validate(n_clients)?;
        let mudhog = match kind {
            AggregatorKind::MudHog => Some(MudHog::new(n_clients, defense.clone(), seed)?),
            _ => None,
        };
        let histories = match kind {
            AggregatorKind::FoolsGold => (0..n_clients).map(|_| ClientHistory::new(1)).collect(),
            _ => Vec::new(),
        };
        Ok(Self {
            kind,
            n_clients,
            histories,
            defense: mudhog,
        })
    }

    pub fn kind(&self) -> AggregatorKind {
        self.kind
    }

    pub fn defense(&self) -> Option<&MudHog> {
        self.defense.as_ref()
    }

    pub fn aggregate(
        &mut self,
        round: usize,
        updates: &[GradientVector],
        data_sizes: &[usize],
    ) -> Result<Aggregation, AggregatorError> {
        if updates.len() != self.n_clients {
            return Err(AggregatorError::TooFewClients {
                needed: self.n_clients,
                found: updates.len(),
            });
        }
        if data_sizes.len() != updates.len() {
            return Err(AggregatorError::SizeMismatch(
                data_sizes.len(),
                updates.len(),
            ));
        }
        let n = updates.len();
        let plain = |aggregate| Aggregation {
            aggregate,
            weights: None,
            verdict: None,
        };
        let weighted = |aggregate, w| Aggregation {
            aggregate,
            weights: Some(w),
            verdict: None,
        };
        Ok(match self.kind {
            AggregatorKind::FedAvg => {
                let w = fedavg_weights(updates, data_sizes)?;
                weighted(weighted_sum(updates, &w)?.expect("nonempty"), w)
            }
            AggregatorKind::Median => plain(median_agg(updates)?),
            AggregatorKind::GeoMed => plain(geomed_agg(updates)?),
            AggregatorKind::Krum { f } => {
                let f = f.unwrap_or_else(|| default_krum_f(n));
                let best = lowest(&krum_scores(updates, f)?, 1)[0];
                let mut w = vec![0.0; n];
                w[best] = 1.0;
                weighted(updates[best].clone(), w)
            }
            AggregatorKind::MultiKrum { f, m_select } => {
                let f = f.unwrap_or_else(|| default_krum_f(n));
                let m = m_select.unwrap_or(n - f - 2);
                let chosen = multi_krum_selection(updates, f, m)?;
                let mut w = vec![0.0; n];
                for &i in &chosen {
                    w[i] = 1.0 / chosen.len() as f64;
                }
                weighted(weighted_sum(updates, &w)?.expect("nonempty"), w)
            }
            AggregatorKind::FoolsGold => {
                for (h, g) in self.histories.iter_mut().zip(updates) {
                    h.record(g.clone())?;
                }
                let long: Vec<GradientVector> = self
                    .histories
                    .iter()
                    .map(|h| h.long_hog().cloned())
                    .collect::<Result<_, _>>()?;
                let raw = foolsgold_weights(&long)?;
                let total: f64 = raw.iter().sum();
                let w: Vec<f64> = if total > 0.0 {
                    raw.iter().map(|v| v / total).collect()
                } else {
                    vec![1.0 / n as f64; n]
                };
                weighted(weighted_sum(updates, &w)?.expect("nonempty"), w)
            }
            AggregatorKind::MudHog => {
                let defense = self.defense.as_mut().expect("constructed with defense");
                let (verdict, aggregate) = defense.round(round, updates, data_sizes)?;
                Aggregation {
                    aggregate,
                    weights: Some(verdict.weights.clone()),
                    verdict: Some(verdict),
                }
            }
        })
    }
}
