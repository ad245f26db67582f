//! The history-of-gradients defense: four detectors run in sequence
//! (sign-flip, additive-noise, targeted, unreliable), a tracker that turns
//! repeated tentative flags into permanent exclusions, and the weighted
//! aggregation over whoever is left.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{auto_eps_with, dbscan_with, kmeans2_traced, DistanceMatrix, NOISE};
use crate::hog::{ClientHistory, HogError};
use crate::model::{ModelError, ModelParams};
use crate::seed;
use crate::vecspace::{
    coordinate_median, cosine, euclidean, gap_boundary, weighted_sum, GradientVector, VecError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DefenseError {
    #[error("invalid defense config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} clients, got {found}")]
    ClientCountMismatch { expected: usize, found: usize },
    #[error("rounds must be fed in order: expected {expected}, got {found}")]
    OutOfOrderRound { expected: usize, found: usize },
    #[error("client {0} has no recorded update")]
    MissingUpdate(usize),
    #[error(transparent)]
    Vec(#[from] VecError),
    #[error(transparent)]
    Hog(#[from] HogError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    /// Short-HoG window `l`.
    pub window: usize,
    /// Rounds aggregated with plain FedAvg before detection starts.
    pub warmup_rounds: usize,
    /// Weight multiplier for clients flagged unreliable.
    pub alpha: f64,
    /// The widest cosine gap must exceed this before anyone is flagged unreliable.
    pub min_gap_unreliable: f64,
    /// The smaller k-means cluster is flagged only if the centroids are at
    /// least `kappa` times the larger cluster's mean radius apart.
    pub kmeans_validity_kappa: f64,
    /// A density outlier is flagged as additive noise only if its distance
    /// to the majority median is at least this many times the majority's
    /// mean radius.
    pub noise_validity_kappa: f64,
    pub dbscan_min_pts: usize,
    pub dbscan_eps_factor: f64,
    /// Consecutive malicious flags needed for permanent exclusion.
    pub confirm_rounds: usize,
    /// Normalise aggregation weights by the data size of all clients rather
    /// than of the participating ones.
    pub weight_by_all_clients: bool,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            window: 3,
            warmup_rounds: 3,
            alpha: 0.5,
            min_gap_unreliable: 0.05,
            kmeans_validity_kappa: 2.0,
            noise_validity_kappa: 2.0,
            dbscan_min_pts: 2,
            dbscan_eps_factor: 1.5,
            confirm_rounds: 2,
            weight_by_all_clients: false,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<(), DefenseError> {
        let bad = |m: &str| Err(DefenseError::InvalidConfig(m.to_string()));
        if self.window < 1 {
            return bad("window must be at least 1");
        }
        if self.warmup_rounds < self.window {
            return bad("warmup_rounds must be at least window");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.min_gap_unreliable >= 0.0 && self.min_gap_unreliable.is_finite()) {
            return bad("min_gap_unreliable must be finite and non-negative");
        }
        if !(self.kmeans_validity_kappa >= 0.0 && self.kmeans_validity_kappa.is_finite()) {
            return bad("kmeans_validity_kappa must be finite and non-negative");
        }
        if !(self.noise_validity_kappa >= 0.0 && self.noise_validity_kappa.is_finite()) {
            return bad("noise_validity_kappa must be finite and non-negative");
        }
        if self.dbscan_min_pts < 1 {
            return bad("dbscan_min_pts must be at least 1");
        }
        if !(self.dbscan_eps_factor > 0.0 && self.dbscan_eps_factor.is_finite()) {
            return bad("dbscan_eps_factor must be positive");
        }
        if self.confirm_rounds < 1 {
            return bad("confirm_rounds must be at least 1");
        }
        Ok(())
    }
}

/// Tentative per-round label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClientLabel {
    Normal,
    Unreliable,
    SignFlip,
    AdditiveNoise,
    Targeted,
}

impl ClientLabel {
    pub fn is_malicious(self) -> bool {
        self.threat().is_some()
    }

    pub fn threat(self) -> Option<Threat> {
        match self {
            ClientLabel::SignFlip | ClientLabel::AdditiveNoise => Some(Threat::Untargeted),
            ClientLabel::Targeted => Some(Threat::Targeted),
            ClientLabel::Normal | ClientLabel::Unreliable => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClientLabel::Normal => "normal",
            ClientLabel::Unreliable => "unreliable",
            ClientLabel::SignFlip => "sign-flip",
            ClientLabel::AdditiveNoise => "additive-noise",
            ClientLabel::Targeted => "targeted",
        }
    }
}

impl fmt::Display for ClientLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Malicious super-class used for confirmation streaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Threat {
    Untargeted,
    Targeted,
}

/// Quantities each detector looked at for one client. `None` means the
/// client did not reach that stage or the stage had nothing to compute.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientDiagnostics {
    pub sign_flip_cosine: Option<f64>,
    pub noise_distance: Option<f64>,
    pub kmeans_cluster: Option<usize>,
    pub unreliable_cosine: Option<f64>,
}

/// Distance evaluations per stage. `reference` counts comparisons against a
/// median or centroid vector; `pairwise` counts all-pairs matrices (density
/// clustering and the two-means initialisation).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounters {
    pub sign_flip_inputs: usize,
    pub additive_noise_inputs: usize,
    pub targeted_inputs: usize,
    pub unreliable_inputs: usize,
    pub sign_flip_reference: usize,
    pub additive_noise_reference: usize,
    pub targeted_reference: usize,
    pub unreliable_reference: usize,
    pub additive_noise_pairwise: usize,
    pub targeted_pairwise: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignFlipOutcome {
    pub flagged: Vec<usize>,
    pub cosines: Vec<(usize, f64)>,
    pub distance_evals: usize,
}

/// Flags clients whose short HoG points away from the coordinate median of
/// the `active` clients. Zero vectors are flagged.
pub fn detect_sign_flip(
    short_hogs: &[GradientVector],
    active: &[usize],
) -> Result<SignFlipOutcome, DefenseError> {
    let mut out = SignFlipOutcome::default();
    if active.is_empty() {
        return Ok(out);
    }
    let members: Vec<&GradientVector> = active.iter().map(|&i| &short_hogs[i]).collect();
    let median = coordinate_median(&members)?;
    for &i in active {
        out.distance_evals += 1;
        match cosine(&median, &short_hogs[i]) {
            Ok(c) => {
                out.cosines.push((i, c));
                if c < 0.0 {
                    out.flagged.push(i);
                }
            }
            Err(VecError::ZeroVector) => {
                if short_hogs[i].norm() == 0.0 {
                    out.flagged.push(i);
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdditiveNoiseOutcome {
    pub flagged: Vec<usize>,
    /// Minority members that fell inside the boundary.
    pub residual: Vec<usize>,
    pub distances: Vec<(usize, f64)>,
    pub eps: Option<f64>,
    pub boundary: Option<f64>,
    /// Mean distance of the majority cluster to its own median.
    pub majority_radius: Option<f64>,
    pub distance_evals: usize,
    pub pairwise_evals: usize,
}

/// Density-clusters the short HoGs; members outside the largest cluster
/// whose distance to that cluster's median lies beyond the widest gap, and
/// at least `noise_validity_kappa` majority radii out, are flagged. The gap
/// search includes the majority radius itself, so a minority made only of
/// attackers is not split down the middle. Nothing is flagged unless the
/// largest cluster holds a strict majority.
pub fn detect_additive_noise(
    short_hogs: &[GradientVector],
    active: &[usize],
    cfg: &DefenseConfig,
) -> Result<AdditiveNoiseOutcome, DefenseError> {
    let mut out = AdditiveNoiseOutcome::default();
    if active.len() < 2 {
        return Ok(out);
    }
    let points: Vec<&GradientVector> = active.iter().map(|&i| &short_hogs[i]).collect();
    let dm = DistanceMatrix::new(&points);
    out.pairwise_evals = dm.evaluations();
    let eps =
        auto_eps_with(&dm, cfg.dbscan_min_pts, cfg.dbscan_eps_factor).expect("at least two points");
    out.eps = Some(eps);
    let assignment = dbscan_with(&dm, eps, cfg.dbscan_min_pts);
    let sizes = assignment.sizes();
    let Some(major) = (0..sizes.len()).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
    else {
        return Ok(out);
    };
    let (high, low): (Vec<usize>, Vec<usize>) = (0..active.len())
        .partition(|&p| assignment.labels[p] == major as i64 && assignment.labels[p] != NOISE);
    // without a strict majority there is no group to call benign
    if low.is_empty() || 2 * high.len() <= active.len() {
        return Ok(out);
    }
    let high_points: Vec<&GradientVector> = high.iter().map(|&p| points[p]).collect();
    let median = coordinate_median(&high_points)?;
    let mut radius = 0.0;
    for p in &high_points {
        radius += euclidean(p, &median)?;
    }
    radius /= high_points.len() as f64;
    out.distance_evals += high_points.len();
    out.majority_radius = Some(radius);
    let floor = cfg.noise_validity_kappa * radius;
    for &p in &low {
        out.distances
            .push((active[p], euclidean(&median, points[p])?));
        out.distance_evals += 1;
    }
    let ds: Vec<f64> = std::iter::once(radius)
        .chain(out.distances.iter().map(|&(_, d)| d))
        .collect();
    out.boundary = gap_boundary(&ds, 0.0);
    for &(i, d) in &out.distances {
        match out.boundary {
            Some(b) if d > b && d >= floor => out.flagged.push(i),
            _ => out.residual.push(i),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetedOutcome {
    pub flagged: Vec<usize>,
    /// `(client, cluster)` with clusters numbered by first member.
    pub clusters: Vec<(usize, usize)>,
    pub inter_centroid: Option<f64>,
    pub intra_radius: Option<f64>,
    pub distance_evals: usize,
    pub pairwise_evals: usize,
}

/// Two-means over the long HoGs; the strictly smaller cluster is flagged
/// when it is well separated from the larger one.
pub fn detect_targeted(
    long_hogs: &[GradientVector],
    active: &[usize],
    cfg: &DefenseConfig,
    seed: u64,
) -> Result<TargetedOutcome, DefenseError> {
    let mut out = TargetedOutcome::default();
    if active.len() < 2 {
        return Ok(out);
    }
    let points: Vec<&GradientVector> = active.iter().map(|&i| &long_hogs[i]).collect();
    let (assignment, trace) = kmeans2_traced(&points, seed).expect("at least two points");
    out.distance_evals = trace.lloyd;
    out.pairwise_evals = trace.init_pairs;
    out.clusters = active
        .iter()
        .zip(&assignment.labels)
        .map(|(&i, &l)| (i, l as usize))
        .collect();
    if assignment.k < 2 {
        return Ok(out);
    }
    let sizes = assignment.sizes();
    if sizes[0] == sizes[1] {
        return Ok(out);
    }
    let (small, large) = if sizes[0] < sizes[1] { (0, 1) } else { (1, 0) };
    let centroid = |c: usize| -> Result<GradientVector, VecError> {
        GradientVector::mean(assignment.members(c).into_iter().map(|p| points[p]))
    };
    let (c_small, c_large) = (centroid(small)?, centroid(large)?);
    let inter = euclidean(&c_small, &c_large)?;
    let large_members = assignment.members(large);
    let mut radius = 0.0;
    for &p in &large_members {
        radius += euclidean(points[p], &c_large)?;
    }
    radius /= large_members.len() as f64;
    out.distance_evals += 1 + large_members.len();
    out.inter_centroid = Some(inter);
    out.intra_radius = Some(radius);
    if inter > 0.0 && inter >= cfg.kmeans_validity_kappa * radius {
        out.flagged = assignment
            .members(small)
            .into_iter()
            .map(|p| active[p])
            .collect();
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnreliableOutcome {
    pub flagged: Vec<usize>,
    pub cosines: Vec<(usize, f64)>,
    pub boundary: Option<f64>,
    pub distance_evals: usize,
}

/// Flags clients whose cosine to the median of `active` falls below the
/// widest gap in the sorted cosines, provided that gap exceeds
/// `min_gap_unreliable`.
pub fn detect_unreliable(
    short_hogs: &[GradientVector],
    active: &[usize],
    cfg: &DefenseConfig,
) -> Result<UnreliableOutcome, DefenseError> {
    let mut out = UnreliableOutcome::default();
    if active.is_empty() {
        return Ok(out);
    }
    let members: Vec<&GradientVector> = active.iter().map(|&i| &short_hogs[i]).collect();
    let median = coordinate_median(&members)?;
    for &i in active {
        out.distance_evals += 1;
        match cosine(&median, &short_hogs[i]) {
            Ok(c) => out.cosines.push((i, c)),
            Err(VecError::ZeroVector) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let mut cs: Vec<f64> = out.cosines.iter().map(|&(_, c)| c).collect();
    cs.sort_by(f64::total_cmp);
    // only splits that leave a strict minority below the gap
    let below = cs.len().saturating_sub(1) / 2;
    out.boundary = gap_boundary(&cs[..(below + 1).min(cs.len())], cfg.min_gap_unreliable);
    if let Some(b) = out.boundary {
        out.flagged = out
            .cosines
            .iter()
            .filter(|&&(_, c)| c < b)
            .map(|&(i, _)| i)
            .collect();
    }
    Ok(out)
}

/// Outcome of one server round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundVerdict {
    pub round: usize,
    pub warmup: bool,
    /// Tentative label per client; firmly excluded clients keep the label
    /// they were confirmed with.
    pub labels: Vec<ClientLabel>,
    /// Firmly malicious after this round (includes clients confirmed now).
    pub firm: Vec<bool>,
    pub newly_firm: Vec<usize>,
    /// Aggregation weight applied to each client this round.
    pub weights: Vec<f64>,
    pub diagnostics: Vec<ClientDiagnostics>,
    pub counters: StageCounters,
    pub dbscan_eps: Option<f64>,
    pub noise_boundary: Option<f64>,
    pub unreliable_boundary: Option<f64>,
    /// Inter-centroid distance over the larger cluster's mean radius.
    pub kmeans_separation: Option<f64>,
    pub no_participants: bool,
}

impl RoundVerdict {
    pub fn n_clients(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Streak {
    threat: Option<Threat>,
    length: usize,
    start: usize,
}

/// Confirmation bookkeeping across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictTracker {
    firm: Vec<Option<ClientLabel>>,
    detection_round: Vec<Option<usize>>,
    first_flag_round: Vec<Option<usize>>,
    streaks: Vec<Streak>,
    last_round: usize,
}

impl VerdictTracker {
    pub fn new(n_clients: usize) -> Self {
        Self {
            firm: vec![None; n_clients],
            detection_round: vec![None; n_clients],
            first_flag_round: vec![None; n_clients],
            streaks: vec![Streak::default(); n_clients],
            last_round: 0,
        }
    }

    pub fn n_clients(&self) -> usize {
        self.firm.len()
    }

    pub fn is_firm(&self, i: usize) -> bool {
        self.firm[i].is_some()
    }

    pub fn firm_set(&self) -> Vec<usize> {
        (0..self.firm.len()).filter(|&i| self.is_firm(i)).collect()
    }

    /// Round in which the client became firmly malicious.
    pub fn detection_round(&self, i: usize) -> Option<usize> {
        self.detection_round[i]
    }

    /// First round of the streak that made the client firm.
    pub fn first_flag_round(&self, i: usize) -> Option<usize> {
        self.first_flag_round[i]
    }

    pub fn last_round(&self) -> usize {
        self.last_round
    }

    fn observe(&mut self, i: usize, label: ClientLabel, round: usize, confirm: usize) -> bool {
        let streak = &mut self.streaks[i];
        match label.threat() {
            Some(t) if streak.threat == Some(t) => streak.length += 1,
            Some(t) => {
                *streak = Streak {
                    threat: Some(t),
                    length: 1,
                    start: round,
                }
            }
            None => *streak = Streak::default(),
        }
        if streak.length >= confirm {
            self.firm[i] = Some(label);
            self.detection_round[i] = Some(round);
            self.first_flag_round[i] = Some(streak.start);
            true
        } else {
            false
        }
    }
}

/// Runs one server round over the clients' histories (each must already
/// hold this round's update) and returns the verdict plus the aggregate.
pub fn mudhog_round(
    histories: &[ClientHistory],
    data_sizes: &[usize],
    tracker: &mut VerdictTracker,
    round: usize,
    cfg: &DefenseConfig,
    seed: u64,
) -> Result<(RoundVerdict, GradientVector), DefenseError> {
    let n = histories.len();
    for len in [data_sizes.len(), tracker.n_clients()] {
        if len != n {
            return Err(DefenseError::ClientCountMismatch {
                expected: n,
                found: len,
            });
        }
    }
    if round != tracker.last_round + 1 {
        return Err(DefenseError::OutOfOrderRound {
            expected: tracker.last_round + 1,
            found: round,
        });
    }
    let latest: Vec<&GradientVector> = histories
        .iter()
        .enumerate()
        .map(|(i, h)| h.latest().ok_or(DefenseError::MissingUpdate(i)))
        .collect::<Result<_, _>>()?;

    let mut verdict = RoundVerdict {
        round,
        warmup: round <= cfg.warmup_rounds,
        labels: vec![ClientLabel::Normal; n],
        firm: vec![false; n],
        newly_firm: Vec::new(),
        weights: vec![0.0; n],
        diagnostics: vec![ClientDiagnostics::default(); n],
        counters: StageCounters::default(),
        dbscan_eps: None,
        noise_boundary: None,
        unreliable_boundary: None,
        kmeans_separation: None,
        no_participants: false,
    };

    if !verdict.warmup {
        classify(histories, tracker, &mut verdict, cfg, seed)?;
        for i in 0..n {
            if tracker.is_firm(i) {
                continue;
            }
            if tracker.observe(i, verdict.labels[i], round, cfg.confirm_rounds) {
                verdict.newly_firm.push(i);
            }
        }
        for i in 0..n {
            if let Some(label) = tracker.firm[i] {
                verdict.firm[i] = true;
                verdict.labels[i] = label;
            }
        }
    }
    tracker.last_round = round;

    verdict.weights = aggregation_weights(
        &verdict.labels,
        &verdict.firm,
        data_sizes,
        verdict.warmup,
        cfg,
    );
    let participating = (0..n).any(|i| !verdict.firm[i] && !verdict.labels[i].is_malicious());
    let aggregate = match weighted_sum(&latest, &verdict.weights)? {
        Some(agg) if participating => agg,
        _ => {
            verdict.no_participants = true;
            GradientVector::zeros(latest.first().map_or(1, |g| g.dim()))
        }
    };
    Ok((verdict, aggregate))
}

/// Per-client weights: `|D_i| / |D|` over participating clients (or over
/// everyone during warmup or with `weight_by_all_clients`), scaled by `alpha`
/// for unreliable clients and zero for excluded ones.
pub fn aggregation_weights(
    labels: &[ClientLabel],
    firm: &[bool],
    data_sizes: &[usize],
    warmup: bool,
    cfg: &DefenseConfig,
) -> Vec<f64> {
    let participates = |i: usize| !firm[i] && !labels[i].is_malicious();
    let total: usize = if warmup || cfg.weight_by_all_clients {
        data_sizes.iter().sum()
    } else {
        (0..labels.len())
            .filter(|&i| participates(i))
            .map(|i| data_sizes[i])
            .sum()
    };
    (0..labels.len())
        .map(|i| {
            if !participates(i) || total == 0 {
                return 0.0;
            }
            let w = data_sizes[i] as f64 / total as f64;
            if labels[i] == ClientLabel::Unreliable {
                w * cfg.alpha
            } else {
                w
            }
        })
        .collect()
}

fn classify(
    histories: &[ClientHistory],
    tracker: &VerdictTracker,
    verdict: &mut RoundVerdict,
    cfg: &DefenseConfig,
    seed: u64,
) -> Result<(), DefenseError> {
    let n = histories.len();
    let short: Vec<GradientVector> = histories
        .iter()
        .map(|h| h.short_hog())
        .collect::<Result<_, _>>()?;
    let long: Vec<GradientVector> = histories
        .iter()
        .map(|h| h.long_hog().cloned())
        .collect::<Result<_, _>>()?;
    let c = &mut verdict.counters;
    let diag = &mut verdict.diagnostics;

    let mut active: Vec<usize> = (0..n).filter(|&i| !tracker.is_firm(i)).collect();
    c.sign_flip_inputs = active.len();
    let sf = detect_sign_flip(&short, &active)?;
    c.sign_flip_reference = sf.distance_evals;
    for &(i, cs) in &sf.cosines {
        diag[i].sign_flip_cosine = Some(cs);
    }
    for &i in &sf.flagged {
        verdict.labels[i] = ClientLabel::SignFlip;
    }
    active.retain(|i| !sf.flagged.contains(i));

    c.additive_noise_inputs = active.len();
    let an = detect_additive_noise(&short, &active, cfg)?;
    c.additive_noise_reference = an.distance_evals;
    c.additive_noise_pairwise = an.pairwise_evals;
    verdict.dbscan_eps = an.eps;
    verdict.noise_boundary = an.boundary;
    for &(i, d) in &an.distances {
        diag[i].noise_distance = Some(d);
    }
    for &i in &an.flagged {
        verdict.labels[i] = ClientLabel::AdditiveNoise;
    }
    active.retain(|i| !an.flagged.contains(i));

    c.targeted_inputs = active.len();
    let round_seed = seed::derive(seed, &[verdict.round as u64]);
    let tg = detect_targeted(&long, &active, cfg, round_seed)?;
    c.targeted_reference = tg.distance_evals;
    c.targeted_pairwise = tg.pairwise_evals;
    verdict.kmeans_separation = tg.inter_centroid.zip(tg.intra_radius).map(|(d, r)| d / r);
    for &(i, k) in &tg.clusters {
        diag[i].kmeans_cluster = Some(k);
    }
    for &i in &tg.flagged {
        verdict.labels[i] = ClientLabel::Targeted;
    }
    active.retain(|i| !tg.flagged.contains(i));

    c.unreliable_inputs = active.len();
    let ur = detect_unreliable(&short, &active, cfg)?;
    c.unreliable_reference = ur.distance_evals;
    verdict.unreliable_boundary = ur.boundary;
    for &(i, cs) in &ur.cosines {
        diag[i].unreliable_cosine = Some(cs);
    }
    for &i in &ur.flagged {
        verdict.labels[i] = ClientLabel::Unreliable;
    }
    Ok(())
}

/// Stateful wrapper: keeps the histories and the tracker between rounds.
#[derive(Debug, Clone)]
pub struct MudHog {
    cfg: DefenseConfig,
    seed: u64,
    histories: Vec<ClientHistory>,
    tracker: VerdictTracker,
}

impl MudHog {
    pub fn new(n_clients: usize, cfg: DefenseConfig, seed: u64) -> Result<Self, DefenseError> {
        cfg.validate()?;
        Ok(Self {
            histories: (0..n_clients)
                .map(|_| ClientHistory::new(cfg.window))
                .collect(),
            tracker: VerdictTracker::new(n_clients),
            cfg,
            seed,
        })
    }

    pub fn config(&self) -> &DefenseConfig {
        &self.cfg
    }

    pub fn histories(&self) -> &[ClientHistory] {
        &self.histories
    }

    pub fn tracker(&self) -> &VerdictTracker {
        &self.tracker
    }

    /// Records this round's updates and runs the detectors.
    pub fn round(
        &mut self,
        round: usize,
        updates: &[GradientVector],
        data_sizes: &[usize],
    ) -> Result<(RoundVerdict, GradientVector), DefenseError> {
        if updates.len() != self.histories.len() {
            return Err(DefenseError::ClientCountMismatch {
                expected: self.histories.len(),
                found: updates.len(),
            });
        }
        if round != self.tracker.last_round + 1 {
            return Err(DefenseError::OutOfOrderRound {
                expected: self.tracker.last_round + 1,
                found: round,
            });
        }
        for (h, g) in self.histories.iter_mut().zip(updates) {
            h.record(g.clone())?;
        }
        mudhog_round(
            &self.histories,
            data_sizes,
            &mut self.tracker,
            round,
            &self.cfg,
            self.seed,
        )
    }
}

/// `w − eta · aggregate`.
pub fn global_update(
    w: &ModelParams,
    aggregate: &GradientVector,
    eta_server: f64,
) -> Result<ModelParams, ModelError> {
    let mut flat = w.flatten();
    if flat.dim() != aggregate.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: flat.dim(),
            found: aggregate.dim(),
        });
    }
    flat.add_scaled(-eta_server, aggregate)
        .expect("dimensions checked");
    ModelParams::unflatten(w.spec(), flat.as_slice())
}
