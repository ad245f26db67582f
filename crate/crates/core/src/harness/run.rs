use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{DataSource, ExperimentConfig};
use super::metrics::{classification_metrics, detection_ratio, ClassMetrics, DetectionSummary};
use super::HarnessError;
use crate::baselines::Aggregator;
use crate::clients::{ClientKind, ClientRole, ClientState};
use crate::data::{dirichlet_partition, load_idx, synthetic_blobs, DataView, Dataset};
use crate::defense::{global_update, RoundVerdict};
use crate::model::{evaluate, ConfusionMatrix, ModelParams, ModelSpec};
use crate::seed;

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub metrics: ClassMetrics,
    pub confusion: ConfusionMatrix,
    pub weights: Option<Vec<f64>>,
    pub verdict: Option<RoundVerdict>,
    /// Not written to disk, so report files stay reproducible.
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: String,
    pub aggregator: String,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub source_class: usize,
    pub target_class: usize,
    pub final_source_recall: f64,
    pub final_target_precision: f64,
    pub roles: Vec<ClientKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSummary>,
    pub rounds_without_participants: usize,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<RoundReport>,
    pub summary: Summary,
}

/// Train and test sets for a config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Arc<Dataset>, Arc<Dataset>), HarnessError> {
    let data_seed = cfg.seeds.data;
    let (train, test) = match &cfg.dataset.source {
        DataSource::Synthetic {
            n_classes,
            dim,
            train_per_class,
            test_per_class,
            spread,
        } => {
            let all = synthetic_blobs(
                *n_classes,
                *dim,
                train_per_class + test_per_class,
                *spread,
                data_seed,
            )?;
            // samples are interleaved by class, so a prefix split is stratified
            let cut = n_classes * train_per_class;
            let idx: Vec<usize> = (0..all.len()).collect();
            (all.select(&idx[..cut]), all.select(&idx[cut..]))
        }
        DataSource::Idx {
            name,
            train_images,
            train_labels,
            test_images,
            test_labels,
            holdout,
        } => {
            let train = load_idx(train_images, train_labels, *name)?;
            match (test_images, test_labels) {
                (Some(ti), Some(tl)) => (train, load_idx(ti, tl, *name)?),
                _ => {
                    if *holdout >= train.len() {
                        return Err(HarnessError::Config(format!(
                            "holdout {holdout} leaves no training data out of {}",
                            train.len()
                        )));
                    }
                    let mut order: Vec<usize> = (0..train.len()).collect();
                    order.shuffle(&mut seed::rng_for(data_seed, &[seed::stream::DATA_SPLIT]));
                    let (test_idx, train_idx) = order.split_at(*holdout);
                    let (mut a, mut b) = (train_idx.to_vec(), test_idx.to_vec());
                    a.sort_unstable();
                    b.sort_unstable();
                    (train.select(&a), train.select(&b))
                }
            }
        }
    };
    let train = limit(
        train,
        cfg.dataset.train_subsample,
        seed::derive(data_seed, &[seed::stream::SUBSAMPLE, 0]),
    );
    let test = limit(
        test,
        cfg.dataset.test_subsample,
        seed::derive(data_seed, &[seed::stream::SUBSAMPLE, 1]),
    );
    Ok((Arc::new(train), Arc::new(test)))
}

fn limit(ds: Dataset, keep: Option<usize>, seed: u64) -> Dataset {
    match keep {
        Some(k) if k < ds.len() => {
            let mut idx = rand::seq::index::sample(&mut seed::rng(seed), ds.len(), k).into_vec();
            idx.sort_unstable();
            ds.select(&idx)
        }
        _ => ds,
    }
}

pub fn build_clients(
    cfg: &ExperimentConfig,
    train: &Arc<Dataset>,
) -> Result<Vec<ClientState>, HarnessError> {
    let roles: Vec<ClientRole> = cfg.role_counts()?.roles(
        cfg.roster.noise_sigma,
        &cfg.roster.label_flip_mapping,
        &cfg.roster.multi_label_flip_mapping,
    );
    for m in [
        &cfg.roster.label_flip_mapping,
        &cfg.roster.multi_label_flip_mapping,
    ] {
        m.validate(train.n_classes())?;
    }
    let partition = dirichlet_partition(
        train,
        cfg.n_clients,
        cfg.dataset.dirichlet_beta,
        seed::derive(cfg.seeds.data, &[seed::stream::PARTITION]),
    )?;
    roles
        .into_iter()
        .zip(partition.client_indices)
        .enumerate()
        .map(|(id, (role, indices))| {
            let view = DataView::from_indices(train.clone(), indices);
            Ok(ClientState::new(
                id,
                role,
                view,
                cfg.trainer.clone(),
                &cfg.unreliable,
                cfg.seeds.run,
            )?)
        })
        .collect()
}

/// Source and target class whose precision and recall get reported: the
/// first pair of the active label-flip mapping.
fn focus_classes(cfg: &ExperimentConfig) -> (usize, usize) {
    let counts = cfg.role_counts().unwrap_or_default();
    let mapping = if counts.multi_label_flip > 0 && counts.label_flip == 0 {
        &cfg.roster.multi_label_flip_mapping
    } else {
        &cfg.roster.label_flip_mapping
    };
    mapping
        .pairs()
        .next()
        .map_or((1, 7), |(s, t)| (s as usize, t as usize))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let clients = build_clients(cfg, &train)?;
    let test_view = DataView::full(test.clone());
    let spec = ModelSpec::mlp(train.dim(), &cfg.model.hidden, train.n_classes())?;
    let mut global = ModelParams::init(&spec, cfg.seeds.init);
    let sizes: Vec<usize> = clients.iter().map(|c| c.data_size()).collect();
    let roles: Vec<ClientKind> = clients.iter().map(|c| c.kind()).collect();
    let mut aggregator =
        Aggregator::new(cfg.aggregator, cfg.n_clients, &cfg.defense, cfg.seeds.run)?;
    let (source, target) = focus_classes(cfg);
    if source >= train.n_classes() || target >= train.n_classes() {
        return Err(HarnessError::Config(
            "label mapping outside the class range".into(),
        ));
    }

    let mut reports = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let mut step = || -> Result<RoundReport, HarnessError> {
            let updates = clients
                .par_iter()
                .map(|c| c.produce_update(&global, round, cfg.seeds.run))
                .collect::<Result<Vec<_>, _>>()?;
            let agg = aggregator.aggregate(round, &updates, &sizes)?;
            global = global_update(&global, &agg.aggregate, cfg.eta_server)?;
            let eval = evaluate(&global, &test_view)?;
            Ok(RoundReport {
                round,
                accuracy: eval.accuracy,
                loss: eval.loss,
                metrics: classification_metrics(&eval.confusion, source, target),
                confusion: eval.confusion,
                weights: agg.weights,
                verdict: agg.verdict,
                wall_time: Duration::ZERO,
            })
        };
        let mut report = step().map_err(|e| HarnessError::Round {
            round,
            source: Box::new(e),
        })?;
        report.wall_time = started.elapsed();
        log::info!(
            "{} round {round}/{}: accuracy {:.4} loss {:.4} ({:.2?})",
            cfg.aggregator,
            cfg.rounds,
            report.accuracy,
            report.loss,
            report.wall_time
        );
        reports.push(report);
    }

    let verdicts: Vec<RoundVerdict> = reports.iter().filter_map(|r| r.verdict.clone()).collect();
    let detection =
        (verdicts.len() == cfg.rounds).then(|| detection_ratio(&verdicts, &roles, cfg.rounds));
    let last = reports.last().expect("at least one round");
    let summary = Summary {
        name: cfg.name.clone(),
        aggregator: cfg.aggregator.to_string(),
        rounds: cfg.rounds,
        final_accuracy: last.accuracy,
        final_loss: last.loss,
        source_class: source,
        target_class: target,
        final_source_recall: last.metrics.source_recall.value,
        final_target_precision: last.metrics.target_precision.value,
        roles,
        detection,
        rounds_without_participants: verdicts.iter().filter(|v| v.no_participants).count(),
        config: cfg.clone(),
    };
    Ok(RunOutput { reports, summary })
}
