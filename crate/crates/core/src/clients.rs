//! Client behaviour: each role turns the broadcast model into one
//! pseudo-gradient per round.

use std::fmt;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{flip_labels, gaussian_blur, subsample, DataError, DataView, LabelMapping};
use crate::model::{local_train, ModelError, ModelParams, TrainerConfig};
use crate::seed;
use crate::vecspace::GradientVector;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Fixed for the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClientRole {
    Normal,
    Unreliable,
    SignFlip,
    AdditiveNoise { sigma: f64 },
    LabelFlip { mapping: LabelMapping },
    MultiLabelFlip { mapping: LabelMapping },
}

/// Ground-truth role without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClientKind {
    Normal,
    Unreliable,
    SignFlip,
    AdditiveNoise,
    LabelFlip,
    MultiLabelFlip,
}

impl ClientKind {
    pub const ALL: [ClientKind; 6] = [
        ClientKind::Normal,
        ClientKind::Unreliable,
        ClientKind::SignFlip,
        ClientKind::AdditiveNoise,
        ClientKind::LabelFlip,
        ClientKind::MultiLabelFlip,
    ];

    pub fn is_malicious(self) -> bool {
        self.is_untargeted() || self.is_targeted()
    }

    pub fn is_untargeted(self) -> bool {
        matches!(self, ClientKind::SignFlip | ClientKind::AdditiveNoise)
    }

    pub fn is_targeted(self) -> bool {
        matches!(self, ClientKind::LabelFlip | ClientKind::MultiLabelFlip)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ClientKind::Normal => "normal",
            ClientKind::Unreliable => "UR",
            ClientKind::SignFlip => "SF",
            ClientKind::AdditiveNoise => "AN",
            ClientKind::LabelFlip => "LF",
            ClientKind::MultiLabelFlip => "MLF",
        }
    }
}

impl fmt::Display for ClientKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl ClientRole {
    pub fn kind(&self) -> ClientKind {
        match self {
            ClientRole::Normal => ClientKind::Normal,
            ClientRole::Unreliable => ClientKind::Unreliable,
            ClientRole::SignFlip => ClientKind::SignFlip,
            ClientRole::AdditiveNoise { .. } => ClientKind::AdditiveNoise,
            ClientRole::LabelFlip { .. } => ClientKind::LabelFlip,
            ClientRole::MultiLabelFlip { .. } => ClientKind::MultiLabelFlip,
        }
    }
}

/// How unreliable clients degrade their data and compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnreliableProfile {
    pub blur_fraction: f64,
    pub blur_kernel: usize,
    pub blur_sigma: f64,
    /// Share of the local data trained on each round.
    pub train_fraction: f64,
    /// Redraw the training share every round (otherwise drawn once).
    pub resample_each_round: bool,
}

impl Default for UnreliableProfile {
    fn default() -> Self {
        Self {
            blur_fraction: 0.5,
            blur_kernel: 7,
            blur_sigma: 50.0,
            train_fraction: 0.3,
            resample_each_round: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    id: usize,
    role: ClientRole,
    view: DataView,
    /// Fixed-once training share for unreliable clients that do not resample.
    fixed_train_view: Option<DataView>,
    trainer: TrainerConfig,
    train_fraction: Option<f64>,
    seed: u64,
}

impl ClientState {
    /// Applies the role's data transformation to `local` exactly once.
    pub fn new(
        id: usize,
        role: ClientRole,
        local: DataView,
        trainer: TrainerConfig,
        profile: &UnreliableProfile,
        seed: u64,
    ) -> Result<Self, ClientError> {
        if local.is_empty() {
            return Err(DataError::EmptyView.into());
        }
        let client_seed = seed::derive(seed, &[id as u64]);
        let mut fixed_train_view = None;
        let mut train_fraction = None;
        let view = match &role {
            ClientRole::LabelFlip { mapping } | ClientRole::MultiLabelFlip { mapping } => {
                mapping.validate(local.n_classes())?;
                flip_labels(&local, mapping)
            }
            ClientRole::Unreliable => {
                let blurred = gaussian_blur(
                    &local,
                    profile.blur_fraction,
                    profile.blur_kernel,
                    profile.blur_sigma,
                    client_seed,
                )?;
                if profile.resample_each_round {
                    // fail early rather than in round 1
                    subsample(&blurred, profile.train_fraction, client_seed)?;
                    train_fraction = Some(profile.train_fraction);
                } else {
                    fixed_train_view =
                        Some(subsample(&blurred, profile.train_fraction, client_seed)?);
                }
                blurred
            }
            ClientRole::AdditiveNoise { sigma } if !(*sigma >= 0.0 && sigma.is_finite()) => {
                return Err(DataError::InvalidArgument(format!("noise sigma {sigma}")).into());
            }
            _ => local,
        };
        Ok(Self {
            id,
            role,
            view,
            fixed_train_view,
            trainer,
            train_fraction,
            seed: client_seed,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn role(&self) -> &ClientRole {
        &self.role
    }

    pub fn kind(&self) -> ClientKind {
        self.role.kind()
    }

    /// The role-transformed local data.
    pub fn view(&self) -> &DataView {
        &self.view
    }

    /// |D_i| used for aggregation weights.
    pub fn data_size(&self) -> usize {
        self.view.len()
    }

    /// The data actually trained on in `round`.
    pub fn training_view(&self, round: usize) -> Result<DataView, ClientError> {
        if let Some(v) = &self.fixed_train_view {
            return Ok(v.clone());
        }
        match self.train_fraction {
            Some(frac) => Ok(subsample(
                &self.view,
                frac,
                seed::derive(self.seed, &[seed::stream::SUBSAMPLE, round as u64]),
            )?),
            None => Ok(self.view.clone()),
        }
    }

    /// This round's submission. Deterministic in (state, broadcast, round, seed);
    /// the training stream does not depend on the role.
    pub fn produce_update(
        &self,
        broadcast: &ModelParams,
        round: usize,
        seed: u64,
    ) -> Result<GradientVector, ClientError> {
        let data = self.training_view(round)?;
        let train_seed = seed::derive(
            seed,
            &[seed::stream::LOCAL_TRAIN, self.id as u64, round as u64],
        );
        let honest = local_train(broadcast, &data, &self.trainer, train_seed)?;
        Ok(match &self.role {
            ClientRole::SignFlip => -honest,
            ClientRole::AdditiveNoise { sigma } => {
                let mut rng =
                    seed::rng_for(seed, &[seed::stream::NOISE, self.id as u64, round as u64]);
                let noise = Normal::new(0.0, *sigma).expect("sigma validated");
                let noisy: Vec<f64> = honest.iter().map(|v| v + noise.sample(&mut rng)).collect();
                GradientVector::new(noisy).expect("finite")
            }
            _ => honest,
        })
    }
}
