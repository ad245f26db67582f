//! Per-client gradient history: a ring of the `l` latest vectors plus one
//! running sum, so storage never exceeds `l + 1` vectors per client.

use std::collections::VecDeque;

use thiserror::Error;

use crate::vecspace::{GradientVector, VecError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HogError {
    #[error("history is empty")]
    EmptyHistory,
    #[error(transparent)]
    Vec(#[from] VecError),
}

#[derive(Debug, Clone)]
pub struct ClientHistory {
    window: VecDeque<GradientVector>,
    capacity: usize,
    cum_sum: Option<GradientVector>,
    count: usize,
}

impl ClientHistory {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "window size must be at least 1");
        Self {
            window: VecDeque::with_capacity(window),
            capacity: window,
            cum_sum: None,
            count: 0,
        }
    }

    pub fn window_size(&self) -> usize {
        self.capacity
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Vectors currently held (window plus the running sum).
    pub fn stored_vectors(&self) -> usize {
        self.window.len() + usize::from(self.cum_sum.is_some())
    }

    pub fn record(&mut self, g: GradientVector) -> Result<(), HogError> {
        match &mut self.cum_sum {
            Some(sum) => sum.add_scaled(1.0, &g)?,
            None => self.cum_sum = Some(g.clone()),
        }
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(g);
        self.count += 1;
        Ok(())
    }

    /// Mean of the vectors in the window (fewer than `l` before the window fills).
    pub fn short_hog(&self) -> Result<GradientVector, HogError> {
        if self.window.is_empty() {
            return Err(HogError::EmptyHistory);
        }
        Ok(GradientVector::mean(&self.window)?)
    }

    /// Sum of every vector ever recorded.
    pub fn long_hog(&self) -> Result<&GradientVector, HogError> {
        self.cum_sum.as_ref().ok_or(HogError::EmptyHistory)
    }

    pub fn latest(&self) -> Option<&GradientVector> {
        self.window.back()
    }
}
