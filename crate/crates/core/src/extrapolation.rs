//! Finite-difference extrapolation of the next epsilon from recent real
//! model evaluations.
//!
//! The predictors use uniform (index-based) weights: they extrapolate the
//! epsilon sequence as a function of step count, not of sigma. Sigma values
//! kept in the history are diagnostic only.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::scalar::Scalar;

/// Minimal capacity: the highest order needs four points.
pub const DEFAULT_HISTORY_CAPACITY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorOrder {
    /// Linear: `2 e[n-1] - e[n-2]`.
    H2,
    /// Quadratic (Richardson): `3 e[n-1] - 3 e[n-2] + e[n-3]`.
    H3,
    /// Cubic: `4 e[n-1] - 6 e[n-2] + 4 e[n-3] - e[n-4]`.
    H4,
}

impl PredictorOrder {
    pub const ALL: [PredictorOrder; 3] = [Self::H2, Self::H3, Self::H4];

    /// History points the predictor consumes.
    pub fn required_history(self) -> usize {
        match self {
            Self::H2 => 2,
            Self::H3 => 3,
            Self::H4 => 4,
        }
    }

    /// Weights applied newest first.
    pub fn weights(self) -> &'static [f64] {
        match self {
            Self::H2 => &[2.0, -1.0],
            Self::H3 => &[3.0, -3.0, 1.0],
            Self::H4 => &[4.0, -6.0, 4.0, -1.0],
        }
    }

    /// Next rung down the fallback ladder.
    pub fn lower(self) -> Option<Self> {
        match self {
            Self::H2 => None,
            Self::H3 => Some(Self::H2),
            Self::H4 => Some(Self::H3),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::H2 => "h2",
            Self::H3 => "h3",
            Self::H4 => "h4",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token.trim().to_ascii_lowercase().as_str() {
            "h2" => Some(Self::H2),
            "h3" => Some(Self::H3),
            "h4" => Some(Self::H4),
            _ => None,
        }
    }
}

impl fmt::Display for PredictorOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonRecord<T> {
    pub epsilon: Latent<T>,
    pub step_index: usize,
    pub sigma: T,
}

/// Bounded buffer of epsilons from REAL steps, oldest first.
#[derive(Debug, Clone)]
pub struct EpsilonHistory<T> {
    records: VecDeque<EpsilonRecord<T>>,
    capacity: usize,
}

impl<T: Scalar> Default for EpsilonHistory<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> EpsilonHistory<T> {
    pub fn new() -> Self {
        Self::with_capacity(DEFAULT_HISTORY_CAPACITY)
    }

    /// Capacity below 4 is raised to 4.
    pub fn with_capacity(capacity: usize) -> Self {
        let capacity = capacity.max(DEFAULT_HISTORY_CAPACITY);
        Self {
            records: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Builds a history from consecutive epsilons with step indices 0, 1, ...
    /// and unit sigma. Handy for examples and tests.
    pub fn from_epsilons(epsilons: impl IntoIterator<Item = Latent<T>>) -> Result<Self> {
        let mut h = Self::new();
        for (i, e) in epsilons.into_iter().enumerate() {
            h.push(e, i, T::one())?;
        }
        Ok(h)
    }

    /// Scalar shorthand for [`EpsilonHistory::from_epsilons`].
    pub fn from_scalars(values: &[T]) -> Result<Self> {
        Self::from_epsilons(values.iter().map(|&v| Latent::scalar(v)))
    }

    pub fn push(&mut self, epsilon: Latent<T>, step_index: usize, sigma: T) -> Result<()> {
        if !epsilon.is_finite() {
            return Err(Error::NonFinite);
        }
        if let Some(last) = self.records.back() {
            if step_index <= last.step_index {
                return Err(Error::HistoryOrder {
                    last: last.step_index,
                    new: step_index,
                });
            }
            last.epsilon.ensure_same_shape(&epsilon)?;
        }
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(EpsilonRecord {
            epsilon,
            step_index,
            sigma,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn latest(&self) -> Option<&EpsilonRecord<T>> {
        self.records.back()
    }

    /// `back(0)` is the newest record.
    pub fn back(&self, offset: usize) -> Option<&EpsilonRecord<T>> {
        self.records.len().checked_sub(offset + 1).map(|i| &self.records[i])
    }

    pub fn records(&self) -> impl Iterator<Item = &EpsilonRecord<T>> {
        self.records.iter()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }
}

/// Applies the order's weights to the newest records.
pub fn predict<T: Scalar>(history: &EpsilonHistory<T>, order: PredictorOrder) -> Result<Latent<T>> {
    let needed = order.required_history();
    if history.len() < needed {
        return Err(Error::History {
            needed,
            available: history.len(),
        });
    }
    let terms: Vec<(&Latent<T>, T)> = order
        .weights()
        .iter()
        .enumerate()
        .map(|(k, &w)| (&history.back(k).expect("length checked").epsilon, T::lit(w)))
        .collect();
    Latent::linear_combination(&terms)
}

pub fn predict_h2<T: Scalar>(history: &EpsilonHistory<T>) -> Result<Latent<T>> {
    predict(history, PredictorOrder::H2)
}

pub fn predict_h3<T: Scalar>(history: &EpsilonHistory<T>) -> Result<Latent<T>> {
    predict(history, PredictorOrder::H3)
}

pub fn predict_h4<T: Scalar>(history: &EpsilonHistory<T>) -> Result<Latent<T>> {
    predict(history, PredictorOrder::H4)
}

/// Highest order not above `requested` that the history supports.
pub fn supported_order(history_len: usize, requested: PredictorOrder) -> Option<PredictorOrder> {
    let mut order = Some(requested);
    while let Some(o) = order {
        if history_len >= o.required_history() {
            return Some(o);
        }
        order = o.lower();
    }
    None
}

/// Predicts with `requested` or the next lower order the history allows
/// (h4 -> h3 -> h2). Never upgrades.
pub fn predict_with_fallback<T: Scalar>(
    history: &EpsilonHistory<T>,
    requested: PredictorOrder,
) -> Result<(Latent<T>, PredictorOrder)> {
    let order = supported_order(history.len(), requested).ok_or(Error::History {
        needed: PredictorOrder::H2.required_history(),
        available: history.len(),
    })?;
    Ok((predict(history, order)?, order))
}
