//! Race/ethnicity categories and per-category containers.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The five race/ethnicity categories, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RaceCategory {
    White,
    Black,
    Hispanic,
    Asian,
    Other,
}

impl RaceCategory {
    pub const ALL: [RaceCategory; 5] = [
        RaceCategory::White,
        RaceCategory::Black,
        RaceCategory::Hispanic,
        RaceCategory::Asian,
        RaceCategory::Other,
    ];

    /// Canonical index 0..=4.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Lowercase token used in column names and file names.
    pub fn key(self) -> &'static str {
        match self {
            RaceCategory::White => "white",
            RaceCategory::Black => "black",
            RaceCategory::Hispanic => "hispanic",
            RaceCategory::Asian => "asian",
            RaceCategory::Other => "other",
        }
    }

    pub fn is_minority(self) -> bool {
        self != RaceCategory::White
    }
}

impl fmt::Display for RaceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RaceCategory::White => "White",
            RaceCategory::Black => "Black",
            RaceCategory::Hispanic => "Hispanic",
            RaceCategory::Asian => "Asian",
            RaceCategory::Other => "Other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown race label {0:?}")]
pub struct UnknownRaceLabel(pub String);

impl FromStr for RaceCategory {
    type Err = UnknownRaceLabel;

    /// Accepts the category names and the five-class labels used by
    /// common voter-file trained name classifiers (`white5`, `afrAmer5`, ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let race = match t.as_str() {
            "white" | "w" | "white5" | "nh_white" => RaceCategory::White,
            "black" | "b" | "afram" | "aframer5" | "african american" | "nh_black" => RaceCategory::Black,
            "hispanic" | "h" | "hisp" | "hisp5" | "latino" => RaceCategory::Hispanic,
            "asian" | "a" | "asian5" | "api" | "nh_asian" => RaceCategory::Asian,
            "other" | "o" | "other5" => RaceCategory::Other,
            _ => return Err(UnknownRaceLabel(s.to_string())),
        };
        Ok(race)
    }
}

/// A value for each race category, indexable by [`RaceCategory`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RaceMap<T>(pub [T; 5]);

impl<T> RaceMap<T> {
    pub fn from_fn(mut f: impl FnMut(RaceCategory) -> T) -> Self {
        RaceMap(RaceCategory::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (RaceCategory, &T)> {
        RaceCategory::ALL.iter().copied().zip(self.0.iter())
    }

    pub fn map<U>(&self, mut f: impl FnMut(RaceCategory, &T) -> U) -> RaceMap<U> {
        RaceMap::from_fn(|r| f(r, &self[r]))
    }
}

impl RaceMap<f64> {
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl RaceMap<u64> {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

impl<T> Index<RaceCategory> for RaceMap<T> {
    type Output = T;
    fn index(&self, r: RaceCategory) -> &T {
        &self.0[r.index()]
    }
}

impl<T> IndexMut<RaceCategory> for RaceMap<T> {
    fn index_mut(&mut self, r: RaceCategory) -> &mut T {
        &mut self.0[r.index()]
    }
}

/// Tolerance on the probability sum of a stored distribution.
pub const DISTRIBUTION_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("probability for {race} is {value}, outside [0, 1]")]
    OutOfRange { race: RaceCategory, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    BadSum(f64),
}

/// A probability vector over the five categories.
///
/// Every entry lies in `[0, 1]` and the entries sum to one within
/// [`DISTRIBUTION_SUM_TOL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RaceDistribution(RaceMap<f64>);

impl RaceDistribution {
    /// Validates without rescaling.
    pub fn new(probs: [f64; 5]) -> Result<Self, DistributionError> {
        Self::check_entries(&probs)?;
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > DISTRIBUTION_SUM_TOL {
            return Err(DistributionError::BadSum(s));
        }
        Ok(RaceDistribution(RaceMap(probs)))
    }

    /// Validates entries, accepts a sum within `tol` of one and rescales to
    /// unit sum.
    pub fn normalized_within(probs: [f64; 5], tol: f64) -> Result<Self, DistributionError> {
        Self::check_entries(&probs)?;
        let s: f64 = probs.iter().sum();
        if !(s - 1.0).abs().le(&tol) {
            return Err(DistributionError::BadSum(s));
        }
        Ok(RaceDistribution(RaceMap(normalize(probs))))
    }

    /// Normalizes arbitrary nonnegative weights. Fails if the weights are
    /// all zero or any is negative or non-finite.
    pub fn from_weights(weights: [f64; 5]) -> Result<Self, DistributionError> {
        for (r, &w) in RaceCategory::ALL.iter().zip(weights.iter()) {
            if !w.is_finite() || w < 0.0 {
                return Err(DistributionError::OutOfRange { race: *r, value: w });
            }
        }
        let s: f64 = weights.iter().sum();
        if !s.is_finite() || s <= 0.0 {
            return Err(DistributionError::BadSum(s));
        }
        Ok(RaceDistribution(RaceMap(normalize(weights))))
    }

    pub fn uniform() -> Self {
        RaceDistribution(RaceMap([0.2; 5]))
    }

    /// Point mass on one category.
    pub fn point(race: RaceCategory) -> Self {
        RaceDistribution(RaceMap::from_fn(|r| if r == race { 1.0 } else { 0.0 }))
    }

    fn check_entries(probs: &[f64; 5]) -> Result<(), DistributionError> {
        for (r, &p) in RaceCategory::ALL.iter().zip(probs.iter()) {
            if !(0.0..=1.0).contains(&p) {
                return Err(DistributionError::OutOfRange { race: *r, value: p });
            }
        }
        Ok(())
    }

    pub fn probs(&self) -> &[f64; 5] {
        &self.0 .0
    }

    pub fn as_map(&self) -> &RaceMap<f64> {
        &self.0
    }

    pub fn get(&self, r: RaceCategory) -> f64 {
        self.0[r]
    }

    /// Category with maximal probability. Ties go to the category that
    /// comes first in canonical order.
    pub fn argmax(&self) -> RaceCategory {
        argmax_of(self.probs())
    }
}

impl Index<RaceCategory> for RaceDistribution {
    type Output = f64;
    fn index(&self, r: RaceCategory) -> &f64 {
        &self.0[r]
    }
}

/// Index of the largest value, first one wins on ties.
pub(crate) fn argmax_of(v: &[f64; 5]) -> RaceCategory {
    let mut best = 0;
    for i in 1..5 {
        if v[i] > v[best] {
            best = i;
        }
    }
    RaceCategory::ALL[best]
}

pub(crate) fn normalize(v: [f64; 5]) -> [f64; 5] {
    let s: f64 = v.iter().sum();
    v.map(|x| x / s)
}
