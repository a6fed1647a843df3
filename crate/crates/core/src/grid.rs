//! Probability grids written as `lo:hi:step`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Slack allowed when deciding whether `hi` is reached.
const ENDPOINT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    /// Points `lo, lo+step, …` up to `hi` inclusive (within `1e-12`), each
    /// rounded to 12 decimals so `0.05:0.95:0.05` yields `0.95` rather than
    /// `0.9500000000000001`.
    pub fn range(lo: f64, hi: f64, step: f64) -> Result<Grid> {
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
            return Err(Error::InvalidGrid("bounds and step must be finite".into()));
        }
        if step <= 0.0 {
            return Err(Error::InvalidGrid(format!("step {step} must be positive")));
        }
        if lo > hi {
            return Err(Error::InvalidGrid(format!("lo {lo} exceeds hi {hi}")));
        }
        let count = ((hi - lo) / step + ENDPOINT_SLACK).floor() as usize + 1;
        let points = (0..count)
            .map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12)
            .collect();
        Self::from_points(points)
    }

    pub fn from_points(points: Vec<f64>) -> Result<Grid> {
        if points.is_empty() {
            return Err(Error::InvalidGrid("grid is empty".into()));
        }
        if let Some(bad) = points.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::InvalidGrid(format!("point {bad} is outside (0, 1)")));
        }
        Ok(Grid { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Every `(q_A, q_B)` pair, `q_A` major.
    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points
            .iter()
            .flat_map(move |&a| self.points.iter().map(move |&b| (a, b)))
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidGrid(format!("{s:?} is not lo:hi:step")));
        }
        let num = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidGrid(format!("{t:?} is not a number")))
        };
        Grid::range(num(parts[0])?, num(parts[1])?, num(parts[2])?)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text: Vec<String> = self.points.iter().map(|x| x.to_string()).collect();
        write!(f, "{{{}}}", text.join(","))
    }
}
