//! Right-continuous piecewise-constant functions of time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A right-continuous step function.
///
/// `f(t)` is the value attached to the largest jump time `<= t`, or the
/// initial value when `t` precedes every jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    initial_value: f64,
    jump_times: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(initial_value: f64, jump_times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if jump_times.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "step function has {} jump times but {} values",
                jump_times.len(),
                values.len()
            )));
        }
        if jump_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "step function jump times must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            initial_value,
            jump_times,
            values,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            initial_value: value,
            jump_times: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from possibly repeated times, keeping the last value for each
    /// time and dropping points that do not change the value.
    pub(crate) fn from_points(initial_value: f64, points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut jump_times: Vec<f64> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for (t, v) in points {
            if jump_times.last() == Some(&t) {
                *values.last_mut().unwrap() = v;
            } else {
                jump_times.push(t);
                values.push(v);
            }
        }
        let mut out = Self {
            initial_value,
            jump_times: Vec::with_capacity(values.len()),
            values: Vec::with_capacity(values.len()),
        };
        let mut current = initial_value;
        for (t, v) in jump_times.into_iter().zip(values) {
            if v != current {
                out.jump_times.push(t);
                out.values.push(v);
                current = v;
            }
        }
        out
    }

    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&x| x <= t);
        if idx == 0 {
            self.initial_value
        } else {
            self.values[idx - 1]
        }
    }

    /// Left limit `f(t-)`: the value on the open interval just before `t`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&x| x < t);
        if idx == 0 {
            self.initial_value
        } else {
            self.values[idx - 1]
        }
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn final_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.initial_value)
    }

    pub fn is_nondecreasing(&self) -> bool {
        let mut prev = self.initial_value;
        self.values.iter().all(|&v| {
            let ok = v >= prev;
            prev = v;
            ok
        })
    }

    pub fn is_nonincreasing(&self) -> bool {
        let mut prev = self.initial_value;
        self.values.iter().all(|&v| {
            let ok = v <= prev;
            prev = v;
            ok
        })
    }
}
