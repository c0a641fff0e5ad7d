use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid `t_i = i * dt`, `i = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("grid.dt", "must be positive"));
        }
        if !(t_max >= 0.0) || !t_max.is_finite() {
            return Err(Error::param("grid.t_max", "must be non-negative"));
        }
        let steps = (t_max / dt).round() as usize;
        if ((steps as f64) * dt - t_max).abs() > dt / 100.0 {
            return Err(Error::param("grid.t_max", "must be a multiple of dt"));
        }
        Ok(Self { dt, steps })
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t_max(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.time(i))
    }

    /// Snaps `t` to the nearest grid index; off by more than `dt/100` is an error.
    pub fn index(&self, t: f64) -> Result<usize> {
        let x = t / self.dt;
        let i = x.round();
        if (x - i).abs() > 0.01 || i < 0.0 || i as usize > self.steps {
            return Err(Error::OffGrid { time: t, dt: self.dt });
        }
        Ok(i as usize)
    }

    /// Grid with half the step over the same span.
    pub fn refined(&self) -> Self {
        Self {
            dt: self.dt / 2.0,
            steps: self.steps * 2,
        }
    }
}
