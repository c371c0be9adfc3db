//! Right-continuous step functions on a shared event grid.
//!
//! Every cumulative quantity in the pipeline (Γ, C, B, D[f], c, b, φ, ...)
//! lives on the grid of distinct uncensored event times, so integrals against
//! these functions reduce to finite sums over grid atoms.

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("step functions are defined on different grids")]
    GridMismatch,
    #[error("values length {values} does not match grid length {grid}")]
    LengthMismatch { values: usize, grid: usize },
}

/// Interval convention for windows of integration.
///
/// `LeftOpen` is the `(a, b]` convention (atoms at `a` excluded, at `b`
/// included); `RightOpen` is `[a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    LeftOpen,
    RightOpen,
}

/// A right-continuous step function with jumps at the grid points.
///
/// Evaluation returns `value_at_0` strictly before the first grid point and
/// `values[k]` on `[t_k, t_{k+1})`.
#[derive(Debug, Clone)]
pub struct StepFunction {
    grid: Arc<Vec<f64>>,
    values: Vec<f64>,
    value_at_0: f64,
}

impl StepFunction {
    pub fn new(grid: Arc<Vec<f64>>, values: Vec<f64>, value_at_0: f64) -> Result<Self, StepError> {
        if values.len() != grid.len() {
            return Err(StepError::LengthMismatch {
                values: values.len(),
                grid: grid.len(),
            });
        }
        Ok(Self {
            grid,
            values,
            value_at_0,
        })
    }

    /// Builds the cumulative step function whose jump at `t_k` is `jumps[k]`,
    /// starting from `value_at_0`.
    pub fn from_jumps(grid: Arc<Vec<f64>>, jumps: &[f64], value_at_0: f64) -> Result<Self, StepError> {
        if jumps.len() != grid.len() {
            return Err(StepError::LengthMismatch {
                values: jumps.len(),
                grid: grid.len(),
            });
        }
        let mut values = Vec::with_capacity(jumps.len());
        let mut acc = value_at_0;
        for &j in jumps {
            acc += j;
            values.push(acc);
        }
        Ok(Self {
            grid,
            values,
            value_at_0,
        })
    }

    pub fn grid(&self) -> &Arc<Vec<f64>> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at_0(&self) -> f64 {
        self.value_at_0
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Value at grid index `k`, with `k == usize::MAX` meaning the left limit
    /// before the first grid point.
    pub fn value_at_index(&self, k: usize) -> f64 {
        if k == usize::MAX {
            self.value_at_0
        } else {
            self.values[k]
        }
    }

    /// Jump at grid index `k`.
    pub fn jump(&self, k: usize) -> f64 {
        if k == 0 {
            self.values[0] - self.value_at_0
        } else {
            self.values[k] - self.values[k - 1]
        }
    }

    pub fn jumps(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.jump(k)).collect()
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.grid.partition_point(|&g| g <= t) {
            0 => self.value_at_0,
            k => self.values[k - 1],
        }
    }

    pub fn last(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.value_at_0)
    }

    pub fn same_grid(&self, other: &StepFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// Checks that the values are nondecreasing (used for Γ, C, B, c, b).
    pub fn is_monotone(&self) -> bool {
        let mut prev = self.value_at_0;
        for &v in &self.values {
            if v < prev {
                return false;
            }
            prev = v;
        }
        true
    }
}

/// Integrates a step integrand against the jump measure of a cumulative step
/// function over a window, e.g. `∫_(a,b] integrand dmeasure`.
///
/// Both functions must share the grid.  The integrand is evaluated at the
/// atoms of the measure.
pub fn integrate(
    measure: &StepFunction,
    integrand: &StepFunction,
    from: f64,
    to: f64,
    window: Window,
) -> Result<f64, StepError> {
    if !measure.same_grid(integrand) {
        return Err(StepError::GridMismatch);
    }
    let grid = measure.grid();
    let mut acc = 0.0;
    for (k, &t) in grid.iter().enumerate() {
        let inside = match window {
            Window::LeftOpen => t > from && t <= to,
            Window::RightOpen => t >= from && t < to,
        };
        if inside {
            acc += integrand.values()[k] * measure.jump(k);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid3() -> Arc<Vec<f64>> {
        Arc::new(vec![1.0, 2.0, 3.0])
    }

    #[test]
    fn evaluation_conventions() {
        let f = StepFunction::new(grid3(), vec![1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(f.eval(0.5), 0.0);
        assert_eq!(f.eval(1.0), 1.0);
        assert_eq!(f.eval(1.5), 1.0);
        assert_eq!(f.eval(2.0), 2.0);
        assert_eq!(f.eval(10.0), 3.0);
    }

    #[test]
    fn integrate_unit_integrand() {
        let g = grid3();
        let measure = StepFunction::from_jumps(g.clone(), &[1.0, 1.0, 1.0], 0.0).unwrap();
        let one = StepFunction::new(g.clone(), vec![1.0, 1.0, 1.0], 1.0).unwrap();
        assert_eq!(
            integrate(&measure, &one, 0.0, 3.0, Window::LeftOpen).unwrap(),
            3.0
        );
        // left-open excludes the atom at t = 1
        assert_eq!(
            integrate(&measure, &one, 1.0, 3.0, Window::LeftOpen).unwrap(),
            2.0
        );
        // right-open includes t = 1, excludes t = 3
        assert_eq!(
            integrate(&measure, &one, 1.0, 3.0, Window::RightOpen).unwrap(),
            2.0
        );
    }

    #[test]
    fn integrate_hand_sum() {
        let g = grid3();
        let measure = StepFunction::from_jumps(g.clone(), &[0.5, 0.5, 0.5], 0.0).unwrap();
        let integrand = StepFunction::new(g, vec![1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(
            integrate(&measure, &integrand, 0.0, 3.0, Window::LeftOpen).unwrap(),
            3.0
        );
    }

    #[test]
    fn grid_mismatch_rejected() {
        let f = StepFunction::new(grid3(), vec![1.0, 1.0, 1.0], 0.0).unwrap();
        let g = StepFunction::new(Arc::new(vec![1.0, 2.5, 3.0]), vec![1.0, 1.0, 1.0], 0.0).unwrap();
        assert_eq!(
            integrate(&f, &g, 0.0, 3.0, Window::LeftOpen).unwrap_err(),
            StepError::GridMismatch
        );
    }

    proptest! {
        // additivity over disjoint windows and linearity in the integrand
        #[test]
        fn additive_and_linear(
            jumps in proptest::collection::vec(0.0..2.0f64, 5),
            vals in proptest::collection::vec(-2.0..2.0f64, 5),
            a in 0.5..4.5f64,
            c1 in -3.0..3.0f64,
        ) {
            let grid: Arc<Vec<f64>> = Arc::new((1..=5).map(|k| k as f64).collect());
            let measure = StepFunction::from_jumps(grid.clone(), &jumps, 0.0).unwrap();
            let f = StepFunction::new(grid.clone(), vals.clone(), 0.0).unwrap();
            let whole = integrate(&measure, &f, 0.0, 5.0, Window::LeftOpen).unwrap();
            let left = integrate(&measure, &f, 0.0, a, Window::LeftOpen).unwrap();
            let right = integrate(&measure, &f, a, 5.0, Window::LeftOpen).unwrap();
            prop_assert!((whole - left - right).abs() < 1e-12);

            let scaled_vals: Vec<f64> = vals.iter().map(|v| c1 * v).collect();
            let fs = StepFunction::new(grid, scaled_vals, 0.0).unwrap();
            let scaled = integrate(&measure, &fs, 0.0, 5.0, Window::LeftOpen).unwrap();
            prop_assert!((scaled - c1 * whole).abs() < 1e-10);
        }
    }
}
