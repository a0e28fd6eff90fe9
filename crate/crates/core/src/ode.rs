//! Fixed-step classical Runge-Kutta integration in fictitious time.

use crate::error::{Error, Result};

/// States with a larger Euclidean norm are treated as a blow-up.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Substep rule `n = max(n_min, ceil(rho * L))` where `L` bounds the
/// Lipschitz constant of the integrated field over `u in [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeConfig {
    pub n_min: usize,
    pub rho: f64,
    /// Also integrate with `2n` substeps and report `|y_n - y_2n| / 15`.
    pub richardson: bool,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            n_min: 8,
            rho: 64.0,
            richardson: false,
        }
    }
}

impl OdeConfig {
    pub fn substeps(&self, lipschitz: f64) -> usize {
        let scaled = (self.rho * lipschitz).ceil();
        let n = if scaled.is_finite() && scaled > 0.0 {
            scaled.min(1e7) as usize
        } else {
            0
        };
        n.max(self.n_min).max(1)
    }

    /// The same rule with `n_min` and `rho` multiplied by `factor`.
    pub fn tightened(&self, factor: usize) -> Self {
        Self {
            n_min: self.n_min * factor,
            rho: self.rho * factor as f64,
            richardson: self.richardson,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.n_min == 0 || !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::config(
                "ode",
                "n_min must be at least 1 and rho finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Workspace for an RK4 sweep in dimension `d`.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            k1: vec![0.0; d],
            k2: vec![0.0; d],
            k3: vec![0.0; d],
            k4: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }

    /// Advances `y` from `u0` to `u1` in `n` equal steps of the autonomous
    /// field `f`. `on_node` sees every intermediate state.
    pub(crate) fn integrate<F, G>(
        &mut self,
        f: &mut F,
        y: &mut [f64],
        u0: f64,
        u1: f64,
        n: usize,
        mut on_node: G,
    ) -> Result<()>
    where
        F: FnMut(&[f64], &mut [f64]),
        G: FnMut(&[f64]),
    {
        let d = y.len();
        let dt = (u1 - u0) / n as f64;
        let half = 0.5 * dt;
        let sixth = dt / 6.0;
        for step in 0..n {
            f(y, &mut self.k1);
            for i in 0..d {
                self.tmp[i] = y[i] + half * self.k1[i];
            }
            f(&self.tmp, &mut self.k2);
            for i in 0..d {
                self.tmp[i] = y[i] + half * self.k2[i];
            }
            f(&self.tmp, &mut self.k3);
            for i in 0..d {
                self.tmp[i] = y[i] + dt * self.k3[i];
            }
            f(&self.tmp, &mut self.k4);
            let mut norm2 = 0.0;
            for i in 0..d {
                y[i] += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
                norm2 += y[i] * y[i];
            }
            let norm = norm2.sqrt();
            if !(norm <= DIVERGENCE_THRESHOLD) {
                return Err(Error::FlowDivergence {
                    at: u0 + (step + 1) as f64 * dt,
                    norm,
                    threshold: DIVERGENCE_THRESHOLD,
                });
            }
            on_node(y);
        }
        Ok(())
    }
}
