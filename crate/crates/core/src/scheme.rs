//! The time-discrete Wong-Zakai scheme, its cadlag extension, and the
//! reference solutions used to measure its error.

use std::io::{self, Write};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::flows::PsiStepper;
use crate::levy::DrivingPath;
use crate::ode::OdeConfig;
use crate::output::format_g17;

/// Scheme states at the knots `k h`, `0 <= k h <= T`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotTrajectory {
    pub h: f64,
    /// Knot spacing in finest-grid cells.
    pub stride: usize,
    pub dim: usize,
    pub x0: Vec<f64>,
    /// Row-major `knots * dim`.
    states: Vec<f64>,
    pub master_seed: u64,
    pub path_index: u64,
    pub cfg: OdeConfig,
    h_min: f64,
}

impl KnotTrajectory {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn knot_time(&self, k: usize) -> f64 {
        (k * self.stride) as f64 * self.h_min
    }

    pub fn knot_times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.knot_time(k)).collect()
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    /// State at finest-grid index `i`, which must be a knot.
    pub fn state_at_grid(&self, i: usize) -> &[f64] {
        debug_assert_eq!(i % self.stride, 0);
        self.state(i / self.stride)
    }

    /// Cadlag extension at finest-grid index `i`:
    /// `Psi(X_{kh}; t_i - kh, W_{t_i} - W_{kh}, Z_{t_i} - Z_{kh})` with
    /// `t_i in (kh, (k+1)h]`.
    pub fn continuous_at(
        &self,
        coeffs: &CoefficientSet,
        path: &DrivingPath,
        i: usize,
    ) -> Result<Vec<f64>> {
        if i > path.cells() {
            return Err(Error::invalid(format!("grid index {i} beyond the horizon")));
        }
        if i == 0 {
            return Ok(self.x0.clone());
        }
        let mut stepper = PsiStepper::new(coeffs, self.cfg);
        let mut out = vec![0.0; self.dim];
        self.continuous_into(&mut stepper, path, i, &mut out)?;
        Ok(out)
    }

    fn continuous_into(
        &self,
        stepper: &mut PsiStepper<'_>,
        path: &DrivingPath,
        i: usize,
        out: &mut [f64],
    ) -> Result<()> {
        let k = (i - 1) / self.stride;
        let start = k * self.stride;
        let m = path.dim();
        let (mut dw, mut dz) = (vec![0.0; m], vec![0.0; m]);
        path.increments_between(start, i, &mut dw, &mut dz);
        let tau = (i - start) as f64 * self.h_min;
        stepper
            .psi(self.state(k), tau, &dw, &dz, out)
            .map_err(|e| Error::SchemeDivergence {
                knot: k + 1,
                source: Box::new(e),
            })
    }

    /// Cadlag extension at every finest-grid point, row-major
    /// `(cells + 1) * dim`.
    pub fn continuous_states(&self, coeffs: &CoefficientSet, path: &DrivingPath) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut stepper = PsiStepper::new(coeffs, self.cfg);
        let mut out = vec![0.0; (path.cells() + 1) * d];
        out[..d].copy_from_slice(&self.x0);
        for i in 1..=path.cells() {
            let (_, rest) = out.split_at_mut(i * d);
            self.continuous_into(&mut stepper, path, i, &mut rest[..d])?;
        }
        Ok(out)
    }

    /// Writes `t,X1,...,Xd` rows with `%.17g` numbers.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim).map(|i| format!("X{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let row: Vec<String> = std::iter::once(format_g17(self.knot_time(k)))
                .chain(self.state(k).iter().map(|&v| format_g17(v)))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Knot spacing of step `h` in finest cells.
pub fn stride_for(path: &DrivingPath, h: f64) -> Result<usize> {
    let ratio = h / path.h_min();
    let stride = ratio.round();
    if !(stride >= 1.0 && (ratio - stride).abs() <= 1e-9 * stride && stride as usize <= path.cells()) {
        return Err(Error::invalid(format!(
            "step {h} is not a multiple of the finest step {} within the horizon",
            path.h_min()
        )));
    }
    Ok(stride as usize)
}

fn check_dims(coeffs: &CoefficientSet, path: &DrivingPath, x0: &[f64]) -> Result<()> {
    if coeffs.noise_dim() != path.dim() {
        return Err(Error::invalid(format!(
            "coefficients expect {}-dimensional noise, path has {}",
            coeffs.noise_dim(),
            path.dim()
        )));
    }
    if x0.len() != coeffs.dim() {
        return Err(Error::invalid(format!(
            "initial state has dimension {}, coefficients expect {}",
            x0.len(),
            coeffs.dim()
        )));
    }
    Ok(())
}

/// Runs the scheme with knot spacing `stride` finest cells.
pub fn wz_knots_stride(
    coeffs: &CoefficientSet,
    path: &DrivingPath,
    x0: &[f64],
    stride: usize,
    cfg: &OdeConfig,
) -> Result<KnotTrajectory> {
    check_dims(coeffs, path, x0)?;
    let d = coeffs.dim();
    let m = path.dim();
    let knots = path.cells() / stride + 1;
    let h_min = path.h_min();
    let tau = stride as f64 * h_min;
    let mut stepper = PsiStepper::new(coeffs, *cfg);
    let mut states = vec![0.0; knots * d];
    states[..d].copy_from_slice(x0);
    let (mut dw, mut dz) = (vec![0.0; m], vec![0.0; m]);
    for k in 0..knots - 1 {
        path.increments_between(k * stride, (k + 1) * stride, &mut dw, &mut dz);
        let (done, rest) = states.split_at_mut((k + 1) * d);
        stepper
            .psi(&done[k * d..], tau, &dw, &dz, &mut rest[..d])
            .map_err(|e| Error::SchemeDivergence {
                knot: k + 1,
                source: Box::new(e),
            })?;
    }
    Ok(KnotTrajectory {
        h: tau,
        stride,
        dim: d,
        x0: x0.to_vec(),
        states,
        master_seed: path.master_seed(),
        path_index: path.path_index(),
        cfg: *cfg,
        h_min,
    })
}

/// Scheme knots `X^h_{kh}` on `path` for step `h` (a multiple of the
/// finest step).
pub fn wz_knots(
    coeffs: &CoefficientSet,
    path: &DrivingPath,
    x0: &[f64],
    h: f64,
    cfg: &OdeConfig,
) -> Result<KnotTrajectory> {
    let stride = stride_for(path, h)?;
    wz_knots_stride(coeffs, path, x0, stride, cfg)
}

/// Cadlag extension `bar X^h_t` at a finest-grid time `t`.
pub fn wz_continuous_eval(
    coeffs: &CoefficientSet,
    path: &DrivingPath,
    x0: &[f64],
    h: f64,
    t: f64,
    cfg: &OdeConfig,
) -> Result<Vec<f64>> {
    let i = path.grid_index(t)?;
    let traj = wz_knots(coeffs, path, x0, h, cfg)?;
    traj.continuous_at(coeffs, path, i)
}

/// Integration settings of the event-driven reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventDrivenConfig {
    /// Jump flows and the substep floor.
    pub ode: OdeConfig,
    /// Largest RK4 step in physical time between jumps.
    pub max_step: f64,
}

impl Default for EventDrivenConfig {
    fn default() -> Self {
        Self {
            ode: OdeConfig::default(),
            max_step: 1.0 / 256.0,
        }
    }
}

/// Pathwise solution for `b = 0`: between jumps `dX/dt = a(X) + c(X) r`
/// with `r` the compensator rate of the path; at a jump `J` the state is
/// mapped to `phi^J(X)`. Evaluated at the sorted `times`.
pub fn event_driven_reference(
    coeffs: &CoefficientSet,
    path: &DrivingPath,
    x0: &[f64],
    times: &[f64],
    cfg: &EventDrivenConfig,
) -> Result<Vec<Vec<f64>>> {
    check_dims(coeffs, path, x0)?;
    if coeffs.has_diffusion() {
        return Err(Error::NonzeroDiffusion);
    }
    if !(cfg.max_step > 0.0) {
        return Err(Error::invalid("max_step must be positive"));
    }
    if times.windows(2).any(|w| w[1] < w[0])
        || times.iter().any(|&t| !(t >= 0.0 && t <= path.horizon()))
    {
        return Err(Error::invalid("times must be sorted and lie in [0, T]"));
    }
    let d = coeffs.dim();
    let m = path.dim();
    let rate = path.compensator_rate();
    let norms = coeffs.norms();
    let rate_norm = rate.iter().map(|v| v * v).sum::<f64>().sqrt();
    let zero = vec![0.0; m];
    let mut stepper = PsiStepper::new(coeffs, cfg.ode);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut dz = vec![0.0; m];

    let mut drift = |x: &mut Vec<f64>, next: &mut Vec<f64>, dt: f64| -> Result<()> {
        if dt <= 0.0 {
            return Ok(());
        }
        for (o, r) in dz.iter_mut().zip(&rate) {
            *o = r * dt;
        }
        let by_step = (dt / cfg.max_step).ceil() as usize;
        let by_rule = cfg.ode.substeps(dt * (norms.drift + rate_norm * norms.jump));
        stepper.psi_with_substeps(x, dt, &zero, &dz, by_step.max(by_rule), next, |_| {})?;
        std::mem::swap(x, next);
        Ok(())
    };

    let mut out = Vec::with_capacity(times.len());
    let mut now = 0.0;
    let mut j = 0;
    let jump_times = path.jump_times();
    let mut jump_stepper = PsiStepper::new(coeffs, cfg.ode);
    for &t in times {
        while j < jump_times.len() && jump_times[j] <= t {
            let tau = jump_times[j];
            drift(&mut x, &mut next, tau - now)?;
            now = tau;
            let size = path.jump_size(j);
            jump_stepper.psi(&x, 0.0, &zero, &size, &mut next)?;
            std::mem::swap(&mut x, &mut next);
            j += 1;
        }
        drift(&mut x, &mut next, t - now)?;
        now = t;
        out.push(x.clone());
    }
    Ok(out)
}

/// `x0 exp(alpha t + beta W_t + gamma Z_t)`, the exact solution of the
/// scalar linear Marcus SDE, at finest-grid `times`.
pub fn closed_form_linear(
    alpha: f64,
    beta: f64,
    gamma: f64,
    x0: f64,
    path: &DrivingPath,
    times: &[f64],
) -> Result<Vec<f64>> {
    if path.dim() != 1 {
        return Err(Error::invalid("closed form needs one-dimensional noise"));
    }
    let (mut w, mut z) = ([0.0], [0.0]);
    times
        .iter()
        .map(|&t| {
            let i = path.grid_index(t)?;
            path.values_at(i, &mut w, &mut z);
            Ok(x0 * (alpha * path.grid_time(i) + beta * w[0] + gamma * z[0]).exp())
        })
        .collect()
}

/// The scheme itself at the fine step `h_ref`; coarser knots are read off
/// with [`KnotTrajectory::state_at_grid`].
pub fn self_refined_reference(
    coeffs: &CoefficientSet,
    path: &DrivingPath,
    x0: &[f64],
    h_ref: f64,
    cfg: &OdeConfig,
) -> Result<KnotTrajectory> {
    wz_knots(coeffs, path, x0, h_ref, cfg)
}
