//! Monte Carlo error curves over a dyadic step ladder, log-log rate fits,
//! and moment studies of the cadlag scheme.
//!
//! Every path is sampled once on the finest grid and shared by all step
//! sizes. Work items are distributed over a rayon pool and collected in
//! path order, so aggregates do not depend on the thread count.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::flows::norm;
use crate::levy::{exp_moment_check, sample_path, DrivingPath, LevyModel, MAX_LEVEL};
use crate::ode::OdeConfig;
use crate::output::format_g17;
use crate::scheme::{
    closed_form_linear, event_driven_reference, wz_knots_stride, EventDrivenConfig,
};

/// Smallest path count accepted by [`ExperimentConfig::validate`].
pub const MIN_PATHS: usize = 100;

/// Errors at or below this level are inner-ODE noise, not discretisation.
pub const DEFAULT_EXCLUDE_FLOOR: f64 = 1e-6;

const Z95: f64 = 1.96;

/// Which solution the scheme is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceKind {
    /// `x0 exp(alpha t + beta W + gamma Z)`; scalar linear family only.
    ClosedFormLinear { alpha: f64, beta: f64, gamma: f64 },
    /// Jump-by-jump integration; requires `b = 0`.
    EventDriven,
    /// The scheme itself at `h_ref = T 2^-level`.
    SelfRefined { level: u32 },
}

impl ReferenceKind {
    pub fn name(&self) -> &'static str {
        match self {
            ReferenceKind::ClosedFormLinear { .. } => "closed_form_linear",
            ReferenceKind::EventDriven => "event_driven",
            ReferenceKind::SelfRefined { .. } => "self_refined",
        }
    }
}

/// Lattice of initial points `delta Z^d` intersected with the ball `|x| <= N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ball {
    pub radius: f64,
    pub spacing: f64,
}

impl Ball {
    /// Lattice points and their integer coordinates, origin included.
    pub fn lattice(&self, dim: usize) -> Vec<(Vec<i64>, Vec<f64>)> {
        let kmax = (self.radius / self.spacing + 1e-9).floor() as i64;
        let mut out = Vec::new();
        let mut idx = vec![-kmax; dim];
        loop {
            let x: Vec<f64> = idx.iter().map(|&k| k as f64 * self.spacing).collect();
            if norm(&x) <= self.radius * (1.0 + 1e-12) {
                out.push((idx.clone(), x));
            }
            let mut j = 0;
            loop {
                if j == dim {
                    return out;
                }
                if idx[j] < kmax {
                    idx[j] += 1;
                    break;
                }
                idx[j] = -kmax;
                j += 1;
            }
        }
    }
}

/// One Monte Carlo study.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub coefficients: CoefficientSet,
    pub model: LevyModel,
    pub horizon: f64,
    /// Step ladder `h = T 2^-k`, `k` strictly increasing.
    pub levels: Vec<u32>,
    pub paths: usize,
    pub x0: Vec<f64>,
    pub ball: Option<Ball>,
    pub reference: ReferenceKind,
    pub rate_epsilon: f64,
    /// Relative slack on `K = 5 ||Dc||` in the moment hypothesis checks.
    pub moment_margin: f64,
    /// `p` of the `E sup |.|^p` metric.
    pub moment_order: f64,
    pub master_seed: u64,
    pub ode: OdeConfig,
    /// Largest drift step of the event-driven reference.
    pub event_max_step: f64,
    /// Take the sup over every finest-grid point of the cadlag extension
    /// instead of over knots.
    pub continuous_sup: bool,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn new(coefficients: CoefficientSet, model: LevyModel, x0: Vec<f64>) -> Self {
        Self {
            coefficients,
            model,
            horizon: 1.0,
            levels: (4..=9).collect(),
            paths: 1000,
            x0,
            ball: None,
            reference: ReferenceKind::EventDriven,
            rate_epsilon: 0.1,
            moment_margin: 0.1,
            moment_order: 1.0,
            master_seed: 0,
            ode: OdeConfig::default(),
            event_max_step: EventDrivenConfig::default().max_step,
            continuous_sup: false,
            threads: 0,
        }
    }

    pub fn steps(&self) -> Vec<f64> {
        self.levels.iter().map(|&k| self.step(k)).collect()
    }

    fn step(&self, level: u32) -> f64 {
        self.horizon / (1u64 << level) as f64
    }

    /// Level of the shared path grid.
    pub fn path_level(&self) -> u32 {
        let top = self.levels.iter().copied().max().unwrap_or(0);
        match self.reference {
            ReferenceKind::SelfRefined { level } => top.max(level),
            _ => top,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.coefficients;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("experiment.horizon", "must be positive and finite"));
        }
        if self.levels.is_empty() {
            return Err(Error::config("experiment.h_levels", "must not be empty"));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(
                "experiment.h_levels",
                "must be strictly increasing (steps strictly decreasing)",
            ));
        }
        if self.path_level() > MAX_LEVEL {
            return Err(Error::config(
                "experiment.h_levels",
                format!("levels above {MAX_LEVEL} are not supported"),
            ));
        }
        if self.paths < MIN_PATHS {
            return Err(Error::config(
                "experiment.paths",
                format!("need at least {MIN_PATHS} paths"),
            ));
        }
        if self.model.dim() != c.noise_dim() {
            return Err(Error::config(
                "model.jump_law",
                format!(
                    "noise dimension {} does not match the coefficients' {}",
                    self.model.dim(),
                    c.noise_dim()
                ),
            ));
        }
        if self.x0.len() != c.dim() || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config(
                "experiment.x0",
                format!("must be {} finite numbers", c.dim()),
            ));
        }
        if let Some(ball) = self.ball {
            if !(ball.radius > 0.0 && ball.radius.is_finite()) {
                return Err(Error::config("experiment.ball_radius", "must be positive"));
            }
            if !(ball.spacing > 0.0 && ball.spacing.is_finite()) {
                return Err(Error::config("experiment.lattice_spacing", "must be positive"));
            }
        }
        match self.reference {
            ReferenceKind::ClosedFormLinear { .. } => {
                if c.dim() != 1 || c.noise_dim() != 1 {
                    return Err(Error::config(
                        "experiment.reference",
                        "closed_form_linear needs the scalar linear family",
                    ));
                }
            }
            ReferenceKind::EventDriven => {
                if c.has_diffusion() {
                    return Err(Error::config(
                        "experiment.reference",
                        "event_driven requires a zero diffusion coefficient",
                    ));
                }
            }
            ReferenceKind::SelfRefined { level } => {
                if level < *self.levels.last().unwrap() {
                    return Err(Error::config(
                        "experiment.reference_level",
                        "reference step must divide every step of the ladder",
                    ));
                }
            }
        }
        if !(self.rate_epsilon > 0.0 && self.rate_epsilon < 1.0) {
            return Err(Error::config("experiment.rate_epsilon", "must lie in (0, 1)"));
        }
        if !(self.moment_margin >= 0.0 && self.moment_margin.is_finite()) {
            return Err(Error::config("experiment.moment_margin", "must be non-negative"));
        }
        if !(self.moment_order >= 1.0 && self.moment_order.is_finite()) {
            return Err(Error::config("experiment.moment_order", "must be at least 1"));
        }
        if !(self.event_max_step > 0.0) {
            return Err(Error::config("ode.event_max_step", "must be positive"));
        }
        self.ode.validate()
    }

    fn event_cfg(&self) -> EventDrivenConfig {
        EventDrivenConfig {
            ode: self.ode,
            max_step: self.event_max_step,
        }
    }

    fn sample(&self, index: usize, level: u32) -> Result<DrivingPath> {
        sample_path(&self.model, self.horizon, level, self.master_seed, index as u64)
    }

    /// `K = 5 ||Dc|| (1 + margin)`.
    pub fn jump_constant(&self) -> f64 {
        5.0 * self.coefficients.norms().jump * (1.0 + self.moment_margin)
    }
}

/// One step size of an [`ErrorCurve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub h: f64,
    pub error: f64,
    pub ci_half_width: f64,
    /// Paths that entered the estimate.
    pub paths: usize,
    /// `(E sup |.|^2)^(1/2)` alongside the headline metric.
    pub l2_error: f64,
    pub l2_ci_half_width: f64,
}

/// Per-path errors, one per step of the ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub path_index: u64,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCurve {
    pub metric: String,
    pub moment_order: f64,
    pub reference: Option<ReferenceKind>,
    pub points: Vec<CurvePoint>,
    #[serde(skip)]
    pub per_path: Vec<PathRecord>,
    pub diverged_paths: Vec<u64>,
    /// Every error sits at the inner-ODE floor: the scheme reproduces the
    /// reference and the curve carries no rate.
    pub scheme_exact: bool,
    pub warnings: Vec<String>,
}

impl ErrorCurve {
    /// A bare curve from `(h, error, ci)` triples, mainly for fitting.
    pub fn from_points(points: &[(f64, f64, f64)]) -> Self {
        Self {
            metric: "synthetic".into(),
            moment_order: 1.0,
            reference: None,
            points: points
                .iter()
                .map(|&(h, error, ci)| CurvePoint {
                    h,
                    error,
                    ci_half_width: ci,
                    paths: 0,
                    l2_error: error,
                    l2_ci_half_width: ci,
                })
                .collect(),
            per_path: Vec::new(),
            diverged_paths: Vec::new(),
            scheme_exact: false,
            warnings: Vec::new(),
        }
    }

    /// Median over paths of the error at each step.
    pub fn median_errors(&self) -> Vec<f64> {
        (0..self.points.len())
            .map(|j| {
                let mut v: Vec<f64> = self.per_path.iter().map(|r| r.errors[j]).collect();
                median(&mut v)
            })
            .collect()
    }

    /// `h,error,ci,M` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "h,error,ci,M")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{}",
                format_g17(p.h),
                format_g17(p.error),
                format_g17(p.ci_half_width),
                p.paths
            )?;
        }
        Ok(())
    }

    /// `path_index,h,error` rows, one per path and step.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "path_index,h,error")?;
        for r in &self.per_path {
            for (p, e) in self.points.iter().zip(&r.errors) {
                writeln!(w, "{},{},{}", r.path_index, format_g17(p.h), format_g17(*e))?;
            }
        }
        Ok(())
    }
}

/// Number of adjacent pairs with `v[j+1] > v[j]`.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample mean and the 95% normal-approximation half-width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Z95 * (var / n).sqrt())
}

/// `(E e^p)^(1/p)` and its delta-method half-width.
fn lp_estimate(errors: &[f64], p: f64) -> (f64, f64) {
    let powered: Vec<f64> = errors.iter().map(|e| e.powf(p)).collect();
    let (m, ci) = mean_ci(&powered);
    let est = m.powf(1.0 / p);
    let ci = if m > 0.0 { ci * est / (p * m) } else { ci.powf(1.0 / p) };
    (est, ci)
}

fn build_curve(
    cfg: &ExperimentConfig,
    metric: &str,
    steps: &[f64],
    records: Vec<PathRecord>,
    diverged: Vec<u64>,
    mut warnings: Vec<String>,
) -> ErrorCurve {
    let p = cfg.moment_order;
    let points: Vec<CurvePoint> = steps
        .iter()
        .enumerate()
        .map(|(j, &h)| {
            let errs: Vec<f64> = records.iter().map(|r| r.errors[j]).collect();
            let (error, ci_half_width) = lp_estimate(&errs, p);
            let (l2_error, l2_ci_half_width) = lp_estimate(&errs, 2.0);
            CurvePoint {
                h,
                error,
                ci_half_width,
                paths: errs.len(),
                l2_error,
                l2_ci_half_width,
            }
        })
        .collect();
    let scheme_exact = points.iter().all(|pt| pt.error <= DEFAULT_EXCLUDE_FLOOR);
    if scheme_exact {
        warnings.push("all errors at the inner-ODE floor: scheme-exact case, no rate".into());
    }
    if !diverged.is_empty() {
        warnings.push(format!("{} path(s) hit the divergence guard and were excluded", diverged.len()));
    }
    ErrorCurve {
        metric: metric.into(),
        moment_order: p,
        reference: Some(cfg.reference),
        points,
        per_path: records,
        diverged_paths: diverged,
        scheme_exact,
        warnings,
    }
}

/// Runs `work` for every path index on a pool of `threads` workers and
/// returns results in index order.
fn run_paths<T, F>(threads: usize, paths: usize, work: F) -> Result<(Vec<(u64, T)>, Vec<u64>)>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| (0..paths).into_par_iter().map(&work).collect());
    let mut ok = Vec::with_capacity(paths);
    let mut diverged = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push((i as u64, v)),
            Err(e) if e.is_divergence() => diverged.push(i as u64),
            Err(e) => return Err(e),
        }
    }
    if diverged.len() * 100 > paths {
        return Err(Error::DivergenceAbort {
            diverged: diverged.len(),
            total: paths,
        });
    }
    Ok((ok, diverged))
}

/// Reference states at every `stride`-th finest-grid point, row-major.
pub fn reference_states(cfg: &ExperimentConfig, path: &DrivingPath, x0: &[f64], stride: usize) -> Result<Vec<f64>> {
    let count = path.cells() / stride + 1;
    let times: Vec<f64> = (0..count).map(|k| path.grid_time(k * stride)).collect();
    match cfg.reference {
        ReferenceKind::ClosedFormLinear { alpha, beta, gamma } => {
            closed_form_linear(alpha, beta, gamma, x0[0], path, &times)
        }
        ReferenceKind::EventDriven => Ok(event_driven_reference(
            &cfg.coefficients,
            path,
            x0,
            &times,
            &cfg.event_cfg(),
        )?
        .concat()),
        ReferenceKind::SelfRefined { level } => {
            let ref_stride = 1usize << (path.level() - level);
            let traj = wz_knots_stride(&cfg.coefficients, path, x0, ref_stride, &cfg.ode)?;
            Ok((0..count)
                .flat_map(|k| traj.state_at_grid(k * stride).to_vec())
                .collect())
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sup error of every ladder step for one initial point on one path.
fn path_errors(cfg: &ExperimentConfig, path: &DrivingPath, x0: &[f64]) -> Result<Vec<f64>> {
    let d = x0.len();
    let top = *cfg.levels.last().unwrap();
    let fine_stride = 1usize << (path.level() - top);
    let grid_stride = if cfg.continuous_sup { 1 } else { fine_stride };
    let reference = reference_states(cfg, path, x0, grid_stride)?;
    cfg.levels
        .iter()
        .map(|&k| {
            let stride = 1usize << (path.level() - k);
            let traj = wz_knots_stride(&cfg.coefficients, path, x0, stride, &cfg.ode)?;
            let mut sup = 0.0f64;
            if cfg.continuous_sup {
                let fine = traj.continuous_states(&cfg.coefficients, path)?;
                for (a, b) in fine.chunks_exact(d).zip(reference.chunks_exact(d)) {
                    sup = sup.max(dist(a, b));
                }
            } else {
                let step = stride / grid_stride;
                for (kk, s) in traj.states().enumerate() {
                    let r = &reference[kk * step * d..(kk * step + 1) * d];
                    sup = sup.max(dist(s, r));
                }
            }
            Ok(sup)
        })
        .collect()
}

fn moment_warning(cfg: &ExperimentConfig, exponent: f64, label: &str) -> Option<String> {
    exp_moment_check(&cfg.model, exponent)
        .err()
        .map(|e| format!("jump law fails the exponential moment at A = {label} = {exponent}: {e}"))
}

fn metric_name(cfg: &ExperimentConfig, over: &str) -> String {
    let grid = if cfg.continuous_sup { "grid" } else { "knots" };
    format!("{over}E sup_{grid} |X - X^h|^p, p = {}", cfg.moment_order)
}

/// Strong error `(E sup_k |X_{kh} - X^h_{kh}|^p)^(1/p)` at `cfg.x0` for
/// every step of the ladder, on common paths.
pub fn strong_error(cfg: &ExperimentConfig) -> Result<ErrorCurve> {
    cfg.validate()?;
    let level = cfg.path_level();
    let (ok, diverged) = run_paths(cfg.threads, cfg.paths, |i| {
        let path = cfg.sample(i, level)?;
        path_errors(cfg, &path, &cfg.x0)
    })?;
    let records = ok
        .into_iter()
        .map(|(path_index, errors)| PathRecord { path_index, errors })
        .collect();
    let k = cfg.jump_constant();
    let warnings = moment_warning(cfg, cfg.moment_order * k, "pK").into_iter().collect();
    Ok(build_curve(cfg, &metric_name(cfg, ""), &cfg.steps(), records, diverged, warnings))
}

/// Output of [`uniform_error`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformReport {
    /// Per path, max over the lattice of the sup error.
    pub uniform: ErrorCurve,
    /// The same paths at the origin alone.
    pub pointwise: ErrorCurve,
    pub lattice_points: usize,
    pub radius: f64,
    pub spacing: f64,
    /// `delta sqrt(d) / 2` times the mean over paths of the largest
    /// difference quotient of the error between neighbouring lattice
    /// points; an estimate of how far the lattice max may sit below the
    /// ball sup.
    pub gap_estimate: Vec<f64>,
    /// `(1 - epsilon) / (4 d)`.
    pub rate_threshold: f64,
}

/// Uniform-in-`x` strong error over the lattice of `cfg.ball`.
pub fn uniform_error(cfg: &ExperimentConfig) -> Result<UniformReport> {
    cfg.validate()?;
    let ball = cfg
        .ball
        .ok_or_else(|| Error::config("experiment.ball_radius", "uniform error needs a ball"))?;
    let d = cfg.coefficients.dim();
    let lattice = ball.lattice(d);
    let origin = lattice
        .iter()
        .position(|(idx, _)| idx.iter().all(|&k| k == 0))
        .expect("lattice contains the origin");
    let lookup: BTreeMap<&[i64], usize> = lattice.iter().enumerate().map(|(i, (k, _))| (k.as_slice(), i)).collect();
    let mut neighbours = Vec::new();
    for (i, (idx, _)) in lattice.iter().enumerate() {
        for axis in 0..d {
            let mut next = idx.clone();
            next[axis] += 1;
            if let Some(&j) = lookup.get(next.as_slice()) {
                neighbours.push((i, j));
            }
        }
    }

    let level = cfg.path_level();
    let n_h = cfg.levels.len();
    let (ok, diverged) = run_paths(cfg.threads, cfg.paths, |i| {
        let path = cfg.sample(i, level)?;
        let per_point: Vec<Vec<f64>> = lattice
            .iter()
            .map(|(_, x)| path_errors(cfg, &path, x))
            .collect::<Result<_>>()?;
        let uniform: Vec<f64> = (0..n_h)
            .map(|j| per_point.iter().map(|e| e[j]).fold(0.0, f64::max))
            .collect();
        let quotient: Vec<f64> = (0..n_h)
            .map(|j| {
                neighbours
                    .iter()
                    .map(|&(a, b)| (per_point[a][j] - per_point[b][j]).abs() / ball.spacing)
                    .fold(0.0, f64::max)
            })
            .collect();
        Ok((uniform, per_point[origin].clone(), quotient))
    })?;

    let half_diag = 0.5 * ball.spacing * (d as f64).sqrt();
    let gap_estimate = (0..n_h)
        .map(|j| half_diag * ok.iter().map(|(_, r)| r.2[j]).sum::<f64>() / ok.len() as f64)
        .collect();
    let mut uniform_records = Vec::with_capacity(ok.len());
    let mut point_records = Vec::with_capacity(ok.len());
    for (path_index, (u, p, _)) in ok {
        uniform_records.push(PathRecord { path_index, errors: u });
        point_records.push(PathRecord { path_index, errors: p });
    }
    let k = cfg.jump_constant();
    let warnings: Vec<String> = moment_warning(cfg, 2.0 * d as f64 * k, "2dK").into_iter().collect();
    let steps = cfg.steps();
    Ok(UniformReport {
        uniform: build_curve(cfg, &metric_name(cfg, "sup_x "), &steps, uniform_records, diverged.clone(), warnings),
        pointwise: build_curve(cfg, &metric_name(cfg, ""), &steps, point_records, diverged, Vec::new()),
        lattice_points: lattice.len(),
        radius: ball.radius,
        spacing: ball.spacing,
        gap_estimate,
        rate_threshold: (1.0 - cfg.rate_epsilon) / (4.0 * d as f64),
    })
}

/// Test functions for [`weak_error`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Constant,
    /// First component.
    Identity,
    /// `|x|^2`.
    Square,
    /// `cos` of the first component.
    Cos,
}

impl Observable {
    pub const NAMES: [&'static str; 4] = ["constant", "identity", "square", "cos"];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "constant" => Ok(Observable::Constant),
            "identity" => Ok(Observable::Identity),
            "square" => Ok(Observable::Square),
            "cos" => Ok(Observable::Cos),
            other => Err(Error::config(
                "experiment.observable",
                format!("unknown observable {other:?}, expected one of {:?}", Self::NAMES),
            )),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::Constant => 1.0,
            Observable::Identity => x[0],
            Observable::Square => x.iter().map(|v| v * v).sum(),
            Observable::Cos => x[0].cos(),
        }
    }
}

/// Weak error `|E f(X^h_T) - E f(X_T)|` per step, estimated from the
/// paired differences on common paths.
pub fn weak_error(cfg: &ExperimentConfig, observable: Observable) -> Result<ErrorCurve> {
    cfg.validate()?;
    let level = cfg.path_level();
    let (ok, diverged) = run_paths(cfg.threads, cfg.paths, |i| {
        let path = cfg.sample(i, level)?;
        let last = path.cells();
        let reference = reference_states(cfg, &path, &cfg.x0, last)?;
        let f_ref = observable.eval(&reference[cfg.x0.len()..]);
        cfg.levels
            .iter()
            .map(|&k| {
                let stride = 1usize << (path.level() - k);
                let traj = wz_knots_stride(&cfg.coefficients, &path, &cfg.x0, stride, &cfg.ode)?;
                Ok(observable.eval(traj.state(traj.len() - 1)) - f_ref)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let steps = cfg.steps();
    let mut warnings = Vec::new();
    let points: Vec<CurvePoint> = steps
        .iter()
        .enumerate()
        .map(|(j, &h)| {
            let diffs: Vec<f64> = ok.iter().map(|(_, v)| v[j]).collect();
            let (mean, ci) = mean_ci(&diffs);
            let error = mean.abs();
            if ci >= error && error > 0.0 {
                warnings.push(format!(
                    "h = {h}: confidence half-width {ci:.3e} exceeds the weak error {error:.3e}; increase the path count"
                ));
            }
            CurvePoint {
                h,
                error,
                ci_half_width: ci,
                paths: diffs.len(),
                l2_error: error,
                l2_ci_half_width: ci,
            }
        })
        .collect();
    if !diverged.is_empty() {
        warnings.push(format!("{} path(s) hit the divergence guard and were excluded", diverged.len()));
    }
    let scheme_exact = points.iter().all(|pt| pt.error <= DEFAULT_EXCLUDE_FLOOR);
    Ok(ErrorCurve {
        metric: format!("|E f(X^h_T) - E f(X_T)|, f = {observable:?}"),
        moment_order: 1.0,
        reference: Some(cfg.reference),
        points,
        per_path: ok
            .into_iter()
            .map(|(path_index, errors)| PathRecord { path_index, errors })
            .collect(),
        diverged_paths: diverged,
        scheme_exact,
        warnings,
    })
}

/// Weighted log-log least squares.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(h, log error - fitted)` for each used point.
    pub residuals: Vec<(f64, f64)>,
    /// Steps left out because their error sits at or below the floor.
    pub excluded: Vec<f64>,
    /// False when some used point had a zero or undefined half-width and
    /// the fit fell back to equal weights.
    pub weighted: bool,
}

/// Fits `log error = intercept + slope log h` over the points above
/// `exclude_floor`, each weighted by `1 / var(log error) = (error / ci)^2`.
/// A scheme-exact curve has no usable points.
pub fn fit_rate(curve: &ErrorCurve, exclude_floor: f64) -> Result<RateFit> {
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    for p in &curve.points {
        if curve.scheme_exact || !(p.error > exclude_floor) || !p.error.is_finite() || !(p.h > 0.0) {
            excluded.push(p.h);
        } else {
            used.push(*p);
        }
    }
    if used.len() < 3 {
        return Err(Error::TooFewPoints(used.len()));
    }
    let xs: Vec<f64> = used.iter().map(|p| p.h.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.error.ln()).collect();
    let raw: Vec<f64> = used.iter().map(|p| (p.error / p.ci_half_width).powi(2)).collect();
    let weighted = raw.iter().all(|w| w.is_finite() && *w > 0.0);
    let ws = if weighted { raw } else { vec![1.0; used.len()] };
    let (slope, intercept, r_squared) = weighted_line(&xs, &ys, &ws);
    let residuals = used
        .iter()
        .zip(xs.iter().zip(&ys))
        .map(|(p, (x, y))| (p.h, y - intercept - slope * x))
        .collect();
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        residuals,
        excluded,
        weighted,
    })
}

fn weighted_line(xs: &[f64], ys: &[f64], ws: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
        syy += w * (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, r2)
}

/// Ordinary least squares `y = intercept + slope x`; returns
/// `(slope, intercept, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    weighted_line(xs, ys, &vec![1.0; xs.len()])
}

/// One Monte Carlo estimate against a scalar abscissa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StudyPoint {
    pub x: f64,
    pub estimate: f64,
    pub ci_half_width: f64,
}

/// `E sup_t |bar X^h_t(x)|^2` against `1 + |x|^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentGrowthReport {
    pub h: f64,
    /// `x` is `|x0|`.
    pub points: Vec<StudyPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// `E sup_t |bar X^h_t(x) - bar X^h_t(y)|` against `|x - y|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub h: f64,
    /// `x` is the separation.
    pub points: Vec<StudyPoint>,
    pub log_slope: f64,
    pub r_squared: f64,
}

/// Sup over the finest grid of the cadlag extension, row-major.
fn cadlag_states(cfg: &ExperimentConfig, path: &DrivingPath, x0: &[f64], level: u32) -> Result<Vec<f64>> {
    let stride = 1usize << (path.level() - level);
    let traj = wz_knots_stride(&cfg.coefficients, path, x0, stride, &cfg.ode)?;
    traj.continuous_states(&cfg.coefficients, path)
}

/// Second-moment growth of the cadlag scheme at step `T 2^-level` over the
/// given initial points. The sup runs over the path grid of level
/// `cfg.path_level()`.
pub fn moment_growth(cfg: &ExperimentConfig, level: u32, initial: &[Vec<f64>]) -> Result<MomentGrowthReport> {
    cfg.validate()?;
    let grid = cfg.path_level().max(level);
    let d = cfg.coefficients.dim();
    let (ok, _) = run_paths(cfg.threads, cfg.paths, |i| {
        let path = cfg.sample(i, grid)?;
        initial
            .iter()
            .map(|x| {
                let states = cadlag_states(cfg, &path, x, level)?;
                Ok(states.chunks_exact(d).map(|s| s.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let points: Vec<StudyPoint> = initial
        .iter()
        .enumerate()
        .map(|(j, x)| {
            let v: Vec<f64> = ok.iter().map(|(_, r)| r[j]).collect();
            let (estimate, ci_half_width) = mean_ci(&v);
            StudyPoint {
                x: norm(x),
                estimate,
                ci_half_width,
            }
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| 1.0 + p.x * p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.estimate).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    Ok(MomentGrowthReport {
        h: cfg.step(level),
        points,
        slope,
        intercept,
        r_squared,
    })
}

/// Dependence of the cadlag scheme on its initial point: `y = x + s e_1`
/// for each separation `s`.
pub fn lipschitz_in_x(cfg: &ExperimentConfig, level: u32, x: &[f64], separations: &[f64]) -> Result<LipschitzReport> {
    cfg.validate()?;
    if separations.len() < 2 || separations.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("need at least two positive separations"));
    }
    let grid = cfg.path_level().max(level);
    let d = cfg.coefficients.dim();
    let (ok, _) = run_paths(cfg.threads, cfg.paths, |i| {
        let path = cfg.sample(i, grid)?;
        let base = cadlag_states(cfg, &path, x, level)?;
        separations
            .iter()
            .map(|&s| {
                let mut y = x.to_vec();
                y[0] += s;
                let other = cadlag_states(cfg, &path, &y, level)?;
                Ok(base
                    .chunks_exact(d)
                    .zip(other.chunks_exact(d))
                    .map(|(a, b)| dist(a, b))
                    .fold(0.0, f64::max))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let points: Vec<StudyPoint> = separations
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let v: Vec<f64> = ok.iter().map(|(_, r)| r[j]).collect();
            let (estimate, ci_half_width) = mean_ci(&v);
            StudyPoint {
                x: s,
                estimate,
                ci_half_width,
            }
        })
        .collect();
    let lx: Vec<f64> = points.iter().map(|p| p.x.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.estimate.ln()).collect();
    let (log_slope, _, r_squared) = linear_fit(&lx, &ly);
    Ok(LipschitzReport {
        h: cfg.step(level),
        points,
        log_slope,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{bounded_smooth, scalar_linear};
    use crate::levy::JumpDistribution;

    fn bench(paths: usize) -> ExperimentConfig {
        let model = LevyModel::new(5.0, JumpDistribution::symmetric_unit()).unwrap();
        ExperimentConfig {
            paths,
            levels: vec![3, 4, 5],
            ..ExperimentConfig::new(bounded_smooth(1.0, 0.0, 1.0), model, vec![0.5])
        }
    }

    #[test]
    fn synthetic_power_law_is_fitted_exactly() {
        let pts: Vec<(f64, f64, f64)> = (2..8)
            .map(|k| {
                let h = 2f64.powi(-k);
                (h, 3.0 * h.sqrt(), 0.1 * h.sqrt())
            })
            .collect();
        let fit = fit_rate(&ErrorCurve::from_points(&pts), 1e-12).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(fit.weighted && fit.excluded.is_empty());
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn floor_points_are_excluded() {
        let mut pts: Vec<(f64, f64, f64)> = (2..7)
            .map(|k| {
                let h = 2f64.powi(-k);
                (h, 2.0 * h, 0.0)
            })
            .collect();
        pts.push((2f64.powi(-7), 1e-9, 0.0));
        let fit = fit_rate(&ErrorCurve::from_points(&pts), 1e-6).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert_eq!(fit.excluded, vec![2f64.powi(-7)]);
        assert!(!fit.weighted);
    }

    #[test]
    fn too_few_points() {
        let pts = [(0.5, 1.0, 0.1), (0.25, 0.5, 0.1), (0.125, 1e-9, 0.1)];
        assert_eq!(fit_rate(&ErrorCurve::from_points(&pts), 1e-6).unwrap_err(), Error::TooFewPoints(2));
    }

    #[test]
    fn lattice_shapes() {
        let one = Ball { radius: 1.0, spacing: 2.5 }.lattice(2);
        assert_eq!(one.len(), 1);
        assert_eq!(Ball { radius: 1.0, spacing: 0.1 }.lattice(1).len(), 21);
        // (0,0), four axis points, four diagonals at distance sqrt(2) > 1 excluded
        assert_eq!(Ball { radius: 1.0, spacing: 1.0 }.lattice(2).len(), 5);
    }

    #[test]
    fn validation_names_fields() {
        let mut cfg = bench(10);
        match cfg.validate().unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "experiment.paths"),
            e => panic!("{e:?}"),
        }
        cfg.paths = 100;
        cfg.levels = vec![5, 4];
        assert!(matches!(cfg.validate(), Err(Error::Config { ref field, .. }) if field == "experiment.h_levels"));
        cfg.levels = vec![4, 5];
        cfg.coefficients = bounded_smooth(1.0, 1.0, 1.0);
        assert!(matches!(cfg.validate(), Err(Error::Config { ref field, .. }) if field == "experiment.reference"));
        cfg.reference = ReferenceKind::SelfRefined { level: 4 };
        assert!(matches!(cfg.validate(), Err(Error::Config { ref field, .. }) if field == "experiment.reference_level"));
        cfg.reference = ReferenceKind::SelfRefined { level: 8 };
        cfg.validate().unwrap();
        assert_eq!(cfg.path_level(), 8);
    }

    #[test]
    fn scalar_linear_is_scheme_exact() {
        let model = LevyModel::new(2.0, JumpDistribution::symmetric_unit()).unwrap();
        let cfg = ExperimentConfig {
            paths: 100,
            levels: vec![2, 3, 4],
            reference: ReferenceKind::ClosedFormLinear {
                alpha: 0.5,
                beta: 0.3,
                gamma: 0.4,
            },
            ..ExperimentConfig::new(scalar_linear(0.5, 0.3, 0.4), model, vec![1.0])
        };
        let curve = strong_error(&cfg).unwrap();
        assert!(curve.scheme_exact);
        assert!(curve.points.iter().all(|p| p.error < 1e-7));
        assert!(matches!(fit_rate(&curve, DEFAULT_EXCLUDE_FLOOR), Err(Error::TooFewPoints(0))));
    }

    #[test]
    fn single_point_lattice_equals_pointwise() {
        let mut cfg = bench(100);
        cfg.x0 = vec![0.0];
        cfg.ball = Some(Ball {
            radius: 1.0,
            spacing: 2.0,
        });
        let uni = uniform_error(&cfg).unwrap();
        let strong = strong_error(&cfg).unwrap();
        assert_eq!(uni.lattice_points, 1);
        assert_eq!(uni.uniform.points, strong.points);
        assert_eq!(uni.pointwise.points, strong.points);
    }

    #[test]
    fn uniform_dominates_pointwise() {
        let mut cfg = bench(100);
        cfg.ball = Some(Ball {
            radius: 1.0,
            spacing: 0.5,
        });
        let uni = uniform_error(&cfg).unwrap();
        assert_eq!(uni.lattice_points, 5);
        for (u, p) in uni.uniform.points.iter().zip(&uni.pointwise.points) {
            assert!(u.error >= p.error);
        }
        assert!((uni.rate_threshold - 0.225).abs() < 1e-15);
    }

    #[test]
    fn constant_observable_has_no_weak_error() {
        let curve = weak_error(&bench(100), Observable::Constant).unwrap();
        assert!(curve.points.iter().all(|p| p.error == 0.0));
    }

    #[test]
    fn identical_across_thread_counts() {
        let mut cfg = bench(100);
        cfg.threads = 1;
        let a = strong_error(&cfg).unwrap();
        cfg.threads = 3;
        let b = strong_error(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn continuous_sup_bounds_knot_sup() {
        let mut cfg = bench(100);
        let knots = strong_error(&cfg).unwrap();
        cfg.continuous_sup = true;
        let grid = strong_error(&cfg).unwrap();
        for (a, b) in knots.per_path.iter().zip(&grid.per_path) {
            for (x, y) in a.errors.iter().zip(&b.errors) {
                assert!(y >= x);
            }
        }
    }

    #[test]
    fn divergence_aborts() {
        let set = CoefficientSet::new("blowup", 1, 1)
            .with_drift(|x, o| o[0] = x[0] * x[0])
            .with_norms(Default::default());
        let cfg = ExperimentConfig {
            paths: 100,
            levels: vec![2, 3, 4],
            reference: ReferenceKind::SelfRefined { level: 4 },
            horizon: 4.0,
            ..ExperimentConfig::new(set, LevyModel::brownian_only(1), vec![1.0])
        };
        assert_eq!(
            strong_error(&cfg).unwrap_err(),
            Error::DivergenceAbort {
                diverged: 100,
                total: 100
            }
        );
    }

    #[test]
    fn observables() {
        assert_eq!(Observable::from_name("square").unwrap().eval(&[3.0, 4.0]), 25.0);
        assert!(Observable::from_name("cube").is_err());
    }
}
