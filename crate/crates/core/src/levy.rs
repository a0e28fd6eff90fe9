//! Driving noise: Brownian motion `W` and a compensated compound-Poisson
//! process `Z`, sampled once on a dyadic finest grid.
//!
//! Brownian increments and jump sizes are stored as integer multiples of
//! [`QUANTUM`]. Every aggregated increment is then an exact integer sum, so
//! coarse-cell increments equal the sum of the fine-cell increments bit for
//! bit regardless of how the cells are grouped. The quantisation error
//! (below 1e-13 per value) is far beneath any statistical effect.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::rng::{self, Purpose};

/// Resolution of stored increments (2^-44).
pub const QUANTUM: f64 = 1.0 / 17_592_186_044_416.0;

/// Largest finest level accepted by [`sample_path`].
pub const MAX_LEVEL: u32 = 30;

#[inline]
fn quantize(x: f64) -> i64 {
    (x / QUANTUM).round() as i64
}

#[inline]
fn dequantize(q: i64) -> f64 {
    q as f64 * QUANTUM
}

/// Law of a single jump `J` of the compound-Poisson driver.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpDistribution {
    /// Finitely many atoms `atoms[i]` with probabilities `probabilities[i]`.
    Atoms {
        atoms: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
    },
    /// Uniform on the cube `[-half_width, half_width]^dim`.
    UniformBox { dim: usize, half_width: f64 },
    /// Uniform on `{inner <= |z| <= outer}` in `R^dim`.
    UniformAnnulus { dim: usize, inner: f64, outer: f64 },
    /// Uniform direction with `|J|` exponential of the given rate, truncated
    /// to `|J| <= radius` when a radius is given. In one dimension this is
    /// the two-sided (Laplace) law.
    TwoSidedExponential {
        dim: usize,
        rate: f64,
        radius: Option<f64>,
    },
}

impl JumpDistribution {
    pub fn atoms(atoms: Vec<Vec<f64>>, probabilities: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != probabilities.len() {
            return Err(Error::invalid(
                "atoms and probabilities must be non-empty and of equal length",
            ));
        }
        let dim = atoms[0].len();
        if dim == 0 || atoms.iter().any(|a| a.len() != dim) {
            return Err(Error::invalid("all atoms must share a positive dimension"));
        }
        if atoms.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("atoms must be finite"));
        }
        if probabilities.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "atom probabilities sum to {total}, expected 1"
            )));
        }
        Ok(JumpDistribution::Atoms {
            atoms,
            probabilities,
        })
    }

    /// Atoms `+1` and `-1` with probability one half each (one dimension).
    pub fn symmetric_unit() -> Self {
        JumpDistribution::Atoms {
            atoms: vec![vec![-1.0], vec![1.0]],
            probabilities: vec![0.5, 0.5],
        }
    }

    pub fn uniform_box(dim: usize, half_width: f64) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return Err(Error::invalid("uniform box supports dimensions 1 to 3"));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::invalid("box half-width must be positive"));
        }
        Ok(JumpDistribution::UniformBox { dim, half_width })
    }

    pub fn uniform_annulus(dim: usize, inner: f64, outer: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("annulus dimension must be positive"));
        }
        if !(inner >= 0.0 && outer.is_finite() && outer > inner) {
            return Err(Error::invalid("annulus needs 0 <= inner < outer"));
        }
        Ok(JumpDistribution::UniformAnnulus { dim, inner, outer })
    }

    pub fn two_sided_exponential(dim: usize, rate: f64, radius: Option<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("exponential law dimension must be positive"));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::invalid("exponential rate must be positive"));
        }
        if let Some(r) = radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::invalid("truncation radius must be positive"));
            }
        }
        Ok(JumpDistribution::TwoSidedExponential { dim, rate, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            JumpDistribution::Atoms { atoms, .. } => atoms[0].len(),
            JumpDistribution::UniformBox { dim, .. }
            | JumpDistribution::UniformAnnulus { dim, .. }
            | JumpDistribution::TwoSidedExponential { dim, .. } => *dim,
        }
    }

    /// `E[J]`.
    pub fn first_moment(&self) -> Vec<f64> {
        match self {
            JumpDistribution::Atoms {
                atoms,
                probabilities,
            } => {
                let mut m1 = vec![0.0; self.dim()];
                for (a, p) in atoms.iter().zip(probabilities) {
                    for (acc, v) in m1.iter_mut().zip(a) {
                        *acc += p * v;
                    }
                }
                m1
            }
            _ => vec![0.0; self.dim()],
        }
    }

    /// `E|J|^2`.
    pub fn second_moment(&self) -> f64 {
        match *self {
            JumpDistribution::Atoms {
                ref atoms,
                ref probabilities,
            } => atoms
                .iter()
                .zip(probabilities)
                .map(|(a, p)| p * a.iter().map(|v| v * v).sum::<f64>())
                .sum(),
            JumpDistribution::UniformBox { dim, half_width } => {
                dim as f64 * half_width * half_width / 3.0
            }
            JumpDistribution::UniformAnnulus { dim, inner, outer } => {
                let m = dim as i32;
                m as f64 / (m + 2) as f64 * (outer.powi(m + 2) - inner.powi(m + 2))
                    / (outer.powi(m) - inner.powi(m))
            }
            JumpDistribution::TwoSidedExponential { rate, radius, .. } => match radius {
                None => 2.0 / (rate * rate),
                Some(r) => {
                    let tail = (-rate * r).exp();
                    let num = 2.0 / (rate * rate)
                        - tail * (r * r + 2.0 * r / rate + 2.0 / (rate * rate));
                    num / (1.0 - tail)
                }
            },
        }
    }

    /// Supremum of `|J|` over the support, `None` when unbounded.
    pub fn support_radius(&self) -> Option<f64> {
        match *self {
            JumpDistribution::Atoms { ref atoms, .. } => Some(
                atoms
                    .iter()
                    .map(|a| a.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0, f64::max),
            ),
            JumpDistribution::UniformBox { dim, half_width } => {
                Some(half_width * (dim as f64).sqrt())
            }
            JumpDistribution::UniformAnnulus { outer, .. } => Some(outer),
            JumpDistribution::TwoSidedExponential { radius, .. } => radius,
        }
    }

    /// Exponent beyond which `E e^{A|J|}` is infinite, `None` when it is
    /// finite for every `A`.
    pub fn critical_exponent(&self) -> Option<f64> {
        match *self {
            JumpDistribution::TwoSidedExponential {
                rate, radius: None, ..
            } => Some(rate),
            _ => None,
        }
    }

    /// `E[e^{A|J|}]` for `A >= 0`.
    pub fn exp_moment(&self, a: f64) -> Result<f64> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::invalid("exponent A must be finite and non-negative"));
        }
        if a == 0.0 {
            return Ok(1.0);
        }
        Ok(match *self {
            JumpDistribution::Atoms {
                ref atoms,
                ref probabilities,
            } => atoms
                .iter()
                .zip(probabilities)
                .map(|(z, p)| p * (a * z.iter().map(|v| v * v).sum::<f64>().sqrt()).exp())
                .sum(),
            JumpDistribution::UniformBox { dim, half_width } => {
                if dim == 1 {
                    (a * half_width).exp_m1() / (a * half_width)
                } else {
                    // symmetric in each coordinate, so integrate over the positive orthant
                    let vol = half_width.powi(dim as i32);
                    quadrature::integrate_cube(
                        |p| (a * p.iter().map(|v| v * v).sum::<f64>().sqrt()).exp(),
                        0.0,
                        half_width,
                        dim,
                        48,
                    ) / vol
                }
            }
            JumpDistribution::UniformAnnulus { dim, inner, outer } => {
                let m = dim as i32;
                let norm = outer.powi(m) - inner.powi(m);
                quadrature::integrate(
                    |r| (a * r).exp() * m as f64 * r.powi(m - 1),
                    inner,
                    outer,
                    64,
                ) / norm
            }
            JumpDistribution::TwoSidedExponential { rate, radius, .. } => match radius {
                None => {
                    if a >= rate {
                        return Err(Error::MomentDivergence {
                            exponent: a,
                            critical: rate,
                        });
                    }
                    rate / (rate - a)
                }
                Some(r) => {
                    let mass = -(-rate * r).exp_m1();
                    if a == rate {
                        rate * r / mass
                    } else {
                        rate / (rate - a) * (-(-(rate - a) * r).exp_m1()) / mass
                    }
                }
            },
        })
    }

    /// Draws one jump into `out` (length `dim`).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match *self {
            JumpDistribution::Atoms {
                ref atoms,
                ref probabilities,
            } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = atoms.len() - 1;
                for (i, p) in probabilities.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        chosen = i;
                        break;
                    }
                }
                out.copy_from_slice(&atoms[chosen]);
            }
            JumpDistribution::UniformBox { half_width, .. } => {
                for v in out.iter_mut() {
                    *v = half_width * (2.0 * rng.random::<f64>() - 1.0);
                }
            }
            JumpDistribution::UniformAnnulus { dim, inner, outer } => {
                let m = dim as i32;
                let u: f64 = rng.random();
                let r = (inner.powi(m) + u * (outer.powi(m) - inner.powi(m))).powf(1.0 / m as f64);
                random_direction(rng, out);
                out.iter_mut().for_each(|v| *v *= r);
            }
            JumpDistribution::TwoSidedExponential { rate, radius, .. } => {
                let u: f64 = rng.random();
                let r = match radius {
                    // inverse CDF of Exp(rate) conditioned on [0, R]
                    Some(cut) => -(u * (-rate * cut).exp_m1()).ln_1p() / rate,
                    None => -(1.0 - u).ln() / rate,
                };
                random_direction(rng, out);
                out.iter_mut().for_each(|v| *v *= r);
            }
        }
    }
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        let mut norm2 = 0.0;
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
            norm2 += *v * *v;
        }
        if norm2 > 1e-300 {
            let inv = 1.0 / norm2.sqrt();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}

/// Finite-activity Levy measure `nu = intensity * law(J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyModel {
    intensity: f64,
    jumps: JumpDistribution,
}

impl LevyModel {
    pub fn new(intensity: f64, jumps: JumpDistribution) -> Result<Self> {
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(Error::invalid(format!(
                "jump intensity must be finite and non-negative, got {intensity}"
            )));
        }
        Ok(Self { intensity, jumps })
    }

    /// Model without jumps; `Z` is identically zero.
    pub fn brownian_only(dim: usize) -> Self {
        Self {
            intensity: 0.0,
            jumps: JumpDistribution::Atoms {
                atoms: vec![vec![0.0; dim.max(1)]],
                probabilities: vec![1.0],
            },
        }
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn jumps(&self) -> &JumpDistribution {
        &self.jumps
    }

    pub fn dim(&self) -> usize {
        self.jumps.dim()
    }

    /// `int |z|^2 nu(dz)`.
    pub fn second_moment(&self) -> f64 {
        self.intensity * self.jumps.second_moment()
    }

    /// Drift of the compensated process per unit time, `-intensity * E[J]`.
    pub fn compensator_drift(&self) -> Vec<f64> {
        self.jumps
            .first_moment()
            .into_iter()
            .map(|m| -self.intensity * m)
            .collect()
    }
}

/// `int e^{A|z|} nu(dz)`; an error when the integral diverges.
pub fn exp_moment_check(model: &LevyModel, a: f64) -> Result<f64> {
    if model.intensity == 0.0 {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::invalid("exponent A must be finite and non-negative"));
        }
        return Ok(0.0);
    }
    Ok(model.intensity * model.jumps.exp_moment(a)?)
}

/// One realisation of `(W, Z)` on `[0, T]` resolved on `2^level` cells.
///
/// Grid time `i` is `i * h_min`; jump `j` belongs to cell `(t_i, t_{i+1}]`
/// when `t_i < tau_j <= t_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingPath {
    horizon: f64,
    level: u32,
    dim: usize,
    /// Cumulative Brownian values in quanta, `(cells + 1) * dim`.
    brownian: Vec<i64>,
    jump_times: Vec<f64>,
    /// Jump sizes in quanta, `jumps * dim`.
    jump_sizes: Vec<i64>,
    /// Cumulative jump sums in quanta, `(jumps + 1) * dim`.
    jump_prefix: Vec<i64>,
    /// Compensator increment per finest cell, in quanta.
    compensator_cell: Vec<i64>,
    master_seed: u64,
    path_index: u64,
}

/// Samples the driving path for `(master_seed, path_index)`.
pub fn sample_path(
    model: &LevyModel,
    horizon: f64,
    level: u32,
    master_seed: u64,
    path_index: u64,
) -> Result<DrivingPath> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    if level > MAX_LEVEL {
        return Err(Error::invalid(format!(
            "finest level {level} exceeds the limit {MAX_LEVEL}"
        )));
    }
    if model.intensity < 0.0 {
        return Err(Error::invalid("jump intensity must be non-negative"));
    }
    let dim = model.dim();
    let cells = 1usize << level;
    let h_min = horizon / cells as f64;
    let sd = h_min.sqrt();

    let mut rng = rng::stream(master_seed, path_index, Purpose::Brownian);
    let mut brownian = Vec::with_capacity((cells + 1) * dim);
    brownian.extend(std::iter::repeat_n(0i64, dim));
    for cell in 0..cells {
        for k in 0..dim {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let prev = brownian[cell * dim + k];
            brownian.push(prev + quantize(sd * xi));
        }
    }

    let mean_jumps = model.intensity * horizon;
    let count = if mean_jumps > 0.0 {
        let poisson = Poisson::new(mean_jumps)
            .map_err(|e| Error::invalid(format!("jump count law: {e}")))?;
        let mut rng = rng::stream(master_seed, path_index, Purpose::JumpCount);
        poisson.sample(&mut rng) as usize
    } else {
        0
    };

    let mut rng = rng::stream(master_seed, path_index, Purpose::JumpTimes);
    let mut jump_times: Vec<f64> = (0..count)
        .map(|_| horizon * (1.0 - rng.random::<f64>()))
        .collect();
    jump_times.sort_by(f64::total_cmp);

    let mut rng = rng::stream(master_seed, path_index, Purpose::JumpSizes);
    let mut jump_sizes = Vec::with_capacity(count * dim);
    let mut jump_prefix = Vec::with_capacity((count + 1) * dim);
    jump_prefix.extend(std::iter::repeat_n(0i64, dim));
    let mut buf = vec![0.0; dim];
    for j in 0..count {
        model.jumps.sample_into(&mut rng, &mut buf);
        for k in 0..dim {
            let q = quantize(buf[k]);
            jump_sizes.push(q);
            let prev = jump_prefix[j * dim + k];
            jump_prefix.push(prev + q);
        }
    }

    let compensator_cell = model
        .compensator_drift()
        .iter()
        .map(|r| quantize(r * h_min))
        .collect();

    Ok(DrivingPath {
        horizon,
        level,
        dim,
        brownian,
        jump_times,
        jump_sizes,
        jump_prefix,
        compensator_cell,
        master_seed,
        path_index,
    })
}

impl DrivingPath {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        1usize << self.level
    }

    pub fn h_min(&self) -> f64 {
        self.horizon / self.cells() as f64
    }

    /// Time of grid point `i`.
    #[inline]
    pub fn grid_time(&self, i: usize) -> f64 {
        i as f64 * self.h_min()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    /// Size of jump `j`.
    pub fn jump_size(&self, j: usize) -> Vec<f64> {
        self.jump_sizes[j * self.dim..(j + 1) * self.dim]
            .iter()
            .map(|&q| dequantize(q))
            .collect()
    }

    /// Jump events `(tau, J)` in time order.
    pub fn jump_events(&self) -> impl Iterator<Item = (f64, Vec<f64>)> + '_ {
        (0..self.jump_count()).map(move |j| (self.jump_times[j], self.jump_size(j)))
    }

    /// Effective compensator drift per unit time, `-intensity * E[J]` up to
    /// the storage quantum.
    pub fn compensator_rate(&self) -> Vec<f64> {
        let h = self.h_min();
        self.compensator_cell
            .iter()
            .map(|&q| dequantize(q) / h)
            .collect()
    }

    /// Finest-cell Brownian increments, `cells * dim` values.
    pub fn brownian_increments(&self) -> Vec<f64> {
        (0..self.cells() * self.dim)
            .map(|i| dequantize(self.brownian[i + self.dim] - self.brownian[i]))
            .collect()
    }

    /// Replaces the size of jump `j`, keeping its time.
    pub fn with_jump_size(&self, j: usize, size: &[f64]) -> Result<DrivingPath> {
        if j >= self.jump_count() || size.len() != self.dim {
            return Err(Error::invalid("jump index or size dimension out of range"));
        }
        let mut out = self.clone();
        for k in 0..self.dim {
            out.jump_sizes[j * self.dim + k] = quantize(size[k]);
        }
        for jj in 0..self.jump_count() {
            for k in 0..self.dim {
                out.jump_prefix[(jj + 1) * self.dim + k] =
                    out.jump_prefix[jj * self.dim + k] + out.jump_sizes[jj * self.dim + k];
            }
        }
        Ok(out)
    }

    /// Number of jumps with `tau <= t_i`.
    #[inline]
    fn jumps_upto(&self, i: usize) -> usize {
        let t = self.grid_time(i);
        self.jump_times.partition_point(|&tau| tau <= t)
    }

    /// Grid index of time `t`, if `t` lies on the finest grid.
    pub fn grid_index(&self, t: f64) -> Result<usize> {
        let x = t / self.h_min();
        let i = x.round();
        if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) || (x - i).abs() > 1e-9 * x.max(1.0) {
            return Err(Error::invalid(format!(
                "time {t} is not a grid point of [0, {}] with step {}",
                self.horizon,
                self.h_min()
            )));
        }
        Ok(i as usize)
    }

    /// `W_{t_i}` and `Z_{t_i}` at grid index `i`.
    pub fn values_at(&self, i: usize, w: &mut [f64], z: &mut [f64]) {
        self.increments_between(0, i, w, z);
    }

    /// `(W_{t_j} - W_{t_i}, Z_{t_j} - Z_{t_i})` for grid indices `i <= j`.
    #[inline]
    pub fn increments_between(&self, i: usize, j: usize, dw: &mut [f64], dz: &mut [f64]) {
        debug_assert!(i <= j && j <= self.cells());
        let d = self.dim;
        let (ji, jj) = (self.jumps_upto(i), self.jumps_upto(j));
        let cells = (j - i) as i64;
        for k in 0..d {
            dw[k] = dequantize(self.brownian[j * d + k] - self.brownian[i * d + k]);
            let jumps = self.jump_prefix[jj * d + k] - self.jump_prefix[ji * d + k];
            dz[k] = dequantize(jumps + cells * self.compensator_cell[k]);
        }
    }

    /// `(Delta W, Delta Z)` over `(s, t]`; both times must be grid points.
    pub fn increments(&self, s: f64, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let i = self.grid_index(s)?;
        let j = self.grid_index(t)?;
        if i > j || j > self.cells() {
            return Err(Error::invalid(format!(
                "increment interval ({s}, {t}] is out of range"
            )));
        }
        let mut dw = vec![0.0; self.dim];
        let mut dz = vec![0.0; self.dim];
        self.increments_between(i, j, &mut dw, &mut dz);
        Ok((dw, dz))
    }
}

/// One point of [`moment_lemma_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentLemmaPoint {
    pub h: f64,
    /// Monte Carlo estimate of the expectation divided by `h`.
    pub ratio: f64,
    pub ci_half_width: f64,
}

/// Parameters of the short-time exponential moment
/// `E (s + |W_s| + |Z_s|)^p exp(p k1 s + p k2 |W_s| + p K |Z_s|)` at `s = h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentLemmaParams {
    pub p: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub k: f64,
}

/// Estimates the short-time moment divided by `h` for each step in `h_grid`.
pub fn moment_lemma_check(
    model: &LevyModel,
    params: MomentLemmaParams,
    h_grid: &[f64],
    paths: usize,
    master_seed: u64,
) -> Result<Vec<MomentLemmaPoint>> {
    let MomentLemmaParams {
        p,
        kappa1,
        kappa2,
        k,
    } = params;
    if p < 2.0 {
        return Err(Error::invalid("moment order p must be at least 2"));
    }
    if paths < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    exp_moment_check(model, p * k)?;

    let dim = model.dim();
    let comp = model.compensator_drift();
    let mut out = Vec::with_capacity(h_grid.len());
    let mut jump = vec![0.0; dim];
    for &h in h_grid {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::invalid(format!("step {h} must lie in (0, 1]")));
        }
        let salt = h.to_bits();
        let mut rng = rng::stream_with_salt(master_seed, 0, Purpose::MomentLemma, salt);
        let poisson = if model.intensity() > 0.0 {
            Some(
                Poisson::new(model.intensity() * h)
                    .map_err(|e| Error::invalid(format!("jump count law: {e}")))?,
            )
        } else {
            None
        };
        let sd = h.sqrt();
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..paths {
            let mut w2 = 0.0;
            for _ in 0..dim {
                let xi: f64 = StandardNormal.sample(&mut rng);
                w2 += sd * sd * xi * xi;
            }
            let mut z: Vec<f64> = comp.iter().map(|c| c * h).collect();
            if let Some(poisson) = &poisson {
                let n = poisson.sample(&mut rng) as usize;
                for _ in 0..n {
                    model.jumps().sample_into(&mut rng, &mut jump);
                    z.iter_mut().zip(&jump).for_each(|(a, b)| *a += b);
                }
            }
            let wn = w2.sqrt();
            let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let value = (h + wn + zn).powf(p) * (p * (kappa1 * h + kappa2 * wn + k * zn)).exp() / h;
            sum += value;
            sum2 += value * value;
        }
        let n = paths as f64;
        let mean = sum / n;
        let var = ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0);
        out.push(MomentLemmaPoint {
            h,
            ratio: mean,
            ci_half_width: 1.96 * (var / n).sqrt(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_model(lambda: f64) -> LevyModel {
        LevyModel::new(lambda, JumpDistribution::symmetric_unit()).unwrap()
    }

    #[test]
    fn no_jumps_means_zero_z() {
        let path = sample_path(&unit_model(0.0), 1.0, 6, 1, 0).unwrap();
        assert_eq!(path.jump_count(), 0);
        for i in [0, 1, 17, 64] {
            let (_, z) = path.increments(0.0, path.grid_time(i)).unwrap();
            assert_eq!(z, vec![0.0]);
        }
    }

    #[test]
    fn symmetric_atoms_have_no_compensator() {
        let model = unit_model(3.0);
        assert_eq!(model.compensator_drift(), vec![0.0]);
        let path = sample_path(&model, 1.0, 4, 9, 2).unwrap();
        assert_eq!(path.compensator_rate(), vec![0.0]);
    }

    #[test]
    fn compensator_follows_mean_jump() {
        let law = JumpDistribution::atoms(vec![vec![1.0], vec![3.0]], vec![0.5, 0.5]).unwrap();
        let model = LevyModel::new(2.0, law).unwrap();
        assert_eq!(model.compensator_drift(), vec![-4.0]);
        let path = sample_path(&model, 1.0, 8, 1, 0).unwrap();
        assert!((path.compensator_rate()[0] + 4.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(LevyModel::new(-1.0, JumpDistribution::symmetric_unit()).is_err());
        assert!(sample_path(&unit_model(1.0), 1.0, 31, 0, 0).is_err());
        assert!(sample_path(&unit_model(1.0), 0.0, 3, 0, 0).is_err());
        assert!(JumpDistribution::atoms(vec![vec![1.0]], vec![0.9]).is_err());
    }

    #[test]
    fn empty_interval_is_zero() {
        let path = sample_path(&unit_model(5.0), 1.0, 5, 3, 1).unwrap();
        let (w, z) = path.increments(0.25, 0.25).unwrap();
        assert_eq!((w, z), (vec![0.0], vec![0.0]));
    }

    #[test]
    fn single_jump_shows_up_in_its_interval() {
        let model = unit_model(1.0);
        let path = (0..200)
            .map(|i| sample_path(&model, 1.0, 6, 11, i).unwrap())
            .find(|p| p.jump_count() == 1)
            .expect("some path has exactly one jump");
        let tau = path.jump_times()[0];
        let cell = (tau / path.h_min()).ceil() as usize;
        let (_, dz) = path
            .increments(path.grid_time(cell - 1), path.grid_time(cell))
            .unwrap();
        assert_eq!(dz, path.jump_size(0));
    }

    #[test]
    fn off_grid_times_are_rejected() {
        let path = sample_path(&unit_model(1.0), 1.0, 3, 0, 0).unwrap();
        assert!(path.increments(0.1, 0.5).is_err());
        assert!(path.increments(0.5, 0.25).is_err());
        assert!(path.increments(0.0, 2.0).is_err());
    }

    #[test]
    fn exp_moment_closed_forms() {
        assert_eq!(exp_moment_check(&unit_model(1.5), 0.0).unwrap(), 1.5);
        let e = exp_moment_check(&unit_model(1.0), 1.0).unwrap();
        assert!((e - std::f64::consts::E).abs() < 1e-12);
        let exp = JumpDistribution::two_sided_exponential(1, 3.0, None).unwrap();
        assert!(matches!(
            exp.exp_moment(3.5),
            Err(Error::MomentDivergence { .. })
        ));
        assert!((exp.exp_moment(1.0).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn exp_moment_matches_quadrature_oracle() {
        // truncated Laplace(rate 3) on [-2, 2], A = 10, by composite Simpson
        let law = JumpDistribution::two_sided_exponential(1, 3.0, Some(2.0)).unwrap();
        let n = 20_000;
        let hstep = 2.0 / n as f64;
        let dens = |r: f64| 3.0 * (-3.0 * r).exp() / (1.0 - (-6.0f64).exp());
        let f = |r: f64| (10.0 * r).exp() * dens(r);
        let mut s = f(0.0) + f(2.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * hstep);
        }
        let oracle = s * hstep / 3.0;
        let v = law.exp_moment(10.0).unwrap();
        assert!(v.is_finite());
        assert!((v - oracle).abs() < 1e-9 * oracle, "{v} vs {oracle}");
    }

    #[test]
    fn second_moments_match_quadrature() {
        let annulus = JumpDistribution::uniform_annulus(2, 0.5, 1.0).unwrap();
        // density of |J| is 2r / (1 - 0.25) on [0.5, 1]
        let oracle = quadrature::integrate(|r| r * r * 2.0 * r / 0.75, 0.5, 1.0, 16);
        assert!((annulus.second_moment() - oracle).abs() < 1e-12);

        let exp = JumpDistribution::two_sided_exponential(1, 3.0, Some(2.0)).unwrap();
        let mass = 1.0 - (-6.0f64).exp();
        let oracle = quadrature::integrate(|r| r * r * 3.0 * (-3.0 * r).exp() / mass, 0.0, 2.0, 64);
        assert!((exp.second_moment() - oracle).abs() < 1e-10);
    }

    #[test]
    fn box_exp_moment_in_two_dimensions() {
        let law = JumpDistribution::uniform_box(2, 1.0).unwrap();
        // midpoint rule oracle on a fine grid
        let n = 1000;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = (i as f64 + 0.5) / n as f64;
                let y = (j as f64 + 0.5) / n as f64;
                s += (0.7 * (x * x + y * y).sqrt()).exp();
            }
        }
        let oracle = s / (n * n) as f64;
        assert!((law.exp_moment(0.7).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn moment_lemma_gaussian_only() {
        // lambda = 0, kappas zero, p = 2: E(h + |W_h|)^2 / h = h + 2 sqrt(2h/pi) + 1
        let model = LevyModel::brownian_only(1);
        let params = MomentLemmaParams {
            p: 2.0,
            kappa1: 0.0,
            kappa2: 0.0,
            k: 0.0,
        };
        let hs = [1.0 / 64.0, 1.0 / 1024.0];
        let pts = moment_lemma_check(&model, params, &hs, 200_000, 5).unwrap();
        for pt in &pts {
            let h = pt.h;
            let exact = h + 2.0 * (2.0 * h / std::f64::consts::PI).sqrt() + 1.0;
            assert!(
                (pt.ratio - exact).abs() < pt.ci_half_width * 2.0,
                "{} vs {exact}",
                pt.ratio
            );
        }
        let again = moment_lemma_check(&model, params, &[hs[0], hs[0]], 1000, 5).unwrap();
        assert_eq!(again[0].ratio, again[1].ratio);
    }

    #[test]
    fn moment_lemma_requires_finite_exp_moment() {
        let law = JumpDistribution::two_sided_exponential(1, 1.0, None).unwrap();
        let model = LevyModel::new(1.0, law).unwrap();
        let params = MomentLemmaParams {
            p: 2.0,
            kappa1: 0.0,
            kappa2: 0.0,
            k: 1.0,
        };
        assert!(matches!(
            moment_lemma_check(&model, params, &[0.1], 10, 0),
            Err(Error::MomentDivergence { .. })
        ));
    }
}
