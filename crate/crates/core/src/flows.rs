//! Marcus jump flow `phi^z`, the one-step map `Psi`, derivative-norm probes,
//! and the flow-estimate property suites.
//!
//! `phi^z(x)` is the time-1 value of `dphi/du = c(phi) z`, `phi(0) = x`, and
//! `Psi(x; tau, w, z)` the time-1 value of
//! `dpsi/du = a(psi) tau + b(psi) w + c(psi) z`, `psi(0) = x`.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::coefficients::{fd_jacobian, CoefficientSet};
use crate::error::{Error, Result};
use crate::ode::{OdeConfig, Rk4};
use crate::rng::{self, Purpose};

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Reusable evaluator of `Psi` for one coefficient set.
pub struct PsiStepper<'a> {
    coeffs: &'a CoefficientSet,
    cfg: OdeConfig,
    rk: Rk4,
    abuf: Vec<f64>,
    bbuf: Vec<f64>,
    cbuf: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> PsiStepper<'a> {
    pub fn new(coeffs: &'a CoefficientSet, cfg: OdeConfig) -> Self {
        let d = coeffs.dim();
        let m = coeffs.noise_dim();
        Self {
            coeffs,
            cfg,
            rk: Rk4::new(d),
            abuf: vec![0.0; d],
            bbuf: vec![0.0; d * m],
            cbuf: vec![0.0; d * m],
            scratch: vec![0.0; d],
        }
    }

    pub fn config(&self) -> &OdeConfig {
        &self.cfg
    }

    /// Substep count used for `Psi(.; tau, w, z)`.
    pub fn substeps(&self, tau: f64, w: &[f64], z: &[f64]) -> usize {
        let n = self.coeffs.norms();
        self.cfg
            .substeps(tau.abs() * n.drift + norm(w) * n.diffusion + norm(z) * n.jump)
    }

    /// Writes `Psi(x; tau, w, z)` into `out`.
    pub fn psi(&mut self, x: &[f64], tau: f64, w: &[f64], z: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.substeps(tau, w, z);
        self.psi_with_substeps(x, tau, w, z, n, out, |_| {})
    }

    /// `Psi` with an explicit substep count over `u in [0, 1]`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn psi_with_substeps<G: FnMut(&[f64])>(
        &mut self,
        x: &[f64],
        tau: f64,
        w: &[f64],
        z: &[f64],
        substeps: usize,
        out: &mut [f64],
        on_node: G,
    ) -> Result<()> {
        self.segment(x, tau, w, z, 0.0, 1.0, substeps, out, on_node)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn segment<G: FnMut(&[f64])>(
        &mut self,
        x: &[f64],
        tau: f64,
        w: &[f64],
        z: &[f64],
        u0: f64,
        u1: f64,
        substeps: usize,
        out: &mut [f64],
        on_node: G,
    ) -> Result<()> {
        out.copy_from_slice(x);
        let use_a = tau != 0.0 && self.coeffs.has_drift();
        let use_b = self.coeffs.has_diffusion() && w.iter().any(|&v| v != 0.0);
        let use_c = self.coeffs.has_jump() && z.iter().any(|&v| v != 0.0);
        if !(use_a || use_b || use_c) {
            return Ok(());
        }
        let coeffs = self.coeffs;
        let m = coeffs.noise_dim();
        let (abuf, bbuf, cbuf) = (&mut self.abuf, &mut self.bbuf, &mut self.cbuf);
        let mut field = |y: &[f64], o: &mut [f64]| {
            o.fill(0.0);
            if use_a {
                coeffs.drift(y, abuf);
                for (oi, ai) in o.iter_mut().zip(abuf.iter()) {
                    *oi += ai * tau;
                }
            }
            if use_b {
                coeffs.diffusion(y, bbuf);
                for (i, oi) in o.iter_mut().enumerate() {
                    let row = &bbuf[i * m..(i + 1) * m];
                    *oi += row.iter().zip(w).map(|(b, wj)| b * wj).sum::<f64>();
                }
            }
            if use_c {
                coeffs.jump(y, cbuf);
                for (i, oi) in o.iter_mut().enumerate() {
                    let row = &cbuf[i * m..(i + 1) * m];
                    *oi += row.iter().zip(z).map(|(c, zj)| c * zj).sum::<f64>();
                }
            }
        };
        self.rk.integrate(&mut field, out, u0, u1, substeps, on_node)
    }

    /// `Psi` together with a Richardson estimate of its integration error
    /// when the config asks for one. The returned state is the `2n` result
    /// in that case.
    pub fn psi_estimate(&mut self, x: &[f64], tau: f64, w: &[f64], z: &[f64]) -> Result<FlowValue> {
        let n = self.substeps(tau, w, z);
        let mut state = vec![0.0; x.len()];
        self.psi_with_substeps(x, tau, w, z, n, &mut state, |_| {})?;
        if !self.cfg.richardson {
            return Ok(FlowValue {
                state,
                error_estimate: None,
            });
        }
        self.scratch.copy_from_slice(&state);
        self.psi_with_substeps(x, tau, w, z, 2 * n, &mut state, |_| {})?;
        let diff = self
            .scratch
            .iter()
            .zip(&state)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Ok(FlowValue {
            state,
            error_estimate: Some(diff / 15.0),
        })
    }
}

/// A flow value with an optional integration-error estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowValue {
    pub state: Vec<f64>,
    pub error_estimate: Option<f64>,
}

fn check_dims(coeffs: &CoefficientSet, x: &[f64], w: Option<&[f64]>, z: &[f64]) -> Result<()> {
    if x.len() != coeffs.dim()
        || z.len() != coeffs.noise_dim()
        || w.is_some_and(|w| w.len() != coeffs.noise_dim())
    {
        return Err(Error::invalid(format!(
            "dimension mismatch: coefficients are d = {}, m = {}",
            coeffs.dim(),
            coeffs.noise_dim()
        )));
    }
    Ok(())
}

/// Marcus flow `phi^z(x)`.
pub fn marcus_flow(coeffs: &CoefficientSet, z: &[f64], x: &[f64], cfg: &OdeConfig) -> Result<Vec<f64>> {
    check_dims(coeffs, x, None, z)?;
    let zero = vec![0.0; coeffs.noise_dim()];
    let mut stepper = PsiStepper::new(coeffs, *cfg);
    let mut out = vec![0.0; x.len()];
    stepper.psi(x, 0.0, &zero, z, &mut out)?;
    Ok(out)
}

/// `phi^z(u1; y)` started from `y = phi^z(u0; x)`, integrated over
/// `[u0, u1]` with a fixed number of substeps.
pub fn marcus_flow_segment(
    coeffs: &CoefficientSet,
    z: &[f64],
    x: &[f64],
    u0: f64,
    u1: f64,
    substeps: usize,
) -> Result<Vec<f64>> {
    check_dims(coeffs, x, None, z)?;
    let zero = vec![0.0; coeffs.noise_dim()];
    let mut stepper = PsiStepper::new(coeffs, OdeConfig::default());
    let mut out = vec![0.0; x.len()];
    stepper.segment(x, 0.0, &zero, z, u0, u1, substeps.max(1), &mut out, |_| {})?;
    Ok(out)
}

/// `phi^z(x)` with an explicit substep count.
pub fn marcus_flow_substeps(
    coeffs: &CoefficientSet,
    z: &[f64],
    x: &[f64],
    substeps: usize,
) -> Result<Vec<f64>> {
    marcus_flow_segment(coeffs, z, x, 0.0, 1.0, substeps)
}

/// One-step map `Psi(x; tau, w, z)`.
pub fn psi_map(
    coeffs: &CoefficientSet,
    x: &[f64],
    tau: f64,
    w: &[f64],
    z: &[f64],
    cfg: &OdeConfig,
) -> Result<Vec<f64>> {
    check_dims(coeffs, x, Some(w), z)?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau must be finite and non-negative"));
    }
    let mut stepper = PsiStepper::new(coeffs, *cfg);
    let mut out = vec![0.0; x.len()];
    stepper.psi(x, tau, w, z, &mut out)?;
    Ok(out)
}

/// `Psi` with an explicit substep count.
pub fn psi_map_substeps(
    coeffs: &CoefficientSet,
    x: &[f64],
    tau: f64,
    w: &[f64],
    z: &[f64],
    substeps: usize,
) -> Result<Vec<f64>> {
    check_dims(coeffs, x, Some(w), z)?;
    let mut stepper = PsiStepper::new(coeffs, OdeConfig::default());
    let mut out = vec![0.0; x.len()];
    stepper.psi_with_substeps(x, tau, w, z, substeps.max(1), &mut out, |_| {})?;
    Ok(out)
}

/// Derivative-norm probes and the exponential constants derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantEstimates {
    pub norm_da: f64,
    pub norm_db: f64,
    pub norm_dc: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub k: f64,
}

/// Largest singular value of a square matrix (row-major).
fn operator_norm(a: &[f64], d: usize) -> f64 {
    if d == 1 {
        return a[0].abs();
    }
    // power iteration on A^T A
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut av = vec![0.0; d];
    let mut lambda = 0.0;
    for _ in 0..200 {
        for i in 0..d {
            av[i] = (0..d).map(|k| a[i * d + k] * v[k]).sum();
        }
        let mut next = vec![0.0; d];
        for k in 0..d {
            next[k] = (0..d).map(|i| a[i * d + k] * av[i]).sum();
        }
        let n = norm(&next);
        if n == 0.0 {
            return 0.0;
        }
        let done = (n - lambda).abs() <= 1e-14 * n;
        lambda = n;
        v = next.into_iter().map(|x| x / n).collect();
        if done {
            break;
        }
    }
    lambda.sqrt()
}

/// Unit directions used to take the sup over `|w| <= 1`.
fn unit_directions(m: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        dirs.push(e);
    }
    if m == 2 {
        for k in 0..128 {
            let t = std::f64::consts::PI * k as f64 / 128.0;
            dirs.push(vec![t.cos(), t.sin()]);
        }
    } else if m > 2 {
        let mut rng = rng::stream(0, m as u64, Purpose::Probe);
        for _ in 0..256 * m {
            let mut v: Vec<f64> = (0..m)
                .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
                .collect();
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            dirs.push(v);
        }
    }
    dirs
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Probe points in the ball of radius `radius`: an even grid in one
/// dimension, Halton points otherwise. The origin is always included.
pub fn probe_points(dim: usize, radius: f64, count: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        let n = count.max(2);
        let mut pts: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![-radius + 2.0 * radius * i as f64 / (n - 1) as f64])
            .collect();
        pts.push(vec![0.0]);
        return pts;
    }
    const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    let mut pts = vec![vec![0.0; dim]];
    let mut i = 1u64;
    while pts.len() < count {
        let p: Vec<f64> = (0..dim)
            .map(|k| radius * (2.0 * radical_inverse(i, PRIMES[k % PRIMES.len()]) - 1.0))
            .collect();
        if norm(&p) <= radius {
            pts.push(p);
        }
        i += 1;
    }
    pts
}

fn field_norm(
    field: &dyn Fn(&[f64], &mut [f64]),
    cols: usize,
    probes: &[Vec<f64>],
    dirs: &[Vec<f64>],
) -> f64 {
    let d = probes[0].len();
    let mut jac = vec![0.0; cols * d * d];
    let mut mat = vec![0.0; d * d];
    let mut best = 0.0f64;
    for x in probes {
        fd_jacobian(field, x, cols, &mut jac);
        for w in dirs {
            mat.fill(0.0);
            for (j, wj) in w.iter().enumerate() {
                for (e, jv) in mat.iter_mut().zip(&jac[j * d * d..(j + 1) * d * d]) {
                    *e += wj * jv;
                }
            }
            best = best.max(operator_norm(&mat, d));
        }
    }
    best
}

/// Probes `||Da||`, `||Db||`, `||Dc||` by central differences over
/// `probe_count` points in the ball of radius `probe_radius` and sets each
/// constant to `5 * norm * (1 + margin)`. The probe sup is a lower bound
/// of the true sup.
pub fn estimate_constants(
    coeffs: &CoefficientSet,
    probe_radius: f64,
    probe_count: usize,
    margin: f64,
) -> ConstantEstimates {
    let d = coeffs.dim();
    let m = coeffs.noise_dim();
    let probes = probe_points(d, probe_radius, probe_count);
    let dirs_m = unit_directions(m);
    let dirs_1 = vec![vec![1.0]];

    let norm_da = if coeffs.has_drift() {
        field_norm(&|x, o| coeffs.drift(x, o), 1, &probes, &dirs_1)
    } else {
        0.0
    };
    let norm_db = if coeffs.has_diffusion() {
        field_norm(&|x, o| coeffs.diffusion(x, o), m, &probes, &dirs_m)
    } else {
        0.0
    };
    let norm_dc = if coeffs.has_jump() {
        field_norm(&|x, o| coeffs.jump(x, o), m, &probes, &dirs_m)
    } else {
        0.0
    };
    let scale = 5.0 * (1.0 + margin);
    ConstantEstimates {
        norm_da,
        norm_db,
        norm_dc,
        kappa1: scale * norm_da,
        kappa2: scale * norm_db,
        k: scale * norm_dc,
    }
}

/// Fitted constant of one `<=_C` estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedConstant {
    pub item: u8,
    /// Smallest `C` valid on all samples.
    pub constant: f64,
    /// The same fit on the first half of the samples.
    pub half_sample_constant: f64,
}

impl FittedConstant {
    /// `constant / half_sample_constant`, 1 when both vanish.
    pub fn doubling_ratio(&self) -> f64 {
        if self.half_sample_constant == 0.0 {
            if self.constant == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            self.constant / self.half_sample_constant
        }
    }

    pub fn is_stable(&self) -> bool {
        self.constant.is_finite() && self.doubling_ratio() < 1.5
    }
}

struct ConstantFit {
    item: u8,
    half: usize,
    seen: usize,
    best: f64,
    best_half: f64,
}

impl ConstantFit {
    fn new(item: u8, total: usize) -> Self {
        Self {
            item,
            half: total / 2,
            seen: 0,
            best: 0.0,
            best_half: 0.0,
        }
    }

    fn push(&mut self, lhs: f64, rhs: f64) {
        if rhs > 0.0 {
            let c = lhs / rhs;
            self.best = self.best.max(c);
            if self.seen < self.half {
                self.best_half = self.best_half.max(c);
            }
        }
        self.seen += 1;
    }

    fn finish(self) -> FittedConstant {
        FittedConstant {
            item: self.item,
            constant: self.best,
            half_sample_constant: self.best_half,
        }
    }
}

fn sample_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng))
        .collect();
    let n = norm(&v).max(1e-300);
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    v.iter_mut().for_each(|x| *x *= r / n);
    v
}

/// Relative slack allowed on the Lipschitz bound (3).
pub const LIPSCHITZ_SLACK: f64 = 1e-6;

/// Outcome of [`lemma_phi_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhiLemmaReport {
    pub samples: usize,
    pub norm_dc: f64,
    /// Samples where `|phi^z(x) - phi^z(y)| > e^{||Dc|| |z|} |x - y| (1 + slack)`.
    pub lipschitz_violations: usize,
    /// Largest observed `|phi^z(x) - phi^z(y)| / (e^{||Dc|| |z|} |x - y|)`.
    pub worst_lipschitz_ratio: f64,
    /// Items (1), (2), (4), (5), (6).
    pub constants: Vec<FittedConstant>,
    /// Log-log slope of `|phi^z(x) - x - c(x) z|` against `|z|` for small
    /// `|z|`; `None` when the residual vanishes identically.
    pub small_z_slope: Option<f64>,
}

impl PhiLemmaReport {
    pub fn constants_stable(&self) -> bool {
        self.constants.iter().all(FittedConstant::is_stable)
    }
}

/// Least-squares slope of `ys` against `xs`.
pub(crate) fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn mat_vec(mat: &[f64], v: &[f64], out: &mut [f64]) {
    let m = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = mat[i * m..(i + 1) * m].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// Checks the Marcus-flow estimates on random `(x, y, z)` with `|x|, |y| <=
/// x_radius` and `|z| <= z_radius`.
pub fn lemma_phi_suite(
    coeffs: &CoefficientSet,
    sample_count: usize,
    z_radius: f64,
    x_radius: f64,
    seed: u64,
    cfg: &OdeConfig,
) -> Result<PhiLemmaReport> {
    if sample_count < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let d = coeffs.dim();
    let m = coeffs.noise_dim();
    let norm_dc = coeffs.norms().jump;
    let zero_w = vec![0.0; m];
    let mut stepper = PsiStepper::new(coeffs, *cfg);
    let mut rng = rng::stream(seed, 0, Purpose::LemmaSamples);

    let mut fits: Vec<ConstantFit> = [1u8, 2, 4, 5, 6]
        .iter()
        .map(|&i| ConstantFit::new(i, sample_count))
        .collect();
    let mut violations = 0;
    let mut worst = 0.0f64;

    let (mut fx, mut fy) = (vec![0.0; d], vec![0.0; d]);
    let (mut cx, mut cy) = (vec![0.0; d * m], vec![0.0; d * m]);
    let (mut cxz, mut cyz) = (vec![0.0; d], vec![0.0; d]);
    let mut bases = Vec::new();
    for _ in 0..sample_count {
        let x = sample_ball(&mut rng, d, x_radius);
        let y = sample_ball(&mut rng, d, x_radius);
        let z = sample_ball(&mut rng, m, z_radius);
        let zn = norm(&z);
        let growth = (norm_dc * zn).exp();

        let n = stepper.substeps(0.0, &zero_w, &z);
        let mut path_sup = norm(&x);
        stepper.psi_with_substeps(&x, 0.0, &zero_w, &z, n, &mut fx, |s| {
            path_sup = path_sup.max(norm(s))
        })?;
        stepper.psi_with_substeps(&y, 0.0, &zero_w, &z, n, &mut fy, |_| {})?;
        coeffs.jump(&x, &mut cx);
        coeffs.jump(&y, &mut cy);
        mat_vec(&cx, &z, &mut cxz);
        mat_vec(&cy, &z, &mut cyz);

        let dxy = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        let dphi: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
        let disp_x: Vec<f64> = fx.iter().zip(&x).map(|(a, b)| a - b).collect();
        let disp_y: Vec<f64> = fy.iter().zip(&y).map(|(a, b)| a - b).collect();
        let res_x: Vec<f64> = disp_x.iter().zip(&cxz).map(|(a, b)| a - b).collect();
        let res_y: Vec<f64> = disp_y.iter().zip(&cyz).map(|(a, b)| a - b).collect();
        let xn = norm(&x);

        // (3): constant 1
        if dxy > 0.0 {
            let ratio = norm(&dphi) / (growth * dxy);
            worst = worst.max(ratio);
            if ratio > 1.0 + LIPSCHITZ_SLACK {
                violations += 1;
            }
        }
        fits[0].push(path_sup, (xn + zn) * growth);
        fits[1].push(norm(&disp_x), zn * growth * (1.0 + xn));
        let d4: Vec<f64> = disp_x.iter().zip(&disp_y).map(|(a, b)| a - b).collect();
        fits[2].push(norm(&d4), zn * growth * dxy);
        fits[3].push(norm(&res_x), zn * zn * growth * (1.0 + xn));
        let d6: Vec<f64> = res_x.iter().zip(&res_y).map(|(a, b)| a - b).collect();
        fits[4].push(norm(&d6), zn * zn * growth * dxy);

        if bases.len() < 16 {
            bases.push((x, z));
        }
    }

    let small_z_slope = small_z_residual_slope(coeffs, &mut stepper, &bases, z_radius)?;
    Ok(PhiLemmaReport {
        samples: sample_count,
        norm_dc,
        lipschitz_violations: violations,
        worst_lipschitz_ratio: worst,
        constants: fits.into_iter().map(ConstantFit::finish).collect(),
        small_z_slope,
    })
}

fn small_z_residual_slope(
    coeffs: &CoefficientSet,
    stepper: &mut PsiStepper<'_>,
    bases: &[(Vec<f64>, Vec<f64>)],
    z_radius: f64,
) -> Result<Option<f64>> {
    let d = coeffs.dim();
    let m = coeffs.noise_dim();
    let zero_w = vec![0.0; m];
    let mut out = vec![0.0; d];
    let mut cmat = vec![0.0; d * m];
    let mut cz = vec![0.0; d];
    let (mut logs, mut logr) = (Vec::new(), Vec::new());
    let mut all_zero = true;
    for k in 4..=11 {
        let scale = z_radius * 0.5f64.powi(k);
        let (mut total, mut floor) = (0.0, 0.0);
        for (x, dir) in bases {
            let dn = norm(dir);
            if dn == 0.0 {
                continue;
            }
            let z: Vec<f64> = dir.iter().map(|v| v * scale / dn).collect();
            let n = stepper.substeps(0.0, &zero_w, &z);
            stepper.psi_with_substeps(x, 0.0, &zero_w, &z, n, &mut out, |_| {})?;
            coeffs.jump(x, &mut cmat);
            mat_vec(&cmat, &z, &mut cz);
            let res: Vec<f64> = (0..d).map(|i| out[i] - x[i] - cz[i]).collect();
            total += norm(&res);
            floor += 64.0 * f64::EPSILON * (norm(x) + norm(&cz) * n as f64);
        }
        if total > floor {
            all_zero = false;
        }
        logs.push(scale.ln());
        logr.push(total.max(f64::MIN_POSITIVE).ln());
    }
    if all_zero {
        return Ok(None);
    }
    Ok(Some(ls_slope(&logs, &logr)))
}

/// Sampling radii for [`lemma_psi_suite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiRadii {
    pub x: f64,
    pub tau: f64,
    pub w: f64,
    pub z: f64,
}

/// Outcome of [`lemma_psi_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct PsiLemmaReport {
    pub samples: usize,
    /// Violations of
    /// `|Psi(x) - Psi(y)| <= e^{||Da|| tau + ||Db|| |w| + ||Dc|| |z|} |x - y| (1 + slack)`.
    pub lipschitz_violations: usize,
    pub worst_lipschitz_ratio: f64,
    /// Items (1) and (2).
    pub constants: Vec<FittedConstant>,
}

impl PsiLemmaReport {
    pub fn constants_stable(&self) -> bool {
        self.constants.iter().all(FittedConstant::is_stable)
    }
}

/// Checks the one-step map estimates on random `(x, y, tau, w, z)`.
pub fn lemma_psi_suite(
    coeffs: &CoefficientSet,
    sample_count: usize,
    radii: PsiRadii,
    seed: u64,
    cfg: &OdeConfig,
) -> Result<PsiLemmaReport> {
    if sample_count < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let d = coeffs.dim();
    let m = coeffs.noise_dim();
    let norms = coeffs.norms();
    let mut stepper = PsiStepper::new(coeffs, *cfg);
    let mut rng = rng::stream(seed, 1, Purpose::LemmaSamples);
    let mut fits = [
        ConstantFit::new(1, sample_count),
        ConstantFit::new(2, sample_count),
    ];
    let mut violations = 0;
    let mut worst = 0.0f64;
    let (mut px, mut py) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..sample_count {
        let x = sample_ball(&mut rng, d, radii.x);
        let y = sample_ball(&mut rng, d, radii.x);
        let tau = radii.tau * rng.random::<f64>();
        let w = sample_ball(&mut rng, m, radii.w);
        let z = sample_ball(&mut rng, m, radii.z);
        let (wn, zn) = (norm(&w), norm(&z));
        let growth = (norms.drift * tau + norms.diffusion * wn + norms.jump * zn).exp();

        stepper.psi(&x, tau, &w, &z, &mut px)?;
        stepper.psi(&y, tau, &w, &z, &mut py)?;
        let dxy = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        let dpsi = norm(&px.iter().zip(&py).map(|(a, b)| a - b).collect::<Vec<_>>());
        if dxy > 0.0 {
            let ratio = dpsi / (growth * dxy);
            worst = worst.max(ratio);
            if ratio > 1.0 + LIPSCHITZ_SLACK {
                violations += 1;
            }
        }
        let xn = norm(&x);
        fits[0].push(norm(&px), (1.0 + xn) * growth);
        let disp = norm(&px.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        fits[1].push(disp, (1.0 + xn) * (tau + wn + zn) * growth);
    }
    Ok(PsiLemmaReport {
        samples: sample_count,
        lipschitz_violations: violations,
        worst_lipschitz_ratio: worst,
        constants: fits.into_iter().map(ConstantFit::finish).collect(),
    })
}
