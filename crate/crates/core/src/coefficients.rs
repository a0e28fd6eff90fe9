//! Coefficient sets `(a, b, c)` of the Marcus SDE
//! `dX = a(X) dt + b(X) o dW + c(X) <> dZ` and the built-in registry.
//!
//! Matrix-valued maps write `d x m` row-major output: entry `(i, j)` lives
//! at `i * m + j`. Jacobians of matrix maps are stored column block by column
//! block: `d/dx_k` of entry `(i, j)` lives at `(j * d + i) * d + k`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};

/// A map `R^d -> R^n` writing into a caller-provided buffer.
pub type PointMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Sup-norm bounds of the coefficient derivatives,
/// `||Dc|| = sup_x sup_{|z| <= 1} ||D(c(x) z)||` and likewise for `a`, `b`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerivativeNorms {
    pub drift: f64,
    pub diffusion: f64,
    pub jump: f64,
}

#[derive(Clone)]
pub struct CoefficientSet {
    name: String,
    dim: usize,
    noise_dim: usize,
    drift: Option<PointMap>,
    diffusion: Option<PointMap>,
    jump: Option<PointMap>,
    drift_jacobian: Option<PointMap>,
    diffusion_jacobian: Option<PointMap>,
    jump_jacobian: Option<PointMap>,
    norms: Arc<OnceLock<DerivativeNorms>>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("drift", &self.drift.is_some())
            .field("diffusion", &self.diffusion.is_some())
            .field("jump", &self.jump.is_some())
            .field("norms", &self.norms.get())
            .finish()
    }
}

fn map<F>(f: F) -> Option<PointMap>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
{
    Some(Arc::new(f))
}

impl CoefficientSet {
    /// All-zero coefficients on `R^dim` driven by `noise_dim`-dimensional noise.
    pub fn new(name: impl Into<String>, dim: usize, noise_dim: usize) -> Self {
        assert!(dim > 0 && noise_dim > 0, "dimensions must be positive");
        Self {
            name: name.into(),
            dim,
            noise_dim,
            drift: None,
            diffusion: None,
            jump: None,
            drift_jacobian: None,
            diffusion_jacobian: None,
            jump_jacobian: None,
            norms: Arc::new(OnceLock::new()),
        }
    }

    pub fn with_drift<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.drift = map(f);
        self.norms = Arc::new(OnceLock::new());
        self
    }

    pub fn with_diffusion<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.diffusion = map(f);
        self.norms = Arc::new(OnceLock::new());
        self
    }

    pub fn with_jump<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.jump = map(f);
        self.norms = Arc::new(OnceLock::new());
        self
    }

    pub fn with_drift_jacobian<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.drift_jacobian = map(f);
        self
    }

    pub fn with_diffusion_jacobian<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.diffusion_jacobian = map(f);
        self
    }

    pub fn with_jump_jacobian<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.jump_jacobian = map(f);
        self
    }

    /// Declares exact derivative norms instead of probing for them.
    pub fn with_norms(self, norms: DerivativeNorms) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(norms);
        Self {
            norms: Arc::new(cell),
            ..self
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn has_drift(&self) -> bool {
        self.drift.is_some()
    }

    pub fn has_diffusion(&self) -> bool {
        self.diffusion.is_some()
    }

    pub fn has_jump(&self) -> bool {
        self.jump.is_some()
    }

    /// Derivative norms: declared ones, or a probe estimate over the ball of
    /// radius 8 computed on first use.
    pub fn norms(&self) -> DerivativeNorms {
        *self.norms.get_or_init(|| {
            let est = crate::flows::estimate_constants(self, 8.0, 512, 0.0);
            DerivativeNorms {
                drift: est.norm_da,
                diffusion: est.norm_db,
                jump: est.norm_dc,
            }
        })
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        match &self.drift {
            Some(f) => f(x, out),
            None => out.fill(0.0),
        }
    }

    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        match &self.diffusion {
            Some(f) => f(x, out),
            None => out.fill(0.0),
        }
    }

    pub fn jump(&self, x: &[f64], out: &mut [f64]) {
        match &self.jump {
            Some(f) => f(x, out),
            None => out.fill(0.0),
        }
    }

    /// Worst relative mismatch between the analytic Jacobians and central
    /// differences over `probes`. `None` when no Jacobian is declared.
    pub fn jacobian_mismatch(&self, probes: &[Vec<f64>]) -> Option<f64> {
        let d = self.dim;
        let m = self.noise_dim;
        let fields: [(Option<&PointMap>, Option<&PointMap>, usize); 3] = [
            (self.drift.as_ref(), self.drift_jacobian.as_ref(), 1),
            (self.diffusion.as_ref(), self.diffusion_jacobian.as_ref(), m),
            (self.jump.as_ref(), self.jump_jacobian.as_ref(), m),
        ];
        let mut worst: Option<f64> = None;
        for (field, jac, cols) in fields {
            let (Some(field), Some(jac)) = (field, jac) else {
                continue;
            };
            let mut analytic = vec![0.0; cols * d * d];
            let mut fd = vec![0.0; cols * d * d];
            for x in probes {
                jac(x, &mut analytic);
                fd_jacobian(field.as_ref(), x, cols, &mut fd);
                let scale = analytic.iter().fold(1e-8f64, |acc, v| acc.max(v.abs()));
                let err = analytic
                    .iter()
                    .zip(&fd)
                    .map(|(a, b)| (a - b).abs() / scale)
                    .fold(0.0, f64::max);
                worst = Some(worst.map_or(err, |w: f64| w.max(err)));
            }
        }
        worst
    }
}

/// Central-difference Jacobian of a `d x cols` field in the column block layout.
pub(crate) fn fd_jacobian(field: &dyn Fn(&[f64], &mut [f64]), x: &[f64], cols: usize, out: &mut [f64]) {
    let d = x.len();
    let mut xp = x.to_vec();
    let mut plus = vec![0.0; d * cols];
    let mut minus = vec![0.0; d * cols];
    for k in 0..d {
        let step = 1e-5 * x[k].abs().max(1.0);
        xp[k] = x[k] + step;
        field(&xp, &mut plus);
        xp[k] = x[k] - step;
        field(&xp, &mut minus);
        xp[k] = x[k];
        for i in 0..d {
            for j in 0..cols {
                out[(j * d + i) * d + k] = (plus[i * cols + j] - minus[i * cols + j]) / (2.0 * step);
            }
        }
    }
}

/// Names accepted by [`from_registry`].
pub const REGISTRY: &[&str] = &[
    "zero",
    "scalar_linear",
    "rotation",
    "sine",
    "bounded_smooth",
    "bounded_smooth_2d",
];

struct Params<'a> {
    name: &'a str,
    values: &'a BTreeMap<String, f64>,
}

impl Params<'_> {
    fn check(&self, allowed: &[&str]) -> Result<()> {
        for key in self.values.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::config(
                    format!("coefficients.params.{key}"),
                    format!(
                        "unknown parameter for `{}` (expected one of {allowed:?})",
                        self.name
                    ),
                ));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.values.get(key).copied().unwrap_or(default);
        if !v.is_finite() {
            return Err(Error::config(
                format!("coefficients.params.{key}"),
                "must be finite",
            ));
        }
        Ok(v)
    }
}

/// Builds a named coefficient family with the given parameters.
///
/// | name | d, m | a | b | c |
/// |------|------|---|---|---|
/// | `zero` | `dim`, `noise_dim` | 0 | 0 | 0 |
/// | `scalar_linear` | 1, 1 | `alpha x` | `beta x` | `gamma x` |
/// | `rotation` | 2, 1 | 0 | `sigma J x` | `omega J x` |
/// | `sine` | 1, 1 | `alpha sin x` | `beta sin x` | `gamma sin x` |
/// | `bounded_smooth` | 1, 1 | `alpha sin x` | `beta cos x` | `gamma cos x` |
/// | `bounded_smooth_2d` | 2, 2 | see [`bounded_smooth_2d`] | | |
///
/// `J` is the rotation generator `[[0, -1], [1, 0]]`.
pub fn from_registry(name: &str, params: &BTreeMap<String, f64>) -> Result<CoefficientSet> {
    let p = Params {
        name,
        values: params,
    };
    match name {
        "zero" => {
            p.check(&["dim", "noise_dim"])?;
            let dim = p.get("dim", 1.0)?;
            let noise_dim = p.get("noise_dim", 1.0)?;
            if dim < 1.0 || noise_dim < 1.0 || dim.fract() != 0.0 || noise_dim.fract() != 0.0 {
                return Err(Error::config(
                    "coefficients.params",
                    "dim and noise_dim must be positive integers",
                ));
            }
            Ok(CoefficientSet::new("zero", dim as usize, noise_dim as usize)
                .with_norms(DerivativeNorms::default()))
        }
        "scalar_linear" => {
            p.check(&["alpha", "beta", "gamma"])?;
            Ok(scalar_linear(
                p.get("alpha", 0.0)?,
                p.get("beta", 0.0)?,
                p.get("gamma", 0.0)?,
            ))
        }
        "rotation" => {
            p.check(&["sigma", "omega"])?;
            Ok(rotation(p.get("sigma", 0.0)?, p.get("omega", 1.0)?))
        }
        "sine" => {
            p.check(&["alpha", "beta", "gamma"])?;
            Ok(sine(
                p.get("alpha", 1.0)?,
                p.get("beta", 0.0)?,
                p.get("gamma", 1.0)?,
            ))
        }
        "bounded_smooth" => {
            p.check(&["alpha", "beta", "gamma"])?;
            Ok(bounded_smooth(
                p.get("alpha", 1.0)?,
                p.get("beta", 0.0)?,
                p.get("gamma", 1.0)?,
            ))
        }
        "bounded_smooth_2d" => {
            p.check(&["alpha", "beta", "gamma"])?;
            Ok(bounded_smooth_2d(
                p.get("alpha", 1.0)?,
                p.get("beta", 1.0)?,
                p.get("gamma", 0.5)?,
            ))
        }
        other => Err(Error::config(
            "coefficients.name",
            format!("unknown coefficient family `{other}` (known: {REGISTRY:?})"),
        )),
    }
}

/// `dX = alpha X dt + beta X o dW + gamma X <> dZ` on the line. Zero
/// parameters leave the corresponding map unset.
pub fn scalar_linear(alpha: f64, beta: f64, gamma: f64) -> CoefficientSet {
    let mut set = CoefficientSet::new("scalar_linear", 1, 1);
    if alpha != 0.0 {
        set = set
            .with_drift(move |x, o| o[0] = alpha * x[0])
            .with_drift_jacobian(move |_, o| o[0] = alpha);
    }
    if beta != 0.0 {
        set = set
            .with_diffusion(move |x, o| o[0] = beta * x[0])
            .with_diffusion_jacobian(move |_, o| o[0] = beta);
    }
    if gamma != 0.0 {
        set = set
            .with_jump(move |x, o| o[0] = gamma * x[0])
            .with_jump_jacobian(move |_, o| o[0] = gamma);
    }
    set.with_norms(DerivativeNorms {
        drift: alpha.abs(),
        diffusion: beta.abs(),
        jump: gamma.abs(),
    })
}

/// Planar rotation generators; every flow preserves `|x|`.
pub fn rotation(sigma: f64, omega: f64) -> CoefficientSet {
    let mut set = CoefficientSet::new("rotation", 2, 1);
    if sigma != 0.0 {
        set = set
            .with_diffusion(move |x, o| {
                o[0] = -sigma * x[1];
                o[1] = sigma * x[0];
            })
            .with_diffusion_jacobian(move |_, o| {
                o.copy_from_slice(&[0.0, -sigma, sigma, 0.0]);
            });
    }
    if omega != 0.0 {
        set = set
            .with_jump(move |x, o| {
                o[0] = -omega * x[1];
                o[1] = omega * x[0];
            })
            .with_jump_jacobian(move |_, o| {
                o.copy_from_slice(&[0.0, -omega, omega, 0.0]);
            });
    }
    set.with_norms(DerivativeNorms {
        drift: 0.0,
        diffusion: sigma.abs(),
        jump: omega.abs(),
    })
}

pub fn sine(alpha: f64, beta: f64, gamma: f64) -> CoefficientSet {
    let mut set = CoefficientSet::new("sine", 1, 1);
    if alpha != 0.0 {
        set = set
            .with_drift(move |x, o| o[0] = alpha * x[0].sin())
            .with_drift_jacobian(move |x, o| o[0] = alpha * x[0].cos());
    }
    if beta != 0.0 {
        set = set
            .with_diffusion(move |x, o| o[0] = beta * x[0].sin())
            .with_diffusion_jacobian(move |x, o| o[0] = beta * x[0].cos());
    }
    if gamma != 0.0 {
        set = set
            .with_jump(move |x, o| o[0] = gamma * x[0].sin())
            .with_jump_jacobian(move |x, o| o[0] = gamma * x[0].cos());
    }
    set.with_norms(DerivativeNorms {
        drift: alpha.abs(),
        diffusion: beta.abs(),
        jump: gamma.abs(),
    })
}

/// Bounded, smooth, non-commuting drift and jump fields on the line.
pub fn bounded_smooth(alpha: f64, beta: f64, gamma: f64) -> CoefficientSet {
    let mut set = CoefficientSet::new("bounded_smooth", 1, 1);
    if alpha != 0.0 {
        set = set
            .with_drift(move |x, o| o[0] = alpha * x[0].sin())
            .with_drift_jacobian(move |x, o| o[0] = alpha * x[0].cos());
    }
    if beta != 0.0 {
        set = set
            .with_diffusion(move |x, o| o[0] = beta * x[0].cos())
            .with_diffusion_jacobian(move |x, o| o[0] = -beta * x[0].sin());
    }
    if gamma != 0.0 {
        set = set
            .with_jump(move |x, o| o[0] = gamma * x[0].cos())
            .with_jump_jacobian(move |x, o| o[0] = -gamma * x[0].sin());
    }
    set.with_norms(DerivativeNorms {
        drift: alpha.abs(),
        diffusion: beta.abs(),
        jump: gamma.abs(),
    })
}

/// Two-dimensional bounded benchmark with non-commuting noise columns:
///
/// ```text
/// a(x) = alpha (sin x2, -sin x1)
/// b(x) = beta [[cos x2, 0], [0, cos x1]]
/// c(x) = gamma [[1, sin x2], [cos x1, 1]]
/// ```
pub fn bounded_smooth_2d(alpha: f64, beta: f64, gamma: f64) -> CoefficientSet {
    let mut set = CoefficientSet::new("bounded_smooth_2d", 2, 2);
    if alpha != 0.0 {
        set = set
            .with_drift(move |x, o| {
                o[0] = alpha * x[1].sin();
                o[1] = -alpha * x[0].sin();
            })
            .with_drift_jacobian(move |x, o| {
                o.copy_from_slice(&[0.0, alpha * x[1].cos(), -alpha * x[0].cos(), 0.0]);
            });
    }
    if beta != 0.0 {
        set = set
            .with_diffusion(move |x, o| {
                o.copy_from_slice(&[beta * x[1].cos(), 0.0, 0.0, beta * x[0].cos()]);
            })
            .with_diffusion_jacobian(move |x, o| {
                // column 0: (beta cos x2, 0); column 1: (0, beta cos x1)
                o.copy_from_slice(&[
                    0.0,
                    -beta * x[1].sin(),
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    -beta * x[0].sin(),
                    0.0,
                ]);
            });
    }
    if gamma != 0.0 {
        set = set
            .with_jump(move |x, o| {
                o.copy_from_slice(&[gamma, gamma * x[1].sin(), gamma * x[0].cos(), gamma]);
            })
            .with_jump_jacobian(move |x, o| {
                // column 0: (gamma, gamma cos x1); column 1: (gamma sin x2, gamma)
                o.copy_from_slice(&[
                    0.0,
                    0.0,
                    -gamma * x[0].sin(),
                    0.0,
                    0.0,
                    gamma * x[1].cos(),
                    0.0,
                    0.0,
                ]);
            });
    }
    set.with_norms(DerivativeNorms {
        drift: alpha.abs(),
        diffusion: beta.abs(),
        jump: gamma.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probes(dim: usize) -> Vec<Vec<f64>> {
        (0..50)
            .map(|i| {
                (0..dim)
                    .map(|k| ((i * 7 + k * 3) % 23) as f64 * 0.37 - 4.0)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        for name in REGISTRY {
            let set = from_registry(name, &BTreeMap::new()).unwrap();
            if let Some(err) = set.jacobian_mismatch(&probes(set.dim())) {
                assert!(err < 1e-5, "{name}: {err}");
            }
        }
    }

    #[test]
    fn unknown_names_and_params_are_config_errors() {
        assert!(matches!(
            from_registry("nope", &BTreeMap::new()),
            Err(Error::Config { .. })
        ));
        let mut params = BTreeMap::new();
        params.insert("delta".to_string(), 1.0);
        let err = from_registry("sine", &params).unwrap_err();
        assert!(err.to_string().contains("coefficients.params.delta"));
    }

    #[test]
    fn unset_maps_evaluate_to_zero() {
        let set = CoefficientSet::new("empty", 2, 3);
        let mut out = vec![1.0; 6];
        set.diffusion(&[1.0, 2.0], &mut out);
        assert_eq!(out, vec![0.0; 6]);
        assert!(!set.has_diffusion());
    }
}
