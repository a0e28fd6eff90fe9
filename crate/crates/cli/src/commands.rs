use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use marcus_wz::experiments::{fit_rate, reference_states, strong_error, uniform_error, ErrorCurve, RateFit};
use marcus_wz::levy::{exp_moment_check, moment_lemma_check, MomentLemmaParams};
use marcus_wz::scheme::wz_knots_stride;
use marcus_wz::{sample_path, Error};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Resolved, RunConfig};

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Passed,
    Failed(String),
}

pub struct Run {
    pub command: &'static str,
    pub config: RunConfig,
    pub resolved: Resolved,
    pub out: PathBuf,
    started_ms: u128,
    outputs: BTreeMap<String, String>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Run {
    pub fn prepare(command: &'static str, config_path: &Path, seed: Option<u64>, threads: usize, out: &Path) -> Result<Self> {
        let started_ms = now_ms();
        let mut config = RunConfig::load(config_path)?;
        if let Some(seed) = seed {
            config.experiment.seed = seed;
        }
        let mut resolved = config.resolve()?;
        resolved.experiment.threads = threads;
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            command,
            config,
            resolved,
            out: out.to_path_buf(),
            started_ms,
            outputs: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.insert(name.to_string(), hex(&Sha256::digest(bytes)));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `config.toml` and `manifest.json`, the latter listing every
    /// output with its SHA-256.
    pub fn finish(mut self) -> Result<()> {
        let echo = self.config.to_toml();
        self.write("config.toml", echo.as_bytes())?;
        let manifest = json!({
            "tool": "marcus-wz",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "master_seed": self.config.experiment.seed,
            "started_unix_ms": self.started_ms as u64,
            "finished_unix_ms": now_ms() as u64,
            "config": self.config,
            "outputs": self.outputs,
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.out.join("manifest.json");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn check_slope(fit: &Option<RateFit>, band: Option<(f64, f64)>) -> Status {
    match (band, fit) {
        (None, _) => Status::Passed,
        (Some((lo, hi)), Some(f)) if f.slope >= lo && f.slope <= hi => Status::Passed,
        (Some((lo, hi)), Some(f)) => Status::Failed(format!("slope {:.4} outside [{lo}, {hi}]", f.slope)),
        (Some(_), None) => Status::Failed("no rate could be fitted".into()),
    }
}

fn fit_or_reason(curve: &ErrorCurve, floor: f64) -> Result<(Option<RateFit>, Option<String>)> {
    match fit_rate(curve, floor) {
        Ok(f) => Ok((Some(f), None)),
        Err(e @ Error::TooFewPoints(_)) => Ok((None, Some(e.to_string()))),
        Err(e) => Err(e.into()),
    }
}

fn curve_csv(curve: &ErrorCurve) -> Vec<u8> {
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).expect("in-memory write");
    buf
}

fn trace_csv(curve: &ErrorCurve) -> Vec<u8> {
    let mut buf = Vec::new();
    curve.write_trace_csv(&mut buf).expect("in-memory write");
    buf
}

fn require_reference(run: &Run) -> Result<()> {
    if !run.resolved.has_reference {
        return Err(Error::config("experiment.reference", "this command needs a reference solution").into());
    }
    Ok(())
}

pub fn converge(run: &mut Run, band: Option<(f64, f64)>) -> Result<Status> {
    require_reference(run)?;
    let cfg = &run.resolved.experiment;
    let curve = strong_error(cfg)?;
    let floor = run.config.experiment.exclude_floor;
    let (fit, reason) = fit_or_reason(&curve, floor)?;
    let report = json!({
        "metric": curve.metric,
        "reference": curve.reference,
        "seed": cfg.master_seed,
        "fit": fit,
        "fit_error": reason,
        "exclusions": {
            "floor": floor,
            "scheme_exact": curve.scheme_exact,
            "excluded_h": fit.as_ref().map(|f| f.excluded.clone()).unwrap_or_else(|| curve.points.iter().map(|p| p.h).collect()),
            "diverged_paths": curve.diverged_paths,
        },
        "points": curve.points,
        "warnings": curve.warnings,
        "config": run.config,
    });
    let status = check_slope(&fit, band);
    for w in &curve.warnings {
        eprintln!("warning: {w}");
    }
    print_fit("strong", &fit, &reason);
    run.write("curve.csv", &curve_csv(&curve))?;
    run.write_json("fit.json", &report)?;
    if run.config.experiment.trace {
        run.write("trace.csv", &trace_csv(&curve))?;
    }
    Ok(status)
}

pub fn uniform(run: &mut Run, band: Option<(f64, f64)>) -> Result<Status> {
    require_reference(run)?;
    let cfg = &run.resolved.experiment;
    let rep = uniform_error(cfg)?;
    let floor = run.config.experiment.exclude_floor;
    let (fit, reason) = fit_or_reason(&rep.uniform, floor)?;
    let report = json!({
        "metric": rep.uniform.metric,
        "reference": rep.uniform.reference,
        "seed": cfg.master_seed,
        "fit": fit,
        "fit_error": reason,
        "rate_threshold": rep.rate_threshold,
        "above_threshold": fit.as_ref().map(|f| f.slope >= rep.rate_threshold),
        "lattice": {
            "points": rep.lattice_points,
            "radius": rep.radius,
            "spacing": rep.spacing,
            "gap_estimate": rep.gap_estimate,
        },
        "exclusions": {
            "floor": floor,
            "scheme_exact": rep.uniform.scheme_exact,
            "excluded_h": fit.as_ref().map(|f| f.excluded.clone()).unwrap_or_default(),
            "diverged_paths": rep.uniform.diverged_paths,
        },
        "points": rep.uniform.points,
        "pointwise_points": rep.pointwise.points,
        "warnings": rep.uniform.warnings,
        "config": run.config,
    });
    let status = check_slope(&fit, band);
    for w in &rep.uniform.warnings {
        eprintln!("warning: {w}");
    }
    print_fit("uniform", &fit, &reason);
    if fit.is_some() {
        println!("threshold (1 - eps) / (4 d) = {:.4}", rep.rate_threshold);
    }
    run.write("curve.csv", &curve_csv(&rep.uniform))?;
    run.write("pointwise.csv", &curve_csv(&rep.pointwise))?;
    run.write_json("fit.json", &report)?;
    if run.config.experiment.trace {
        run.write("trace.csv", &trace_csv(&rep.uniform))?;
    }
    Ok(status)
}

fn print_fit(label: &str, fit: &Option<RateFit>, reason: &Option<String>) {
    match (fit, reason) {
        (Some(f), _) => println!("{label} rate: slope {:.4}, R^2 {:.4}", f.slope, f.r_squared),
        (None, Some(r)) => println!("{label} rate: not fitted ({r})"),
        (None, None) => {}
    }
}

pub fn simulate(run: &mut Run) -> Result<Status> {
    let cfg = run.resolved.experiment.clone();
    let level = cfg.path_level();
    let top = *cfg.levels.last().expect("validated ladder");
    let path = sample_path(&cfg.model, cfg.horizon, level, cfg.master_seed, run.config.experiment.path_index)?;
    let stride = 1usize << (level - top);
    let traj = wz_knots_stride(&cfg.coefficients, &path, &cfg.x0, stride, &cfg.ode)?;
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    run.write("trajectory.csv", &buf)?;

    let mut summary = json!({
        "h": traj.h,
        "knots": traj.len(),
        "path_index": traj.path_index,
        "seed": traj.master_seed,
        "jumps": path.jump_count(),
    });
    if run.resolved.has_reference {
        let d = traj.dim;
        let reference = reference_states(&cfg, &path, &cfg.x0, stride)?;
        let mut rows = String::from("t");
        for i in 1..=d {
            rows.push_str(&format!(",X{i}"));
        }
        rows.push('\n');
        let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
        for (k, r) in reference.chunks_exact(d).enumerate() {
            rows.push_str(&marcus_wz::output::format_g17(traj.knot_time(k)));
            for v in r {
                rows.push(',');
                rows.push_str(&marcus_wz::output::format_g17(*v));
            }
            rows.push('\n');
            let s = traj.state(k);
            let diff = s.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            max_abs = max_abs.max(diff);
            if scale > 0.0 {
                max_rel = max_rel.max(diff / scale);
            }
        }
        run.write("reference.csv", rows.as_bytes())?;
        summary["reference"] = json!(cfg.reference);
        summary["max_abs_deviation"] = json!(max_abs);
        summary["max_rel_deviation"] = json!(max_rel);
        println!(
            "{} knots at h = {}; max deviation from {} reference: {max_abs:.3e} absolute, {max_rel:.3e} relative",
            traj.len(),
            traj.h,
            cfg.reference.name()
        );
    } else {
        println!("{} knots at h = {}", traj.len(), traj.h);
    }
    run.write_json("simulate.json", &summary)?;
    Ok(Status::Passed)
}

pub fn levy_check(run: &mut Run) -> Result<Status> {
    let cfg = &run.resolved.experiment;
    let model = &cfg.model;
    let norms = cfg.coefficients.norms();
    let scale = 5.0 * (1.0 + cfg.moment_margin);
    let p = cfg.moment_order;
    let d = cfg.coefficients.dim() as f64;
    let k = scale * norms.jump;
    let critical = model.jumps().critical_exponent();
    let mut failures = Vec::new();
    let mut checks = Vec::new();
    for (label, a) in [("p||Dc||", p * norms.jump), ("pK", p * k), ("2dK", 2.0 * d * k)] {
        let outcome = exp_moment_check(model, a);
        let margin = critical.map(|c| c - a);
        let entry = match &outcome {
            Ok(v) => json!({"condition": format!("H_nu at A = {label}"), "exponent": a, "value": v, "margin": margin, "passed": true}),
            Err(e) => {
                failures.push(format!("exponential moment at A = {label} = {a}: {e}"));
                json!({"condition": format!("H_nu at A = {label}"), "exponent": a, "value": Value::Null, "margin": margin, "passed": false, "error": e.to_string()})
            }
        };
        println!(
            "A = {label:<8} = {a:<10.4} {}",
            match &outcome {
                Ok(v) => format!("lambda E exp(A|J|) = {v:.6e}  ok"),
                Err(e) => format!("FAILED: {e}"),
            }
        );
        checks.push(entry);
    }

    let lemma_p = p.max(2.0);
    let params = MomentLemmaParams {
        p: lemma_p,
        kappa1: scale * norms.drift,
        kappa2: scale * norms.diffusion,
        k,
    };
    let hs: Vec<f64> = (6..=12).map(|j| 2f64.powi(-j)).collect();
    let lemma = match moment_lemma_check(model, params, &hs, run.config.experiment.lemma_paths, cfg.master_seed) {
        Ok(points) => {
            let ratios: Vec<f64> = points.iter().map(|q| q.ratio).collect();
            let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
            let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
            println!("moment lemma ratio spread over h in [2^-12, 2^-6]: {:.3}", max / min);
            json!({
                "p": lemma_p, "kappa1": params.kappa1, "kappa2": params.kappa2, "k": params.k,
                "points": points.iter().map(|q| json!({"h": q.h, "ratio": q.ratio, "ci_half_width": q.ci_half_width})).collect::<Vec<_>>(),
                "max_over_min": max / min,
            })
        }
        Err(e) if matches!(e, Error::MomentDivergence { .. }) => {
            failures.push(format!("moment lemma: {e}"));
            json!({"error": e.to_string()})
        }
        Err(e) => return Err(e.into()),
    };
    let report = json!({
        "intensity": model.intensity(),
        "second_moment": model.second_moment(),
        "compensator_drift": model.compensator_drift(),
        "critical_exponent": critical,
        "norms": {"drift": norms.drift, "diffusion": norms.diffusion, "jump": norms.jump},
        "k": k,
        "checks": checks,
        "moment_lemma": lemma,
        "passed": failures.is_empty(),
        "failures": failures,
    });
    run.write_json("levy_check.json", &report)?;
    Ok(if failures.is_empty() {
        Status::Passed
    } else {
        Status::Failed(failures.join("; "))
    })
}
