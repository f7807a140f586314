//! TOML sweep configurations.
//!
//! A file either names a builtin example and overrides some of its values,
//! or describes a custom problem in full. Fields of [`ConfigFile`] map one to
//! one onto TOML keys; see the README for a complete reference.

use std::path::Path;

use diffid_core::experiment::examples::builtin;
use diffid_core::experiment::{Anchors, Problem, ProblemKind, SweepConfig};
use diffid_core::inverse::{AdmissibleBox, Metric, OptimizerOptions};
use diffid_core::{ScalarField, SpaceTimeField};
use exmex::prelude::*;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Builtin example to start from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub example: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    /// Constant initial guess; defaults to the midpoint of the bounds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchors: Option<AnchorSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine: Option<FineSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSection>,
}

/// Expressions are in `x`, `y` (2D) and, for the source only, `t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// `elliptic` or `parabolic`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u0: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_rel_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obj_rel_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub armijo_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backtrack_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_backtracks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_step: Option<f64>,
    /// `euclidean`, `l2`, `h1` or `gauss_newton`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_rel_tol: Option<f64>,
}

/// Manifests carry the resolved configuration under `[config]`.
#[derive(Deserialize)]
struct ManifestShape {
    config: ConfigFile,
}

fn err(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

/// Reads a config file or a manifest written by `run`.
pub fn parse_config(path: &Path) -> Result<(ConfigFile, SweepConfig), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<(ConfigFile, SweepConfig), CliError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    let file: ConfigFile = if table.contains_key("config") {
        ManifestShape::deserialize(table)
            .map_err(|e| CliError::Config(e.to_string()))?
            .config
    } else {
        ConfigFile::deserialize(table).map_err(|e| CliError::Config(e.to_string()))?
    };
    let sweep = build(&file)?;
    Ok((snapshot(&file, &sweep), sweep))
}

/// Compiled expression over `x`, `y`, `t`, evaluated from a point and a time.
struct Expr {
    flat: FlatEx<f64>,
    /// Position in `[x, y, t]` of each variable, in the expression's order.
    slots: Vec<usize>,
}

impl Expr {
    fn parse(key: &str, src: &str, dim: usize, with_time: bool) -> Result<Self, CliError> {
        let flat = exmex::parse::<f64>(src).map_err(|e| err(key, e))?;
        let mut slots = Vec::new();
        for name in flat.var_names() {
            let slot = match name.as_str() {
                "x" => 0,
                "y" if dim == 2 => 1,
                "t" if with_time => 2,
                other => return Err(err(key, format!("unknown variable `{other}`"))),
            };
            slots.push(slot);
        }
        let e = Self { flat, slots };
        let probe = e.eval(&[0.5, 0.5], 0.0);
        if !probe.is_finite() {
            return Err(err(key, format!("`{src}` is not finite at the domain centre")));
        }
        Ok(e)
    }

    fn eval(&self, p: &[f64], t: f64) -> f64 {
        let src = [p[0], p.get(1).copied().unwrap_or(0.0), t];
        let mut buf = [0.0; 3];
        for (b, &s) in buf.iter_mut().zip(&self.slots) {
            *b = src[s];
        }
        self.flat.eval(&buf[..self.slots.len()]).unwrap_or(f64::NAN)
    }
}

fn space_field(key: &str, src: &str, dim: usize) -> Result<ScalarField, CliError> {
    let e = Expr::parse(key, src, dim, false)?;
    Ok(ScalarField::new(move |p| e.eval(p, 0.0)))
}

fn space_time_field(key: &str, src: &str, dim: usize) -> Result<SpaceTimeField, CliError> {
    let e = Expr::parse(key, src, dim, true)?;
    if e.slots.contains(&2) {
        Ok(SpaceTimeField::new(move |p, t| e.eval(p, t)))
    } else {
        Ok(SpaceTimeField::steady(ScalarField::new(move |p| e.eval(p, 0.0))))
    }
}

fn build(file: &ConfigFile) -> Result<SweepConfig, CliError> {
    let base = match &file.example {
        Some(id) => Some(builtin(id).ok_or_else(|| err("example", format!("unknown example `{id}`")))?),
        None => None,
    };
    let problem = build_problem(file.problem.as_ref(), base.as_ref().map(|b| &b.problem))?;
    let parabolic = problem.is_parabolic();

    let a = file.anchors.clone().unwrap_or_default();
    let base_anchors = base.as_ref().map(|b| b.anchors);
    let pick = |v: Option<f64>, from: Option<f64>, key: &str| v.or(from).ok_or_else(|| err(key, "missing"));
    let anchors = Anchors {
        epsilon0: pick(a.epsilon0, base_anchors.map(|b| b.epsilon0), "anchors.epsilon0")?,
        gamma0: pick(a.gamma0, base_anchors.map(|b| b.gamma0), "anchors.gamma0")?,
        h0: pick(a.h0, base_anchors.map(|b| b.h0), "anchors.h0")?,
        tau0: if parabolic {
            Some(pick(a.tau0, base_anchors.and_then(|b| b.tau0), "anchors.tau0")?)
        } else {
            None
        },
    };

    let fine = file.fine.clone().unwrap_or_default();
    let fine_n = fine
        .n
        .or(base.as_ref().map(|b| b.fine_n))
        .ok_or_else(|| err("fine.n", "missing"))?;
    let fine_steps = if parabolic {
        Some(
            fine.steps
                .or(base.as_ref().and_then(|b| b.fine_steps))
                .ok_or_else(|| err("fine.steps", "missing"))?,
        )
    } else {
        None
    };

    let epsilons = match (&file.epsilons, &base) {
        (Some(e), _) => e.clone(),
        (None, Some(b)) => b.epsilons.clone(),
        (None, None) => return Err(err("epsilons", "missing")),
    };
    if epsilons.is_empty() {
        return Err(err("epsilons", "at least one noise level is required"));
    }

    let bounds = {
        let b = file.bounds.clone().unwrap_or_default();
        let d = base.as_ref().map(|c| c.bounds).unwrap_or_default();
        AdmissibleBox::new(b.lower.unwrap_or(d.lower()), b.upper.unwrap_or(d.upper()))
            .map_err(|e| err("bounds", e))?
    };
    let q0 = file
        .q0
        .or(if file.bounds.is_none() { base.as_ref().map(|b| b.q0) } else { None })
        .unwrap_or(bounds.midpoint());

    let optimizer = build_optimizer(file.optimizer.as_ref())?;
    let config = SweepConfig {
        name: file
            .name
            .clone()
            .or(file.example.clone())
            .unwrap_or_else(|| "custom".into()),
        problem,
        epsilons,
        anchors,
        fine_n,
        fine_steps,
        seed: file.seed.or(base.as_ref().map(|b| b.seed)).unwrap_or(0),
        q0,
        bounds,
        optimizer,
    };
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

fn build_problem(section: Option<&ProblemSection>, base: Option<&Problem>) -> Result<Problem, CliError> {
    let s = section.cloned().unwrap_or_default();
    let base_kind = base.map(|b| if b.is_parabolic() { "parabolic" } else { "elliptic" });
    let kind = match (s.kind.as_deref(), base_kind) {
        (Some(k), Some(b)) if k != b => {
            return Err(err("problem.kind", format!("cannot change the kind of a builtin `{b}` example")))
        }
        (Some(k), _) => k.to_string(),
        (None, Some(b)) => b.to_string(),
        (None, None) => return Err(err("problem.kind", "missing")),
    };
    let dim = match (s.dim, base.map(|b| b.dim)) {
        (Some(d), Some(b)) if d != b => {
            return Err(err("problem.dim", "cannot change the dimension of a builtin example"))
        }
        (d, b) => d.or(b).ok_or_else(|| err("problem.dim", "missing"))?,
    };
    if !(1..=2).contains(&dim) {
        return Err(err("problem.dim", format!("must be 1 or 2, got {dim}")));
    }
    let q_dag = match (&s.q, base) {
        (Some(src), _) => space_field("problem.q", src, dim)?,
        (None, Some(b)) => b.q_dag.clone(),
        (None, None) => return Err(err("problem.q", "missing")),
    };
    let source = match (&s.f, base) {
        (Some(src), _) if kind == "elliptic" => SpaceTimeField::steady(space_field("problem.f", src, dim)?),
        (Some(src), _) => space_time_field("problem.f", src, dim)?,
        (None, Some(b)) => b.source.clone(),
        (None, None) => return Err(err("problem.f", "missing")),
    };
    let kind = match kind.as_str() {
        "elliptic" => {
            for (key, v) in [("problem.u0", s.u0.is_some()), ("problem.final_time", s.final_time.is_some()), ("problem.sigma", s.sigma.is_some())] {
                if v {
                    return Err(err(key, "only valid for parabolic problems"));
                }
            }
            ProblemKind::Elliptic
        }
        "parabolic" => {
            let (bt, bw, bu) = match base.map(|b| &b.kind) {
                Some(ProblemKind::Parabolic { final_time, window, initial }) => {
                    (Some(*final_time), Some(*window), Some(initial.clone()))
                }
                _ => (None, None, None),
            };
            let initial = match (&s.u0, bu) {
                (Some(src), _) => space_field("problem.u0", src, dim)?,
                (None, Some(u)) => u,
                (None, None) => return Err(err("problem.u0", "missing")),
            };
            ProblemKind::Parabolic {
                final_time: s.final_time.or(bt).ok_or_else(|| err("problem.final_time", "missing"))?,
                window: s.sigma.or(bw).unwrap_or(0.0),
                initial,
            }
        }
        other => return Err(err("problem.kind", format!("expected elliptic or parabolic, got `{other}`"))),
    };
    Ok(Problem { dim, q_dag, source, kind })
}

fn build_optimizer(section: Option<&OptimizerSection>) -> Result<OptimizerOptions, CliError> {
    let mut o = OptimizerOptions::default();
    let Some(s) = section else { return Ok(o) };
    o.max_iters = s.max_iters.unwrap_or(o.max_iters);
    o.grad_rel_tol = s.grad_rel_tol.unwrap_or(o.grad_rel_tol);
    o.obj_rel_tol = s.obj_rel_tol.unwrap_or(o.obj_rel_tol);
    o.armijo_c = s.armijo_c.unwrap_or(o.armijo_c);
    o.backtrack_factor = s.backtrack_factor.unwrap_or(o.backtrack_factor);
    o.max_backtracks = s.max_backtracks.unwrap_or(o.max_backtracks);
    o.initial_step = s.initial_step.unwrap_or(o.initial_step);
    o.inner_max_iters = s.inner_max_iters.unwrap_or(o.inner_max_iters);
    o.inner_rel_tol = s.inner_rel_tol.unwrap_or(o.inner_rel_tol);
    if let Some(m) = &s.metric {
        o.metric = m.parse::<Metric>().map_err(|e| err("optimizer.metric", e))?;
    }
    o.validate().map_err(|e| err("optimizer", e))?;
    Ok(o)
}

/// The input with every numeric setting made explicit. Expressions stay as
/// written; builtin ones are implied by `example`.
fn snapshot(file: &ConfigFile, c: &SweepConfig) -> ConfigFile {
    let (final_time, sigma) = match &c.problem.kind {
        ProblemKind::Parabolic { final_time, window, .. } => (Some(*final_time), Some(*window)),
        ProblemKind::Elliptic => (None, None),
    };
    let given = file.problem.clone().unwrap_or_default();
    let o = &c.optimizer;
    ConfigFile {
        example: file.example.clone(),
        name: Some(c.name.clone()),
        seed: Some(c.seed),
        epsilons: Some(c.epsilons.clone()),
        q0: Some(c.q0),
        problem: Some(ProblemSection {
            kind: Some(if c.problem.is_parabolic() { "parabolic" } else { "elliptic" }.into()),
            dim: Some(c.problem.dim),
            q: given.q,
            f: given.f,
            u0: given.u0,
            final_time,
            sigma,
        }),
        anchors: Some(AnchorSection {
            epsilon0: Some(c.anchors.epsilon0),
            gamma0: Some(c.anchors.gamma0),
            h0: Some(c.anchors.h0),
            tau0: c.anchors.tau0,
        }),
        fine: Some(FineSection {
            n: Some(c.fine_n),
            steps: c.fine_steps,
        }),
        bounds: Some(BoundsSection {
            lower: Some(c.bounds.lower()),
            upper: Some(c.bounds.upper()),
        }),
        optimizer: Some(OptimizerSection {
            max_iters: Some(o.max_iters),
            grad_rel_tol: Some(o.grad_rel_tol),
            obj_rel_tol: Some(o.obj_rel_tol),
            armijo_c: Some(o.armijo_c),
            backtrack_factor: Some(o.backtrack_factor),
            max_backtracks: Some(o.max_backtracks),
            initial_step: Some(o.initial_step),
            metric: Some(o.metric.as_str().into()),
            inner_max_iters: Some(o.inner_max_iters),
            inner_rel_tol: Some(o.inner_rel_tol),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ell1d_defaults() {
        let (_, c) = parse_config_str("example = \"ell1d\"").unwrap();
        assert_eq!(c.fine_n, 3200);
        assert_eq!(
            (c.anchors.epsilon0, c.anchors.gamma0, c.anchors.h0),
            (5e-2, 5e-8, 2.5e-2)
        );
        assert!((c.problem.q_dag.eval(&[0.25]) - 3.0).abs() < 1e-15);
        assert_eq!(c.problem.source.eval(&[0.7], 0.0), 1.0);
        assert_eq!(c.epsilons.len(), 7);
        assert_eq!(c.optimizer.metric, Metric::GaussNewton);
    }

    #[test]
    fn par1d_defaults() {
        let (_, c) = parse_config_str("example = \"par1d\"").unwrap();
        let ProblemKind::Parabolic { final_time, window, initial } = &c.problem.kind else {
            panic!("parabolic expected")
        };
        assert_eq!((*final_time, *window), (0.1, 0.0));
        assert!((initial.eval(&[0.5]) - 1.0).abs() < 1e-15);
        assert!((c.problem.source.eval(&[0.5], 0.0) - 1.0).abs() < 1e-15);
        let x: f64 = 0.3;
        let q = 2.0 + (2.0 * std::f64::consts::PI * x).sin() * (-2.0 * (1.0 - x)).exp();
        assert!((c.problem.q_dag.eval(&[x]) - q).abs() < 1e-15);
    }

    #[test]
    fn empty_epsilons_rejected() {
        let e = parse_config_str("example = \"ell1d\"\nepsilons = []").unwrap_err();
        assert!(e.to_string().contains("epsilons"), "{e}");
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("example = \"nope\"", "example"),
            ("example = \"ell1d\"\n[anchors]\ngamma1 = 1.0", "gamma1"),
            ("example = \"ell1d\"\n[optimizer]\nmetric = \"bfgs\"", "optimizer.metric"),
            ("[problem]\nkind = \"elliptic\"\ndim = 1\nq = \"2 + x\"\nf = \"1\"", "anchors.epsilon0"),
            ("[problem]\nkind = \"elliptic\"\ndim = 1\nq = \"2 + z\"", "problem.q"),
            ("example = \"par1d\"\n[problem]\nkind = \"elliptic\"", "problem.kind"),
            ("example = \"ell1d\"\n[problem]\nsigma = 0.01", "problem.sigma"),
            ("example = \"par1d\"\n[anchors]\ntau0 = -1.0", "tau0"),
        ];
        for (src, key) in cases {
            let e = parse_config_str(src).unwrap_err();
            assert!(matches!(e, CliError::Config(_)));
            assert!(e.to_string().contains(key), "{src}: {e}");
        }
    }

    #[test]
    fn custom_problem() {
        let src = r#"
            name = "bump"
            seed = 3
            epsilons = [1e-2, 1e-3]
            [problem]
            kind = "parabolic"
            dim = 2
            q = "1 + x*y"
            f = "1 + t"
            u0 = "sin(PI*x)*sin(PI*y)"
            final_time = 0.1
            [anchors]
            epsilon0 = 1e-2
            gamma0 = 1e-6
            h0 = 0.1
            tau0 = 0.01
            [fine]
            n = 40
            steps = 100
        "#;
        let (_, c) = parse_config_str(src).unwrap();
        assert_eq!(c.name, "bump");
        assert!((c.problem.q_dag.eval(&[0.5, 0.5]) - 1.25).abs() < 1e-15);
        assert!((c.problem.source.eval(&[0.1, 0.2], 0.5) - 1.5).abs() < 1e-15);
        assert!(!c.problem.source.is_steady());
        assert_eq!(c.q0, 2.75);
    }

    #[test]
    fn snapshot_round_trips() {
        let (snap, c) = parse_config_str("example = \"par2d\"\nepsilons = [5e-2]\n[optimizer]\nmetric = \"h1\"").unwrap();
        let text = toml::to_string(&snap).unwrap();
        let (snap2, c2) = parse_config_str(&text).unwrap();
        assert_eq!(snap, snap2);
        assert_eq!(c2.optimizer, c.optimizer);
        assert_eq!(c2.anchors, c.anchors);
        assert_eq!(c2.q0, 1.5);
    }

    #[test]
    fn documented_example_parses() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```toml\n").unwrap() + 8;
        let end = start + readme[start..].find("```").unwrap();
        let (_, c) = parse_config_str(&readme[start..end]).unwrap();
        assert_eq!(c.name, "par1d-wide-window");
        assert_eq!(c.epsilons, vec![5e-2, 1e-2, 5e-3]);
        assert_eq!(c.fine_steps, Some(800));
        let ProblemKind::Parabolic { window, .. } = c.problem.kind else { panic!() };
        assert_eq!(window, 0.05);
        let (_, abs) = parse_config_str("example = \"ell1d\"\n[problem]\nq = \"2 + abs(sqrt(x) - 0.5)\"").unwrap();
        assert!((abs.problem.q_dag.eval(&[0.16]) - 2.1).abs() < 1e-12);
    }
}
