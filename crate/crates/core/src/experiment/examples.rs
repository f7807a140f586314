//! The four benchmark problems with their published parameter anchors.

use std::f64::consts::PI;

use super::sweep::{Anchors, Problem, ProblemKind, SweepConfig};
use crate::fem::{ScalarField, SpaceTimeField};
use crate::inverse::{AdmissibleBox, OptimizerOptions};

pub const BUILTIN_IDS: [&str; 4] = ["ell1d", "ell2d", "par1d", "par2d"];

/// Noise levels of every published table.
pub const TABLE_EPSILONS: [f64; 7] = [5e-2, 3e-2, 1e-2, 5e-3, 3e-3, 1e-3, 5e-4];

/// One line per builtin example: id, kind and true coefficient.
pub fn describe(id: &str) -> Option<&'static str> {
    Some(match id {
        "ell1d" => "ell1d  elliptic 1D   q(x) = 2 + sin(2 pi x), f = 1, data mesh n = 3200",
        "ell2d" => "ell2d  elliptic 2D   q(x,y) = 1 + y(1-y) sin(pi x), f = 1, data mesh n = 200",
        "par1d" => {
            "par1d  parabolic 1D  q(x) = 2 + sin(2 pi x) exp(-2(1-x)), u0 = sin(pi x), f = 4x(1-x), T = 0.1, sigma = 0"
        }
        "par2d" => {
            "par2d  parabolic 2D  q(x,y) = 1 + (1-x) x sin(pi y), u0 = 4x(1-x), f = 1, T = 0.1, sigma = 0"
        }
        _ => return None,
    })
}

/// Sweep configuration of a builtin example, or `None` for an unknown id.
pub fn builtin(id: &str) -> Option<SweepConfig> {
    let (dim, q_dag, source, kind, anchors, fine_n, fine_steps, q0) = match id {
        "ell1d" => (
            1,
            ScalarField::new(|p| 2.0 + (2.0 * PI * p[0]).sin()),
            SpaceTimeField::constant(1.0),
            ProblemKind::Elliptic,
            Anchors {
                epsilon0: 5e-2,
                gamma0: 5e-8,
                h0: 2.5e-2,
                tau0: None,
            },
            3200,
            None,
            2.0,
        ),
        "ell2d" => (
            2,
            ScalarField::new(|p| 1.0 + p[1] * (1.0 - p[1]) * (PI * p[0]).sin()),
            SpaceTimeField::constant(1.0),
            ProblemKind::Elliptic,
            Anchors {
                epsilon0: 5e-2,
                gamma0: 5e-6,
                h0: 8.33e-2,
                tau0: None,
            },
            200,
            None,
            1.5,
        ),
        "par1d" => (
            1,
            ScalarField::new(|p| 2.0 + (2.0 * PI * p[0]).sin() * (-2.0 * (1.0 - p[0])).exp()),
            SpaceTimeField::steady(ScalarField::new(|p| 4.0 * p[0] * (1.0 - p[0]))),
            ProblemKind::Parabolic {
                final_time: 0.1,
                window: 0.0,
                initial: ScalarField::new(|p| (PI * p[0]).sin()),
            },
            Anchors {
                epsilon0: 5e-2,
                gamma0: 1e-7,
                h0: 2.5e-2,
                tau0: Some(1.0 / 400.0),
            },
            1600,
            Some(800),
            2.0,
        ),
        "par2d" => (
            2,
            ScalarField::new(|p| 1.0 + (1.0 - p[0]) * p[0] * (PI * p[1]).sin()),
            SpaceTimeField::constant(1.0),
            ProblemKind::Parabolic {
                final_time: 0.1,
                window: 0.0,
                initial: ScalarField::new(|p| 4.0 * p[0] * (1.0 - p[0])),
            },
            Anchors {
                epsilon0: 5e-2,
                gamma0: 1e-6,
                h0: 8.33e-2,
                tau0: Some(1.0 / 1600.0),
            },
            200,
            Some(1280),
            1.5,
        ),
        _ => return None,
    };
    Some(SweepConfig {
        name: id.to_string(),
        problem: Problem {
            dim,
            q_dag,
            source,
            kind,
        },
        epsilons: TABLE_EPSILONS.to_vec(),
        anchors,
        fine_n,
        fine_steps,
        seed: 20240,
        q0,
        bounds: AdmissibleBox::default(),
        optimizer: OptimizerOptions::default(),
    })
}
