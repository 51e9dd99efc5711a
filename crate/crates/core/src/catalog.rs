//! Ready-made test systems and their closed-form auxiliaries.
//!
//! Coordinate orders: the nonholonomic particle uses `(x, y, z)`, the chaotic
//! particle `(x, y₁, y₂, z₁, z₂)` and the pendulum-driven transmission
//! `(x, y, ξ)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mechanics::{MechanicalSystem, State};

/// Reference initial condition of the nonholonomic particle (energy 1.5).
pub const PARTICLE_IC: ([f64; 3], [f64; 3]) = ([1.0, 1.0, -1.0], [1.0, -1.0, 1.0]);

/// Reference initial condition of the chaotic particle (energy ≈ 3.2575).
pub const CHAOTIC_IC: ([f64; 5], [f64; 5]) = (
    [1.0, 0.0, 1.0, -1.0, -1.0],
    [0.05, 0.5, -0.5, -0.1, -0.05],
);

/// Transmission initial condition for the reversible case `ε = 0`. The
/// velocity is rounded to four digits and violates the constraint by ~4e-5.
pub const CVT_IC_REVERSIBLE: ([f64; 3], [f64; 3]) = ([1.0, 0.0, -2.0], [-0.4481, -0.4075, 0.1]);

/// Transmission initial condition for the perturbed case (energy 6.0 at
/// `ε = 0.1`).
pub const CVT_IC_PERTURBED: ([f64; 3], [f64; 3]) = ([1.0, 1.0, 0.0], [0.0, 0.0, 2.82842712]);

/// Parameters of the pendulum-driven continuously variable transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvtConfig {
    /// Strength of the reversibility-breaking term `−ε sin(2ξ)/2`.
    pub epsilon: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

impl Default for CvtConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            kappa1: -1.0,
            kappa2: -1.0,
        }
    }
}

impl CvtConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    /// Driver potential `V(ξ) = cos ξ − ε sin(2ξ)/2`.
    pub fn driver_potential(&self, xi: f64) -> f64 {
        xi.cos() - 0.5 * self.epsilon * (2.0 * xi).sin()
    }

    pub fn driver_potential_derivative(&self, xi: f64) -> f64 {
        -xi.sin() - self.epsilon * (2.0 * xi).cos()
    }

    /// Transmission ratio `f(ξ) = sin ξ`.
    pub fn ratio(&self, xi: f64) -> f64 {
        xi.sin()
    }

    pub fn ratio_derivative(&self, xi: f64) -> f64 {
        xi.cos()
    }

    /// Reference initial condition for this `ε`: the reversible one
    /// when `ε = 0`, the perturbed one otherwise.
    pub fn reference_initial_state(&self) -> State {
        let (q, v) = if self.epsilon == 0.0 {
            CVT_IC_REVERSIBLE
        } else {
            CVT_IC_PERTURBED
        };
        State::from_slices(&q, &v)
    }
}

/// Free particle in ℝ³ with the constraint `ż − y ẋ = 0`.
pub fn nonholonomic_particle() -> MechanicalSystem {
    MechanicalSystem::new(
        "nonholonomic particle",
        DMatrix::identity(3, 3),
        1,
        |_| 0.0,
        |q| DVector::zeros(q.len()),
        |q| DMatrix::from_row_slice(1, 3, &[-q[1], 0.0, 1.0]),
    )
    .expect("particle system is well formed")
}

/// Particle in ℝ⁵ with quartic coupling and the constraint
/// `ẋ + y₁ż₁ + y₂ż₂ = 0`.
pub fn chaotic_particle() -> MechanicalSystem {
    MechanicalSystem::new(
        "chaotic nonholonomic particle",
        DMatrix::identity(5, 5),
        1,
        |q| {
            let (y1, y2, z1, z2) = (q[1], q[2], q[3], q[4]);
            0.5 * (q.norm_squared() + z1 * z1 * z2 * z2 + y1 * y1 * z1 * z1 + y2 * y2 * z2 * z2)
        },
        |q| {
            let (x, y1, y2, z1, z2) = (q[0], q[1], q[2], q[3], q[4]);
            DVector::from_column_slice(&[
                x,
                y1 + y1 * z1 * z1,
                y2 + y2 * z2 * z2,
                z1 + z1 * z2 * z2 + y1 * y1 * z1,
                z2 + z1 * z1 * z2 + y2 * y2 * z2,
            ])
        },
        |q| DMatrix::from_row_slice(1, 5, &[1.0, 0.0, 0.0, q[1], q[2]]),
    )
    .expect("chaotic particle system is well formed")
}

/// Pendulum-driven transmission with constraint `ẏ + f(ξ) ẋ = 0`.
///
/// The harmonic terms `½κᵢqᵢ²` of the Lagrangian are folded into the
/// potential, so with `κ = −1` the total potential is
/// `½x² + ½y² + cos ξ − ε sin(2ξ)/2`.
pub fn pendulum_cvt(cfg: CvtConfig) -> MechanicalSystem {
    let (pot, grad, form) = (cfg, cfg, cfg);
    MechanicalSystem::new(
        format!("pendulum-driven CVT (epsilon = {})", cfg.epsilon),
        DMatrix::identity(3, 3),
        1,
        move |q| {
            -0.5 * pot.kappa1 * q[0] * q[0] - 0.5 * pot.kappa2 * q[1] * q[1]
                + pot.driver_potential(q[2])
        },
        move |q| {
            DVector::from_column_slice(&[
                -grad.kappa1 * q[0],
                -grad.kappa2 * q[1],
                grad.driver_potential_derivative(q[2]),
            ])
        },
        move |q| DMatrix::from_row_slice(1, 3, &[form.ratio(q[2]), 1.0, 0.0]),
    )
    .expect("transmission system is well formed")
}

/// Closed-form transmission multiplier
/// `λ = −(f′(ξ) ξ̇ ẋ + κ₁ f(ξ) x + κ₂ y) / (1 + f²(ξ))`.
pub fn cvt_multiplier_closed_form(cfg: &CvtConfig, s: &State) -> f64 {
    let (x, y, xi) = (s.q[0], s.q[1], s.q[2]);
    let (xdot, xidot) = (s.v[0], s.v[2]);
    let f = cfg.ratio(xi);
    -(cfg.ratio_derivative(xi) * xidot * xdot + cfg.kappa1 * f * x + cfg.kappa2 * y) / (1.0 + f * f)
}

/// Makes a transmission state admissible by solving `ẏ = −f(ξ) ẋ`, keeping
/// `ẋ` and `ξ̇`.
pub fn cvt_project_velocity(cfg: &CvtConfig, s: &State) -> State {
    let mut out = s.clone();
    out.v[1] = -cfg.ratio(s.q[2]) * s.v[0];
    out
}

/// The composition `F^{0,0,1}_{h/2} ∘ F^{0,0,0}_{h/2}` written out for the
/// nonholonomic particle.
pub fn particle_composition_closed_form(s: &State, h: f64) -> Result<State> {
    let half = 0.5 * h;
    let (x, y, z) = (s.q[0], s.q[1], s.q[2]);
    let (xd, yd, zd) = (s.v[0], s.v[1], s.v[2]);

    // First half step, constraint frozen at q_k.
    let xh = x + half * xd;
    let yh = y + half * yd;
    let zh = z + half * zd;
    let defect = zd - yh * xd;
    let xdh = xd + defect * yh / (1.0 + yh * yh);
    let ydh = yd;
    // ż at the half step does not feed the second half.

    // Second half step, constraint evaluated at q_{k+1}.
    let denom = half * ydh * yh + yh * yh + 1.0;
    if denom.abs() < 1e-14 {
        return Err(Error::InvalidParameter(format!(
            "closed-form particle composition is singular for h = {h}"
        )));
    }
    let xd1 = xdh * (yh * yh + 1.0) / denom;
    // The x update is x_{k+1/2} + (h/2)·ẋ_{k+1}. Scaling the whole of
    // x_{k+1/2} + (h/2)·ẋ_{k+1/2} by the same factor as ẋ would break the
    // invariance of the particle under shifts in x.
    let x1 = xh + half * xd1;
    let yd1 = ydh;
    let y1 = yh + half * yd1;
    let z1 = zh + y1 * (x1 - xh);
    let zd1 = y1 * xd1;

    Ok(State::from_slices(&[x1, y1, z1], &[xd1, yd1, zd1]))
}

/// Reference initial state of each catalog system.
pub fn particle_initial_state() -> State {
    State::from_slices(&PARTICLE_IC.0, &PARTICLE_IC.1)
}

pub fn chaotic_initial_state() -> State {
    State::from_slices(&CHAOTIC_IC.0, &CHAOTIC_IC.1)
}
