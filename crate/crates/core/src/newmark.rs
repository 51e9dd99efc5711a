//! Classical (unconstrained) Newmark steps, the exponential-method form of
//! the same family, and the RK4 baseline on the constrained equations.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mechanics::{MechanicalSystem, State};
use crate::newton::{self, NewtonOptions};

/// Parameters of the classical Newmark scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalNewmarkParams {
    pub beta: f64,
    pub gamma: f64,
    pub h: f64,
}

impl ClassicalNewmarkParams {
    pub fn new(beta: f64, gamma: f64, h: f64) -> Result<Self> {
        let p = Self { beta, gamma, h };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!("beta must lie in [0, 1/2], got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {}", self.h)));
        }
        Ok(())
    }
}

/// `γ` of the classical scheme reproduced by the exponential method with
/// discretization parameters `(β, β′)`: `γ = (1 + 2β − 2β′)/2`.
pub fn gamma_from_exponential(beta: f64, beta_prime: f64) -> f64 {
    0.5 * (1.0 + 2.0 * beta - 2.0 * beta_prime)
}

fn position_tolerance(opts: &NewtonOptions, q: &DVector<f64>) -> NewtonOptions {
    NewtonOptions {
        tol: opts.tol * q.amax().max(1.0),
        ..*opts
    }
}

/// One classical Newmark step for `q̈ = −M⁻¹∇V(q)`, ignoring the constraints.
///
/// The position update is implicit in `q_{k+1}` only (solved by Newton from
/// the Störmer predictor); the velocity update is then explicit.
pub fn newmark_step(sys: &MechanicalSystem, s: &State, p: &ClassicalNewmarkParams) -> Result<State> {
    p.validate()?;
    sys.check_state(s)?;
    let h = p.h;
    let hh = 0.5 * h * h;
    let a0 = sys.unconstrained_acceleration(&s.q)?;
    let explicit = &s.q + &s.v * h + &a0 * ((1.0 - 2.0 * p.beta) * hh);

    let q1 = if p.beta == 0.0 {
        explicit
    } else {
        let predictor = &explicit + &a0 * (2.0 * p.beta * hh);
        let opts = position_tolerance(&NewtonOptions::default(), &s.q);
        newton::solve(
            |q1| Ok(q1 - &explicit - sys.unconstrained_acceleration(q1)? * (2.0 * p.beta * hh)),
            |_, r| r.amax(),
            predictor,
            &opts,
        )?
        .x
    };
    let a1 = sys.unconstrained_acceleration(&q1)?;
    let v1 = &s.v + (&a0 * (1.0 - p.gamma) + &a1 * p.gamma) * h;
    Ok(State::new(q1, v1))
}

/// The exponential method with discretizations `exp^β` forward and `exp^β′`
/// backward:
///
/// ```text
/// q_{k+1} = q_k + h v_k + h²/2 (1−2β) Γ(q_k) + h² β Γ(q_{k+1})
/// q_k     = q_{k+1} − h v_{k+1} + h²/2 (1−2β′) Γ(q_{k+1}) + h² β′ Γ(q_k)
/// ```
///
/// solved jointly for `(q_{k+1}, v_{k+1})`. Equivalent to the classical step
/// with `γ` from [`gamma_from_exponential`].
pub fn exponential_method_step(
    sys: &MechanicalSystem,
    s: &State,
    beta: f64,
    beta_prime: f64,
    h: f64,
) -> Result<State> {
    sys.check_state(s)?;
    for (name, val) in [("beta", beta), ("beta'", beta_prime)] {
        if !(0.0..=0.5).contains(&val) {
            return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1/2], got {val}")));
        }
    }
    if h == 0.0 {
        return Ok(s.clone());
    }
    let n = sys.dim();
    let hh = 0.5 * h * h;
    let a0 = sys.unconstrained_acceleration(&s.q)?;

    // Unknowns are (q_{k+1}, h v_{k+1}).
    let residual = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let q1 = x.rows(0, n).into_owned();
        let w = x.rows(n, n);
        let a1 = sys.unconstrained_acceleration(&q1)?;
        let forward = &q1 - &s.q - &s.v * h - &a0 * ((1.0 - 2.0 * beta) * hh) - &a1 * (2.0 * beta * hh);
        let backward = &s.q - &q1 + w - &a1 * ((1.0 - 2.0 * beta_prime) * hh) - &a0 * (2.0 * beta_prime * hh);
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&forward);
        out.rows_mut(n, n).copy_from(&backward);
        Ok(out)
    };
    let mut x0 = DVector::zeros(2 * n);
    x0.rows_mut(0, n).copy_from(&(&s.q + &s.v * h + &a0 * hh));
    x0.rows_mut(n, n).copy_from(&((&s.v + &a0 * h) * h));
    let opts = position_tolerance(&NewtonOptions::default(), &s.q);
    let x = newton::solve(residual, |_, r| r.amax(), x0, &opts)?.x;
    Ok(State::new(x.rows(0, n).into_owned(), x.rows(n, n) / h))
}

/// Vector field of the constrained equations with the continuous multiplier.
fn constrained_field(sys: &MechanicalSystem, q: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let s = State::new(q.clone(), v.clone());
    let lam = sys.continuous_multipliers(&s)?;
    sys.gamma_nh(q, &lam)
}

/// One classical fourth-order Runge–Kutta step of `q̇ = v, v̇ = Γ_nh(q, v, λ(q, v))`.
pub fn rk4_constrained_step(sys: &MechanicalSystem, s: &State, h: f64) -> Result<State> {
    sys.check_state(s)?;
    let (q, v) = (&s.q, &s.v);
    let k1q = v.clone();
    let k1v = constrained_field(sys, q, v)?;

    let q2 = q + &k1q * (0.5 * h);
    let v2 = v + &k1v * (0.5 * h);
    let k2v = constrained_field(sys, &q2, &v2)?;
    let k2q = v2;

    let q3 = q + &k2q * (0.5 * h);
    let v3 = v + &k2v * (0.5 * h);
    let k3v = constrained_field(sys, &q3, &v3)?;
    let k3q = v3;

    let q4 = q + &k3q * h;
    let v4 = v + &k3v * h;
    let k4v = constrained_field(sys, &q4, &v4)?;
    let k4q = v4;

    let q_next = q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
    let v_next = v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    Ok(State::new(q_next, v_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use nalgebra::DMatrix;

    fn oscillator() -> MechanicalSystem {
        MechanicalSystem::new(
            "harmonic oscillator",
            DMatrix::identity(1, 1),
            1,
            |q| 0.5 * q[0] * q[0],
            |q| q.clone(),
            |_| DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    fn pendulum_pair() -> MechanicalSystem {
        MechanicalSystem::new(
            "coupled pendulums",
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            1,
            |q| -q[0].cos() - 0.5 * q[1].cos() + 0.1 * (q[0] - q[1]).powi(2),
            |q| {
                DVector::from_column_slice(&[
                    q[0].sin() + 0.2 * (q[0] - q[1]),
                    0.5 * q[1].sin() - 0.2 * (q[0] - q[1]),
                ])
            },
            |_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap()
    }

    fn oscillator_error(beta: f64, gamma: f64, h: f64) -> f64 {
        let sys = oscillator();
        let mut s = State::from_slices(&[1.0], &[0.0]);
        let steps = (1.0 / h).round() as usize;
        let p = ClassicalNewmarkParams::new(beta, gamma, h).unwrap();
        for _ in 0..steps {
            s = newmark_step(&sys, &s, &p).unwrap();
        }
        (s.q[0] - 1f64.cos()).abs().max((s.v[0] + 1f64.sin()).abs())
    }

    #[test]
    fn free_particle_moves_straight() {
        let sys = catalog::nonholonomic_particle();
        let s = State::from_slices(&[1.0, 2.0, 3.0], &[0.5, -1.0, 0.25]);
        for (beta, gamma) in [(0.0, 0.5), (0.25, 0.5), (0.4, 0.9)] {
            let p = ClassicalNewmarkParams::new(beta, gamma, 0.3).unwrap();
            let out = newmark_step(&sys, &s, &p).unwrap();
            assert!((&out.q - (&s.q + &s.v * 0.3)).amax() < 1e-15);
            assert_eq!(out.v, s.v);
        }
    }

    #[test]
    fn stormer_is_explicit() {
        let sys = pendulum_pair();
        let s = State::from_slices(&[0.4, -0.3], &[0.1, 0.2]);
        let h = 0.1;
        let p = ClassicalNewmarkParams::new(0.0, 0.5, h).unwrap();
        let out = newmark_step(&sys, &s, &p).unwrap();
        let a0 = sys.unconstrained_acceleration(&s.q).unwrap();
        let q1 = &s.q + &s.v * h + &a0 * (0.5 * h * h);
        assert!((&out.q - &q1).amax() < 1e-15);
        let a1 = sys.unconstrained_acceleration(&q1).unwrap();
        assert!((&out.v - (&s.v + (a0 + a1) * (0.5 * h))).amax() < 1e-15);
    }

    #[test]
    fn trapezoidal_rule_is_second_order() {
        let e1 = oscillator_error(0.25, 0.5, 0.01);
        let e2 = oscillator_error(0.25, 0.5, 0.005);
        let ratio = e1 / e2;
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn order_drops_away_from_half_gamma() {
        let order = |beta, gamma| {
            (oscillator_error(beta, gamma, 0.02) / oscillator_error(beta, gamma, 0.01)).log2()
        };
        assert!(order(0.25, 0.5) >= 1.9);
        assert!(order(0.0, 0.5) >= 1.9);
        assert!(order(0.25, 0.75) <= 1.3);
    }

    #[test]
    fn implicit_step_satisfies_its_equations() {
        let sys = pendulum_pair();
        let s = State::from_slices(&[1.0, -0.5], &[0.3, 0.7]);
        let p = ClassicalNewmarkParams::new(0.3, 0.6, 0.2).unwrap();
        let out = newmark_step(&sys, &s, &p).unwrap();
        let a0 = sys.unconstrained_acceleration(&s.q).unwrap();
        let a1 = sys.unconstrained_acceleration(&out.q).unwrap();
        let hh = 0.02;
        let rq = &out.q - (&s.q + &s.v * 0.2 + (&a0 * 0.4 + &a1 * 0.6) * hh);
        assert!(rq.amax() < 1e-12);
    }

    #[test]
    fn exponential_method_matches_newmark_on_grid() {
        let sys = pendulum_pair();
        let states = [
            State::from_slices(&[0.4, -0.3], &[0.1, 0.2]),
            State::from_slices(&[-1.2, 2.0], &[-0.8, 0.05]),
        ];
        let grid = [0.0, 0.2, 0.5];
        for s in &states {
            for &b in &grid {
                for &bp in &grid {
                    let h = 0.15;
                    let exp = exponential_method_step(&sys, s, b, bp, h).unwrap();
                    let p = ClassicalNewmarkParams::new(b, gamma_from_exponential(b, bp), h).unwrap();
                    let nm = newmark_step(&sys, s, &p).unwrap();
                    assert!(exp.distance(&nm) < 1e-10, "beta {b}, beta' {bp}");
                }
            }
        }
    }

    #[test]
    fn exponential_method_special_cases() {
        let sys = pendulum_pair();
        let s = State::from_slices(&[0.4, -0.3], &[0.1, 0.2]);
        assert_eq!(exponential_method_step(&sys, &s, 0.2, 0.1, 0.0).unwrap(), s);

        let exp = exponential_method_step(&sys, &s, 0.0, 0.0, 0.1).unwrap();
        let nm = newmark_step(&sys, &s, &ClassicalNewmarkParams::new(0.0, 0.5, 0.1).unwrap()).unwrap();
        assert!(exp.distance(&nm) < 1e-12);

        // β = 0, β′ = ½: forward Störmer position, backward equation with
        // λ-free end point, which gives v₁ = v₀ + h a₀ (γ = 0).
        let h = 0.1;
        let exp = exponential_method_step(&sys, &s, 0.0, 0.5, h).unwrap();
        let a0 = sys.unconstrained_acceleration(&s.q).unwrap();
        assert!((&exp.q - (&s.q + &s.v * h + &a0 * (0.5 * h * h))).amax() < 1e-12);
        assert!((&exp.v - (&s.v + &a0 * h)).amax() < 1e-10);
        assert_eq!(gamma_from_exponential(0.0, 0.5), 0.0);
        assert_eq!(gamma_from_exponential(0.5, 0.0), 1.0);
    }

    #[test]
    fn exponential_method_is_a_discretized_exponential_map() {
        // q(h) − q and q(h) − 2q + q(−h) recover v and Γ as h → 0.
        let sys = pendulum_pair();
        let s = State::from_slices(&[0.4, -0.3], &[0.1, 0.2]);
        let accel = sys.unconstrained_acceleration(&s.q).unwrap();
        for h in [1e-3, 1e-4] {
            let fwd = exponential_method_step(&sys, &s, 0.2, 0.1, h).unwrap();
            let bwd = exponential_method_step(&sys, &s, 0.2, 0.1, -h).unwrap();
            let first = (&fwd.q - &bwd.q) / (2.0 * h);
            let second = (&fwd.q - &s.q * 2.0 + &bwd.q) / (h * h);
            assert!((first - &s.v).amax() < 10.0 * h * h + 1e-9);
            assert!((second - &accel).amax() < 10.0 * h + 1e-5);
        }
    }

    #[test]
    fn rk4_free_flight() {
        let sys = MechanicalSystem::new(
            "free",
            DMatrix::identity(3, 3),
            1,
            |_| 0.0,
            |q| DVector::zeros(q.len()),
            |_| DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
        )
        .unwrap();
        let s = State::from_slices(&[1.0, 0.0, 0.0], &[0.3, -0.2, 0.0]);
        let out = rk4_constrained_step(&sys, &s, 0.5).unwrap();
        assert!((&out.q - (&s.q + &s.v * 0.5)).amax() < 1e-15);
        assert!((&out.v - &s.v).amax() < 1e-15);
    }

    #[test]
    fn rk4_keeps_multiplier_consistent() {
        // d/dt (μ(q) v) stays at the finite-difference noise level along a
        // short constrained trajectory.
        let sys = catalog::chaotic_particle();
        let mut s = catalog::chaotic_initial_state();
        let h = 1e-3;
        let mut prev = sys.constraint_residual(&s).unwrap()[0];
        for _ in 0..50 {
            s = rk4_constrained_step(&sys, &s, h).unwrap();
            let cur = sys.constraint_residual(&s).unwrap()[0];
            assert!(((cur - prev) / h).abs() <= 1e-6);
            prev = cur;
        }
    }
}
