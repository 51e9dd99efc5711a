//! The nonholonomic Newmark family `F^{β,β′,α}_h`.
//!
//! One step maps an admissible `(q_k, v_k)` to `(q_{k+1}, v_{k+1})` by solving
//! four blocks of equations for `(q_{k+1}, v_{k+1}, λ_k, λ′_{k+1})`:
//!
//! ```text
//! (i)   q_{k+1} = q_k + h v_k + h²/2 ((1−2β) Γ(q_k, λ_k) + 2β Γ(q_{k+1}, λ′_{k+1}))
//! (ii)  q_k     = q_{k+1} − h v_{k+1} + h²/2 (2β′ Γ(q_k, λ_k) + (1−2β′) Γ(q_{k+1}, λ′_{k+1}))
//! (iii) Φ(q_k, q_{k+1}) = 0
//! (iv)  μ(q_{k+1}) v_{k+1} = 0
//! ```
//!
//! where `Γ(q, λ) = −M⁻¹∇V(q) + M⁻¹μ(q)ᵀλ` and `Φ` is one of the two
//! discretizations of the constraint in [`Discretization`].

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mechanics::{solve_gram, MechanicalSystem, Multipliers, State};
use crate::newton::{self, NewtonOptions};

/// Guard on `|β + β′ − ½|`.
pub const ILL_CONDITIONING_TOL: f64 = 1e-9;

/// How the velocity constraint is discretized between `q_k` and `q_{k+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Discretization {
    /// `⟨μ((1−α) q_k + α q_{k+1}), (q_{k+1} − q_k)/h⟩`
    #[default]
    MidpointArgument,
    /// `⟨(1−α) μ(q_k) + α μ(q_{k+1}), (q_{k+1} − q_k)/h⟩`
    FormAverage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewmarkParams {
    pub beta: f64,
    pub beta_prime: f64,
    pub alpha: f64,
    pub discretization: Discretization,
}

impl NewmarkParams {
    pub fn new(beta: f64, beta_prime: f64, alpha: f64, discretization: Discretization) -> Result<Self> {
        let p = Self {
            beta,
            beta_prime,
            alpha,
            discretization,
        };
        p.validate()?;
        Ok(p)
    }

    /// `F^{β,β′,α}` with the midpoint-argument discretization.
    pub fn midpoint(beta: f64, beta_prime: f64, alpha: f64) -> Result<Self> {
        Self::new(beta, beta_prime, alpha, Discretization::MidpointArgument)
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |x: f64, hi: f64| x.is_finite() && (0.0..=hi).contains(&x);
        if !in_range(self.beta, 0.5) || !in_range(self.beta_prime, 0.5) {
            return Err(Error::InvalidParameter(format!(
                "beta and beta' must lie in [0, 1/2], got ({}, {})",
                self.beta, self.beta_prime
            )));
        }
        if !in_range(self.alpha, 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        let sum = self.beta + self.beta_prime;
        if (sum - 0.5).abs() <= ILL_CONDITIONING_TOL {
            return Err(Error::IllConditioned { sum });
        }
        Ok(())
    }

    /// Parameters of the adjoint method: `(F^{β,β′,α}_h)* = F^{β′,β,1−α}_h`.
    pub fn adjoint(&self) -> Self {
        Self {
            beta: self.beta_prime,
            beta_prime: self.beta,
            alpha: 1.0 - self.alpha,
            discretization: self.discretization,
        }
    }

    pub fn is_explicit_000(&self) -> bool {
        self.beta == 0.0 && self.beta_prime == 0.0 && self.alpha == 0.0
    }
}

/// Unknowns of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepUnknowns {
    pub q_next: DVector<f64>,
    pub v_next: DVector<f64>,
    /// `λ_k`, acting at the start point.
    pub lambda_k: Multipliers,
    /// `λ′_{k+1}`, acting at the end point.
    pub lambda_next: Multipliers,
}

/// The pair of multipliers produced by a step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMultipliers {
    pub current: Multipliers,
    pub next: Multipliers,
}

impl StepMultipliers {
    pub fn zeros(n: usize) -> Self {
        Self {
            current: DVector::zeros(n),
            next: DVector::zeros(n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: State,
    pub multipliers: StepMultipliers,
    /// Newton iterations, summed over sub-steps.
    pub iterations: usize,
    /// Max-norm of the step equations at the accepted solution.
    pub residual_norm: f64,
    /// Number of elementary steps performed (more than one for compositions).
    pub substeps: usize,
    /// Largest `‖Φ(q_k, q_{k+1})‖∞` over the elementary steps.
    pub discrete_constraint_norm: f64,
}

impl StepResult {
    pub(crate) fn identity(sys: &MechanicalSystem, s: &State) -> Self {
        Self {
            state: s.clone(),
            multipliers: StepMultipliers::zeros(sys.n_constraints()),
            iterations: 0,
            residual_norm: 0.0,
            substeps: 1,
            discrete_constraint_norm: 0.0,
        }
    }
}

fn interpolate(q_k: &DVector<f64>, q_next: &DVector<f64>, alpha: f64) -> DVector<f64> {
    q_k * (1.0 - alpha) + q_next * alpha
}

/// Values of the discrete constraint `Φ(q_k, q_{k+1})`. `q_{k+1}` lies on the
/// discrete constraint space exactly when this vanishes.
pub fn discrete_constraint(
    sys: &MechanicalSystem,
    q_k: &DVector<f64>,
    q_next: &DVector<f64>,
    p: &NewmarkParams,
    h: f64,
) -> DVector<f64> {
    let dq = (q_next - q_k) / h;
    discrete_form(sys, q_k, q_next, p) * dq
}

fn discrete_form(
    sys: &MechanicalSystem,
    q_k: &DVector<f64>,
    q_next: &DVector<f64>,
    p: &NewmarkParams,
) -> nalgebra::DMatrix<f64> {
    match p.discretization {
        Discretization::MidpointArgument => sys.constraint_forms(&interpolate(q_k, q_next, p.alpha)),
        Discretization::FormAverage => {
            sys.constraint_forms(q_k) * (1.0 - p.alpha) + sys.constraint_forms(q_next) * p.alpha
        }
    }
}

/// Stacked residual of the four step blocks, in the order (i), (ii), (iii), (iv).
pub fn residual(
    sys: &MechanicalSystem,
    s_k: &State,
    u: &StepUnknowns,
    p: &NewmarkParams,
    h: f64,
) -> Result<DVector<f64>> {
    let n = sys.dim();
    let c = sys.n_constraints();
    let g0 = sys.gamma_nh(&s_k.q, &u.lambda_k)?;
    let g1 = sys.gamma_nh(&u.q_next, &u.lambda_next)?;
    let hh = 0.5 * h * h;

    let forward = &u.q_next
        - (&s_k.q + &s_k.v * h + (&g0 * (1.0 - 2.0 * p.beta) + &g1 * (2.0 * p.beta)) * hh);
    let backward = &s_k.q
        - (&u.q_next - &u.v_next * h
            + (&g0 * (2.0 * p.beta_prime) + &g1 * (1.0 - 2.0 * p.beta_prime)) * hh);
    let discrete = discrete_constraint(sys, &s_k.q, &u.q_next, p, h);
    let velocity = sys.constraint_forms(&u.q_next) * &u.v_next;

    let mut out = DVector::zeros(2 * n + 2 * c);
    out.rows_mut(0, n).copy_from(&forward);
    out.rows_mut(n, n).copy_from(&backward);
    out.rows_mut(2 * n, c).copy_from(&discrete);
    out.rows_mut(2 * n + c, c).copy_from(&velocity);
    Ok(out)
}

/// Quantities at the start point that stay fixed during the Newton solve.
struct StartPoint {
    accel: DVector<f64>,
    reaction: nalgebra::DMatrix<f64>,
}

/// Newton unknowns are `(q_{k+1}, h v_{k+1}, h²/2 λ_k, h²/2 λ′_{k+1})` and the
/// constraint rows are multiplied by `h`, which keeps every Jacobian block
/// of order one at small step sizes.
struct ScaledSystem<'a> {
    sys: &'a MechanicalSystem,
    s_k: &'a State,
    p: &'a NewmarkParams,
    h: f64,
    start: StartPoint,
}

impl ScaledSystem<'_> {
    fn n(&self) -> usize {
        self.sys.dim()
    }

    fn c(&self) -> usize {
        self.sys.n_constraints()
    }

    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, c) = (self.n(), self.c());
        let (p, h) = (self.p, self.h);
        let hh = 0.5 * h * h;
        let q1 = x.rows(0, n).into_owned();
        let w = x.rows(n, n);
        let s0 = x.rows(2 * n, c);
        let s1 = x.rows(2 * n + c, c);

        let a1 = self.sys.unconstrained_acceleration(&q1)?;
        let z1 = self.sys.reaction_directions(&q1)?;
        let g0 = &self.start.accel * hh + &self.start.reaction * s0;
        let g1 = a1 * hh + z1 * s1;

        let q0 = &self.s_k.q;
        let forward = &q1 - q0 - &self.s_k.v * h - &g0 * (1.0 - 2.0 * p.beta) - &g1 * (2.0 * p.beta);
        let backward =
            q0 - &q1 + w - &g0 * (2.0 * p.beta_prime) - &g1 * (1.0 - 2.0 * p.beta_prime);
        let discrete = discrete_form(self.sys, q0, &q1, p) * (&q1 - q0);
        let velocity = self.sys.constraint_forms(&q1) * w;

        let mut out = DVector::zeros(2 * n + 2 * c);
        out.rows_mut(0, n).copy_from(&forward);
        out.rows_mut(n, n).copy_from(&backward);
        out.rows_mut(2 * n, c).copy_from(&discrete);
        out.rows_mut(2 * n + c, c).copy_from(&velocity);
        Ok(out)
    }

    /// Position rows relative to the configuration scale, constraint rows
    /// unscaled (divided back by `h`).
    fn checked_norm(&self, r: &DVector<f64>) -> f64 {
        let (n, c) = (self.n(), self.c());
        let scale = self.s_k.q.amax().max(1.0);
        let positions = r.rows(0, 2 * n).amax() / scale;
        let constraints = r.rows(2 * n, 2 * c).amax() / self.h.abs();
        positions.max(constraints)
    }

    fn pack(&self, u: &StepUnknowns) -> DVector<f64> {
        let (n, c) = (self.n(), self.c());
        let hh = 0.5 * self.h * self.h;
        let mut x = DVector::zeros(2 * n + 2 * c);
        x.rows_mut(0, n).copy_from(&u.q_next);
        x.rows_mut(n, n).copy_from(&(&u.v_next * self.h));
        x.rows_mut(2 * n, c).copy_from(&(&u.lambda_k * hh));
        x.rows_mut(2 * n + c, c).copy_from(&(&u.lambda_next * hh));
        x
    }

    fn unpack(&self, x: &DVector<f64>) -> StepUnknowns {
        let (n, c) = (self.n(), self.c());
        let hh = 0.5 * self.h * self.h;
        StepUnknowns {
            q_next: x.rows(0, n).into_owned(),
            v_next: x.rows(n, n) / self.h,
            lambda_k: x.rows(2 * n, c) / hh,
            lambda_next: x.rows(2 * n + c, c) / hh,
        }
    }
}

/// Störmer-type predictor using the warm-start multipliers.
fn predictor(sys: &MechanicalSystem, s_k: &State, h: f64, warm: &Multipliers) -> Result<StepUnknowns> {
    let g0 = sys.gamma_nh(&s_k.q, warm)?;
    Ok(StepUnknowns {
        q_next: &s_k.q + &s_k.v * h + &g0 * (0.5 * h * h),
        v_next: &s_k.v + &g0 * h,
        lambda_k: warm.clone(),
        lambda_next: warm.clone(),
    })
}

/// One step of `F^{β,β′,α}_h` by damped Newton on the full residual.
///
/// `warm` seeds both multipliers (typically `λ′` of the previous step). Any
/// nonzero `h` is accepted, negative steps included; `h = 0` is the identity.
pub fn solve_step(
    sys: &MechanicalSystem,
    s_k: &State,
    p: &NewmarkParams,
    h: f64,
    warm: Option<&Multipliers>,
) -> Result<StepResult> {
    solve_step_with(sys, s_k, p, h, warm, &NewtonOptions::default())
}

pub fn solve_step_with(
    sys: &MechanicalSystem,
    s_k: &State,
    p: &NewmarkParams,
    h: f64,
    warm: Option<&Multipliers>,
    opts: &NewtonOptions,
) -> Result<StepResult> {
    p.validate()?;
    sys.check_state(s_k)?;
    if !h.is_finite() {
        return Err(Error::InvalidParameter(format!("step size must be finite, got {h}")));
    }
    if h == 0.0 {
        return Ok(StepResult::identity(sys, s_k));
    }
    // The regularity of the system is a precondition of the method.
    sys.constraint_gram(&s_k.q)?;

    let zeros = DVector::zeros(sys.n_constraints());
    let warm = warm.unwrap_or(&zeros);
    let scaled = ScaledSystem {
        sys,
        s_k,
        p,
        h,
        start: StartPoint {
            accel: sys.unconstrained_acceleration(&s_k.q)?,
            reaction: sys.reaction_directions(&s_k.q)?,
        },
    };
    let x0 = scaled.pack(&predictor(sys, s_k, h, warm)?);
    let outcome = newton::solve(
        |x| scaled.residual(x),
        |_, r| scaled.checked_norm(r),
        x0,
        opts,
    )?;
    let u = scaled.unpack(&outcome.x);
    sys.constraint_gram(&u.q_next)?;

    let full = residual(sys, s_k, &u, p, h)?;
    let discrete = discrete_constraint(sys, &s_k.q, &u.q_next, p, h).amax();
    Ok(StepResult {
        state: State::new(u.q_next, u.v_next),
        multipliers: StepMultipliers {
            current: u.lambda_k,
            next: u.lambda_next,
        },
        iterations: outcome.iterations,
        residual_norm: full.amax(),
        substeps: 1,
        discrete_constraint_norm: discrete,
    })
}

/// Closed-form `F^{0,0,0}_h`: both multipliers follow from applying the
/// constraint forms to the position equations, so no iteration is needed.
///
/// `λ_k = C(q_k)⁻¹ μ(q_k)(M⁻¹∇V(q_k) − 2 v_k / h)` (the velocity term vanishes
/// for admissible states), then
/// `λ′_{k+1} = −C(q_{k+1})⁻¹ [2/h · μ(q_{k+1})(q_{k+1} − q_k)/h − μ(q_{k+1}) M⁻¹∇V(q_{k+1})]`.
pub fn explicit_step_000(
    sys: &MechanicalSystem,
    s_k: &State,
    discretization: Discretization,
    h: f64,
) -> Result<StepResult> {
    sys.check_state(s_k)?;
    if !h.is_finite() {
        return Err(Error::InvalidParameter(format!("step size must be finite, got {h}")));
    }
    if h == 0.0 {
        return Ok(StepResult::identity(sys, s_k));
    }
    let hh = 0.5 * h * h;
    let q0 = &s_k.q;

    let mu0 = sys.constraint_forms(q0);
    let a0 = sys.unconstrained_acceleration(q0)?;
    let gram0 = sys.constraint_gram(q0)?;
    let rhs0 = &mu0 * &a0 + &mu0 * &s_k.v * (2.0 / h);
    let lambda_k = -solve_gram(gram0, &rhs0)?;
    let q1 = q0 + &s_k.v * h + sys.gamma_nh(q0, &lambda_k)? * hh;

    let mu1 = sys.constraint_forms(&q1);
    let a1 = sys.unconstrained_acceleration(&q1)?;
    let gram1 = sys.constraint_gram(&q1)?;
    let dq = (&q1 - q0) / h;
    let rhs1 = &mu1 * &dq * (2.0 / h) + &mu1 * &a1;
    let lambda_next = -solve_gram(gram1, &rhs1)?;
    let v1 = &dq + sys.gamma_nh(&q1, &lambda_next)? * (0.5 * h);

    let p = NewmarkParams {
        beta: 0.0,
        beta_prime: 0.0,
        alpha: 0.0,
        discretization,
    };
    let u = StepUnknowns {
        q_next: q1,
        v_next: v1,
        lambda_k,
        lambda_next,
    };
    let full = residual(sys, s_k, &u, &p, h)?;
    let discrete = discrete_constraint(sys, q0, &u.q_next, &p, h).amax();
    Ok(StepResult {
        state: State::new(u.q_next, u.v_next),
        multipliers: StepMultipliers {
            current: u.lambda_k,
            next: u.lambda_next,
        },
        iterations: 0,
        residual_norm: full.amax(),
        substeps: 1,
        discrete_constraint_norm: discrete,
    })
}

/// Defect of the second-difference identity satisfied by two consecutive
/// `F^{0,0,α}` steps through `q_k, q_{k+1}, q_{k+2}`:
///
/// `(q_{k+2} − 2q_{k+1} + q_k)/h² + M⁻¹∇V(q_{k+1}) − ½(λ_{k+1} + λ′_{k+1}) M⁻¹μ(q_{k+1})ᵀ`
///
/// `lambda_start` is `λ_{k+1}` from the step leaving `q_{k+1}`,
/// `lambda_end` is `λ′_{k+1}` from the step arriving there. The discrete
/// Lagrange–d'Alembert multiplier is `h(λ_{k+1} + λ′_{k+1})/2`.
pub fn dla_identity_residual(
    sys: &MechanicalSystem,
    triple: (&DVector<f64>, &DVector<f64>, &DVector<f64>),
    lambda_start: &Multipliers,
    lambda_end: &Multipliers,
    h: f64,
) -> Result<DVector<f64>> {
    let (q0, q1, q2) = triple;
    let second_difference = (q2 - q1 * 2.0 + q0) / (h * h);
    let lam = (lambda_start + lambda_end) * 0.5;
    Ok(second_difference - sys.gamma_nh(q1, &lam)?)
}

/// The discrete Lagrange–d'Alembert multiplier `Λ = h(λ_{k+1} + λ′_{k+1})/2`.
pub fn dla_multiplier(lambda_start: &Multipliers, lambda_end: &Multipliers, h: f64) -> Multipliers {
    (lambda_start + lambda_end) * (0.5 * h)
}
