//! One-step methods as values: a uniform handle over the Newmark family and
//! the RK4 baseline, plus the adjoint, composition and triple-jump
//! combinators.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mechanics::{MechanicalSystem, Multipliers, State};
use crate::newmark::rk4_constrained_step;
use crate::newton::{self, NewtonOptions};
use crate::nh_newmark::{
    explicit_step_000, solve_step, Discretization, NewmarkParams, StepMultipliers, StepResult,
};

/// Descriptive metadata of a method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodInfo {
    pub name: String,
    pub nominal_order: u32,
}

/// A one-step map `(system, state, h) → state`.
pub trait Integrator: Send + Sync {
    fn step(
        &self,
        sys: &MechanicalSystem,
        state: &State,
        h: f64,
        warm: Option<&Multipliers>,
    ) -> Result<StepResult>;

    fn info(&self) -> MethodInfo;

    /// A closed form of the adjoint, when one is known.
    fn structural_adjoint(&self) -> Option<MethodHandle> {
        None
    }
}

/// Shared, immutable handle to an [`Integrator`].
#[derive(Clone)]
pub struct MethodHandle(Arc<dyn Integrator>);

impl fmt::Debug for MethodHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("MethodHandle").field(&self.info().name).finish()
    }
}

impl MethodHandle {
    pub fn new(method: impl Integrator + 'static) -> Self {
        Self(Arc::new(method))
    }

    pub fn step(
        &self,
        sys: &MechanicalSystem,
        state: &State,
        h: f64,
        warm: Option<&Multipliers>,
    ) -> Result<StepResult> {
        self.0.step(sys, state, h, warm)
    }

    pub fn info(&self) -> MethodInfo {
        self.0.info()
    }

    pub fn name(&self) -> String {
        self.0.info().name
    }

    /// `F^{β,β′,α}` solved by Newton.
    pub fn newmark(params: NewmarkParams) -> Result<Self> {
        params.validate()?;
        Ok(Self::new(NonholonomicNewmark { params }))
    }

    /// The closed-form `F^{0,0,0}`.
    pub fn explicit_000(discretization: Discretization) -> Self {
        Self::new(Explicit000 { discretization })
    }

    pub fn rk4() -> Self {
        Self::new(Rk4)
    }

    pub fn identity() -> Self {
        Self::new(Identity)
    }
}

#[derive(Debug, Clone, Copy)]
struct NonholonomicNewmark {
    params: NewmarkParams,
}

impl Integrator for NonholonomicNewmark {
    fn step(
        &self,
        sys: &MechanicalSystem,
        state: &State,
        h: f64,
        warm: Option<&Multipliers>,
    ) -> Result<StepResult> {
        solve_step(sys, state, &self.params, h, warm)
    }

    fn info(&self) -> MethodInfo {
        let p = &self.params;
        let symmetric = p.beta == p.beta_prime && p.alpha == 0.5;
        MethodInfo {
            name: format!(
                "F^({},{},{}){}",
                p.beta,
                p.beta_prime,
                p.alpha,
                match p.discretization {
                    Discretization::MidpointArgument => "",
                    Discretization::FormAverage => " form-average",
                }
            ),
            nominal_order: if symmetric { 2 } else { 1 },
        }
    }

    fn structural_adjoint(&self) -> Option<MethodHandle> {
        Some(MethodHandle::new(NonholonomicNewmark {
            params: self.params.adjoint(),
        }))
    }
}

#[derive(Debug, Clone, Copy)]
struct Explicit000 {
    discretization: Discretization,
}

impl Integrator for Explicit000 {
    fn step(
        &self,
        sys: &MechanicalSystem,
        state: &State,
        h: f64,
        _warm: Option<&Multipliers>,
    ) -> Result<StepResult> {
        explicit_step_000(sys, state, self.discretization, h)
    }

    fn info(&self) -> MethodInfo {
        MethodInfo {
            name: "F^(0,0,0) explicit".into(),
            nominal_order: 1,
        }
    }

    fn structural_adjoint(&self) -> Option<MethodHandle> {
        let params = NewmarkParams {
            beta: 0.0,
            beta_prime: 0.0,
            alpha: 1.0,
            discretization: self.discretization,
        };
        Some(MethodHandle::new(NonholonomicNewmark { params }))
    }
}

#[derive(Debug, Clone, Copy)]
struct Rk4;

impl Integrator for Rk4 {
    fn step(
        &self,
        sys: &MechanicalSystem,
        state: &State,
        h: f64,
        _warm: Option<&Multipliers>,
    ) -> Result<StepResult> {
        let start = sys.continuous_multipliers(state)?;
        let next = rk4_constrained_step(sys, state, h)?;
        let end = sys.continuous_multipliers(&next)?;
        Ok(StepResult {
            state: next,
            multipliers: StepMultipliers {
                current: start,
                next: end,
            },
            iterations: 0,
            residual_norm: 0.0,
            substeps: 1,
            discrete_constraint_norm: 0.0,
        })
    }

    fn info(&self) -> MethodInfo {
        MethodInfo {
            name: "RK4".into(),
            nominal_order: 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Identity;

impl Integrator for Identity {
    fn step(
        &self,
        sys: &MechanicalSystem,
        state: &State,
        _h: f64,
        warm: Option<&Multipliers>,
    ) -> Result<StepResult> {
        let mut out = StepResult::identity(sys, state);
        if let Some(w) = warm {
            out.multipliers = StepMultipliers {
                current: w.clone(),
                next: w.clone(),
            };
        }
        out.substeps = 0;
        Ok(out)
    }

    fn info(&self) -> MethodInfo {
        MethodInfo {
            name: "identity".into(),
            nominal_order: u32::MAX,
        }
    }

    fn structural_adjoint(&self) -> Option<MethodHandle> {
        Some(MethodHandle::identity())
    }
}

/// `Φ*_h = (Φ_{−h})⁻¹` computed by Gauss–Newton: find an admissible `s′`
/// with `Φ_{−h}(s′) = s`.
struct GenericAdjoint {
    inner: MethodHandle,
    opts: NewtonOptions,
}

impl Integrator for GenericAdjoint {
    fn step(
        &self,
        sys: &MechanicalSystem,
        state: &State,
        h: f64,
        warm: Option<&Multipliers>,
    ) -> Result<StepResult> {
        if h == 0.0 {
            return Ok(StepResult::identity(sys, state));
        }
        let n = sys.dim();
        let c = sys.n_constraints();
        let guess = self.inner.step(sys, state, h, warm)?;
        let warm_back = guess.multipliers.current.clone();

        let split = |x: &DVector<f64>| State::new(x.rows(0, n).into_owned(), x.rows(n, n).into_owned());
        // F_{−h} maps everything onto the distribution, so the admissibility
        // rows keep the least-squares problem well posed.
        let residual = |x: &DVector<f64>| -> Result<DVector<f64>> {
            let cand = split(x);
            let back = self.inner.step(sys, &cand, -h, Some(&warm_back))?;
            let mut out = DVector::zeros(2 * n + c);
            out.rows_mut(0, n).copy_from(&(&back.state.q - &state.q));
            out.rows_mut(n, n).copy_from(&((&back.state.v - &state.v) * h));
            out.rows_mut(2 * n, c).copy_from(&(sys.constraint_forms(&cand.q) * &cand.v * h));
            Ok(out)
        };
        let scale = state.q.amax().max(1.0);
        let mut x0 = DVector::zeros(2 * n);
        x0.rows_mut(0, n).copy_from(&guess.state.q);
        x0.rows_mut(n, n).copy_from(&guess.state.v);
        let outcome = newton::solve(
            residual,
            |_, r| r.rows(0, n).amax().max(r.rows(n, n + c).amax() / h.abs()) / scale,
            x0,
            &self.opts,
        )?;
        let result = split(&outcome.x);

        // Re-run the inverse once at the solution to report its multipliers,
        // which act in reversed roles.
        let back = self.inner.step(sys, &result, -h, Some(&warm_back))?;
        Ok(StepResult {
            state: result,
            multipliers: StepMultipliers {
                current: back.multipliers.next,
                next: back.multipliers.current,
            },
            iterations: outcome.iterations,
            residual_norm: outcome.residual_norm * scale,
            substeps: back.substeps,
            discrete_constraint_norm: back.discrete_constraint_norm,
        })
    }

    fn info(&self) -> MethodInfo {
        let inner = self.inner.info();
        MethodInfo {
            name: format!("adjoint({})", inner.name),
            nominal_order: inner.nominal_order,
        }
    }

    fn structural_adjoint(&self) -> Option<MethodHandle> {
        Some(self.inner.clone())
    }
}

/// Sequential application with step fractions; `stages[0]` runs first.
struct Composition {
    stages: Vec<(MethodHandle, f64)>,
    name: String,
    nominal_order: u32,
}

impl Integrator for Composition {
    fn step(
        &self,
        sys: &MechanicalSystem,
        state: &State,
        h: f64,
        warm: Option<&Multipliers>,
    ) -> Result<StepResult> {
        let mut current = state.clone();
        let mut carried = warm.cloned();
        let mut first_multiplier = None;
        let mut last = StepMultipliers::zeros(sys.n_constraints());
        let mut iterations = 0;
        let mut substeps = 0;
        let mut residual_norm: f64 = 0.0;
        let mut discrete: f64 = 0.0;

        for (method, fraction) in &self.stages {
            if *fraction == 0.0 {
                continue;
            }
            let res = method.step(sys, &current, fraction * h, carried.as_ref())?;
            iterations += res.iterations;
            substeps += res.substeps;
            residual_norm = residual_norm.max(res.residual_norm);
            discrete = discrete.max(res.discrete_constraint_norm);
            if first_multiplier.is_none() {
                first_multiplier = Some(res.multipliers.current.clone());
            }
            carried = Some(res.multipliers.next.clone());
            last = res.multipliers;
            current = res.state;
        }

        Ok(StepResult {
            state: current,
            multipliers: StepMultipliers {
                current: first_multiplier.unwrap_or(last.current),
                next: last.next,
            },
            iterations,
            residual_norm,
            substeps,
            discrete_constraint_norm: discrete,
        })
    }

    fn info(&self) -> MethodInfo {
        MethodInfo {
            name: self.name.clone(),
            nominal_order: self.nominal_order,
        }
    }

    fn structural_adjoint(&self) -> Option<MethodHandle> {
        // (Φ_{a h} ∘ Ψ_{b h})* = Ψ*_{b h} ∘ Φ*_{a h}
        let mut stages = Vec::with_capacity(self.stages.len());
        for (method, fraction) in self.stages.iter().rev() {
            stages.push((adjoint(method), *fraction));
        }
        Some(MethodHandle::new(Composition {
            stages,
            name: format!("adjoint({})", self.name),
            nominal_order: self.nominal_order,
        }))
    }
}

/// Adjoint of a method, `Φ*_h = (Φ_{−h})⁻¹`. Uses the closed form when the
/// method provides one (for the Newmark family `(F^{β,β′,α})* = F^{β′,β,1−α}`),
/// otherwise falls back to [`adjoint_generic`].
pub fn adjoint(method: &MethodHandle) -> MethodHandle {
    method
        .0
        .structural_adjoint()
        .unwrap_or_else(|| adjoint_generic(method))
}

/// Adjoint by solving `Φ_{−h}(s′) = s` numerically.
pub fn adjoint_generic(method: &MethodHandle) -> MethodHandle {
    MethodHandle::new(GenericAdjoint {
        inner: method.clone(),
        opts: NewtonOptions {
            tol: 1e-11,
            ..NewtonOptions::default()
        },
    })
}

/// `second_{f₂h} ∘ first_{f₁h}`; the fractions must sum to one.
pub fn compose(first: &MethodHandle, second: &MethodHandle, fractions: (f64, f64)) -> Result<MethodHandle> {
    compose_many(
        vec![(first.clone(), fractions.0), (second.clone(), fractions.1)],
        format!("{} then {}", first.name(), second.name()),
    )
}

fn compose_many(stages: Vec<(MethodHandle, f64)>, name: String) -> Result<MethodHandle> {
    let total: f64 = stages.iter().map(|(_, f)| f).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "composition fractions must sum to 1, got {total}"
        )));
    }
    let nominal_order = stages
        .iter()
        .filter(|(_, f)| *f != 0.0)
        .map(|(m, _)| m.info().nominal_order)
        .min()
        .unwrap_or(u32::MAX);
    Ok(MethodHandle::new(Composition {
        stages,
        name,
        nominal_order,
    }))
}

/// `Ψ_h = (F^{β,β′,0}_{h/2})* ∘ F^{β,β′,0}_{h/2}`; with `β = β′ = 0` this is
/// `F^{0,0,1}_{h/2} ∘ F^{0,0,0}_{h/2}`.
pub fn psi(beta: f64, beta_prime: f64, discretization: Discretization) -> Result<MethodHandle> {
    let base = MethodHandle::newmark(NewmarkParams::new(beta, beta_prime, 0.0, discretization)?)?;
    let composed = compose(&base, &adjoint(&base), (0.5, 0.5))?;
    let mut info_name = format!("Psi[beta={beta}, beta'={beta_prime}]");
    if discretization == Discretization::FormAverage {
        info_name.push_str(" form-average");
    }
    Ok(MethodHandle::new(Renamed {
        inner: composed,
        info: MethodInfo {
            name: info_name,
            nominal_order: 2,
        },
    }))
}

struct Renamed {
    inner: MethodHandle,
    info: MethodInfo,
}

impl Integrator for Renamed {
    fn step(
        &self,
        sys: &MechanicalSystem,
        state: &State,
        h: f64,
        warm: Option<&Multipliers>,
    ) -> Result<StepResult> {
        self.inner.step(sys, state, h, warm)
    }

    fn info(&self) -> MethodInfo {
        self.info.clone()
    }

    fn structural_adjoint(&self) -> Option<MethodHandle> {
        Some(adjoint(&self.inner))
    }
}

/// Triple-jump coefficients `γ₁ = 1/(2 − 2^{1/3})`, `γ₂ = −2^{1/3}/(2 − 2^{1/3})`.
pub fn triple_jump_coefficients() -> (f64, f64) {
    let cbrt2 = 2f64.cbrt();
    let g1 = 1.0 / (2.0 - cbrt2);
    let g2 = -cbrt2 / (2.0 - cbrt2);
    (g1, g2)
}

/// `base_{γ₁h} ∘ base_{γ₂h} ∘ base_{γ₁h}`. The base is expected to be a
/// symmetric method of order two.
pub fn triple_jump(base: &MethodHandle) -> Result<MethodHandle> {
    let (g1, g2) = triple_jump_coefficients();
    Ok(MethodHandle::new(Composition {
        stages: vec![(base.clone(), g1), (base.clone(), g2), (base.clone(), g1)],
        name: format!("triple-jump({})", base.name()),
        nominal_order: base.info().nominal_order + 2,
    }))
}
