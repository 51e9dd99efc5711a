//! Mechanical-type nonholonomic systems.
//!
//! A system is a Lagrangian `L = ½ vᵀ M v − V(q)` with constant mass matrix
//! together with linear velocity constraints `μ(q) v = 0`, where the rows of
//! `μ(q)` are the constraint one-forms. Everything the steppers need from the
//! continuous dynamics lives here: unconstrained accelerations, reaction
//! directions `Z = M⁻¹ μᵀ`, the Gram matrix `C = μ M⁻¹ μᵀ` and the continuous
//! Lagrange multipliers.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

type ScalarField = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
type VectorField = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type FormField = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Lagrange multipliers, one entry per constraint form.
pub type Multipliers = DVector<f64>;

/// Relative threshold below which the Gram matrix counts as singular.
pub const REGULARITY_TOL: f64 = 1e-10;

/// Relative step used for the finite-difference Jacobian of `μ`.
const FORM_FD_STEP: f64 = 1e-6;

/// A point of the tangent bundle: configuration and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl State {
    pub fn new(q: DVector<f64>, v: DVector<f64>) -> Self {
        Self { q, v }
    }

    pub fn from_slices(q: &[f64], v: &[f64]) -> Self {
        Self {
            q: DVector::from_column_slice(q),
            v: DVector::from_column_slice(v),
        }
    }

    /// Largest absolute entry over both `q` and `v`.
    pub fn max_abs(&self) -> f64 {
        self.q.amax().max(self.v.amax())
    }

    /// Max-norm distance between two states.
    pub fn distance(&self, other: &State) -> f64 {
        (&self.q - &other.q).amax().max((&self.v - &other.v).amax())
    }
}

/// A mechanical Lagrangian with constant mass matrix and linear velocity
/// constraints. Immutable after construction and cheap to clone.
#[derive(Clone)]
pub struct MechanicalSystem {
    name: String,
    dim: usize,
    n_constraints: usize,
    mass: DMatrix<f64>,
    mass_chol: Cholesky<f64, Dyn>,
    potential: Arc<ScalarField>,
    gradient: Arc<VectorField>,
    forms: Arc<FormField>,
}

impl fmt::Debug for MechanicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanicalSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("n_constraints", &self.n_constraints)
            .finish()
    }
}

impl MechanicalSystem {
    /// Builds a system. `forms(q)` must return an `n_constraints × n` matrix.
    ///
    /// The mass matrix is factorized once here; construction fails if it is
    /// not symmetric positive definite or if the closures return values of
    /// the wrong shape at the origin.
    pub fn new<P, G, F>(
        name: impl Into<String>,
        mass: DMatrix<f64>,
        n_constraints: usize,
        potential: P,
        gradient: G,
        forms: F,
    ) -> Result<Self>
    where
        P: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        let dim = mass.nrows();
        if mass.ncols() != dim {
            return Err(Error::DimensionMismatch {
                what: "mass matrix columns",
                expected: dim,
                got: mass.ncols(),
            });
        }
        if n_constraints == 0 || n_constraints > dim {
            return Err(Error::InvalidParameter(format!(
                "number of constraint forms must be in 1..={dim}, got {n_constraints}"
            )));
        }
        let asym = (&mass - mass.transpose()).amax();
        if asym > 1e-12 * mass.amax().max(1.0) {
            return Err(Error::MassNotPositiveDefinite);
        }
        let mass_chol = Cholesky::new(mass.clone()).ok_or(Error::MassNotPositiveDefinite)?;

        let origin = DVector::zeros(dim);
        let g0 = gradient(&origin);
        if g0.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "potential gradient",
                expected: dim,
                got: g0.len(),
            });
        }
        let mu0 = forms(&origin);
        if mu0.nrows() != n_constraints || mu0.ncols() != dim {
            return Err(Error::DimensionMismatch {
                what: "constraint forms",
                expected: n_constraints * dim,
                got: mu0.nrows() * mu0.ncols(),
            });
        }

        Ok(Self {
            name: name.into(),
            dim,
            n_constraints,
            mass,
            mass_chol,
            potential: Arc::new(potential),
            gradient: Arc::new(gradient),
            forms: Arc::new(forms),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Configuration dimension `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of constraint forms, `n − m`.
    pub fn n_constraints(&self) -> usize {
        self.n_constraints
    }

    /// Rank `m` of the constraint distribution.
    pub fn distribution_rank(&self) -> usize {
        self.dim - self.n_constraints
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        (self.potential)(q)
    }

    pub fn potential_gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(q)
    }

    /// The constraint one-forms `μ(q)` as rows.
    pub fn constraint_forms(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.forms)(q)
    }

    /// Solves `M x = b`.
    pub fn solve_mass(&self, b: &DVector<f64>) -> DVector<f64> {
        self.mass_chol.solve(b)
    }

    fn check_vec(&self, what: &'static str, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, s: &State) -> Result<()> {
        self.check_vec("configuration", &s.q)?;
        self.check_vec("velocity", &s.v)
    }

    fn check_multipliers(&self, lam: &DVector<f64>) -> Result<()> {
        if lam.len() != self.n_constraints {
            return Err(Error::DimensionMismatch {
                what: "multipliers",
                expected: self.n_constraints,
                got: lam.len(),
            });
        }
        Ok(())
    }

    /// Mechanical energy `½ vᵀ M v + V(q)`.
    pub fn energy(&self, s: &State) -> Result<f64> {
        self.check_state(s)?;
        Ok(0.5 * s.v.dot(&(&self.mass * &s.v)) + self.potential(&s.q))
    }

    /// `μ(q) v`; zero exactly when the state is admissible.
    pub fn constraint_residual(&self, s: &State) -> Result<DVector<f64>> {
        self.check_state(s)?;
        Ok(self.constraint_forms(&s.q) * &s.v)
    }

    pub fn is_admissible(&self, s: &State, tol: f64) -> Result<bool> {
        Ok(self.constraint_residual(s)?.amax() <= tol)
    }

    /// `−M⁻¹ ∇V(q)`.
    pub fn unconstrained_acceleration(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_vec("configuration", q)?;
        Ok(-self.solve_mass(&self.potential_gradient(q)))
    }

    /// Columns are the reaction directions `Z^a = M⁻¹ μ^a(q)ᵀ`.
    pub fn reaction_directions(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_vec("configuration", q)?;
        Ok(self.mass_chol.solve(&self.constraint_forms(q).transpose()))
    }

    /// `C(q) = μ(q) M⁻¹ μ(q)ᵀ`, checked for regularity.
    pub fn constraint_gram(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mu = {
            self.check_vec("configuration", q)?;
            self.constraint_forms(q)
        };
        let z = self.mass_chol.solve(&mu.transpose());
        let gram = &mu * z;
        check_regular(&gram)?;
        Ok(gram)
    }

    /// Directional derivative `(Dμ(q)·v)`, by central differences in each
    /// coordinate with step `10⁻⁶·max(1, ‖q‖∞)`.
    pub fn forms_derivative_along(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let step = FORM_FD_STEP * q.amax().max(1.0);
        let mut out = DMatrix::zeros(self.n_constraints, self.dim);
        let mut qp = q.clone();
        let mut qm = q.clone();
        for j in 0..self.dim {
            if v[j] == 0.0 {
                continue;
            }
            qp[j] = q[j] + step;
            qm[j] = q[j] - step;
            let diff = self.constraint_forms(&qp) - self.constraint_forms(&qm);
            out += diff * (v[j] / (2.0 * step));
            qp[j] = q[j];
            qm[j] = q[j];
        }
        out
    }

    /// Multipliers of the continuous nonholonomic equations, chosen so that
    /// `d/dt (μ(q) v) = 0`:
    ///
    /// `λ = −C⁻¹ [(Dμ(q)·v) v + μ(q) (−M⁻¹∇V(q))]`.
    pub fn continuous_multipliers(&self, s: &State) -> Result<Multipliers> {
        self.check_state(s)?;
        let mu = self.constraint_forms(&s.q);
        let gram = self.constraint_gram(&s.q)?;
        let accel = self.unconstrained_acceleration(&s.q)?;
        let rhs = self.forms_derivative_along(&s.q, &s.v) * &s.v + &mu * accel;
        let lam = solve_gram(gram, &rhs)?;
        Ok(-lam)
    }

    /// Second component of the constrained vector field,
    /// `−M⁻¹∇V(q) + Σ_a λ_a Z^a(q)`. The velocity does not enter for
    /// mechanical Lagrangians.
    pub fn gamma_nh(&self, q: &DVector<f64>, lam: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_multipliers(lam)?;
        Ok(self.unconstrained_acceleration(q)? + self.reaction_directions(q)? * lam)
    }

    /// Projects the velocity onto `ker μ(q)` orthogonally in the `M` metric.
    pub fn project_velocity(&self, s: &State) -> Result<State> {
        self.check_state(s)?;
        let mu = self.constraint_forms(&s.q);
        let z = self.mass_chol.solve(&mu.transpose());
        let gram = &mu * &z;
        let coeff = solve_gram(gram, &(&mu * &s.v))?;
        Ok(State::new(s.q.clone(), &s.v - z * coeff))
    }

    /// Checks the structural invariants at the given probe configurations:
    /// full row rank of `μ`, regular Gram matrix, and the gradient against
    /// central differences of the potential (relative `10⁻⁶`).
    pub fn check_invariants(&self, probes: &[DVector<f64>]) -> Result<()> {
        for q in probes {
            self.check_vec("probe", q)?;
            let mu = self.constraint_forms(q);
            let sv = mu.singular_values();
            let largest = sv.max();
            let smallest = sv.min();
            if largest <= 0.0 || smallest <= REGULARITY_TOL * largest {
                return Err(Error::RankDeficient {
                    ratio: if largest > 0.0 { smallest / largest } else { 0.0 },
                });
            }
            self.constraint_gram(q)?;

            let grad = self.potential_gradient(q);
            let fd = central_gradient(|x| self.potential(x), q);
            let scale = grad.amax().max(fd.amax()).max(1.0);
            let rel_error = (&grad - &fd).amax() / scale;
            if rel_error > 1e-6 {
                return Err(Error::GradientMismatch { rel_error });
            }
        }
        Ok(())
    }
}

/// Regularity test: smallest eigenvalue must exceed `10⁻¹⁰ ×` the largest.
pub(crate) fn check_regular(gram: &DMatrix<f64>) -> Result<()> {
    let eig = SymmetricEigen::new(gram.clone());
    let largest = eig.eigenvalues.max();
    let smallest = eig.eigenvalues.min();
    if !(largest > 0.0) || smallest <= REGULARITY_TOL * largest {
        return Err(Error::NonRegular {
            ratio: if largest > 0.0 { smallest / largest } else { 0.0 },
        });
    }
    Ok(())
}

pub(crate) fn solve_gram(gram: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if gram.nrows() == 1 {
        let c = gram[(0, 0)];
        if !(c > 0.0) {
            return Err(Error::NonRegular { ratio: 0.0 });
        }
        return Ok(rhs / c);
    }
    let chol = Cholesky::new(gram).ok_or(Error::NonRegular { ratio: 0.0 })?;
    Ok(chol.solve(rhs))
}

fn central_gradient(f: impl Fn(&DVector<f64>) -> f64, q: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(q.len());
    let mut x = q.clone();
    for j in 0..q.len() {
        let step = 1e-6 * q[j].abs().max(1.0);
        x[j] = q[j] + step;
        let fp = f(&x);
        x[j] = q[j] - step;
        let fm = f(&x);
        x[j] = q[j];
        out[j] = (fp - fm) / (2.0 * step);
    }
    out
}
