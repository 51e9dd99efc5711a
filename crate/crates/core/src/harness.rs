//! Experiment driver: trajectories, energy drift, convergence ladders and
//! seeded ensembles, with CSV output.
//!
//! CSV layout for trajectories is
//! `t,q1..qn,v1..vn,energy,res1..resc,newton_iters` with every float written
//! in Rust's shortest round-trip form and LF line endings, so identical runs
//! produce identical bytes.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::catalog::{self, CvtConfig};
use crate::composition::{psi, triple_jump, MethodHandle};
use crate::error::{Error, Result};
use crate::mechanics::{MechanicalSystem, State};
use crate::nh_newmark::{Discretization, NewmarkParams};

/// Exit status for a run aborted by a solver failure.
pub const EXIT_SOLVER_FAILURE: i32 = 2;
/// Exit status for a rejected experiment description.
pub const EXIT_INVALID_SPEC: i32 = 3;

/// Rejection-sampling budget per ensemble member.
const MAX_SAMPLING_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SystemId {
    Particle,
    Chaotic,
    Cvt { epsilon: f64 },
}

impl SystemId {
    pub const ALL_NAMES: [&'static str; 3] = ["particle", "chaotic", "cvt"];

    pub fn from_name(name: &str, epsilon: f64) -> Result<Self> {
        match name {
            "particle" => Ok(Self::Particle),
            "chaotic" => Ok(Self::Chaotic),
            "cvt" => Ok(Self::Cvt { epsilon }),
            other => Err(Error::InvalidParameter(format!("unknown system '{other}'"))),
        }
    }

    pub fn build(&self) -> MechanicalSystem {
        match *self {
            Self::Particle => catalog::nonholonomic_particle(),
            Self::Chaotic => catalog::chaotic_particle(),
            Self::Cvt { epsilon } => catalog::pendulum_cvt(CvtConfig::with_epsilon(epsilon)),
        }
    }

    pub fn reference_initial_state(&self) -> State {
        match *self {
            Self::Particle => catalog::particle_initial_state(),
            Self::Chaotic => catalog::chaotic_initial_state(),
            Self::Cvt { epsilon } => CvtConfig::with_epsilon(epsilon).reference_initial_state(),
        }
    }

    /// Makes a state exactly admissible. The transmission keeps `ẋ` and `ξ̇`
    /// and solves for `ẏ`; the others use the `M`-orthogonal projection.
    pub fn project(&self, sys: &MechanicalSystem, s: &State) -> Result<State> {
        match *self {
            Self::Cvt { epsilon } => Ok(catalog::cvt_project_velocity(
                &CvtConfig::with_epsilon(epsilon),
                s,
            )),
            _ => sys.project_velocity(s),
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Particle => write!(f, "particle"),
            Self::Chaotic => write!(f, "chaotic"),
            Self::Cvt { epsilon } => write!(f, "cvt(epsilon={epsilon})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodId {
    /// `F^{β,β′,α}`.
    Newmark,
    /// `(F^{β,β′,0}_{h/2})* ∘ F^{β,β′,0}_{h/2}`.
    Psi,
    /// `Ψ` with step `2h`, matching the cost of a plain Newmark run.
    Psi2h,
    /// Triple jump over `F^{β,β′,α}`.
    TripleJump,
    Rk4,
}

impl MethodId {
    pub const ALL: [MethodId; 5] = [
        MethodId::Newmark,
        MethodId::Psi,
        MethodId::Psi2h,
        MethodId::TripleJump,
        MethodId::Rk4,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Newmark => "newmark",
            Self::Psi => "psi",
            Self::Psi2h => "psi2h",
            Self::TripleJump => "triple-jump",
            Self::Rk4 => "rk4",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Self::Newmark => "nonholonomic Newmark F^(beta,beta',alpha)",
            Self::Psi => "composition F^(beta',beta,1)_(h/2) o F^(beta,beta',0)_(h/2)",
            Self::Psi2h => "psi with step 2h (same number of elementary steps as newmark)",
            Self::TripleJump => "triple jump over F^(beta,beta',alpha)",
            Self::Rk4 => "classical RK4 on the constrained ODE with continuous multipliers",
        }
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

impl FromStr for Discretization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(Self::MidpointArgument),
            "form-average" => Ok(Self::FormAverage),
            other => Err(Error::InvalidParameter(format!("unknown discretization '{other}'"))),
        }
    }
}

/// Everything needed to reproduce one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub system: SystemId,
    pub method: MethodId,
    /// Newmark knobs; ignored by `rk4`, `α` ignored by `psi`.
    pub params: NewmarkParams,
    pub h: f64,
    pub t_final: f64,
    /// Defaults to the system's reference initial condition, projected.
    pub initial: Option<State>,
    pub project_ic: bool,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn new(system: SystemId, method: MethodId, params: NewmarkParams, h: f64, t_final: f64) -> Self {
        Self {
            system,
            method,
            params,
            h,
            t_final,
            initial: None,
            project_ic: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParameter(format!("h must be positive, got {}", self.h)));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.h * (1.0 - 1e-12)) {
            return Err(Error::InvalidParameter(format!(
                "t_final must be at least h, got t_final = {}, h = {}",
                self.t_final, self.h
            )));
        }
        if self.method != MethodId::Rk4 {
            self.params.validate()?;
            if matches!(self.method, MethodId::Psi | MethodId::Psi2h) {
                NewmarkParams { alpha: 0.0, ..self.params }.validate()?;
            }
        }
        if let Some(s) = &self.initial {
            self.system.build().check_state(s)?;
        }
        Ok(())
    }

    pub fn method_handle(&self) -> Result<MethodHandle> {
        let p = self.params;
        match self.method {
            MethodId::Newmark => MethodHandle::newmark(p),
            MethodId::Psi | MethodId::Psi2h => psi(p.beta, p.beta_prime, p.discretization),
            MethodId::TripleJump => triple_jump(&MethodHandle::newmark(p)?),
            MethodId::Rk4 => Ok(MethodHandle::rk4()),
        }
    }

    /// Step actually taken per output row.
    pub fn step_size(&self) -> f64 {
        match self.method {
            MethodId::Psi2h => 2.0 * self.h,
            _ => self.h,
        }
    }

    pub fn step_count(&self) -> usize {
        steps_for(self.t_final, self.step_size())
    }

    /// The reference initial condition is always projected, since some of the
    /// reference velocities are rounded. A user-supplied state is projected
    /// only when `project_ic` is set.
    pub fn initial_state(&self, sys: &MechanicalSystem) -> Result<State> {
        match &self.initial {
            None => self.system.project(sys, &self.system.reference_initial_state()),
            Some(s) if self.project_ic => self.system.project(sys, s),
            Some(s) => Ok(s.clone()),
        }
    }
}

fn steps_for(t_final: f64, h: f64) -> usize {
    ((t_final / h) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub state: State,
    pub energy: f64,
    pub residual: DVector<f64>,
    pub newton_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub dim: usize,
    pub n_constraints: usize,
    pub rows: Vec<TrajectoryRow>,
    /// Elementary steps performed over the whole run.
    pub substeps: usize,
    /// Largest `‖Φ(q_k, q_{k+1})‖∞` over all elementary steps.
    pub max_discrete_constraint: f64,
    /// Largest step-equation residual over all steps.
    pub max_step_residual: f64,
}

impl TrajectoryRecord {
    fn new(sys: &MechanicalSystem) -> Self {
        Self {
            dim: sys.dim(),
            n_constraints: sys.n_constraints(),
            rows: Vec::new(),
            substeps: 0,
            max_discrete_constraint: 0.0,
            max_step_residual: 0.0,
        }
    }

    pub fn final_state(&self) -> Option<&State> {
        self.rows.last().map(|r| &r.state)
    }

    /// Largest `‖μ(q)v‖∞` over all rows.
    pub fn max_constraint_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual.amax()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("q{i}")));
        header.extend((1..=self.dim).map(|i| format!("v{i}")));
        header.push("energy".into());
        header.extend((1..=self.n_constraints).map(|i| format!("res{i}")));
        header.push("newton_iters".into());
        writeln!(out, "{}", header.join(","))?;

        for row in &self.rows {
            let mut line = String::new();
            push_float(&mut line, row.t);
            for x in row.state.q.iter().chain(row.state.v.iter()) {
                line.push(',');
                push_float(&mut line, *x);
            }
            line.push(',');
            push_float(&mut line, row.energy);
            for x in row.residual.iter() {
                line.push(',');
                push_float(&mut line, *x);
            }
            line.push_str(&format!(",{}", row.newton_iters));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is ascii")
    }
}

fn push_float(buf: &mut String, x: f64) {
    use std::fmt::Write as _;
    write!(buf, "{x}").expect("writing to string");
}

/// Why a simulation stopped early.
#[derive(Debug, Clone)]
pub enum RunError {
    Invalid(Error),
    /// The solver failed; `record` holds every row computed before the failure.
    Solver { record: TrajectoryRecord, error: Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => EXIT_INVALID_SPEC,
            Self::Solver { .. } => EXIT_SOLVER_FAILURE,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Self::Invalid(e) | Self::Solver { error: e, .. } => e,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Invalid(e) => write!(f, "invalid experiment: {e}"),
            Self::Solver { error, .. } => write!(f, "{error}"),
        }
    }
}

impl std::error::Error for RunError {}

fn make_row(sys: &MechanicalSystem, t: f64, state: State, newton_iters: usize) -> Result<TrajectoryRow> {
    Ok(TrajectoryRow {
        t,
        energy: sys.energy(&state)?,
        residual: sys.constraint_residual(&state)?,
        state,
        newton_iters,
    })
}

/// Integrates `⌈t_final/h⌉` steps from the spec's initial state, one output
/// row per step plus the initial row.
pub fn run_simulation(spec: &ExperimentSpec) -> std::result::Result<TrajectoryRecord, RunError> {
    spec.validate().map_err(RunError::Invalid)?;
    let sys = spec.system.build();
    let method = spec.method_handle().map_err(RunError::Invalid)?;
    let initial = spec.initial_state(&sys).map_err(RunError::Invalid)?;
    integrate(&sys, &method, initial, spec.step_size(), spec.step_count())
}

/// Runs `steps` steps of `method` with step `h`.
pub fn integrate(
    sys: &MechanicalSystem,
    method: &MethodHandle,
    initial: State,
    h: f64,
    steps: usize,
) -> std::result::Result<TrajectoryRecord, RunError> {
    let mut record = TrajectoryRecord::new(sys);
    let first = make_row(sys, 0.0, initial, 0).map_err(RunError::Invalid)?;
    record.rows.push(first);
    let mut warm = None;

    for k in 0..steps {
        let current = &record.rows.last().expect("initial row").state;
        let res = match method.step(sys, current, h, warm.as_ref()) {
            Ok(res) => res,
            Err(e) => {
                return Err(RunError::Solver {
                    record,
                    error: Error::StepFailed {
                        step: k,
                        source: Box::new(e),
                    },
                })
            }
        };
        record.substeps += res.substeps;
        record.max_discrete_constraint = record.max_discrete_constraint.max(res.discrete_constraint_norm);
        record.max_step_residual = record.max_step_residual.max(res.residual_norm);
        warm = Some(res.multipliers.next);
        let t = (k + 1) as f64 * h;
        match make_row(sys, t, res.state, res.iterations) {
            Ok(row) => record.rows.push(row),
            Err(error) => return Err(RunError::Solver { record, error }),
        }
    }
    Ok(record)
}

/// `E(t) − E(0)` along a record.
pub fn drift(record: &TrajectoryRecord) -> Vec<f64> {
    let Some(first) = record.rows.first() else {
        return Vec::new();
    };
    record.rows.iter().map(|r| r.energy - first.energy).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub error: f64,
    /// `log₂(error(2h)/error(h))`, absent for the coarsest step.
    pub observed_order: Option<f64>,
}

/// Final-time errors of `spec` over a geometric ladder of step sizes, against
/// an RK4 reference at `h_min / reference_divisor`.
pub fn run_convergence(
    spec: &ExperimentSpec,
    h_list: &[f64],
    reference_divisor: usize,
) -> std::result::Result<Vec<ConvergenceRow>, RunError> {
    if h_list.len() < 3 {
        return Err(RunError::Invalid(Error::InvalidParameter(
            "a convergence study needs at least three step sizes".into(),
        )));
    }
    let ratio = h_list[0] / h_list[1];
    for pair in h_list.windows(2) {
        if !(pair[0] > pair[1]) || ((pair[0] / pair[1]) - ratio).abs() > 1e-9 * ratio {
            return Err(RunError::Invalid(Error::InvalidParameter(
                "step sizes must decrease geometrically".into(),
            )));
        }
    }
    if reference_divisor == 0 {
        return Err(RunError::Invalid(Error::InvalidParameter(
            "reference divisor must be positive".into(),
        )));
    }
    for &h in h_list {
        let steps = spec.t_final / h;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(RunError::Invalid(Error::InvalidParameter(format!(
                "t_final = {} is not a multiple of h = {h}",
                spec.t_final
            ))));
        }
    }

    let h_min = *h_list.last().expect("nonempty ladder");
    let reference_spec = ExperimentSpec {
        method: MethodId::Rk4,
        h: h_min / reference_divisor as f64,
        ..spec.clone()
    };
    let reference = run_simulation(&reference_spec)?;
    let target = reference.final_state().expect("reference has rows").clone();

    let errors: Vec<f64> = h_list
        .par_iter()
        .map(|&h| {
            let run = run_simulation(&ExperimentSpec { h, ..spec.clone() })?;
            Ok(run.final_state().expect("run has rows").distance(&target))
        })
        .collect::<std::result::Result<_, RunError>>()?;

    Ok(h_list
        .iter()
        .zip(&errors)
        .enumerate()
        .map(|(i, (&h, &error))| ConvergenceRow {
            h,
            error,
            observed_order: (i > 0).then(|| (errors[i - 1] / error).ln() / (h_list[i - 1] / h).ln()),
        })
        .collect())
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("h,error,observed_order\n");
    for r in rows {
        push_float(&mut out, r.h);
        out.push(',');
        push_float(&mut out, r.error);
        out.push(',');
        if let Some(o) = r.observed_order {
            push_float(&mut out, o);
        }
        out.push('\n');
    }
    out
}

/// Draws an admissible state with energy exactly `energy`: `q` uniform in
/// `[−1, 1]ⁿ` until `V(q) < energy`, then an isotropic direction in
/// `ker μ(q)` scaled to the remaining kinetic energy.
pub fn sample_initial_state<R: Rng + ?Sized>(sys: &MechanicalSystem, energy: f64, rng: &mut R) -> Result<State> {
    let n = sys.dim();
    for _ in 0..MAX_SAMPLING_DRAWS {
        let q = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..=1.0)));
        let potential = sys.potential(&q);
        if !(potential < energy) {
            continue;
        }
        let g = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let dir = sys.project_velocity(&State::new(q.clone(), g))?.v;
        let kinetic_unit = 0.5 * dir.dot(&(sys.mass() * &dir));
        if !(kinetic_unit > 1e-12) {
            continue;
        }
        let speed = ((energy - potential) / kinetic_unit).sqrt();
        return Ok(State::new(q, dir * speed));
    }
    Err(Error::SamplingFailed {
        draws: MAX_SAMPLING_DRAWS,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    /// Method, system, step and horizon; the initial state is ignored.
    pub run: ExperimentSpec,
    pub energy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub initial_states: Vec<State>,
    /// One drift series per trajectory.
    pub drifts: Vec<Vec<f64>>,
    /// Sample variance of the drift across trajectories at each time.
    pub variance: Vec<f64>,
}

/// Trajectory `i` uses its own stream seeded with `seed + i`, so results do
/// not depend on scheduling.
pub fn run_ensemble(spec: &EnsembleSpec) -> std::result::Result<EnsembleResult, RunError> {
    spec.run.validate().map_err(RunError::Invalid)?;
    if spec.count == 0 {
        return Err(RunError::Invalid(Error::InvalidParameter("count must be positive".into())));
    }
    let sys = spec.run.system.build();
    let method = spec.run.method_handle().map_err(RunError::Invalid)?;
    let h = spec.run.step_size();
    let steps = spec.run.step_count();

    let runs: Vec<(State, Vec<f64>)> = (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.run.seed.wrapping_add(i as u64));
            let ic = sample_initial_state(&sys, spec.energy, &mut rng).map_err(RunError::Invalid)?;
            let record = integrate(&sys, &method, ic.clone(), h, steps)?;
            Ok((ic, drift(&record)))
        })
        .collect::<std::result::Result<_, RunError>>()?;

    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
    let variance = (0..times.len())
        .map(|k| sample_variance(runs.iter().map(|(_, d)| d[k])))
        .collect();
    let (initial_states, drifts) = runs.into_iter().unzip();
    Ok(EnsembleResult {
        times,
        initial_states,
        drifts,
        variance,
    })
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let count = values.clone().count();
    if count < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / count as f64;
    values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (count - 1) as f64
}

impl EnsembleResult {
    /// `t,traj1..trajN`
    pub fn drift_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.drifts.len() {
            out.push_str(&format!(",traj{i}"));
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            push_float(&mut out, *t);
            for d in &self.drifts {
                out.push(',');
                push_float(&mut out, d[k]);
            }
            out.push('\n');
        }
        out
    }

    /// `t,variance`
    pub fn variance_csv(&self) -> String {
        let mut out = String::from("t,variance\n");
        for (t, v) in self.times.iter().zip(&self.variance) {
            push_float(&mut out, *t);
            out.push(',');
            push_float(&mut out, *v);
            out.push('\n');
        }
        out
    }
}
