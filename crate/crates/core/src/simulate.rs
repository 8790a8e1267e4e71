//! Trajectory engine: evolves the state recurrence, accumulates quadratic
//! stage costs, and tracks regret against the optimal average cost.
//!
//! Indexing convention: `inputs[t]` (t = 0..T-1) is the action applied at
//! time t, producing `states[t+1]`. Stage costs are charged at times
//! t = 1..T, pairing the state reached at t with the action the policy
//! selects there; the action selected at the final time T enters the last
//! cost but is never applied. `regret[t-1] = sum_{s<=t} cost_s - t J*`
//! exactly, by construction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::quad_form;
use crate::lqmodel::{CostPair, DynamicsParameter};
use crate::noise::NoiseModel;
use crate::riccati::solve_dare;
use crate::rng::{stream, STREAM_NOISE};

/// Relative threshold of the blow-up guard.
pub const BLOWUP_FACTOR: f64 = 1e9;

/// Full per-step record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// x(0..T).
    pub states: Vec<DVector<f64>>,
    /// u(0..T-1), the applied actions.
    pub inputs: Vec<DVector<f64>>,
    /// Stage costs at t = 1..T.
    pub costs: Vec<f64>,
    /// Partial-sum regret at t = 1..T.
    pub regret: Vec<f64>,
    /// Episode index active at each cost step (always 1 outside the
    /// episodic algorithm).
    pub episodes: Vec<usize>,
    pub seed: u64,
    /// Optimal average cost the regret column is measured against.
    pub j_star: f64,
    /// False when the true system is not stabilizable and `j_star` fell back
    /// to zero (regret then equals cumulative cost).
    pub j_star_known: bool,
}

impl RunRecord {
    pub fn horizon(&self) -> usize {
        self.costs.len()
    }

    /// Final regret, zero for an empty horizon.
    pub fn final_regret(&self) -> f64 {
        self.regret.last().copied().unwrap_or(0.0)
    }
}

/// Control policies the plain runner supports. The episodic adaptive policy
/// lives in [`crate::ofu`] and produces the same record type.
#[derive(Debug, Clone)]
pub enum Policy {
    /// `u = L x` for a caller-supplied L.
    FixedFeedback(DMatrix<f64>),
    /// `u = L(theta0) x`, the optimal policy for the true system.
    Optimal,
    /// Least-squares point estimate driving a certainty-equivalent gain,
    /// refreshed every step; falls back to the previous gain (initially
    /// `initial_gain`) whenever the estimate is not stabilizable.
    CertaintyEquivalence { initial_gain: DMatrix<f64>, ridge: f64 },
}

/// One-step transition `A x + B u + w`.
pub fn step(
    theta0: &DynamicsParameter,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != theta0.state_dim() || u.len() != theta0.input_dim() || w.len() != theta0.state_dim() {
        return Err(Error::Dimension(format!(
            "step shapes: x {}, u {}, w {} vs (p, r) = ({}, {})",
            x.len(),
            u.len(),
            w.len(),
            theta0.state_dim(),
            theta0.input_dim()
        )));
    }
    Ok(theta0.a() * x + theta0.b() * u + w)
}

/// Recursive ridge least-squares estimate of `[A, B]` from closed-loop data,
/// exposed for the certainty-equivalence baseline and its tests.
#[derive(Debug, Clone)]
pub struct CeEstimator {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    ridge: f64,
    p: usize,
    r: usize,
    samples: usize,
}

impl CeEstimator {
    pub fn new(p: usize, r: usize, ridge: f64) -> Self {
        let q = p + r;
        Self { gram: DMatrix::zeros(q, q), cross: DMatrix::zeros(p, q), ridge, p, r, samples: 0 }
    }

    pub fn observe(&mut self, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) {
        let mut z = DVector::zeros(self.p + self.r);
        z.rows_mut(0, self.p).copy_from(x);
        z.rows_mut(self.p, self.r).copy_from(u);
        self.gram.ger(1.0, &z, &z, 1.0);
        self.cross.ger(1.0, x_next, &z, 1.0);
        self.samples += 1;
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Current estimate, `None` before any data.
    pub fn estimate(&self) -> Option<DynamicsParameter> {
        if self.samples == 0 {
            return None;
        }
        let q = self.p + self.r;
        let reg = &self.gram + DMatrix::identity(q, q) * self.ridge;
        let chol = reg.cholesky()?;
        // theta' = (G + ridge I)^{-1} Z'X  =>  theta = cross * inv
        let theta_t = chol.solve(&self.cross.transpose());
        DynamicsParameter::from_stacked(&theta_t.transpose(), self.r).ok()
    }
}

struct PolicyDriver {
    gain: DMatrix<f64>,
    estimator: Option<CeEstimator>,
}

impl PolicyDriver {
    fn init(theta0: &DynamicsParameter, cost: &CostPair, policy: &Policy) -> Result<Self> {
        match policy {
            Policy::FixedFeedback(l) => {
                if l.nrows() != theta0.input_dim() || l.ncols() != theta0.state_dim() {
                    return Err(Error::Dimension(format!(
                        "feedback is {}x{}, expected {}x{}",
                        l.nrows(),
                        l.ncols(),
                        theta0.input_dim(),
                        theta0.state_dim()
                    )));
                }
                Ok(Self { gain: l.clone(), estimator: None })
            }
            Policy::Optimal => {
                let sol = solve_dare(theta0, cost)?;
                Ok(Self { gain: sol.gain().clone(), estimator: None })
            }
            Policy::CertaintyEquivalence { initial_gain, ridge } => {
                if initial_gain.nrows() != theta0.input_dim() || initial_gain.ncols() != theta0.state_dim() {
                    return Err(Error::Dimension("initial stabilizer has the wrong shape".into()));
                }
                Ok(Self {
                    gain: initial_gain.clone(),
                    estimator: Some(CeEstimator::new(theta0.state_dim(), theta0.input_dim(), *ridge)),
                })
            }
        }
    }

    fn action(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gain * x
    }

    fn learn(&mut self, cost: &CostPair, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) {
        if let Some(est) = self.estimator.as_mut() {
            est.observe(x, u, x_next);
            if let Some(theta_hat) = est.estimate() {
                if let Ok(sol) = solve_dare(&theta_hat, cost) {
                    self.gain = sol.gain().clone();
                }
            }
        }
    }
}

/// Runs `policy` on the true system for `horizon` steps.
///
/// Deterministic given the seed: the noise path is drawn from the dedicated
/// noise stream, so runs of different policies under the same seed see the
/// same disturbances. The blow-up guard aborts once the state norm passes
/// `1e9 (1 + |x(0)|)`, which diagnoses a non-stabilizing configuration.
pub fn run_policy(
    theta0: &DynamicsParameter,
    cost: &CostPair,
    noise: &NoiseModel,
    policy: &Policy,
    horizon: usize,
    x0: &DVector<f64>,
    seed: u64,
) -> Result<RunRecord> {
    let mut noise_rng = stream(seed, STREAM_NOISE);
    run_policy_with_rng(theta0, cost, noise, policy, horizon, x0, seed, &mut noise_rng)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_policy_with_rng(
    theta0: &DynamicsParameter,
    cost: &CostPair,
    noise: &NoiseModel,
    policy: &Policy,
    horizon: usize,
    x0: &DVector<f64>,
    seed: u64,
    noise_rng: &mut impl Rng,
) -> Result<RunRecord> {
    let p = theta0.state_dim();
    if x0.len() != p {
        return Err(Error::Dimension(format!("x0 has length {}, expected {p}", x0.len())));
    }
    if noise.dim() != p {
        return Err(Error::Dimension("noise dimension does not match the state".into()));
    }

    let (j_star, j_star_known) = match solve_dare(theta0, cost) {
        Ok(sol) => (sol.average_cost(noise.covariance()), true),
        Err(Error::NotStabilizable { reason }) => {
            if matches!(policy, Policy::Optimal) {
                return Err(Error::NotStabilizable { reason });
            }
            (0.0, false)
        }
        Err(e) => return Err(e),
    };

    let mut driver = PolicyDriver::init(theta0, cost, policy)?;
    let guard = BLOWUP_FACTOR * (1.0 + x0.norm());

    let mut record = RunRecord {
        states: Vec::with_capacity(horizon + 1),
        inputs: Vec::with_capacity(horizon),
        costs: Vec::with_capacity(horizon),
        regret: Vec::with_capacity(horizon),
        episodes: Vec::with_capacity(horizon),
        seed,
        j_star,
        j_star_known,
    };
    record.states.push(x0.clone());

    let mut x = x0.clone();
    let mut z_buf = DVector::zeros(p);
    let mut w = DVector::zeros(p);
    let mut cum_cost = 0.0;
    for t in 0..=horizon {
        let u = driver.action(&x);
        if t >= 1 {
            let c = quad_form(cost.state_cost(), &x) + quad_form(cost.input_cost(), &u);
            cum_cost += c;
            record.costs.push(c);
            record.regret.push(cum_cost - t as f64 * j_star);
            record.episodes.push(1);
        }
        if t == horizon {
            break;
        }
        noise.sample_into(noise_rng, &mut z_buf, &mut w);
        let x_next = step(theta0, &x, &u, &w)?;
        if x_next.norm() > guard {
            return Err(Error::InstabilityAbort { step: t + 1, norm: x_next.norm() });
        }
        driver.learn(cost, &x, &u, &x_next);
        record.inputs.push(u);
        record.states.push(x_next.clone());
        x = x_next;
    }
    Ok(record)
}

/// Autonomous closed-loop trajectory `x(t+1) = D x(t) + w(t+1)`, returning
/// x(0..steps). Used by the identification and verification harnesses.
pub fn simulate_closed_loop(
    d: &DMatrix<f64>,
    noise: &NoiseModel,
    steps: usize,
    x0: &DVector<f64>,
    rng: &mut impl Rng,
) -> Result<Vec<DVector<f64>>> {
    let p = d.nrows();
    if d.ncols() != p || x0.len() != p || noise.dim() != p {
        return Err(Error::Dimension("closed-loop simulation shapes disagree".into()));
    }
    let guard = BLOWUP_FACTOR * (1.0 + x0.norm());
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    let mut x = x0.clone();
    let mut z = DVector::zeros(p);
    let mut w = DVector::zeros(p);
    for t in 0..steps {
        noise.sample_into(rng, &mut z, &mut w);
        let mut next = w.clone();
        next.gemv(1.0, d, &x, 1.0);
        if next.norm() > guard {
            return Err(Error::InstabilityAbort { step: t + 1, norm: next.norm() });
        }
        states.push(next.clone());
        x = next;
    }
    Ok(states)
}
