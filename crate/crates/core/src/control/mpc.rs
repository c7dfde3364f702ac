//! Receding-horizon path-following MPC.
//!
//! Each call runs one SQP iteration: the previous input sequence, shifted by
//! one step, is rolled out through the nonlinear model to form a nominal
//! trajectory; the model is linearized and discretized exactly (zero-order
//! hold) about it; the states are eliminated, leaving a dense QP in the input
//! corrections and the slack variables.
//!
//! Decision vector: `[Δζ₀, ΔJ₀, …, Δζ_{N−1}, ΔJ_{N−1}, s₁…s_N, σ₁…σ_N]`, where
//! `s` softens the corridor and `σ` the rear slip limit.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, QpProblem, QpSettings, QpStatus};
use super::ControlError;
use crate::dynamics::{
    advance, idx, jacobians, ControlRates, InputJacobian, InputVec, StateJacobian, StateVec, VehicleParams,
    VehicleState, INPUT_DIM, STATE_DIM,
};
use crate::track::ReferencePath;

/// Inequality rows per horizon step: steer, speed, acceleration, steer rate
/// and jerk boxes (two each), rear slip (two), corridor (two).
pub const ROWS_PER_STEP: usize = 14;

/// Added to every diagonal entry of the Hessian.
const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Weight on successive steering differences.
    pub w_steer_change: f64,
    pub w_heading: f64,
    pub w_lateral: f64,
    /// Weight on squared slack variables.
    pub w_slack: f64,
    /// Weight on deviation from the reference speed.
    pub w_speed: f64,
    pub w_steer_rate: f64,
    pub w_jerk: f64,
    /// Comfort distance kept from the corridor edges.
    pub comfort_distance: f64,
    /// Cruise speed on straights.
    pub speed_ref: f64,
    /// Lateral acceleration used to slow down for curvature; `None` derives
    /// it from the rear slip limit.
    pub lat_accel_max: Option<f64>,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.1,
            w_steer_change: 5.0,
            w_heading: 10.0,
            w_lateral: 20.0,
            w_slack: 1e3,
            w_speed: 1.0,
            w_steer_rate: 5.0,
            w_jerk: 0.01,
            comfort_distance: 0.3,
            speed_ref: 6.0,
            lat_accel_max: None,
            qp: QpSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.horizon < 5 {
            return Err(ControlError::BadConfig(format!("horizon {} < 5", self.horizon)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ControlError::BadConfig(format!("dt {} not positive", self.dt)));
        }
        let weights = [
            self.w_steer_change,
            self.w_heading,
            self.w_lateral,
            self.w_slack,
            self.w_speed,
            self.w_steer_rate,
            self.w_jerk,
            self.comfort_distance,
        ];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(ControlError::BadConfig("weights and comfort distance must be ≥ 0".into()));
        }
        if !(self.speed_ref > 0.0) {
            return Err(ControlError::BadConfig("speed_ref must be positive".into()));
        }
        Ok(())
    }

    pub fn lat_accel(&self, p: &VehicleParams) -> f64 {
        self.lat_accel_max
            .unwrap_or(0.8 * p.rear_slip_max * p.cornering_rear * 2.0 / p.mass)
    }

    /// Curvature-limited reference speed.
    pub fn reference_speed(&self, kappa: f64, p: &VehicleParams) -> f64 {
        let cap = self.speed_ref.min(p.speed_max);
        if kappa.abs() < 1e-9 {
            cap
        } else {
            cap.min((self.lat_accel(p) / kappa.abs()).sqrt())
        }
    }
}

/// Discrete linear model of one horizon step about the nominal trajectory:
/// `x_{k+1} ≈ next + a (x_k − x̄_k) + b (u_k − ū_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvStep {
    pub a: StateJacobian,
    pub b: InputJacobian,
    pub a_cont: StateJacobian,
    pub b_cont: InputJacobian,
    pub next: StateVec,
}

/// Zero-order-hold linearization of each step of a nominal trajectory.
///
/// `states` holds `N + 1` nominal states, `inputs` and `kappas` hold `N`.
pub fn linearize(
    states: &[StateVec],
    inputs: &[InputVec],
    kappas: &[f64],
    dt: f64,
    params: &VehicleParams,
) -> Result<Vec<LtvStep>, ControlError> {
    let n = inputs.len();
    if states.len() != n + 1 || kappas.len() != n {
        return Err(ControlError::BadConfig("nominal trajectory lengths disagree".into()));
    }
    let mut out = Vec::with_capacity(n);
    let dim = STATE_DIM + INPUT_DIM;
    for k in 0..n {
        let speed = states[k][idx::LONG_SPEED];
        if !(speed >= params.speed_min) {
            return Err(ControlError::Linearization { step: k, speed });
        }
        let (a_cont, b_cont) = jacobians(&states[k], kappas[k], params);
        let mut m = DMatrix::<f64>::zeros(dim, dim);
        m.view_mut((0, 0), (STATE_DIM, STATE_DIM)).copy_from(&(a_cont * dt));
        m.view_mut((0, STATE_DIM), (STATE_DIM, INPUT_DIM)).copy_from(&(b_cont * dt));
        let e = m.exp();
        out.push(LtvStep {
            a: e.fixed_view::<STATE_DIM, STATE_DIM>(0, 0).into_owned(),
            b: e.fixed_view::<STATE_DIM, INPUT_DIM>(0, STATE_DIM).into_owned(),
            a_cont,
            b_cont,
            next: states[k + 1],
        });
    }
    Ok(out)
}

fn path_s(path: &ReferencePath, s: f64) -> f64 {
    if path.is_closed() {
        path.wrap_s(s)
    } else {
        s.clamp(path.start_s(), path.end_s())
    }
}

/// Rate of progress along the path.
fn s_dot(x: &StateVec, kappa: f64) -> f64 {
    let (u, v) = (x[idx::LONG_SPEED], x[idx::LAT_SPEED]);
    let epsi = x[idx::HEADING_ERROR];
    let denom = (1.0 - kappa * x[idx::LATERAL_ERROR]).max(0.1);
    (u * epsi.cos() - v * epsi.sin()) / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpProblem {
    pub qp: QpProblem,
    pub horizon: usize,
    /// Nominal states `x̄₀ … x̄_N`.
    pub nominal_states: Vec<StateVec>,
    pub nominal_inputs: Vec<InputVec>,
    /// Path coordinate of each nominal state.
    pub s: Vec<f64>,
    pub kappas: Vec<f64>,
    pub speed_ref: Vec<f64>,
    /// `∂x_k/∂Δu` for `k = 1…N`.
    pub sensitivity: Vec<DMatrix<f64>>,
}

impl OcpProblem {
    pub fn n_inputs(&self) -> usize {
        INPUT_DIM * self.horizon
    }

    pub fn n_vars(&self) -> usize {
        self.qp.dim()
    }

    /// Predicted states `x₁ … x_N` for a decision vector.
    pub fn predict(&self, z: &DVector<f64>) -> Vec<StateVec> {
        let d = z.rows(0, self.n_inputs());
        (0..self.horizon)
            .map(|k| {
                let dx = &self.sensitivity[k] * d;
                self.nominal_states[k + 1] + StateVec::from_iterator(dx.iter().copied())
            })
            .collect()
    }
}

/// Accumulates `w (c + rᵀz)²` terms as `½ zᵀHz + gᵀz`.
struct CostBuilder {
    h: DMatrix<f64>,
    g: DVector<f64>,
}

impl CostBuilder {
    fn add(&mut self, w: f64, c: f64, row: &DVector<f64>) {
        if w == 0.0 {
            return;
        }
        self.h.ger(2.0 * w, row, row, 1.0);
        self.g.axpy(2.0 * w * c, row, 1.0);
    }

    fn add_unit(&mut self, w: f64, c: f64, i: usize) {
        self.h[(i, i)] += 2.0 * w;
        self.g[i] += 2.0 * w * c;
    }
}

/// Transcribes the tracking problem around the nominal input sequence.
pub fn build_ocp(
    state: &VehicleState,
    s0: f64,
    path: &ReferencePath,
    params: &VehicleParams,
    config: &MpcConfig,
    nominal_inputs: &[InputVec],
) -> Result<OcpProblem, ControlError> {
    config.validate()?;
    let n = config.horizon;
    if nominal_inputs.len() != n {
        return Err(ControlError::BadConfig(format!(
            "{} nominal inputs for horizon {n}",
            nominal_inputs.len()
        )));
    }
    use idx::*;

    // nominal rollout
    let mut states = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    let mut kappas = Vec::with_capacity(n);
    let mut x = *state;
    states.push(x.to_vector());
    s.push(path_s(path, s0));
    for k in 0..n {
        let kappa = path.curvature_at(s[k])?;
        kappas.push(kappa);
        let u = ControlRates::new(nominal_inputs[k][0], nominal_inputs[k][1]);
        let next = advance(&x, &u, kappa, config.dt, params).map_err(|_| ControlError::Linearization {
            step: k,
            speed: x.long_speed,
        })?;
        let ds = 0.5 * (s_dot(&x.to_vector(), kappa) + s_dot(&next.to_vector(), kappa)) * config.dt;
        s.push(path_s(path, s[k] + ds));
        x = next;
        states.push(x.to_vector());
    }
    let steps = linearize(&states, nominal_inputs, &kappas, config.dt, params)?;

    let ni = INPUT_DIM * n;
    let nz = ni + 2 * n;
    let slack_env = |k: usize| ni + k;
    let slack_slip = |k: usize| ni + n + k;

    // sensitivities of x_{k+1} to the input corrections
    let mut sens: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut cur = DMatrix::<f64>::zeros(STATE_DIM, ni);
    for (k, st) in steps.iter().enumerate() {
        let a = DMatrix::from_iterator(STATE_DIM, STATE_DIM, st.a.iter().copied());
        let mut next = &a * &cur;
        for r in 0..STATE_DIM {
            for c in 0..INPUT_DIM {
                next[(r, INPUT_DIM * k + c)] += st.b[(r, c)];
            }
        }
        sens.push(next.clone());
        cur = next;
    }
    let row = |k: usize, comp: usize| -> DVector<f64> {
        let mut r = DVector::zeros(nz);
        r.rows_mut(0, ni).copy_from(&sens[k].row(comp).transpose());
        r
    };

    let mut cost = CostBuilder {
        h: DMatrix::identity(nz, nz) * RIDGE,
        g: DVector::zeros(nz),
    };
    let speed_ref: Vec<f64> = kappas.iter().map(|&k| config.reference_speed(k, params)).collect();
    let mut prev_steer = DVector::zeros(nz);
    for k in 0..n {
        let xb = &states[k + 1];
        let r_steer = row(k, STEER);
        let change = &r_steer - &prev_steer;
        cost.add(config.w_steer_change, xb[STEER] - states[k][STEER], &change);
        prev_steer = r_steer;
        cost.add(config.w_heading, xb[HEADING_ERROR], &row(k, HEADING_ERROR));
        cost.add(config.w_lateral, xb[LATERAL_ERROR], &row(k, LATERAL_ERROR));
        cost.add(config.w_speed, xb[LONG_SPEED] - speed_ref[k], &row(k, LONG_SPEED));
        cost.add_unit(config.w_steer_rate, nominal_inputs[k][0], INPUT_DIM * k);
        cost.add_unit(config.w_jerk, nominal_inputs[k][1], INPUT_DIM * k + 1);
        cost.add_unit(config.w_slack, 0.0, slack_env(k));
        cost.add_unit(config.w_slack, 0.0, slack_slip(k));
    }

    let m = ROWS_PER_STEP * n;
    let mut a_in = DMatrix::<f64>::zeros(m, nz);
    let mut b_in = DVector::<f64>::zeros(m);
    let mut put = |r: usize, coeffs: &DVector<f64>, rhs: f64| {
        a_in.row_mut(r).copy_from(&coeffs.transpose());
        b_in[r] = rhs;
    };
    for k in 0..n {
        let base = ROWS_PER_STEP * k;
        let xb = &states[k + 1];
        let box_rows = [
            (STEER, -params.steer_max, params.steer_max),
            (LONG_SPEED, params.speed_min, params.speed_max),
            (ACCEL, params.accel_min, params.accel_max),
        ];
        for (j, &(comp, lo, hi)) in box_rows.iter().enumerate() {
            let r = row(k, comp);
            put(base + 2 * j, &r, hi - xb[comp]);
            put(base + 2 * j + 1, &(-r), xb[comp] - lo);
        }
        let input_rows = [(0, params.steer_rate_max), (1, params.jerk_max)];
        for (j, &(c, lim)) in input_rows.iter().enumerate() {
            let mut r = DVector::zeros(nz);
            r[INPUT_DIM * k + c] = 1.0;
            let ub = nominal_inputs[k][c];
            put(base + 6 + 2 * j, &r, lim - ub);
            put(base + 7 + 2 * j, &(-r), lim + ub);
        }
        // rear slip: |V − l_r r| ≤ α U_nom + σ
        let mut r = row(k, LAT_SPEED) - row(k, YAW_RATE) * params.lr;
        r[slack_slip(k)] = 0.0;
        let slip_nom = xb[LAT_SPEED] - params.lr * xb[YAW_RATE];
        let lim = params.rear_slip_max * xb[LONG_SPEED];
        let mut up = r.clone();
        up[slack_slip(k)] = -1.0;
        let mut down = -r;
        down[slack_slip(k)] = -1.0;
        put(base + 10, &up, lim - slip_nom);
        put(base + 11, &down, lim + slip_nom);
        // corridor
        let (lo, hi) = path.corridor_at(s[k + 1])?;
        let (lo, hi) = (lo + config.comfort_distance, hi - config.comfort_distance);
        if hi < lo {
            return Err(ControlError::InfeasibleCorridor { step: k, lo, hi });
        }
        let r = row(k, LATERAL_ERROR);
        let mut up = r.clone();
        up[slack_env(k)] = -1.0;
        let mut down = -r;
        down[slack_env(k)] = -1.0;
        put(base + 12, &up, hi - xb[LATERAL_ERROR]);
        put(base + 13, &down, xb[LATERAL_ERROR] - lo);
    }

    Ok(OcpProblem {
        qp: QpProblem::new(cost.h, cost.g, a_in, b_in),
        horizon: n,
        nominal_states: states,
        nominal_inputs: nominal_inputs.to_vec(),
        s,
        kappas,
        speed_ref,
        sensitivity: sens,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub inputs: Vec<ControlRates>,
    /// Predicted states `x₁ … x_N` of the linear model.
    pub states: Vec<StateVec>,
    pub env_slack: Vec<f64>,
    pub slip_slack: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Active inequality rows, for warm starts.
    pub active: Vec<usize>,
    pub objective: f64,
}

impl OcpSolution {
    pub fn slack_norm(&self) -> f64 {
        self.env_slack
            .iter()
            .chain(&self.slip_slack)
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt()
    }
}

pub fn solve_ocp(problem: &OcpProblem, warm: Option<&[usize]>, settings: &QpSettings) -> Result<OcpSolution, ControlError> {
    let sol = solve_qp(&problem.qp, warm, settings)?;
    let n = problem.horizon;
    let ni = problem.n_inputs();
    let inputs = (0..n)
        .map(|k| {
            ControlRates::new(
                problem.nominal_inputs[k][0] + sol.x[INPUT_DIM * k],
                problem.nominal_inputs[k][1] + sol.x[INPUT_DIM * k + 1],
            )
        })
        .collect();
    Ok(OcpSolution {
        inputs,
        states: problem.predict(&sol.x),
        env_slack: (0..n).map(|k| sol.x[ni + k].max(0.0)).collect(),
        slip_slack: (0..n).map(|k| sol.x[ni + n + k].max(0.0)).collect(),
        status: sol.status,
        iterations: sol.iterations,
        active: sol.active,
        objective: sol.objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpcStatus {
    Optimal,
    MaxIter,
    /// The QP was infeasible; a safe-stop command was issued.
    Fallback,
}

impl MpcStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            MpcStatus::Optimal => "optimal",
            MpcStatus::MaxIter => "max_iter",
            MpcStatus::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    pub rates: ControlRates,
    pub status: MpcStatus,
    pub solution: OcpSolution,
}

/// Full braking within the jerk bound and a frozen steering angle.
pub fn safe_stop(state: &VehicleState, dt: f64, params: &VehicleParams) -> ControlRates {
    let jerk = ((params.accel_min - state.accel) / dt).clamp(-params.jerk_max, params.jerk_max);
    ControlRates::new(0.0, jerk.min(0.0))
}

/// One SQP iteration of the receding-horizon controller.
///
/// `previous` is the last solution, used for the shifted nominal inputs and
/// the warm-start active set.
pub fn mpc_step(
    state: &VehicleState,
    s: f64,
    path: &ReferencePath,
    params: &VehicleParams,
    config: &MpcConfig,
    previous: Option<&OcpSolution>,
    belief_age: f64,
) -> Result<MpcOutput, ControlError> {
    if !(belief_age < 2.0 * config.dt) {
        return Err(ControlError::StaleBelief { age: belief_age });
    }
    let n = config.horizon;
    let (nominal, warm): (Vec<InputVec>, Option<Vec<usize>>) = match previous {
        Some(p) if p.inputs.len() == n && p.status != QpStatus::Infeasible => {
            let mut u: Vec<InputVec> = p.inputs[1..].iter().map(|r| r.to_vector()).collect();
            u.push(u[n - 2]);
            let w = p
                .active
                .iter()
                .filter(|&&r| r >= ROWS_PER_STEP)
                .map(|&r| r - ROWS_PER_STEP)
                .collect();
            (u, Some(w))
        }
        _ => (vec![InputVec::zeros(); n], None),
    };
    // keep the nominal inputs inside their boxes
    let nominal: Vec<InputVec> = nominal
        .into_iter()
        .map(|u| {
            InputVec::new(
                u[0].clamp(-params.steer_rate_max, params.steer_rate_max),
                u[1].clamp(-params.jerk_max, params.jerk_max),
            )
        })
        .collect();
    let problem = build_ocp(state, s, path, params, config, &nominal)?;
    let solution = solve_ocp(&problem, warm.as_deref(), &config.qp)?;
    let (rates, status) = match solution.status {
        QpStatus::Optimal => (solution.inputs[0], MpcStatus::Optimal),
        QpStatus::MaxIter => (solution.inputs[0], MpcStatus::MaxIter),
        QpStatus::Infeasible => (safe_stop(state, config.dt, params), MpcStatus::Fallback),
    };
    Ok(MpcOutput {
        rates,
        status,
        solution,
    })
}

/// Stateful wrapper that carries the previous solution between calls.
#[derive(Debug, Clone)]
pub struct Mpc {
    pub config: MpcConfig,
    pub params: VehicleParams,
    previous: Option<OcpSolution>,
}

impl Mpc {
    pub fn new(config: MpcConfig, params: VehicleParams) -> Result<Self, ControlError> {
        config.validate()?;
        Ok(Self {
            config,
            params,
            previous: None,
        })
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    pub fn step(
        &mut self,
        state: &VehicleState,
        s: f64,
        path: &ReferencePath,
        belief_age: f64,
    ) -> Result<MpcOutput, ControlError> {
        let out = mpc_step(
            state,
            s,
            path,
            &self.params,
            &self.config,
            self.previous.as_ref(),
            belief_age,
        );
        match &out {
            Ok(o) if o.status != MpcStatus::Fallback => self.previous = Some(o.solution.clone()),
            _ => self.previous = None,
        }
        out
    }
}
