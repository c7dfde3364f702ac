//! Three-degree-of-freedom bicycle model.
//!
//! The same `derivative` drives the simulated plant and the MPC prediction
//! model. Tires use the linear region of a brush model with the convention
//! `F_y = -C * alpha`: a positive (left) steering angle produces a negative
//! front slip angle and therefore a positive lateral force, so yaw-rate
//! feedback through the slip angles is stabilizing.
//!
//! State layout (index order of [`StateVec`]):
//! `x, y, heading, long_speed, lat_speed, yaw_rate, steer, accel,
//! lateral_error, heading_error`.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::geometry::wrap_angle;

pub const STATE_DIM: usize = 10;
pub const INPUT_DIM: usize = 2;

pub type StateVec = SVector<f64, STATE_DIM>;
pub type InputVec = SVector<f64, INPUT_DIM>;
pub type StateJacobian = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputJacobian = SMatrix<f64, STATE_DIM, INPUT_DIM>;

pub mod idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const HEADING: usize = 2;
    pub const LONG_SPEED: usize = 3;
    pub const LAT_SPEED: usize = 4;
    pub const YAW_RATE: usize = 5;
    pub const STEER: usize = 6;
    pub const ACCEL: usize = 7;
    pub const LATERAL_ERROR: usize = 8;
    pub const HEADING_ERROR: usize = 9;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("longitudinal speed {speed} m/s is below the model minimum {min} m/s")]
    SpeedBelowMinimum { speed: f64, min: f64 },
    #[error("non-finite vehicle state")]
    NonFinite,
    #[error("integration step {0} s outside (0, 0.05]")]
    BadStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading in (−π, π].
    pub heading: f64,
    pub long_speed: f64,
    pub lat_speed: f64,
    pub yaw_rate: f64,
    pub steer: f64,
    pub accel: f64,
    /// Signed lateral offset from the reference path, left positive.
    pub lateral_error: f64,
    /// Heading minus path heading, in (−π, π].
    pub heading_error: f64,
}

impl VehicleState {
    pub fn to_vector(&self) -> StateVec {
        StateVec::from_column_slice(&[
            self.x,
            self.y,
            self.heading,
            self.long_speed,
            self.lat_speed,
            self.yaw_rate,
            self.steer,
            self.accel,
            self.lateral_error,
            self.heading_error,
        ])
    }

    pub fn from_vector(v: &StateVec) -> Self {
        Self {
            x: v[idx::X],
            y: v[idx::Y],
            heading: v[idx::HEADING],
            long_speed: v[idx::LONG_SPEED],
            lat_speed: v[idx::LAT_SPEED],
            yaw_rate: v[idx::YAW_RATE],
            steer: v[idx::STEER],
            accel: v[idx::ACCEL],
            lateral_error: v[idx::LATERAL_ERROR],
            heading_error: v[idx::HEADING_ERROR],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    /// Vehicle-level sideslip `atan(V/U)`.
    pub fn sideslip(&self) -> f64 {
        self.lat_speed.atan2(self.long_speed)
    }
}

/// Steering rate and longitudinal jerk.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlRates {
    pub steer_rate: f64,
    pub jerk: f64,
}

impl ControlRates {
    pub fn new(steer_rate: f64, jerk: f64) -> Self {
        Self { steer_rate, jerk }
    }

    pub fn to_vector(&self) -> InputVec {
        InputVec::new(self.steer_rate, self.jerk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub lf: f64,
    pub lr: f64,
    pub cornering_front: f64,
    pub cornering_rear: f64,
    pub steer_max: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_rate_max: f64,
    pub jerk_max: f64,
    /// Rear slip angle limit of the linear tire region.
    pub rear_slip_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 300.0,
            yaw_inertia: 180.0,
            lf: 0.8,
            lr: 0.8,
            cornering_front: 5.0e4,
            cornering_rear: 5.0e4,
            steer_max: 0.4,
            speed_min: 0.5,
            speed_max: 8.0,
            accel_min: -4.0,
            accel_max: 2.0,
            steer_rate_max: 1.0,
            jerk_max: 4.0,
            rear_slip_max: 0.08,
        }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    /// Checks the positivity and bound-ordering invariants.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("lf", self.lf),
            ("lr", self.lr),
            ("cornering_front", self.cornering_front),
            ("cornering_rear", self.cornering_rear),
            ("steer_max", self.steer_max),
            ("speed_min", self.speed_min),
            ("speed_max", self.speed_max),
            ("accel_max", self.accel_max),
            ("steer_rate_max", self.steer_rate_max),
            ("jerk_max", self.jerk_max),
            ("rear_slip_max", self.rear_slip_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.accel_min < 0.0) {
            return Err(format!("accel_min must be negative, got {}", self.accel_min));
        }
        if self.speed_min >= self.speed_max {
            return Err("speed_min must be below speed_max".into());
        }
        Ok(())
    }
}

/// Front and rear slip angles. Fails below `speed_min`.
pub fn slip_angles(state: &VehicleState, params: &VehicleParams) -> Result<(f64, f64), DynamicsError> {
    if !(state.long_speed >= params.speed_min) {
        return Err(DynamicsError::SpeedBelowMinimum {
            speed: state.long_speed,
            min: params.speed_min,
        });
    }
    Ok(slip_angles_at(state, state.long_speed, params))
}

fn slip_angles_at(state: &VehicleState, speed: f64, params: &VehicleParams) -> (f64, f64) {
    let front = ((state.lat_speed + params.lf * state.yaw_rate) / speed).atan() - state.steer;
    let rear = ((state.lat_speed - params.lr * state.yaw_rate) / speed).atan();
    (front, rear)
}

/// Slip angles with the speed clamped to `speed_min`, as used inside the plant.
pub fn slip_angles_clamped(state: &VehicleState, params: &VehicleParams) -> (f64, f64) {
    slip_angles_at(state, state.long_speed.max(params.speed_min), params)
}

/// Linear brush-model lateral forces.
pub fn tire_forces(alpha_front: f64, alpha_rear: f64, params: &VehicleParams) -> (f64, f64) {
    (
        -params.cornering_front * alpha_front,
        -params.cornering_rear * alpha_rear,
    )
}

/// Time derivative of the state under inputs `u` and path curvature `kappa`.
pub fn derivative(
    state: &StateVec,
    u: &InputVec,
    kappa: f64,
    params: &VehicleParams,
) -> Result<StateVec, DynamicsError> {
    if !state.iter().all(|v| v.is_finite()) || !u.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    Ok(derivative_unchecked(state, u, kappa, params))
}

pub(crate) fn derivative_unchecked(
    s: &StateVec,
    u: &InputVec,
    kappa: f64,
    p: &VehicleParams,
) -> StateVec {
    use idx::*;
    let vs = VehicleState::from_vector(s);
    let (af, ar) = slip_angles_clamped(&vs, p);
    let (fyf, fyr) = tire_forces(af, ar, p);
    let (sin_h, cos_h) = s[HEADING].sin_cos();
    let speed = s[LONG_SPEED];
    let lat = s[LAT_SPEED];
    let r = s[YAW_RATE];
    let mut d = StateVec::zeros();
    d[X] = speed * cos_h - lat * sin_h;
    d[Y] = speed * sin_h + lat * cos_h;
    d[HEADING] = r;
    d[LONG_SPEED] = s[ACCEL];
    d[LAT_SPEED] = (fyf + fyr) / p.mass - speed * r;
    d[YAW_RATE] = (fyf * p.lf - fyr * p.lr) / p.yaw_inertia;
    d[STEER] = u[0];
    d[ACCEL] = u[1];
    d[LATERAL_ERROR] = speed * s[HEADING_ERROR] + lat;
    d[HEADING_ERROR] = r - speed * kappa;
    d
}

/// Analytic Jacobians of [`derivative`] with respect to state and input.
pub fn jacobians(
    s: &StateVec,
    kappa: f64,
    p: &VehicleParams,
) -> (StateJacobian, InputJacobian) {
    use idx::*;
    let mut a = StateJacobian::zeros();
    let mut b = InputJacobian::zeros();
    let (sin_h, cos_h) = s[HEADING].sin_cos();
    let speed = s[LONG_SPEED];
    let lat = s[LAT_SPEED];
    let r = s[YAW_RATE];

    a[(X, HEADING)] = -speed * sin_h - lat * cos_h;
    a[(X, LONG_SPEED)] = cos_h;
    a[(X, LAT_SPEED)] = -sin_h;
    a[(Y, HEADING)] = speed * cos_h - lat * sin_h;
    a[(Y, LONG_SPEED)] = sin_h;
    a[(Y, LAT_SPEED)] = cos_h;
    a[(HEADING, YAW_RATE)] = 1.0;
    a[(LONG_SPEED, ACCEL)] = 1.0;

    let clamped = speed < p.speed_min;
    let ue = speed.max(p.speed_min);
    let qf = (lat + p.lf * r) / ue;
    let qr = (lat - p.lr * r) / ue;
    let gf = 1.0 / (ue * (1.0 + qf * qf));
    let gr = 1.0 / (ue * (1.0 + qr * qr));
    // partials of the slip angles: [speed, lat, yaw_rate, steer]
    let daf = [
        if clamped { 0.0 } else { -qf * gf },
        gf,
        p.lf * gf,
        -1.0,
    ];
    let dar = [if clamped { 0.0 } else { -qr * gr }, gr, -p.lr * gr, 0.0];
    let cols = [LONG_SPEED, LAT_SPEED, YAW_RATE, STEER];
    for (k, &col) in cols.iter().enumerate() {
        let dfyf = -p.cornering_front * daf[k];
        let dfyr = -p.cornering_rear * dar[k];
        a[(LAT_SPEED, col)] = (dfyf + dfyr) / p.mass;
        a[(YAW_RATE, col)] = (dfyf * p.lf - dfyr * p.lr) / p.yaw_inertia;
    }
    a[(LAT_SPEED, LONG_SPEED)] -= r;
    a[(LAT_SPEED, YAW_RATE)] -= speed;

    a[(LATERAL_ERROR, LONG_SPEED)] = s[HEADING_ERROR];
    a[(LATERAL_ERROR, HEADING_ERROR)] = speed;
    a[(LATERAL_ERROR, LAT_SPEED)] = 1.0;
    a[(HEADING_ERROR, YAW_RATE)] = 1.0;
    a[(HEADING_ERROR, LONG_SPEED)] = -kappa;

    b[(STEER, 0)] = 1.0;
    b[(ACCEL, 1)] = 1.0;
    (a, b)
}

/// One classical RK4 step of signed length `dt`, without angle wrapping.
pub fn rk4(s: &StateVec, u: &InputVec, kappa: f64, dt: f64, p: &VehicleParams) -> StateVec {
    let k1 = derivative_unchecked(s, u, kappa, p);
    let k2 = derivative_unchecked(&(s + k1 * (0.5 * dt)), u, kappa, p);
    let k3 = derivative_unchecked(&(s + k2 * (0.5 * dt)), u, kappa, p);
    let k4 = derivative_unchecked(&(s + k3 * dt), u, kappa, p);
    s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Advances the state by `dt ∈ (0, 0.05]` with RK4 and renormalizes angles.
pub fn step(
    state: &VehicleState,
    u: &ControlRates,
    kappa: f64,
    dt: f64,
    params: &VehicleParams,
) -> Result<VehicleState, DynamicsError> {
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(DynamicsError::BadStep(dt));
    }
    if !state.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    let next = rk4(&state.to_vector(), &u.to_vector(), kappa, dt, params);
    let mut out = VehicleState::from_vector(&next);
    out.heading = wrap_angle(out.heading);
    out.heading_error = wrap_angle(out.heading_error);
    if !out.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    Ok(out)
}

/// Number of RK4 substeps that keeps the lateral modes inside the stability region.
///
/// The slip-angle dynamics have poles near `-(C_f + C_r) / (M U)`, which get
/// stiff at low speed.
pub fn stable_substeps(speed: f64, dt: f64, p: &VehicleParams) -> usize {
    let ue = speed.max(p.speed_min);
    let lat = (p.cornering_front + p.cornering_rear) / (p.mass * ue);
    let yaw = (p.cornering_front * p.lf * p.lf + p.cornering_rear * p.lr * p.lr)
        / (p.yaw_inertia * ue);
    let rate = lat + yaw;
    ((dt * rate / 2.0).ceil() as usize).max(1)
}

/// Advances by an arbitrary `dt` using as many stable RK4 substeps as needed.
pub fn advance(
    state: &VehicleState,
    u: &ControlRates,
    kappa: f64,
    dt: f64,
    params: &VehicleParams,
) -> Result<VehicleState, DynamicsError> {
    let n = stable_substeps(state.long_speed, dt, params).max((dt / 0.05).ceil() as usize);
    let h = dt / n as f64;
    let mut s = *state;
    for _ in 0..n {
        s = step(&s, u, kappa, h, params)?;
    }
    Ok(s)
}
