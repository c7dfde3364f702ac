//! Extended Kalman filter for planar pose and velocity.
//!
//! State: `[x, y, heading, vx, vy, yaw_rate]` with body-frame velocities.
//! Accelerometer readings drive the prediction; GNSS, wheel speed, LiDAR
//! odometry and the gyro correct it.

use std::fmt::Write as _;

use log::warn;
use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use thiserror::Error;

use crate::geometry::wrap_angle;
use crate::sensors::{Measurement, SensorKind};

pub type Vec6 = SVector<f64, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;

pub const X: usize = 0;
pub const Y: usize = 1;
pub const HEADING: usize = 2;
pub const VX: usize = 3;
pub const VY: usize = 4;
pub const YAW_RATE: usize = 5;

/// Longest single prediction step; longer gaps are split.
const MAX_PREDICT_STEP: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("prediction step {0} s must be positive")]
    BadStep(f64),
    #[error("measurement at t={t} is older than the belief time {prev}")]
    OutOfOrder { t: f64, prev: f64 },
    #[error("innovation covariance is singular")]
    Singular,
    #[error("measurement dimension {got} does not match model dimension {want}")]
    Dimension { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Belief {
    pub mean: Vec6,
    pub cov: Mat6,
    pub t: f64,
}

impl Belief {
    pub fn new(mean: Vec6, cov: Mat6, t: f64) -> Self {
        Self { mean, cov, t }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.cov - self.cov.transpose()).amax() <= tol
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.cov.symmetric_eigenvalues().min()
    }
}

/// Body-frame specific force from the INS.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Imu {
    pub ax: f64,
    pub ay: f64,
}

/// Continuous-time process model.
pub fn process_rate(x: &Vec6, imu: &Imu) -> Vec6 {
    let (s, c) = x[HEADING].sin_cos();
    let (vx, vy, r) = (x[VX], x[VY], x[YAW_RATE]);
    Vec6::new(
        vx * c - vy * s,
        vx * s + vy * c,
        r,
        imu.ax + vy * r,
        imu.ay - vx * r,
        0.0,
    )
}

/// Jacobian of [`process_rate`] with respect to the state.
pub fn process_jacobian(x: &Vec6) -> Mat6 {
    let (s, c) = x[HEADING].sin_cos();
    let (vx, vy, r) = (x[VX], x[VY], x[YAW_RATE]);
    let mut j = Mat6::zeros();
    j[(X, HEADING)] = -vx * s - vy * c;
    j[(X, VX)] = c;
    j[(X, VY)] = -s;
    j[(Y, HEADING)] = vx * c - vy * s;
    j[(Y, VX)] = s;
    j[(Y, VY)] = c;
    j[(HEADING, YAW_RATE)] = 1.0;
    j[(VX, VY)] = r;
    j[(VX, YAW_RATE)] = vy;
    j[(VY, VX)] = -r;
    j[(VY, YAW_RATE)] = -vx;
    j
}

/// One midpoint (RK2) step of the process model, without angle wrapping.
pub fn transition(x: &Vec6, imu: &Imu, dt: f64) -> Vec6 {
    let mid = x + process_rate(x, imu) * (dt / 2.0);
    x + process_rate(&mid, imu) * dt
}

/// Exact Jacobian of [`transition`].
pub fn transition_jacobian(x: &Vec6, imu: &Imu, dt: f64) -> Mat6 {
    let j0 = process_jacobian(x);
    let mid = x + process_rate(x, imu) * (dt / 2.0);
    let jm = process_jacobian(&mid);
    Mat6::identity() + jm * (Mat6::identity() + j0 * (dt / 2.0)) * dt
}

/// Advances the belief by `dt`. `q` is the process noise density, scaled by `dt`.
pub fn predict(belief: &Belief, imu: &Imu, dt: f64, q: &Mat6) -> Result<Belief, EstimatorError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(EstimatorError::BadStep(dt));
    }
    if !imu.ax.is_finite() || !imu.ay.is_finite() {
        return Err(EstimatorError::NonFinite("imu"));
    }
    let f = transition_jacobian(&belief.mean, imu, dt);
    let mut mean = transition(&belief.mean, imu, dt);
    mean[HEADING] = wrap_angle(mean[HEADING]);
    let cov = f * belief.cov * f.transpose() + q * dt;
    let cov = (cov + cov.transpose()) * 0.5;
    if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
        return Err(EstimatorError::NonFinite("prediction"));
    }
    Ok(Belief {
        mean,
        cov,
        t: belief.t + dt,
    })
}

/// Measurement function, Jacobian and noise of one sensor.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub h: fn(&Vec6) -> DVector<f64>,
    pub jacobian: fn(&Vec6) -> DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Residual rows holding angles, wrapped before use.
    pub angle_rows: &'static [usize],
}

fn select(rows: &[usize]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(rows.len(), 6);
    for (i, &c) in rows.iter().enumerate() {
        h[(i, c)] = 1.0;
    }
    h
}

impl MeasurementModel {
    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn gnss(r: DMatrix<f64>) -> Self {
        Self {
            h: |x| DVector::from_vec(vec![x[X], x[Y]]),
            jacobian: |_| select(&[X, Y]),
            r,
            angle_rows: &[],
        }
    }

    pub fn wheel_speed(r: DMatrix<f64>) -> Self {
        Self {
            h: |x| DVector::from_vec(vec![x[VX]]),
            jacobian: |_| select(&[VX]),
            r,
            angle_rows: &[],
        }
    }

    pub fn lidar_odom(r: DMatrix<f64>) -> Self {
        Self {
            h: |x| DVector::from_vec(vec![x[X], x[Y], x[HEADING]]),
            jacobian: |_| select(&[X, Y, HEADING]),
            r,
            angle_rows: &[2],
        }
    }

    pub fn yaw_rate(r: DMatrix<f64>) -> Self {
        Self {
            h: |x| DVector::from_vec(vec![x[YAW_RATE]]),
            jacobian: |_| select(&[YAW_RATE]),
            r,
            angle_rows: &[],
        }
    }
}

/// Joseph-form Kalman update.
pub fn update(
    belief: &Belief,
    z: &DVector<f64>,
    model: &MeasurementModel,
) -> Result<Belief, EstimatorError> {
    let m = model.dim();
    if z.len() != m {
        return Err(EstimatorError::Dimension {
            got: z.len(),
            want: m,
        });
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(EstimatorError::NonFinite("measurement"));
    }
    let h = (model.jacobian)(&belief.mean);
    let p = DMatrix::from_column_slice(6, 6, belief.cov.as_slice());
    let s = &h * &p * h.transpose() + &model.r;
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(EstimatorError::Singular)?;
    let mut innov = z - (model.h)(&belief.mean);
    for &row in model.angle_rows {
        innov[row] = wrap_angle(innov[row]);
    }
    let pht = &p * h.transpose();
    let k = chol.solve(&pht.transpose()).transpose();
    let mut mean = belief.mean + Vec6::from_column_slice((&k * innov).as_slice());
    mean[HEADING] = wrap_angle(mean[HEADING]);
    let i_kh = DMatrix::identity(6, 6) - &k * &h;
    let post = &i_kh * &p * i_kh.transpose() + &k * &model.r * k.transpose();
    let post = Mat6::from_column_slice(post.as_slice());
    let cov = (post + post.transpose()) * 0.5;
    if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
        return Err(EstimatorError::Singular);
    }
    Ok(Belief {
        mean,
        cov,
        t: belief.t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfConfig {
    /// Process noise density per state.
    pub q: [f64; 6],
    pub initial_std: [f64; 6],
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            q: [1e-5, 1e-5, 1e-6, 1e-4, 1e-4, 0.03],
            initial_std: [0.1, 0.1, 0.02, 0.1, 0.1, 0.05],
        }
    }
}

impl EkfConfig {
    pub fn q_matrix(&self) -> Mat6 {
        Mat6::from_diagonal(&Vec6::from_column_slice(&self.q))
    }

    pub fn initial_cov(&self) -> Mat6 {
        Mat6::from_diagonal(&Vec6::from_iterator(self.initial_std.iter().map(|s| s * s)))
    }
}

/// Sequential filter consuming measurement batches.
#[derive(Debug, Clone)]
pub struct Ekf {
    belief: Belief,
    q: Mat6,
    last_imu: Imu,
    rejected: usize,
}

impl Ekf {
    pub fn new(belief: Belief, config: &EkfConfig) -> Self {
        Self {
            belief,
            q: config.q_matrix(),
            last_imu: Imu::default(),
            rejected: 0,
        }
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    /// Number of updates skipped because of a singular innovation.
    pub fn rejected_updates(&self) -> usize {
        self.rejected
    }

    fn predict_to(&mut self, t: f64) -> Result<(), EstimatorError> {
        while t - self.belief.t > 1e-12 {
            let dt = (t - self.belief.t).min(MAX_PREDICT_STEP);
            self.belief = predict(&self.belief, &self.last_imu, dt, &self.q)?;
        }
        self.belief.t = self.belief.t.max(t);
        Ok(())
    }

    fn correct(&mut self, z: DVector<f64>, model: &MeasurementModel) -> Result<(), EstimatorError> {
        match update(&self.belief, &z, model) {
            Ok(b) => self.belief = b,
            Err(EstimatorError::Singular) => {
                warn!("rejected update at t={}: singular innovation", self.belief.t);
                self.rejected += 1;
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// Applies one measurement at its timestamp.
    pub fn apply(&mut self, m: &Measurement) -> Result<(), EstimatorError> {
        if m.t < self.belief.t - 1e-9 {
            return Err(EstimatorError::OutOfOrder {
                t: m.t,
                prev: self.belief.t,
            });
        }
        self.predict_to(m.t)?;
        let Some(v) = m.vector() else {
            return Ok(());
        };
        let z = DVector::from_column_slice(v);
        match m.kind {
            SensorKind::Ins => {
                self.last_imu = Imu { ax: v[0], ay: v[1] };
                let r = DMatrix::from_element(1, 1, m.cov[(2, 2)]);
                self.correct(DVector::from_element(1, v[2]), &MeasurementModel::yaw_rate(r))
            }
            SensorKind::GnssPos => self.correct(z, &MeasurementModel::gnss(m.cov.clone())),
            SensorKind::WheelSpeed => {
                self.correct(z, &MeasurementModel::wheel_speed(m.cov.clone()))
            }
            SensorKind::LidarOdom => {
                self.correct(z, &MeasurementModel::lidar_odom(m.cov.clone()))
            }
            SensorKind::ConeScan | SensorKind::Camera => Ok(()),
        }
    }

    /// Fuses a time-ordered batch and predicts forward to `t_end`.
    pub fn fuse_step(&mut self, measurements: &[Measurement], t_end: f64) -> Result<(), EstimatorError> {
        for w in measurements.windows(2) {
            if w[1].t < w[0].t {
                return Err(EstimatorError::OutOfOrder {
                    t: w[1].t,
                    prev: w[0].t,
                });
            }
        }
        for m in measurements {
            self.apply(m)?;
        }
        if t_end < self.belief.t - 1e-9 {
            return Err(EstimatorError::OutOfOrder {
                t: t_end,
                prev: self.belief.t,
            });
        }
        self.predict_to(t_end)
    }
}

pub const BELIEF_HEADER: &str =
    "t,x,y,heading,vx,vy,yaw_rate,var_x,var_y,var_heading,var_vx,var_vy,var_yaw_rate";

pub fn belief_csv_row(b: &Belief) -> String {
    let mut s = format!("{}", b.t);
    for v in b.mean.iter() {
        let _ = write!(s, ",{v}");
    }
    for i in 0..6 {
        let _ = write!(s, ",{}", b.cov[(i, i)]);
    }
    s
}
