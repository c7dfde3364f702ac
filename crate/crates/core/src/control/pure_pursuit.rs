//! Geometric pure pursuit with proportional speed control.

use super::ControlError;
use crate::dynamics::{ControlRates, VehicleParams, VehicleState};
use crate::geometry::{dist, Pose2};
use crate::track::{ReferencePath, TrackError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurePursuitConfig {
    /// Base lookahead distance.
    pub lookahead: f64,
    /// Lookahead grows as `lookahead_time · U` once that exceeds the base.
    pub lookahead_time: f64,
    pub min_lookahead: f64,
    /// Proportional gain from speed error to acceleration command.
    pub speed_gain: f64,
}

impl Default for PurePursuitConfig {
    fn default() -> Self {
        Self {
            lookahead: 4.0,
            lookahead_time: 0.5,
            min_lookahead: 2.0,
            speed_gain: 1.0,
        }
    }
}

impl PurePursuitConfig {
    pub fn lookahead_for(&self, speed: f64) -> f64 {
        self.lookahead.max(self.lookahead_time * speed).max(self.min_lookahead)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurePursuitCommand {
    pub steer: f64,
    pub accel: f64,
    pub goal: [f64; 2],
    /// Path coordinate of the rear axle projection.
    pub s: f64,
}

fn point(path: &ReferencePath, s: f64) -> Result<[f64; 2], TrackError> {
    let s = if path.is_closed() {
        path.wrap_s(s)
    } else {
        s.clamp(path.start_s(), path.end_s())
    };
    path.point_at(s, 0.0)
}

/// Pure pursuit about the rear axle: the goal is the first path point ahead
/// at distance `lookahead`, and `δ = atan(2 L sin η / L_d)`.
pub fn pure_pursuit_step(
    state: &VehicleState,
    path: &ReferencePath,
    lookahead: f64,
    speed_target: f64,
    config: &PurePursuitConfig,
    params: &VehicleParams,
) -> Result<PurePursuitCommand, ControlError> {
    if !(lookahead > 0.0) {
        return Err(ControlError::BadConfig(format!("lookahead {lookahead} not positive")));
    }
    let (sin_h, cos_h) = state.heading.sin_cos();
    let rear = [state.x - params.lr * cos_h, state.y - params.lr * sin_h];
    let pose = Pose2::new(rear[0], rear[1], state.heading);
    let limit = 2.0 * lookahead;
    let frame = match path.path_frame(&pose) {
        Ok(f) => f,
        Err(TrackError::OffTrack { distance }) => return Err(ControlError::OffPath { distance, limit }),
        Err(e) => return Err(e.into()),
    };
    if frame.distance > limit {
        return Err(ControlError::OffPath {
            distance: frame.distance,
            limit,
        });
    }

    const STEP: f64 = 0.25;
    let horizon = if path.is_closed() {
        path.length()
    } else {
        path.end_s() - frame.s
    };
    let mut lo = frame.s;
    let mut goal = point(path, lo)?;
    let mut travelled = 0.0;
    while travelled < horizon {
        let step = STEP.min(horizon - travelled);
        let hi = lo + step;
        let p = point(path, hi)?;
        if dist(rear, p) >= lookahead {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if dist(rear, point(path, mid)?) < lookahead {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            goal = point(path, b)?;
            break;
        }
        lo = hi;
        goal = p;
        travelled += step;
    }
    let local = pose.to_body(goal);
    let ld = local[0].hypot(local[1]);
    let steer = if ld < 1e-9 {
        0.0
    } else {
        let eta = local[1].atan2(local[0]);
        (2.0 * params.wheelbase() * eta.sin() / ld).atan()
    };
    let accel = (config.speed_gain * (speed_target - state.long_speed)).clamp(params.accel_min, params.accel_max);
    Ok(PurePursuitCommand {
        steer: steer.clamp(-params.steer_max, params.steer_max),
        accel,
        goal,
        s: frame.s,
    })
}

/// Rates that reach the commanded steering angle and acceleration after
/// `dt`, limited to the actuator boxes.
pub fn command_to_rates(state: &VehicleState, steer: f64, accel: f64, dt: f64, params: &VehicleParams) -> ControlRates {
    ControlRates::new(
        ((steer - state.steer) / dt).clamp(-params.steer_rate_max, params.steer_rate_max),
        ((accel - state.accel) / dt).clamp(-params.jerk_max, params.jerk_max),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::advance;
    use crate::track::Track;

    fn straight() -> ReferencePath {
        let n = 200;
        let pts: Vec<[f64; 2]> = (0..n).map(|i| [i as f64 * 0.5, 0.0]).collect();
        ReferencePath::new(&pts, &vec![0.0; n], &vec![0.0; n], &vec![(-2.0, 2.0); n], false, 0.0).unwrap()
    }

    fn at(x: f64, y: f64, heading: f64) -> VehicleState {
        let p = VehicleParams::default();
        VehicleState {
            x: x + p.lr * heading.cos(),
            y: y + p.lr * heading.sin(),
            heading,
            long_speed: 4.0,
            ..Default::default()
        }
    }

    #[test]
    fn goal_ahead_means_straight_wheels() {
        let p = VehicleParams::default();
        let c = pure_pursuit_step(&at(10.0, 0.0, 0.0), &straight(), 4.0, 4.0, &PurePursuitConfig::default(), &p).unwrap();
        assert!(c.steer.abs() < 1e-12);
        assert!((c.goal[0] - 14.0).abs() < 1e-9);
        assert_eq!(c.accel, 0.0);
    }

    #[test]
    fn circle_chord_geometry() {
        let p = VehicleParams::default();
        for r in [10.0, 20.0, 32.0] {
            let track = Track::circle(r, 4.0, 5.0).unwrap();
            for ld in [2.0, 4.0, 6.0] {
                let c = pure_pursuit_step(&at(0.0, 0.0, 0.0), &track.reference, ld, 4.0, &PurePursuitConfig::default(), &p)
                    .unwrap();
                let expected = (p.wheelbase() / r).atan();
                assert!((c.steer - expected).abs() < 1e-6, "R={r} Ld={ld}: {} vs {expected}", c.steer);
            }
        }
    }

    #[test]
    fn mirrored_goal_mirrors_steering() {
        let p = VehicleParams::default();
        let cfg = PurePursuitConfig::default();
        let left = pure_pursuit_step(&at(10.0, -0.7, 0.1), &straight(), 4.0, 4.0, &cfg, &p).unwrap();
        let right = pure_pursuit_step(&at(10.0, 0.7, -0.1), &straight(), 4.0, 4.0, &cfg, &p).unwrap();
        assert!(left.steer > 0.0);
        assert!((left.steer + right.steer).abs() < 1e-12);
    }

    #[test]
    fn far_from_path_is_an_error() {
        let p = VehicleParams::default();
        let e = pure_pursuit_step(&at(10.0, 9.0, 0.0), &straight(), 4.0, 4.0, &PurePursuitConfig::default(), &p);
        assert!(matches!(e, Err(ControlError::OffPath { .. })));
    }

    #[test]
    fn speed_loop_is_bounded() {
        let p = VehicleParams::default();
        let c = pure_pursuit_step(&at(10.0, 0.0, 0.0), &straight(), 4.0, 40.0, &PurePursuitConfig::default(), &p).unwrap();
        assert_eq!(c.accel, p.accel_max);
        let r = command_to_rates(&at(0.0, 0.0, 0.0), 0.4, 2.0, 0.1, &p);
        assert_eq!(r.steer_rate, p.steer_rate_max);
        assert_eq!(r.jerk, p.jerk_max);
    }

    #[test]
    fn lookahead_schedule() {
        let c = PurePursuitConfig::default();
        assert_eq!(c.lookahead_for(3.0), 4.0);
        assert_eq!(c.lookahead_for(10.0), 5.0);
    }

    #[test]
    fn closed_loop_converges_on_circle() {
        let p = VehicleParams::default();
        let cfg = PurePursuitConfig::default();
        let track = Track::circle(20.0, 4.0, 5.0).unwrap();
        let path = &track.reference;
        let mut st = at(0.0, 0.5, 0.0);
        let mut late: f64 = 0.0;
        for k in 0..300 {
            let c = pure_pursuit_step(&st, path, cfg.lookahead_for(st.long_speed), 4.0, &cfg, &p).unwrap();
            let kappa = path.curvature_at(c.s).unwrap();
            st = advance(&st, &command_to_rates(&st, c.steer, c.accel, 0.1, &p), kappa, 0.1, &p).unwrap();
            let f = path.path_frame(&Pose2::new(st.x, st.y, st.heading)).unwrap();
            if k > 200 {
                late = late.max(f.lateral_error.abs());
            }
        }
        assert!(late < 0.3, "{late}");
    }
}
