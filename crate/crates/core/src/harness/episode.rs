//! The closed-loop episode: plant, sensors, estimator, mapping, planning and control.

use log::{debug, info, warn};

use crate::conenet::{encode_input, encode_order, Network, LABEL_BLUE, LABEL_RED, NUM_CLASSES};
use crate::control::{command_to_rates, pure_pursuit_step, Mpc, MpcConfig, MpcStatus};
use crate::dynamics::{advance, ControlRates, DynamicsError, VehicleState};
use crate::estimator::{Belief, Ekf, Vec6};
use crate::geometry::{dist, Pose2};
use crate::gridmap::{merge_nearby, ConeMap, MapCone, MapDetection};
use crate::perception::detect_cones;
use crate::planner::plan_from_cones;
use crate::sensors::{Measurement, Payload, SensorKind, SensorSuite};
use crate::track::{ConeColor, ReferencePath, Track};

use super::config::{ControllerKind, DropoutWindow, EpisodeConfig, Mission};
use super::metrics::{compute_metrics, MetricSample, Metrics};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Mapping the unknown track at capped speed.
    Explore,
    /// Following the frozen middle line with the selected controller.
    Race,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Explore => "explore",
            Phase::Race => "race",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeStatus {
    Completed,
    Timeout,
    Crashed { t: f64, offset: f64 },
    Failed { t: f64, reason: String },
}

impl EpisodeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            EpisodeStatus::Completed => "completed",
            EpisodeStatus::Timeout => "timeout",
            EpisodeStatus::Crashed { .. } => "crashed",
            EpisodeStatus::Failed { .. } => "failed",
        }
    }

    pub fn detail(&self) -> String {
        match self {
            EpisodeStatus::Completed | EpisodeStatus::Timeout => String::new(),
            EpisodeStatus::Crashed { t, offset } => format!("t={t} offset={offset}"),
            EpisodeStatus::Failed { t, reason } => format!("t={t} {reason}"),
        }
    }
}

/// A start-line crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapEvent {
    pub t: f64,
    /// Laps completed including this one.
    pub lap: usize,
    /// Phase the lap was driven in.
    pub phase: Phase,
}

/// Plant-rate record of the true vehicle state and the held command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRow {
    pub t: f64,
    /// Current lap, 1-based.
    pub lap: usize,
    pub phase: Phase,
    /// `lateral_error`/`heading_error` are relative to the true centerline.
    pub truth: VehicleState,
    pub rates: ControlRates,
    /// Lateral error of the true pose from the path being followed; NaN when
    /// there is none.
    pub path_error: f64,
    /// Distance travelled along the true centerline.
    pub progress: f64,
}

/// Control-rate record of what the controller saw and did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlRow {
    pub t: f64,
    pub lap: usize,
    pub phase: Phase,
    /// Estimated state handed to the controller.
    pub estimate: VehicleState,
    pub rates: ControlRates,
    pub speed_target: f64,
    pub status: &'static str,
    pub qp_iterations: usize,
    /// First-step rear-slip slack of the MPC solution, m/s (0 otherwise).
    pub slip_slack: f64,
    pub belief_age: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub config: EpisodeConfig,
    pub track: Track,
    pub status: EpisodeStatus,
    pub measurements: Vec<Measurement>,
    /// Belief after fusion at every control step.
    pub beliefs: Vec<Belief>,
    pub telemetry: Vec<TelemetryRow>,
    pub control: Vec<ControlRow>,
    pub laps: Vec<LapEvent>,
    pub events: Vec<(f64, String)>,
    pub map: ConeMap,
    /// Cones extracted when the middle line was frozen, or at the end.
    pub cones: Vec<MapCone>,
    /// The frozen middle line followed after exploration.
    pub reference: Option<ReferencePath>,
    pub mapped_fraction: f64,
}

impl EpisodeLog {
    /// Lap durations from consecutive start-line crossings.
    pub fn lap_times(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.laps
            .iter()
            .map(|e| {
                let d = e.t - prev;
                prev = e.t;
                d
            })
            .collect()
    }

    /// Durations of race laps after lap 1.
    fn race_lap_times(&self) -> Vec<f64> {
        self.laps
            .iter()
            .zip(self.lap_times())
            .filter(|(e, _)| e.phase == Phase::Race && e.lap >= 2)
            .map(|(_, d)| d)
            .collect()
    }

    /// Metrics on the true state over race laps after lap 1.
    pub fn metrics(&self) -> Result<Metrics, HarnessError> {
        let samples: Vec<MetricSample> = self
            .telemetry
            .iter()
            .filter(|r| r.phase == Phase::Race && r.lap >= 2)
            .map(|r| MetricSample {
                t: r.t,
                long_speed: r.truth.long_speed,
                lat_speed: r.truth.lat_speed,
                yaw_rate: r.truth.yaw_rate,
                lateral_error: r.path_error,
            })
            .collect();
        compute_metrics(&samples, &self.race_lap_times())
    }

    /// Same metrics computed from the controller's estimates.
    pub fn metrics_on_belief(&self) -> Result<Metrics, HarnessError> {
        let samples: Vec<MetricSample> = self
            .control
            .iter()
            .filter(|r| r.phase == Phase::Race && r.lap >= 2)
            .map(|r| MetricSample {
                t: r.t,
                long_speed: r.estimate.long_speed,
                lat_speed: r.estimate.lat_speed,
                yaw_rate: r.estimate.yaw_rate,
                lateral_error: r.estimate.lateral_error,
            })
            .collect();
        compute_metrics(&samples, &self.race_lap_times())
    }
}

/// Colors LiDAR cones with the trained classifier.
struct Classifier {
    net: Network,
}

impl Classifier {
    fn detections(&self, cones: &[[f64; 2]]) -> Vec<MapDetection> {
        let probs = self.net.forward(&encode_input(cones));
        let mut out = Vec::new();
        for (k, &i) in encode_order(cones).iter().enumerate() {
            let row = &probs[k * NUM_CLASSES..(k + 1) * NUM_CLASSES];
            let (red, blue) = (row[LABEL_RED as usize], row[LABEL_BLUE as usize]);
            if red + blue <= 0.0 {
                continue;
            }
            let (color, p) = if blue >= red {
                (ConeColor::Blue, blue / (red + blue))
            } else {
                (ConeColor::Red, red / (red + blue))
            };
            out.push(MapDetection {
                position: cones[i],
                color: Some(color),
                confidence: p.clamp(0.5, 0.99),
            });
        }
        out
    }
}

fn controller_state(belief: &Belief, truth: &VehicleState) -> VehicleState {
    let m = &belief.mean;
    VehicleState {
        x: m[0],
        y: m[1],
        heading: m[2],
        long_speed: m[3],
        lat_speed: m[4],
        yaw_rate: m[5],
        // actuator states are read from the actuators themselves
        steer: truth.steer,
        accel: truth.accel,
        lateral_error: 0.0,
        heading_error: 0.0,
    }
}

fn pose_of(s: &VehicleState) -> Pose2 {
    Pose2::new(s.x, s.y, s.heading)
}

fn split_colors(cones: &[MapCone]) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let blue = cones.iter().filter(|c| c.color == ConeColor::Blue).map(|c| c.position).collect();
    let red = cones.iter().filter(|c| c.color == ConeColor::Red).map(|c| c.position).collect();
    (blue, red)
}

/// Share of true cones with a same-color map cone within `radius`.
pub fn mapped_fraction(track: &Track, cones: &[MapCone], radius: f64) -> f64 {
    let total = track.blue_cones.len() + track.red_cones.len();
    if total == 0 {
        return 0.0;
    }
    let hit = track
        .cones()
        .filter(|(p, color)| cones.iter().any(|c| c.color == *color && dist(c.position, *p) <= radius))
        .count();
    hit as f64 / total as f64
}

/// Initial state at the start of the centerline, and the matching belief.
pub fn initial_state(config: &EpisodeConfig, track: &Track) -> Result<(VehicleState, Belief), HarnessError> {
    let start = track.reference.pose_at(track.reference.start_s())?;
    let truth = VehicleState {
        x: start.x,
        y: start.y,
        heading: start.heading,
        long_speed: config.initial_speed,
        ..Default::default()
    };
    let belief = Belief::new(
        Vec6::new(truth.x, truth.y, truth.heading, truth.long_speed, 0.0, 0.0),
        config.estimator.initial_cov(),
        0.0,
    );
    Ok((truth, belief))
}

/// Sensor suite with the time-based LiDAR odometry outages installed.
pub fn sensor_suite(config: &EpisodeConfig) -> Result<SensorSuite, HarnessError> {
    let mut schedule = config.sensors.clone();
    for w in &config.odom_dropouts {
        if let DropoutWindow::Time { start, end } = *w {
            schedule.lidar_odom.dropouts.push((start, end));
        }
    }
    Ok(SensorSuite::new(schedule, config.seed)?)
}

struct Runner<'a> {
    cfg: &'a EpisodeConfig,
    track: Track,
    suite: SensorSuite,
    ekf: Ekf,
    map: ConeMap,
    classifier: Option<Classifier>,
    mpc: Mpc,
    truth: VehicleState,
    rates: ControlRates,
    phase: Phase,
    lap1_path: Option<ReferencePath>,
    reference: Option<ReferencePath>,
    race_s: Option<f64>,
    /// Last arc length of the true pose on the centerline.
    true_s: f64,
    progress: f64,
    laps_done: usize,
    last_fix: f64,
    lap_dropout_on: bool,
    log_events: Vec<(f64, String)>,
    laps: Vec<LapEvent>,
    mapped_fraction: f64,
    cones: Vec<MapCone>,
}

enum Stop {
    Continue,
    Done(EpisodeStatus),
}

impl<'a> Runner<'a> {
    fn event(&mut self, t: f64, msg: String) {
        info!("t={t:.2} {msg}");
        self.log_events.push((t, msg));
    }

    fn map_cones(&self) -> Vec<MapCone> {
        merge_nearby(&self.map.extract_cones(self.cfg.map.s_min), self.cfg.cone_merge_radius)
    }

    fn lap_fraction(&self) -> f64 {
        let l = self.track.lap_length();
        (self.progress - self.laps_done as f64 * l) / l
    }

    fn update_lap_dropouts(&mut self, t: f64) {
        let lap = self.laps_done + 1;
        let frac = self.lap_fraction();
        let active = self.cfg.odom_dropouts.iter().any(|w| match *w {
            DropoutWindow::Lap { lap: l, start, end } => l == lap && frac >= start && frac < end,
            DropoutWindow::Time { .. } => false,
        });
        if active && !self.lap_dropout_on {
            self.suite.start_dropout(SensorKind::LidarOdom, t);
            self.lap_dropout_on = true;
            self.event(t, format!("lidar odometry dropout starts (lap {lap}, fraction {frac:.3})"));
        } else if !active && self.lap_dropout_on {
            self.suite.end_dropout(SensorKind::LidarOdom, t);
            self.lap_dropout_on = false;
            self.event(t, format!("lidar odometry dropout ends (lap {lap}, fraction {frac:.3})"));
        }
    }

    fn integrate_perception(&mut self, ms: &[Measurement]) -> Result<(), HarnessError> {
        let b = self.ekf.belief().mean;
        let pose = Pose2::new(b[0], b[1], b[2]);
        let settings = &self.cfg.perception;
        for m in ms {
            let detections: Vec<MapDetection> = match (&m.kind, &m.payload) {
                (SensorKind::ConeScan, Payload::Points(points)) if settings.use_lidar => {
                    let cones = detect_cones(points, &settings.clustering);
                    match &self.classifier {
                        Some(c) => c.detections(&cones),
                        None => cones
                            .into_iter()
                            .map(|position| MapDetection {
                                position,
                                color: None,
                                confidence: self.map.config().colorless_prob,
                            })
                            .collect(),
                    }
                }
                (SensorKind::Camera, Payload::Detections(dets)) if settings.use_camera => dets
                    .iter()
                    .filter_map(|d| {
                        let position = self.suite.camera().back_project(d.pixel).ok()?;
                        Some(MapDetection {
                            position,
                            color: Some(d.color),
                            confidence: d.confidence.clamp(1e-6, 1.0 - 1e-6),
                        })
                    })
                    .collect(),
                _ => continue,
            };
            self.map.integrate_detections(&detections, &pose)?;
        }
        Ok(())
    }

    /// Replans the lap-1 path from the current map.
    fn replan(&mut self, pose: &Pose2) {
        let cones = self.map_cones();
        let (blue, red) = split_colors(&cones);
        match plan_from_cones(&blue, &red, pose, &self.cfg.planner) {
            Ok((path, _)) => self.lap1_path = Some(path),
            Err(e) => debug!("lap-1 replanning kept the previous path: {e}"),
        }
    }

    /// Tries to freeze the closed middle line at a start-line crossing.
    fn try_freeze(&mut self, t: f64) -> bool {
        let cones = self.map_cones();
        let fraction = mapped_fraction(&self.track, &cones, self.cfg.mapped_radius);
        let b = self.ekf.belief().mean;
        let pose = Pose2::new(b[0], b[1], b[2]);
        let (blue, red) = split_colors(&cones);
        let planned = plan_from_cones(&blue, &red, &pose, &self.cfg.planner);
        let closed = matches!(&planned, Ok((_, mids)) if mids.closed);
        self.mapped_fraction = fraction;
        self.cones = cones;
        if !(closed || fraction >= self.cfg.mapped_fraction) {
            self.event(t, format!("exploration continues: {:.1}% of cones mapped, loop open", 100.0 * fraction));
            return false;
        }
        match planned {
            Ok((path, mids)) if mids.closed => {
                self.event(
                    t,
                    format!(
                        "middle line frozen: {} midpoints, {:.1} m, {:.1}% of cones mapped",
                        mids.points.len(),
                        path.length(),
                        100.0 * fraction
                    ),
                );
                self.reference = Some(path);
                self.race_s = None;
                true
            }
            Ok(_) => {
                self.event(t, format!("{:.1}% of cones mapped but the middle line is open", 100.0 * fraction));
                false
            }
            Err(e) => {
                self.event(t, format!("middle line planning failed: {e}"));
                false
            }
        }
    }

    fn control(&mut self, t: f64) -> Result<ControlRow, HarnessError> {
        let cfg = self.cfg;
        let params = &cfg.vehicle;
        let dt = 1.0 / cfg.control_rate;
        let mut est = controller_state(self.ekf.belief(), &self.truth);
        let pose = pose_of(&est);
        let age = t - self.last_fix;
        let lap = self.laps_done + 1;
        let mut qp_iterations = 0;
        let mut slip_slack = 0.0;
        let (rates, speed_target, status) = match self.phase {
            Phase::Explore => {
                self.replan(&pose);
                let target = cfg.lap1_speed;
                let cmd = self.lap1_path.as_ref().map(|path| {
                    pure_pursuit_step(&est, path, cfg.pure_pursuit.lookahead_for(est.long_speed), target, &cfg.pure_pursuit, params)
                });
                match cmd {
                    Some(Ok(c)) => (command_to_rates(&est, c.steer, c.accel, dt, params), target, "explore"),
                    _ => {
                        let accel = (cfg.pure_pursuit.speed_gain * (target - est.long_speed))
                            .clamp(params.accel_min, params.accel_max);
                        (command_to_rates(&est, est.steer, accel, dt, params), target, "no_path")
                    }
                }
            }
            Phase::Race => {
                let path = self.reference.as_ref().expect("race phase has a path");
                let frame = match self.race_s {
                    Some(s) => path.path_frame_near(&pose, s, 10.0),
                    None => path.path_frame(&pose),
                }?;
                self.race_s = Some(frame.s);
                est.lateral_error = frame.lateral_error;
                est.heading_error = frame.heading_error;
                match cfg.controller {
                    ControllerKind::Mpc => {
                        let out = self.mpc.step(&est, frame.s, path, age)?;
                        qp_iterations = out.solution.iterations;
                        slip_slack = out.solution.slip_slack.first().copied().unwrap_or(0.0);
                        let target = self.mpc.config.reference_speed(path.curvature_at(frame.s)?, params);
                        let status = match out.status {
                            MpcStatus::Optimal => "optimal",
                            MpcStatus::MaxIter => "max_iter",
                            MpcStatus::Fallback => "fallback",
                        };
                        (out.rates, target, status)
                    }
                    ControllerKind::PurePursuit => {
                        let target = cfg.pp_speed;
                        let c = pure_pursuit_step(
                            &est,
                            path,
                            cfg.pure_pursuit.lookahead_for(est.long_speed),
                            target,
                            &cfg.pure_pursuit,
                            params,
                        )?;
                        (command_to_rates(&est, c.steer, c.accel, dt, params), target, "pure_pursuit")
                    }
                }
            }
        };
        self.rates = rates;
        Ok(ControlRow {
            t,
            lap,
            phase: self.phase,
            estimate: est,
            rates,
            speed_target,
            status,
            qp_iterations,
            slip_slack,
            belief_age: age,
        })
    }

    fn telemetry_row(&self, t: f64) -> TelemetryRow {
        let path_error = match self.phase {
            Phase::Race => self.reference.as_ref(),
            Phase::Explore => self.lap1_path.as_ref(),
        }
        .and_then(|p| p.path_frame(&pose_of(&self.truth)).ok())
        .map_or(f64::NAN, |f| f.lateral_error);
        TelemetryRow {
            t,
            lap: self.laps_done + 1,
            phase: self.phase,
            truth: self.truth,
            rates: self.rates,
            path_error,
            progress: self.progress,
        }
    }

    /// Advances the plant one step and runs the lap and crash bookkeeping.
    fn plant(&mut self, t: f64, dt: f64) -> Result<Stop, HarnessError> {
        let kappa = self.track.reference.curvature_at(self.true_s)?;
        self.truth = match advance(&self.truth, &self.rates, kappa, dt, &self.cfg.vehicle) {
            Ok(s) => s,
            Err(DynamicsError::SpeedBelowMinimum { speed, .. }) => {
                return Ok(Stop::Done(EpisodeStatus::Failed {
                    t,
                    reason: format!("vehicle slowed to {speed:.3} m/s"),
                }))
            }
            Err(e) => return Err(e.into()),
        };
        let t = t + dt;
        let frame = match self.track.reference.path_frame_near(&pose_of(&self.truth), self.true_s, 5.0) {
            Ok(f) => f,
            Err(crate::track::TrackError::OffTrack { distance }) => {
                return Ok(Stop::Done(EpisodeStatus::Crashed { t, offset: distance }))
            }
            Err(e) => return Err(e.into()),
        };
        self.truth.lateral_error = frame.lateral_error;
        self.truth.heading_error = frame.heading_error;
        self.progress += self.track.reference.s_delta(self.true_s, frame.s);
        self.true_s = frame.s;
        if frame.lateral_error.abs() > self.track.width / 2.0 + self.cfg.crash_margin {
            return Ok(Stop::Done(EpisodeStatus::Crashed {
                t,
                offset: frame.lateral_error,
            }));
        }
        let l = self.track.lap_length();
        if self.progress >= (self.laps_done + 1) as f64 * l {
            self.laps_done += 1;
            self.laps.push(LapEvent {
                t,
                lap: self.laps_done,
                phase: self.phase,
            });
            self.event(t, format!("lap {} complete", self.laps_done));
            if self.phase == Phase::Explore && self.try_freeze(t) {
                self.phase = Phase::Race;
                self.mpc.reset();
                self.event(t, format!("{} takes over", self.cfg.controller.as_str()));
            }
            if self.laps_done >= self.cfg.laps {
                if self.phase == Phase::Explore {
                    return Ok(Stop::Done(EpisodeStatus::Failed {
                        t,
                        reason: format!("track not mapped after {} laps", self.laps_done),
                    }));
                }
                return Ok(Stop::Done(EpisodeStatus::Completed));
            }
        }
        Ok(Stop::Continue)
    }
}

/// Runs one closed-loop episode.
///
/// Module errors inside the loop end the episode with a `Failed` status;
/// only setup problems are returned as errors.
pub fn run_episode(config: &EpisodeConfig) -> Result<EpisodeLog, HarnessError> {
    config.validate()?;
    let track = config.track.build(&config.planner)?;
    let (truth, belief) = initial_state(config, &track)?;
    let suite = sensor_suite(config)?;
    let classifier = match &config.perception.model {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
            Some(Classifier {
                net: crate::conenet::io::decode_model(&bytes)?,
            })
        }
        None => None,
    };
    let mpc = Mpc::new(
        MpcConfig {
            dt: 1.0 / config.control_rate,
            ..config.mpc
        },
        config.vehicle,
    )?;
    let (phase, reference) = match config.mission {
        Mission::TwoLap => (Phase::Explore, None),
        Mission::FixedPath => (Phase::Race, Some(track.reference.clone())),
    };
    let true_s = track.reference.start_s();
    let mut run = Runner {
        cfg: config,
        suite,
        ekf: Ekf::new(belief, &config.estimator),
        map: ConeMap::new(config.map)?,
        classifier,
        mpc,
        truth,
        rates: ControlRates::default(),
        phase,
        lap1_path: None,
        reference,
        race_s: None,
        true_s,
        progress: 0.0,
        laps_done: 0,
        last_fix: 0.0,
        lap_dropout_on: false,
        log_events: Vec::new(),
        laps: Vec::new(),
        mapped_fraction: 0.0,
        cones: Vec::new(),
        track,
    };

    let dt = config.plant_dt();
    let ratio = config.control_ratio();
    let n_steps = (config.duration * config.plant_rate).round() as usize;
    let mut measurements = Vec::new();
    let mut beliefs = Vec::new();
    let mut telemetry = Vec::new();
    let mut control = Vec::new();
    let mut status = EpisodeStatus::Timeout;

    for k in 0..n_steps {
        let t = k as f64 / config.plant_rate;
        run.update_lap_dropouts(t);
        let ms = run.suite.sample(&run.truth, &run.track, &config.vehicle, t);
        if let Err(e) = run.ekf.fuse_step(&ms, t) {
            status = EpisodeStatus::Failed { t, reason: e.to_string() };
            measurements.extend(ms);
            break;
        }
        if ms.iter().any(|m| matches!(m.kind, SensorKind::GnssPos | SensorKind::LidarOdom)) {
            run.last_fix = t;
        }
        if run.phase == Phase::Explore {
            if let Err(e) = run.integrate_perception(&ms) {
                status = EpisodeStatus::Failed { t, reason: e.to_string() };
                measurements.extend(ms);
                break;
            }
        }
        measurements.extend(ms);

        if k % ratio == 0 {
            beliefs.push(run.ekf.belief().clone());
            match run.control(t) {
                Ok(row) => control.push(row),
                Err(e) => {
                    warn!("t={t:.2} controller failed: {e}");
                    status = EpisodeStatus::Failed { t, reason: e.to_string() };
                    break;
                }
            }
        }

        telemetry.push(run.telemetry_row(t));

        match run.plant(t, dt) {
            Ok(Stop::Continue) => {}
            Ok(Stop::Done(s)) => {
                if matches!(s, EpisodeStatus::Crashed { .. }) {
                    telemetry.push(run.telemetry_row((k + 1) as f64 / config.plant_rate));
                }
                status = s;
                break;
            }
            Err(e) => {
                status = EpisodeStatus::Failed { t, reason: e.to_string() };
                break;
            }
        }
    }

    if let EpisodeStatus::Crashed { t, offset } = status {
        run.event(t, format!("crash: {offset:.3} m from the centerline"));
    }
    if run.reference.is_none() {
        run.cones = run.map_cones();
        run.mapped_fraction = mapped_fraction(&run.track, &run.cones, config.mapped_radius);
    }
    Ok(EpisodeLog {
        config: config.clone(),
        track: run.track,
        status,
        measurements,
        beliefs,
        telemetry,
        control,
        laps: run.laps,
        events: run.log_events,
        map: run.map,
        cones: run.cones,
        reference: run.reference,
        mapped_fraction: run.mapped_fraction,
    })
}
