//! Episode configuration and its sectioned `key = value` file format.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::control::{MpcConfig, PurePursuitConfig};
use crate::dynamics::VehicleParams;
use crate::estimator::EkfConfig;
use crate::gridmap::GridConfig;
use crate::perception::PerceptionConfig;
use crate::planner::PlannerConfig;
use crate::sensors::SensorSchedule;
use crate::track::{generate_loop, ConeLayout, Track, TrackSpec};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Mpc,
    PurePursuit,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Mpc => "mpc",
            ControllerKind::PurePursuit => "pure_pursuit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mpc" => Some(ControllerKind::Mpc),
            "pure_pursuit" | "pp" => Some(ControllerKind::PurePursuit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mission {
    /// Explore and map on lap 1, then race on the frozen middle line.
    TwoLap,
    /// Race on the ground-truth centerline from the start.
    FixedPath,
}

impl Mission {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mission::TwoLap => "two_lap",
            Mission::FixedPath => "fixed_path",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "two_lap" => Some(Mission::TwoLap),
            "fixed_path" => Some(Mission::FixedPath),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackSource {
    Circle { radius: f64 },
    Stadium { radius: f64, straight: f64 },
    Generated { turns: usize, min_radius: f64, seed: u64 },
    /// Cone layout CSV; the centerline is planned from the true cones.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackConfig {
    pub source: TrackSource,
    pub width: f64,
    pub spacing: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            source: TrackSource::Stadium {
                radius: 15.0,
                straight: 100.0 - 15.0 * std::f64::consts::PI,
            },
            width: 4.0,
            spacing: 5.0,
        }
    }
}

impl TrackConfig {
    pub fn build(&self, planner: &PlannerConfig) -> Result<Track, HarnessError> {
        Ok(match &self.source {
            TrackSource::Circle { radius } => Track::circle(*radius, self.width, self.spacing)?,
            TrackSource::Stadium { radius, straight } => {
                Track::stadium(*radius, *straight, self.width, self.spacing)?
            }
            TrackSource::Generated { turns, min_radius, seed } => generate_loop(
                &TrackSpec {
                    n_segments: *turns,
                    min_radius: *min_radius,
                    width: self.width,
                    spacing: self.spacing,
                },
                *seed,
            )?,
            TrackSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                let layout = ConeLayout::from_csv(&text)?;
                let (reference, mids) = crate::planner::plan_from_cones(
                    &layout.blue,
                    &layout.red,
                    &crate::geometry::Pose2::default(),
                    planner,
                )?;
                if !mids.closed {
                    return Err(HarnessError::Config(format!(
                        "cone layout {} does not form a closed loop",
                        path.display()
                    )));
                }
                Track::from_cones(layout, reference)
            }
        })
    }
}

/// LiDAR odometry outage, either in absolute time or as a fraction of a lap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropoutWindow {
    Time { start: f64, end: f64 },
    /// From fraction `start` to fraction `end` of lap `lap` (1-based).
    Lap { lap: usize, start: f64, end: f64 },
}

impl DropoutWindow {
    fn to_text(self) -> String {
        match self {
            DropoutWindow::Time { start, end } => format!("{start}-{end}"),
            DropoutWindow::Lap { lap, start, end } => format!("lap{lap}:{start}-{end}"),
        }
    }

    fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let range = |r: &str| -> Result<(f64, f64), String> {
            let (a, b) = r.split_once('-').ok_or_else(|| format!("dropout '{s}' lacks a '-' range"))?;
            let a: f64 = a.trim().parse().map_err(|_| format!("bad dropout start in '{s}'"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad dropout end in '{s}'"))?;
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(format!("dropout '{s}' is empty"));
            }
            Ok((a, b))
        };
        if let Some(rest) = s.strip_prefix("lap") {
            let (lap, r) = rest.split_once(':').ok_or_else(|| format!("dropout '{s}' lacks ':'"))?;
            let lap: usize = lap.trim().parse().map_err(|_| format!("bad lap number in '{s}'"))?;
            let (start, end) = range(r)?;
            if lap == 0 || start < 0.0 || end > 1.0 {
                return Err(format!("lap dropout '{s}' must name lap ≥ 1 and fractions in [0, 1]"));
            }
            Ok(DropoutWindow::Lap { lap, start, end })
        } else {
            let (start, end) = range(s)?;
            Ok(DropoutWindow::Time { start, end })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionSettings {
    pub clustering: PerceptionConfig,
    pub use_lidar: bool,
    pub use_camera: bool,
    /// Trained cone classifier used to color LiDAR cones.
    pub model: Option<PathBuf>,
}

impl Default for PerceptionSettings {
    fn default() -> Self {
        Self {
            clustering: PerceptionConfig::default(),
            use_lidar: true,
            use_camera: true,
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub mission: Mission,
    pub controller: ControllerKind,
    /// Start-line crossings after which the episode ends.
    pub laps: usize,
    pub duration: f64,
    pub seed: u64,
    pub plant_rate: f64,
    pub control_rate: f64,
    pub initial_speed: f64,
    /// Distance beyond the track edge that counts as a crash.
    pub crash_margin: f64,
    /// Speed cap while exploring.
    pub lap1_speed: f64,
    /// Fraction of true cones that must be mapped to end exploration.
    pub mapped_fraction: f64,
    /// A true cone counts as mapped when a same-color map cone lies within this distance.
    pub mapped_radius: f64,
    /// Same-color map cones closer than this are merged before planning.
    pub cone_merge_radius: f64,
    pub out: PathBuf,
    pub track: TrackConfig,
    pub vehicle: VehicleParams,
    pub sensors: SensorSchedule,
    pub odom_dropouts: Vec<DropoutWindow>,
    pub estimator: EkfConfig,
    pub perception: PerceptionSettings,
    pub map: GridConfig,
    pub planner: PlannerConfig,
    pub mpc: MpcConfig,
    pub pure_pursuit: PurePursuitConfig,
    /// Speed target of pure pursuit after exploration.
    pub pp_speed: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            mission: Mission::TwoLap,
            controller: ControllerKind::Mpc,
            laps: 2,
            duration: 240.0,
            seed: 1,
            plant_rate: 100.0,
            control_rate: 10.0,
            initial_speed: 1.0,
            crash_margin: 1.0,
            lap1_speed: 3.0,
            mapped_fraction: 0.9,
            mapped_radius: 0.5,
            cone_merge_radius: 1.0,
            out: PathBuf::from("run"),
            track: TrackConfig::default(),
            vehicle: VehicleParams::default(),
            sensors: SensorSchedule::default(),
            odom_dropouts: Vec::new(),
            estimator: EkfConfig::default(),
            perception: PerceptionSettings::default(),
            map: GridConfig {
                s_min: 6.0,
                ..GridConfig::default()
            },
            planner: PlannerConfig::default(),
            mpc: MpcConfig::default(),
            pure_pursuit: PurePursuitConfig::default(),
            pp_speed: 3.0,
        }
    }
}

/// One configuration value, typed for the file writer.
#[derive(Debug, Clone, PartialEq)]
enum Val {
    Num(f64),
    Int(u64),
    Bool(bool),
    Str(String),
}

impl Val {
    fn render(&self) -> String {
        match self {
            Val::Num(v) => {
                let s = format!("{v:?}");
                if v.is_finite() { s } else { format!("\"{s}\"") }
            }
            Val::Int(v) => v.to_string(),
            Val::Bool(b) => b.to_string(),
            Val::Str(s) => toml::Value::String(s.clone()).to_string(),
        }
    }
}

fn num(s: &str, key: &str) -> Result<f64, HarnessError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| HarnessError::Config(format!("{key}: '{s}' is not a number")))
}

fn int(s: &str, key: &str) -> Result<u64, HarnessError> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| HarnessError::Config(format!("{key}: '{s}' is not a non-negative integer")))
}

fn boolean(s: &str, key: &str) -> Result<bool, HarnessError> {
    match s.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key}: '{s}' is not true/false"))),
    }
}

fn nums<const N: usize>(s: &str, key: &str) -> Result<[f64; N], HarnessError> {
    let v: Vec<f64> = s
        .split_whitespace()
        .map(|t| num(t, key))
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|_| HarnessError::Config(format!("{key}: expected {N} numbers")))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

const SECTIONS: [&str; 10] = [
    "episode", "track", "vehicle", "sensors", "estimator", "perception", "map", "planner", "mpc",
    "pure_pursuit",
];

impl EpisodeConfig {
    /// Noise-free sensors and no misdetections.
    pub fn noiseless(mut self) -> Self {
        self.sensors = SensorSchedule {
            gnss: self.sensors.gnss.clone(),
            ins: self.sensors.ins.clone(),
            wheel_speed: self.sensors.wheel_speed.clone(),
            lidar_odom: self.sensors.lidar_odom.clone(),
            cone_scan: self.sensors.cone_scan.clone(),
            camera: self.sensors.camera.clone(),
            ..SensorSchedule::noiseless()
        };
        self
    }

    pub fn plant_dt(&self) -> f64 {
        1.0 / self.plant_rate
    }

    /// Plant steps per control step.
    pub fn control_ratio(&self) -> usize {
        (self.plant_rate / self.control_rate).round() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration {} must be positive", self.duration));
        }
        if !(self.plant_rate > 0.0 && self.control_rate > 0.0) {
            return bad("rates must be positive".into());
        }
        let ratio = self.plant_rate / self.control_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return bad(format!(
                "plant rate {} must be an integer multiple of control rate {}",
                self.plant_rate, self.control_rate
            ));
        }
        if self.plant_dt() > 0.05 {
            return bad("plant rate must be at least 20 Hz".into());
        }
        if self.laps == 0 {
            return bad("laps must be at least 1".into());
        }
        if self.initial_speed < self.vehicle.speed_min {
            return bad(format!(
                "initial_speed {} below the vehicle minimum {}",
                self.initial_speed, self.vehicle.speed_min
            ));
        }
        for (name, v) in [
            ("lap1_speed", self.lap1_speed),
            ("pp_speed", self.pp_speed),
            ("crash_margin", self.crash_margin),
            ("mapped_radius", self.mapped_radius),
            ("map.merge_radius", self.cone_merge_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.mapped_fraction > 0.0 && self.mapped_fraction <= 1.0) {
            return bad("mapped_fraction must be in (0, 1]".into());
        }
        self.vehicle.validate().map_err(HarnessError::Config)?;
        self.sensors.validate()?;
        self.map.validate()?;
        let mut mpc = self.mpc;
        mpc.dt = 1.0 / self.control_rate;
        mpc.validate()?;
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, &'static str, Val)> {
        use Val::*;
        let mut e: Vec<(&'static str, &'static str, Val)> = Vec::new();
        let ep = "episode";
        e.push((ep, "mission", Str(self.mission.as_str().into())));
        e.push((ep, "controller", Str(self.controller.as_str().into())));
        e.push((ep, "laps", Int(self.laps as u64)));
        e.push((ep, "duration", Num(self.duration)));
        e.push((ep, "seed", Int(self.seed)));
        e.push((ep, "plant_rate", Num(self.plant_rate)));
        e.push((ep, "control_rate", Num(self.control_rate)));
        e.push((ep, "initial_speed", Num(self.initial_speed)));
        e.push((ep, "crash_margin", Num(self.crash_margin)));
        e.push((ep, "lap1_speed", Num(self.lap1_speed)));
        e.push((ep, "mapped_fraction", Num(self.mapped_fraction)));
        e.push((ep, "mapped_radius", Num(self.mapped_radius)));
        e.push((ep, "out", Str(self.out.display().to_string())));

        let tr = "track";
        let t = &self.track;
        let (kind, radius, straight, turns, min_radius, seed, file) = match &t.source {
            TrackSource::Circle { radius } => ("circle", *radius, 20.0, 5, 8.0, 0, String::new()),
            TrackSource::Stadium { radius, straight } => ("stadium", *radius, *straight, 5, 8.0, 0, String::new()),
            TrackSource::Generated { turns, min_radius, seed } => {
                ("generated", 15.0, 20.0, *turns, *min_radius, *seed, String::new())
            }
            TrackSource::File(p) => ("file", 15.0, 20.0, 5, 8.0, 0, p.display().to_string()),
        };
        e.push((tr, "kind", Str(kind.into())));
        e.push((tr, "radius", Num(radius)));
        e.push((tr, "straight", Num(straight)));
        e.push((tr, "turns", Int(turns as u64)));
        e.push((tr, "min_radius", Num(min_radius)));
        e.push((tr, "track_seed", Int(seed)));
        e.push((tr, "file", Str(file)));
        e.push((tr, "width", Num(t.width)));
        e.push((tr, "spacing", Num(t.spacing)));

        let ve = "vehicle";
        let v = &self.vehicle;
        for (k, x) in [
            ("mass", v.mass),
            ("yaw_inertia", v.yaw_inertia),
            ("lf", v.lf),
            ("lr", v.lr),
            ("cornering_front", v.cornering_front),
            ("cornering_rear", v.cornering_rear),
            ("steer_max", v.steer_max),
            ("speed_min", v.speed_min),
            ("speed_max", v.speed_max),
            ("accel_min", v.accel_min),
            ("accel_max", v.accel_max),
            ("steer_rate_max", v.steer_rate_max),
            ("jerk_max", v.jerk_max),
            ("rear_slip_max", v.rear_slip_max),
        ] {
            e.push((ve, k, Num(x)));
        }

        let se = "sensors";
        let s = &self.sensors;
        for (k, x) in [
            ("gnss_rate", s.gnss.rate_hz),
            ("ins_rate", s.ins.rate_hz),
            ("wheel_rate", s.wheel_speed.rate_hz),
            ("odom_rate", s.lidar_odom.rate_hz),
            ("scan_rate", s.cone_scan.rate_hz),
            ("camera_rate", s.camera.rate_hz),
            ("gnss_sigma", s.gnss_sigma),
        ] {
            e.push((se, k, Num(x)));
        }
        e.push((se, "ins_sigma", Str(join(&s.ins_sigma))));
        for (k, x) in [
            ("wheel_sigma", s.wheel_sigma),
            ("odom_sigma_xy", s.odom_sigma_xy),
            ("odom_sigma_heading", s.odom_sigma_heading),
            ("cone_point_sigma", s.cone_point_sigma),
            ("pixel_sigma", s.pixel_sigma),
            ("lidar_range", s.lidar_range),
        ] {
            e.push((se, k, Num(x)));
        }
        e.push((se, "points_per_cone_min", Int(s.points_per_cone.0 as u64)));
        e.push((se, "points_per_cone_max", Int(s.points_per_cone.1 as u64)));
        e.push((se, "misdetection_rate", Num(s.misdetection_rate)));
        let drops: Vec<String> = self.odom_dropouts.iter().map(|d| d.to_text()).collect();
        e.push((se, "odom_dropout", Str(drops.join(", "))));

        e.push(("estimator", "q", Str(join(&self.estimator.q))));
        e.push(("estimator", "initial_std", Str(join(&self.estimator.initial_std))));

        let pe = "perception";
        let p = &self.perception;
        e.push((pe, "eps", Num(p.clustering.eps)));
        e.push((pe, "min_pts", Int(p.clustering.min_pts as u64)));
        e.push((pe, "max_extent", Num(p.clustering.max_extent)));
        e.push((pe, "max_count", Int(p.clustering.max_count as u64)));
        e.push((pe, "use_lidar", Bool(p.use_lidar)));
        e.push((pe, "use_camera", Bool(p.use_camera)));
        e.push((
            pe,
            "model",
            Str(p.model.as_ref().map(|m| m.display().to_string()).unwrap_or_default()),
        ));

        let ma = "map";
        let m = &self.map;
        e.push((ma, "resolution", Num(m.resolution)));
        e.push((ma, "s_max", Num(m.s_max)));
        e.push((ma, "s_min", Num(m.s_min)));
        e.push((ma, "stamp", Bool(m.stamp)));
        e.push((ma, "colorless_prob", Num(m.colorless_prob)));
        e.push((ma, "colorless_cap", Num(m.colorless_cap)));
        e.push((ma, "merge_radius", Num(self.cone_merge_radius)));

        let pl = "planner";
        let q = &self.planner;
        for (k, x) in [
            ("gate", q.gate),
            ("merge_distance", q.merge_distance),
            ("max_step", q.max_step),
            ("resample", q.resample),
            ("margin", q.margin),
            ("curvature_span", q.curvature_span),
        ] {
            e.push((pl, k, Num(x)));
        }

        let mp = "mpc";
        let c = &self.mpc;
        e.push((mp, "horizon", Int(c.horizon as u64)));
        for (k, x) in [
            ("w_steer_change", c.w_steer_change),
            ("w_heading", c.w_heading),
            ("w_lateral", c.w_lateral),
            ("w_slack", c.w_slack),
            ("w_speed", c.w_speed),
            ("w_steer_rate", c.w_steer_rate),
            ("w_jerk", c.w_jerk),
            ("comfort_distance", c.comfort_distance),
            ("speed_ref", c.speed_ref),
        ] {
            e.push((mp, k, Num(x)));
        }
        e.push((
            mp,
            "lat_accel_max",
            Str(c.lat_accel_max.map(|a| format!("{a:?}")).unwrap_or_default()),
        ));
        e.push((mp, "qp_max_iterations", Int(c.qp.max_iterations as u64)));
        e.push((mp, "qp_tolerance", Num(c.qp.tolerance)));

        let pp = "pure_pursuit";
        let r = &self.pure_pursuit;
        e.push((pp, "lookahead", Num(r.lookahead)));
        e.push((pp, "lookahead_time", Num(r.lookahead_time)));
        e.push((pp, "min_lookahead", Num(r.min_lookahead)));
        e.push((pp, "speed_gain", Num(r.speed_gain)));
        e.push((pp, "speed", Num(self.pp_speed)));
        e
    }

    /// Sets one value from its textual form.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), HarnessError> {
        let name = format!("{section}.{key}");
        let k = name.as_str();
        let value = value.trim();
        match (section, key) {
            ("episode", "mission") => {
                self.mission = Mission::parse(value)
                    .ok_or_else(|| HarnessError::Config(format!("{k}: unknown mission '{value}'")))?
            }
            ("episode", "controller") => {
                self.controller = ControllerKind::parse(value)
                    .ok_or_else(|| HarnessError::Config(format!("{k}: unknown controller '{value}'")))?
            }
            ("episode", "laps") => self.laps = int(value, k)? as usize,
            ("episode", "duration") => self.duration = num(value, k)?,
            ("episode", "seed") => self.seed = int(value, k)?,
            ("episode", "plant_rate") => self.plant_rate = num(value, k)?,
            ("episode", "control_rate") => self.control_rate = num(value, k)?,
            ("episode", "initial_speed") => self.initial_speed = num(value, k)?,
            ("episode", "crash_margin") => self.crash_margin = num(value, k)?,
            ("episode", "lap1_speed") => self.lap1_speed = num(value, k)?,
            ("episode", "mapped_fraction") => self.mapped_fraction = num(value, k)?,
            ("episode", "mapped_radius") => self.mapped_radius = num(value, k)?,
            ("episode", "out") => self.out = PathBuf::from(value),

            ("track", "kind") => {
                let (radius, straight, turns, min_radius, seed, file) = self.track_fields();
                self.track.source = match value {
                    "circle" => TrackSource::Circle { radius },
                    "stadium" => TrackSource::Stadium { radius, straight },
                    "generated" => TrackSource::Generated { turns, min_radius, seed },
                    "file" => TrackSource::File(PathBuf::from(file)),
                    _ => return Err(HarnessError::Config(format!("{k}: unknown track kind '{value}'"))),
                }
            }
            ("track", "radius") => {
                let x = num(value, k)?;
                match &mut self.track.source {
                    TrackSource::Circle { radius } | TrackSource::Stadium { radius, .. } => *radius = x,
                    _ => {}
                }
            }
            ("track", "straight") => {
                let x = num(value, k)?;
                if let TrackSource::Stadium { straight, .. } = &mut self.track.source {
                    *straight = x;
                }
            }
            ("track", "turns") => {
                let x = int(value, k)? as usize;
                if let TrackSource::Generated { turns, .. } = &mut self.track.source {
                    *turns = x;
                }
            }
            ("track", "min_radius") => {
                let x = num(value, k)?;
                if let TrackSource::Generated { min_radius, .. } = &mut self.track.source {
                    *min_radius = x;
                }
            }
            ("track", "track_seed") => {
                let x = int(value, k)?;
                if let TrackSource::Generated { seed, .. } = &mut self.track.source {
                    *seed = x;
                }
            }
            ("track", "file") => {
                if let TrackSource::File(p) = &mut self.track.source {
                    *p = PathBuf::from(value);
                }
            }
            ("track", "width") => self.track.width = num(value, k)?,
            ("track", "spacing") => self.track.spacing = num(value, k)?,

            ("vehicle", _) => {
                let x = num(value, k)?;
                let v = &mut self.vehicle;
                let slot = match key {
                    "mass" => &mut v.mass,
                    "yaw_inertia" => &mut v.yaw_inertia,
                    "lf" => &mut v.lf,
                    "lr" => &mut v.lr,
                    "cornering_front" => &mut v.cornering_front,
                    "cornering_rear" => &mut v.cornering_rear,
                    "steer_max" => &mut v.steer_max,
                    "speed_min" => &mut v.speed_min,
                    "speed_max" => &mut v.speed_max,
                    "accel_min" => &mut v.accel_min,
                    "accel_max" => &mut v.accel_max,
                    "steer_rate_max" => &mut v.steer_rate_max,
                    "jerk_max" => &mut v.jerk_max,
                    "rear_slip_max" => &mut v.rear_slip_max,
                    _ => return Err(HarnessError::Config(format!("unknown key {k}"))),
                };
                *slot = x;
            }

            ("sensors", "ins_sigma") => self.sensors.ins_sigma = nums::<3>(value, k)?,
            ("sensors", "points_per_cone_min") => self.sensors.points_per_cone.0 = int(value, k)? as usize,
            ("sensors", "points_per_cone_max") => self.sensors.points_per_cone.1 = int(value, k)? as usize,
            ("sensors", "odom_dropout") => {
                self.odom_dropouts = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| DropoutWindow::parse(s).map_err(|m| HarnessError::Config(format!("{k}: {m}"))))
                    .collect::<Result<_, _>>()?;
            }
            ("sensors", _) => {
                let x = num(value, k)?;
                let s = &mut self.sensors;
                let slot = match key {
                    "gnss_rate" => &mut s.gnss.rate_hz,
                    "ins_rate" => &mut s.ins.rate_hz,
                    "wheel_rate" => &mut s.wheel_speed.rate_hz,
                    "odom_rate" => &mut s.lidar_odom.rate_hz,
                    "scan_rate" => &mut s.cone_scan.rate_hz,
                    "camera_rate" => &mut s.camera.rate_hz,
                    "gnss_sigma" => &mut s.gnss_sigma,
                    "wheel_sigma" => &mut s.wheel_sigma,
                    "odom_sigma_xy" => &mut s.odom_sigma_xy,
                    "odom_sigma_heading" => &mut s.odom_sigma_heading,
                    "cone_point_sigma" => &mut s.cone_point_sigma,
                    "pixel_sigma" => &mut s.pixel_sigma,
                    "lidar_range" => &mut s.lidar_range,
                    "misdetection_rate" => &mut s.misdetection_rate,
                    _ => return Err(HarnessError::Config(format!("unknown key {k}"))),
                };
                *slot = x;
            }

            ("estimator", "q") => self.estimator.q = nums::<6>(value, k)?,
            ("estimator", "initial_std") => self.estimator.initial_std = nums::<6>(value, k)?,

            ("perception", "eps") => self.perception.clustering.eps = num(value, k)?,
            ("perception", "min_pts") => self.perception.clustering.min_pts = int(value, k)? as usize,
            ("perception", "max_extent") => self.perception.clustering.max_extent = num(value, k)?,
            ("perception", "max_count") => self.perception.clustering.max_count = int(value, k)? as usize,
            ("perception", "use_lidar") => self.perception.use_lidar = boolean(value, k)?,
            ("perception", "use_camera") => self.perception.use_camera = boolean(value, k)?,
            ("perception", "model") => {
                self.perception.model = (!value.is_empty()).then(|| PathBuf::from(value))
            }

            ("map", "resolution") => self.map.resolution = num(value, k)?,
            ("map", "s_max") => self.map.s_max = num(value, k)?,
            ("map", "s_min") => self.map.s_min = num(value, k)?,
            ("map", "stamp") => self.map.stamp = boolean(value, k)?,
            ("map", "colorless_prob") => self.map.colorless_prob = num(value, k)?,
            ("map", "colorless_cap") => self.map.colorless_cap = num(value, k)?,
            ("map", "merge_radius") => self.cone_merge_radius = num(value, k)?,

            ("planner", _) => {
                let x = num(value, k)?;
                let p = &mut self.planner;
                let slot = match key {
                    "gate" => &mut p.gate,
                    "merge_distance" => &mut p.merge_distance,
                    "max_step" => &mut p.max_step,
                    "resample" => &mut p.resample,
                    "margin" => &mut p.margin,
                    "curvature_span" => &mut p.curvature_span,
                    _ => return Err(HarnessError::Config(format!("unknown key {k}"))),
                };
                *slot = x;
            }

            ("mpc", "horizon") => self.mpc.horizon = int(value, k)? as usize,
            ("mpc", "lat_accel_max") => {
                self.mpc.lat_accel_max = if value.is_empty() { None } else { Some(num(value, k)?) }
            }
            ("mpc", "qp_max_iterations") => self.mpc.qp.max_iterations = int(value, k)? as usize,
            ("mpc", "qp_tolerance") => self.mpc.qp.tolerance = num(value, k)?,
            ("mpc", _) => {
                let x = num(value, k)?;
                let c = &mut self.mpc;
                let slot = match key {
                    "w_steer_change" => &mut c.w_steer_change,
                    "w_heading" => &mut c.w_heading,
                    "w_lateral" => &mut c.w_lateral,
                    "w_slack" => &mut c.w_slack,
                    "w_speed" => &mut c.w_speed,
                    "w_steer_rate" => &mut c.w_steer_rate,
                    "w_jerk" => &mut c.w_jerk,
                    "comfort_distance" => &mut c.comfort_distance,
                    "speed_ref" => &mut c.speed_ref,
                    _ => return Err(HarnessError::Config(format!("unknown key {k}"))),
                };
                *slot = x;
            }

            ("pure_pursuit", "lookahead") => self.pure_pursuit.lookahead = num(value, k)?,
            ("pure_pursuit", "lookahead_time") => self.pure_pursuit.lookahead_time = num(value, k)?,
            ("pure_pursuit", "min_lookahead") => self.pure_pursuit.min_lookahead = num(value, k)?,
            ("pure_pursuit", "speed_gain") => self.pure_pursuit.speed_gain = num(value, k)?,
            ("pure_pursuit", "speed") => self.pp_speed = num(value, k)?,

            _ => return Err(HarnessError::Config(format!("unknown key {k}"))),
        }
        Ok(())
    }

    /// Current values of every track key, whichever source is active.
    fn track_fields(&self) -> (f64, f64, usize, f64, u64, String) {
        let get = |key: &str| {
            self.entries()
                .into_iter()
                .find(|(s, k, _)| *s == "track" && *k == key)
                .map(|(_, _, v)| v)
        };
        let n = |key: &str| match get(key) {
            Some(Val::Num(x)) => x,
            _ => 0.0,
        };
        let i = |key: &str| match get(key) {
            Some(Val::Int(x)) => x,
            _ => 0,
        };
        let file = match get("file") {
            Some(Val::Str(s)) => s,
            _ => String::new(),
        };
        (n("radius"), n("straight"), i("turns") as usize, n("min_radius"), i("track_seed"), file)
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), HarnessError> {
        let (lhs, value) = assignment
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override '{assignment}' lacks '='")))?;
        let (section, key) = lhs
            .trim()
            .split_once('.')
            .ok_or_else(|| HarnessError::Config(format!("override '{assignment}' must be section.key=value")))?;
        self.set(section, key, value)
    }

    /// Renders every setting, defaults included.
    pub fn to_text(&self) -> String {
        let entries = self.entries();
        let mut out = String::new();
        for (i, section) in SECTIONS.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for (s, k, v) in &entries {
                if s == section {
                    let _ = writeln!(out, "{k} = {}", v.render());
                }
            }
        }
        out
    }

    /// Parses a config file; missing keys keep their defaults.
    ///
    /// The track kind is applied before the other track keys so that their
    /// order in the file does not matter.
    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.message().to_string()))?;
        let mut cfg = Self::default();
        for (section, body) in &table {
            if !SECTIONS.contains(&section.as_str()) {
                return Err(HarnessError::Config(format!("unknown section [{section}]")));
            }
            let toml::Value::Table(body) = body else {
                return Err(HarnessError::Config(format!("'{section}' must be a section")));
            };
            let mut items: Vec<(&String, &toml::Value)> = body.iter().collect();
            items.sort_by_key(|(k, _)| *k != "kind");
            for (key, value) in items {
                let text = match value {
                    toml::Value::String(s) => s.clone(),
                    toml::Value::Integer(_) | toml::Value::Float(_) | toml::Value::Boolean(_) => value.to_string(),
                    _ => {
                        return Err(HarnessError::Config(format!(
                            "{section}.{key}: arrays and tables are not supported"
                        )))
                    }
                };
                cfg.set(section, key, &text)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_text(&text)
    }
}
