//! Pipeline configuration: defaults, a line-based `key = value` file format
//! and command-line overrides.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Booleans accept `on/off/true/false`; angles are in degrees. Unknown keys
//! and malformed values are errors. [`PipelineConfig::to_text`] writes every
//! key with its current value, which doubles as the schema.

use std::path::Path;

use livo_core::degeneracy::DegeneracyConfig;
use livo_core::esikf::IterationConfig;
use livo_core::lidar::LidarConfig;
use livo_core::longterm::LongTermConfig;
use livo_core::selector::SelectorThresholds;
use livo_core::state::ProcessNoise;
use livo_core::visual::VisualConfig;
use livo_core::voxel_map::{MapConfig, PlaneConfig};
use livo_core::Pose;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimNoise {
    Default,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub selector: bool,
    pub longterm_map: bool,
    /// Local map edge length, metres.
    pub local_edge: f64,
    pub local_slide: f64,
    pub root_size: f64,
    pub node_point_cap: usize,
    pub plane_min_points: usize,
    pub planarity_threshold: f64,
    pub point_sigma: f64,
    pub ltm_edge: f64,
    pub ltm_slide: f64,
    pub ltm_cell: f64,
    pub ltm_points_per_cell: usize,
    pub ltm_view_angle_deg: f64,
    pub degeneracy_threshold: f64,
    pub degeneracy_window: usize,
    pub tau_position: f64,
    pub tau_rotation_deg: f64,
    pub esikf_epsilon: f64,
    pub lidar_max_iters: usize,
    pub visual_max_iters: usize,
    pub lidar_beam_sigma: f64,
    pub lidar_gate: f64,
    pub downsample_leaf: f64,
    pub pixel_sigma: f64,
    pub huber_delta: f64,
    pub attach_budget: usize,
    pub attach_spacing: f64,
    pub min_gradient: f64,
    /// Local-map visual points used per update.
    pub max_visual_points: usize,
    /// Long-term-map visual points used per update.
    pub max_longterm_points: usize,
    /// Largest angle between a visual point's normal and the viewing ray.
    pub view_angle_deg: f64,
    /// Largest relative change of viewing distance from a patch's reference view.
    pub patch_scale_change: f64,
    /// Largest change of viewing direction from a patch's reference view.
    pub patch_view_change_deg: f64,
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    /// Longest tolerated gap between IMU samples, seconds.
    pub imu_max_gap: f64,
    /// Noise model for simulated scenarios.
    pub sim_noise: SimNoise,
    /// Stop after this many frames; 0 processes everything.
    pub max_frames: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let map = MapConfig::default();
        let plane = PlaneConfig::default();
        let ltm = LongTermConfig::default();
        let deg = DegeneracyConfig::default();
        let tau = SelectorThresholds::indoor();
        let it = IterationConfig::default();
        let lidar = LidarConfig::default();
        let vis = VisualConfig::default();
        let noise = ProcessNoise::default();
        Self {
            seed: 0,
            selector: true,
            longterm_map: true,
            local_edge: map.edge_length,
            local_slide: map.slide_threshold,
            root_size: map.root_size,
            node_point_cap: map.node_point_cap,
            plane_min_points: plane.min_points,
            planarity_threshold: plane.planarity_threshold,
            point_sigma: plane.point_sigma,
            ltm_edge: ltm.edge_length,
            ltm_slide: ltm.slide_threshold,
            ltm_cell: ltm.cell_size,
            ltm_points_per_cell: 3,
            ltm_view_angle_deg: 75.0,
            degeneracy_threshold: deg.threshold,
            degeneracy_window: deg.required_consecutive,
            tau_position: tau.tau_position,
            tau_rotation_deg: 60.0,
            esikf_epsilon: it.epsilon,
            lidar_max_iters: it.max_iters,
            visual_max_iters: it.max_iters,
            lidar_beam_sigma: lidar.beam_sigma,
            lidar_gate: lidar.gate,
            downsample_leaf: 0.3,
            pixel_sigma: vis.pixel_sigma,
            huber_delta: vis.huber_delta,
            attach_budget: vis.attach_budget,
            attach_spacing: vis.attach_spacing,
            min_gradient: vis.min_gradient,
            max_visual_points: 60,
            max_longterm_points: 40,
            view_angle_deg: 75.0,
            patch_scale_change: 0.3,
            patch_view_change_deg: 15.0,
            gyro_noise: noise.gyro,
            accel_noise: noise.accel,
            gyro_bias_walk: noise.gyro_bias_walk,
            accel_bias_walk: noise.accel_bias_walk,
            imu_max_gap: 0.02,
            sim_noise: SimNoise::Default,
            max_frames: 0,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "on" | "true" | "1" => Some(true),
        "off" | "false" | "0" => Some(false),
        _ => None,
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl PipelineConfig {
    /// Sets one key; the error message names the key and the bad value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || HarnessError::Config(format!("invalid value {value:?} for {key}"));
        let f = || value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
        let u = || value.parse::<usize>().map_err(|_| bad());
        let b = || parse_bool(value).ok_or_else(bad);
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "selector" => self.selector = b()?,
            "longterm_map" => self.longterm_map = b()?,
            "local_edge" => self.local_edge = f()?,
            "local_slide" => self.local_slide = f()?,
            "root_size" => self.root_size = f()?,
            "node_point_cap" => self.node_point_cap = u()?,
            "plane_min_points" => self.plane_min_points = u()?,
            "planarity_threshold" => self.planarity_threshold = f()?,
            "point_sigma" => self.point_sigma = f()?,
            "ltm_edge" => self.ltm_edge = f()?,
            "ltm_slide" => self.ltm_slide = f()?,
            "ltm_cell" => self.ltm_cell = f()?,
            "ltm_points_per_cell" => self.ltm_points_per_cell = u()?,
            "ltm_view_angle_deg" => self.ltm_view_angle_deg = f()?,
            "degeneracy_threshold" => self.degeneracy_threshold = f()?,
            "degeneracy_window" => self.degeneracy_window = u()?,
            "tau_position" => self.tau_position = f()?,
            "tau_rotation_deg" => self.tau_rotation_deg = f()?,
            "esikf_epsilon" => self.esikf_epsilon = f()?,
            "lidar_max_iters" => self.lidar_max_iters = u()?,
            "visual_max_iters" => self.visual_max_iters = u()?,
            "lidar_beam_sigma" => self.lidar_beam_sigma = f()?,
            "lidar_gate" => self.lidar_gate = f()?,
            "downsample_leaf" => self.downsample_leaf = f()?,
            "pixel_sigma" => self.pixel_sigma = f()?,
            "huber_delta" => self.huber_delta = f()?,
            "attach_budget" => self.attach_budget = u()?,
            "attach_spacing" => self.attach_spacing = f()?,
            "min_gradient" => self.min_gradient = f()?,
            "max_visual_points" => self.max_visual_points = u()?,
            "max_longterm_points" => self.max_longterm_points = u()?,
            "view_angle_deg" => self.view_angle_deg = f()?,
            "patch_scale_change" => self.patch_scale_change = f()?,
            "patch_view_change_deg" => self.patch_view_change_deg = f()?,
            "gyro_noise" => self.gyro_noise = f()?,
            "accel_noise" => self.accel_noise = f()?,
            "gyro_bias_walk" => self.gyro_bias_walk = f()?,
            "accel_bias_walk" => self.accel_bias_walk = f()?,
            "imu_max_gap" => self.imu_max_gap = f()?,
            "sim_noise" => {
                self.sim_noise = match value {
                    "default" => SimNoise::Default,
                    "zero" => SimNoise::Zero,
                    _ => return Err(bad()),
                }
            }
            "max_frames" => self.max_frames = u()?,
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key and its value, in schema order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("selector", on_off(self.selector).into()),
            ("longterm_map", on_off(self.longterm_map).into()),
            ("local_edge", self.local_edge.to_string()),
            ("local_slide", self.local_slide.to_string()),
            ("root_size", self.root_size.to_string()),
            ("node_point_cap", self.node_point_cap.to_string()),
            ("plane_min_points", self.plane_min_points.to_string()),
            ("planarity_threshold", self.planarity_threshold.to_string()),
            ("point_sigma", self.point_sigma.to_string()),
            ("ltm_edge", self.ltm_edge.to_string()),
            ("ltm_slide", self.ltm_slide.to_string()),
            ("ltm_cell", self.ltm_cell.to_string()),
            ("ltm_points_per_cell", self.ltm_points_per_cell.to_string()),
            ("ltm_view_angle_deg", self.ltm_view_angle_deg.to_string()),
            ("degeneracy_threshold", self.degeneracy_threshold.to_string()),
            ("degeneracy_window", self.degeneracy_window.to_string()),
            ("tau_position", self.tau_position.to_string()),
            ("tau_rotation_deg", self.tau_rotation_deg.to_string()),
            ("esikf_epsilon", self.esikf_epsilon.to_string()),
            ("lidar_max_iters", self.lidar_max_iters.to_string()),
            ("visual_max_iters", self.visual_max_iters.to_string()),
            ("lidar_beam_sigma", self.lidar_beam_sigma.to_string()),
            ("lidar_gate", self.lidar_gate.to_string()),
            ("downsample_leaf", self.downsample_leaf.to_string()),
            ("pixel_sigma", self.pixel_sigma.to_string()),
            ("huber_delta", self.huber_delta.to_string()),
            ("attach_budget", self.attach_budget.to_string()),
            ("attach_spacing", self.attach_spacing.to_string()),
            ("min_gradient", self.min_gradient.to_string()),
            ("max_visual_points", self.max_visual_points.to_string()),
            ("max_longterm_points", self.max_longterm_points.to_string()),
            ("view_angle_deg", self.view_angle_deg.to_string()),
            ("patch_scale_change", self.patch_scale_change.to_string()),
            ("patch_view_change_deg", self.patch_view_change_deg.to_string()),
            ("gyro_noise", self.gyro_noise.to_string()),
            ("accel_noise", self.accel_noise.to_string()),
            ("gyro_bias_walk", self.gyro_bias_walk.to_string()),
            ("accel_bias_walk", self.accel_bias_walk.to_string()),
            ("imu_max_gap", self.imu_max_gap.to_string()),
            ("sim_noise", match self.sim_noise {
                SimNoise::Default => "default".into(),
                SimNoise::Zero => "zero".into(),
            }),
            ("max_frames", self.max_frames.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies a `key = value` document on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| HarnessError::Parse { path: origin.to_path_buf(), line: i as u64 + 1, message };
            let (k, v) = line.split_once('=').ok_or_else(|| parse_err(format!("expected `key = value`, got {line:?}")))?;
            self.set(k.trim(), v.trim()).map_err(|e| parse_err(e.to_string()))?;
        }
        self.validate()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("local_edge", self.local_edge),
            ("local_slide", self.local_slide),
            ("root_size", self.root_size),
            ("ltm_edge", self.ltm_edge),
            ("ltm_slide", self.ltm_slide),
            ("ltm_cell", self.ltm_cell),
            ("esikf_epsilon", self.esikf_epsilon),
            ("lidar_beam_sigma", self.lidar_beam_sigma),
            ("lidar_gate", self.lidar_gate),
            ("pixel_sigma", self.pixel_sigma),
            ("huber_delta", self.huber_delta),
            ("imu_max_gap", self.imu_max_gap),
            ("patch_scale_change", self.patch_scale_change),
            ("patch_view_change_deg", self.patch_view_change_deg),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HarnessError::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if self.local_edge < self.root_size {
            return Err(HarnessError::Config("local_edge must be at least root_size".into()));
        }
        if self.local_slide >= self.local_edge / 2.0 || self.ltm_slide >= self.ltm_edge / 2.0 {
            return Err(HarnessError::Config("slide thresholds must be below half the map edge".into()));
        }
        if !(0.0..=1.0 / 3f64.sqrt()).contains(&self.degeneracy_threshold) {
            return Err(HarnessError::Config(format!("degeneracy_threshold {} outside [0, 1/√3]", self.degeneracy_threshold)));
        }
        if self.degeneracy_window == 0 || self.lidar_max_iters == 0 || self.visual_max_iters == 0 {
            return Err(HarnessError::Config("degeneracy_window and iteration caps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn map_config(&self) -> MapConfig {
        MapConfig {
            root_size: self.root_size,
            edge_length: self.local_edge,
            slide_threshold: self.local_slide,
            plane: PlaneConfig {
                min_points: self.plane_min_points,
                planarity_threshold: self.planarity_threshold,
                point_sigma: self.point_sigma,
            },
            node_point_cap: self.node_point_cap,
            seed: self.seed,
        }
    }

    pub fn longterm_config(&self) -> LongTermConfig {
        LongTermConfig {
            cell_size: self.ltm_cell,
            edge_length: self.ltm_edge,
            slide_threshold: self.ltm_slide,
            max_points_per_cell: self.ltm_points_per_cell,
            max_view_angle: self.ltm_view_angle_deg.to_radians(),
        }
    }

    pub fn degeneracy_config(&self) -> DegeneracyConfig {
        DegeneracyConfig {
            threshold: self.degeneracy_threshold,
            required_consecutive: self.degeneracy_window,
            ..Default::default()
        }
    }

    pub fn thresholds(&self) -> SelectorThresholds {
        SelectorThresholds { tau_position: self.tau_position, tau_rotation: self.tau_rotation_deg.to_radians() }
    }

    pub fn lidar_config(&self, imu_from_lidar: Pose) -> LidarConfig {
        LidarConfig {
            beam_sigma: self.lidar_beam_sigma,
            gate: self.lidar_gate,
            iteration: IterationConfig { epsilon: self.esikf_epsilon, max_iters: self.lidar_max_iters },
            imu_from_lidar,
            ..Default::default()
        }
    }

    pub fn visual_config(&self) -> VisualConfig {
        VisualConfig {
            pixel_sigma: self.pixel_sigma,
            huber_delta: self.huber_delta,
            iteration: IterationConfig { epsilon: self.esikf_epsilon, max_iters: self.visual_max_iters },
            attach_budget: self.attach_budget,
            attach_spacing: self.attach_spacing,
            min_gradient: self.min_gradient,
            ..Default::default()
        }
    }

    pub fn process_noise(&self) -> ProcessNoise {
        ProcessNoise {
            gyro: self.gyro_noise,
            accel: self.accel_noise,
            gyro_bias_walk: self.gyro_bias_walk,
            accel_bias_walk: self.accel_bias_walk,
            ..Default::default()
        }
    }
}
