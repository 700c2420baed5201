//! Adaptive visual frame selection.
//!
//! A camera frame is admitted when LiDAR is flagged degenerate, or when the
//! motion since the last admitted frame exceeds a threshold that shrinks
//! with the smallest normalized constraint value.

use crate::pose::Pose;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorThresholds {
    /// Metres.
    pub tau_position: f64,
    /// Radians.
    pub tau_rotation: f64,
}

impl SelectorThresholds {
    pub fn indoor() -> Self {
        Self { tau_position: 1.0, tau_rotation: 60f64.to_radians() }
    }

    pub fn outdoor() -> Self {
        Self { tau_position: 2.0, tau_rotation: 60f64.to_radians() }
    }
}

impl Default for SelectorThresholds {
    fn default() -> Self {
        Self::indoor()
    }
}

const INV_SQRT3: f64 = 0.577_350_269_189_625_8;

/// `τ = √3 · σ̃_min · τ_predefined`, with `σ̃_min` clamped to `[0, 1/√3]`.
pub fn adaptive_threshold(sigma_min: f64, predefined: &SelectorThresholds) -> SelectorThresholds {
    let s = if sigma_min.is_nan() { 0.0 } else { sigma_min.clamp(0.0, INV_SQRT3) };
    let factor = 3f64.sqrt() * s;
    SelectorThresholds {
        tau_position: factor * predefined.tau_position,
        tau_rotation: factor * predefined.tau_rotation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionDecision {
    pub selected: bool,
    pub delta_position: f64,
    pub delta_rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectorState {
    /// `None` until the first frame; the first frame is always selected.
    pub last_keyframe_pose: Option<Pose>,
    pub frames_seen: u64,
    pub frames_selected: u64,
}

impl SelectorState {
    pub fn should_select(&mut self, current: &Pose, tau: &SelectorThresholds, degenerate: bool) -> SelectionDecision {
        self.frames_seen += 1;
        let (dp, dr) = match &self.last_keyframe_pose {
            Some(last) => last.delta_to(current),
            None => (f64::INFINITY, f64::INFINITY),
        };
        let selected = degenerate || dp > tau.tau_position || dr > tau.tau_rotation;
        if selected {
            self.last_keyframe_pose = Some(*current);
            self.frames_selected += 1;
        }
        SelectionDecision { selected, delta_position: dp, delta_rotation: dr }
    }

    /// Percentage of frames admitted so far; zero before any frame.
    pub fn selection_ratio(&self) -> f64 {
        if self.frames_seen == 0 {
            0.0
        } else {
            100.0 * self.frames_selected as f64 / self.frames_seen as f64
        }
    }
}
