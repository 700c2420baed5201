//! Translational degeneracy of a LiDAR scan from the spectrum of its plane
//! normals, with a consecutive-frame hysteresis flag.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};

/// Unit-norm singular values of `Σ wᵢ nᵢ nᵢᵀ`, ascending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSpectrum {
    pub sigma_min: f64,
    pub sigma_mid: f64,
    pub sigma_max: f64,
    /// False for an empty normal set; such a spectrum is all zeros and is
    /// treated as maximally degenerate.
    pub valid: bool,
}

impl ConstraintSpectrum {
    pub const INVALID: ConstraintSpectrum =
        ConstraintSpectrum { sigma_min: 0.0, sigma_mid: 0.0, sigma_max: 0.0, valid: false };

    pub fn as_array(&self) -> [f64; 3] {
        [self.sigma_min, self.sigma_mid, self.sigma_max]
    }
}

/// Spectrum of the constraint matrix built from plane normals.
///
/// `weights`, when given, must match `normals` in length; missing weights
/// default to one.
pub fn constraint_spectrum(normals: &[Vector3<f64>], weights: Option<&[f64]>) -> ConstraintSpectrum {
    if normals.is_empty() {
        return ConstraintSpectrum::INVALID;
    }
    let mut m = Matrix3::zeros();
    for (i, n) in normals.iter().enumerate() {
        let w = weights.and_then(|w| w.get(i)).copied().unwrap_or(1.0);
        m += n * n.transpose() * w;
    }
    spectrum_of(&m)
}

/// Normalized spectrum of a symmetric PSD constraint matrix.
pub fn spectrum_of(m: &Matrix3<f64>) -> ConstraintSpectrum {
    let sym = (m + m.transpose()) * 0.5;
    let mut s: Vec<f64> = sym.symmetric_eigenvalues().iter().map(|v| v.max(0.0)).collect();
    s.sort_by(f64::total_cmp);
    let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return ConstraintSpectrum::INVALID;
    }
    ConstraintSpectrum {
        sigma_min: s[0] / norm,
        sigma_mid: s[1] / norm,
        sigma_max: s[2] / norm,
        valid: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegeneracyConfig {
    pub threshold: f64,
    pub required_consecutive: usize,
    /// Entries kept in the reporting ring buffer.
    pub history_len: usize,
}

impl Default for DegeneracyConfig {
    fn default() -> Self {
        Self { threshold: 0.07, required_consecutive: 3, history_len: 256 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyState {
    pub flag: bool,
    pub below_count: usize,
    pub config: DegeneracyConfig,
    pub history: VecDeque<(u64, f64)>,
    frames: u64,
}

impl DegeneracyState {
    pub fn new(config: DegeneracyConfig) -> Self {
        Self { flag: false, below_count: 0, config, history: VecDeque::new(), frames: 0 }
    }

    /// Feeds one frame's spectrum and returns the new flag.
    pub fn update(&mut self, spectrum: &ConstraintSpectrum) -> bool {
        if !spectrum.valid || spectrum.sigma_min < self.config.threshold {
            self.below_count += 1;
        } else {
            self.below_count = 0;
        }
        self.flag = self.below_count >= self.config.required_consecutive;
        if self.config.history_len > 0 {
            if self.history.len() == self.config.history_len {
                self.history.pop_front();
            }
            self.history.push_back((self.frames, spectrum.sigma_min));
        }
        self.frames += 1;
        self.flag
    }
}

/// Functional form of [`DegeneracyState::update`].
pub fn update_degeneracy(state: &DegeneracyState, spectrum: &ConstraintSpectrum) -> DegeneracyState {
    let mut next = state.clone();
    next.update(spectrum);
    next
}
