use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Result, SynthError};

/// Closed interval `[min, max]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn min(self) -> f64 {
        self.0
    }

    pub fn max(self) -> f64 {
        self.1
    }

    fn check(self, name: &str) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite() && self.0 <= self.1) {
            return Err(SynthError::Config(format!("{name}: range [{}, {}] is not ordered", self.0, self.1)));
        }
        Ok(())
    }

    pub fn sample(self, rng: &mut impl Rng) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }
}

/// Closed integer interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange(pub usize, pub usize);

impl CountRange {
    pub fn sample(self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.0..=self.1)
    }
}

/// Geometric distortion parameters. Strengths and decay lengths are in output
/// canvas pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistortionConfig {
    pub folds: CountRange,
    pub fold_strength: Range,
    /// Decay length of a fold. Values below 1.5x the drawn strength are raised
    /// to that bound so the crease cannot turn the page over.
    pub fold_alpha: Range,
    pub curves: CountRange,
    pub curve_strength: Range,
    /// Exponent of the curve profile; values of 1 or more keep the bend smooth at its crest.
    pub curve_exponent: Range,
    pub rotation_deg: Range,
    pub scale: Range,
    pub translation_px: Range,
    /// Fraction of the canvas left free on every side before rotation and translation.
    pub margin: f64,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        Self {
            folds: CountRange(0, 2),
            fold_strength: Range(8.0, 40.0),
            fold_alpha: Range(60.0, 220.0),
            curves: CountRange(1, 2),
            curve_strength: Range(20.0, 70.0),
            curve_exponent: Range(1.3, 2.5),
            rotation_deg: Range(-4.0, 4.0),
            scale: Range(0.85, 1.0),
            translation_px: Range(-20.0, 20.0),
            margin: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotometricConfig {
    pub enabled: bool,
    /// Gaussian blur sigma; 0 disables the blur for that sample.
    pub blur_sigma: Range,
    pub shadow: bool,
    /// Darkening at the shadowed end of the brightness gradient, as a fraction.
    pub shadow_strength: Range,
    pub hue_shift_deg: Range,
    pub saturation_scale: Range,
    pub value_scale: Range,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            blur_sigma: Range(0.0, 1.2),
            shadow: true,
            shadow_strength: Range(0.0, 0.35),
            hue_shift_deg: Range(-8.0, 8.0),
            saturation_scale: Range(0.8, 1.2),
            value_scale: Range(0.85, 1.1),
        }
    }
}

impl PhotometricConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub canvas: (u32, u32),
    pub distortion: DistortionConfig,
    pub photometric: PhotometricConfig,
    /// Directory of background textures; a procedural texture is used when unset.
    pub background_dir: Option<PathBuf>,
    pub seed: u64,
    /// Attempts per sample before a degenerate warp becomes an error.
    pub max_attempts: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 61,
            cols: 61,
            canvas: (992, 992),
            distortion: DistortionConfig::default(),
            photometric: PhotometricConfig::default(),
            background_dir: None,
            seed: 0,
            max_attempts: 10,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(SynthError::Config(format!("grid {}x{} is smaller than 2x2", self.rows, self.cols)));
        }
        if self.canvas.0 < 16 || self.canvas.1 < 16 {
            return Err(SynthError::Config(format!("canvas {:?} is too small", self.canvas)));
        }
        if self.max_attempts == 0 {
            return Err(SynthError::Config("max_attempts must be at least 1".into()));
        }
        let d = &self.distortion;
        for (name, r) in [
            ("fold_strength", d.fold_strength),
            ("fold_alpha", d.fold_alpha),
            ("curve_strength", d.curve_strength),
            ("curve_exponent", d.curve_exponent),
            ("rotation_deg", d.rotation_deg),
            ("scale", d.scale),
            ("translation_px", d.translation_px),
        ] {
            r.check(name)?;
        }
        for (name, c) in [("folds", d.folds), ("curves", d.curves)] {
            if c.0 > c.1 {
                return Err(SynthError::Config(format!("{name}: count range [{}, {}] is not ordered", c.0, c.1)));
            }
        }
        if d.fold_strength.min() < 0.0 || d.curve_strength.min() < 0.0 {
            return Err(SynthError::Config("strengths must be non-negative".into()));
        }
        if d.fold_alpha.min() <= 0.0 {
            return Err(SynthError::Config("fold_alpha must be positive".into()));
        }
        if d.curve_exponent.min() < 1.0 {
            return Err(SynthError::Config("curve_exponent must be at least 1".into()));
        }
        if d.scale.min() <= 0.0 || d.scale.max() > 1.0 {
            return Err(SynthError::Config("scale must lie in (0, 1]".into()));
        }
        if !(0.0..0.4).contains(&d.margin) {
            return Err(SynthError::Config("margin must lie in [0, 0.4)".into()));
        }
        let p = &self.photometric;
        for (name, r) in [
            ("blur_sigma", p.blur_sigma),
            ("shadow_strength", p.shadow_strength),
            ("hue_shift_deg", p.hue_shift_deg),
            ("saturation_scale", p.saturation_scale),
            ("value_scale", p.value_scale),
        ] {
            r.check(name)?;
        }
        if p.blur_sigma.min() < 0.0 || p.saturation_scale.min() < 0.0 || p.value_scale.min() < 0.0 {
            return Err(SynthError::Config("blur and HSV scales must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&p.shadow_strength.min()) || p.shadow_strength.max() > 1.0 {
            return Err(SynthError::Config("shadow_strength must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
