//! Microphone-array geometry, far-field steering, fixed beamformers and spatial feature pools.

mod bankfile;
mod beamformer;
mod pools;

pub use bankfile::{read_bank, write_bank, BANK_MAGIC, BANK_VERSION};
pub use beamformer::{
    apply_beamformer, compute_beam_pool, design_beamformer_bank, directivity_index, BeamPool,
    BeamformerBank, BeamformerDesign,
};
pub use pools::{
    angle_feature, compute_angle_pool, truth_phase_difference, AnglePool, FeaturePools,
};

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::C64;
use crate::error::{Error, Result};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Microphone pairs used for cosIPD and angle features: the three diametric pairs of the
/// reference ring.
pub const DEFAULT_PAIRS: [(usize, usize); 3] = [(0, 3), (1, 4), (2, 5)];

/// Microphone positions relative to the array centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mics: Vec<[f64; 3]>,
    #[serde(default = "default_c")]
    pub speed_of_sound: f64,
}

fn default_c() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

impl ArrayGeometry {
    pub fn new(mics: Vec<[f64; 3]>, speed_of_sound: f64) -> Result<Self> {
        if mics.is_empty() {
            return Err(Error::Geometry("array has no microphones".into()));
        }
        if !(speed_of_sound > 0.0) {
            return Err(Error::Geometry("speed of sound must be positive".into()));
        }
        let g = Self {
            mics,
            speed_of_sound,
        };
        let c = g.centroid();
        if c.iter().any(|v| v.abs() > 1e-9) {
            return Err(Error::Geometry(format!(
                "microphone centroid {c:?} is not at the origin"
            )));
        }
        Ok(g)
    }

    /// Shifts arbitrary positions so the centroid is the origin.
    pub fn centered(mics: Vec<[f64; 3]>, speed_of_sound: f64) -> Result<Self> {
        if mics.is_empty() {
            return Err(Error::Geometry("array has no microphones".into()));
        }
        let n = mics.len() as f64;
        let mut c = [0.0; 3];
        for p in &mics {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        let mics = if c.iter().all(|v| v.abs() <= 1e-12) {
            mics
        } else {
            mics.iter()
                .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
                .collect()
        };
        Self::new(mics, speed_of_sound)
    }

    /// Seven-microphone circular array: six mics on a 4.25 cm ring at 60 degree spacing
    /// (indices 0..6, starting on the +x axis) and one centre mic (index 6).
    pub fn reference() -> Self {
        let r = 0.0425;
        let mut mics: Vec<[f64; 3]> = (0..6)
            .map(|k| {
                let a = k as f64 * PI / 3.0;
                [r * a.cos(), r * a.sin(), 0.0]
            })
            .collect();
        mics.push([0.0, 0.0, 0.0]);
        Self::centered(mics, DEFAULT_SPEED_OF_SOUND).expect("reference geometry is valid")
    }

    pub fn num_mics(&self) -> usize {
        self.mics.len()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.mics.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.mics {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        c
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.mics[i], self.mics[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    /// Far-field plane-wave delay (seconds) at mic `m` relative to the origin, for a source
    /// at azimuth `angle_deg` in the horizontal plane.
    pub fn delay(&self, m: usize, angle_deg: f64) -> f64 {
        let a = angle_deg.to_radians();
        let p = self.mics[m];
        -(p[0] * a.cos() + p[1] * a.sin()) / self.speed_of_sound
    }

    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.mics.len() as u64).to_le_bytes());
        for p in &self.mics {
            for v in p {
                h.update(v.to_le_bytes());
            }
        }
        h.update(self.speed_of_sound.to_le_bytes());
        let out = h.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(out.as_slice());
        bytes
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let g: ArrayGeometry =
            toml::from_str(s).map_err(|e| Error::Config(format!("geometry: {e}")))?;
        Self::centered(g.mics, g.speed_of_sound)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("geometry serializes")
    }
}

/// Unnormalized array manifold: unit-modulus entries `exp(-j 2 pi f tau_m)`.
pub fn array_manifold(geom: &ArrayGeometry, angle_deg: f64, f_hz: f64) -> Vec<C64> {
    (0..geom.num_mics())
        .map(|m| C64::from_polar(1.0, -2.0 * PI * f_hz * geom.delay(m, angle_deg)))
        .collect()
}

/// Unit-norm steering vector.
pub fn steering_vector(geom: &ArrayGeometry, angle_deg: f64, f_hz: f64) -> Vec<C64> {
    let s = 1.0 / (geom.num_mics() as f64).sqrt();
    array_manifold(geom, angle_deg, f_hz)
        .into_iter()
        .map(|z| z * s)
        .collect()
}

/// Frequency of STFT bin `k`.
pub fn bin_frequency(k: usize, fft_size: usize, sample_rate_hz: u32) -> f64 {
    k as f64 * sample_rate_hz as f64 / fft_size as f64
}

/// Uniform azimuth grid `k * 360 / n`.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * 360.0 / n as f64).collect()
}

/// Normalized steering vectors over an angle grid, laid out `[angle][bin][mic]`.
#[derive(Debug, Clone)]
pub struct SteeringTable {
    angles_deg: Vec<f64>,
    bins: usize,
    mics: usize,
    h: Vec<C64>,
}

impl SteeringTable {
    pub fn new(geom: &ArrayGeometry, angles_deg: &[f64], fft_size: usize, sample_rate_hz: u32) -> Self {
        let bins = fft_size / 2 + 1;
        let mics = geom.num_mics();
        let mut h = Vec::with_capacity(angles_deg.len() * bins * mics);
        for &a in angles_deg {
            for k in 0..bins {
                h.extend(steering_vector(geom, a, bin_frequency(k, fft_size, sample_rate_hz)));
            }
        }
        Self {
            angles_deg: angles_deg.to_vec(),
            bins,
            mics,
            h,
        }
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn mics(&self) -> usize {
        self.mics
    }

    pub fn vector(&self, angle_index: usize, bin: usize) -> &[C64] {
        let start = (angle_index * self.bins + bin) * self.mics;
        &self.h[start..start + self.mics]
    }
}

/// Smallest absolute difference between two azimuths, in degrees.
pub fn circular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Azimuth of `p` seen from `origin`, in `[0, 360)`.
pub fn azimuth_deg(origin: [f64; 3], p: [f64; 3]) -> f64 {
    (p[1] - origin[1]).atan2(p[0] - origin[0]).to_degrees().rem_euclid(360.0)
}
