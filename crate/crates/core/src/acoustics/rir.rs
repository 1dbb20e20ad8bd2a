//! Shoebox image-method impulse responses with uniform wall absorption.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::array::DEFAULT_SPEED_OF_SOUND;
use crate::error::{Error, Result};

/// Axis-aligned shoebox room with one corner at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims_m: [f64; 3],
    pub t60_s: f64,
    pub source_positions_m: Vec<[f64; 3]>,
    pub mic_positions_m: Vec<[f64; 3]>,
}

fn inside(p: [f64; 3], dims: [f64; 3]) -> bool {
    (0..3).all(|k| p[k] > 0.0 && p[k] < dims[k])
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims_m.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Geometry(format!("room dimensions {:?} must be positive", self.dims_m)));
        }
        if !(self.t60_s >= 0.0 && self.t60_s.is_finite()) {
            return Err(Error::Geometry(format!("t60 {} s must be >= 0", self.t60_s)));
        }
        if self.mic_positions_m.is_empty() {
            return Err(Error::Geometry("room has no microphones".into()));
        }
        for (i, p) in self.source_positions_m.iter().enumerate() {
            if !inside(*p, self.dims_m) {
                return Err(Error::Geometry(format!(
                    "source {i} at {p:?} is outside the room {:?}",
                    self.dims_m
                )));
            }
        }
        for (i, p) in self.mic_positions_m.iter().enumerate() {
            if !inside(*p, self.dims_m) {
                return Err(Error::Geometry(format!(
                    "microphone {i} at {p:?} is outside the room {:?}",
                    self.dims_m
                )));
            }
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims_m.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [l, w, h] = self.dims_m;
        2.0 * (l * w + l * h + w * h)
    }

    /// Uniform wall absorption from the Sabine formula, clamped to 1. Zero t60 means anechoic.
    pub fn absorption(&self) -> f64 {
        if self.t60_s <= 0.0 {
            return 1.0;
        }
        let sabine = 24.0 * std::f64::consts::LN_10 / DEFAULT_SPEED_OF_SOUND;
        (sabine * self.volume() / (self.surface() * self.t60_s)).min(1.0)
    }

    /// Pressure reflection coefficient of every wall.
    pub fn reflection(&self) -> f64 {
        (1.0 - self.absorption()).max(0.0).sqrt()
    }

    pub fn mic_centroid(&self) -> [f64; 3] {
        let n = self.mic_positions_m.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.mic_positions_m {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        c
    }
}

/// How far the image expansion is carried.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RirTruncation {
    /// Stop where the nominal decay has lost 60 dB, i.e. at `t60` after the direct path.
    #[default]
    TailEnergy,
    /// Keep images with at most this many reflections.
    MaxOrder(u32),
    /// Fixed length in samples.
    Samples(usize),
}

const FRAC_STEPS: usize = 512;
const HALF_TAPS: usize = 32;
const TAPS: usize = 2 * HALF_TAPS;

/// Hann-windowed sinc fractional-delay filters; row `q` delays by `q / FRAC_STEPS` samples,
/// tap `k` lands at offset `k - (HALF_TAPS - 1)`.
fn frac_table() -> &'static [[f64; TAPS]] {
    static TABLE: OnceLock<Vec<[f64; TAPS]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..FRAC_STEPS)
            .map(|q| {
                let frac = q as f64 / FRAC_STEPS as f64;
                let mut row = [0.0; TAPS];
                for (k, v) in row.iter_mut().enumerate() {
                    let x = k as f64 - (HALF_TAPS - 1) as f64 - frac;
                    let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
                    let w = 0.5 * (1.0 + (PI * x / HALF_TAPS as f64).cos());
                    *v = sinc * w;
                }
                row
            })
            .collect()
    })
}

fn add_delayed_impulse(h: &mut [f64], delay_samples: f64, amp: f64) {
    let q_total = (delay_samples * FRAC_STEPS as f64).round() as i64;
    let n0 = q_total.div_euclid(FRAC_STEPS as i64);
    let q = q_total.rem_euclid(FRAC_STEPS as i64) as usize;
    let row = &frac_table()[q];
    for (k, &c) in row.iter().enumerate() {
        let idx = n0 + k as i64 - (HALF_TAPS as i64 - 1);
        if idx >= 0 && (idx as usize) < h.len() {
            h[idx as usize] += amp * c;
        }
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Impulse responses `[source][mic][sample]` at `sample_rate_hz`. Each image contributes
/// `beta^reflections / (4 pi d)` at delay `d / c`, rendered with a 64-tap fractional-delay
/// filter. All responses of one call share a common length.
pub fn simulate_rir(room: &RoomSpec, truncation: RirTruncation, sample_rate_hz: u32) -> Result<Vec<Vec<Vec<f64>>>> {
    room.validate()?;
    let fs = sample_rate_hz as f64;
    let c = DEFAULT_SPEED_OF_SOUND;
    let beta = room.reflection();
    let max_direct = room
        .source_positions_m
        .iter()
        .flat_map(|s| room.mic_positions_m.iter().map(move |m| dist(*s, *m)))
        .fold(0.0, f64::max);
    let direct_samples = max_direct / c * fs;
    let (len, max_order) = match truncation {
        RirTruncation::TailEnergy => {
            let tail = if beta == 0.0 { 0.0 } else { room.t60_s * fs };
            ((direct_samples + tail).ceil() as usize + HALF_TAPS + 1, u32::MAX)
        }
        RirTruncation::MaxOrder(order) => {
            // longest path any image of this order can have
            let diag: f64 = room.dims_m.iter().map(|d| d * d).sum::<f64>().sqrt();
            let reach = max_direct + 2.0 * (order as f64 + 1.0) * diag;
            ((reach / c * fs).ceil() as usize + HALF_TAPS + 1, order)
        }
        RirTruncation::Samples(n) => (n, u32::MAX),
    };
    let max_dist = (len as f64 + HALF_TAPS as f64) / fs * c;
    let max_refl = if beta == 0.0 { 0 } else { max_order };
    let pow_cap = 4096usize;
    let mut beta_pow = vec![1.0; pow_cap];
    for k in 1..pow_cap {
        beta_pow[k] = beta_pow[k - 1] * beta;
    }

    let mut out = Vec::with_capacity(room.source_positions_m.len());
    for s in &room.source_positions_m {
        let mut per_mic = Vec::with_capacity(room.mic_positions_m.len());
        for r in &room.mic_positions_m {
            let mut h = vec![0.0; len];
            // per-axis image offsets (signed distance component, reflection count)
            let axis: Vec<Vec<(f64, u32)>> = (0..3)
                .map(|k| {
                    let l = room.dims_m[k];
                    let n_max = (max_dist / (2.0 * l)).ceil() as i64 + 1;
                    let mut v = Vec::new();
                    for n in -n_max..=n_max {
                        for q in 0..2i64 {
                            let pos = (1 - 2 * q) as f64 * s[k] + 2.0 * n as f64 * l;
                            let d = pos - r[k];
                            let refl = ((n - q).abs() + n.abs()) as u32;
                            if d.abs() <= max_dist && refl <= max_refl {
                                v.push((d, refl));
                            }
                        }
                    }
                    v
                })
                .collect();
            let max_d2 = max_dist * max_dist;
            for &(dx, rx) in &axis[0] {
                let dx2 = dx * dx;
                for &(dy, ry) in &axis[1] {
                    let dxy2 = dx2 + dy * dy;
                    if dxy2 > max_d2 || rx + ry > max_refl {
                        continue;
                    }
                    for &(dz, rz) in &axis[2] {
                        let d2 = dxy2 + dz * dz;
                        let refl = rx + ry + rz;
                        if d2 > max_d2 || refl > max_refl {
                            continue;
                        }
                        let gain = if (refl as usize) < pow_cap { beta_pow[refl as usize] } else { 0.0 };
                        if gain == 0.0 {
                            continue;
                        }
                        let d = d2.sqrt().max(1e-3);
                        add_delayed_impulse(&mut h, d / c * fs, gain / (4.0 * PI * d));
                    }
                }
            }
            per_mic.push(h);
        }
        out.push(per_mic);
    }
    Ok(out)
}

/// Backward-integrated energy decay curve in dB relative to the total energy.
pub fn schroeder_decay_db(h: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; h.len()];
    let mut run = 0.0;
    for i in (0..h.len()).rev() {
        run += h[i] * h[i];
        acc[i] = run;
    }
    let total = acc.first().copied().unwrap_or(0.0);
    acc.iter()
        .map(|&e| if total > 0.0 && e > 0.0 { 10.0 * (e / total).log10() } else { f64::NEG_INFINITY })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room(t60: f64, src: [f64; 3], mic: [f64; 3]) -> RoomSpec {
        RoomSpec {
            dims_m: [5.0, 4.0, 3.0],
            t60_s: t60,
            source_positions_m: vec![src],
            mic_positions_m: vec![mic],
        }
    }

    #[test]
    fn anechoic_is_single_scaled_impulse() {
        let r = room(0.0, [1.0, 1.0, 1.5], [3.0, 2.5, 1.2]);
        let h = &simulate_rir(&r, RirTruncation::TailEnergy, 16000).unwrap()[0][0];
        let d = dist([1.0, 1.0, 1.5], [3.0, 2.5, 1.2]);
        let delay = d / 343.0 * 16000.0;
        let peak = h
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, delay.round() as usize);
        let sum: f64 = h.iter().sum();
        assert!((sum - 1.0 / (4.0 * PI * d)).abs() < 0.01 / (4.0 * PI * d));
        // nothing outside the interpolation kernel
        let lo = delay.floor() as usize - HALF_TAPS;
        assert!(h[..lo].iter().all(|&v| v == 0.0));
        assert!(h[delay.floor() as usize + HALF_TAPS + 1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn integer_delay_is_exact_impulse() {
        // 343 m/s * 40 samples / 16 kHz = 0.8575 m
        let r = room(0.0, [1.0, 2.0, 1.5], [1.8575, 2.0, 1.5]);
        let h = &simulate_rir(&r, RirTruncation::TailEnergy, 16000).unwrap()[0][0];
        let amp = 1.0 / (4.0 * PI * 0.8575);
        for (i, &v) in h.iter().enumerate() {
            let want = if i == 40 { amp } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "sample {i}: {v}");
        }
    }

    #[test]
    fn doubling_distance_halves_direct_path() {
        let near = room(0.0, [1.0, 2.0, 1.5], [1.8575, 2.0, 1.5]);
        let far = room(0.0, [1.0, 2.0, 1.5], [2.715, 2.0, 1.5]);
        let hn = &simulate_rir(&near, RirTruncation::TailEnergy, 16000).unwrap()[0][0];
        let hf = &simulate_rir(&far, RirTruncation::TailEnergy, 16000).unwrap()[0][0];
        assert!((hf[80] / hn[40] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn schroeder_decay_matches_t60() {
        let r = room(0.3, [1.3, 1.1, 1.6], [3.4, 2.7, 1.1]);
        let h = &simulate_rir(&r, RirTruncation::TailEnergy, 16000).unwrap()[0][0];
        let edc = schroeder_decay_db(h);
        // measure from the direct-path arrival
        let onset = h.iter().position(|v| v.abs() > 0.0).unwrap();
        let cross = edc.iter().position(|&e| e <= -60.0).unwrap();
        let t = (cross - onset) as f64 / 16000.0;
        assert!((t - 0.3).abs() <= 0.06, "decay time {t}");
    }

    #[test]
    fn responses_are_causal_and_finite() {
        let mut r = room(0.2, [1.0, 1.0, 1.0], [2.0, 2.0, 1.0]);
        r.mic_positions_m.push([2.05, 2.0, 1.0]);
        let h = simulate_rir(&r, RirTruncation::TailEnergy, 16000).unwrap();
        assert_eq!(h[0].len(), 2);
        assert_eq!(h[0][0].len(), h[0][1].len());
        assert!(h[0].iter().flatten().all(|v| v.is_finite()));
        let d = dist([1.0, 1.0, 1.0], [2.0, 2.0, 1.0]) / 343.0 * 16000.0;
        let first = h[0][0].iter().position(|v| v.abs() > 0.0).unwrap();
        assert!(first as f64 >= d - HALF_TAPS as f64);
    }

    #[test]
    fn max_order_zero_is_direct_path_only() {
        let r = room(0.4, [1.0, 2.0, 1.5], [1.8575, 2.0, 1.5]);
        let h = &simulate_rir(&r, RirTruncation::MaxOrder(0), 16000).unwrap()[0][0];
        let nonzero = h.iter().filter(|v| v.abs() > 1e-12).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn outside_positions_are_rejected() {
        let r = room(0.3, [6.0, 1.0, 1.0], [1.0, 1.0, 1.0]);
        assert!(matches!(simulate_rir(&r, RirTruncation::TailEnergy, 16000), Err(Error::Geometry(_))));
        let r = room(0.3, [1.0, 1.0, 1.0], [1.0, 1.0, 3.0]);
        assert!(simulate_rir(&r, RirTruncation::TailEnergy, 16000).is_err());
    }
}
