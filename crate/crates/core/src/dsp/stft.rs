use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{ComplexSpectrogram, MultiChannelWave, C64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    #[default]
    SqrtHann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 256,
            window: Window::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || self.fft_size % 2 != 0 {
            return Err(Error::Config(format!(
                "fft_size must be even and >= 2, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::Config(format!(
                "hop must be in 1..={}, got {}",
                self.fft_size, self.hop
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples after reflect padding of `fft_size / 2`.
    pub fn frames_for(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    pub fn window_coeffs(&self) -> Vec<f64> {
        let n = self.fft_size as f64;
        (0..self.fft_size)
            .map(|i| {
                let hann = 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos();
                match self.window {
                    Window::Hann => hann,
                    Window::SqrtHann => hann.sqrt(),
                }
            })
            .collect()
    }

    /// Largest deviation of the steady-state overlap-added `w_analysis * w_synthesis`
    /// from its mean.
    pub fn cola_deviation(&self) -> f64 {
        let w = self.window_coeffs();
        let mut acc = vec![0.0; self.hop];
        for (i, wi) in w.iter().enumerate() {
            acc[i % self.hop] += wi * wi;
        }
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        acc.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max)
    }
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<usize, (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

pub(crate) fn fft_pair(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if let Some(pair) = p.1.get(&n) {
            return pair.clone();
        }
        let fwd = p.0.plan_fft_forward(n);
        let inv = p.0.plan_fft_inverse(n);
        p.1.insert(n, (fwd.clone(), inv.clone()));
        (fwd, inv)
    })
}

/// Reusable single-channel analysis/synthesis operator.
#[derive(Clone)]
pub struct StftPlan {
    cfg: StftConfig,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan").field("cfg", &self.cfg).finish()
    }
}

fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= len as isize {
        k = period - k;
    }
    k as usize
}

impl StftPlan {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let (fwd, inv) = fft_pair(cfg.fft_size);
        Ok(Self {
            window: cfg.window_coeffs(),
            cfg,
            fwd,
            inv,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    fn pad(&self) -> usize {
        self.cfg.fft_size / 2
    }

    /// Analysis of one channel into `[frame][bin]`.
    pub fn analyze(&self, x: &[f64]) -> Vec<C64> {
        let n = self.cfg.fft_size;
        let bins = self.cfg.bins();
        let frames = self.cfg.frames_for(x.len());
        let pad = self.pad() as isize;
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for t in 0..frames {
            let start = (t * self.cfg.hop) as isize - pad;
            for (k, b) in buf.iter_mut().enumerate() {
                let v = x[reflect_index(start + k as isize, x.len())];
                *b = C64::new(v * self.window[k], 0.0);
            }
            self.fwd.process(&mut buf);
            out.extend_from_slice(&buf[..bins]);
        }
        out
    }

    fn envelope(&self, frames: usize) -> Vec<f64> {
        let n = self.cfg.fft_size;
        let mut env = vec![0.0; (frames - 1) * self.cfg.hop + n];
        for t in 0..frames {
            for (k, w) in self.window.iter().enumerate() {
                env[t * self.cfg.hop + k] += w * w;
            }
        }
        env
    }

    /// Weighted overlap-add synthesis of `[frame][bin]` into `len` samples.
    pub fn synthesize(&self, spec: &[C64], frames: usize, len: usize) -> Vec<f64> {
        let n = self.cfg.fft_size;
        let bins = self.cfg.bins();
        debug_assert_eq!(spec.len(), frames * bins);
        if frames == 0 {
            return vec![0.0; len];
        }
        let env = self.envelope(frames);
        let mut ola = vec![0.0; env.len()];
        let mut buf = vec![C64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for t in 0..frames {
            let frame = &spec[t * bins..(t + 1) * bins];
            buf[..bins].copy_from_slice(frame);
            for k in 1..n - bins + 1 {
                buf[n - k] = frame[k].conj();
            }
            self.inv.process(&mut buf);
            let base = t * self.cfg.hop;
            for (k, b) in buf.iter().enumerate() {
                ola[base + k] += b.re * scale * self.window[k];
            }
        }
        let pad = self.pad();
        (0..len)
            .map(|i| match (ola.get(i + pad), env.get(i + pad)) {
                (Some(&v), Some(&e)) if e > 1e-10 => v / e,
                _ => 0.0,
            })
            .collect()
    }

    /// Adjoint of [`StftPlan::synthesize`]: maps a gradient over output samples to
    /// gradients over the real and imaginary parts of every `[frame][bin]` entry.
    pub fn synthesize_adjoint(&self, grad: &[f64], frames: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.cfg.fft_size;
        let bins = self.cfg.bins();
        let mut g_re = vec![0.0; frames * bins];
        let mut g_im = vec![0.0; frames * bins];
        if frames == 0 {
            return (g_re, g_im);
        }
        let env = self.envelope(frames);
        let pad = self.pad();
        let mut gp = vec![0.0; env.len()];
        for (i, g) in grad.iter().enumerate() {
            if let Some(&e) = env.get(i + pad) {
                if e > 1e-10 {
                    gp[i + pad] = g / e;
                }
            }
        }
        let mut buf = vec![C64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for t in 0..frames {
            let base = t * self.cfg.hop;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = C64::new(gp[base + k] * self.window[k], 0.0);
            }
            self.fwd.process(&mut buf);
            for k in 0..bins {
                let edge = k == 0 || k == n / 2;
                let c = if edge { scale } else { 2.0 * scale };
                g_re[t * bins + k] = c * buf[k].re;
                g_im[t * bins + k] = if edge { 0.0 } else { c * buf[k].im };
            }
        }
        (g_re, g_im)
    }
}

/// Multi-channel STFT with reflect padding of `fft_size / 2` at both ends.
pub fn stft(wave: &MultiChannelWave, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if wave.is_empty() {
        return Err(Error::InvalidInput("cannot analyze an empty signal".into()));
    }
    let plan = StftPlan::new(*cfg)?;
    let frames = cfg.frames_for(wave.len());
    let mut data = Vec::with_capacity(wave.channels() * frames * cfg.bins());
    for c in 0..wave.channels() {
        data.extend(plan.analyze(wave.channel(c)));
    }
    ComplexSpectrogram::new(data, wave.channels(), frames, cfg.fft_size, cfg.hop)
}

/// Inverse STFT back to `length` samples per channel at 16 kHz.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig, length: usize) -> Result<MultiChannelWave> {
    cfg.validate()?;
    if spec.fft_size() != cfg.fft_size || spec.hop() != cfg.hop || spec.bins() != cfg.bins() {
        return Err(Error::shape(
            "istft",
            &[spec.fft_size(), spec.hop(), spec.bins()],
            &[cfg.fft_size, cfg.hop, cfg.bins()],
        ));
    }
    let plan = StftPlan::new(*cfg)?;
    let samples = (0..spec.channels())
        .map(|c| plan.synthesize(spec.channel(c), spec.frames(), length))
        .collect();
    MultiChannelWave::new(samples, super::SAMPLE_RATE_HZ)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn frame_count_for_one_second() {
        let cfg = StftConfig::default();
        let wave = MultiChannelWave::mono(noise(16000, 0), 16000).unwrap();
        let spec = stft(&wave, &cfg).unwrap();
        // padded length S + fft, frames = floor(S / hop) + 1
        assert_eq!(spec.shape(), [1, 63, 257]);
    }

    #[test]
    fn zero_wave_gives_zero_spectrogram() {
        let wave = MultiChannelWave::zeros(2, 1000, 16000);
        let spec = stft(&wave, &StftConfig::default()).unwrap();
        assert!(spec.data().iter().all(|z| z.norm() == 0.0));
        let back = istft(&spec, &StftConfig::default(), 1000).unwrap();
        assert!(back.data().iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn bin_centered_cosine_concentrates_energy() {
        let k = 40usize;
        let f = k as f64 * 16000.0 / 512.0;
        let x: Vec<f64> = (0..8000)
            .map(|i| (2.0 * PI * f * i as f64 / 16000.0).cos())
            .collect();
        let spec = stft(&MultiChannelWave::mono(x, 16000).unwrap(), &StftConfig::default()).unwrap();
        for t in 2..spec.frames() - 2 {
            let total: f64 = (0..257).map(|b| spec.at(0, t, b).norm_sqr()).sum();
            let near: f64 = (k - 1..=k + 1).map(|b| spec.at(0, t, b).norm_sqr()).sum();
            assert!(spec.at(0, t, k).norm_sqr() >= spec.at(0, t, k + 1).norm_sqr());
            assert!(near / total >= 0.99, "frame {t}: {}", near / total);
        }
    }

    #[test]
    fn brute_force_dft_agrees() {
        let x = noise(2000, 3);
        let cfg = StftConfig::default();
        let spec = stft(&MultiChannelWave::mono(x.clone(), 16000).unwrap(), &cfg).unwrap();
        let w = cfg.window_coeffs();
        let t = 3;
        for k in [0usize, 7, 100, 256] {
            let mut acc = C64::new(0.0, 0.0);
            for n in 0..512 {
                let idx = t * 256 + n - 256;
                acc += C64::from_polar(x[idx] * w[n], -2.0 * PI * (k * n) as f64 / 512.0);
            }
            assert!((acc - spec.at(0, t, k)).norm() < 1e-9);
        }
    }

    #[test]
    fn round_trip_reconstructs() {
        let cfg = StftConfig::default();
        assert!(cfg.cola_deviation() < 1e-10);
        for len in [16000, 16384, 300, 100] {
            let x = noise(len, len as u64);
            let spec = stft(&MultiChannelWave::mono(x.clone(), 16000).unwrap(), &cfg).unwrap();
            let y = istft(&spec, &cfg, len).unwrap();
            assert!(rel_err(y.channel(0), &x) < 1e-6, "len {len}");
        }
    }

    #[test]
    fn hann_window_round_trip_and_other_hops() {
        for cfg in [
            StftConfig { fft_size: 512, hop: 128, window: Window::Hann },
            StftConfig { fft_size: 256, hop: 64, window: Window::SqrtHann },
        ] {
            let x = noise(5000, 11);
            let spec = stft(&MultiChannelWave::mono(x.clone(), 16000).unwrap(), &cfg).unwrap();
            let y = istft(&spec, &cfg, x.len()).unwrap();
            assert!(rel_err(y.channel(0), &x) < 1e-6);
        }
    }

    #[test]
    fn istft_is_homogeneous() {
        let cfg = StftConfig::default();
        let x = noise(4000, 5);
        let mut spec = stft(&MultiChannelWave::mono(x, 16000).unwrap(), &cfg).unwrap();
        let y = istft(&spec, &cfg, 4000).unwrap();
        spec.data_mut().iter_mut().for_each(|z| *z *= 2.5);
        let y2 = istft(&spec, &cfg, 4000).unwrap();
        for (a, b) in y.channel(0).iter().zip(y2.channel(0)) {
            assert!((2.5 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        // <synthesize(X), g> == <X, synthesize_adjoint(g)> over real/imag parts
        let plan = StftPlan::new(StftConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames = 9;
        let spec: Vec<C64> = (0..frames * 257)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let len = 2000;
        let g = noise(len, 4);
        let y = plan.synthesize(&spec, frames, len);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let (gr, gi) = plan.synthesize_adjoint(&g, frames);
        let rhs: f64 = spec
            .iter()
            .zip(gr.iter().zip(&gi))
            .map(|(z, (r, i))| z.re * r + z.im * i)
            .sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn config_errors() {
        let cfg = StftConfig { fft_size: 512, hop: 600, window: Window::SqrtHann };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let empty = MultiChannelWave::mono(vec![], 16000).unwrap();
        assert!(matches!(
            stft(&empty, &StftConfig::default()),
            Err(Error::InvalidInput(_))
        ));
        let spec = ComplexSpectrogram::zeros(1, 3, 256, 128);
        assert!(istft(&spec, &StftConfig::default(), 100).is_err());
    }
}
