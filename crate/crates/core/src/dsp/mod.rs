//! Time-frequency analysis and synthesis, phase-difference features and WAV I/O.

mod stft;
pub mod wav;

pub use stft::{istft, stft, StftConfig, StftPlan, Window};
pub(crate) use stft::fft_pair;

use crate::error::{Error, Result};
use num_complex::Complex64;

pub type C64 = Complex64;

pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Time-domain audio, one row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelWave {
    samples: Vec<Vec<f64>>,
    sample_rate_hz: u32,
}

impl MultiChannelWave {
    pub fn new(samples: Vec<Vec<f64>>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("wave has no channels".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        let len = samples[0].len();
        if let Some((c, ch)) = samples.iter().enumerate().find(|(_, ch)| ch.len() != len) {
            return Err(Error::InvalidInput(format!(
                "channel {c} has {} samples, channel 0 has {len}",
                ch.len()
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate_hz)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate_hz: u32) -> Self {
        Self {
            samples: vec![vec![0.0; len]; channels.max(1)],
            sample_rate_hz,
        }
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.samples[c]
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn into_data(self) -> Vec<Vec<f64>> {
        self.samples
    }

    /// Samples `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.len());
        let start = start.min(end);
        Self {
            samples: self.samples.iter().map(|ch| ch[start..end].to_vec()).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().flatten().map(|x| x * x).sum()
    }
}

/// Complex STFT tensor laid out as `[channel][frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<C64>,
    channels: usize,
    frames: usize,
    bins: usize,
    fft_size: usize,
    hop: usize,
}

impl ComplexSpectrogram {
    pub fn new(
        data: Vec<C64>,
        channels: usize,
        frames: usize,
        fft_size: usize,
        hop: usize,
    ) -> Result<Self> {
        let bins = fft_size / 2 + 1;
        if data.len() != channels * frames * bins {
            return Err(Error::shape(
                "spectrogram",
                &[data.len()],
                &[channels, frames, bins],
            ));
        }
        Ok(Self {
            data,
            channels,
            frames,
            bins,
            fft_size,
            hop,
        })
    }

    pub fn zeros(channels: usize, frames: usize, fft_size: usize, hop: usize) -> Self {
        let bins = fft_size / 2 + 1;
        Self {
            data: vec![C64::new(0.0, 0.0); channels * frames * bins],
            channels,
            frames,
            bins,
            fft_size,
            hop,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn fft_size(&self) -> usize {
        self.fft_size
    }
    pub fn hop(&self) -> usize {
        self.hop
    }
    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.frames, self.bins]
    }

    #[inline]
    pub fn at(&self, c: usize, t: usize, f: usize) -> C64 {
        self.data[(c * self.frames + t) * self.bins + f]
    }

    /// `[frame][bin]` slice of one channel.
    pub fn channel(&self, c: usize) -> &[C64] {
        let n = self.frames * self.bins;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [C64] {
        let n = self.frames * self.bins;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Frames `[start, end)` of every channel.
    pub fn frame_range(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.frames);
        let start = start.min(end);
        let mut data = Vec::with_capacity(self.channels * (end - start) * self.bins);
        for c in 0..self.channels {
            let ch = self.channel(c);
            data.extend_from_slice(&ch[start * self.bins..end * self.bins]);
        }
        Self {
            data,
            channels: self.channels,
            frames: end - start,
            bins: self.bins,
            fft_size: self.fft_size,
            hop: self.hop,
        }
    }

    /// The M-channel observation vector at one time-frequency bin.
    pub fn observation(&self, t: usize, f: usize) -> Vec<C64> {
        (0..self.channels).map(|c| self.at(c, t, f)).collect()
    }
}

/// Cosine inter-microphone phase difference for each pair, laid out `[pair][frame][bin]`.
pub fn cos_ipd(spec: &ComplexSpectrogram, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let m = spec.channels();
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= m || j >= m) {
        return Err(Error::InvalidInput(format!(
            "microphone pair ({i}, {j}) out of range for {m} channels"
        )));
    }
    let n = spec.frames() * spec.bins();
    let mut out = Vec::with_capacity(pairs.len() * n);
    for &(i, j) in pairs {
        let (ci, cj) = (spec.channel(i), spec.channel(j));
        out.extend(ci.iter().zip(cj).map(|(&a, &b)| unit_cos(a, b)));
    }
    Ok(out)
}

/// cos(arg a - arg b), with arg 0 = 0.
#[inline]
pub(crate) fn unit_cos(a: C64, b: C64) -> f64 {
    let z = a * b.conj();
    let n = z.norm();
    if n > 0.0 {
        (z.re / n).clamp(-1.0, 1.0)
    } else {
        (a.arg() - b.arg()).cos()
    }
}

/// Natural-log magnitude with a floor, `[frame][bin]`.
pub fn log_magnitude(values: &[C64], floor: f64) -> Vec<f64> {
    values.iter().map(|z| (z.norm() + floor).ln()).collect()
}

/// Root mean square of a signal; 0 for an empty slice.
pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Full linear convolution via FFT; output length `x.len() + h.len() - 1`.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    if x.len().min(h.len()) <= 32 {
        let mut y = vec![0.0; out_len];
        for (i, &a) in x.iter().enumerate() {
            for (j, &b) in h.iter().enumerate() {
                y[i + j] += a * b;
            }
        }
        return y;
    }
    let n = out_len.next_power_of_two();
    let (fwd, inv) = fft_pair(n);
    let mut a: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    a.resize(n, C64::new(0.0, 0.0));
    let mut b: Vec<C64> = h.iter().map(|&v| C64::new(v, 0.0)).collect();
    b.resize(n, C64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a[..out_len].iter().map(|z| z.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(m: usize, t: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..m * t * 257)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexSpectrogram::new(data, m, t, 512, 256).unwrap()
    }

    #[test]
    fn cos_ipd_identical_channels_is_one() {
        let mut spec = random_spec(2, 4, 1);
        let ch0 = spec.channel(0).to_vec();
        spec.channel_mut(1).copy_from_slice(&ch0);
        let ipd = cos_ipd(&spec, &[(0, 1)]).unwrap();
        assert!(ipd.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn cos_ipd_half_period_delay_is_minus_one() {
        // channel 1 = channel 0 delayed by half a period at f=1000 Hz
        let sr = 16000.0;
        let f0 = 1000.0;
        let n = 16000;
        let x0: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 / sr).sin())
            .collect();
        let delay = (sr / f0 / 2.0) as usize;
        let x1: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f0 * (i as f64 - delay as f64) / sr).sin())
            .collect();
        let wave = MultiChannelWave::new(vec![x0, x1], 16000).unwrap();
        let spec = stft(&wave, &StftConfig::default()).unwrap();
        let ipd = cos_ipd(&spec, &[(0, 1)]).unwrap();
        let bin = 32; // 1000 Hz at 31.25 Hz spacing
        for t in 2..spec.frames() - 2 {
            assert!((ipd[t * 257 + bin] + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cos_ipd_matches_complex_argument() {
        let spec = random_spec(4, 6, 9);
        let pairs = [(0, 3), (1, 2), (3, 1)];
        let ipd = cos_ipd(&spec, &pairs).unwrap();
        for (p, &(i, j)) in pairs.iter().enumerate() {
            for t in 0..6 {
                for f in 0..257 {
                    let want = (spec.at(i, t, f) * spec.at(j, t, f).conj()).arg().cos();
                    assert!((ipd[(p * 6 + t) * 257 + f] - want).abs() < 1e-9);
                }
            }
        }
        // swapping the pair order leaves the cosine unchanged
        let swapped = cos_ipd(&spec, &[(3, 0)]).unwrap();
        assert!(swapped.iter().zip(&ipd).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn cos_ipd_rejects_bad_pair() {
        let spec = random_spec(3, 2, 2);
        assert!(matches!(
            cos_ipd(&spec, &[(0, 3)]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn ragged_wave_is_rejected() {
        assert!(MultiChannelWave::new(vec![vec![0.0; 3], vec![0.0; 2]], 16000).is_err());
        assert!(MultiChannelWave::new(vec![], 16000).is_err());
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0).collect();
        let h: Vec<f64> = (0..70).map(|i| (i as f64 * 0.3).sin()).collect();
        let y = fft_convolve(&x, &h);
        assert_eq!(y.len(), 369);
        for n in [0usize, 5, 100, 299, 368] {
            let want: f64 = (0..70).filter(|&j| j <= n && n - j < 300).map(|j| x[n - j] * h[j]).sum();
            assert!((y[n] - want).abs() < 1e-10);
        }
    }
}
