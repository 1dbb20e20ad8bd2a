use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{array_manifold, bin_frequency, uniform_angles, ArrayGeometry};
use crate::dsp::{ComplexSpectrogram, C64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamformerDesign {
    DelayAndSum,
    Superdirective,
}

impl BeamformerDesign {
    pub(crate) fn code(self) -> u8 {
        match self {
            BeamformerDesign::DelayAndSum => 0,
            BeamformerDesign::Superdirective => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(BeamformerDesign::DelayAndSum),
            1 => Some(BeamformerDesign::Superdirective),
            _ => None,
        }
    }
}

impl std::str::FromStr for BeamformerDesign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delay_and_sum" | "delay-and-sum" | "dsb" => Ok(Self::DelayAndSum),
            "superdirective" => Ok(Self::Superdirective),
            other => Err(Error::Config(format!("unknown beamformer design `{other}`"))),
        }
    }
}

/// Fixed per-frequency beamformer filters, laid out `[beam][bin][mic]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerBank {
    pub(crate) w: Vec<C64>,
    pub(crate) center_angles_deg: Vec<f64>,
    pub(crate) design: BeamformerDesign,
    pub(crate) diagonal_loading: f64,
    pub(crate) fft_size: usize,
    pub(crate) sample_rate_hz: u32,
    pub(crate) geometry: ArrayGeometry,
}

impl BeamformerBank {
    pub fn num_beams(&self) -> usize {
        self.center_angles_deg.len()
    }
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
    pub fn mics(&self) -> usize {
        self.geometry.num_mics()
    }
    pub fn center_angles_deg(&self) -> &[f64] {
        &self.center_angles_deg
    }
    pub fn design(&self) -> BeamformerDesign {
        self.design
    }
    pub fn diagonal_loading(&self) -> f64 {
        self.diagonal_loading
    }
    pub fn fft_size(&self) -> usize {
        self.fft_size
    }
    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }
    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    /// `[bin][mic]` filters of beam `n`.
    pub fn filters(&self, n: usize) -> &[C64] {
        let len = self.bins() * self.mics();
        &self.w[n * len..(n + 1) * len]
    }

    pub fn filter(&self, n: usize, bin: usize) -> &[C64] {
        let m = self.mics();
        &self.filters(n)[bin * m..(bin + 1) * m]
    }

    /// Complex response `w^H d` of beam `n` to a horizontal plane wave.
    pub fn response(&self, n: usize, bin: usize, angle_deg: f64) -> C64 {
        let f = bin_frequency(bin, self.fft_size, self.sample_rate_hz);
        let d = array_manifold(&self.geometry, angle_deg, f);
        self.filter(n, bin)
            .iter()
            .zip(&d)
            .map(|(w, d)| w.conj() * d)
            .sum()
    }

    /// Index of the beam whose centre is closest (circularly) to `angle_deg`; ties go to the
    /// smaller index.
    pub fn nearest_beam(&self, angle_deg: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (n, &c) in self.center_angles_deg.iter().enumerate() {
            let d = super::circular_distance_deg(angle_deg, c);
            if d < best_d - 1e-9 {
                best = n;
                best_d = d;
            }
        }
        best
    }
}

fn diffuse_coherence(geom: &ArrayGeometry, f_hz: f64, loading: f64) -> Vec<f64> {
    let m = geom.num_mics();
    let mut g = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let x = 2.0 * PI * f_hz * geom.distance(i, j) / geom.speed_of_sound;
            g[i * m + j] = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
        }
        g[i * m + i] += loading;
    }
    g
}

/// Solves `a x = b` for a real square matrix and complex right-hand side by LU with partial
/// pivoting. Returns `None` when a pivot vanishes.
fn solve_real(a: &[f64], b: &[C64], m: usize) -> Option<Vec<C64>> {
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&p, &q| a[p * m + col].abs().total_cmp(&a[q * m + col].abs()))
            .unwrap();
        if a[piv * m + col].abs() <= 1e-12 * scale {
            return None;
        }
        if piv != col {
            for k in 0..m {
                a.swap(piv * m + k, col * m + k);
            }
            x.swap(piv, col);
        }
        for r in col + 1..m {
            let factor = a[r * m + col] / a[col * m + col];
            if factor != 0.0 {
                for k in col..m {
                    a[r * m + k] -= factor * a[col * m + k];
                }
                let xc = x[col];
                x[r] -= xc * factor;
            }
        }
    }
    for r in (0..m).rev() {
        let mut acc = x[r];
        for k in r + 1..m {
            acc -= x[k] * a[r * m + k];
        }
        x[r] = acc / a[r * m + r];
    }
    Some(x)
}

/// Designs `num_beams` beams centred at `k * 360 / num_beams` degrees.
pub fn design_beamformer_bank(
    geom: &ArrayGeometry,
    num_beams: usize,
    design: BeamformerDesign,
    diagonal_loading: f64,
    fft_size: usize,
    sample_rate_hz: u32,
) -> Result<BeamformerBank> {
    if num_beams == 0 {
        return Err(Error::Config("need at least one beam".into()));
    }
    if diagonal_loading < 0.0 {
        return Err(Error::Config("diagonal loading must be non-negative".into()));
    }
    let m = geom.num_mics();
    let bins = fft_size / 2 + 1;
    let centers = uniform_angles(num_beams);
    let mut w = Vec::with_capacity(num_beams * bins * m);
    for &theta in &centers {
        for k in 0..bins {
            let f = bin_frequency(k, fft_size, sample_rate_hz);
            let d = array_manifold(geom, theta, f);
            match design {
                BeamformerDesign::DelayAndSum => {
                    w.extend(d.iter().map(|z| z / m as f64));
                }
                BeamformerDesign::Superdirective => {
                    let gamma = diffuse_coherence(geom, f, diagonal_loading);
                    let gd = solve_real(&gamma, &d, m).ok_or(Error::Singular {
                        freq_hz: f,
                        loading: diagonal_loading,
                    })?;
                    let denom: C64 = d.iter().zip(&gd).map(|(a, b)| a.conj() * b).sum();
                    w.extend(gd.iter().map(|z| z / denom.re));
                }
            }
        }
    }
    Ok(BeamformerBank {
        w,
        center_angles_deg: centers,
        design,
        diagonal_loading,
        fft_size,
        sample_rate_hz,
        geometry: geom.clone(),
    })
}

/// `b[t, f] = w_f^H y[t, f]` with the complex product realized as real multiply-adds.
pub fn apply_beamformer(filters: &[C64], spec: &ComplexSpectrogram) -> Result<Vec<C64>> {
    let (m, t_len, bins) = (spec.channels(), spec.frames(), spec.bins());
    if filters.len() != bins * m {
        return Err(Error::shape("apply_beamformer", &[filters.len()], &[bins, m]));
    }
    let mut re = vec![0.0; t_len * bins];
    let mut im = vec![0.0; t_len * bins];
    for c in 0..m {
        let ch = spec.channel(c);
        for t in 0..t_len {
            let row = &ch[t * bins..(t + 1) * bins];
            let (ro, io) = (&mut re[t * bins..(t + 1) * bins], &mut im[t * bins..(t + 1) * bins]);
            for f in 0..bins {
                let w = filters[f * m + c];
                let y = row[f];
                // conj(w) * y
                ro[f] += w.re * y.re + w.im * y.im;
                io[f] += w.re * y.im - w.im * y.re;
            }
        }
    }
    Ok(re.into_iter().zip(im).map(|(r, i)| C64::new(r, i)).collect())
}

/// Beam pool `[beam][frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPool {
    pub data: Vec<C64>,
    pub beams: usize,
    pub frames: usize,
    pub bins: usize,
}

impl BeamPool {
    pub fn beam(&self, n: usize) -> &[C64] {
        let len = self.frames * self.bins;
        &self.data[n * len..(n + 1) * len]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.beams, self.frames, self.bins]
    }
}

pub fn compute_beam_pool(bank: &BeamformerBank, spec: &ComplexSpectrogram) -> Result<BeamPool> {
    if spec.channels() != bank.mics() || spec.bins() != bank.bins() {
        return Err(Error::shape(
            "compute_beam_pool",
            &[spec.channels(), spec.bins()],
            &[bank.mics(), bank.bins()],
        ));
    }
    let mut data = Vec::with_capacity(bank.num_beams() * spec.frames() * spec.bins());
    for n in 0..bank.num_beams() {
        data.extend(apply_beamformer(bank.filters(n), spec)?);
    }
    Ok(BeamPool {
        data,
        beams: bank.num_beams(),
        frames: spec.frames(),
        bins: spec.bins(),
    })
}

/// Directivity index (dB) of beam `n` at `bin`, by numerically integrating the beampattern
/// power over the sphere with a midpoint rule in azimuth and elevation.
pub fn directivity_index(bank: &BeamformerBank, n: usize, bin: usize) -> f64 {
    let f = bin_frequency(bin, bank.fft_size, bank.sample_rate_hz);
    let geom = &bank.geometry;
    let w = bank.filter(n, bin);
    let power = |az: f64, el: f64| -> f64 {
        let u = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
        let r: C64 = geom
            .mics
            .iter()
            .zip(w)
            .map(|(p, w)| {
                let tau = -(p[0] * u[0] + p[1] * u[1] + p[2] * u[2]) / geom.speed_of_sound;
                w.conj() * C64::from_polar(1.0, -2.0 * PI * f * tau)
            })
            .sum();
        r.norm_sqr()
    };
    let (n_az, n_el) = (360, 180);
    let mut acc = 0.0;
    let mut area = 0.0;
    for i in 0..n_el {
        let el = -PI / 2.0 + (i as f64 + 0.5) * PI / n_el as f64;
        let weight = el.cos();
        for j in 0..n_az {
            let az = (j as f64 + 0.5) * 2.0 * PI / n_az as f64;
            acc += weight * power(az, el);
            area += weight;
        }
    }
    let look = power(bank.center_angles_deg[n].to_radians(), 0.0);
    10.0 * (look / (acc / area)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, MultiChannelWave, StftConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn banks_are_distortionless() {
        let g = ArrayGeometry::reference();
        for design in [BeamformerDesign::DelayAndSum, BeamformerDesign::Superdirective] {
            let bank = design_beamformer_bank(&g, 18, design, 1e-2, 512, 16000).unwrap();
            for n in 0..18 {
                for k in 0..257 {
                    let r = bank.response(n, k, bank.center_angles_deg()[n]);
                    assert!((r - C64::new(1.0, 0.0)).norm() < 1e-6, "{design:?} {n} {k}");
                }
            }
        }
    }

    #[test]
    fn delay_and_sum_white_noise_gain() {
        let g = ArrayGeometry::reference();
        let bank = design_beamformer_bank(&g, 18, BeamformerDesign::DelayAndSum, 0.0, 512, 16000).unwrap();
        for k in [0, 50, 256] {
            let w = bank.filter(3, k);
            let wng = bank.response(3, k, 60.0).norm_sqr() / w.iter().map(|z| z.norm_sqr()).sum::<f64>();
            assert!((wng - 7.0).abs() < 1e-9);
        }
    }

    #[test]
    fn superdirective_beats_delay_and_sum_directivity() {
        let g = ArrayGeometry::reference();
        let sd = design_beamformer_bank(&g, 18, BeamformerDesign::Superdirective, 1e-2, 512, 16000).unwrap();
        let ds = design_beamformer_bank(&g, 18, BeamformerDesign::DelayAndSum, 0.0, 512, 16000).unwrap();
        let bin = 64; // 2 kHz
        assert!(directivity_index(&sd, 0, bin) > directivity_index(&ds, 0, bin));
    }

    #[test]
    fn unloaded_superdirective_is_singular_at_dc() {
        let g = ArrayGeometry::reference();
        let err = design_beamformer_bank(&g, 4, BeamformerDesign::Superdirective, 0.0, 512, 16000)
            .unwrap_err();
        assert!(err.to_string().contains("raise the diagonal loading"));
    }

    #[test]
    fn nearest_beam_ties_and_wraps() {
        let g = ArrayGeometry::reference();
        let bank = design_beamformer_bank(&g, 18, BeamformerDesign::DelayAndSum, 0.0, 64, 16000).unwrap();
        assert_eq!(bank.nearest_beam(20.0), 1);
        assert_eq!(bank.nearest_beam(10.0), 0);
        assert_eq!(bank.nearest_beam(355.0), 0);
    }

    fn random_spec(m: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..m * 5 * 257)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexSpectrogram::new(data, m, 5, 512, 256).unwrap()
    }

    #[test]
    fn apply_matches_naive_loop() {
        let spec = random_spec(7, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<C64> = (0..257 * 7)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let out = apply_beamformer(&w, &spec).unwrap();
        for t in 0..5 {
            for f in 0..257 {
                let mut acc = C64::new(0.0, 0.0);
                for m in 0..7 {
                    acc += w[f * 7 + m].conj() * spec.at(m, t, f);
                }
                assert!((acc - out[t * 257 + f]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn selector_filter_returns_channel() {
        let spec = random_spec(3, 4);
        let mut w = vec![C64::new(0.0, 0.0); 257 * 3];
        for f in 0..257 {
            w[f * 3] = C64::new(1.0, 0.0);
        }
        assert_eq!(apply_beamformer(&w, &spec).unwrap(), spec.channel(0).to_vec());
        assert!(apply_beamformer(&w[..257 * 2], &spec).is_err());
    }

    #[test]
    fn plane_wave_from_centre_passes_unchanged() {
        let g = ArrayGeometry::reference();
        let bank = design_beamformer_bank(&g, 18, BeamformerDesign::Superdirective, 1e-2, 512, 16000).unwrap();
        // build the array spectrogram directly from a reference-channel spectrum
        let src = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let x: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
            stft(&MultiChannelWave::mono(x, 16000).unwrap(), &StftConfig::default()).unwrap()
        };
        let theta = bank.center_angles_deg()[5];
        let mut data = Vec::new();
        for m in 0..7 {
            for t in 0..src.frames() {
                for k in 0..257 {
                    let d = array_manifold(&g, theta, bin_frequency(k, 512, 16000));
                    data.push(src.at(0, t, k) * d[m]);
                }
            }
        }
        let spec = ComplexSpectrogram::new(data, 7, src.frames(), 512, 256).unwrap();
        let out = apply_beamformer(bank.filters(5), &spec).unwrap();
        for (o, s) in out.iter().zip(src.channel(0)) {
            assert!((o.norm() - s.norm()).abs() < 1e-5 * s.norm().max(1.0));
        }
        let pool = compute_beam_pool(&bank, &spec).unwrap();
        assert_eq!(pool.shape(), [18, src.frames(), 257]);
        assert_eq!(pool.beam(5), out.as_slice());
    }
}
