use std::f64::consts::PI;

use super::{bin_frequency, compute_beam_pool, uniform_angles, ArrayGeometry, BeamPool, BeamformerBank};
use crate::dsp::{ComplexSpectrogram, C64};
use crate::error::{Error, Result};

/// Geometry-predicted phase difference `arg h_i - arg h_j` (radians) of a plane wave from
/// `angle_deg` between mics `i` and `j`.
pub fn truth_phase_difference(geom: &ArrayGeometry, angle_deg: f64, pair: (usize, usize), f_hz: f64) -> f64 {
    let (i, j) = pair;
    2.0 * PI * f_hz * (geom.delay(j, angle_deg) - geom.delay(i, angle_deg))
}

fn check_pairs(geom: &ArrayGeometry, spec: &ComplexSpectrogram, pairs: &[(usize, usize)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("angle feature needs at least one pair".into()));
    }
    if spec.channels() != geom.num_mics() {
        return Err(Error::shape("angle_feature", &[spec.channels()], &[geom.num_mics()]));
    }
    let m = spec.channels();
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= m || j >= m) {
        return Err(Error::InvalidInput(format!(
            "microphone pair ({i}, {j}) out of range for {m} channels"
        )));
    }
    Ok(())
}

/// Unit phasors `exp(j (arg y_i - arg y_j))` per pair, `[pair][frame][bin]`.
fn observed_phasors(spec: &ComplexSpectrogram, pairs: &[(usize, usize)]) -> Vec<C64> {
    let mut out = Vec::with_capacity(pairs.len() * spec.frames() * spec.bins());
    for &(i, j) in pairs {
        for (&a, &b) in spec.channel(i).iter().zip(spec.channel(j)) {
            let z = a * b.conj();
            let n = z.norm();
            out.push(if n > 0.0 {
                z / n
            } else {
                C64::from_polar(1.0, a.arg() - b.arg())
            });
        }
    }
    out
}

fn feature_from_phasors(
    phasors: &[C64],
    geom: &ArrayGeometry,
    angle_deg: f64,
    pairs: &[(usize, usize)],
    frames: usize,
    bins: usize,
    fft_size: usize,
    sample_rate_hz: u32,
    out: &mut [f64],
) {
    let p_len = pairs.len() as f64;
    out.iter_mut().for_each(|v| *v = 0.0);
    for (p, &pair) in pairs.iter().enumerate() {
        let rot: Vec<C64> = (0..bins)
            .map(|k| {
                let delta = truth_phase_difference(geom, angle_deg, pair, bin_frequency(k, fft_size, sample_rate_hz));
                C64::from_polar(1.0, -delta)
            })
            .collect();
        let block = &phasors[p * frames * bins..(p + 1) * frames * bins];
        for t in 0..frames {
            let row = &block[t * bins..(t + 1) * bins];
            let o = &mut out[t * bins..(t + 1) * bins];
            for k in 0..bins {
                // Re(u e^{-j delta}) = cos(o - delta)
                o[k] += row[k].re * rot[k].re - row[k].im * rot[k].im;
            }
        }
    }
    for v in out.iter_mut() {
        *v = (*v / p_len).clamp(-1.0, 1.0);
    }
}

/// Mean over pairs of `cos(observed IPD - predicted IPD)`, `[frame][bin]`.
pub fn angle_feature(
    spec: &ComplexSpectrogram,
    geom: &ArrayGeometry,
    angle_deg: f64,
    pairs: &[(usize, usize)],
    sample_rate_hz: u32,
) -> Result<Vec<f64>> {
    check_pairs(geom, spec, pairs)?;
    let phasors = observed_phasors(spec, pairs);
    let mut out = vec![0.0; spec.frames() * spec.bins()];
    feature_from_phasors(
        &phasors,
        geom,
        angle_deg,
        pairs,
        spec.frames(),
        spec.bins(),
        spec.fft_size(),
        sample_rate_hz,
        &mut out,
    );
    Ok(out)
}

/// Angle-feature pool `[direction][frame][bin]` over a uniform azimuth grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AnglePool {
    pub data: Vec<f64>,
    pub angles_deg: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
}

impl AnglePool {
    pub fn directions(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn row(&self, a: usize) -> &[f64] {
        let len = self.frames * self.bins;
        &self.data[a * len..(a + 1) * len]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.directions(), self.frames, self.bins]
    }

    /// Index of the grid direction nearest `angle_deg`.
    pub fn nearest(&self, angle_deg: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &a) in self.angles_deg.iter().enumerate() {
            let d = super::circular_distance_deg(angle_deg, a);
            if d < best_d - 1e-9 {
                best = k;
                best_d = d;
            }
        }
        best
    }
}

pub fn compute_angle_pool(
    spec: &ComplexSpectrogram,
    geom: &ArrayGeometry,
    directions: usize,
    pairs: &[(usize, usize)],
    sample_rate_hz: u32,
) -> Result<AnglePool> {
    check_pairs(geom, spec, pairs)?;
    if directions == 0 {
        return Err(Error::Config("angle pool needs at least one direction".into()));
    }
    let angles = uniform_angles(directions);
    let phasors = observed_phasors(spec, pairs);
    let len = spec.frames() * spec.bins();
    let mut data = vec![0.0; directions * len];
    for (a, chunk) in data.chunks_mut(len).enumerate() {
        feature_from_phasors(
            &phasors,
            geom,
            angles[a],
            pairs,
            spec.frames(),
            spec.bins(),
            spec.fft_size(),
            sample_rate_hz,
            chunk,
        );
    }
    Ok(AnglePool {
        data,
        angles_deg: angles,
        frames: spec.frames(),
        bins: spec.bins(),
    })
}

/// Beam and angle-feature pools for one utterance.
#[derive(Debug, Clone)]
pub struct FeaturePools {
    pub beam_pool: BeamPool,
    pub angle_pool: AnglePool,
}

impl FeaturePools {
    pub fn compute(
        bank: &BeamformerBank,
        spec: &ComplexSpectrogram,
        directions: usize,
        pairs: &[(usize, usize)],
    ) -> Result<Self> {
        Ok(Self {
            beam_pool: compute_beam_pool(bank, spec)?,
            angle_pool: compute_angle_pool(spec, bank.geometry(), directions, pairs, bank.sample_rate_hz())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{array_manifold, DEFAULT_PAIRS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Anechoic far-field spectrogram of white noise arriving from `theta`.
    fn plane_wave(geom: &ArrayGeometry, theta: f64, frames: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src: Vec<C64> = (0..frames * 257)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut data = Vec::new();
        for m in 0..geom.num_mics() {
            for t in 0..frames {
                for k in 0..257 {
                    let d = array_manifold(geom, theta, bin_frequency(k, 512, 16000));
                    data.push(src[t * 257 + k] * d[m]);
                }
            }
        }
        ComplexSpectrogram::new(data, geom.num_mics(), frames, 512, 256).unwrap()
    }

    #[test]
    fn phase_difference_cases() {
        let g = ArrayGeometry::reference();
        assert_eq!(truth_phase_difference(&g, 30.0, (2, 2), 1234.0), 0.0);
        // mics 1 and 2 sit at 60 and 120 degrees: broadside at 90 degrees
        assert!(truth_phase_difference(&g, 90.0, (1, 2), 3000.0).abs() < 1e-12);
        let f = 343.0 / (2.0 * 0.085);
        assert!((truth_phase_difference(&g, 0.0, (0, 3), f).abs() - PI).abs() < 1e-6);
        let a = truth_phase_difference(&g, 47.0, (0, 4), 900.0);
        let b = truth_phase_difference(&g, 47.0, (4, 0), 900.0);
        assert!((a + b).abs() < 1e-15);
    }

    #[test]
    fn feature_is_one_at_true_angle() {
        let g = ArrayGeometry::reference();
        let spec = plane_wave(&g, 130.0, 4, 1);
        let a = angle_feature(&spec, &g, 130.0, &DEFAULT_PAIRS, 16000).unwrap();
        assert!(a.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        let opposite = angle_feature(&spec, &g, 310.0, &DEFAULT_PAIRS, 16000).unwrap();
        let mean: f64 = opposite.iter().sum::<f64>() / opposite.len() as f64;
        assert!(mean < 0.99);
    }

    #[test]
    fn feature_is_minus_one_where_every_pair_is_out_of_phase() {
        // two mics 8.575 cm apart: at 1 kHz (bin 32) the pair delta is pi/2, so looking
        // 180 degrees away leaves a phase error of pi
        let g = ArrayGeometry::new(vec![[0.042875, 0.0, 0.0], [-0.042875, 0.0, 0.0]], 343.0).unwrap();
        let spec = plane_wave(&g, 0.0, 3, 7);
        let a = angle_feature(&spec, &g, 180.0, &[(0, 1)], 16000).unwrap();
        for t in 0..3 {
            assert!((a[t * 257 + 32] + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn feature_matches_naive_loop() {
        let g = ArrayGeometry::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = (0..7 * 3 * 257)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let spec = ComplexSpectrogram::new(data, 7, 3, 512, 256).unwrap();
        let a = angle_feature(&spec, &g, 77.0, &DEFAULT_PAIRS, 16000).unwrap();
        for t in 0..3 {
            for k in 0..257 {
                let f = bin_frequency(k, 512, 16000);
                let mut acc = 0.0;
                for &(i, j) in &DEFAULT_PAIRS {
                    let o = spec.at(i, t, k).arg() - spec.at(j, t, k).arg();
                    acc += (o - truth_phase_difference(&g, 77.0, (i, j), f)).cos();
                }
                assert!((a[t * 257 + k] - acc / 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pool_rows_equal_single_computations_and_argmax_is_true_angle() {
        let g = ArrayGeometry::reference();
        for k in [0usize, 9, 22] {
            let theta = k as f64 * 10.0;
            let spec = plane_wave(&g, theta, 3, k as u64);
            let pool = compute_angle_pool(&spec, &g, 36, &DEFAULT_PAIRS, 16000).unwrap();
            assert_eq!(pool.shape(), [36, 3, 257]);
            let single = angle_feature(&spec, &g, pool.angles_deg[5], &DEFAULT_PAIRS, 16000).unwrap();
            assert!(pool.row(5).iter().zip(&single).all(|(a, b)| (a - b).abs() <= 1e-12));
            let means: Vec<f64> = (0..36)
                .map(|a| pool.row(a).iter().sum::<f64>() / pool.row(a).len() as f64)
                .collect();
            let argmax = (0..36).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
            assert_eq!(argmax, k);
            assert!(pool.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn empty_pairs_rejected() {
        let g = ArrayGeometry::reference();
        let spec = plane_wave(&g, 0.0, 1, 0);
        assert!(angle_feature(&spec, &g, 0.0, &[], 16000).is_err());
        assert!(angle_feature(&spec, &g, 0.0, &[(0, 9)], 16000).is_err());
    }
}
