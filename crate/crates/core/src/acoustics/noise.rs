//! Spherically isotropic noise from a dense set of uncorrelated plane waves.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::array::ArrayGeometry;
use crate::dsp::{fft_pair, MultiChannelWave, C64};
use crate::error::{Error, Result};

pub const NOISE_DIRECTIONS: usize = 64;

/// Quasi-uniform unit vectors on the sphere (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let mut q = [0.0f64; 4];
    for v in q.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

const SEGMENT: usize = 8192;

/// One segment of `n` samples per microphone: every direction carries independent white
/// noise, delayed per microphone in the frequency domain.
fn segment(geom: &ArrayGeometry, dirs: &[[f64; 3]], n: usize, sample_rate_hz: u32, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let half = n / 2;
    let (fwd, inv) = fft_pair(n);
    let m = geom.num_mics();
    let mut acc = vec![vec![C64::new(0.0, 0.0); half + 1]; m];
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let df = sample_rate_hz as f64 / n as f64;
    for u in dirs {
        for z in buf.iter_mut() {
            *z = C64::new(StandardNormal.sample(rng), 0.0);
        }
        fwd.process(&mut buf);
        for (mic, p) in geom.mics.iter().enumerate() {
            let tau = -(p[0] * u[0] + p[1] * u[1] + p[2] * u[2]) / geom.speed_of_sound;
            let step = C64::from_polar(1.0, -2.0 * PI * df * tau);
            let mut rot = C64::new(1.0, 0.0);
            for (k, a) in acc[mic].iter_mut().enumerate() {
                *a += buf[k] * rot;
                rot *= step;
                if k % 64 == 63 {
                    rot = C64::from_polar(1.0, -2.0 * PI * df * tau * (k + 1) as f64);
                }
            }
        }
    }
    let scale = 1.0 / (n as f64 * (dirs.len() as f64).sqrt());
    acc.iter()
        .map(|spec| {
            buf[..=half].copy_from_slice(spec);
            buf[0].im = 0.0;
            buf[half].im = 0.0;
            for k in 1..half {
                buf[n - k] = spec[k].conj();
            }
            inv.process(&mut buf);
            buf.iter().map(|z| z.re * scale).collect()
        })
        .collect()
}

/// `num_samples` of diffuse noise at the microphones of `geom`, unit variance per channel.
///
/// The signal is an overlap-add of half-overlapping sine-windowed segments. Each segment
/// uses the 64-point direction set under a fresh random rotation, so time averages see
/// many independent direction sets.
pub fn generate_isotropic_noise(
    num_samples: usize,
    geom: &ArrayGeometry,
    sample_rate_hz: u32,
    seed: u64,
) -> Result<MultiChannelWave> {
    if num_samples == 0 {
        return Err(Error::InvalidInput("noise duration must be > 0".into()));
    }
    let base = fibonacci_sphere(NOISE_DIRECTIONS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = SEGMENT;
    let hop = n / 2;
    let window: Vec<f64> = (0..n).map(|i| (PI * (i as f64 + 0.5) / n as f64).sin()).collect();
    let m = geom.num_mics();
    let mut out = vec![vec![0.0; num_samples]; m];
    let segments = num_samples.div_ceil(hop) + 1;
    for s in 0..segments {
        let r = random_rotation(&mut rng);
        let dirs: Vec<[f64; 3]> = base
            .iter()
            .map(|u| {
                [
                    r[0][0] * u[0] + r[0][1] * u[1] + r[0][2] * u[2],
                    r[1][0] * u[0] + r[1][1] * u[1] + r[1][2] * u[2],
                    r[2][0] * u[0] + r[2][1] * u[1] + r[2][2] * u[2],
                ]
            })
            .collect();
        let seg = segment(geom, &dirs, n, sample_rate_hz, &mut rng);
        let start = s as i64 * hop as i64 - hop as i64;
        for (ch, x) in out.iter_mut().zip(&seg) {
            for i in 0..n {
                let t = start + i as i64;
                if t >= 0 && (t as usize) < num_samples {
                    ch[t as usize] += window[i] * x[i];
                }
            }
        }
    }
    MultiChannelWave::new(out, sample_rate_hz)
}
