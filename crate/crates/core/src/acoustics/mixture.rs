//! Reverberant one- or two-talker mixtures with diffuse noise and beamformed oracle targets.

use serde::{Deserialize, Serialize};

use super::noise::generate_isotropic_noise;
use super::rir::{simulate_rir, RirTruncation, RoomSpec};
use super::speech::{frame_activity, VAD_FRAME, VAD_THRESHOLD_DB};
use crate::array::{apply_beamformer, azimuth_deg, ArrayGeometry, BeamformerBank};
use crate::dsp::{fft_convolve, stft, MultiChannelWave, StftConfig, StftPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub num_speakers: usize,
    pub mixing_snr_db: f64,
    pub noise_snr_db: f64,
    pub overlap_ratio: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.num_speakers) {
            return Err(Error::InvalidInput(format!(
                "num_speakers must be 1 or 2, got {}",
                self.num_speakers
            )));
        }
        if !(0.0..=1.0).contains(&self.overlap_ratio) {
            return Err(Error::InvalidInput(format!(
                "overlap ratio {} outside [0, 1]",
                self.overlap_ratio
            )));
        }
        if !self.mixing_snr_db.is_finite() || !self.noise_snr_db.is_finite() {
            return Err(Error::InvalidInput("SNR values must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub manifest_id: String,
    pub mixture: MultiChannelWave,
    /// Scaled reverberant image of each speaker at every microphone.
    pub clean_sources: Vec<MultiChannelWave>,
    pub noise: MultiChannelWave,
    /// Nearest-beam output on each clean image. Always two entries; an absent second
    /// speaker gets an all-zero target.
    pub oracle_targets: Vec<Vec<f64>>,
    pub oracle_angles_deg: Vec<f64>,
    /// Overlap realized after placement, by frame-energy activity.
    pub overlap_ratio: f64,
    /// Sample offset of each dry source inside the mixture.
    pub offsets: Vec<usize>,
    pub mixing_snr_db: f64,
    pub noise_snr_db: f64,
}

/// Frame offsets `(a, b)` placing two activity tracks so their overlap ratio is as close to
/// `target` as possible (restricted to `bounds` when given). Returns the realized ratio too.
pub(crate) fn place_pair(
    act_a: &[bool],
    act_b: &[bool],
    target: f64,
    bounds: Option<(f64, f64)>,
) -> Result<(usize, usize, f64)> {
    let (la, lb) = (act_a.len() as i64, act_b.len() as i64);
    let na = act_a.iter().filter(|&&x| x).count();
    let nb = act_b.iter().filter(|&&x| x).count();
    let mut best: Option<(f64, i64, f64)> = None;
    // o = start of b relative to start of a, in frames
    for o in -lb..=la {
        let lo = o.max(0);
        let hi = la.min(o + lb);
        let mut both = 0usize;
        for t in lo..hi {
            both += (act_a[t as usize] && act_b[(t - o) as usize]) as usize;
        }
        let either = na + nb - both;
        let r = if either == 0 { 0.0 } else { both as f64 / either as f64 };
        if let Some((lo_b, hi_b)) = bounds {
            if r < lo_b || r > hi_b {
                continue;
            }
        }
        let err = (r - target).abs();
        if best.is_none_or(|(e, _, _)| err < e) {
            best = Some((err, o, r));
        }
    }
    match best {
        Some((err, o, r)) if err <= 0.05 => {
            let (a, b) = if o >= 0 { (0, o as usize) } else { ((-o) as usize, 0) };
            Ok((a, b, r))
        }
        _ => Err(Error::InvalidInput(format!(
            "sources ({} and {} frames) are too short to realize overlap ratio {target:.3}",
            la, lb
        ))),
    }
}

fn energy(chs: &[Vec<f64>]) -> f64 {
    chs.iter().flatten().map(|v| v * v).sum()
}

fn scale(chs: &mut [Vec<f64>], g: f64) {
    chs.iter_mut().flatten().for_each(|v| *v *= g);
}

fn check_array(room: &RoomSpec, bank: &BeamformerBank) -> Result<[f64; 3]> {
    let c = room.mic_centroid();
    let geom: &ArrayGeometry = bank.geometry();
    if geom.num_mics() != room.mic_positions_m.len() {
        return Err(Error::Geometry(format!(
            "room has {} microphones, beamformer bank expects {}",
            room.mic_positions_m.len(),
            geom.num_mics()
        )));
    }
    for (p, g) in room.mic_positions_m.iter().zip(&geom.mics) {
        if (0..3).any(|k| (p[k] - c[k] - g[k]).abs() > 1e-6) {
            return Err(Error::Geometry(
                "room microphone positions do not match the beamformer bank geometry".into(),
            ));
        }
    }
    Ok(c)
}

/// Peak-safe common gain applied to every output signal.
const TARGET_RMS: f64 = 0.05;
const PEAK_LIMIT: f64 = 0.95;

pub fn synthesize_mixture(
    spec: &MixtureSpec,
    source_waves: &[Vec<f64>],
    room: &RoomSpec,
    bank: &BeamformerBank,
    manifest_id: &str,
) -> Result<MixtureExample> {
    synthesize_mixture_within(spec, source_waves, room, bank, manifest_id, None)
}

pub(crate) fn synthesize_mixture_within(
    spec: &MixtureSpec,
    source_waves: &[Vec<f64>],
    room: &RoomSpec,
    bank: &BeamformerBank,
    manifest_id: &str,
    overlap_bounds: Option<(f64, f64)>,
) -> Result<MixtureExample> {
    spec.validate()?;
    room.validate()?;
    let k = spec.num_speakers;
    if source_waves.len() < k || room.source_positions_m.len() < k {
        return Err(Error::InvalidInput(format!(
            "{k} speakers need {k} source waves and positions, got {} and {}",
            source_waves.len(),
            room.source_positions_m.len()
        )));
    }
    if source_waves[..k].iter().any(|w| w.is_empty()) {
        return Err(Error::InvalidInput("empty source wave".into()));
    }
    let centroid = check_array(room, bank)?;
    let sr = bank.sample_rate_hz();

    let (offsets, realized) = if k == 2 {
        let a = frame_activity(&source_waves[0], VAD_THRESHOLD_DB);
        let b = frame_activity(&source_waves[1], VAD_THRESHOLD_DB);
        let (oa, ob, r) = place_pair(&a, &b, spec.overlap_ratio, overlap_bounds)?;
        (vec![oa * VAD_FRAME, ob * VAD_FRAME], r)
    } else {
        (vec![0], 0.0)
    };
    let len = (0..k).map(|i| offsets[i] + source_waves[i].len()).max().unwrap();

    let used_room = RoomSpec {
        source_positions_m: room.source_positions_m[..k].to_vec(),
        ..room.clone()
    };
    let rirs = simulate_rir(&used_room, RirTruncation::TailEnergy, sr)?;
    let mut images: Vec<Vec<Vec<f64>>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut placed = vec![0.0; len];
        placed[offsets[i]..offsets[i] + source_waves[i].len()].copy_from_slice(&source_waves[i]);
        let chans = rirs[i]
            .iter()
            .map(|h| {
                let mut y = fft_convolve(&placed, h);
                y.truncate(len);
                y
            })
            .collect();
        images.push(chans);
    }

    let energies: Vec<f64> = images.iter().map(|im| energy(im)).collect();
    if energies.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidInput("a source image has zero energy".into()));
    }
    if k == 2 {
        let reference = (energies[0] * energies[1]).sqrt();
        let half = 10f64.powf(spec.mixing_snr_db / 40.0);
        scale(&mut images[0], (reference / energies[0]).sqrt() * half);
        scale(&mut images[1], (reference / energies[1]).sqrt() / half);
    }

    let m = room.mic_positions_m.len();
    let mut speech = vec![vec![0.0; len]; m];
    for im in &images {
        for (s, c) in speech.iter_mut().zip(im) {
            for (a, b) in s.iter_mut().zip(c) {
                *a += b;
            }
        }
    }
    let mut noise = generate_isotropic_noise(len, bank.geometry(), sr, spec.seed)?.into_data();
    let (es, en) = (energy(&speech), energy(&noise));
    scale(&mut noise, (es / en / 10f64.powf(spec.noise_snr_db / 10.0)).sqrt());
    let mut mixture: Vec<Vec<f64>> = speech
        .iter()
        .zip(&noise)
        .map(|(s, n)| s.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();

    let rms = (energy(&mixture) / (m * len) as f64).sqrt();
    let peak = mixture.iter().flatten().fold(0.0f64, |p, v| p.max(v.abs()));
    let g = (TARGET_RMS / rms).min(PEAK_LIMIT / peak);
    scale(&mut mixture, g);
    scale(&mut noise, g);
    for im in images.iter_mut() {
        scale(im, g);
    }

    let angles: Vec<f64> = (0..k).map(|i| azimuth_deg(centroid, room.source_positions_m[i])).collect();
    let cfg = StftConfig {
        fft_size: bank.fft_size(),
        hop: bank.fft_size() / 2,
        ..StftConfig::default()
    };
    let plan = StftPlan::new(cfg)?;
    let mut targets = Vec::with_capacity(2);
    let mut clean = Vec::with_capacity(k);
    for (i, im) in images.into_iter().enumerate() {
        let wave = MultiChannelWave::new(im, sr)?;
        let s = stft(&wave, &cfg)?;
        let beam = bank.nearest_beam(angles[i]);
        let y = apply_beamformer(bank.filters(beam), &s)?;
        targets.push(plan.synthesize(&y, s.frames(), len));
        clean.push(wave);
    }
    if k == 1 {
        targets.push(vec![0.0; len]);
    }

    Ok(MixtureExample {
        manifest_id: manifest_id.to_string(),
        mixture: MultiChannelWave::new(mixture, sr)?,
        clean_sources: clean,
        noise: MultiChannelWave::new(noise, sr)?,
        oracle_targets: targets,
        oracle_angles_deg: angles,
        overlap_ratio: realized,
        offsets,
        mixing_snr_db: spec.mixing_snr_db,
        noise_snr_db: spec.noise_snr_db,
    })
}

/// Microphone positions of `geom` placed with its centroid at `center`.
pub fn place_array(geom: &ArrayGeometry, center: [f64; 3]) -> Vec<[f64; 3]> {
    geom.mics
        .iter()
        .map(|p| [p[0] + center[0], p[1] + center[1], p[2] + center[2]])
        .collect()
}
