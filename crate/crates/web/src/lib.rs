//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The computations live in plain functions so they can be tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors into JS exceptions.

use ufe_core::acoustics::speech::{synthesize_utterance, Voice};
use ufe_core::acoustics::{place_array, simulate_rir, RirTruncation, RoomSpec};
use ufe_core::array::{
    angle_feature, bin_frequency, circular_distance_deg, design_beamformer_bank, uniform_angles, ArrayGeometry,
    BeamformerDesign, SteeringTable, DEFAULT_PAIRS,
};
use ufe_core::dsp::{fft_convolve, stft, MultiChannelWave, StftConfig};
use ufe_core::ssl::{localize_sources, DEFAULT_EPSILON};
use wasm_bindgen::prelude::*;

const SR: u32 = 16_000;
const FFT: usize = 512;
const ROOM: [f64; 3] = [6.0, 5.0, 3.0];
const CENTER: [f64; 3] = [3.0, 2.5, 1.2];
const SOURCE_DISTANCE_M: f64 = 1.5;

/// Magnitude response in dB of one beam at the bin nearest `freq_hz`, sampled every
/// degree from 0 to 359. The first value past the pattern is the white-noise gain in dB.
pub fn beam_pattern_db(design: &str, beam: usize, num_beams: usize, freq_hz: f64, loading: f64) -> Result<Vec<f64>, String> {
    let design: BeamformerDesign = design.parse().map_err(|e| format!("{e}"))?;
    if beam >= num_beams {
        return Err(format!("beam {beam} out of range for {num_beams} beams"));
    }
    let bank = design_beamformer_bank(&ArrayGeometry::reference(), num_beams, design, loading, FFT, SR)
        .map_err(|e| e.to_string())?;
    let bin = ((freq_hz / SR as f64 * FFT as f64).round() as usize).min(FFT / 2);
    let mut out: Vec<f64> = (0..360)
        .map(|a| 20.0 * bank.response(beam, bin, a as f64).norm().max(1e-6).log10())
        .collect();
    let w = bank.filter(beam, bin);
    let center = bank.center_angles_deg()[beam];
    let gain = bank.response(beam, bin, center).norm_sqr() / w.iter().map(|z| z.norm_sqr()).sum::<f64>();
    out.push(10.0 * gain.log10());
    Ok(out)
}

/// Simulated capture and localization of one or two talkers.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Estimated azimuth per talker, degrees.
    pub estimates: Vec<f64>,
    /// Mask-weighted SSL objective per talker over 36 angles, each scaled to [0, 1].
    pub curves: Vec<f64>,
    /// Mean angle feature of the mixture on active bins for each of the 36 angles.
    pub features: Vec<f64>,
    /// Channel-0 log-magnitude spectrogram `[frame][bin]` in dB.
    pub spectrogram: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
}

fn talker(angle_deg: f64, t60: f64, seed: u64, len: usize) -> Result<Vec<Vec<f64>>, String> {
    let geom = ArrayGeometry::reference();
    let a = angle_deg.to_radians();
    let src = [
        CENTER[0] + SOURCE_DISTANCE_M * a.cos(),
        CENTER[1] + SOURCE_DISTANCE_M * a.sin(),
        CENTER[2],
    ];
    let room = RoomSpec {
        dims_m: ROOM,
        t60_s: t60,
        source_positions_m: vec![src],
        mic_positions_m: place_array(&geom, CENTER),
    };
    let rir = simulate_rir(&room, RirTruncation::TailEnergy, SR).map_err(|e| e.to_string())?;
    let pad = SR as usize / 4;
    let mut dry = vec![0.0; pad];
    dry.extend(synthesize_utterance(&Voice::from_seed(seed), len - 2 * pad, SR, seed));
    dry.resize(len, 0.0);
    Ok(rir[0].iter().map(|h| fft_convolve(&dry, h)[..len].to_vec()).collect())
}

/// Simulates talkers at `angles_deg` (one or two) in a 6 x 5 x 3 m room and localizes each
/// with an ideal ratio mask; a single talker uses a unit mask.
pub fn simulate_scene(angles_deg: &[f64], t60: f64, seed: u64) -> Result<Scene, String> {
    if angles_deg.is_empty() || angles_deg.len() > 2 {
        return Err("give one or two talker angles".into());
    }
    if !(0.0..=1.0).contains(&t60) {
        return Err(format!("T60 {t60} s outside [0, 1]"));
    }
    let len = SR as usize * 3 / 2;
    let cfg = StftConfig::default();
    let images = angles_deg
        .iter()
        .enumerate()
        .map(|(i, &a)| talker(a, t60, seed.wrapping_add(i as u64 * 7919), len))
        .collect::<Result<Vec<_>, _>>()?;
    let mut mix = vec![vec![0.0; len]; images[0].len()];
    for img in &images {
        for (m, ch) in mix.iter_mut().zip(img) {
            m.iter_mut().zip(ch).for_each(|(a, b)| *a += b);
        }
    }
    let spec = stft(&MultiChannelWave::new(mix, SR).map_err(|e| e.to_string())?, &cfg).map_err(|e| e.to_string())?;
    let (frames, bins) = (spec.frames(), spec.bins());

    let masks: Vec<Vec<f64>> = if images.len() == 1 {
        vec![vec![1.0; frames * bins]]
    } else {
        let powers: Vec<Vec<f64>> = images
            .iter()
            .map(|img| {
                let w = MultiChannelWave::mono(img[0].clone(), SR).map_err(|e| e.to_string())?;
                let s = stft(&w, &cfg).map_err(|e| e.to_string())?;
                Ok(s.channel(0).iter().map(|z| z.norm_sqr()).collect())
            })
            .collect::<Result<_, String>>()?;
        (0..2)
            .map(|k| {
                powers[k]
                    .iter()
                    .zip(&powers[1 - k])
                    .map(|(a, b)| if a + b > 0.0 { a / (a + b) } else { 0.0 })
                    .collect()
            })
            .collect()
    };

    let geom = ArrayGeometry::reference();
    let grid = uniform_angles(36);
    let table = SteeringTable::new(&geom, &grid, FFT, SR);
    let ssl = localize_sources(&masks, &spec, &table, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let mut curves = Vec::with_capacity(36 * masks.len());
    for c in &ssl.objective_curves {
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        curves.extend(c.iter().map(|v| (v - lo) / span));
    }

    let power: Vec<f64> = spec.channel(0).iter().map(|z| z.norm_sqr()).collect();
    let peak = power.iter().cloned().fold(0.0, f64::max);
    let active: Vec<bool> = power.iter().enumerate().map(|(i, &p)| i % bins != 0 && p > 1e-3 * peak).collect();
    let n_active = active.iter().filter(|&&a| a).count().max(1) as f64;
    let features = grid
        .iter()
        .map(|&a| {
            let f = angle_feature(&spec, &geom, a, &DEFAULT_PAIRS, SR).map_err(|e| e.to_string())?;
            Ok(f.iter().zip(&active).filter(|(_, &on)| on).map(|(v, _)| v).sum::<f64>() / n_active)
        })
        .collect::<Result<Vec<f64>, String>>()?;

    let spectrogram = power.iter().map(|p| 10.0 * (p / peak.max(1e-300)).max(1e-10).log10()).collect();
    Ok(Scene {
        estimates: ssl.angles_deg,
        curves,
        features,
        spectrogram,
        frames,
        bins,
    })
}

/// Worst circular error of `estimates` against `truth` under the better talker order.
pub fn localization_error(estimates: &[f64], truth: &[f64]) -> f64 {
    let err = |perm: &[usize]| {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| circular_distance_deg(estimates[i], truth[j]))
            .fold(0.0, f64::max)
    };
    match truth.len() {
        2 => err(&[0, 1]).min(err(&[1, 0])),
        _ => err(&[0]),
    }
}

/// Centre frequency in Hz of the STFT bin nearest `freq_hz`.
#[wasm_bindgen(js_name = binFrequency)]
pub fn bin_frequency_js(freq_hz: f64) -> f64 {
    let bin = ((freq_hz / SR as f64 * FFT as f64).round() as usize).min(FFT / 2);
    bin_frequency(bin, FFT, SR)
}

#[wasm_bindgen(js_name = beamPattern)]
pub fn beam_pattern_js(design: &str, beam: usize, num_beams: usize, freq_hz: f64, loading: f64) -> Result<Vec<f64>, JsError> {
    beam_pattern_db(design, beam, num_beams, freq_hz, loading).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = SceneResult)]
pub struct SceneJs(Scene);

#[wasm_bindgen(js_class = SceneResult)]
impl SceneJs {
    #[wasm_bindgen(getter)]
    pub fn estimates(&self) -> Vec<f64> {
        self.0.estimates.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn curves(&self) -> Vec<f64> {
        self.0.curves.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn features(&self) -> Vec<f64> {
        self.0.features.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn spectrogram(&self) -> Vec<f64> {
        self.0.spectrogram.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.0.frames
    }
    #[wasm_bindgen(getter)]
    pub fn bins(&self) -> usize {
        self.0.bins
    }
}

#[wasm_bindgen(js_name = simulateScene)]
pub fn simulate_scene_js(angles_deg: Vec<f64>, t60: f64, seed: u32) -> Result<SceneJs, JsError> {
    simulate_scene(&angles_deg, t60, seed as u64).map(SceneJs).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beam_pattern_is_unity_at_its_centre() {
        for design in ["superdirective", "delay_and_sum"] {
            let p = beam_pattern_db(design, 4, 18, 1000.0, 1e-2).unwrap();
            assert_eq!(p.len(), 361);
            assert!(p[80].abs() < 1e-9, "{design}: {}", p[80]);
        }
        let das = beam_pattern_db("delay_and_sum", 0, 18, 2000.0, 0.0).unwrap();
        assert!((das[360] - 10.0 * 7f64.log10()).abs() < 1e-9);
        assert!(beam_pattern_db("delay_and_sum", 18, 18, 1000.0, 0.0).is_err());
        assert!(beam_pattern_db("mvdr", 0, 18, 1000.0, 0.0).is_err());
    }

    #[test]
    fn single_talker_is_found_and_features_peak_there() {
        let s = simulate_scene(&[120.0], 0.0, 3).unwrap();
        assert_eq!(s.estimates, vec![120.0]);
        assert_eq!(s.curves.len(), 36);
        assert!((s.curves[12] - 1.0).abs() < 1e-12);
        let best = (0..36).max_by(|&a, &b| s.features[a].total_cmp(&s.features[b])).unwrap();
        assert_eq!(best, 12);
        assert_eq!(s.spectrogram.len(), s.frames * s.bins);
    }

    #[test]
    fn two_talkers_with_ratio_masks() {
        let s = simulate_scene(&[40.0, 250.0], 0.2, 5).unwrap();
        assert_eq!(s.curves.len(), 72);
        assert!(localization_error(&s.estimates, &[40.0, 250.0]) <= 10.0, "{:?}", s.estimates);
    }

    #[test]
    fn bad_scenes_are_rejected() {
        assert!(simulate_scene(&[], 0.0, 0).is_err());
        assert!(simulate_scene(&[0.0, 1.0, 2.0], 0.0, 0).is_err());
        assert!(simulate_scene(&[0.0], 2.0, 0).is_err());
    }

    #[test]
    fn bin_frequency_snaps_to_the_grid() {
        assert_eq!(bin_frequency_js(1000.0), 1000.0);
        assert_eq!(bin_frequency_js(1010.0), 1000.0);
        assert_eq!(bin_frequency_js(20_000.0), 8000.0);
    }
}
