//! Mask-weighted maximum-likelihood source localization over a discrete azimuth grid, and
//! hard beam selection for the modular pipeline.

use crate::array::{BeamformerBank, SteeringTable};
use crate::dsp::{ComplexSpectrogram, C64};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SslResult {
    pub angle_indices: Vec<usize>,
    pub angles_deg: Vec<f64>,
    /// One objective value per grid angle, per source.
    pub objective_curves: Vec<Vec<f64>>,
    /// 0 for a degenerate (all-zero) mask, otherwise the normalized peak prominence in (0, 1].
    pub confidence: Vec<f64>,
}

impl SslResult {
    pub fn num_sources(&self) -> usize {
        self.angles_deg.len()
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("SSL flooring epsilon must be > 0, got {eps}")));
    }
    Ok(())
}

/// Per-bin observation vectors scaled to unit norm, `[frame][bin][mic]`; zero bins stay zero.
fn normalized_observations(spec: &ComplexSpectrogram) -> Vec<C64> {
    let (m, t_len, bins) = (spec.channels(), spec.frames(), spec.bins());
    let mut out = vec![C64::new(0.0, 0.0); t_len * bins * m];
    for t in 0..t_len {
        for f in 0..bins {
            let base = (t * bins + f) * m;
            let mut norm = 0.0;
            for c in 0..m {
                let y = spec.at(c, t, f);
                out[base + c] = y;
                norm += y.norm_sqr();
            }
            let norm = norm.sqrt();
            if norm > 0.0 {
                out[base..base + m].iter_mut().for_each(|z| *z /= norm);
            }
        }
    }
    out
}

/// `|y^H h|^2` for every frame and bin at one grid angle.
fn alignment(obs: &[C64], table: &SteeringTable, angle_index: usize, frames: usize) -> Vec<f64> {
    let (bins, m) = (table.bins(), table.mics());
    let mut out = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        for f in 0..bins {
            let h = table.vector(angle_index, f);
            let y = &obs[(t * bins + f) * m..(t * bins + f + 1) * m];
            let dot: C64 = y.iter().zip(h).map(|(y, h)| y.conj() * h).sum();
            out.push(dot.norm_sqr());
        }
    }
    out
}

fn objective_from_alignment(mask: &[f64], align: &[f64], eps: f64) -> f64 {
    -mask
        .iter()
        .zip(align)
        .map(|(&w, &a)| if w == 0.0 { 0.0 } else { w * (1.0 - a / (1.0 + eps)).ln() })
        .sum::<f64>()
}

fn check_shapes(mask: &[f64], spec: &ComplexSpectrogram, table: &SteeringTable) -> Result<()> {
    if mask.len() != spec.frames() * spec.bins() {
        return Err(Error::shape("ssl mask", &[mask.len()], &[spec.frames(), spec.bins()]));
    }
    if table.mics() != spec.channels() || table.bins() != spec.bins() {
        return Err(Error::shape(
            "ssl steering table",
            &[table.mics(), table.bins()],
            &[spec.channels(), spec.bins()],
        ));
    }
    Ok(())
}

/// Mask-weighted log-likelihood of one grid angle for one source mask (`[frame][bin]`).
pub fn ssl_objective(
    mask: &[f64],
    spec: &ComplexSpectrogram,
    table: &SteeringTable,
    angle_index: usize,
    epsilon: f64,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_shapes(mask, spec, table)?;
    let obs = normalized_observations(spec);
    let align = alignment(&obs, table, angle_index, spec.frames());
    Ok(objective_from_alignment(mask, &align, epsilon))
}

/// Grid-argmax localization for each mask in `masks` (each `[frame][bin]`).
pub fn localize_sources(
    masks: &[Vec<f64>],
    spec: &ComplexSpectrogram,
    table: &SteeringTable,
    epsilon: f64,
) -> Result<SslResult> {
    check_epsilon(epsilon)?;
    for mask in masks {
        check_shapes(mask, spec, table)?;
    }
    let obs = normalized_observations(spec);
    let n_angles = table.angles_deg().len();
    let mut curves = vec![vec![0.0; n_angles]; masks.len()];
    for a in 0..n_angles {
        let align = alignment(&obs, table, a, spec.frames());
        for (h, mask) in masks.iter().enumerate() {
            curves[h][a] = objective_from_alignment(mask, &align, epsilon);
        }
    }
    let mut result = SslResult {
        angle_indices: Vec::new(),
        angles_deg: Vec::new(),
        objective_curves: Vec::new(),
        confidence: Vec::new(),
    };
    for (mask, curve) in masks.iter().zip(curves) {
        let mut best = 0;
        for (a, &v) in curve.iter().enumerate() {
            if v > curve[best] {
                best = a;
            }
        }
        let degenerate = mask.iter().all(|&w| w == 0.0);
        let confidence = if degenerate {
            0.0
        } else {
            let mean = curve.iter().sum::<f64>() / curve.len() as f64;
            let peak = curve[best];
            if peak > 0.0 {
                ((peak - mean) / peak).clamp(0.0, 1.0)
            } else {
                0.0
            }
        };
        result.angle_indices.push(best);
        result.angles_deg.push(table.angles_deg()[best]);
        result.confidence.push(confidence);
        result.objective_curves.push(curve);
    }
    Ok(result)
}

/// Nearest bank beam (circular distance) for each localized source; ties go to the smaller
/// beam index.
pub fn select_beams(result: &SslResult, bank: &BeamformerBank) -> Vec<usize> {
    result
        .angles_deg
        .iter()
        .map(|&theta| bank.nearest_beam(theta))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{
        array_manifold, bin_frequency, design_beamformer_bank, uniform_angles, ArrayGeometry,
        BeamformerDesign,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn source_spectrum(frames: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..frames * 257)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn mix(geom: &ArrayGeometry, sources: &[(f64, &[C64])], frames: usize) -> ComplexSpectrogram {
        let mut data = vec![C64::new(0.0, 0.0); 7 * frames * 257];
        for &(theta, src) in sources {
            for k in 0..257 {
                let d = array_manifold(geom, theta, bin_frequency(k, 512, 16000));
                for m in 0..7 {
                    for t in 0..frames {
                        data[(m * frames + t) * 257 + k] += src[t * 257 + k] * d[m];
                    }
                }
            }
        }
        ComplexSpectrogram::new(data, 7, frames, 512, 256).unwrap()
    }

    fn table() -> SteeringTable {
        SteeringTable::new(&ArrayGeometry::reference(), &uniform_angles(36), 512, 16000)
    }

    #[test]
    fn zero_mask_gives_zero_objective() {
        let g = ArrayGeometry::reference();
        let s = source_spectrum(4, 1);
        let spec = mix(&g, &[(40.0, &s)], 4);
        let v = ssl_objective(&vec![0.0; 4 * 257], &spec, &table(), 3, 1e-6).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn orthogonal_observation_contributes_nothing() {
        // a zero spectrogram normalizes to zero vectors, so |y^H h|^2 = 0 in every bin and
        // every term is -w * ln(1) = 0
        let spec = ComplexSpectrogram::zeros(7, 3, 512, 256);
        let v = ssl_objective(&vec![1.0; 3 * 257], &spec, &table(), 0, 1e-6).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn single_plane_wave_peaks_at_true_angle() {
        let g = ArrayGeometry::reference();
        let t = table();
        for k in [0usize, 7, 19, 35] {
            let s = source_spectrum(3, k as u64);
            let spec = mix(&g, &[(k as f64 * 10.0, &s)], 3);
            let r = localize_sources(&[vec![1.0; 3 * 257]], &spec, &t, DEFAULT_EPSILON).unwrap();
            assert_eq!(r.angle_indices, vec![k]);
            assert!(r.confidence[0] > 0.0);
        }
    }

    #[test]
    fn two_sources_with_oracle_masks() {
        let g = ArrayGeometry::reference();
        let frames = 6;
        let s1 = source_spectrum(frames, 1);
        let s2 = source_spectrum(frames, 2);
        let spec = mix(&g, &[(40.0, &s1), (220.0, &s2)], frames);
        let m1: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| (a.norm() > b.norm()) as u8 as f64).collect();
        let m2: Vec<f64> = m1.iter().map(|v| 1.0 - v).collect();
        let t = table();
        let r = localize_sources(&[m1.clone(), m2.clone()], &spec, &t, DEFAULT_EPSILON).unwrap();
        assert_eq!(r.angles_deg, vec![40.0, 220.0]);
        let swapped = localize_sources(&[m2, m1.clone()], &spec, &t, DEFAULT_EPSILON).unwrap();
        assert_eq!(swapped.angles_deg, vec![220.0, 40.0]);
        // scaling a mask scales its curve and keeps the argmax
        let scaled: Vec<f64> = m1.iter().map(|v| v * 3.0).collect();
        let rs = localize_sources(&[scaled], &spec, &t, DEFAULT_EPSILON).unwrap();
        assert_eq!(rs.angle_indices[0], r.angle_indices[0]);
        for (a, b) in rs.objective_curves[0].iter().zip(&r.objective_curves[0]) {
            assert!((a - 3.0 * b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn degenerate_mask_is_flagged() {
        let g = ArrayGeometry::reference();
        let s = source_spectrum(2, 3);
        let spec = mix(&g, &[(90.0, &s)], 2);
        let r = localize_sources(&[vec![0.0; 2 * 257]], &spec, &table(), DEFAULT_EPSILON).unwrap();
        assert_eq!(r.num_sources(), 1);
        assert_eq!(r.confidence[0], 0.0);
        assert_eq!(r.angle_indices[0], 0);
    }

    #[test]
    fn objective_grows_with_alignment() {
        let mask = [1.0, 1.0];
        let lo = objective_from_alignment(&mask, &[0.1, 0.2], 1e-6);
        let hi = objective_from_alignment(&mask, &[0.1, 0.9], 1e-6);
        assert!(hi > lo && lo > 0.0);
    }

    #[test]
    fn bad_epsilon_is_config_error() {
        let spec = ComplexSpectrogram::zeros(7, 1, 512, 256);
        assert!(matches!(
            ssl_objective(&vec![1.0; 257], &spec, &table(), 0, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn beam_selection_rules() {
        let g = ArrayGeometry::reference();
        let bank = design_beamformer_bank(&g, 18, BeamformerDesign::DelayAndSum, 0.0, 64, 16000).unwrap();
        let result = SslResult {
            angle_indices: vec![0, 0, 0],
            angles_deg: vec![20.0, 10.0, 355.0],
            objective_curves: vec![],
            confidence: vec![],
        };
        assert_eq!(select_beams(&result, &bank), vec![1, 0, 0]);
    }
}
