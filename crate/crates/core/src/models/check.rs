use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Averaging, Mode, Model, ModelConfig};
use crate::autodiff::gradcheck::{check_params, GradCheckReport, DEFAULT_EPS};
use crate::dsp::{MultiChannelWave, StftConfig};
use crate::error::Result;

/// Small E2E configuration used for finite-difference checks of the assembled graph.
pub fn gradcheck_config(seed: u64) -> ModelConfig {
    ModelConfig {
        mode: Mode::E2e,
        hidden: 4,
        layers: 1,
        dropout: 0.0,
        embedding_dim: 6,
        projection_dim: 3,
        num_beams: 6,
        num_angles: 12,
        stft: StftConfig {
            fft_size: 64,
            hop: 32,
            ..Default::default()
        },
        seed,
        ..ModelConfig::default()
    }
}

/// Checks `coords` random parameter coordinates of the full E2E loss (pre-separation,
/// attention over both pools, extraction, synthesis and PIT) on 0.5 s of random 7-channel
/// audio.
pub fn e2e_gradient_check(seed: u64, coords: usize) -> Result<GradCheckReport> {
    let m = Model::new(gradcheck_config(seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe2e);
    let data: Vec<Vec<f64>> = (0..m.bank().mics())
        .map(|_| (0..8000).map(|_| rng.random_range(-0.1..0.1)).collect())
        .collect();
    let w = MultiChannelWave::new(data, m.config.sample_rate_hz())?;
    let prep = m.prepare(&w)?;
    let targets = [w.channel(0).to_vec(), w.channel(3).to_vec()];
    let refs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
    check_params(
        &m.store,
        |g| Ok(m.e2e_loss(g, &prep, &refs, Averaging::Offline)?.0),
        Some(coords),
        DEFAULT_EPS,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assembled_e2e_graph_passes_for_several_seeds() {
        for seed in [3, 7] {
            let r = e2e_gradient_check(seed, 60).unwrap();
            assert_eq!(r.checked, 60);
            assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
            assert!(r.floored * 2 < r.checked, "seed {seed}: {r:?}");
        }
    }
}
