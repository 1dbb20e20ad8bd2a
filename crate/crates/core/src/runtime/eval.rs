use serde::{Deserialize, Serialize};

use super::score::{ScoreReport, UtteranceScore};
use crate::acoustics::Manifest;
use crate::autodiff::permutations;
use crate::dsp::MultiChannelWave;
use crate::error::{Error, Result};
use crate::models::{Averaging, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub block_s: f64,
    pub history_s: f64,
    pub hop_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Offline,
            block_s: 2.0,
            history_s: 2.0,
            hop_s: 2.0,
        }
    }
}

impl EvalConfig {
    pub fn online(history_s: f64) -> Self {
        Self {
            mode: EvalMode::Online,
            history_s,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.block_s > 0.0 && self.hop_s > 0.0 && self.hop_s <= self.block_s) {
            return Err(Error::Config(format!(
                "need 0 < hop_s <= block_s, got hop {} and block {}",
                self.hop_s, self.block_s
            )));
        }
        if !(self.history_s >= 0.0) {
            return Err(Error::Config(format!("history_s {} must be non-negative", self.history_s)));
        }
        Ok(())
    }

    /// Block, hop and history lengths in samples.
    pub fn samples(&self, sample_rate_hz: u32) -> (usize, usize, usize) {
        let n = |s: f64| (s * sample_rate_hz as f64).round() as usize;
        (n(self.block_s).max(1), n(self.hop_s).max(1), n(self.history_s))
    }
}

/// Where a processed chunk sits inside its utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub record: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkOutput {
    pub waves: Vec<Vec<f64>>,
    /// Selected or most-attended beam per output, when the separator has one.
    pub beams: Vec<usize>,
}

/// Anything that maps a multi-channel chunk to separated mono waves of the same length.
pub trait Separator: Sync {
    fn separate_chunk(&self, chunk: &MultiChannelWave, span: Span) -> Result<ChunkOutput>;
}

impl Separator for Model {
    fn separate_chunk(&self, chunk: &MultiChannelWave, _span: Span) -> Result<ChunkOutput> {
        let s = self.separate(chunk, Averaging::Offline)?;
        Ok(ChunkOutput {
            waves: s.waves,
            beams: s.beams,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockInfo {
    /// Input span `[chunk_start, end)` fed to the separator.
    pub chunk_start: usize,
    /// Emitted samples `[emit_start, end)`.
    pub emit_start: usize,
    pub end: usize,
    /// Separator output index placed in each stitched output stream.
    pub order: Vec<usize>,
    /// Beam of each stitched stream in this block, when reported.
    pub beams: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineOutput {
    pub waves: Vec<Vec<f64>>,
    pub blocks: Vec<BlockInfo>,
}

fn normalized_dot(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    let d = (aa * bb).sqrt();
    if d > 0.0 {
        ab / d
    } else {
        0.0
    }
}

/// Output order for the current block that best matches the previous block over their
/// shared samples: `order[k]` is the current output placed in stream `k`. Ties keep the
/// identity.
pub fn align_to_previous(prev: &[&[f64]], cur: &[&[f64]]) -> Vec<usize> {
    let n = cur.len();
    let mut best = (0..n).collect::<Vec<_>>();
    if prev.len() != n || prev.first().is_none_or(|p| p.is_empty()) {
        return best;
    }
    let mut best_score = f64::NEG_INFINITY;
    for p in permutations(n) {
        let s: f64 = p.iter().enumerate().map(|(k, &i)| normalized_dot(prev[k], cur[i])).sum();
        if s > best_score {
            best_score = s;
            best = p;
        }
    }
    best
}

/// Block-online processing with double buffering. Each block feeds `[history + block]` of
/// audio to the separator, emits only the samples not yet emitted, and reorders its outputs
/// to follow the previous block.
pub fn run_online(sep: &dyn Separator, wave: &MultiChannelWave, record: usize, cfg: &EvalConfig) -> Result<OnlineOutput> {
    cfg.validate()?;
    let (block, hop, hist) = cfg.samples(wave.sample_rate_hz());
    let len = wave.len();
    if len == 0 {
        return Err(Error::InvalidInput("empty utterance".into()));
    }
    let mut waves: Vec<Vec<f64>> = Vec::new();
    let mut blocks = Vec::new();
    let mut prev: Option<(usize, usize, Vec<Vec<f64>>)> = None;
    let mut emitted = 0;
    let mut start = 0;
    loop {
        let end = (start + block).min(len);
        let cs = start.saturating_sub(hist);
        let out = sep.separate_chunk(&wave.slice(cs, end), Span { record, start: cs, end })?;
        if out.waves.iter().any(|w| w.len() != end - cs) {
            return Err(Error::InvalidInput("separator changed the chunk length".into()));
        }
        if waves.is_empty() {
            waves = vec![vec![0.0; len]; out.waves.len()];
        } else if out.waves.len() != waves.len() {
            return Err(Error::InvalidInput("separator changed its output count".into()));
        }
        let order = match &prev {
            Some((ps, pe, pw)) => {
                let (a, b) = (cs.max(*ps), end.min(*pe));
                if a < b {
                    let p: Vec<&[f64]> = pw.iter().map(|w| &w[a - ps..b - ps]).collect();
                    let c: Vec<&[f64]> = out.waves.iter().map(|w| &w[a - cs..b - cs]).collect();
                    align_to_previous(&p, &c)
                } else {
                    (0..out.waves.len()).collect()
                }
            }
            None => (0..out.waves.len()).collect(),
        };
        let ordered: Vec<Vec<f64>> = order.iter().map(|&i| out.waves[i].clone()).collect();
        for (dst, src) in waves.iter_mut().zip(&ordered) {
            dst[emitted..end].copy_from_slice(&src[emitted - cs..end - cs]);
        }
        blocks.push(BlockInfo {
            chunk_start: cs,
            emit_start: emitted,
            end,
            beams: if out.beams.len() == order.len() {
                order.iter().map(|&i| out.beams[i]).collect()
            } else {
                vec![]
            },
            order,
        });
        emitted = end;
        prev = Some((cs, end, ordered));
        if end == len {
            break;
        }
        start += hop;
    }
    Ok(OnlineOutput { waves, blocks })
}

fn map_records<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

fn score_record(sep: &dyn Separator, manifest: &Manifest, i: usize, cfg: &EvalConfig) -> UtteranceScore {
    let r = &manifest.records[i];
    let run = || -> Result<UtteranceScore> {
        let (mix, targets) = manifest.load_example(i)?;
        let refs: Vec<Vec<f64>> = targets.into_iter().take(r.num_speakers.max(1)).collect();
        let waves = match cfg.mode {
            EvalMode::Offline => {
                sep.separate_chunk(
                    &mix,
                    Span {
                        record: i,
                        start: 0,
                        end: mix.len(),
                    },
                )?
                .waves
            }
            EvalMode::Online => run_online(sep, &mix, i, cfg)?.waves,
        };
        UtteranceScore::new(&r.id, &r.condition, &waves, mix.channel(0), &refs)
    };
    run().unwrap_or_else(|e| {
        log::warn!("{}: {e}", r.id);
        UtteranceScore::failed(&r.id, &r.condition, e.to_string())
    })
}

/// Scores every record; failures become error entries and the run continues.
pub fn evaluate(sep: &dyn Separator, manifest: &Manifest, cfg: &EvalConfig) -> Result<ScoreReport> {
    cfg.validate()?;
    let scores = map_records(manifest.len(), |i| score_record(sep, manifest, i, cfg));
    Ok(ScoreReport::new(scores))
}

/// Whole-utterance evaluation: averaging spans the full input.
pub fn evaluate_offline(sep: &dyn Separator, manifest: &Manifest) -> Result<ScoreReport> {
    evaluate(sep, manifest, &EvalConfig::default())
}

pub fn evaluate_online(sep: &dyn Separator, manifest: &Manifest, cfg: &EvalConfig) -> Result<ScoreReport> {
    evaluate(
        sep,
        manifest,
        &EvalConfig {
            mode: EvalMode::Online,
            ..*cfg
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Returns channels 0 and 1, swapped in every second block when asked to.
    struct Probe {
        flip_odd_blocks: bool,
    }

    impl Separator for Probe {
        fn separate_chunk(&self, chunk: &MultiChannelWave, span: Span) -> Result<ChunkOutput> {
            let a: Vec<f64> = chunk.channel(0).to_vec();
            let b: Vec<f64> = chunk.channel(1).to_vec();
            let flip = self.flip_odd_blocks && (span.end / 32_000) % 2 == 0;
            Ok(ChunkOutput {
                waves: if flip { vec![b, a] } else { vec![a, b] },
                beams: if flip { vec![1, 0] } else { vec![0, 1] },
            })
        }
    }

    fn two_channel(len: usize) -> MultiChannelWave {
        let a: Vec<f64> = (0..len).map(|i| ((i * 7919) % 101) as f64 - 50.0).collect();
        let b: Vec<f64> = (0..len).map(|i| (i as f64 * 0.01).sin()).collect();
        MultiChannelWave::new(vec![a, b], 16_000).unwrap()
    }

    #[test]
    fn six_seconds_give_three_blocks() {
        let w = two_channel(96_000);
        let cfg = EvalConfig {
            history_s: 0.0,
            ..EvalConfig::online(0.0)
        };
        let o = run_online(&Probe { flip_odd_blocks: false }, &w, 0, &cfg).unwrap();
        assert_eq!(o.blocks.len(), 3);
        assert_eq!(o.waves[0].len(), 96_000);
        assert_eq!(o.waves[0], w.channel(0));
        let spans: Vec<_> = o.blocks.iter().map(|b| (b.emit_start, b.end)).collect();
        assert_eq!(spans, vec![(0, 32_000), (32_000, 64_000), (64_000, 96_000)]);
    }

    #[test]
    fn history_realigns_flipped_blocks() {
        let w = two_channel(96_000);
        let o = run_online(&Probe { flip_odd_blocks: true }, &w, 0, &EvalConfig::online(2.0)).unwrap();
        assert_eq!(o.waves[0], w.channel(0));
        assert_eq!(o.waves[1], w.channel(1));
        assert_eq!(o.blocks[1].order, vec![1, 0]);
        assert!(o.blocks.iter().all(|b| b.beams == vec![0, 1]));
    }

    #[test]
    fn short_utterance_is_one_truncated_block() {
        let w = two_channel(10_000);
        let o = run_online(&Probe { flip_odd_blocks: false }, &w, 0, &EvalConfig::online(4.0)).unwrap();
        assert_eq!(o.blocks.len(), 1);
        assert_eq!(o.blocks[0].end, 10_000);
    }

    #[test]
    fn overlapping_blocks_emit_each_sample_once() {
        let w = two_channel(50_000);
        let cfg = EvalConfig {
            mode: EvalMode::Online,
            block_s: 2.0,
            hop_s: 0.5,
            history_s: 1.0,
        };
        let o = run_online(&Probe { flip_odd_blocks: false }, &w, 0, &cfg).unwrap();
        let mut cursor = 0;
        for b in &o.blocks {
            assert_eq!(b.emit_start, cursor);
            assert!(b.end - b.emit_start <= 32_000);
            cursor = b.end;
        }
        assert_eq!(cursor, 50_000);
        assert_eq!(o.waves[0], w.channel(0));
    }

    #[test]
    fn alignment_ties_keep_order() {
        let z = [0.0; 4];
        assert_eq!(align_to_previous(&[&z, &z], &[&z, &z]), vec![0, 1]);
        let a = [1.0, 0.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0, 0.0];
        assert_eq!(align_to_previous(&[&a, &b], &[&b, &a]), vec![1, 0]);
    }

    #[test]
    fn invalid_configs() {
        let mut c = EvalConfig::online(2.0);
        c.hop_s = 3.0;
        assert!(c.validate().is_err());
        c.hop_s = 1.0;
        c.history_s = -1.0;
        assert!(c.validate().is_err());
    }
}
