//! Attentional selection over a pool of fixed spatial representations.

use std::ops::Range;

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Which frames enter the time average of the similarity scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    /// Every frame of the processed span.
    Offline,
    /// Only the trailing `history_frames` frames.
    Causal { history_frames: usize },
}

impl Averaging {
    pub fn window(self, frames: usize) -> Result<Range<usize>> {
        let w = match self {
            Averaging::Offline => 0..frames,
            Averaging::Causal { history_frames } => frames.saturating_sub(history_frames)..frames,
        };
        if w.is_empty() {
            return Err(Error::InvalidInput("attention averaging window is empty".into()));
        }
        Ok(w)
    }
}

/// Projection pair for one pool: `V^P = E W_p` and `V^B = P W_b`.
#[derive(Debug, Clone)]
pub struct Attention {
    pub w_p: ParamId,
    pub w_b: ParamId,
    pub embedding_dim: usize,
    pub feature_dim: usize,
    pub projection_dim: usize,
}

/// Pool rows restricted to `window`, laid out `[(pool, frame)][feature]`.
pub fn pool_window(pool: &Tensor, n: usize, frames: usize, window: Range<usize>) -> Tensor {
    let f = pool.cols / frames;
    if window == (0..frames) {
        return Tensor {
            rows: n * frames,
            cols: f,
            data: pool.data.clone(),
        };
    }
    let w = window.len();
    let mut data = Vec::with_capacity(n * w * f);
    for b in 0..n {
        let row = pool.row_slice(b);
        data.extend_from_slice(&row[window.start * f..window.end * f]);
    }
    Tensor { rows: n * w, cols: f, data }
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        embedding_dim: usize,
        feature_dim: usize,
        projection_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bp = (6.0 / (embedding_dim + projection_dim) as f64).sqrt();
        let bb = (6.0 / (feature_dim + projection_dim) as f64).sqrt();
        let w_p = store.add(format!("{name}.w_p"), Tensor::uniform(embedding_dim, projection_dim, bp, rng));
        let w_b = store.add(format!("{name}.w_b"), Tensor::uniform(feature_dim, projection_dim, bb, rng));
        Self {
            w_p,
            w_b,
            embedding_dim,
            feature_dim,
            projection_dim,
        }
    }

    /// Time-averaged similarity scores `[H x N]` between each head of `heads` (each
    /// `T x K`) and each row of `pool` (`N x (T*F)`, the real pool used for scoring).
    pub fn scores(&self, g: &mut Graph, heads: &[Var], pool: &Tensor, averaging: Averaging) -> Result<Var> {
        let [t, k] = g.shape(heads[0]);
        if k != self.embedding_dim {
            return Err(Error::shape("attention heads", &[t, k], &[t, self.embedding_dim]));
        }
        let n = pool.rows;
        if pool.cols != t * self.feature_dim {
            return Err(Error::shape("attention pool", &pool.shape(), &[n, t * self.feature_dim]));
        }
        let window = averaging.window(t)?;
        let tw = window.len();
        let d = self.projection_dim;
        let wp = g.param(self.w_p);
        let mut flat = Vec::with_capacity(heads.len());
        for &h in heads {
            let vp = g.matmul(h, wp)?;
            let vp = g.slice_rows(vp, window.start, window.end)?;
            flat.push(g.reshape(vp, 1, tw * d)?);
        }
        let vp = g.concat_rows(&flat)?;
        let pw = g.constant(pool_window(pool, n, t, window));
        let wb = g.param(self.w_b);
        let vb = g.matmul(pw, wb)?;
        let vb = g.reshape(vb, n, tw * d)?;
        let s = g.matmul_t(vp, false, vb, true)?;
        Ok(g.scale(s, 1.0 / (tw as f64 * (d as f64).sqrt())))
    }

    /// Softmax weights over the pool, `[H x N]`.
    pub fn weights(&self, g: &mut Graph, heads: &[Var], pool: &Tensor, averaging: Averaging) -> Result<Var> {
        let s = self.scores(g, heads, pool, averaging)?;
        Ok(g.softmax_rows(s))
    }
}

/// Weighted average of pool rows: `[H x N] x [N x L] -> [H x L]`.
pub fn combine(g: &mut Graph, weights: Var, pool: Var) -> Result<Var> {
    g.matmul(weights, pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        store: ParamStore,
        attn: Attention,
        e: Vec<Tensor>,
        pool: Tensor,
    }

    fn setup(h: usize, n: usize, t: usize, k: usize, f: usize, d: usize, seed: u64) -> Setup {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let attn = Attention::new(&mut store, "a", k, f, d, &mut rng);
        let e = (0..h).map(|_| Tensor::uniform(t, k, 1.0, &mut rng)).collect();
        let pool = Tensor::uniform(n, t * f, 1.0, &mut rng);
        Setup { store, attn, e, pool }
    }

    /// Direct loops over heads, pool entries, frames and projection dimensions.
    fn naive(s: &Setup, window: Range<usize>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let wp = s.store.get(s.attn.w_p);
        let wb = s.store.get(s.attn.w_b);
        let (k, f, d) = (s.attn.embedding_dim, s.attn.feature_dim, s.attn.projection_dim);
        let n = s.pool.rows;
        let t = s.e[0].rows;
        let mut weights = Vec::new();
        let mut combined = Vec::new();
        for e in &s.e {
            let mut scores = vec![0.0; n];
            for (b, score) in scores.iter_mut().enumerate() {
                let mut acc = 0.0;
                for tt in window.clone() {
                    let mut dot = 0.0;
                    for j in 0..d {
                        let mut vp = 0.0;
                        for kk in 0..k {
                            vp += e.at(tt, kk) * wp.at(kk, j);
                        }
                        let mut vb = 0.0;
                        for ff in 0..f {
                            vb += s.pool.at(b, tt * f + ff) * wb.at(ff, j);
                        }
                        dot += vp * vb;
                    }
                    acc += dot / (d as f64).sqrt();
                }
                *score = acc / window.len() as f64;
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|v| (v - m).exp()).sum();
            let w: Vec<f64> = scores.iter().map(|v| (v - m).exp() / z).collect();
            let mut c = vec![0.0; t * f];
            for (b, wb) in w.iter().enumerate() {
                for (i, ci) in c.iter_mut().enumerate() {
                    *ci += wb * s.pool.at(b, i);
                }
            }
            weights.push(w);
            combined.push(c);
        }
        (weights, combined)
    }

    fn run(s: &Setup, averaging: Averaging) -> (Tensor, Tensor) {
        let mut g = Graph::new(&s.store, false, 0);
        let heads: Vec<Var> = s.e.iter().map(|e| g.constant(e.clone())).collect();
        let w = s.attn.weights(&mut g, &heads, &s.pool, averaging).unwrap();
        let p = g.constant(s.pool.clone());
        let c = combine(&mut g, w, p).unwrap();
        (g.value(w).clone(), g.value(c).clone())
    }

    #[test]
    fn matches_naive_loops() {
        let s = setup(2, 18, 50, 12, 10, 32, 1);
        let (w, c) = run(&s, Averaging::Offline);
        let (nw, nc) = naive(&s, 0..50);
        for h in 0..2 {
            let sum: f64 = w.row_slice(h).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(w.row_slice(h).iter().all(|&v| v >= 0.0));
            for b in 0..18 {
                assert!((w.at(h, b) - nw[h][b]).abs() < 1e-9);
            }
            for i in 0..c.cols {
                assert!((c.at(h, i) - nc[h][i]).abs() < 1e-9);
            }
        }
        let (w, _) = run(&s, Averaging::Causal { history_frames: 7 });
        let (nw, _) = naive(&s, 43..50);
        for b in 0..18 {
            assert!((w.at(1, b) - nw[1][b]).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_scores_give_uniform_weights_and_pool_mean() {
        let mut s = setup(2, 5, 4, 3, 2, 4, 2);
        // identical pool rows make every score equal
        let row = s.pool.row_slice(0).to_vec();
        for b in 0..5 {
            s.pool.data[b * 8..(b + 1) * 8].copy_from_slice(&row);
        }
        let (w, c) = run(&s, Averaging::Offline);
        assert!(w.data.iter().all(|&v| (v - 0.2).abs() < 1e-12));
        for i in 0..8 {
            assert!((c.at(0, i) - row[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_score_selects_that_row() {
        let mut s = setup(1, 6, 3, 2, 2, 2, 3);
        let wb = s.attn.w_b;
        let wp = s.attn.w_p;
        *s.store.get_mut(wp) = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        *s.store.get_mut(wb) = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        s.e = vec![Tensor::full(3, 2, 1.0)];
        s.pool = Tensor::zeros(6, 6);
        s.pool.data[4 * 6..5 * 6].iter_mut().for_each(|v| *v = 1e3);
        let (w, c) = run(&s, Averaging::Offline);
        assert!((w.at(0, 4) - 1.0).abs() < 1e-12);
        assert!(c.data.iter().all(|&v| (v - 1e3).abs() < 1e-6));
    }

    #[test]
    fn averaging_modes() {
        assert_eq!(Averaging::Offline.window(1).unwrap(), 0..1);
        assert_eq!(Averaging::Causal { history_frames: 4 }.window(1).unwrap(), 0..1);
        assert!(Averaging::Causal { history_frames: 0 }.window(5).is_err());
        assert!(Averaging::Offline.window(0).is_err());
        let s = setup(2, 4, 9, 3, 2, 4, 4);
        let (a, _) = run(&s, Averaging::Offline);
        let (b, _) = run(&s, Averaging::Causal { history_frames: 9 });
        let (c, _) = run(&s, Averaging::Causal { history_frames: 90 });
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() < 1e-12));
        assert_eq!(b, c);
        // constant-in-time inputs: the average equals any single frame
        let mut s1 = setup(2, 4, 1, 3, 2, 4, 5);
        let single = run(&s1, Averaging::Offline).0;
        s1.e = s1.e.iter().map(|e| Tensor::new(6, 3, e.data.repeat(6)).unwrap()).collect();
        s1.pool = Tensor::new(4, 12, (0..4).flat_map(|b| s1.pool.row_slice(b).repeat(6)).collect()).unwrap();
        let many = run(&s1, Averaging::Offline).0;
        assert!(single.data.iter().zip(&many.data).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn score_scale_follows_inverse_sqrt_d() {
        // zero-padding both projections from D to 4D keeps the raw dot product and
        // divides the scaled score by exactly 2
        let s = setup(2, 3, 5, 4, 3, 2, 6);
        let mut wide = ParamStore::new();
        let pad = |t: &Tensor| {
            let mut o = Tensor::zeros(t.rows, 8);
            for r in 0..t.rows {
                o.data[r * 8..r * 8 + 2].copy_from_slice(t.row_slice(r));
            }
            o
        };
        let wp = wide.add("a.w_p", pad(s.store.get(s.attn.w_p)));
        let wb = wide.add("a.w_b", pad(s.store.get(s.attn.w_b)));
        let attn4 = Attention {
            w_p: wp,
            w_b: wb,
            projection_dim: 8,
            ..s.attn.clone()
        };
        let score = |store: &ParamStore, a: &Attention| {
            let mut g = Graph::new(store, false, 0);
            let heads: Vec<Var> = s.e.iter().map(|e| g.constant(e.clone())).collect();
            let v = a.scores(&mut g, &heads, &s.pool, Averaging::Offline).unwrap();
            g.value(v).clone()
        };
        let a = score(&s.store, &s.attn);
        let b = score(&wide, &attn4);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x / 2.0 - y).abs() < 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let s = setup(2, 3, 5, 4, 3, 2, 7);
        let mut g = Graph::new(&s.store, false, 0);
        let bad = g.constant(Tensor::zeros(5, 3));
        assert!(s.attn.scores(&mut g, &[bad], &s.pool, Averaging::Offline).is_err());
        let h = g.constant(s.e[0].clone());
        assert!(s.attn.scores(&mut g, &[h], &Tensor::zeros(3, 14), Averaging::Offline).is_err());
    }
}
