use super::graph::{si_snr_value, Graph, Var};
use super::tensor::Tensor;
use crate::dsp::{StftPlan, C64};
use crate::error::{Error, Result};

pub const DEFAULT_CAP_DB: f64 = 30.0;

/// Si-SNR settings: clamp magnitude and the treatment of all-zero references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiSnrLoss {
    pub cap_db: f64,
}

impl Default for SiSnrLoss {
    fn default() -> Self {
        Self { cap_db: DEFAULT_CAP_DB }
    }
}

impl SiSnrLoss {
    /// Plain evaluation in dB.
    pub fn value(&self, est: &[f64], reference: &[f64]) -> Result<f64> {
        if est.len() != reference.len() {
            return Err(Error::shape("si_snr", &[est.len()], &[reference.len()]));
        }
        Ok(si_snr_value(est, reference, self.cap_db))
    }

    pub fn node(&self, g: &mut Graph, est: Var, reference: &[f64]) -> Result<Var> {
        g.si_snr(est, reference, self.cap_db)
    }
}

/// Every permutation of `0..n` in lexicographic order, identity first.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Best assignment `perm[i] = j` (estimate `i` scored against reference `j`) and its
/// summed Si-SNR. Ties keep the earlier permutation.
pub fn best_permutation(loss: &SiSnrLoss, estimates: &[&[f64]], references: &[&[f64]]) -> Result<(Vec<usize>, f64)> {
    if estimates.len() != references.len() || estimates.is_empty() {
        return Err(Error::shape("pit", &[estimates.len()], &[references.len()]));
    }
    let h = estimates.len();
    let mut table = vec![0.0; h * h];
    for i in 0..h {
        for j in 0..h {
            table[i * h + j] = loss.value(estimates[i], references[j])?;
        }
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in permutations(h) {
        let total: f64 = p.iter().enumerate().map(|(i, &j)| table[i * h + j]).sum();
        if best.as_ref().is_none_or(|(_, b)| total > *b) {
            best = Some((p, total));
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// Permutation-invariant loss `-max_perm sum_i SiSNR(est_i, ref_perm(i))`. Only the winning
/// permutation enters the graph.
pub fn pit_loss(
    g: &mut Graph,
    loss: &SiSnrLoss,
    estimates: &[Var],
    references: &[&[f64]],
) -> Result<(Var, Vec<usize>)> {
    let values: Vec<Vec<f64>> = estimates.iter().map(|&v| g.value(v).data.clone()).collect();
    for (v, r) in values.iter().zip(references) {
        if v.len() != r.len() {
            return Err(Error::shape("pit", &[v.len()], &[r.len()]));
        }
    }
    let est_refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
    let (perm, _) = best_permutation(loss, &est_refs, references)?;
    let mut total: Option<Var> = None;
    for (i, &j) in perm.iter().enumerate() {
        let s = loss.node(g, estimates[i], references[j])?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let neg = g.scale(total.expect("non-empty"), -1.0);
    Ok((neg, perm))
}

/// Real mask applied to a fixed complex `T x F` spectrogram, then synthesized to `len`
/// samples (`1 x len`).
pub fn masked_synthesis(g: &mut Graph, mask: Var, spec: &[C64], plan: &StftPlan, len: usize) -> Result<Var> {
    let [t, f] = g.shape(mask);
    if spec.len() != t * f {
        return Err(Error::shape("masked_synthesis", &[t, f], &[spec.len()]));
    }
    let re = g.constant(Tensor::new(t, f, spec.iter().map(|z| z.re).collect())?);
    let im = g.constant(Tensor::new(t, f, spec.iter().map(|z| z.im).collect())?);
    let mre = g.mul(mask, re)?;
    let mim = g.mul(mask, im)?;
    g.istft(mre, mim, plan, len)
}

/// Real mask applied to a complex spectrogram held as two graph nodes.
pub fn masked_synthesis_var(g: &mut Graph, mask: Var, re: Var, im: Var, plan: &StftPlan, len: usize) -> Result<Var> {
    let mre = g.mul(mask, re)?;
    let mim = g.mul(mask, im)?;
    g.istft(mre, mim, plan, len)
}
