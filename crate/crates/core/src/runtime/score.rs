use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{permutations, si_snr_value, DEFAULT_CAP_DB};
use crate::error::{Error, Result};

/// Best-assignment Si-SNR of estimates against references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitScore {
    /// Si-SNR in dB per reference.
    pub per_speaker_db: Vec<f64>,
    /// Estimate index assigned to each reference.
    pub assignment: Vec<usize>,
}

impl PitScore {
    pub fn mean_db(&self) -> f64 {
        self.per_speaker_db.iter().sum::<f64>() / self.per_speaker_db.len() as f64
    }
}

/// Scores `estimates` against `references` under the assignment with the largest summed
/// Si-SNR. There may be more estimates than references; ties keep the earlier assignment in
/// lexicographic order.
pub fn score_si_snr(estimates: &[&[f64]], references: &[&[f64]]) -> Result<PitScore> {
    if references.is_empty() || estimates.len() < references.len() {
        return Err(Error::InvalidInput(format!(
            "{} estimates cannot cover {} references",
            estimates.len(),
            references.len()
        )));
    }
    for e in estimates {
        if e.len() != references[0].len() {
            return Err(Error::shape("score_si_snr", &[e.len()], &[references[0].len()]));
        }
    }
    for r in references {
        if r.len() != references[0].len() {
            return Err(Error::shape("score_si_snr", &[r.len()], &[references[0].len()]));
        }
    }
    let (ne, nr) = (estimates.len(), references.len());
    let mut table = vec![0.0; ne * nr];
    for i in 0..ne {
        for j in 0..nr {
            table[i * nr + j] = si_snr_value(estimates[i], references[j], DEFAULT_CAP_DB);
        }
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in permutations(ne) {
        let assign = &p[..nr];
        let total: f64 = assign.iter().enumerate().map(|(j, &i)| table[i * nr + j]).sum();
        if best.as_ref().is_none_or(|(_, b)| total > *b) {
            best = Some((assign.to_vec(), total));
        }
    }
    let (assignment, _) = best.expect("at least one assignment");
    Ok(PitScore {
        per_speaker_db: assignment.iter().enumerate().map(|(j, &i)| table[i * nr + j]).collect(),
        assignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub id: String,
    pub condition: String,
    /// Per reference speaker, under the best assignment.
    pub si_snr_db: Vec<f64>,
    /// Channel-0 mixture scored against each reference.
    pub mixture_si_snr_db: Vec<f64>,
    pub improvement_db: Vec<f64>,
    pub assignment: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl UtteranceScore {
    pub fn failed(id: &str, condition: &str, error: String) -> Self {
        Self {
            id: id.to_string(),
            condition: condition.to_string(),
            si_snr_db: vec![],
            mixture_si_snr_db: vec![],
            improvement_db: vec![],
            assignment: vec![],
            error: Some(error),
        }
    }

    /// Scores separated outputs and the unprocessed channel-0 mixture.
    pub fn new(id: &str, condition: &str, outputs: &[Vec<f64>], mixture_ch0: &[f64], references: &[Vec<f64>]) -> Result<Self> {
        let est: Vec<&[f64]> = outputs.iter().map(|v| v.as_slice()).collect();
        let refs: Vec<&[f64]> = references.iter().map(|v| v.as_slice()).collect();
        let s = score_si_snr(&est, &refs)?;
        let mix: Vec<f64> = refs.iter().map(|r| si_snr_value(mixture_ch0, r, DEFAULT_CAP_DB)).collect();
        Ok(Self {
            id: id.to_string(),
            condition: condition.to_string(),
            improvement_db: s.per_speaker_db.iter().zip(&mix).map(|(a, b)| a - b).collect(),
            si_snr_db: s.per_speaker_db,
            mixture_si_snr_db: mix,
            assignment: s.assignment,
            error: None,
        })
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub utterances: usize,
    pub errors: usize,
    /// Mean over utterances of the per-utterance speaker mean.
    pub mean_si_snr_db: f64,
    pub mean_mixture_si_snr_db: f64,
    pub mean_improvement_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub utterances: Vec<UtteranceScore>,
    /// One entry per condition in name order, then `all`.
    pub summary: Vec<ConditionSummary>,
}

fn summarize(name: &str, scores: &[&UtteranceScore]) -> ConditionSummary {
    let ok: Vec<&&UtteranceScore> = scores.iter().filter(|s| s.error.is_none()).collect();
    let avg = |f: &dyn Fn(&UtteranceScore) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|s| f(s)).sum::<f64>() / ok.len() as f64
        }
    };
    ConditionSummary {
        condition: name.to_string(),
        utterances: ok.len(),
        errors: scores.len() - ok.len(),
        mean_si_snr_db: avg(&|s| UtteranceScore::mean(&s.si_snr_db)),
        mean_mixture_si_snr_db: avg(&|s| UtteranceScore::mean(&s.mixture_si_snr_db)),
        mean_improvement_db: avg(&|s| UtteranceScore::mean(&s.improvement_db)),
    }
}

impl ScoreReport {
    pub fn new(utterances: Vec<UtteranceScore>) -> Self {
        let mut by: BTreeMap<&str, Vec<&UtteranceScore>> = BTreeMap::new();
        for u in &utterances {
            by.entry(u.condition.as_str()).or_default().push(u);
        }
        let mut summary: Vec<ConditionSummary> = by.iter().map(|(c, v)| summarize(c, v)).collect();
        summary.push(summarize("all", &utterances.iter().collect::<Vec<_>>()));
        Self { utterances, summary }
    }

    pub fn overall(&self) -> &ConditionSummary {
        self.summary.last().expect("summary always has `all`")
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionSummary> {
        self.summary.iter().find(|s| s.condition == name)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for u in &self.utterances {
            s.push_str(&serde_json::to_string(u).expect("score serializes"));
            s.push('\n');
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n"
    }

    /// Writes `scores.jsonl` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [("scores.jsonl", self.to_jsonl()), ("summary.json", self.summary_json())] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn self_score_hits_the_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (noise(&mut rng, 400), noise(&mut rng, 400));
        let s = score_si_snr(&[&a, &b], &[&a, &b]).unwrap();
        assert_eq!(s.per_speaker_db, vec![DEFAULT_CAP_DB; 2]);
        assert_eq!(s.assignment, vec![0, 1]);
        let s = score_si_snr(&[&b, &a], &[&a, &b]).unwrap();
        assert_eq!(s.per_speaker_db, vec![DEFAULT_CAP_DB; 2]);
        assert_eq!(s.assignment, vec![1, 0]);
    }

    #[test]
    fn matches_two_permutation_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let e: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 300)).collect();
            let mut r: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 300)).collect();
            // make one pairing better than chance
            for k in 0..300 {
                r[0][k] += 0.7 * e[1][k];
            }
            let f = |i: usize, j: usize| si_snr_value(&e[i], &r[j], DEFAULT_CAP_DB);
            let keep = f(0, 0) + f(1, 1);
            let swap = f(1, 0) + f(0, 1);
            let s = score_si_snr(&[&e[0], &e[1]], &[&r[0], &r[1]]).unwrap();
            let total: f64 = s.per_speaker_db.iter().sum();
            assert_eq!(total, keep.max(swap));
            assert!(total >= keep && total >= swap);
            assert_eq!(s.assignment, if swap > keep { vec![1, 0] } else { vec![0, 1] });
        }
    }

    #[test]
    fn extra_estimates_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (noise(&mut rng, 100), noise(&mut rng, 100));
        let s = score_si_snr(&[&b, &a], &[&a]).unwrap();
        assert_eq!(s.assignment, vec![1]);
        assert!(score_si_snr(&[&a], &[&a, &b]).is_err());
        assert!(score_si_snr(&[&a[..50], &b[..50]], &[&a, &b]).is_err());
    }

    #[test]
    fn report_summaries() {
        let r = vec![vec![1.0, 0.0, -1.0, 0.5], vec![0.0, 1.0, 0.5, -1.0]];
        let mix = vec![1.0, 1.0, -0.5, -0.5];
        let a = UtteranceScore::new("a", "OV35", &r, &mix, &r).unwrap();
        let swapped = vec![r[1].clone(), r[0].clone()];
        let b = UtteranceScore::new("b", "OV75", &swapped, &mix, &r).unwrap();
        assert_eq!(a.si_snr_db, b.si_snr_db);
        let c = UtteranceScore::failed("c", "OV35", "missing".into());
        let rep = ScoreReport::new(vec![a.clone(), b, c]);
        assert_eq!(rep.summary.len(), 3);
        let ov35 = rep.condition("OV35").unwrap();
        assert_eq!((ov35.utterances, ov35.errors), (1, 1));
        assert_eq!(ov35.mean_si_snr_db, DEFAULT_CAP_DB);
        assert_eq!(rep.overall().utterances, 2);
        assert!((ov35.mean_improvement_db - (DEFAULT_CAP_DB - UtteranceScore::mean(&a.mixture_si_snr_db))).abs() < 1e-12);
        assert_eq!(rep.to_jsonl().lines().count(), 3);
        // passthrough scores zero improvement by construction
        let pass = UtteranceScore::new("p", "OV35", &[mix.clone(), mix.clone()], &mix, &r).unwrap();
        assert!(pass.improvement_db.iter().all(|&d| d == 0.0));
    }
}
