use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustics::{derive_seed, Manifest};
use crate::autodiff::{Adam, AdamConfig, Checkpoint, EpochDecision, Graph, ParamGrads, ParamStore, PlateauSchedule};
use crate::dsp::MultiChannelWave;
use crate::error::{Error, Result};
use crate::models::{Averaging, Mode, Model, NUM_OUTPUTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Unmixing (or pre-separation) heads as sigmoid masks on channel 0.
    Unmix,
    /// Extraction on oracle beams and angle features.
    Extraction,
    /// The assembled E2E graph.
    Joint,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Unmix => "unmix",
            Stage::Extraction => "extraction",
            Stage::Joint => "joint",
        }
    }

    fn trainable(self) -> &'static [&'static str] {
        match self {
            Stage::Unmix => &["unmix."],
            Stage::Extraction => &["extract."],
            Stage::Joint => &[""],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Empty means the mode's default plan: `unmix, extraction` for ufe and
    /// `unmix, extraction, joint` for e2e.
    pub stages: Vec<Stage>,
    pub max_epochs: usize,
    /// Per-stage epoch limits aligned with the stage plan; missing entries use `max_epochs`.
    pub stage_epochs: Vec<usize>,
    pub lr: f64,
    /// Learning rate of the joint stage when it follows pretraining.
    pub joint_lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub patience: u32,
    pub stop_patience: u32,
    /// Utterances per optimizer step.
    pub batch_size: usize,
    /// Random training crop length; 0 trains on whole utterances.
    pub crop_s: f64,
    /// Wall-clock limit per stage; 0 disables. A limit makes runs timing dependent.
    pub max_stage_seconds: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            stages: vec![],
            max_epochs: 80,
            stage_epochs: vec![],
            lr: a.lr,
            joint_lr: 1e-4,
            weight_decay: a.weight_decay,
            clip_norm: a.clip_norm.unwrap_or(0.0),
            patience: 2,
            stop_patience: 6,
            batch_size: 4,
            crop_s: 0.0,
            max_stage_seconds: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn plan(&self, mode: Mode) -> Vec<Stage> {
        if !self.stages.is_empty() {
            return self.stages.clone();
        }
        match mode {
            Mode::Ufe => vec![Stage::Unmix, Stage::Extraction],
            Mode::E2e => vec![Stage::Unmix, Stage::Extraction, Stage::Joint],
        }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.joint_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.patience == 0 || self.stop_patience == 0 {
            return Err(Error::Config("patience values must be positive".into()));
        }
        if !(self.crop_s >= 0.0 && self.max_stage_seconds >= 0.0 && self.clip_norm >= 0.0) {
            return Err(Error::Config("crop_s, max_stage_seconds and clip_norm must be non-negative".into()));
        }
        let plan = self.plan(model.mode());
        if plan.contains(&Stage::Joint) && model.mode() != Mode::E2e {
            return Err(Error::Config("the joint stage needs an e2e model".into()));
        }
        if plan.contains(&Stage::Unmix) && model.config.embedding_dim != model.config.bins() {
            return Err(Error::Config(format!(
                "the unmix stage trains mask heads, which needs embedding_dim = {}",
                model.config.bins()
            )));
        }
        Ok(())
    }

    fn epochs(&self, stage_index: usize) -> usize {
        self.stage_epochs.get(stage_index).copied().unwrap_or(self.max_epochs)
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay: self.weight_decay,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: Stage,
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub valid_loss: f64,
    pub lr: f64,
    pub decision: String,
    pub steps: u64,
    pub skipped_steps: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub stages: Vec<Stage>,
    pub epochs: Vec<EpochLog>,
    pub best_checkpoint: PathBuf,
}

impl TrainReport {
    pub fn stage_logs(&self, stage: Stage) -> impl Iterator<Item = &EpochLog> {
        self.epochs.iter().filter(move |e| e.stage == stage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainState {
    stage_index: usize,
    epoch: usize,
    schedule: PlateauSchedule,
    stopped: bool,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    train_state: TrainState,
    train: TrainConfig,
}

pub const BEST_CHECKPOINT: &str = "best.ufec";
pub const LAST_CHECKPOINT: &str = "last.ufec";
pub const TRAIN_LOG: &str = "train_log.jsonl";

struct Example {
    mix: MultiChannelWave,
    targets: Vec<Vec<f64>>,
    /// Channel 0 of each speaker image, when the dataset carries images.
    images: Option<Vec<Vec<f64>>>,
    angles: Vec<f64>,
}

fn pad_to_outputs(mut v: Vec<Vec<f64>>, len: usize) -> Vec<Vec<f64>> {
    v.truncate(NUM_OUTPUTS);
    while v.len() < NUM_OUTPUTS {
        v.push(vec![0.0; len]);
    }
    v
}

fn load_example(m: &Manifest, i: usize, stage: Stage, crop: Option<(usize, &mut ChaCha8Rng)>) -> Result<Example> {
    let r = &m.records[i];
    let (mix, targets) = m.load_example(i)?;
    let n = r.num_speakers.max(1);
    let images = if stage == Stage::Unmix {
        m.load_images(i)?
            .map(|ims| ims.into_iter().take(n).map(|w| w.channel(0).to_vec()).collect::<Vec<_>>())
    } else {
        None
    };
    let len = mix.len();
    let (start, end) = match crop {
        Some((c, rng)) if c < len => {
            let s = rng.random_range(0..=len - c);
            (s, s + c)
        }
        _ => (0, len),
    };
    let cut = |v: Vec<Vec<f64>>| -> Vec<Vec<f64>> { v.into_iter().map(|x| x[start..end].to_vec()).collect() };
    Ok(Example {
        mix: mix.slice(start, end),
        targets: pad_to_outputs(cut(targets.into_iter().take(n).collect()), end - start),
        images: images.map(|ims| pad_to_outputs(cut(ims), end - start)),
        angles: r.angles_deg.iter().take(n).copied().collect(),
    })
}

/// Loss and parameter gradients of one example.
fn example_grads(model: &Model, stage: Stage, ex: &Example, training: bool, seed: u64, backward: bool) -> Result<(f64, Option<ParamGrads>)> {
    let prep = model.prepare(&ex.mix)?;
    let mut g = Graph::new(&model.store, training, seed);
    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|x| x.as_slice()).collect()
    }
    let (loss, _) = match stage {
        Stage::Unmix => {
            let r = ex.images.as_deref().unwrap_or(&ex.targets);
            model.unmix_loss(&mut g, &prep, &refs(r))?
        }
        Stage::Extraction => model.extraction_loss(&mut g, &prep, &ex.angles, &refs(&ex.targets))?,
        Stage::Joint => model.e2e_loss(&mut g, &prep, &refs(&ex.targets), Averaging::Offline)?,
    };
    let value = g.scalar(loss);
    if !backward || !value.is_finite() {
        return Ok((value, None));
    }
    Ok((value, Some(g.backward(loss)?.params)))
}

fn par_map<T: Send>(items: &[usize], f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(|&i| f(i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(|&i| f(i)).collect()
    }
}

/// Mean loss over the whole validation set in inference mode.
pub fn validation_loss(model: &Model, valid: &Manifest, stage: Stage) -> Result<f64> {
    if valid.is_empty() {
        return Err(Error::InvalidInput("validation manifest is empty".into()));
    }
    let idx: Vec<usize> = (0..valid.len()).collect();
    let losses = par_map(&idx, |i| {
        let ex = load_example(valid, i, stage, None)?;
        example_grads(model, stage, &ex, false, 0, false).map(|(l, _)| l)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / valid.len() as f64)
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn state_meta(state: &TrainState, cfg: &TrainConfig) -> String {
    toml::to_string(&StateMeta {
        train_state: state.clone(),
        train: cfg.clone(),
    })
    .expect("train state serializes")
}

fn read_state(ck: &Checkpoint) -> Result<TrainState> {
    let table: toml::Table = toml::from_str(&ck.meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    let v = table
        .get("train_state")
        .ok_or_else(|| Error::Format("checkpoint carries no training state".into()))?;
    v.clone()
        .try_into()
        .map_err(|e: toml::de::Error| Error::Format(format!("training state: {e}")))
}

/// Runs the staged schedule. Every epoch ends with `last.ufec` (parameters, optimizer and
/// schedule state) and each validation improvement rewrites `best.ufec`. With `resume`,
/// training continues after the epoch recorded in `out_dir/last.ufec`.
pub fn train(
    model: &mut Model,
    train_set: &Manifest,
    valid_set: &Manifest,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainReport> {
    cfg.validate(model)?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training manifest is empty".into()));
    }
    let plan = cfg.plan(model.mode());
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let last_path = out_dir.join(LAST_CHECKPOINT);
    let log_path = out_dir.join(TRAIN_LOG);
    if plan.first() == Some(&Stage::Joint) {
        log::info!("joint training from a cold start (no pretraining stages)");
    }

    let mut logs: Vec<EpochLog> = Vec::new();
    let mut resumed: Option<(TrainState, Checkpoint)> = None;
    if resume {
        let ck = Checkpoint::load(&last_path)?;
        let state = read_state(&ck)?;
        if state.stage_index >= plan.len() {
            return Err(Error::Config("checkpoint stage index exceeds the stage plan".into()));
        }
        ck.load_into(&mut model.store)?;
        if let Ok(text) = std::fs::read_to_string(&log_path) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                logs.push(serde_json::from_str(line).map_err(|e| Error::Format(format!("{}: {e}", log_path.display())))?);
            }
        }
        log::info!("resuming {} after epoch {}", plan[state.stage_index].name(), state.epoch);
        resumed = Some((state, ck));
    }

    let push_log = |logs: &mut Vec<EpochLog>, entry: EpochLog| -> Result<()> {
        log::info!(
            "{} epoch {}: train {:?} valid {:.4} lr {:.2e} {}",
            entry.stage.name(),
            entry.epoch,
            entry.train_loss,
            entry.valid_loss,
            entry.lr,
            entry.decision
        );
        logs.push(entry);
        let mut text = String::new();
        for l in logs.iter() {
            text.push_str(&serde_json::to_string(l).expect("log serializes"));
            text.push('\n');
        }
        write_atomic(&log_path, &text)
    };

    let first_stage = resumed.as_ref().map_or(0, |(s, _)| s.stage_index);
    for (si, &stage) in plan.iter().enumerate().skip(first_stage) {
        let lr = if stage == Stage::Joint && si > 0 { cfg.joint_lr } else { cfg.lr };
        let mut adam = Adam::new(cfg.adam(lr), &model.store);
        adam.train_only(&model.store, stage.trainable());
        let mut state = TrainState {
            stage_index: si,
            epoch: 0,
            schedule: PlateauSchedule::new(cfg.patience, cfg.stop_patience),
            stopped: false,
        };
        let mut best_store: ParamStore;
        match resumed.take() {
            Some((s, ck)) => {
                if let Some(o) = &ck.optimizer {
                    o.restore(&mut adam)?;
                }
                state = s;
                best_store = model.store.clone();
                Checkpoint::load(&best_path)?.load_into(&mut best_store)?;
            }
            None => {
                let t0 = Instant::now();
                let v = validation_loss(model, valid_set, stage)?;
                if !v.is_finite() {
                    return Err(Error::Training(format!("non-finite validation loss before {} training", stage.name())));
                }
                state.schedule.observe(v, &mut adam);
                best_store = model.store.clone();
                model.to_checkpoint(None, &state_meta(&state, cfg)).save(&best_path)?;
                model.to_checkpoint(Some(&adam), &state_meta(&state, cfg)).save(&last_path)?;
                push_log(
                    &mut logs,
                    EpochLog {
                        stage,
                        epoch: 0,
                        train_loss: None,
                        valid_loss: v,
                        lr: adam.lr(),
                        decision: "initial".into(),
                        steps: adam.step,
                        skipped_steps: adam.skipped,
                        seconds: t0.elapsed().as_secs_f64(),
                    },
                )?;
            }
        }

        let stage_start = Instant::now();
        let crop = (cfg.crop_s * model.config.sample_rate_hz() as f64).round() as usize;
        while !state.stopped && state.epoch < cfg.epochs(si) {
            if cfg.max_stage_seconds > 0.0 && stage_start.elapsed().as_secs_f64() > cfg.max_stage_seconds {
                log::warn!("{} stage stopped by the wall-clock limit", stage.name());
                break;
            }
            let epoch = state.epoch + 1;
            let t0 = Instant::now();
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("shuffle-{si}-{epoch}"))));
            let mut loss_sum = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let model_ref: &Model = model;
                let results = par_map(batch, |i| {
                    let key = format!("{si}-{epoch}-{i}");
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("crop-{key}")));
                    let ex = load_example(train_set, i, stage, (crop > 0).then_some((crop, &mut rng)))?;
                    example_grads(model_ref, stage, &ex, true, derive_seed(cfg.seed, &format!("dropout-{key}")), true)
                });
                let mut grads = ParamGrads::zeros_like(&model.store);
                for (r, &i) in results.into_iter().zip(batch) {
                    let (l, g) = r?;
                    if !l.is_finite() {
                        return Err(Error::Training(format!(
                            "non-finite {} loss on `{}` in epoch {epoch}; {} keeps the last good parameters",
                            stage.name(),
                            train_set.records[i].id,
                            best_path.display()
                        )));
                    }
                    loss_sum += l;
                    grads.merge(&g.expect("gradients requested"));
                }
                grads.scale(1.0 / batch.len() as f64);
                adam.step(&mut model.store, &grads);
            }
            let v = validation_loss(model, valid_set, stage)?;
            if !v.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite validation loss in {} epoch {epoch}; {} keeps the last good parameters",
                    stage.name(),
                    best_path.display()
                )));
            }
            let decision = state.schedule.observe(v, &mut adam);
            state.epoch = epoch;
            if decision == EpochDecision::Stop {
                state.stopped = true;
            }
            if decision == EpochDecision::Improved {
                best_store = model.store.clone();
                model.to_checkpoint(None, &state_meta(&state, cfg)).save(&best_path)?;
            }
            model.to_checkpoint(Some(&adam), &state_meta(&state, cfg)).save(&last_path)?;
            push_log(
                &mut logs,
                EpochLog {
                    stage,
                    epoch,
                    train_loss: Some(loss_sum / train_set.len() as f64),
                    valid_loss: v,
                    lr: adam.lr(),
                    decision: format!("{decision:?}").to_lowercase(),
                    steps: adam.step,
                    skipped_steps: adam.skipped,
                    seconds: t0.elapsed().as_secs_f64(),
                },
            )?;
        }
        // the next stage starts from this stage's best parameters
        model.store = best_store;
    }
    Ok(TrainReport {
        stages: plan,
        epochs: logs,
        best_checkpoint: best_path,
    })
}
