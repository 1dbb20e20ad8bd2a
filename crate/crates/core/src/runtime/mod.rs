mod eval;
mod score;
mod train;

pub use eval::{
    align_to_previous, evaluate, evaluate_offline, evaluate_online, run_online, BlockInfo, ChunkOutput, EvalConfig,
    EvalMode, OnlineOutput, Separator, Span,
};
pub use score::{score_si_snr, ConditionSummary, PitScore, ScoreReport, UtteranceScore};
pub use train::{
    train, validation_loss, EpochLog, Stage, TrainConfig, TrainReport, BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG,
};
