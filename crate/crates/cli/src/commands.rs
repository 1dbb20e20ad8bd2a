use std::path::{Path, PathBuf};

use ufe_core::acoustics::{build_dataset, derive_seed, read_source_list, write_synthetic_corpus, Manifest, SourceEntry};
use ufe_core::array::{design_beamformer_bank, uniform_angles, write_bank, SteeringTable};
use ufe_core::autodiff::gradcheck::op_suite;
use ufe_core::autodiff::{Checkpoint, Graph};
use ufe_core::dsp::stft;
use ufe_core::dsp::wav::read_wav;
use ufe_core::models::{e2e_gradient_check, Model};
use ufe_core::runtime::{evaluate_offline, evaluate_online, train, EvalMode, ScoreReport};
use ufe_core::ssl::localize_sources;
use ufe_core::{Error, Result};

use crate::config::{require, RunConfig};
use crate::{Cli, Command, Common, EvalArgs};

/// Largest relative error `gradcheck` accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn category(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Io { .. } | Error::IoBare(_) => "io",
        Error::InvalidInput(_) | Error::Shape { .. } => "input",
        Error::WavParse { .. } | Error::UnsupportedFormat(_) | Error::Format(_) => "format",
        Error::Singular { .. } | Error::Geometry(_) => "design",
        Error::Training(_) => "training",
        Error::Check(_) => "check",
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    RunConfig::load(common.config.as_deref())
}

fn set_jobs(jobs: usize) -> Result<()> {
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

fn cache_dir() -> PathBuf {
    if let Some(d) = std::env::var_os("UFE_CACHE_DIR") {
        return d.into();
    }
    if let Some(d) = std::env::var_os("XDG_CACHE_HOME") {
        return PathBuf::from(d).join("ufe");
    }
    if let Some(h) = std::env::var_os("HOME") {
        return PathBuf::from(h).join(".cache/ufe");
    }
    PathBuf::from(".ufe-cache")
}

pub fn run(cli: Cli) -> Result<()> {
    let jobs_flag = cli.jobs;
    let mut cfg;
    match cli.command {
        Command::Simulate(a) => {
            cfg = load(&a.common)?;
            override_opt(&mut cfg.io.out, a.out);
            override_opt(&mut cfg.io.sources, a.sources);
            set(&mut cfg.simulate.count, a.count);
            set(&mut cfg.simulate.seed, a.seed);
            if let Some(c) = a.condition {
                cfg.simulation.condition = c.parse()?;
            }
            set(&mut cfg.simulation.split, a.split);
            set(&mut cfg.simulation.duration_s, a.duration);
            cfg.simulation.write_images |= a.write_images;
            set(&mut cfg.jobs, jobs_flag);
            set_jobs(cfg.jobs)?;
            simulate(&cfg)
        }
        Command::DesignBeams(a) => {
            cfg = load(&a.common)?;
            override_opt(&mut cfg.io.out, a.out);
            set(&mut cfg.model.num_beams, a.num_beams);
            if let Some(d) = a.design {
                cfg.model.beamformer = d.parse()?;
            }
            set(&mut cfg.model.diagonal_loading, a.loading);
            design_beams(&cfg)
        }
        Command::Localize(a) => {
            cfg = load(&a.common)?;
            override_opt(&mut cfg.io.input, a.input);
            override_opt(&mut cfg.io.model, a.model);
            set(&mut cfg.model.num_angles, a.num_angles);
            localize(&cfg)
        }
        Command::Train(a) => {
            cfg = load(&a.common)?;
            override_opt(&mut cfg.io.train_manifest, a.train_manifest);
            override_opt(&mut cfg.io.valid_manifest, a.valid_manifest);
            override_opt(&mut cfg.io.out, a.out);
            if let Some(m) = a.mode {
                cfg.model.mode = m.parse()?;
            }
            set(&mut cfg.model.hidden, a.hidden);
            set(&mut cfg.train.max_epochs, a.epochs);
            if let Some(s) = a.seed {
                cfg.model.seed = s;
                cfg.train.seed = s;
            }
            set(&mut cfg.jobs, jobs_flag);
            set_jobs(cfg.jobs)?;
            run_train(&cfg, a.resume)
        }
        Command::EvalOffline(a) => {
            cfg = eval_config(&a)?;
            cfg.eval.mode = EvalMode::Offline;
            set(&mut cfg.jobs, jobs_flag);
            set_jobs(cfg.jobs)?;
            run_eval(&cfg)
        }
        Command::EvalOnline(a) => {
            cfg = eval_config(&a.eval)?;
            cfg.eval.mode = EvalMode::Online;
            set(&mut cfg.eval.history_s, a.history);
            set(&mut cfg.eval.block_s, a.block);
            set(&mut cfg.eval.hop_s, a.hop);
            set(&mut cfg.jobs, jobs_flag);
            set_jobs(cfg.jobs)?;
            run_eval(&cfg)
        }
        Command::Gradcheck(a) => {
            cfg = load(&a.common)?;
            set(&mut cfg.gradcheck.seed, a.seed);
            set(&mut cfg.gradcheck.coords, a.coords);
            gradcheck(&cfg)
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn override_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn eval_config(a: &EvalArgs) -> Result<RunConfig> {
    let mut cfg = load(&a.common)?;
    override_opt(&mut cfg.io.model, a.model.clone());
    override_opt(&mut cfg.io.manifest, a.manifest.clone());
    override_opt(&mut cfg.io.out, a.out.clone());
    Ok(cfg)
}

fn synthetic_sources(cfg: &RunConfig) -> Result<Vec<SourceEntry>> {
    let s = &cfg.simulate;
    let key = format!(
        "{}-{}-{}-{}-{}-{}",
        s.synthetic_speakers, s.utterances_per_speaker, s.valid_speakers, s.test_speakers, cfg.simulation.duration_s, s.seed
    );
    let dir = cache_dir().join(format!("corpus-{:016x}", derive_seed(0, &key)));
    let list = dir.join("sources.tsv");
    if list.exists() {
        log::info!("using cached synthetic corpus {}", dir.display());
        return read_source_list(&list);
    }
    log::info!("writing synthetic corpus to {}", dir.display());
    write_synthetic_corpus(
        &dir,
        s.synthetic_speakers,
        s.utterances_per_speaker,
        s.valid_speakers,
        s.test_speakers,
        cfg.simulation.duration_s,
        s.seed,
    )
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.io.out, "--out")?;
    cfg.simulation.validate()?;
    let sources = match (&cfg.io.sources, cfg.simulate.count) {
        (_, 0) => vec![],
        (Some(p), _) => read_source_list(p)?,
        (None, _) => synthetic_sources(cfg)?,
    };
    cfg.echo(out)?;
    let recs = build_dataset(&sources, out, cfg.simulate.count, cfg.simulate.seed, &cfg.simulation)?;
    println!("wrote {} examples to {}", recs.len(), out.join("manifest.jsonl").display());
    Ok(())
}

fn design_beams(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.io.out, "--out")?;
    let m = &cfg.model;
    let bank = design_beamformer_bank(
        &m.geometry(),
        m.num_beams,
        m.beamformer,
        m.diagonal_loading,
        m.stft.fft_size,
        m.sample_rate_hz(),
    )?;
    cfg.echo(out)?;
    let p = out.join("bank.ufeb");
    write_bank(&bank, &p)?;
    println!(
        "designed {} {:?} beams x {} bins -> {}",
        bank.num_beams(),
        bank.design(),
        bank.bins(),
        p.display()
    );
    Ok(())
}

fn localize(cfg: &RunConfig) -> Result<()> {
    let input = require(&cfg.io.input, "--input")?;
    let wave = read_wav(input)?;
    let result = match &cfg.io.model {
        Some(path) => {
            let model = Model::from_checkpoint(&Checkpoint::load(path)?)?;
            let prep = model.prepare(&wave)?;
            let mut g = Graph::new(&model.store, false, 0);
            let masks = model.unmix_masks(&mut g, &prep)?;
            let vals: Vec<Vec<f64>> = masks.iter().map(|&m| g.value(m).data.clone()).collect();
            model.localize(&prep, &vals, ufe_core::models::Averaging::Offline)?
        }
        None => {
            let m = &cfg.model;
            let spec = stft(&wave, &m.stft)?;
            let table = SteeringTable::new(
                &m.geometry(),
                &uniform_angles(m.num_angles),
                m.stft.fft_size,
                wave.sample_rate_hz(),
            );
            let ones = vec![1.0; spec.frames() * spec.bins()];
            localize_sources(&[ones], &spec, &table, m.ssl_epsilon)?
        }
    };
    let json = serde_json::json!({
        "angles_deg": result.angles_deg,
        "confidence": result.confidence,
    });
    println!("{json}");
    Ok(())
}

fn run_train(cfg: &RunConfig, resume: bool) -> Result<()> {
    let out = require(&cfg.io.out, "--out")?;
    let tr = Manifest::load(require(&cfg.io.train_manifest, "--train")?)?;
    let va = Manifest::load(require(&cfg.io.valid_manifest, "--valid")?)?;
    let mut model = Model::new(cfg.model.clone())?;
    cfg.echo(out)?;
    let report = train(&mut model, &tr, &va, &cfg.train, out, resume)?;
    let last = report.epochs.last().expect("at least the initial evaluation");
    let best = report
        .epochs
        .iter()
        .filter(|e| e.stage == last.stage)
        .map(|e| e.valid_loss)
        .fold(f64::INFINITY, f64::min);
    println!(
        "trained stages {:?}; best {} validation loss {best:.4}; checkpoint {}",
        report.stages.iter().map(|s| s.name()).collect::<Vec<_>>(),
        last.stage.name(),
        report.best_checkpoint.display()
    );
    Ok(())
}

fn print_report(r: &ScoreReport, out: Option<&Path>) -> Result<()> {
    if let Some(dir) = out {
        r.write(dir)?;
    }
    print!("{}", r.summary_json());
    Ok(())
}

fn run_eval(cfg: &RunConfig) -> Result<()> {
    let model = Model::from_checkpoint(&Checkpoint::load(require(&cfg.io.model, "--model")?)?)?;
    let manifest = Manifest::load(require(&cfg.io.manifest, "--manifest")?)?;
    cfg.eval.validate()?;
    if let Some(out) = &cfg.io.out {
        cfg.echo(out)?;
    }
    let report = match cfg.eval.mode {
        EvalMode::Offline => evaluate_offline(&model, &manifest)?,
        EvalMode::Online => evaluate_online(&model, &manifest, &cfg.eval)?,
    };
    print_report(&report, cfg.io.out.as_deref())
}

fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.gradcheck.seed;
    let mut worst: f64 = 0.0;
    for r in op_suite(seed)? {
        println!("{:<24} max rel err {:.3e} over {} coords", r.name, r.report.max_rel_err, r.report.checked);
        worst = worst.max(r.report.max_rel_err);
    }
    let e2e = e2e_gradient_check(seed, cfg.gradcheck.coords)?;
    println!(
        "{:<24} max rel err {:.3e} over {} coords",
        "e2e_model", e2e.max_rel_err, e2e.checked
    );
    worst = worst.max(e2e.max_rel_err);
    println!("max relative error: {worst:.3e}");
    if !(worst < GRADCHECK_TOLERANCE) {
        return Err(Error::Check(format!(
            "max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}
