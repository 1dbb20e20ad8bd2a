use std::path::Path;
use std::process::{Command, Output};

use ufe_core::acoustics::speech::{synthesize_utterance, Voice};
use ufe_core::acoustics::{place_array, simulate_rir, RirTruncation, RoomSpec};
use ufe_core::array::ArrayGeometry;
use ufe_core::dsp::wav::{write_wav, SampleFormat};
use ufe_core::dsp::{fft_convolve, MultiChannelWave};

fn ufe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ufe"))
        .args(args)
        .env("UFE_CACHE_DIR", std::env::temp_dir().join("ufe-cli-tests-cache"))
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gradcheck_passes_and_reports_the_worst_error() {
    let o = ufe(&["gradcheck", "--seed", "7", "--coords", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("e2e_model"));
    let worst: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("max relative error: "))
        .expect("summary line")
        .trim()
        .parse()
        .unwrap();
    assert!(worst < 1e-4);
}

#[test]
fn zero_count_simulation_writes_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = ufe(&["simulate", "--count", "0", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    assert!(manifest.trim().is_empty());
    assert!(stdout(&o).contains("wrote 0 examples"));
}

#[test]
fn missing_config_file_is_a_runtime_error_naming_the_path() {
    let o = ufe(&["train", "--config", "does/not/exist.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("does/not/exist.toml"), "{err}");
    assert!(err.contains("error[config]"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(ufe(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ufe(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ufe(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nnum_beam = 4\n").unwrap();
    let o = ufe(&["design-beams", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("num_beam"));
}

fn echoed(dir: &Path) -> toml::Table {
    toml::from_str(&std::fs::read_to_string(dir.join("config.toml")).unwrap()).unwrap()
}

#[test]
fn flags_override_file_values_which_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[model]\nnum_beams = 12\ndiagonal_loading = 0.05\n").unwrap();

    let a = dir.path().join("a");
    let o = ufe(&["design-beams", "--out", p(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = echoed(&a);
    assert_eq!(t["model"]["num_beams"].as_integer(), Some(18));

    let b = dir.path().join("b");
    let o = ufe(&["design-beams", "--config", p(&cfg), "--out", p(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = echoed(&b);
    assert_eq!(t["model"]["num_beams"].as_integer(), Some(12));
    assert_eq!(t["model"]["diagonal_loading"].as_float(), Some(0.05));

    let c = dir.path().join("c");
    let o = ufe(&["design-beams", "--config", p(&cfg), "--out", p(&c), "--num-beams", "6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = echoed(&c);
    assert_eq!(t["model"]["num_beams"].as_integer(), Some(6));
    assert_eq!(t["model"]["diagonal_loading"].as_float(), Some(0.05));
    let bank = ufe_core::array::read_bank(c.join("bank.ufeb")).unwrap();
    assert_eq!(bank.num_beams(), 6);
}

#[test]
fn localize_finds_a_simulated_source() {
    let dir = tempfile::tempdir().unwrap();
    let geom = ArrayGeometry::reference();
    let center = [3.0, 2.5, 1.2];
    let angle: f64 = 130.0;
    let src = [
        center[0] + 1.5 * angle.to_radians().cos(),
        center[1] + 1.5 * angle.to_radians().sin(),
        center[2],
    ];
    let room = RoomSpec {
        dims_m: [6.0, 5.0, 3.0],
        t60_s: 0.0,
        source_positions_m: vec![src],
        mic_positions_m: place_array(&geom, center),
    };
    let rir = simulate_rir(&room, RirTruncation::TailEnergy, 16000).unwrap();
    let dry = synthesize_utterance(&Voice::from_seed(4), 16000, 16000, 4);
    let chans: Vec<Vec<f64>> = rir[0].iter().map(|h| fft_convolve(&dry, h)[..16000].to_vec()).collect();
    let wav = dir.path().join("one.wav");
    write_wav(&MultiChannelWave::new(chans, 16000).unwrap(), &wav, SampleFormat::Float32).unwrap();

    let o = ufe(&["localize", "--input", p(&wav)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["angles_deg"][0].as_f64(), Some(130.0));

    let o = ufe(&["localize", "--input", p(&dir.path().join("missing.wav"))]);
    assert_eq!(o.status.code(), Some(1));
}
