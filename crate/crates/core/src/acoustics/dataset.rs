//! Dataset generation: random rooms and placements, WAV output and a JSONL manifest.
//!
//! Manifest records are single-line JSON objects with fields in this fixed order:
//! `id, mixture_path, target_paths, angles_deg, overlap_ratio, snr_db, split, condition,
//! noise_snr_db, t60_s, num_speakers, speakers, image_paths`. Paths are relative to the
//! manifest's directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mixture::{place_array, synthesize_mixture_within, MixtureSpec};
use super::rir::RoomSpec;
use super::speech::{synthesize_utterance, Voice};
use crate::array::{circular_distance_deg, design_beamformer_bank, ArrayGeometry, BeamformerBank, BeamformerDesign};
use crate::dsp::wav::{read_wav, write_wav, SampleFormat};
use crate::dsp::{MultiChannelWave, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum OverlapCondition {
    /// Overlap drawn from [0, 1].
    #[default]
    #[serde(rename = "train", alias = "TRAIN")]
    Train,
    #[serde(rename = "OV35", alias = "ov35")]
    Ov35,
    #[serde(rename = "OV75", alias = "ov75")]
    Ov75,
}

impl OverlapCondition {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            OverlapCondition::Train => (0.0, 1.0),
            OverlapCondition::Ov35 => (0.20, 0.50),
            OverlapCondition::Ov75 => (0.50, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OverlapCondition::Train => "train",
            OverlapCondition::Ov35 => "OV35",
            OverlapCondition::Ov75 => "OV75",
        }
    }
}

impl std::str::FromStr for OverlapCondition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Self::Train),
            "ov35" => Ok(Self::Ov35),
            "ov75" => Ok(Self::Ov75),
            _ => Err(Error::Config(format!("unknown overlap condition `{s}` (train, OV35, OV75)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

impl From<WavFormat> for SampleFormat {
    fn from(f: WavFormat) -> Self {
        match f {
            WavFormat::Pcm16 => SampleFormat::Pcm16,
            WavFormat::Float32 => SampleFormat::Float32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub condition: OverlapCondition,
    pub split: String,
    /// Length each dry source is cropped to, seconds.
    pub duration_s: f64,
    pub single_speaker_prob: f64,
    pub room_length_m: [f64; 2],
    pub room_width_m: [f64; 2],
    pub room_height_m: [f64; 2],
    pub t60_s: [f64; 2],
    pub mixing_snr_db: [f64; 2],
    pub noise_snr_db: [f64; 2],
    /// Horizontal source distance from the array centre.
    pub source_distance_m: [f64; 2],
    pub array_height_m: [f64; 2],
    /// Source height above the array plane.
    pub source_elevation_m: [f64; 2],
    pub min_angle_separation_deg: f64,
    pub wav_format: WavFormat,
    pub write_images: bool,
    pub num_beams: usize,
    pub beamformer: BeamformerDesign,
    pub diagonal_loading: f64,
    pub fft_size: usize,
    pub geometry: Option<ArrayGeometry>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            condition: OverlapCondition::Train,
            split: "train".into(),
            duration_s: 4.0,
            single_speaker_prob: 0.0,
            room_length_m: [2.0, 20.0],
            room_width_m: [2.0, 20.0],
            room_height_m: [2.0, 5.0],
            t60_s: [0.1, 0.5],
            mixing_snr_db: [-5.0, 5.0],
            noise_snr_db: [10.0, 20.0],
            source_distance_m: [0.75, 2.5],
            array_height_m: [0.7, 1.0],
            source_elevation_m: [0.0, 0.5],
            min_angle_separation_deg: 20.0,
            wav_format: WavFormat::Pcm16,
            write_images: false,
            num_beams: 18,
            beamformer: BeamformerDesign::Superdirective,
            diagonal_loading: 1e-2,
            fft_size: 512,
            geometry: None,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0] <= r[1] && r[0] >= lo && r[1] <= hi) {
        return Err(Error::Config(format!("{name} range {r:?} must be ordered and within [{lo}, {hi}]")));
    }
    Ok(())
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("room_length_m", self.room_length_m, 2.0, 20.0)?;
        check_range("room_width_m", self.room_width_m, 2.0, 20.0)?;
        check_range("room_height_m", self.room_height_m, 2.0, 5.0)?;
        check_range("t60_s", self.t60_s, 0.1, 0.5)?;
        check_range("mixing_snr_db", self.mixing_snr_db, -5.0, 5.0)?;
        check_range("noise_snr_db", self.noise_snr_db, 10.0, 20.0)?;
        check_range("source_distance_m", self.source_distance_m, 0.1, 20.0)?;
        check_range("array_height_m", self.array_height_m, 0.1, 5.0)?;
        check_range("source_elevation_m", self.source_elevation_m, -5.0, 5.0)?;
        check_range("single_speaker_prob", [self.single_speaker_prob; 2], 0.0, 1.0)?;
        if !(self.duration_s > 0.1) {
            return Err(Error::Config("duration_s must exceed 0.1 s".into()));
        }
        if self.num_beams == 0 {
            return Err(Error::Config("num_beams must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> ArrayGeometry {
        self.geometry.clone().unwrap_or_else(ArrayGeometry::reference)
    }

    pub fn bank(&self) -> Result<BeamformerBank> {
        design_beamformer_bank(
            &self.geometry(),
            self.num_beams,
            self.beamformer,
            self.diagonal_loading,
            self.fft_size,
            SAMPLE_RATE_HZ,
        )
    }
}

/// One clean single-speaker recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceEntry {
    pub speaker: String,
    pub path: PathBuf,
    pub split: Option<String>,
}

/// Reads `speaker<TAB>path[<TAB>split]` lines; blank lines and `#` comments are skipped.
/// Relative paths resolve against the list's directory.
pub fn read_source_list(path: impl AsRef<Path>) -> Result<Vec<SourceEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(Error::Format(format!(
                "{}:{}: expected `speaker<TAB>path[<TAB>split]`",
                path.display(),
                i + 1
            )));
        }
        out.push(SourceEntry {
            speaker: cols[0].to_string(),
            path: base.join(cols[1]),
            split: cols.get(2).map(|s| s.to_string()),
        });
    }
    Ok(out)
}

/// Writes a corpus of synthetic speakers and returns its source list (also saved as
/// `sources.tsv` in `out_dir`). The last `test_speakers` speakers are labelled `test`, the
/// `valid_speakers` before them `valid`, and the rest `train`.
pub fn write_synthetic_corpus(
    out_dir: impl AsRef<Path>,
    speakers: usize,
    utterances_per_speaker: usize,
    valid_speakers: usize,
    test_speakers: usize,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<SourceEntry>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let len = (duration_s * SAMPLE_RATE_HZ as f64).round() as usize;
    let mut list = String::new();
    let mut entries = Vec::new();
    for s in 0..speakers {
        let voice = Voice::from_seed(seed.wrapping_mul(1_000_003).wrapping_add(s as u64));
        let split = if s + test_speakers >= speakers {
            "test"
        } else if s + test_speakers + valid_speakers >= speakers {
            "valid"
        } else {
            "train"
        };
        for u in 0..utterances_per_speaker {
            let x = synthesize_utterance(&voice, len, SAMPLE_RATE_HZ, derive_seed(seed, &format!("spk{s}-utt{u}")));
            let name = format!("spk{s:03}_{u:03}.wav");
            let p = out_dir.join(&name);
            write_wav(&MultiChannelWave::mono(x, SAMPLE_RATE_HZ)?, &p, SampleFormat::Float32)?;
            writeln!(list, "spk{s:03}\t{name}\t{split}").unwrap();
            entries.push(SourceEntry {
                speaker: format!("spk{s:03}"),
                path: p,
                split: Some(split.to_string()),
            });
        }
    }
    let lp = out_dir.join("sources.tsv");
    std::fs::write(&lp, list).map_err(|e| Error::io(&lp, e))?;
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub mixture_path: String,
    pub target_paths: Vec<String>,
    pub angles_deg: Vec<f64>,
    pub overlap_ratio: f64,
    pub snr_db: f64,
    pub split: String,
    #[serde(default)]
    pub condition: String,
    #[serde(default)]
    pub noise_snr_db: f64,
    #[serde(default)]
    pub t60_s: f64,
    #[serde(default = "two")]
    pub num_speakers: usize,
    #[serde(default)]
    pub speakers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_paths: Vec<String>,
}

fn two() -> usize {
    2
}

/// A manifest loaded from disk, with paths resolved against its directory.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub base: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(r);
        }
        Ok(Self {
            base: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            records,
        })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mixture and the two oracle targets of record `i`.
    pub fn load_example(&self, i: usize) -> Result<(MultiChannelWave, Vec<Vec<f64>>)> {
        let r = &self.records[i];
        let mix = read_wav(self.resolve(&r.mixture_path))?;
        let mut targets = Vec::with_capacity(r.target_paths.len());
        for p in &r.target_paths {
            let t = read_wav(self.resolve(p))?;
            if t.len() != mix.len() {
                return Err(Error::Format(format!(
                    "{}: target length {} differs from mixture length {}",
                    r.id,
                    t.len(),
                    mix.len()
                )));
            }
            targets.push(t.into_data().swap_remove(0));
        }
        Ok((mix, targets))
    }

    /// Reverberant per-speaker images of record `i`, when the dataset was built with
    /// `write_images`.
    pub fn load_images(&self, i: usize) -> Result<Option<Vec<MultiChannelWave>>> {
        let r = &self.records[i];
        if r.image_paths.is_empty() {
            return Ok(None);
        }
        r.image_paths
            .iter()
            .take(r.num_speakers)
            .map(|p| read_wav(self.resolve(p)))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

pub fn manifest_line(r: &ManifestRecord) -> String {
    serde_json::to_string(r).expect("manifest record serializes")
}

/// Stream seed for one example: first 8 bytes of SHA-256 over the dataset seed and the id.
pub fn derive_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

struct Draw {
    spec: MixtureSpec,
    room: RoomSpec,
    picks: Vec<usize>,
    crops: Vec<f64>,
}

fn draw_example(
    cfg: &SimulationConfig,
    geom: &ArrayGeometry,
    pool: &[usize],
    entries: &[SourceEntry],
    id: &str,
    seed: u64,
) -> Result<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, id));
    let single = cfg.single_speaker_prob > 0.0 && rng.random_bool(cfg.single_speaker_prob);
    let k = if single { 1 } else { 2 };
    let first = pool[rng.random_range(0..pool.len())];
    let mut picks = vec![first];
    if k == 2 {
        let others: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&i| entries[i].speaker != entries[first].speaker)
            .collect();
        picks.push(others[rng.random_range(0..others.len())]);
    }
    let (lo, hi) = cfg.condition.bounds();
    let spec = MixtureSpec {
        num_speakers: k,
        mixing_snr_db: uniform(&mut rng, cfg.mixing_snr_db),
        noise_snr_db: uniform(&mut rng, cfg.noise_snr_db),
        overlap_ratio: if k == 2 { uniform(&mut rng, [lo, hi]) } else { 0.0 },
        seed: rng.random(),
    };
    let radius = geom
        .mics
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
        .fold(0.0, f64::max);
    for _ in 0..1000 {
        let dims = [
            uniform(&mut rng, cfg.room_length_m),
            uniform(&mut rng, cfg.room_width_m),
            uniform(&mut rng, cfg.room_height_m),
        ];
        let t60 = uniform(&mut rng, cfg.t60_s);
        let margin = 0.5f64.min(dims[0] / 4.0).min(dims[1] / 4.0) + radius;
        let center = [
            rng.random_range(margin..dims[0] - margin),
            rng.random_range(margin..dims[1] - margin),
            uniform(&mut rng, cfg.array_height_m).min(dims[2] - 0.3),
        ];
        let mut sources = Vec::new();
        let mut azimuths: Vec<f64> = Vec::new();
        for _ in 0..200 {
            if sources.len() == k {
                break;
            }
            let az: f64 = rng.random_range(0.0..360.0);
            let d = uniform(&mut rng, cfg.source_distance_m);
            let z = center[2] + uniform(&mut rng, cfg.source_elevation_m);
            let p = [center[0] + d * az.to_radians().cos(), center[1] + d * az.to_radians().sin(), z];
            let ok_inside = (0..3).all(|i| p[i] > 0.2 && p[i] < dims[i] - 0.2);
            let ok_sep = azimuths
                .iter()
                .all(|&a| circular_distance_deg(a, az) >= cfg.min_angle_separation_deg);
            if ok_inside && ok_sep {
                sources.push(p);
                azimuths.push(az);
            }
        }
        if sources.len() == k {
            let room = RoomSpec {
                dims_m: dims,
                t60_s: t60,
                source_positions_m: sources,
                mic_positions_m: place_array(geom, center),
            };
            let crops = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            return Ok(Draw { spec, room, picks, crops });
        }
    }
    Err(Error::InvalidInput(format!("{id}: could not place sources inside any sampled room")))
}

fn load_sources(entries: &[SourceEntry], draw: &Draw, max_len: usize) -> Result<Vec<Vec<f64>>> {
    let mut waves = Vec::new();
    for &i in &draw.picks {
        let w = read_wav(&entries[i].path)?;
        if w.sample_rate_hz() != SAMPLE_RATE_HZ {
            return Err(Error::UnsupportedFormat(format!(
                "{}: sample rate {} Hz, expected {SAMPLE_RATE_HZ}",
                entries[i].path.display(),
                w.sample_rate_hz()
            )));
        }
        waves.push(w.into_data().swap_remove(0));
    }
    // equal lengths keep every overlap ratio reachable
    let len = waves.iter().map(|w| w.len()).min().unwrap().min(max_len);
    Ok(waves
        .into_iter()
        .zip(&draw.crops)
        .map(|(w, &c)| {
            let start = ((w.len() - len) as f64 * c) as usize;
            w[start..start + len].to_vec()
        })
        .collect())
}

fn rel(p: &str) -> String {
    format!("wav/{p}")
}

fn build_one(
    cfg: &SimulationConfig,
    geom: &ArrayGeometry,
    bank: &BeamformerBank,
    entries: &[SourceEntry],
    pool: &[usize],
    out_dir: &Path,
    index: usize,
    seed: u64,
) -> Result<ManifestRecord> {
    let id = format!("{}-{}-{index:06}", cfg.split, cfg.condition.name());
    let draw = draw_example(cfg, geom, pool, entries, &id, seed)?;
    let max_len = (cfg.duration_s * SAMPLE_RATE_HZ as f64).round() as usize;
    let waves = load_sources(entries, &draw, max_len)?;
    let ex = synthesize_mixture_within(&draw.spec, &waves, &draw.room, bank, &id, Some(cfg.condition.bounds()))?;
    let fmt: SampleFormat = cfg.wav_format.into();
    let wav_dir = out_dir.join("wav");
    let mix_name = format!("{id}.mix.wav");
    write_wav(&ex.mixture, wav_dir.join(&mix_name), fmt)?;
    let mut target_paths = Vec::new();
    for (k, t) in ex.oracle_targets.iter().enumerate() {
        let name = format!("{id}.target{k}.wav");
        write_wav(&MultiChannelWave::mono(t.clone(), SAMPLE_RATE_HZ)?, wav_dir.join(&name), fmt)?;
        target_paths.push(rel(&name));
    }
    let mut image_paths = Vec::new();
    if cfg.write_images {
        for (k, im) in ex.clean_sources.iter().enumerate() {
            let name = format!("{id}.image{k}.wav");
            write_wav(im, wav_dir.join(&name), fmt)?;
            image_paths.push(rel(&name));
        }
        let name = format!("{id}.noise.wav");
        write_wav(&ex.noise, wav_dir.join(&name), fmt)?;
        image_paths.push(rel(&name));
    }
    Ok(ManifestRecord {
        id,
        mixture_path: rel(&mix_name),
        target_paths,
        angles_deg: ex.oracle_angles_deg,
        overlap_ratio: ex.overlap_ratio,
        snr_db: draw.spec.mixing_snr_db,
        split: cfg.split.clone(),
        condition: cfg.condition.name().to_string(),
        noise_snr_db: draw.spec.noise_snr_db,
        t60_s: draw.room.t60_s,
        num_speakers: draw.spec.num_speakers,
        speakers: draw.picks.iter().map(|&i| entries[i].speaker.clone()).collect(),
        image_paths,
    })
}

/// Generates `count` examples into `out_dir` (WAVs under `out_dir/wav`) and writes
/// `out_dir/manifest.jsonl`. Only sources labelled with `cfg.split` are used when the source
/// list carries split labels.
pub fn build_dataset(
    entries: &[SourceEntry],
    out_dir: impl AsRef<Path>,
    count: usize,
    seed: u64,
    cfg: &SimulationConfig,
) -> Result<Vec<ManifestRecord>> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir.join("wav")).map_err(|e| Error::io(out_dir, e))?;
    let labelled = entries.iter().any(|e| e.split.is_some());
    let pool: Vec<usize> = (0..entries.len())
        .filter(|&i| !labelled || entries[i].split.as_deref() == Some(cfg.split.as_str()))
        .collect();
    let speakers: BTreeSet<&str> = pool.iter().map(|&i| entries[i].speaker.as_str()).collect();
    let need = if cfg.single_speaker_prob >= 1.0 { 1 } else { 2 };
    if count > 0 && speakers.len() < need {
        return Err(Error::InvalidInput(format!(
            "split `{}` has {} distinct speaker(s); at least {need} needed",
            cfg.split,
            speakers.len()
        )));
    }
    let geom = cfg.geometry();
    let bank = cfg.bank()?;
    let work = |i: usize| build_one(cfg, &geom, &bank, entries, &pool, out_dir, i, seed);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<ManifestRecord>> = {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(work).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<ManifestRecord>> = (0..count).map(work).collect();
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&manifest_line(r));
        text.push('\n');
    }
    let mp = out_dir.join("manifest.jsonl");
    std::fs::write(&mp, text).map_err(|e| Error::io(&mp, e))?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(dir: &Path) -> Vec<SourceEntry> {
        write_synthetic_corpus(dir.join("src"), 4, 1, 0, 2, 1.0, 3).unwrap()
    }

    fn small_cfg() -> SimulationConfig {
        SimulationConfig {
            duration_s: 1.0,
            room_length_m: [3.0, 5.0],
            room_width_m: [3.0, 5.0],
            room_height_m: [2.5, 3.0],
            t60_s: [0.1, 0.2],
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn zero_count_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let recs = build_dataset(&[], dir.path(), 0, 1, &small_cfg()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap(), "");
    }

    #[test]
    fn same_seed_same_manifest_and_splits_are_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let src = corpus(dir.path());
        let cfg = SimulationConfig {
            condition: OverlapCondition::Ov35,
            ..small_cfg()
        };
        let a = build_dataset(&src, dir.path().join("a"), 3, 9, &cfg).unwrap();
        build_dataset(&src, dir.path().join("b"), 3, 9, &cfg).unwrap();
        let ma = std::fs::read(dir.path().join("a/manifest.jsonl")).unwrap();
        let mb = std::fs::read(dir.path().join("b/manifest.jsonl")).unwrap();
        assert_eq!(ma, mb);
        for r in &a {
            assert!((0.2..=0.5).contains(&r.overlap_ratio), "{}", r.overlap_ratio);
        }
        let test_cfg = SimulationConfig {
            split: "test".into(),
            ..cfg
        };
        let t = build_dataset(&src, dir.path().join("t"), 2, 9, &test_cfg).unwrap();
        let train_spk: BTreeSet<_> = a.iter().flat_map(|r| r.speakers.clone()).collect();
        for r in &t {
            for s in &r.speakers {
                assert!(!train_spk.contains(s));
            }
        }
        let m = Manifest::load(dir.path().join("a/manifest.jsonl")).unwrap();
        assert_eq!(m.records, a);
        let (mix, targets) = m.load_example(0).unwrap();
        assert_eq!(mix.channels(), 7);
        assert_eq!(targets.len(), 2);
    }

    #[test]
    fn manifest_field_order_is_stable() {
        let r = ManifestRecord {
            id: "x".into(),
            mixture_path: "m".into(),
            target_paths: vec!["a".into()],
            angles_deg: vec![1.5],
            overlap_ratio: 0.25,
            snr_db: 1.0,
            split: "train".into(),
            condition: "OV35".into(),
            noise_snr_db: 12.0,
            t60_s: 0.2,
            num_speakers: 1,
            speakers: vec!["s".into()],
            image_paths: vec![],
        };
        assert_eq!(
            manifest_line(&r),
            r#"{"id":"x","mixture_path":"m","target_paths":["a"],"angles_deg":[1.5],"overlap_ratio":0.25,"snr_db":1.0,"split":"train","condition":"OV35","noise_snr_db":12.0,"t60_s":0.2,"num_speakers":1,"speakers":["s"]}"#
        );
    }

    #[test]
    fn too_few_speakers_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let src = write_synthetic_corpus(dir.path().join("src"), 3, 1, 0, 2, 0.5, 1).unwrap();
        // one train speaker only
        assert!(matches!(
            build_dataset(&src, dir.path().join("o"), 1, 1, &small_cfg()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn source_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let src = corpus(dir.path());
        let back = read_source_list(dir.path().join("src/sources.tsv")).unwrap();
        assert_eq!(back, src);
        std::fs::write(dir.path().join("bad.tsv"), "only-one-column\n").unwrap();
        assert!(read_source_list(dir.path().join("bad.tsv")).is_err());
    }
}
