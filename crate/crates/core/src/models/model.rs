use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{combine, Attention, Averaging};
use super::config::{Mode, ModelConfig};
use crate::array::{
    compute_angle_pool, compute_beam_pool, design_beamformer_bank, uniform_angles, BeamformerBank, SteeringTable,
    DEFAULT_PAIRS,
};
use crate::autodiff::{
    masked_synthesis, masked_synthesis_var, pit_loss, Adam, Checkpoint, Graph, Linear, ParamStore, RecurrentStack,
    SiSnrLoss, Tensor, Var,
};
use crate::dsp::{cos_ipd, stft, ComplexSpectrogram, MultiChannelWave, StftPlan, C64};
use crate::error::{Error, Result};
use crate::ssl::{localize_sources, select_beams, SslResult};

/// Floor added to magnitudes before taking logs.
const LOG_FLOOR: f64 = 1e-8;

/// Recurrent stack followed by one linear head per output.
#[derive(Debug, Clone)]
pub struct MaskNet {
    pub stack: RecurrentStack,
    pub heads: Vec<Linear>,
}

impl MaskNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
        num_heads: usize,
        output_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let stack = RecurrentStack::new(store, &format!("{name}.rnn"), input_dim, hidden, layers, dropout, rng);
        let heads = (0..num_heads)
            .map(|h| Linear::new(store, &format!("{name}.head{h}"), hidden, output_dim, rng))
            .collect();
        Self { stack, heads }
    }

    pub fn input_dim(&self) -> usize {
        self.stack.layers[0].input_dim
    }

    /// Raw (pre-activation) head outputs, each `T x output_dim`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        if g.shape(x)[1] != self.input_dim() {
            return Err(Error::shape("mask net input", &g.shape(x), &[g.shape(x)[0], self.input_dim()]));
        }
        let h = self.stack.forward(g, x)?;
        let h = g.dropout(h, self.stack.dropout_rate);
        self.heads.iter().map(|l| l.forward(g, h)).collect()
    }
}

/// Per-utterance constants: spectra, network input features and the two spatial pools.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub len: usize,
    pub frames: usize,
    pub bins: usize,
    pub spec: ComplexSpectrogram,
    pub y0: Vec<C64>,
    /// Mean of the channel-0 log magnitude; removed from every log-magnitude feature.
    pub log_offset: f64,
    pub logmag0: Tensor,
    /// cosIPD, `T x (pairs * F)`.
    pub ipd: Tensor,
    /// `[logmag0 | ipd]`, `T x 4F`.
    pub unmix_input: Tensor,
    /// Beam pool, `N_b x (T * F)`.
    pub beam_re: Tensor,
    pub beam_im: Tensor,
    pub beam_mag: Tensor,
    /// Angle-feature pool, `N_a x (T * F)`.
    pub angle: Tensor,
}

impl Prepared {
    fn beam_row(&self, n: usize) -> (Tensor, Tensor) {
        let (t, f) = (self.frames, self.bins);
        (
            Tensor {
                rows: t,
                cols: f,
                data: self.beam_re.row_slice(n).to_vec(),
            },
            Tensor {
                rows: t,
                cols: f,
                data: self.beam_im.row_slice(n).to_vec(),
            },
        )
    }

    fn angle_row(&self, a: usize) -> Tensor {
        Tensor {
            rows: self.frames,
            cols: self.bins,
            data: self.angle.row_slice(a).to_vec(),
        }
    }
}

/// Graph nodes of one E2E forward pass.
#[derive(Debug, Clone)]
pub struct E2eNodes {
    pub waves: Vec<Var>,
    pub masks: Vec<Var>,
    pub beam_weights: Var,
    pub angle_weights: Var,
    pub pre_separation: Vec<Var>,
}

/// Inference output for one utterance or block.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub waves: Vec<Vec<f64>>,
    /// Localized (ufe) or most-attended (e2e) direction per output.
    pub angles_deg: Vec<f64>,
    /// Selected (ufe) or most-attended (e2e) beam per output.
    pub beams: Vec<usize>,
    pub beam_weights: Option<Tensor>,
    pub angle_weights: Option<Tensor>,
    pub masks: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub unmix: MaskNet,
    pub extract: MaskNet,
    pub beam_attn: Option<Attention>,
    pub angle_attn: Option<Attention>,
    bank: BeamformerBank,
    steering: SteeringTable,
    plan: StftPlan,
}

pub const NUM_OUTPUTS: usize = 2;

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let geom = config.geometry();
        let bank = design_beamformer_bank(
            &geom,
            config.num_beams,
            config.beamformer,
            config.diagonal_loading,
            config.stft.fft_size,
            config.sample_rate_hz(),
        )?;
        let steering = SteeringTable::new(
            &geom,
            &uniform_angles(config.num_angles),
            config.stft.fft_size,
            config.sample_rate_hz(),
        );
        let plan = StftPlan::new(config.stft)?;
        let f = config.bins();
        let pairs = DEFAULT_PAIRS.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (hid, layers, drop) = (config.hidden, config.layers, config.dropout);
        let unmix = MaskNet::new(
            &mut store,
            "unmix",
            (1 + pairs) * f,
            hid,
            layers,
            drop,
            NUM_OUTPUTS,
            config.embedding_dim,
            &mut rng,
        );
        let ext_in = 3 * f + if config.uses_ipd() { pairs * f } else { 0 };
        let extract = MaskNet::new(&mut store, "extract", ext_in, hid, layers, drop, 1, f, &mut rng);
        let (beam_attn, angle_attn) = match config.mode {
            Mode::Ufe => (None, None),
            Mode::E2e => {
                let (k, d) = (config.embedding_dim, config.projection_dim);
                (
                    Some(Attention::new(&mut store, "attn_beam", k, f, d, &mut rng)),
                    Some(Attention::new(&mut store, "attn_angle", k, f, d, &mut rng)),
                )
            }
        };
        Ok(Self {
            config,
            store,
            unmix,
            extract,
            beam_attn,
            angle_attn,
            bank,
            steering,
            plan,
        })
    }

    pub fn bank(&self) -> &BeamformerBank {
        &self.bank
    }

    pub fn plan(&self) -> &StftPlan {
        &self.plan
    }

    pub fn steering(&self) -> &SteeringTable {
        &self.steering
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    /// Feature extraction shared by every graph built for `wave`.
    pub fn prepare(&self, wave: &MultiChannelWave) -> Result<Prepared> {
        if wave.channels() != self.bank.mics() {
            return Err(Error::InvalidInput(format!(
                "model expects {} channels, got {}",
                self.bank.mics(),
                wave.channels()
            )));
        }
        if wave.sample_rate_hz() != self.config.sample_rate_hz() {
            return Err(Error::InvalidInput(format!(
                "model expects {} Hz audio, got {} Hz",
                self.config.sample_rate_hz(),
                wave.sample_rate_hz()
            )));
        }
        if wave.is_empty() {
            return Err(Error::InvalidInput("empty input".into()));
        }
        let spec = stft(wave, &self.config.stft)?;
        let (t, f) = (spec.frames(), spec.bins());
        let y0 = spec.channel(0).to_vec();
        let lm: Vec<f64> = y0.iter().map(|z| (z.norm() + LOG_FLOOR).ln()).collect();
        let log_offset = lm.iter().sum::<f64>() / lm.len() as f64;
        let logmag0 = Tensor::new(t, f, lm.iter().map(|v| v - log_offset).collect())?;
        let p = DEFAULT_PAIRS.len();
        let raw_ipd = cos_ipd(&spec, &DEFAULT_PAIRS)?;
        let mut ipd = Tensor::zeros(t, p * f);
        for k in 0..p {
            for tt in 0..t {
                ipd.data[tt * p * f + k * f..tt * p * f + (k + 1) * f]
                    .copy_from_slice(&raw_ipd[(k * t + tt) * f..(k * t + tt + 1) * f]);
            }
        }
        let mut unmix_input = Tensor::zeros(t, (1 + p) * f);
        for tt in 0..t {
            let row = &mut unmix_input.data[tt * (1 + p) * f..(tt + 1) * (1 + p) * f];
            row[..f].copy_from_slice(logmag0.row_slice(tt));
            row[f..].copy_from_slice(ipd.row_slice(tt));
        }
        let beams = compute_beam_pool(&self.bank, &spec)?;
        let nb = beams.beams;
        let beam_re = Tensor::new(nb, t * f, beams.data.iter().map(|z| z.re).collect())?;
        let beam_im = Tensor::new(nb, t * f, beams.data.iter().map(|z| z.im).collect())?;
        let beam_mag = Tensor::new(nb, t * f, beams.data.iter().map(|z| z.norm()).collect())?;
        let angles = compute_angle_pool(
            &spec,
            self.bank.geometry(),
            self.config.num_angles,
            &DEFAULT_PAIRS,
            self.config.sample_rate_hz(),
        )?;
        let angle = Tensor::new(self.config.num_angles, t * f, angles.data)?;
        Ok(Prepared {
            len: wave.len(),
            frames: t,
            bins: f,
            spec,
            y0,
            log_offset,
            logmag0,
            ipd,
            unmix_input,
            beam_re,
            beam_im,
            beam_mag,
            angle,
        })
    }

    /// Pre-separation / unmixing head outputs before any activation.
    pub fn unmix_heads(&self, g: &mut Graph, prep: &Prepared) -> Result<Vec<Var>> {
        let x = g.constant(prep.unmix_input.clone());
        self.unmix.forward(g, x)
    }

    fn require_mask_heads(&self) -> Result<()> {
        if self.config.embedding_dim != prep_bins(&self.config) {
            return Err(Error::Config(
                "unmixing masks need embedding_dim equal to the number of bins".into(),
            ));
        }
        Ok(())
    }

    /// Sigmoid masks of the unmixing heads, each `T x F`.
    pub fn unmix_masks(&self, g: &mut Graph, prep: &Prepared) -> Result<Vec<Var>> {
        self.require_mask_heads()?;
        let heads = self.unmix_heads(g, prep)?;
        Ok(heads.into_iter().map(|h| g.sigmoid(h)).collect())
    }

    /// Masked channel-0 synthesis for each unmixing mask.
    pub fn unmix_waves(&self, g: &mut Graph, prep: &Prepared) -> Result<(Vec<Var>, Vec<Var>)> {
        let masks = self.unmix_masks(g, prep)?;
        let waves = masks
            .iter()
            .map(|&m| masked_synthesis(g, m, &prep.y0, &self.plan, prep.len))
            .collect::<Result<Vec<_>>>()?;
        Ok((waves, masks))
    }

    /// Extraction network on one (combined or selected) beam and angle feature. Returns the
    /// mask and the synthesized wave.
    pub fn extract_wave(&self, g: &mut Graph, prep: &Prepared, re: Var, im: Var, angle: Var) -> Result<(Var, Var)> {
        let mag = g.complex_abs(re, im, LOG_FLOOR * LOG_FLOOR)?;
        let lm = g.log(mag);
        let lm = g.add_scalar(lm, -prep.log_offset);
        let spec0 = g.constant(prep.logmag0.clone());
        let mut parts = vec![lm, angle, spec0];
        if self.config.uses_ipd() {
            parts.push(g.constant(prep.ipd.clone()));
        }
        let x = g.concat_cols(&parts)?;
        let out = self.extract.forward(g, x)?;
        let mask = g.sigmoid(out[0]);
        let wave = masked_synthesis_var(g, mask, re, im, &self.plan, prep.len)?;
        Ok((mask, wave))
    }

    /// Extraction on given beam and angle-pool indices (one pair per output).
    pub fn extract_selected(
        &self,
        g: &mut Graph,
        prep: &Prepared,
        beams: &[usize],
        angles: &[usize],
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let mut waves = Vec::new();
        let mut masks = Vec::new();
        for (&b, &a) in beams.iter().zip(angles) {
            if b >= prep.beam_re.rows || a >= prep.angle.rows {
                return Err(Error::InvalidInput(format!("beam {b} or angle {a} out of range")));
            }
            let (re, im) = prep.beam_row(b);
            let re = g.constant(re);
            let im = g.constant(im);
            let ang = g.constant(prep.angle_row(a));
            let (m, w) = self.extract_wave(g, prep, re, im, ang)?;
            masks.push(m);
            waves.push(w);
        }
        Ok((waves, masks))
    }

    /// Full E2E graph: pre-separation, attention over both pools, extraction, synthesis.
    pub fn e2e(&self, g: &mut Graph, prep: &Prepared, averaging: Averaging) -> Result<E2eNodes> {
        let (Some(ba), Some(aa)) = (&self.beam_attn, &self.angle_attn) else {
            return Err(Error::Config("model was not built in e2e mode".into()));
        };
        let heads = self.unmix_heads(g, prep)?;
        let wb = ba.weights(g, &heads, &prep.beam_mag, averaging)?;
        let wa = aa.weights(g, &heads, &prep.angle, averaging)?;
        let bre = g.constant(prep.beam_re.clone());
        let bim = g.constant(prep.beam_im.clone());
        let ang = g.constant(prep.angle.clone());
        let cre = combine(g, wb, bre)?;
        let cim = combine(g, wb, bim)?;
        let cang = combine(g, wa, ang)?;
        let (t, f) = (prep.frames, prep.bins);
        let mut waves = Vec::new();
        let mut masks = Vec::new();
        for h in 0..heads.len() {
            let re = g.slice_rows(cre, h, h + 1)?;
            let re = g.reshape(re, t, f)?;
            let im = g.slice_rows(cim, h, h + 1)?;
            let im = g.reshape(im, t, f)?;
            let a = g.slice_rows(cang, h, h + 1)?;
            let a = g.reshape(a, t, f)?;
            let (m, w) = self.extract_wave(g, prep, re, im, a)?;
            masks.push(m);
            waves.push(w);
        }
        Ok(E2eNodes {
            waves,
            masks,
            beam_weights: wb,
            angle_weights: wa,
            pre_separation: heads,
        })
    }

    /// Grid localization from per-output masks, with the sums restricted to the averaging
    /// window.
    pub fn localize(&self, prep: &Prepared, masks: &[Vec<f64>], averaging: Averaging) -> Result<SslResult> {
        let window = averaging.window(prep.frames)?;
        let f = prep.bins;
        let windowed: Vec<Vec<f64>> = masks
            .iter()
            .map(|m| {
                let mut w = m.clone();
                w[..window.start * f].iter_mut().for_each(|v| *v = 0.0);
                w
            })
            .collect();
        localize_sources(&windowed, &prep.spec, &self.steering, self.config.ssl_epsilon)
    }

    /// Beam and angle-pool indices nearest to each direction.
    pub fn oracle_indices(&self, angles_deg: &[f64]) -> (Vec<usize>, Vec<usize>) {
        let grid = self.steering.angles_deg();
        let beams = angles_deg.iter().map(|&a| self.bank.nearest_beam(a)).collect();
        let angles = angles_deg
            .iter()
            .map(|&a| {
                let mut best = 0;
                for (k, &g) in grid.iter().enumerate() {
                    if crate::array::circular_distance_deg(a, g) < crate::array::circular_distance_deg(a, grid[best]) - 1e-9 {
                        best = k;
                    }
                }
                best
            })
            .collect();
        (beams, angles)
    }

    /// Separation of one span of audio with the model's pipeline.
    pub fn separate(&self, wave: &MultiChannelWave, averaging: Averaging) -> Result<Separation> {
        let prep = self.prepare(wave)?;
        self.separate_prepared(&prep, averaging)
    }

    pub fn separate_prepared(&self, prep: &Prepared, averaging: Averaging) -> Result<Separation> {
        let mut g = Graph::new(&self.store, false, 0);
        match self.config.mode {
            Mode::E2e => {
                let n = self.e2e(&mut g, prep, averaging)?;
                let bw = g.value(n.beam_weights).clone();
                let beams: Vec<usize> = (0..bw.rows).map(|h| argmax(bw.row_slice(h))).collect();
                Ok(Separation {
                    waves: n.waves.iter().map(|&w| g.value(w).data.clone()).collect(),
                    angles_deg: beams.iter().map(|&b| self.bank.center_angles_deg()[b]).collect(),
                    beams,
                    beam_weights: Some(bw),
                    angle_weights: Some(g.value(n.angle_weights).clone()),
                    masks: n.masks.iter().map(|&m| g.value(m).clone()).collect(),
                })
            }
            Mode::Ufe => {
                let masks = self.unmix_masks(&mut g, prep)?;
                let mvals: Vec<Vec<f64>> = masks.iter().map(|&m| g.value(m).data.clone()).collect();
                let ssl = self.localize(prep, &mvals, averaging)?;
                let beams = select_beams(&ssl, &self.bank);
                let (waves, emasks) = self.extract_selected(&mut g, prep, &beams, &ssl.angle_indices)?;
                Ok(Separation {
                    waves: waves.iter().map(|&w| g.value(w).data.clone()).collect(),
                    angles_deg: ssl.angles_deg.clone(),
                    beams,
                    beam_weights: None,
                    angle_weights: None,
                    masks: emasks.iter().map(|&m| g.value(m).clone()).collect(),
                })
            }
        }
    }

    /// Permutation-invariant E2E objective.
    pub fn e2e_loss(
        &self,
        g: &mut Graph,
        prep: &Prepared,
        targets: &[&[f64]],
        averaging: Averaging,
    ) -> Result<(Var, Vec<usize>)> {
        let n = self.e2e(g, prep, averaging)?;
        pit_loss(g, &SiSnrLoss::default(), &n.waves, targets)
    }

    /// Permutation-invariant unmixing objective against channel-0 references.
    pub fn unmix_loss(&self, g: &mut Graph, prep: &Prepared, references: &[&[f64]]) -> Result<(Var, Vec<usize>)> {
        let (waves, _) = self.unmix_waves(g, prep)?;
        pit_loss(g, &SiSnrLoss::default(), &waves, references)
    }

    /// Permutation-invariant extraction objective with beams and angle features picked at
    /// the given directions.
    pub fn extraction_loss(
        &self,
        g: &mut Graph,
        prep: &Prepared,
        angles_deg: &[f64],
        targets: &[&[f64]],
    ) -> Result<(Var, Vec<usize>)> {
        let (beams, angles) = self.oracle_indices(angles_deg);
        let (waves, _) = self.extract_selected(g, prep, &beams, &angles)?;
        pit_loss(g, &SiSnrLoss::default(), &waves, &targets[..waves.len()])
    }

    /// Checkpoint whose metadata carries this model's configuration under `[model]`, plus
    /// any extra TOML text.
    pub fn to_checkpoint(&self, adam: Option<&Adam>, extra_meta: &str) -> Checkpoint {
        let mut table = toml::Table::new();
        table.insert(
            "model".into(),
            toml::Value::try_from(&self.config).expect("model config serializes"),
        );
        let mut meta = toml::to_string(&table).expect("metadata serializes");
        if !extra_meta.is_empty() {
            meta.push('\n');
            meta.push_str(extra_meta);
        }
        Checkpoint::from_store(&self.store, meta, adam)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let table: toml::Table = toml::from_str(&ck.meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let model = table
            .get("model")
            .ok_or_else(|| Error::Format("checkpoint metadata lacks a [model] table".into()))?;
        let config: ModelConfig = model
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Format(format!("checkpoint model config: {e}")))?;
        let mut m = Self::new(config)?;
        ck.load_into(&mut m.store)?;
        Ok(m)
    }

    /// Copies every parameter of `other` whose name and shape exist here; returns the count.
    pub fn load_params_from(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        self.store
            .load_from(other.iter().filter(|(n, _)| n.starts_with(prefix)))
    }
}

fn prep_bins(c: &ModelConfig) -> usize {
    c.bins()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{array_manifold, bin_frequency};
    use crate::autodiff::gradcheck::check_params;

    fn tiny(mode: Mode) -> ModelConfig {
        ModelConfig {
            mode,
            hidden: 4,
            layers: 1,
            dropout: 0.0,
            embedding_dim: if mode == Mode::Ufe { 33 } else { 6 },
            projection_dim: 3,
            num_beams: 6,
            num_angles: 12,
            stft: crate::dsp::StftConfig {
                fft_size: 64,
                hop: 32,
                ..Default::default()
            },
            seed: 3,
            ..ModelConfig::default()
        }
    }

    fn noise_wave(channels: usize, len: usize, seed: u64) -> MultiChannelWave {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels)
            .map(|_| (0..len).map(|_| rng.random_range(-0.1..0.1)).collect())
            .collect();
        MultiChannelWave::new(data, 16000).unwrap()
    }

    #[test]
    fn untrained_unmixing_masks_are_open_interval() {
        let m = Model::new(ModelConfig {
            mode: Mode::Ufe,
            hidden: 8,
            layers: 1,
            ..ModelConfig::default()
        })
        .unwrap();
        let prep = m.prepare(&noise_wave(7, 8000, 1)).unwrap();
        let mut g = Graph::new(&m.store, false, 0);
        let masks = m.unmix_masks(&mut g, &prep).unwrap();
        assert_eq!(masks.len(), 2);
        for &mk in &masks {
            assert_eq!(g.shape(mk), [prep.frames, 257]);
            assert!(g.value(mk).data.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn outputs_match_input_length_in_both_modes() {
        for mode in [Mode::Ufe, Mode::E2e] {
            let m = Model::new(tiny(mode)).unwrap();
            let w = noise_wave(7, 1234, 2);
            let s = m.separate(&w, Averaging::Offline).unwrap();
            assert_eq!(s.waves.len(), 2);
            assert!(s.waves.iter().all(|x| x.len() == 1234));
            assert!(m.separate(&noise_wave(3, 1234, 2), Averaging::Offline).is_err());
        }
    }

    #[test]
    fn e2e_gradients_match_finite_differences() {
        let m = Model::new(tiny(Mode::E2e)).unwrap();
        let w = noise_wave(7, 8000, 4);
        let prep = m.prepare(&w).unwrap();
        let targets = [w.channel(0).to_vec(), w.channel(3).to_vec()];
        let refs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
        let report = check_params(
            &m.store,
            |g| Ok(m.e2e_loss(g, &prep, &refs, Averaging::Offline)?.0),
            Some(120),
            1e-5,
            9,
        )
        .unwrap();
        assert_eq!(report.checked, 120);
        assert!(report.max_rel_err < 1e-4, "{report:?}");
        assert!(report.floored * 2 < report.checked, "{report:?}");
    }

    #[test]
    fn nearly_every_parameter_receives_gradient() {
        let m = Model::new(tiny(Mode::E2e)).unwrap();
        let w = noise_wave(7, 4000, 5);
        let prep = m.prepare(&w).unwrap();
        let t = [w.channel(1).to_vec(), w.channel(2).to_vec()];
        let refs: Vec<&[f64]> = t.iter().map(|x| x.as_slice()).collect();
        let mut g = Graph::new(&m.store, false, 0);
        let (loss, _) = m.e2e_loss(&mut g, &prep, &refs, Averaging::Offline).unwrap();
        let grads = g.backward(loss).unwrap();
        let total = m.store.num_scalars();
        let nonzero: usize = m
            .store
            .ids()
            .map(|id| grads.params.get(id).map_or(0, |t| t.data.iter().filter(|v| v.abs() > 0.0).count()))
            .sum();
        assert!(nonzero as f64 >= 0.99 * total as f64, "{nonzero}/{total}");
    }

    #[test]
    fn swapping_head_parameters_swaps_outputs() {
        let mut m = Model::new(tiny(Mode::E2e)).unwrap();
        let w = noise_wave(7, 3000, 6);
        let a = m.separate(&w, Averaging::Offline).unwrap();
        for suffix in ["weight", "bias"] {
            let i0 = m.store.find(&format!("unmix.head0.{suffix}")).unwrap();
            let i1 = m.store.find(&format!("unmix.head1.{suffix}")).unwrap();
            let t0 = m.store.get(i0).clone();
            *m.store.get_mut(i0) = m.store.get(i1).clone();
            *m.store.get_mut(i1) = t0;
        }
        let b = m.separate(&w, Averaging::Offline).unwrap();
        assert_eq!(a.waves[0], b.waves[1]);
        assert_eq!(a.waves[1], b.waves[0]);
    }

    #[test]
    fn checkpoint_round_trip_restores_model() {
        let m = Model::new(tiny(Mode::E2e)).unwrap();
        let ck = m.to_checkpoint(None, "[train]\nepoch = 2\n");
        let back = Model::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.store, m.store);
        let w = noise_wave(7, 2000, 7);
        assert_eq!(
            back.separate(&w, Averaging::Offline).unwrap(),
            m.separate(&w, Averaging::Offline).unwrap()
        );
        let mut other = tiny(Mode::E2e);
        other.hidden = 5;
        let mut ck2 = ck.clone();
        ck2.meta = Model::new(other).unwrap().to_checkpoint(None, "").meta;
        assert!(Model::from_checkpoint(&ck2).is_err());
    }

    /// Anechoic far-field mixture of white-noise sources at grid directions, in the STFT
    /// domain, with oracle (ideal binary) masks.
    #[test]
    fn oracle_masks_select_ground_truth_beams() {
        let m = Model::new(ModelConfig {
            mode: Mode::Ufe,
            hidden: 4,
            layers: 1,
            ..ModelConfig::default()
        })
        .unwrap();
        let geom = m.bank().geometry().clone();
        let frames = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (a0, a1) in [(0.0, 90.0), (40.0, 250.0), (300.0, 120.0)] {
            let mut data = vec![C64::new(0.0, 0.0); 7 * frames * 257];
            let mut masks = vec![vec![0.0; frames * 257]; 2];
            for t in 0..frames {
                for k in 0..257 {
                    let f = bin_frequency(k, 512, 16000);
                    let s: Vec<C64> = (0..2)
                        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                        .collect();
                    let d0 = array_manifold(&geom, a0, f);
                    let d1 = array_manifold(&geom, a1, f);
                    for c in 0..7 {
                        data[(c * frames + t) * 257 + k] = s[0] * d0[c] + s[1] * d1[c];
                    }
                    let dom = if s[0].norm() > s[1].norm() { 0 } else { 1 };
                    masks[dom][t * 257 + k] = 1.0;
                }
            }
            let spec = ComplexSpectrogram::new(data, 7, frames, 512, 256).unwrap();
            let prep_like = Prepared {
                len: 0,
                frames,
                bins: 257,
                spec,
                y0: vec![],
                log_offset: 0.0,
                logmag0: Tensor::default(),
                ipd: Tensor::default(),
                unmix_input: Tensor::default(),
                beam_re: Tensor::default(),
                beam_im: Tensor::default(),
                beam_mag: Tensor::default(),
                angle: Tensor::default(),
            };
            let ssl = m.localize(&prep_like, &masks, Averaging::Offline).unwrap();
            let beams = select_beams(&ssl, m.bank());
            let truth = m.oracle_indices(&[a0, a1]).0;
            assert_eq!(beams, truth, "{a0} {a1}: {:?}", ssl.angles_deg);
        }
    }
}
