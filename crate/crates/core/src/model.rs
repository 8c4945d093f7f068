//! The summarization network: encoder-fusion LSTM over all segment words
//! with visual attention, simple or hierarchical encoder-attention, and an
//! attentive LSTM decoder. `DecoderOnly` is the temporal-attention baseline
//! (decoder sub-net alone), also used as the segment captioner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ProposalInput;
use crate::error::{Error, Result};
use crate::nn::{attend, embed, lstm_cell_step, mlp2, uniform, AttentionKeys, AttentionParams, LstmParams, Mlp2Params};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionMode {
    /// Flat attention over every encoder hidden state.
    #[serde(rename = "SA")]
    Simple,
    /// Per-sentence group attention feeding a second LSTM.
    #[serde(rename = "HA")]
    Hierarchical,
    /// No summarization encoder.
    #[serde(rename = "TA")]
    DecoderOnly,
}

impl AttentionMode {
    pub fn label(self) -> &'static str {
        match self {
            AttentionMode::Simple => "SA",
            AttentionMode::Hierarchical => "HA",
            AttentionMode::DecoderOnly => "TA",
        }
    }

    pub fn has_encoder(self) -> bool {
        self != AttentionMode::DecoderOnly
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SA" => Ok(AttentionMode::Simple),
            "HA" => Ok(AttentionMode::Hierarchical),
            "TA" => Ok(AttentionMode::DecoderOnly),
            _ => Err(Error::Config(format!("unknown attention mode {s:?} (expected SA, HA or TA)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizerConfig {
    /// Segments per proposal (N_m).
    pub n_segments: usize,
    /// Words kept per segment sentence (N_k).
    pub n_words: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    /// Word embedding width; also the width of the fused LSTM input.
    pub embed: usize,
    pub vocab_size: usize,
    pub attention_hidden: usize,
    pub mlp_hidden: usize,
    pub mode: AttentionMode,
    /// Inverted-dropout keep probability on LSTM outputs during training.
    pub keep_prob: f64,
    /// Visual attention input to the encoder fusion block.
    pub visual_encoder: bool,
    /// Visual attention input to the decoder fusion block.
    pub visual_decoder: bool,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        SummarizerConfig {
            n_segments: 20,
            n_words: 25,
            feature_dim: 500,
            hidden: 512,
            embed: 512,
            vocab_size: 6994,
            attention_hidden: 512,
            mlp_hidden: 512,
            mode: AttentionMode::Hierarchical,
            keep_prob: 0.8,
            visual_encoder: true,
            visual_decoder: true,
        }
    }
}

impl SummarizerConfig {
    /// Smallest configuration the finite-difference checks run on.
    pub fn tiny(mode: AttentionMode) -> Self {
        SummarizerConfig {
            n_segments: 3,
            n_words: 4,
            feature_dim: 8,
            hidden: 16,
            embed: 16,
            vocab_size: 20,
            attention_hidden: 16,
            mlp_hidden: 16,
            mode,
            keep_prob: 0.8,
            visual_encoder: true,
            visual_decoder: true,
        }
    }

    pub fn encoder_len(&self) -> usize {
        self.n_segments * self.n_words
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("n_segments", self.n_segments),
            ("n_words", self.n_words),
            ("feature_dim", self.feature_dim),
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("attention_hidden", self.attention_hidden),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size <= crate::data::RESERVED.len() {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no room beyond the reserved tokens",
                self.vocab_size
            )));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!("keep_prob {} must be in (0, 1]", self.keep_prob)));
        }
        Ok(())
    }

    fn decoder_fusion_width(&self) -> usize {
        let visual = if self.visual_decoder { self.feature_dim } else { 0 };
        let summary = if self.mode.has_encoder() { self.hidden } else { 0 };
        visual + self.embed + summary
    }

    fn encoder_fusion_width(&self) -> usize {
        let visual = if self.visual_encoder { self.feature_dim } else { 0 };
        visual + self.embed
    }
}

/// Every learned tensor of the network; the optional groups exist only in
/// the modes that use them.
#[derive(Clone, Debug, PartialEq)]
pub struct SummarizerParams<T> {
    /// `[N_v × E]`, shared by encoder and decoder.
    pub embedding: T,
    pub encoder_visual_attention: Option<AttentionParams<T>>,
    pub encoder_fusion: Option<Mlp2Params<T>>,
    pub encoder_lstm: Option<LstmParams<T>>,
    pub group_attention: Option<AttentionParams<T>>,
    pub hierarchy_lstm: Option<LstmParams<T>>,
    /// Decoder-driven attention over `H^f` (simple) or `H^a` (hierarchical).
    pub summary_attention: Option<AttentionParams<T>>,
    /// `[N_v × H]` word-occurrence head on the pooled encoder states.
    pub discriminative: Option<T>,
    pub decoder_visual_attention: Option<AttentionParams<T>>,
    pub decoder_fusion: Mlp2Params<T>,
    pub decoder_lstm: LstmParams<T>,
    /// `[N_v × H]`
    pub output: T,
}

impl<T> SummarizerParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> SummarizerParams<U> {
        SummarizerParams {
            embedding: f("embedding", &self.embedding),
            encoder_visual_attention: self
                .encoder_visual_attention
                .as_ref()
                .map(|p| p.map("encoder.visual_attention", f)),
            encoder_fusion: self.encoder_fusion.as_ref().map(|p| p.map("encoder.fusion", f)),
            encoder_lstm: self.encoder_lstm.as_ref().map(|p| p.map("encoder.lstm", f)),
            group_attention: self.group_attention.as_ref().map(|p| p.map("hierarchy.attention", f)),
            hierarchy_lstm: self.hierarchy_lstm.as_ref().map(|p| p.map("hierarchy.lstm", f)),
            summary_attention: self.summary_attention.as_ref().map(|p| p.map("summary_attention", f)),
            discriminative: self.discriminative.as_ref().map(|t| f("discriminative", t)),
            decoder_visual_attention: self
                .decoder_visual_attention
                .as_ref()
                .map(|p| p.map("decoder.visual_attention", f)),
            decoder_fusion: self.decoder_fusion.map("decoder.fusion", f),
            decoder_lstm: self.decoder_lstm.map("decoder.lstm", f),
            output: f("output", &self.output),
        }
    }

    /// Visits tensors in canonical (checkpoint) order.
    pub fn for_each<'a>(&'a self, f: &mut dyn FnMut(String, &'a T)) {
        f("embedding".into(), &self.embedding);
        if let Some(p) = &self.encoder_visual_attention {
            p.for_each("encoder.visual_attention", f);
        }
        if let Some(p) = &self.encoder_fusion {
            p.for_each("encoder.fusion", f);
        }
        if let Some(p) = &self.encoder_lstm {
            p.for_each("encoder.lstm", f);
        }
        if let Some(p) = &self.group_attention {
            p.for_each("hierarchy.attention", f);
        }
        if let Some(p) = &self.hierarchy_lstm {
            p.for_each("hierarchy.lstm", f);
        }
        if let Some(p) = &self.summary_attention {
            p.for_each("summary_attention", f);
        }
        if let Some(t) = &self.discriminative {
            f("discriminative".into(), t);
        }
        if let Some(p) = &self.decoder_visual_attention {
            p.for_each("decoder.visual_attention", f);
        }
        self.decoder_fusion.for_each("decoder.fusion", f);
        self.decoder_lstm.for_each("decoder.lstm", f);
        f("output".into(), &self.output);
    }

    pub fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut T)) {
        f("embedding".into(), &mut self.embedding);
        if let Some(p) = &mut self.encoder_visual_attention {
            p.for_each_mut("encoder.visual_attention", f);
        }
        if let Some(p) = &mut self.encoder_fusion {
            p.for_each_mut("encoder.fusion", f);
        }
        if let Some(p) = &mut self.encoder_lstm {
            p.for_each_mut("encoder.lstm", f);
        }
        if let Some(p) = &mut self.group_attention {
            p.for_each_mut("hierarchy.attention", f);
        }
        if let Some(p) = &mut self.hierarchy_lstm {
            p.for_each_mut("hierarchy.lstm", f);
        }
        if let Some(p) = &mut self.summary_attention {
            p.for_each_mut("summary_attention", f);
        }
        if let Some(t) = &mut self.discriminative {
            f("discriminative".into(), t);
        }
        if let Some(p) = &mut self.decoder_visual_attention {
            p.for_each_mut("decoder.visual_attention", f);
        }
        self.decoder_fusion.for_each_mut("decoder.fusion", f);
        self.decoder_lstm.for_each_mut("decoder.lstm", f);
        f("output".into(), &mut self.output);
    }

    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.for_each(&mut |n, t| out.push((n, t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.for_each_mut(&mut |_, t| out.push(t));
        out
    }

    /// Same structure with the given values in canonical order.
    pub fn with_values<U: Clone>(&self, values: &[U]) -> SummarizerParams<U> {
        let mut it = values.iter();
        self.map(&mut |_, _| it.next().expect("one value per tensor").clone())
    }
}

impl SummarizerParams<Tensor> {
    /// Uniform(-0.08, 0.08) weights, zero biases except forget gates (1.0);
    /// the PAD embedding row starts at zero.
    pub fn init(cfg: &SummarizerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let (d, h, e, a, m, nv) = (
            cfg.feature_dim,
            cfg.hidden,
            cfg.embed,
            cfg.attention_hidden,
            cfg.mlp_hidden,
            cfg.vocab_size,
        );
        let mut embedding = uniform(rng, &[nv, e]);
        embedding.data_mut()[crate::data::PAD * e..(crate::data::PAD + 1) * e].fill(0.0);
        let enc = cfg.mode.has_encoder();
        let hier = cfg.mode == AttentionMode::Hierarchical;
        Ok(SummarizerParams {
            embedding,
            encoder_visual_attention: (enc && cfg.visual_encoder).then(|| AttentionParams::init(rng, d, h, a)),
            encoder_fusion: enc.then(|| Mlp2Params::init(rng, cfg.encoder_fusion_width(), m, e)),
            encoder_lstm: enc.then(|| LstmParams::init(rng, e, h)),
            group_attention: hier.then(|| AttentionParams::init(rng, h, h, a)),
            hierarchy_lstm: hier.then(|| LstmParams::init(rng, h, h)),
            summary_attention: enc.then(|| AttentionParams::init(rng, h, h, a)),
            discriminative: enc.then(|| uniform(rng, &[nv, h])),
            decoder_visual_attention: cfg.visual_decoder.then(|| AttentionParams::init(rng, d, h, a)),
            decoder_fusion: Mlp2Params::init(rng, cfg.decoder_fusion_width(), m, e),
            decoder_lstm: LstmParams::init(rng, e, h),
            output: uniform(rng, &[nv, h]),
        })
    }

    /// Parameter leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> SummarizerParams<Var> {
        self.map(&mut |_, t| tape.param(t.clone()))
    }

    /// Constant leaves on `tape` (inference).
    pub fn bind_frozen(&self, tape: &mut Tape) -> SummarizerParams<Var> {
        self.map(&mut |_, t| tape.constant(t.clone()))
    }

    /// Checks every tensor shape against the config.
    pub fn check_shapes(&self, cfg: &SummarizerConfig) -> Result<()> {
        let expected = SummarizerParams::init(cfg, 0)?;
        let got = self.named();
        let want = expected.named();
        if got.len() != want.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors for this config, found {}",
                want.len(),
                got.len()
            )));
        }
        for ((gn, gt), (wn, wt)) in got.iter().zip(&want) {
            if gn != wn || gt.shape() != wt.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {gn} {:?} does not match expected {wn} {:?}",
                    gt.shape(),
                    wt.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

/// Inverted dropout with its own seeded stream.
#[derive(Clone, Debug)]
pub struct Dropout {
    keep: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(keep: f64, seed: u64) -> Self {
        Dropout {
            keep,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.keep >= 1.0 {
            return Ok(x);
        }
        let n = tape.value(x).len();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < self.keep { 1.0 / self.keep } else { 0.0 })
            .collect();
        tape.mul_const(x, mask)
    }
}

fn maybe_drop(tape: &mut Tape, dropout: &mut Option<Dropout>, x: Var) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => Ok(x),
    }
}

/// One attention distribution produced during a forward pass.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub site: AttentionSite,
    pub weights: Var,
    pub mask: Option<Vec<bool>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionSite {
    EncoderVisual,
    Group,
    Summary,
    DecoderVisual,
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `H^f`, one vector per word position.
    pub hidden: Vec<Var>,
    /// `H^f` stacked as `[N_m·N_k × H]`.
    pub stacked: Var,
    pub mask: Vec<bool>,
    pub bow_logits: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

/// Per-proposal inputs the decoder attends over at every step.
#[derive(Clone, Debug)]
pub struct DecoderContext {
    pub visual: Option<AttentionKeys>,
    pub summary: Option<AttentionKeys>,
    pub encoder: Option<EncoderOutput>,
    /// `H^a` in hierarchical mode.
    pub segment_states: Option<Vec<Var>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Vec<Var>,
    pub bow_logits: Option<Var>,
    pub context: DecoderContext,
    pub attention: Vec<AttentionRecord>,
}

/// Network bound to a tape.
pub struct Summarizer<'a> {
    pub cfg: &'a SummarizerConfig,
    pub params: &'a SummarizerParams<Var>,
}

fn missing(what: &str) -> Error {
    Error::Config(format!("parameter group {what} is absent in this mode"))
}

impl<'a> Summarizer<'a> {
    pub fn new(cfg: &'a SummarizerConfig, params: &'a SummarizerParams<Var>) -> Self {
        Summarizer { cfg, params }
    }

    fn check_input(&self, tape: &mut Tape, input: &ProposalInput) -> Result<Var> {
        let shape = input.features.shape();
        let rows_ok = !self.cfg.mode.has_encoder() || shape[0] == self.cfg.n_segments;
        if shape.len() != 2 || !rows_ok || shape[1] != self.cfg.feature_dim {
            return Err(Error::ShapeMismatch {
                op: "segment features",
                left: shape.to_vec(),
                right: vec![self.cfg.n_segments, self.cfg.feature_dim],
            });
        }
        if self.cfg.mode.has_encoder()
            && (input.words.width != self.cfg.n_words || input.words.ids.len() != self.cfg.encoder_len())
        {
            return Err(Error::ShapeMismatch {
                op: "word grid",
                left: vec![input.words.rows(), input.words.width],
                right: vec![self.cfg.n_segments, self.cfg.n_words],
            });
        }
        Ok(tape.constant(input.features.clone()))
    }

    fn zeros(&self, tape: &mut Tape, n: usize) -> Var {
        tape.constant(Tensor::zeros(&[n]))
    }

    /// Fused encoder input: `MLP_E(attend(V, h_prev), e(w_t))`. A masked
    /// (padding) position embeds as the zero vector.
    pub fn vtf_e_step(
        &self,
        tape: &mut Tape,
        visual: Option<&AttentionKeys>,
        word: Option<usize>,
        h_prev: Var,
        attention: &mut Vec<AttentionRecord>,
    ) -> Result<Var> {
        let fusion = self.params.encoder_fusion.as_ref().ok_or_else(|| missing("encoder.fusion"))?;
        let embedded = match word {
            Some(id) => embed(tape, self.params.embedding, id)?,
            None => self.zeros(tape, self.cfg.embed),
        };
        match (visual, &self.params.encoder_visual_attention) {
            (Some(keys), Some(p)) => {
                let (ctx, weights) = attend(tape, keys, h_prev, p)?;
                attention.push(AttentionRecord {
                    site: AttentionSite::EncoderVisual,
                    weights,
                    mask: keys.mask.clone(),
                });
                mlp2(tape, &[ctx, embedded], fusion)
            }
            _ => mlp2(tape, &[embedded], fusion),
        }
    }

    /// Encoder-fusion chain over all `N_m·N_k` word positions.
    pub fn encode_fusion(
        &self,
        tape: &mut Tape,
        input: &ProposalInput,
        features: Var,
        dropout: &mut Option<Dropout>,
        attention: &mut Vec<AttentionRecord>,
    ) -> Result<EncoderOutput> {
        let lstm = self.params.encoder_lstm.as_ref().ok_or_else(|| missing("encoder.lstm"))?;
        let visual = match &self.params.encoder_visual_attention {
            Some(p) => Some(AttentionKeys::new(tape, features, p, None)?),
            None => None,
        };
        let mut h = self.zeros(tape, self.cfg.hidden);
        let mut c = h;
        let mut hidden = Vec::with_capacity(input.words.ids.len());
        for (&id, &real) in input.words.ids.iter().zip(&input.words.mask) {
            let z = self.vtf_e_step(tape, visual.as_ref(), real.then_some(id), h, attention)?;
            (h, c) = lstm_cell_step(tape, z, h, c, lstm)?;
            hidden.push(maybe_drop(tape, dropout, h)?);
        }
        let stacked = tape.stack(&hidden)?;
        let real = input.words.mask.iter().filter(|&&m| m).count();
        let pool: Vec<f64> = if real == 0 {
            vec![1.0 / hidden.len() as f64; hidden.len()]
        } else {
            input
                .words
                .mask
                .iter()
                .map(|&m| if m { 1.0 / real as f64 } else { 0.0 })
                .collect()
        };
        let pool = tape.constant(Tensor::vector(pool));
        let pooled = tape.vecmat(pool, stacked)?;
        let head = self.params.discriminative.ok_or_else(|| missing("discriminative"))?;
        let bow_logits = tape.matvec(head, pooled)?;
        Ok(EncoderOutput {
            hidden,
            stacked,
            mask: input.words.mask.clone(),
            bow_logits,
        })
    }

    /// Attention over `H^f` driven by the previous decoder state.
    pub fn encode_attention_simple(
        &self,
        tape: &mut Tape,
        keys: &AttentionKeys,
        h_dec_prev: Var,
    ) -> Result<(Var, Var)> {
        let p = self.params.summary_attention.as_ref().ok_or_else(|| missing("summary_attention"))?;
        attend(tape, keys, h_dec_prev, p)
    }

    /// `H^a`: one LSTM step per sentence group, each attending inside its group.
    pub fn encode_attention_hierarchical(
        &self,
        tape: &mut Tape,
        encoder: &EncoderOutput,
        dropout: &mut Option<Dropout>,
        attention: &mut Vec<AttentionRecord>,
    ) -> Result<Vec<Var>> {
        let p = self.params.group_attention.as_ref().ok_or_else(|| missing("hierarchy.attention"))?;
        let lstm = self.params.hierarchy_lstm.as_ref().ok_or_else(|| missing("hierarchy.lstm"))?;
        let width = self.cfg.n_words;
        if encoder.hidden.len() % width != 0 {
            return Err(Error::ShapeMismatch {
                op: "hierarchical grouping",
                left: vec![encoder.hidden.len()],
                right: vec![width],
            });
        }
        let mut h = self.zeros(tape, self.cfg.hidden);
        let mut c = h;
        let mut states = Vec::with_capacity(encoder.hidden.len() / width);
        for (group, mask) in encoder.hidden.chunks(width).zip(encoder.mask.chunks(width)) {
            let mut mask = mask.to_vec();
            if !mask.iter().any(|&m| m) {
                mask[0] = true;
            }
            let keys = AttentionKeys::from_list(tape, group, p, Some(mask))?;
            let (ctx, weights) = attend(tape, &keys, h, p)?;
            attention.push(AttentionRecord {
                site: AttentionSite::Group,
                weights,
                mask: keys.mask.clone(),
            });
            (h, c) = lstm_cell_step(tape, ctx, h, c, lstm)?;
            states.push(maybe_drop(tape, dropout, h)?);
        }
        Ok(states)
    }

    /// Runs the encoder side (if any) and prepares the decoder's attention
    /// inputs. Called once per proposal.
    pub fn prepare(
        &self,
        tape: &mut Tape,
        input: &ProposalInput,
        dropout: &mut Option<Dropout>,
        attention: &mut Vec<AttentionRecord>,
    ) -> Result<DecoderContext> {
        let features = self.check_input(tape, input)?;
        let visual = match &self.params.decoder_visual_attention {
            Some(p) => Some(AttentionKeys::new(tape, features, p, None)?),
            None => None,
        };
        let (encoder, summary, segment_states) = match self.cfg.mode {
            AttentionMode::DecoderOnly => (None, None, None),
            AttentionMode::Simple => {
                let enc = self.encode_fusion(tape, input, features, dropout, attention)?;
                let p = self.params.summary_attention.as_ref().ok_or_else(|| missing("summary_attention"))?;
                let mut mask = enc.mask.clone();
                if !mask.iter().any(|&m| m) {
                    mask[0] = true;
                }
                let keys = AttentionKeys::new(tape, enc.stacked, p, Some(mask))?;
                (Some(enc), Some(keys), None)
            }
            AttentionMode::Hierarchical => {
                let enc = self.encode_fusion(tape, input, features, dropout, attention)?;
                let states = self.encode_attention_hierarchical(tape, &enc, dropout, attention)?;
                let p = self.params.summary_attention.as_ref().ok_or_else(|| missing("summary_attention"))?;
                let keys = AttentionKeys::from_list(tape, &states, p, None)?;
                (Some(enc), Some(keys), Some(states))
            }
        };
        Ok(DecoderContext {
            visual,
            summary,
            encoder,
            segment_states,
        })
    }

    pub fn initial_state(&self, tape: &mut Tape) -> DecoderState {
        let h = self.zeros(tape, self.cfg.hidden);
        DecoderState { h, c: h }
    }

    /// One decoder step: returns the new state and the `[N_v]` logits.
    pub fn decoder_step(
        &self,
        tape: &mut Tape,
        ctx: &DecoderContext,
        prev_word: usize,
        state: DecoderState,
        dropout: &mut Option<Dropout>,
        attention: &mut Vec<AttentionRecord>,
    ) -> Result<(DecoderState, Var)> {
        let mut parts = Vec::with_capacity(3);
        if let (Some(keys), Some(p)) = (&ctx.visual, &self.params.decoder_visual_attention) {
            let (v, weights) = attend(tape, keys, state.h, p)?;
            attention.push(AttentionRecord {
                site: AttentionSite::DecoderVisual,
                weights,
                mask: None,
            });
            parts.push(v);
        }
        parts.push(embed(tape, self.params.embedding, prev_word)?);
        if let Some(keys) = &ctx.summary {
            let (f, weights) = self.encode_attention_simple(tape, keys, state.h)?;
            attention.push(AttentionRecord {
                site: AttentionSite::Summary,
                weights,
                mask: keys.mask.clone(),
            });
            parts.push(f);
        }
        let z = mlp2(tape, &parts, &self.params.decoder_fusion)?;
        let (h, c) = lstm_cell_step(tape, z, state.h, state.c, &self.params.decoder_lstm)?;
        let out = maybe_drop(tape, dropout, h)?;
        let logits = tape.matvec(self.params.output, out)?;
        Ok((DecoderState { h, c }, logits))
    }

    /// Ground-truth previous words at every step; one logit vector per
    /// target token after BOS.
    pub fn forward_teacher_forced(
        &self,
        tape: &mut Tape,
        input: &ProposalInput,
        target: &[usize],
        dropout: &mut Option<Dropout>,
    ) -> Result<ForwardOutput> {
        if target.len() < 2 {
            return Err(Error::EmptyInput("target sentence"));
        }
        let mut attention = Vec::new();
        let context = self.prepare(tape, input, dropout, &mut attention)?;
        let mut state = self.initial_state(tape);
        let mut logits = Vec::with_capacity(target.len() - 1);
        for &prev in &target[..target.len() - 1] {
            let (next, l) = self.decoder_step(tape, &context, prev, state, dropout, &mut attention)?;
            state = next;
            logits.push(l);
        }
        Ok(ForwardOutput {
            logits,
            bow_logits: context.encoder.as_ref().map(|e| e.bow_logits),
            context,
            attention,
        })
    }
}
