//! Small transformer encoder-decoder standing in for a pretrained model.
//!
//! Pre-norm layout: every sublayer computes `x + f(LN(x))`. The output of a
//! layer's feed-forward residual is the adapter insertion point; when adapters
//! are attached, the adapter output replaces it before the next layer. Token
//! embeddings are tied with the output projection and the decoder starts from
//! `<pad>`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{adapter_forward, AdapterConfig, AdapterError, AdapterKind, AdapterLayer, ConvGraph, PREFIX};
use crate::scalar::Scalar;
use crate::tensor::{
    load_checkpoint, save_checkpoint, Adam, AdamConfig, ParamId, ParamStore, SoftmaxMask, Tape, Tensor, TensorError, Var,
};
use crate::tokenizer::{EOS, MASK, PAD};

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("sequence of length {len} exceeds the maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("invalid backbone config: {0}")]
    Config(String),
    #[error("unknown training mode `{0}`")]
    UnknownMode(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Layers in each of the encoder and decoder.
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            layers: 2,
            d_model: 64,
            heads: 4,
            d_ff: 128,
            vocab_size: 512,
            max_len: 160,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), BackboneError> {
        let bad = |m: &str| Err(BackboneError::Config(m.to_string()));
        if self.layers == 0 || self.d_model == 0 || self.heads == 0 || self.d_ff == 0 || self.max_len == 0 {
            return bad("all sizes must be positive");
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be divisible by heads");
        }
        if self.vocab_size <= MASK {
            return bad("vocabulary must include the special tokens");
        }
        Ok(())
    }
}

/// Which parameters an optimizer may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    FinetuneAll,
    FtTop2,
    FtBottom2,
    AdaptersOnly,
}

impl FromStr for TrainMode {
    type Err = BackboneError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "finetune_all" => Ok(TrainMode::FinetuneAll),
            "ft_top2" => Ok(TrainMode::FtTop2),
            "ft_bottom2" => Ok(TrainMode::FtBottom2),
            "adapters_only" => Ok(TrainMode::AdaptersOnly),
            _ => Err(BackboneError::UnknownMode(s.to_string())),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::FinetuneAll => "finetune_all",
            TrainMode::FtTop2 => "ft_top2",
            TrainMode::FtBottom2 => "ft_bottom2",
            TrainMode::AdaptersOnly => "adapters_only",
        })
    }
}

fn in_layers(name: &str, layers: std::ops::Range<usize>) -> bool {
    layers.into_iter().any(|l| name.starts_with(&format!("enc.{l}.")) || name.starts_with(&format!("dec.{l}.")))
}

/// Name predicate for `mode` on a backbone with `layers` layers per stack.
/// Partial fine-tuning touches whole transformer layers only; embeddings and
/// final norms stay frozen outside `finetune_all`.
pub fn trainable_mask(mode: TrainMode, layers: usize) -> impl Fn(&str) -> bool {
    move |name: &str| match mode {
        TrainMode::FinetuneAll => true,
        TrainMode::AdaptersOnly => name.starts_with(PREFIX),
        TrainMode::FtTop2 => in_layers(name, layers.saturating_sub(2)..layers),
        TrainMode::FtBottom2 => in_layers(name, 0..layers.min(2)),
    }
}

#[derive(Clone, Debug)]
struct Attn {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
}

#[derive(Clone, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Ffn {
    w1: ParamId,
    w2: ParamId,
}

#[derive(Clone, Debug)]
struct EncLayer {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    ffn: Ffn,
}

#[derive(Clone, Debug)]
struct DecLayer {
    ln1: Norm,
    self_attn: Attn,
    ln2: Norm,
    cross: Attn,
    ln3: Norm,
    ffn: Ffn,
}

/// Encoder output for one sequence.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Output of each layer's feed-forward residual, before any adapter.
    pub hidden: Vec<Var>,
    /// Final normalized states attended to by the decoder.
    pub memory: Var,
    /// Non-padding source positions.
    pub keys: Vec<bool>,
}

/// Backbone weights, optional adapters, and their configs.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cfg: BackboneConfig,
    pub adapters: Option<AdapterConfig>,
    pub store: ParamStore<T>,
    embed: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    enc: Vec<EncLayer>,
    dec: Vec<DecLayer>,
    enc_final: Norm,
    dec_final: Norm,
    enc_adapters: Vec<AdapterLayer>,
    dec_adapters: Vec<AdapterLayer>,
}

fn linear<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: String, fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    store.insert(name, Tensor::uniform(&[fan_in, fan_out], bound, rng))
}

fn norm<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, d: usize) -> Norm {
    Norm {
        g: store.insert(format!("{prefix}.g"), Tensor::full(&[d], T::one())),
        b: store.insert(format!("{prefix}.b"), Tensor::zeros(&[d])),
    }
}

fn attn<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, d: usize, rng: &mut R) -> Attn {
    Attn {
        q: linear(store, format!("{prefix}.q"), d, d, rng),
        k: linear(store, format!("{prefix}.k"), d, d, rng),
        v: linear(store, format!("{prefix}.v"), d, d, rng),
        o: linear(store, format!("{prefix}.o"), d, d, rng),
    }
}

fn ffn<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, d: usize, f: usize, rng: &mut R) -> Ffn {
    Ffn {
        w1: linear(store, format!("{prefix}.w1"), d, f, rng),
        w2: linear(store, format!("{prefix}.w2"), f, d, rng),
    }
}

impl<T: Scalar> Model<T> {
    /// Fresh backbone without adapters.
    pub fn new(cfg: BackboneConfig, seed: u64) -> Result<Self, BackboneError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let mut store = ParamStore::new();
        let emb_bound = (3.0 / d as f64).sqrt();
        let embed = store.insert("embed.tokens", Tensor::uniform(&[cfg.vocab_size, d], emb_bound, &mut rng));
        let enc_pos = store.insert("enc.pos", Tensor::uniform(&[cfg.max_len, d], 0.5 * emb_bound, &mut rng));
        let dec_pos = store.insert("dec.pos", Tensor::uniform(&[cfg.max_len + 1, d], 0.5 * emb_bound, &mut rng));
        let enc = (0..cfg.layers)
            .map(|l| {
                let p = format!("enc.{l}");
                EncLayer {
                    ln1: norm(&mut store, &format!("{p}.ln1"), d),
                    attn: attn(&mut store, &format!("{p}.attn"), d, &mut rng),
                    ln2: norm(&mut store, &format!("{p}.ln2"), d),
                    ffn: ffn(&mut store, &format!("{p}.ffn"), d, cfg.d_ff, &mut rng),
                }
            })
            .collect();
        let dec = (0..cfg.layers)
            .map(|l| {
                let p = format!("dec.{l}");
                DecLayer {
                    ln1: norm(&mut store, &format!("{p}.ln1"), d),
                    self_attn: attn(&mut store, &format!("{p}.self"), d, &mut rng),
                    ln2: norm(&mut store, &format!("{p}.ln2"), d),
                    cross: attn(&mut store, &format!("{p}.cross"), d, &mut rng),
                    ln3: norm(&mut store, &format!("{p}.ln3"), d),
                    ffn: ffn(&mut store, &format!("{p}.ffn"), d, cfg.d_ff, &mut rng),
                }
            })
            .collect();
        let enc_final = norm(&mut store, "enc.final", d);
        let dec_final = norm(&mut store, "dec.final", d);
        Ok(Model {
            cfg,
            adapters: None,
            store,
            embed,
            enc_pos,
            dec_pos,
            enc,
            dec,
            enc_final,
            dec_final,
            enc_adapters: Vec::new(),
            dec_adapters: Vec::new(),
        })
    }

    /// Adds adapter weights after every encoder and/or decoder layer.
    pub fn attach_adapters(&mut self, cfg: AdapterConfig, seed: u64) -> Result<(), BackboneError> {
        if self.adapters.is_some() {
            return Err(BackboneError::Config("adapters already attached".into()));
        }
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.cfg.d_model;
        if cfg.encoder {
            self.enc_adapters = (0..self.cfg.layers)
                .map(|l| AdapterLayer::init(&mut self.store, &format!("{PREFIX}enc.{l}"), cfg.kind, d, cfg.m, &cfg, &mut rng))
                .collect();
        }
        if cfg.decoder {
            self.dec_adapters = (0..self.cfg.layers)
                .map(|l| {
                    AdapterLayer::init(
                        &mut self.store,
                        &format!("{PREFIX}dec.{l}"),
                        AdapterKind::Adapt,
                        d,
                        cfg.decoder_m(),
                        &cfg,
                        &mut rng,
                    )
                })
                .collect();
        }
        self.adapters = Some(cfg);
        Ok(())
    }

    pub fn set_mode(&mut self, mode: TrainMode) {
        self.store.set_trainable(trainable_mask(mode, self.cfg.layers));
    }

    pub fn needs_graph(&self) -> bool {
        self.adapters.as_ref().is_some_and(|a| a.uses_graph())
    }

    /// Converts every weight to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut store = ParamStore::<U>::new();
        for (_, p) in self.store.iter() {
            let id = store.insert(p.name.clone(), p.value.cast());
            store.get_mut(id).trainable = p.trainable;
        }
        Model {
            cfg: self.cfg.clone(),
            adapters: self.adapters.clone(),
            store,
            embed: self.embed,
            enc_pos: self.enc_pos,
            dec_pos: self.dec_pos,
            enc: self.enc.clone(),
            dec: self.dec.clone(),
            enc_final: self.enc_final.clone(),
            dec_final: self.dec_final.clone(),
            enc_adapters: self.enc_adapters.clone(),
            dec_adapters: self.dec_adapters.clone(),
        }
    }

    fn ln(&self, tape: &mut Tape<T>, x: Var, n: &Norm) -> Result<Var, TensorError> {
        let (g, b) = (tape.param(&self.store, n.g), tape.param(&self.store, n.b));
        tape.layer_norm(x, g, b)
    }

    fn attention(&self, tape: &mut Tape<T>, xq: Var, xkv: Var, a: &Attn, mask: &SoftmaxMask) -> Result<Var, TensorError> {
        let s = &self.store;
        let (wq, wk, wv, wo) = (tape.param(s, a.q), tape.param(s, a.k), tape.param(s, a.v), tape.param(s, a.o));
        let q = tape.matmul(xq, wq)?;
        let k = tape.matmul(xkv, wk)?;
        let v = tape.matmul(xkv, wv)?;
        let dh = self.cfg.d_model / self.cfg.heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let (qh, kh, vh) = (
                tape.slice_cols(q, h * dh, dh)?,
                tape.slice_cols(k, h * dh, dh)?,
                tape.slice_cols(v, h * dh, dh)?,
            );
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale)?;
            let p = tape.softmax(scores, mask)?;
            heads.push(tape.matmul(p, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        tape.matmul(cat, wo)
    }

    fn feed_forward(&self, tape: &mut Tape<T>, x: Var, f: &Ffn) -> Result<Var, TensorError> {
        let (w1, w2) = (tape.param(&self.store, f.w1), tape.param(&self.store, f.w2));
        let h = tape.matmul(x, w1)?;
        let h = tape.relu(h)?;
        tape.matmul(h, w2)
    }

    fn embed(&self, tape: &mut Tape<T>, ids: &[usize], pos: ParamId) -> Result<Var, TensorError> {
        let table = tape.param(&self.store, self.embed);
        let tok = tape.gather(table, ids)?;
        let pos_table = tape.param(&self.store, pos);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let p = tape.gather(pos_table, &positions)?;
        tape.add(tok, p)
    }

    /// Runs the encoder. `graph` is required when graph adapters are attached.
    pub fn encode(&self, tape: &mut Tape<T>, src: &[usize], graph: Option<&ConvGraph<T>>) -> Result<Encoded, BackboneError> {
        if src.len() > self.cfg.max_len {
            return Err(BackboneError::TooLong {
                len: src.len(),
                max: self.cfg.max_len,
            });
        }
        let keys: Vec<bool> = src.iter().map(|&t| t != PAD).collect();
        let mask = SoftmaxMask::keys(keys.clone());
        let mut x = self.embed(tape, src, self.enc_pos)?;
        let mut hidden = Vec::with_capacity(self.enc.len());
        for (l, layer) in self.enc.iter().enumerate() {
            let n1 = self.ln(tape, x, &layer.ln1)?;
            let a = self.attention(tape, n1, n1, &layer.attn, &mask)?;
            let x1 = tape.add(x, a)?;
            let n2 = self.ln(tape, x1, &layer.ln2)?;
            let f = self.feed_forward(tape, n2, &layer.ffn)?;
            let h = tape.add(x1, f)?;
            hidden.push(h);
            x = match self.enc_adapters.get(l) {
                Some(ad) => adapter_forward(tape, &self.store, ad, h, graph)?,
                None => h,
            };
        }
        let memory = self.ln(tape, x, &self.enc_final)?;
        Ok(Encoded { hidden, memory, keys })
    }

    /// Logits `[len(dec_in), vocab]` for a decoder input that starts with `<pad>`.
    pub fn decode(&self, tape: &mut Tape<T>, enc: &Encoded, dec_in: &[usize]) -> Result<Var, BackboneError> {
        if dec_in.len() > self.cfg.max_len + 1 {
            return Err(BackboneError::TooLong {
                len: dec_in.len(),
                max: self.cfg.max_len + 1,
            });
        }
        let causal = SoftmaxMask::causal();
        let cross = SoftmaxMask::keys(enc.keys.clone());
        let mut x = self.embed(tape, dec_in, self.dec_pos)?;
        for (l, layer) in self.dec.iter().enumerate() {
            let n1 = self.ln(tape, x, &layer.ln1)?;
            let a = self.attention(tape, n1, n1, &layer.self_attn, &causal)?;
            let x1 = tape.add(x, a)?;
            let n2 = self.ln(tape, x1, &layer.ln2)?;
            let c = self.attention(tape, n2, enc.memory, &layer.cross, &cross)?;
            let x2 = tape.add(x1, c)?;
            let n3 = self.ln(tape, x2, &layer.ln3)?;
            let f = self.feed_forward(tape, n3, &layer.ffn)?;
            let h = tape.add(x2, f)?;
            x = match self.dec_adapters.get(l) {
                Some(ad) => adapter_forward(tape, &self.store, ad, h, None)?,
                None => h,
            };
        }
        let out = self.ln(tape, x, &self.dec_final)?;
        let table = tape.param(&self.store, self.embed);
        Ok(tape.matmul_nt(out, table)?)
    }

    /// Teacher-forced mean token negative log-likelihood of `tgt` (which
    /// should end in `</s>`); padding targets are skipped.
    pub fn loss(&self, tape: &mut Tape<T>, src: &[usize], tgt: &[usize], graph: Option<&ConvGraph<T>>) -> Result<Var, BackboneError> {
        let enc = self.encode(tape, src, graph)?;
        let mut dec_in = Vec::with_capacity(tgt.len());
        dec_in.push(PAD);
        dec_in.extend_from_slice(&tgt[..tgt.len().saturating_sub(1)]);
        let logits = self.decode(tape, &enc, &dec_in)?;
        Ok(tape.cross_entropy(logits, tgt, Some(PAD))?)
    }

    /// Log-probabilities of the token following `prefix` (which starts with
    /// `<pad>`).
    pub fn next_log_probs(&self, tape: &mut Tape<T>, enc: &Encoded, prefix: &[usize]) -> Result<Vec<f64>, BackboneError> {
        let logits = self.decode(tape, enc, prefix)?;
        let v = tape.value(logits);
        let row: Vec<f64> = v.row(v.rows() - 1).iter().map(|x| x.as_f64()).collect();
        Ok(log_softmax(&row))
    }

    /// Greedy decoding; returns generated ids without `</s>`.
    pub fn greedy(&self, src: &[usize], graph: Option<&ConvGraph<T>>, max_len: usize) -> Result<Vec<usize>, BackboneError> {
        let mut tape = Tape::new().with_finite_checks(false);
        let enc = self.encode(&mut tape, src, graph)?;
        let mut prefix = vec![PAD];
        let limit = max_len.min(self.cfg.max_len);
        while prefix.len() <= limit {
            let lp = self.next_log_probs(&mut tape, &enc, &prefix)?;
            let next = argmax(&lp);
            if next == EOS {
                break;
            }
            prefix.push(next);
        }
        Ok(prefix[1..].to_vec())
    }

    /// Writes weights plus both configs into a checkpoint.
    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<(), BackboneError> {
        let mut meta = extra.clone();
        meta.insert("backbone".into(), serde_json::to_string(&self.cfg).expect("config serializes"));
        if let Some(a) = &self.adapters {
            meta.insert("adapters".into(), serde_json::to_string(a).expect("config serializes"));
        }
        save_checkpoint(path, &self.store, &meta)?;
        Ok(())
    }

    /// Rebuilds a model from [`Model::save`] output, including trainable flags.
    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, String>), BackboneError> {
        let ck = load_checkpoint::<T>(path)?;
        let parse_err = |e: serde_json::Error| BackboneError::Config(format!("checkpoint metadata: {e}"));
        let cfg: BackboneConfig =
            serde_json::from_str(ck.meta.get("backbone").ok_or_else(|| BackboneError::Config("checkpoint lacks backbone config".into()))?)
                .map_err(parse_err)?;
        let mut model = Model::new(cfg, 0)?;
        if let Some(a) = ck.meta.get("adapters") {
            model.attach_adapters(serde_json::from_str(a).map_err(parse_err)?, 0)?;
        }
        if model.store.len() != ck.params.len() {
            return Err(BackboneError::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                ck.params.len(),
                model.store.len()
            )));
        }
        model.store.load_values_from(&ck.params)?;
        for p in model.store.iter_mut() {
            p.trainable = ck.params.by_name(&p.name).is_some_and(|q| q.trainable);
        }
        Ok((model, ck.meta))
    }

    /// Copies matching backbone weights from another model (e.g. a pretrained one).
    pub fn load_backbone_from(&mut self, other: &Model<T>) -> Result<(), BackboneError> {
        for p in self.store.iter_mut() {
            if p.name.starts_with(PREFIX) {
                continue;
            }
            let src = other
                .store
                .by_name(&p.name)
                .ok_or_else(|| BackboneError::Config(format!("missing backbone weight {}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(BackboneError::Config(format!("shape mismatch for {}", p.name)));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&x| x - z).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Denoising pretraining settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub mask_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 3000,
            lr: 1e-3,
            batch: 8,
            mask_rate: 0.15,
            seed: 0,
        }
    }
}

/// Replaces roughly `rate` of the non-`</s>` tokens with `<mask>`; at least
/// one token is masked when the sequence has any.
pub fn mask_tokens<R: Rng>(seq: &[usize], rate: f64, rng: &mut R) -> Vec<usize> {
    let mut out = seq.to_vec();
    let candidates: Vec<usize> = (0..seq.len()).filter(|&i| seq[i] != EOS && seq[i] != PAD).collect();
    if candidates.is_empty() {
        return out;
    }
    let k = ((candidates.len() as f64 * rate).round() as usize).max(1);
    for &i in candidates.choose_multiple(rng, k) {
        out[i] = MASK;
    }
    out
}

/// Trains every weight to reconstruct `</s>`-terminated sequences from masked
/// copies, with a linearly decaying learning rate. Returns the loss of each
/// step; afterwards every weight is marked frozen.
pub fn pretrain_backbone<T: Scalar>(model: &mut Model<T>, corpus: &[Vec<usize>], cfg: &PretrainConfig) -> Result<Vec<f64>, BackboneError> {
    let mut losses = Vec::with_capacity(cfg.steps);
    if cfg.steps > 0 && !corpus.is_empty() {
        model.set_mode(TrainMode::FinetuneAll);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = Adam::new(&model.store, AdamConfig::default());
        for step in 0..cfg.steps {
            model.store.zero_grad();
            let batch: Vec<(usize, Vec<usize>)> = (0..cfg.batch)
                .map(|_| {
                    let i = rng.gen_range(0..corpus.len());
                    (i, mask_tokens(&corpus[i], cfg.mask_rate, &mut rng))
                })
                .collect();
            let model_ref = &*model;
            let results = batch
                .par_iter()
                .map(|(i, noisy)| {
                    let mut tape = Tape::new().with_finite_checks(false);
                    let loss = model_ref.loss(&mut tape, noisy, &corpus[*i], None)?;
                    let l = tape.value(loss).scalar();
                    if !l.is_finite() {
                        return Err(TensorError::NonFinite { op: "pretrain loss" }.into());
                    }
                    let scaled = tape.scale(loss, T::lit(1.0 / cfg.batch as f64))?;
                    Ok((l.as_f64(), tape.param_gradients(scaled)?))
                })
                .collect::<Result<Vec<_>, BackboneError>>()?;
            let mut total = 0.0;
            for (l, grads) in results {
                total += l;
                for (id, g) in grads {
                    model.store.get_mut(id).grad.add_assign(&g);
                }
            }
            let lr = cfg.lr * (1.0 - step as f64 / cfg.steps as f64);
            adam.step(&mut model.store, lr);
            losses.push(total / cfg.batch as f64);
        }
    }
    model.store.set_trainable(|_| false);
    Ok(losses)
}

/// Teacher-forced token accuracy of reconstructing masked sequences.
pub fn reconstruction_accuracy<T: Scalar>(model: &Model<T>, corpus: &[Vec<usize>], mask_rate: f64, seed: u64) -> Result<f64, BackboneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hit, mut total) = (0usize, 0usize);
    for seq in corpus {
        let noisy = mask_tokens(seq, mask_rate, &mut rng);
        let mut tape = Tape::new().with_finite_checks(false);
        let enc = model.encode(&mut tape, &noisy, None)?;
        let mut dec_in = vec![PAD];
        dec_in.extend_from_slice(&seq[..seq.len() - 1]);
        let logits = model.decode(&mut tape, &enc, &dec_in)?;
        let v = tape.value(logits);
        for (r, &t) in seq.iter().enumerate() {
            let row: Vec<f64> = v.row(r).iter().map(|x| x.as_f64()).collect();
            hit += usize::from(argmax(&row) == t);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            layers: 2,
            d_model: 8,
            heads: 2,
            d_ff: 16,
            vocab_size: 12,
            max_len: 10,
        }
    }

    #[test]
    fn hidden_shapes() {
        let m = Model::<f64>::new(tiny(), 1).unwrap();
        let mut tape = Tape::new();
        let enc = m.encode(&mut tape, &[3, 4, 5, EOS], None).unwrap();
        assert_eq!(enc.hidden.len(), 2);
        for &h in &enc.hidden {
            assert_eq!(tape.shape(h), &[4, 8]);
        }
    }

    #[test]
    fn overlong_input_rejected() {
        let m = Model::<f64>::new(tiny(), 1).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(m.encode(&mut tape, &[3; 11], None), Err(BackboneError::TooLong { len: 11, max: 10 })));
    }

    #[test]
    fn zero_embeddings_give_uniform_loss() {
        let mut m = Model::<f64>::new(tiny(), 1).unwrap();
        let id = m.store.id("embed.tokens").unwrap();
        m.store.get_mut(id).value.fill(0.0);
        let mut tape = Tape::new();
        let loss = m.loss(&mut tape, &[3, 4, EOS], &[5, 6, EOS], None).unwrap();
        assert!((tape.value(loss).scalar() - 12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn deterministic_forward() {
        let a = Model::<f64>::new(tiny(), 5).unwrap();
        let b = Model::<f64>::new(tiny(), 5).unwrap();
        let run = |m: &Model<f64>| {
            let mut tape = Tape::new();
            let enc = m.encode(&mut tape, &[3, 7, 9, EOS], None).unwrap();
            tape.value(enc.memory).clone()
        };
        assert_eq!(run(&a), run(&b));
    }

    #[test]
    fn masks_by_name() {
        let mut m = Model::<f64>::new(tiny(), 1).unwrap();
        m.set_mode(TrainMode::AdaptersOnly);
        assert_eq!(m.store.trainable_count(), 0);
        m.set_mode(TrainMode::FinetuneAll);
        assert_eq!(m.store.trainable_count(), m.store.total_count());
        let f = trainable_mask(TrainMode::FtTop2, 4);
        assert!(f("enc.3.attn.q") && f("dec.2.ffn.w1"));
        assert!(!f("enc.1.attn.q") && !f("embed.tokens") && !f("enc.final.g"));
        let b = trainable_mask(TrainMode::FtBottom2, 4);
        assert!(b("enc.0.ln1.g") && b("dec.1.cross.k") && !b("dec.2.cross.k"));
        assert!("ft_middle".parse::<TrainMode>().is_err());
    }

    #[test]
    fn zero_steps_leave_weights() {
        let mut m = Model::<f64>::new(tiny(), 3).unwrap();
        let before = m.store.clone();
        let losses = pretrain_backbone(&mut m, &[vec![3, 4, EOS]], &PretrainConfig { steps: 0, ..Default::default() }).unwrap();
        assert!(losses.is_empty());
        for ((_, a), (_, b)) in m.store.iter().zip(before.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn masking_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq: Vec<usize> = (3..23).chain([EOS]).collect();
        let noisy = mask_tokens(&seq, 0.15, &mut rng);
        assert_eq!(noisy.iter().filter(|&&t| t == MASK).count(), 3);
        assert_eq!(*noisy.last().unwrap(), EOS);
    }
}
