//! Bottleneck adapters inserted after every transformer layer.
//!
//! * `adapt` — per-position bottleneck: `z = W_o relu(W_p LN(h)) + h`.
//! * `structadapt_gcn` / `structadapt_rgcn` — the down-projection is replaced
//!   by a graph convolution over the token graph:
//!   `z = W_e relu(conv(LN(h))) + h`.
//!
//! Graph variants only run in the encoder; decoder adapters are always the
//! plain bottleneck. All weights are named `adapter.{enc|dec}.{layer}.*`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{RelationTable, TokenGraph};
use crate::scalar::Scalar;
use crate::tensor::{Edge, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Name prefix shared by every adapter parameter.
pub const PREFIX: &str = "adapter.";

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("relation id {id} outside the table of {count}")]
    UnknownRelation { id: usize, count: usize },
    #[error("graph adapter needs a token graph")]
    MissingGraph,
    #[error("invalid adapter config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Adapt,
    StructadaptGcn,
    StructadaptRgcn,
}

impl FromStr for AdapterKind {
    type Err = AdapterError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adapt" => Ok(AdapterKind::Adapt),
            "structadapt_gcn" => Ok(AdapterKind::StructadaptGcn),
            "structadapt_rgcn" => Ok(AdapterKind::StructadaptRgcn),
            _ => Err(AdapterError::Config(format!("unknown adapter variant `{s}`"))),
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdapterKind::Adapt => "adapt",
            AdapterKind::StructadaptGcn => "structadapt_gcn",
            AdapterKind::StructadaptRgcn => "structadapt_rgcn",
        })
    }
}

/// How the neighbor degree `d_u` in the GCN normalization is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcnNorm {
    /// `d_u = |N(u)|`, the neighbor's own in-degree plus one.
    #[default]
    InDegree,
    /// `d_u` = out-degree of `u` plus one.
    OutDegree,
}

impl FromStr for GcnNorm {
    type Err = AdapterError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "in_degree" => Ok(GcnNorm::InDegree),
            "out_degree" => Ok(GcnNorm::OutDegree),
            _ => Err(AdapterError::Config(format!("unknown gcn norm `{s}`"))),
        }
    }
}

impl fmt::Display for GcnNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GcnNorm::InDegree => "in_degree",
            GcnNorm::OutDegree => "out_degree",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Encoder bottleneck width.
    pub m: usize,
    /// Decoder bottleneck width; `None` uses `m`.
    pub dec_m: Option<usize>,
    pub kind: AdapterKind,
    pub encoder: bool,
    pub decoder: bool,
    /// Size of the relation table the RGCN weights are built for.
    pub relations: usize,
    /// Basis matrices for the relation weights; 0 keeps them independent.
    pub bases: usize,
    pub gcn_norm: GcnNorm,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            m: 16,
            dec_m: None,
            kind: AdapterKind::StructadaptRgcn,
            encoder: true,
            decoder: true,
            relations: 2,
            bases: 0,
            gcn_norm: GcnNorm::InDegree,
        }
    }
}

impl AdapterConfig {
    pub fn decoder_m(&self) -> usize {
        self.dec_m.unwrap_or(self.m)
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.encoder && self.m == 0 {
            return Err(AdapterError::Config("m must be at least 1".into()));
        }
        if self.decoder && self.decoder_m() == 0 {
            return Err(AdapterError::Config("decoder m must be at least 1".into()));
        }
        if self.kind == AdapterKind::StructadaptRgcn && self.relations == 0 {
            return Err(AdapterError::Config("rgcn needs at least one relation".into()));
        }
        Ok(())
    }

    pub fn uses_graph(&self) -> bool {
        self.encoder && self.kind != AdapterKind::Adapt
    }

    /// Per-layer parameter count of the encoder-side adapter at width `d`.
    pub fn encoder_layer_params(&self, d: usize) -> usize {
        let m = self.m;
        let shared = m * d + 2 * d; // up-projection and LN
        match self.kind {
            AdapterKind::Adapt | AdapterKind::StructadaptGcn => shared + m * d,
            AdapterKind::StructadaptRgcn if self.bases == 0 => shared + self.relations * m * d,
            AdapterKind::StructadaptRgcn => shared + self.bases * m * d + self.relations * self.bases,
        }
    }

    pub fn decoder_layer_params(&self, d: usize) -> usize {
        2 * self.decoder_m() * d + 2 * d
    }
}

/// Down-projection of one adapter layer.
#[derive(Clone, Debug)]
pub enum Down {
    /// `W_p` (plain) or `W_g` (GCN), shape `m × d`.
    Dense(ParamId),
    /// One `m × d` matrix per relation.
    Relations(Vec<ParamId>),
    /// Coefficients `|R| × B` and bases `B × m × d`.
    Basis { coef: ParamId, bases: ParamId },
}

/// Parameter handles of one adapter layer.
#[derive(Clone, Debug)]
pub struct AdapterLayer {
    pub kind: AdapterKind,
    pub m: usize,
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub down: Down,
    /// `W_o` / `W_e`, shape `d × m`.
    pub up: ParamId,
}

fn glorot<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    Tensor::uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

impl AdapterLayer {
    /// Registers a new adapter layer under `prefix` (e.g. `adapter.enc.0`).
    /// The up-projection starts at zero so the adapter begins as the identity.
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        kind: AdapterKind,
        d: usize,
        m: usize,
        cfg: &AdapterConfig,
        rng: &mut R,
    ) -> Self {
        let ln_g = store.insert(format!("{prefix}.ln.g"), Tensor::full(&[d], T::one()));
        let ln_b = store.insert(format!("{prefix}.ln.b"), Tensor::zeros(&[d]));
        let down = match kind {
            AdapterKind::Adapt | AdapterKind::StructadaptGcn => {
                Down::Dense(store.insert(format!("{prefix}.down"), glorot(&[m, d], d, m, rng)))
            }
            AdapterKind::StructadaptRgcn if cfg.bases == 0 => Down::Relations(
                (0..cfg.relations)
                    .map(|r| store.insert(format!("{prefix}.rel.{r}"), glorot(&[m, d], d, m, rng)))
                    .collect(),
            ),
            AdapterKind::StructadaptRgcn => {
                let b = cfg.bases;
                let coef = store.insert(
                    format!("{prefix}.coef"),
                    Tensor::uniform(&[cfg.relations, b], (3.0 / b as f64).sqrt(), rng),
                );
                let bases = store.insert(format!("{prefix}.bases"), glorot(&[b, m, d], d, m, rng));
                Down::Basis { coef, bases }
            }
        };
        let up = store.insert(format!("{prefix}.up"), Tensor::zeros(&[d, m]));
        AdapterLayer {
            kind,
            m,
            ln_g,
            ln_b,
            down,
            up,
        }
    }
}

/// Normalized edge lists of one token graph, ready for [`Tape::aggregate`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGraph<T> {
    pub n: usize,
    /// Forward edges plus self loops with weight `1/√(d_v d_u)`.
    pub gcn: Vec<Edge<T>>,
    /// Per relation, edges with weight `1/|N_r(v)|`.
    pub relations: Vec<Vec<Edge<T>>>,
}

impl<T: Scalar> ConvGraph<T> {
    pub fn new(tg: &TokenGraph, table: &RelationTable, norm: GcnNorm) -> Result<Self, AdapterError> {
        let n = tg.seq_len;
        let count = table.len();
        let mut indeg = vec![1usize; n];
        let mut outdeg = vec![1usize; n];
        let mut per_rel_in = vec![vec![0usize; n]; count];
        for e in &tg.edges {
            if e.relation >= count {
                return Err(AdapterError::UnknownRelation { id: e.relation, count });
            }
            per_rel_in[e.relation][e.tgt] += 1;
            if table.is_forward(e.relation) {
                indeg[e.tgt] += 1;
                outdeg[e.src] += 1;
            }
        }
        let du = |u: usize| match norm {
            GcnNorm::InDegree => indeg[u],
            GcnNorm::OutDegree => outdeg[u],
        };
        let mut gcn: Vec<Edge<T>> = (0..n)
            .map(|v| Edge {
                src: v,
                tgt: v,
                weight: T::lit(1.0 / ((indeg[v] * du(v)) as f64).sqrt()),
            })
            .collect();
        let mut relations = vec![Vec::new(); count];
        for e in &tg.edges {
            if table.is_forward(e.relation) {
                gcn.push(Edge {
                    src: e.src,
                    tgt: e.tgt,
                    weight: T::lit(1.0 / ((indeg[e.tgt] * du(e.src)) as f64).sqrt()),
                });
            }
            relations[e.relation].push(Edge {
                src: e.src,
                tgt: e.tgt,
                weight: T::lit(1.0 / per_rel_in[e.relation][e.tgt] as f64),
            });
        }
        Ok(ConvGraph { n, gcn, relations })
    }
}

/// `W_r = Σ_b a[r, b] · B_b` on plain tensors.
pub fn basis_weights<T: Scalar>(coef: &Tensor<T>, bases: &Tensor<T>) -> Result<Vec<Tensor<T>>, TensorError> {
    let (r, b) = (coef.rows(), coef.cols());
    let shape = bases.shape();
    if shape.len() != 3 || shape[0] != b {
        return Err(crate::tensor::shape_err(
            "basis_weights",
            format!("coefficients {:?} vs bases {:?}", coef.shape(), shape),
        ));
    }
    let (m, d) = (shape[1], shape[2]);
    let flat = Tensor::from_vec(&[b, m * d], bases.data().to_vec())?;
    let all = coef.matmul(&flat)?;
    (0..r)
        .map(|i| Tensor::from_vec(&[m, d], all.row(i).to_vec()))
        .collect()
}

/// Relation weights on the tape, one `m × d` var per relation.
fn relation_weights<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, down: &Down) -> Result<Vec<Var>, TensorError> {
    match down {
        Down::Dense(w) => Ok(vec![tape.param(store, *w)]),
        Down::Relations(ws) => Ok(ws.iter().map(|&w| tape.param(store, w)).collect()),
        Down::Basis { coef, bases } => {
            let shape = store.get(*bases).value.shape().to_vec();
            let (b, m, d) = (shape[0], shape[1], shape[2]);
            let a = tape.param(store, *coef);
            let bv = tape.param(store, *bases);
            let flat = tape.reshape(bv, &[b, m * d])?;
            let all = tape.matmul(a, flat)?;
            let r = tape.shape(all)[0];
            (0..r)
                .map(|i| {
                    let row = tape.slice_rows(all, i, 1)?;
                    tape.reshape(row, &[m, d])
                })
                .collect()
        }
    }
}

/// `Σ_{u ∈ N(v) ∪ {v}} 1/√(d_v d_u) · W_g x_u` for every position `v`.
pub fn gcn_conv<T: Scalar>(tape: &mut Tape<T>, x: Var, graph: &ConvGraph<T>, w_g: Var) -> Result<Var, TensorError> {
    let xw = tape.matmul_nt(x, w_g)?;
    tape.aggregate(xw, &graph.gcn, graph.n)
}

/// `Σ_r Σ_{u ∈ N_r(v)} 1/|N_r(v)| · W_r x_u`; relations without edges are
/// skipped.
pub fn rgcn_conv<T: Scalar>(tape: &mut Tape<T>, x: Var, graph: &ConvGraph<T>, w_r: &[Var]) -> Result<Var, AdapterError> {
    if graph.relations.len() != w_r.len() {
        return Err(AdapterError::UnknownRelation {
            id: graph.relations.len().saturating_sub(1),
            count: w_r.len(),
        });
    }
    let mut total: Option<Var> = None;
    for (edges, &w) in graph.relations.iter().zip(w_r) {
        if edges.is_empty() {
            continue;
        }
        let mean = tape.aggregate(x, edges, graph.n)?;
        let msg = tape.matmul_nt(mean, w)?;
        total = Some(match total {
            Some(t) => tape.add(t, msg)?,
            None => msg,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => {
            let m = tape.shape(w_r[0])[0];
            Ok(tape.constant(Tensor::zeros(&[graph.n, m])))
        }
    }
}

/// Per-position bottleneck with residual.
pub fn adapt_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    layer: &AdapterLayer,
    h: Var,
) -> Result<Var, AdapterError> {
    let Down::Dense(w_p) = layer.down else {
        return Err(AdapterError::Config("plain adapter needs a dense down-projection".into()));
    };
    let (g, b) = (tape.param(store, layer.ln_g), tape.param(store, layer.ln_b));
    let normed = tape.layer_norm(h, g, b)?;
    let w_p = tape.param(store, w_p);
    let down = tape.matmul_nt(normed, w_p)?;
    let act = tape.relu(down)?;
    let w_o = tape.param(store, layer.up);
    let up = tape.matmul_nt(act, w_o)?;
    Ok(tape.add(up, h)?)
}

/// Graph-convolution adapter with residual.
pub fn structadapt_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    layer: &AdapterLayer,
    h: Var,
    graph: &ConvGraph<T>,
) -> Result<Var, AdapterError> {
    let (g, b) = (tape.param(store, layer.ln_g), tape.param(store, layer.ln_b));
    let normed = tape.layer_norm(h, g, b)?;
    let conv = match (layer.kind, &layer.down) {
        (AdapterKind::StructadaptGcn, Down::Dense(w)) => {
            let w = tape.param(store, *w);
            gcn_conv(tape, normed, graph, w)?
        }
        (AdapterKind::StructadaptRgcn, down) => {
            let ws = relation_weights(tape, store, down)?;
            rgcn_conv(tape, normed, graph, &ws)?
        }
        _ => return Err(AdapterError::Config("adapter kind and weights disagree".into())),
    };
    let act = tape.relu(conv)?;
    let w_e = tape.param(store, layer.up);
    let up = tape.matmul_nt(act, w_e)?;
    Ok(tape.add(up, h)?)
}

/// Dispatches on the layer kind.
pub fn adapter_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    layer: &AdapterLayer,
    h: Var,
    graph: Option<&ConvGraph<T>>,
) -> Result<Var, AdapterError> {
    match layer.kind {
        AdapterKind::Adapt => adapt_forward(tape, store, layer, h),
        _ => structadapt_forward(tape, store, layer, h, graph.ok_or(AdapterError::MissingGraph)?),
    }
}

/// Trainable and total parameter counts of a bundle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
    pub fraction: f64,
}

/// Counts parameters as if `mask` decided trainability.
pub fn count_params<T: Scalar>(store: &ParamStore<T>, mask: impl Fn(&str) -> bool) -> ParamCount {
    let mut trainable = 0;
    let mut total = 0;
    for (_, p) in store.iter() {
        total += p.value.numel();
        if mask(&p.name) {
            trainable += p.value.numel();
        }
    }
    ParamCount {
        trainable,
        total,
        fraction: if total == 0 { 0.0 } else { trainable as f64 / total as f64 },
    }
}
