//! DNN and relation-modulated (RMNN) association networks: parameters,
//! forward scoring and exact backpropagation of the per-example
//! log-likelihood `y ln f + (1 - y) ln(1 - f)`.
//!
//! The layer stack is factored out as [`Network`], which maps a head
//! vector, a relation code and a tail vector to a probability. [`NamParams`]
//! adds the entity and relation lookup tables used for knowledge-base
//! triples; the cause-effect models reuse `Network` with composed phrase
//! vectors instead.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{contract, NamError, Result};
use crate::kb::{init_embeddings, EmbeddingDims, Triple, Vocabulary, WordVectorTable};
use crate::math::{dot, dropout_mask, glorot_init, sigmoid, Matrix, Rng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Dnn,
    Rmnn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Dnn => "dnn",
            Variant::Rmnn => "rmnn",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = NamError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dnn" => Ok(Variant::Dnn),
            "rmnn" => Ok(Variant::Rmnn),
            other => Err(NamError::Contract(format!(
                "unknown variant {other:?} (expected dnn or rmnn)"
            ))),
        }
    }
}

/// Forward-pass mode. Training draws a fresh inverted-dropout mask for
/// every hidden layer.
pub enum Mode<'a> {
    Infer,
    Train {
        rng: &'a mut Rng,
        dropout: f64,
    },
    /// Replays previously drawn masks, one per hidden layer.
    Masked(&'a [Vector]),
}

/// Activations retained for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// `z^(0) = [head, code]`.
    pub input: Vector,
    /// Pre-activations `a^(1..L)`.
    pub pre: Vec<Vector>,
    /// Post-activations `z^(1..L)`, mask applied in train mode.
    pub post: Vec<Vector>,
    /// Dropout masks per hidden layer; empty in infer mode.
    pub masks: Vec<Vector>,
    pub logit: f64,
    pub score: f64,
}

impl ForwardCache {
    pub fn top(&self) -> &[f64] {
        self.post.last().expect("at least one hidden layer")
    }
}

/// Gradients of the layer stack plus the three input vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    pub injections: Vec<Matrix>,
    pub head: Vector,
    pub code: Vector,
    pub tail: Vector,
}

/// Feed-forward stack shared by every association model.
///
/// DNN layers compute `a = W z + b`; RMNN layers compute `a = W z + B c`
/// with no standalone bias, and the RMNN output adds `B^(L+1) c` to the
/// final dot product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    variant: Variant,
    head_dim: usize,
    code_dim: usize,
    weights: Vec<Matrix>,
    biases: Vec<Vector>,
    injections: Vec<Matrix>,
}

impl Network {
    /// Glorot-initialized weights (and relation injections); zero biases.
    pub fn new(variant: Variant, head_dim: usize, code_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        contract!(!hidden.is_empty(), "network needs at least one hidden layer");
        contract!(
            head_dim >= 1 && code_dim >= 1 && hidden.iter().all(|&h| h >= 1),
            "network widths must be positive (head {head_dim}, code {code_dim}, hidden {hidden:?})"
        );
        let mut weights = Vec::with_capacity(hidden.len());
        let mut fan_in = head_dim + code_dim;
        for &width in hidden {
            weights.push(glorot_init(width, fan_in, rng));
            fan_in = width;
        }
        let (biases, injections) = match variant {
            Variant::Dnn => (hidden.iter().map(|&w| vec![0.0; w]).collect(), Vec::new()),
            Variant::Rmnn => {
                let mut inj: Vec<Matrix> = hidden.iter().map(|&w| glorot_init(w, code_dim, rng)).collect();
                inj.push(glorot_init(1, code_dim, rng));
                (Vec::new(), inj)
            }
        };
        Ok(Network {
            variant,
            head_dim,
            code_dim,
            weights,
            biases,
            injections,
        })
    }

    pub fn from_parts(
        variant: Variant,
        head_dim: usize,
        code_dim: usize,
        weights: Vec<Matrix>,
        biases: Vec<Vector>,
        injections: Vec<Matrix>,
    ) -> Result<Self> {
        let net = Network {
            variant,
            head_dim,
            code_dim,
            weights,
            biases,
            injections,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        contract!(!self.weights.is_empty(), "network has no hidden layers");
        let mut fan_in = self.head_dim + self.code_dim;
        for (l, w) in self.weights.iter().enumerate() {
            contract!(
                w.cols() == fan_in,
                "layer {}: W is {}x{}, expected {fan_in} columns",
                l + 1,
                w.rows(),
                w.cols()
            );
            contract!(w.is_finite(), "layer {}: non-finite weight", l + 1);
            fan_in = w.rows();
        }
        match self.variant {
            Variant::Dnn => {
                contract!(
                    self.injections.is_empty() && self.biases.len() == self.weights.len(),
                    "DNN needs one bias per layer and no relation injections"
                );
                for (l, (b, w)) in self.biases.iter().zip(&self.weights).enumerate() {
                    contract!(
                        b.len() == w.rows(),
                        "layer {}: bias has {} entries, W has {} rows",
                        l + 1,
                        b.len(),
                        w.rows()
                    );
                }
            }
            Variant::Rmnn => {
                contract!(
                    self.biases.is_empty() && self.injections.len() == self.weights.len() + 1,
                    "RMNN needs L+1 relation injections and no biases"
                );
                for (l, b) in self.injections.iter().enumerate() {
                    let rows = self.weights.get(l).map_or(1, Matrix::rows);
                    contract!(
                        b.shape() == (rows, self.code_dim),
                        "layer {}: B is {}x{}, expected {rows}x{}",
                        l + 1,
                        b.rows(),
                        b.cols(),
                        self.code_dim
                    );
                }
            }
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.weights.iter().map(Matrix::rows).collect()
    }

    /// Width of `z^(L)`, which the tail vector must match.
    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("validated").rows()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Vector] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Vector] {
        &mut self.biases
    }

    pub fn injections(&self) -> &[Matrix] {
        &self.injections
    }

    pub fn injections_mut(&mut self) -> &mut [Matrix] {
        &mut self.injections
    }

    pub fn forward(&self, head: &[f64], code: &[f64], tail: &[f64], mode: Mode<'_>) -> Result<ForwardCache> {
        contract!(
            head.len() == self.head_dim && code.len() == self.code_dim,
            "layer 1: input is [{} head, {} code], network expects [{}, {}]",
            head.len(),
            code.len(),
            self.head_dim,
            self.code_dim
        );
        contract!(
            tail.len() == self.output_dim(),
            "output layer: tail vector has {} entries, top hidden layer has {}",
            tail.len(),
            self.output_dim()
        );
        let (mut rng, dropout, fixed) = match mode {
            Mode::Infer => (None, 0.0, None),
            Mode::Train { rng, dropout } => (Some(rng), dropout, None),
            Mode::Masked(masks) => {
                contract!(
                    masks.len() == self.depth() && masks.iter().zip(&self.weights).all(|(m, w)| m.len() == w.rows()),
                    "replayed dropout masks do not match the hidden layers"
                );
                (None, 0.0, Some(masks))
            }
        };
        let mut input = Vec::with_capacity(self.head_dim + self.code_dim);
        input.extend_from_slice(head);
        input.extend_from_slice(code);

        let depth = self.depth();
        let mut pre = Vec::with_capacity(depth);
        let mut post: Vec<Vector> = Vec::with_capacity(depth);
        let mut masks = Vec::new();
        for l in 0..depth {
            let w = &self.weights[l];
            let mut a = match self.variant {
                Variant::Dnn => self.biases[l].clone(),
                Variant::Rmnn => {
                    let mut a = vec![0.0; w.rows()];
                    self.injections[l].mul_vec_into(code, &mut a);
                    a
                }
            };
            w.mul_vec_into(if l == 0 { &input } else { &post[l - 1] }, &mut a);
            let mut z: Vector = a.iter().map(|&x| x.max(0.0)).collect();
            let mask = match (rng.as_deref_mut(), fixed) {
                (Some(rng), _) => Some(dropout_mask(z.len(), dropout, rng)?),
                (None, Some(masks)) => Some(masks[l].clone()),
                (None, None) => None,
            };
            if let Some(mask) = mask {
                z.iter_mut().zip(&mask).for_each(|(zi, m)| *zi *= m);
                masks.push(mask);
            }
            pre.push(a);
            post.push(z);
        }
        let mut logit = dot(&post[depth - 1], tail);
        if self.variant == Variant::Rmnn {
            logit += dot(self.injections[depth].row(0), code);
        }
        Ok(ForwardCache {
            input,
            pre,
            post,
            masks,
            logit,
            score: sigmoid(logit),
        })
    }

    /// Gradient of `y ln f + (1 - y) ln(1 - f)` with respect to every
    /// network tensor and the three inputs. ReLU'(0) is taken as 0 and
    /// dropout masks in the cache are replayed.
    pub fn backward(&self, cache: &ForwardCache, code: &[f64], tail: &[f64], label: bool) -> Result<NetGradients> {
        let depth = self.depth();
        contract!(
            cache.pre.len() == depth
                && cache.post.len() == depth
                && (cache.masks.is_empty() || cache.masks.len() == depth)
                && cache.input.len() == self.head_dim + self.code_dim
                && cache.pre.iter().zip(&self.weights).all(|(a, w)| a.len() == w.rows()),
            "forward cache does not match network shape"
        );
        contract!(
            code.len() == self.code_dim && tail.len() == self.output_dim(),
            "backward: code/tail widths do not match network"
        );
        let g = output_delta(cache.score, label);

        let mut weights: Vec<Matrix> = self.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        let mut biases: Vec<Vector> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut injections: Vec<Matrix> = self
            .injections
            .iter()
            .map(|b| Matrix::zeros(b.rows(), b.cols()))
            .collect();
        let mut d_code = vec![0.0; self.code_dim];

        let d_tail: Vector = cache.post[depth - 1].iter().map(|z| g * z).collect();
        let mut dz: Vector = tail.iter().map(|v| g * v).collect();
        if self.variant == Variant::Rmnn {
            injections[depth].add_outer(1.0, &[g], code);
            self.injections[depth].mul_vec_transposed_into(&[g], &mut d_code);
        }

        for l in (0..depth).rev() {
            let a = &cache.pre[l];
            let mut da = dz;
            for (i, d) in da.iter_mut().enumerate() {
                let m = cache.masks.get(l).map_or(1.0, |m| m[i]);
                *d = if a[i] > 0.0 { *d * m } else { 0.0 };
            }
            let below = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            weights[l].add_outer(1.0, &da, below);
            match self.variant {
                Variant::Dnn => biases[l].copy_from_slice(&da),
                Variant::Rmnn => {
                    injections[l].add_outer(1.0, &da, code);
                    self.injections[l].mul_vec_transposed_into(&da, &mut d_code);
                }
            }
            let mut next = vec![0.0; below.len()];
            self.weights[l].mul_vec_transposed_into(&da, &mut next);
            dz = next;
        }
        let d_head = dz[..self.head_dim].to_vec();
        d_code.iter_mut().zip(&dz[self.head_dim..]).for_each(|(c, d)| *c += d);

        Ok(NetGradients {
            weights,
            biases,
            injections,
            head: d_head,
            code: d_code,
            tail: d_tail,
        })
    }

    /// `θ += rate * grad` over the layer tensors.
    pub fn apply(&mut self, grads: &NetGradients, rate: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.add_scaled(rate, g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            crate::math::axpy(rate, g, b);
        }
        for (b, g) in self.injections.iter_mut().zip(&grads.injections) {
            b.add_scaled(rate, g);
        }
    }

    /// Zeroes every relation injection `B^(1..L+1)`.
    pub fn zero_injections(&mut self) {
        for b in &mut self.injections {
            b.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Trainable tensor groups, in a fixed order used by checks and audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    Weights,
    Biases,
    Injections,
    EntityIn,
    EntityOut,
    RelationCodes,
}

impl ParamClass {
    pub const ALL: [ParamClass; 6] = [
        ParamClass::Weights,
        ParamClass::Biases,
        ParamClass::Injections,
        ParamClass::EntityIn,
        ParamClass::EntityOut,
        ParamClass::RelationCodes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Weights => "W",
            ParamClass::Biases => "b",
            ParamClass::Injections => "B",
            ParamClass::EntityIn => "V1",
            ParamClass::EntityOut => "V2",
            ParamClass::RelationCodes => "C",
        }
    }
}

/// Full knowledge-base model: the network plus entity tables `V1`, `V2`
/// (separate, untied) and relation codes `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamParams {
    pub net: Network,
    pub entity_in: Matrix,
    pub entity_out: Matrix,
    pub relation_codes: Matrix,
}

/// Network gradients plus the rows of `V1`, `C`, `V2` the example touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub net: NetGradients,
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub variant: Variant,
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub hidden: Vec<usize>,
}

impl NamParams {
    /// Fresh model for `vocab`: embeddings first, then the network, all
    /// from one stream.
    pub fn init(
        shape: &ModelShape,
        vocab: &Vocabulary,
        words: Option<&WordVectorTable>,
        rng: &mut Rng,
    ) -> Result<Self> {
        contract!(!shape.hidden.is_empty(), "model needs at least one hidden layer");
        let dims = EmbeddingDims {
            entity: shape.entity_dim,
            output: *shape.hidden.last().expect("nonempty"),
            relation: shape.relation_dim,
        };
        let emb = init_embeddings(vocab, words, dims, rng)?;
        let net = Network::new(shape.variant, shape.entity_dim, shape.relation_dim, &shape.hidden, rng)?;
        Ok(NamParams {
            net,
            entity_in: emb.entity_in,
            entity_out: emb.entity_out,
            relation_codes: emb.relation_codes,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        contract!(
            self.entity_in.cols() == self.net.head_dim()
                && self.entity_out.cols() == self.net.output_dim()
                && self.relation_codes.cols() == self.net.code_dim()
                && self.entity_in.rows() == self.entity_out.rows(),
            "embedding tables V1 {:?}, V2 {:?}, C {:?} do not fit the network",
            self.entity_in.shape(),
            self.entity_out.shape(),
            self.relation_codes.shape()
        );
        contract!(
            self.entity_in.is_finite() && self.entity_out.is_finite() && self.relation_codes.is_finite(),
            "non-finite embedding entry"
        );
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.net.variant()
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            variant: self.variant(),
            entity_dim: self.net.head_dim(),
            relation_dim: self.net.code_dim(),
            hidden: self.net.hidden_widths(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entity_in.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_codes.rows()
    }

    fn check_triple(&self, t: Triple) -> Result<()> {
        contract!(
            t.head < self.num_entities() && t.tail < self.num_entities() && t.relation < self.num_relations(),
            "triple {t:?} out of range ({} entities, {} relations)",
            self.num_entities(),
            self.num_relations()
        );
        Ok(())
    }

    pub fn forward(&self, t: Triple, mode: Mode<'_>) -> Result<ForwardCache> {
        self.check_triple(t)?;
        self.net.forward(
            self.entity_in.row(t.head),
            self.relation_codes.row(t.relation),
            self.entity_out.row(t.tail),
            mode,
        )
    }

    pub fn backward(&self, cache: &ForwardCache, t: Triple, label: bool) -> Result<Gradients> {
        self.check_triple(t)?;
        contract!(
            cache.input[..self.net.head_dim()] == *self.entity_in.row(t.head)
                && cache.input[self.net.head_dim()..] == *self.relation_codes.row(t.relation),
            "forward cache was produced for a different head or relation"
        );
        let net = self.net.backward(
            cache,
            self.relation_codes.row(t.relation),
            self.entity_out.row(t.tail),
            label,
        )?;
        Ok(Gradients {
            net,
            head: t.head,
            relation: t.relation,
            tail: t.tail,
        })
    }

    /// Infer-mode probability `f(x; Θ)`.
    pub fn score(&self, t: Triple) -> Result<f64> {
        Ok(self.forward(t, Mode::Infer)?.score)
    }

    /// Ascent step: network tensors use `net_rate`, embedding rows use
    /// `embedding_rate`.
    pub fn apply(&mut self, g: &Gradients, net_rate: f64, embedding_rate: f64) {
        self.net.apply(&g.net, net_rate);
        crate::math::axpy(embedding_rate, &g.net.head, self.entity_in.row_mut(g.head));
        crate::math::axpy(embedding_rate, &g.net.code, self.relation_codes.row_mut(g.relation));
        crate::math::axpy(embedding_rate, &g.net.tail, self.entity_out.row_mut(g.tail));
    }

    /// Flat views of one parameter class, in layer/row order.
    pub fn class_slices(&self, class: ParamClass) -> Vec<&[f64]> {
        match class {
            ParamClass::Weights => self.net.weights.iter().map(Matrix::as_slice).collect(),
            ParamClass::Biases => self.net.biases.iter().map(Vec::as_slice).collect(),
            ParamClass::Injections => self.net.injections.iter().map(Matrix::as_slice).collect(),
            ParamClass::EntityIn => vec![self.entity_in.as_slice()],
            ParamClass::EntityOut => vec![self.entity_out.as_slice()],
            ParamClass::RelationCodes => vec![self.relation_codes.as_slice()],
        }
    }

    pub fn class_slices_mut(&mut self, class: ParamClass) -> Vec<&mut [f64]> {
        match class {
            ParamClass::Weights => self.net.weights.iter_mut().map(Matrix::as_mut_slice).collect(),
            ParamClass::Biases => self.net.biases.iter_mut().map(Vec::as_mut_slice).collect(),
            ParamClass::Injections => self.net.injections.iter_mut().map(Matrix::as_mut_slice).collect(),
            ParamClass::EntityIn => vec![self.entity_in.as_mut_slice()],
            ParamClass::EntityOut => vec![self.entity_out.as_mut_slice()],
            ParamClass::RelationCodes => vec![self.relation_codes.as_mut_slice()],
        }
    }

    pub fn class_len(&self, class: ParamClass) -> usize {
        self.class_slices(class).iter().map(|s| s.len()).sum()
    }

    /// Mutable reference to the `index`-th scalar of `class`.
    pub fn scalar_mut(&mut self, class: ParamClass, mut index: usize) -> &mut f64 {
        for s in self.class_slices_mut(class) {
            if index < s.len() {
                return &mut s[index];
            }
            index -= s.len();
        }
        panic!("parameter index out of range for {class:?}")
    }

    /// Number of scalars that differ bitwise from `other`; the two models
    /// must have the same shape.
    pub fn count_changed(&self, other: &NamParams) -> usize {
        ParamClass::ALL
            .iter()
            .map(|&c| {
                self.class_slices(c)
                    .iter()
                    .zip(other.class_slices(c))
                    .map(|(a, b)| {
                        a.iter()
                            .zip(b.iter())
                            .filter(|(x, y)| x.to_bits() != y.to_bits())
                            .count()
                    })
                    .sum::<usize>()
            })
            .sum()
    }

    /// FNV-1a over the bit patterns of every tensor.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for c in ParamClass::ALL {
            for s in self.class_slices(c) {
                for x in s {
                    for byte in x.to_bits().to_le_bytes() {
                        h ^= u64::from(byte);
                        h = h.wrapping_mul(0x0100_0000_01b3);
                    }
                }
            }
        }
        h
    }
}

impl Gradients {
    /// Dense gradient for one parameter class, flattened the same way as
    /// [`NamParams::class_slices`].
    pub fn dense(&self, class: ParamClass, params: &NamParams) -> Vec<f64> {
        let row_slot = |rows: usize, cols: usize, row: usize, g: &[f64]| {
            let mut out = vec![0.0; rows * cols];
            out[row * cols..(row + 1) * cols].copy_from_slice(g);
            out
        };
        match class {
            ParamClass::Weights => self.net.weights.iter().flat_map(|m| m.as_slice().to_vec()).collect(),
            ParamClass::Biases => self.net.biases.concat(),
            ParamClass::Injections => self.net.injections.iter().flat_map(|m| m.as_slice().to_vec()).collect(),
            ParamClass::EntityIn => {
                let (r, c) = params.entity_in.shape();
                row_slot(r, c, self.head, &self.net.head)
            }
            ParamClass::EntityOut => {
                let (r, c) = params.entity_out.shape();
                row_slot(r, c, self.tail, &self.net.tail)
            }
            ParamClass::RelationCodes => {
                let (r, c) = params.relation_codes.shape();
                row_slot(r, c, self.relation, &self.net.code)
            }
        }
    }
}

/// `d ln-likelihood / d logit = y - f`.
pub fn output_delta(score: f64, label: bool) -> f64 {
    f64::from(u8::from(label)) - score
}

/// Per-example objective `y ln f + (1 - y) ln(1 - f)` with `f` clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn example_log_likelihood(score: f64, label: bool) -> f64 {
    let f = score.clamp(1e-12, 1.0 - 1e-12);
    if label {
        f.ln()
    } else {
        (1.0 - f).ln()
    }
}
