//! Cause-effect association over patterned phrases, and Winograd-schema
//! resolution by comparing `Pr(effect | candidate)` for two candidates.
//!
//! Two model configurations share the feed-forward [`Network`]:
//!
//! * `TransMat` maps each phrase's bag-of-words vector through one of four
//!   pattern matrices (shared by the cause and effect sides) and scores the
//!   pair with a trunk that has a single generic relation code.
//! * `RelationVec` is an RMNN with one relation code per (cause pattern,
//!   effect pattern) combination; cause and effect phrases are composed from
//!   separate input and output word tables.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, NamError, Result};
use crate::kb::{tokenize, SymbolTable, WordVectorTable, EMBEDDING_INIT_RANGE};
use crate::math::{axpy, glorot_init, uniform_matrix, Matrix, Rng, Vector};
use crate::model::{example_log_likelihood, Mode, NetGradients, Network, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Voice {
    Active,
    Passive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pattern {
    pub voice: Voice,
    pub polarity: Polarity,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::new(Voice::Active, Polarity::Positive),
        Pattern::new(Voice::Active, Polarity::Negative),
        Pattern::new(Voice::Passive, Polarity::Positive),
        Pattern::new(Voice::Passive, Polarity::Negative),
    ];

    pub const fn new(voice: Voice, polarity: Polarity) -> Self {
        Pattern { voice, polarity }
    }

    pub fn index(self) -> usize {
        let v = match self.voice {
            Voice::Active => 0,
            Voice::Passive => 2,
        };
        let p = match self.polarity {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        };
        v + p
    }

    pub fn from_index(i: usize) -> Pattern {
        Pattern::ALL[i]
    }

    pub fn parse(voice: &str, polarity: &str) -> std::result::Result<Pattern, String> {
        let voice = match voice.trim() {
            "active" => Voice::Active,
            "passive" => Voice::Passive,
            other => return Err(format!("voice must be active or passive, got {other:?}")),
        };
        let polarity = match polarity.trim() {
            "positive" => Polarity::Positive,
            "negative" => Polarity::Negative,
            other => return Err(format!("polarity must be positive or negative, got {other:?}")),
        };
        Ok(Pattern::new(voice, polarity))
    }

    pub fn voice_str(self) -> &'static str {
        match self.voice {
            Voice::Active => "active",
            Voice::Passive => "passive",
        }
    }

    pub fn polarity_str(self) -> &'static str {
        match self.polarity {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.voice_str(), self.polarity_str())
    }
}

/// Number of (cause pattern, effect pattern) relations.
pub const NUM_PATTERN_RELATIONS: usize = 16;

pub fn relation_index(cause: Pattern, effect: Pattern) -> usize {
    4 * cause.index() + effect.index()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatternedPhrase {
    pub tokens: Vec<String>,
    pub pattern: Pattern,
}

impl PatternedPhrase {
    pub fn new(text: &str, pattern: Pattern) -> Result<Self> {
        let tokens = tokenize(text);
        contract!(!tokens.is_empty(), "phrase {text:?} has no tokens");
        Ok(PatternedPhrase { tokens, pattern })
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn with_pattern(&self, pattern: Pattern) -> Self {
        PatternedPhrase {
            tokens: self.tokens.clone(),
            pattern,
        }
    }
}

impl fmt::Display for PatternedPhrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.text(), self.pattern)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CauseEffectPair {
    pub cause: PatternedPhrase,
    pub effect: PatternedPhrase,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Choice {
    A,
    B,
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Choice::A => "A",
            Choice::B => "B",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaProblem {
    pub candidate_a: PatternedPhrase,
    pub candidate_b: PatternedPhrase,
    /// Predicate attached to the pronoun.
    pub query: PatternedPhrase,
    pub gold: Choice,
}

impl SchemaProblem {
    pub fn new(
        candidate_a: PatternedPhrase,
        candidate_b: PatternedPhrase,
        query: PatternedPhrase,
        gold: Choice,
    ) -> Result<Self> {
        contract!(
            candidate_a != candidate_b,
            "schema candidates must differ (both are {candidate_a})"
        );
        Ok(SchemaProblem {
            candidate_a,
            candidate_b,
            query,
            gold,
        })
    }
}

fn parse_error(path: &Path, line: usize, text: &str, reason: impl Into<String>) -> NamError {
    NamError::Parse {
        path: path.to_path_buf(),
        line,
        text: text.to_owned(),
        reason: reason.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// `cause<TAB>voice<TAB>polarity<TAB>effect<TAB>voice<TAB>polarity<TAB>count`.
pub fn parse_pairs(text: &str, source: &Path) -> Result<Vec<CauseEffectPair>> {
    let mut out = Vec::new();
    for (lineno, line) in content_lines(text) {
        let bad = |reason: String| parse_error(source, lineno, line, reason);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 tab-separated fields, found {}", f.len())));
        }
        let phrase = |text: &str, v: &str, p: &str| -> Result<PatternedPhrase> {
            let pattern = Pattern::parse(v, p).map_err(&bad)?;
            PatternedPhrase::new(text, pattern).map_err(|e| bad(e.to_string()))
        };
        let cause = phrase(f[0], f[1], f[2])?;
        let effect = phrase(f[3], f[4], f[5])?;
        let count: u32 = f[6]
            .trim()
            .parse()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| bad("count must be an integer >= 1".into()))?;
        out.push(CauseEffectPair { cause, effect, count });
    }
    Ok(out)
}

pub fn load_pairs(path: &Path) -> Result<Vec<CauseEffectPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| NamError::io(path, e))?;
    parse_pairs(&text, path)
}

pub fn pairs_tsv(pairs: &[CauseEffectPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.cause.text(),
            p.cause.pattern.voice_str(),
            p.cause.pattern.polarity_str(),
            p.effect.text(),
            p.effect.pattern.voice_str(),
            p.effect.pattern.polarity_str(),
            p.count
        );
    }
    out
}

fn parse_schema_phrase(field: &str) -> std::result::Result<PatternedPhrase, String> {
    let mut parts = field.rsplitn(3, ',');
    let (polarity, voice, text) = match (parts.next(), parts.next(), parts.next()) {
        (Some(p), Some(v), Some(t)) => (p, v, t),
        _ => return Err(format!("expected phrase,voice,polarity in {field:?}")),
    };
    let pattern = Pattern::parse(voice, polarity)?;
    PatternedPhrase::new(text, pattern).map_err(|e| e.to_string())
}

/// `candA,voice,polarity<TAB>candB,voice,polarity<TAB>query,voice,polarity<TAB>A|B`.
pub fn parse_schemas(text: &str, source: &Path) -> Result<Vec<SchemaProblem>> {
    let mut out = Vec::new();
    for (lineno, line) in content_lines(text) {
        let bad = |reason: String| parse_error(source, lineno, line, reason);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated fields, found {}", f.len())));
        }
        let a = parse_schema_phrase(f[0]).map_err(&bad)?;
        let b = parse_schema_phrase(f[1]).map_err(&bad)?;
        let q = parse_schema_phrase(f[2]).map_err(&bad)?;
        let gold = match f[3].trim() {
            "A" => Choice::A,
            "B" => Choice::B,
            other => return Err(bad(format!("gold must be A or B, got {other:?}"))),
        };
        out.push(SchemaProblem::new(a, b, q, gold).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

pub fn load_schemas(path: &Path) -> Result<Vec<SchemaProblem>> {
    let text = std::fs::read_to_string(path).map_err(|e| NamError::io(path, e))?;
    parse_schemas(&text, path)
}

pub fn schemas_tsv(problems: &[SchemaProblem]) -> String {
    let field = |p: &PatternedPhrase| format!("{},{},{}", p.text(), p.pattern.voice_str(), p.pattern.polarity_str());
    let mut out = String::new();
    for p in problems {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            field(&p.candidate_a),
            field(&p.candidate_b),
            field(&p.query),
            p.gold
        );
    }
    out
}

/// Same pair with the effect's pattern replaced by a uniformly drawn
/// different pattern.
pub fn negatives_transmat(pair: &CauseEffectPair, rng: &mut Rng) -> CauseEffectPair {
    let current = pair.effect.pattern.index();
    let mut k = rng.below(3);
    if k >= current {
        k += 1;
    }
    CauseEffectPair {
        cause: pair.cause.clone(),
        effect: pair.effect.with_pattern(Pattern::from_index(k)),
        count: pair.count,
    }
}

/// Same pair with the effect phrase replaced by a uniformly drawn different
/// phrase from `effect_vocab`; the effect pattern is kept.
pub fn negatives_relationvec(
    pair: &CauseEffectPair,
    effect_vocab: &[Vec<String>],
    rng: &mut Rng,
) -> Result<CauseEffectPair> {
    contract!(
        effect_vocab.len() >= 2,
        "effect vocabulary needs at least 2 phrases, has {}",
        effect_vocab.len()
    );
    let current = effect_vocab.iter().position(|p| *p == pair.effect.tokens);
    let tokens = match current {
        Some(i) => {
            let mut k = rng.below(effect_vocab.len() - 1);
            if k >= i {
                k += 1;
            }
            effect_vocab[k].clone()
        }
        None => effect_vocab[rng.below(effect_vocab.len())].clone(),
    };
    Ok(CauseEffectPair {
        cause: pair.cause.clone(),
        effect: PatternedPhrase {
            tokens,
            pattern: pair.effect.pattern,
        },
        count: pair.count,
    })
}

/// Distinct effect phrases in first-seen order.
pub fn effect_vocabulary(pairs: &[CauseEffectPair]) -> Vec<Vec<String>> {
    let mut seen = HashSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert(p.effect.tokens.clone()))
        .map(|p| p.effect.tokens.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    TransMat,
    RelationVec,
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scorer::TransMat => "transmat",
            Scorer::RelationVec => "relationvec",
        })
    }
}

impl FromStr for Scorer {
    type Err = NamError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transmat" => Ok(Scorer::TransMat),
            "relationvec" => Ok(Scorer::RelationVec),
            _ => Err(NamError::Contract(format!(
                "unknown scorer {s:?} (expected transmat or relationvec)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinogradConfig {
    pub scorer: Scorer,
    pub embedding_dim: usize,
    pub relation_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub learning_rate: f64,
    /// Word tables and relation codes.
    pub embedding_learning_rate: f64,
    pub dropout: f64,
    pub epochs: usize,
    /// Network variant behind the TransMat pattern matrices.
    pub trunk: Variant,
    pub seed: u64,
}

impl Default for WinogradConfig {
    fn default() -> Self {
        WinogradConfig {
            scorer: Scorer::RelationVec,
            embedding_dim: 50,
            relation_dim: 50,
            hidden_layers: 2,
            hidden_width: 100,
            learning_rate: 0.01,
            embedding_learning_rate: 0.025,
            dropout: 0.2,
            epochs: 20,
            trunk: Variant::Dnn,
            seed: 1,
        }
    }
}

impl WinogradConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(
            self.learning_rate > 0.0 && self.embedding_learning_rate > 0.0,
            "learning rates must be positive"
        );
        contract!(
            (0.0..1.0).contains(&self.dropout),
            "dropout rate {} outside [0, 1)",
            self.dropout
        );
        contract!(
            self.embedding_dim >= 1 && self.relation_dim >= 1 && self.hidden_width >= 1 && self.hidden_layers >= 1,
            "dimensions and depth must be positive"
        );
        Ok(())
    }
}

/// Trained cause-effect scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinogradModel {
    scorer: Scorer,
    words: SymbolTable,
    /// Cause-side table (both sides for TransMat), `|words| x d_e`.
    word_in: Matrix,
    /// Effect-side table for RelationVec, `|words| x H`; empty for TransMat.
    word_out: Matrix,
    /// TransMat pattern matrices, `H x d_e`, indexed by [`Pattern::index`].
    patterns: Vec<Matrix>,
    codes: Matrix,
    net: Network,
}

/// Probability of one (cause, effect) pair with OOV flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub p: f64,
    pub cause_oov: bool,
    pub effect_oov: bool,
}

/// Bag-of-words input: the mean vector and the rows it averaged.
#[derive(Debug, Clone, PartialEq)]
struct Bow {
    vector: Vector,
    ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Encoded {
    x_cause: Bow,
    x_effect: Bow,
    head: Vector,
    tail: Vector,
    code_row: usize,
    cause_pattern: usize,
    effect_pattern: usize,
}

/// Gradient of the log-likelihood of one example, sparse over word rows.
#[derive(Debug, Clone, PartialEq)]
pub struct WinogradGradients {
    net: NetGradients,
    code_row: usize,
    word_in: Vec<(usize, Vector)>,
    word_out: Vec<(usize, Vector)>,
    patterns: Vec<(usize, Matrix)>,
}

impl WinogradModel {
    /// Vocabulary from every token in `pairs`; word rows come from
    /// `pretrained` when its width matches the table, otherwise uniform in
    /// `[-0.1, 0.1]`.
    pub fn init(
        config: &WinogradConfig,
        pairs: &[CauseEffectPair],
        pretrained: Option<&WordVectorTable>,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut words = SymbolTable::default();
        for p in pairs {
            for t in p.cause.tokens.iter().chain(&p.effect.tokens) {
                words.intern(t);
            }
        }
        contract!(!words.is_empty(), "no words in the training pairs");
        let h = config.hidden_width;
        let d = config.embedding_dim;
        let table = |dim: usize, rng: &mut Rng| {
            let mut m = uniform_matrix(words.len(), dim, EMBEDDING_INIT_RANGE, rng);
            if let Some(pre) = pretrained.filter(|t| t.dim() == dim) {
                for (i, w) in words.iter().enumerate() {
                    if let Some(v) = pre.get(w) {
                        m.row_mut(i).copy_from_slice(v);
                    }
                }
            }
            m
        };
        let word_in = table(d, rng);
        let hidden = vec![h; config.hidden_layers];
        let (word_out, patterns, codes, net) = match config.scorer {
            Scorer::TransMat => {
                let patterns: Vec<Matrix> = (0..4).map(|_| glorot_init(h, d, rng)).collect();
                let codes = uniform_matrix(1, config.relation_dim, EMBEDDING_INIT_RANGE, rng);
                let net = Network::new(config.trunk, h, config.relation_dim, &hidden, rng)?;
                (Matrix::zeros(0, h), patterns, codes, net)
            }
            Scorer::RelationVec => {
                let word_out = table(h, rng);
                let codes = uniform_matrix(NUM_PATTERN_RELATIONS, config.relation_dim, EMBEDDING_INIT_RANGE, rng);
                let net = Network::new(Variant::Rmnn, d, config.relation_dim, &hidden, rng)?;
                (word_out, Vec::new(), codes, net)
            }
        };
        let model = WinogradModel {
            scorer: config.scorer,
            words,
            word_in,
            word_out,
            patterns,
            codes,
            net,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let h = self.net.output_dim();
        let d = self.word_in.cols();
        contract!(
            self.word_in.rows() == self.words.len() && self.codes.cols() == self.net.code_dim(),
            "word table or relation codes do not match the network"
        );
        match self.scorer {
            Scorer::TransMat => {
                contract!(
                    self.patterns.len() == 4 && self.patterns.iter().all(|m| m.shape() == (h, d)),
                    "TransMat needs 4 pattern matrices of shape {h}x{d}"
                );
                contract!(
                    self.codes.rows() == 1 && self.net.head_dim() == h,
                    "TransMat needs one generic relation code and a trunk reading {h}-wide events"
                );
            }
            Scorer::RelationVec => {
                contract!(
                    self.codes.rows() == NUM_PATTERN_RELATIONS,
                    "RelationVec needs exactly {NUM_PATTERN_RELATIONS} relation codes, found {}",
                    self.codes.rows()
                );
                contract!(
                    self.net.variant() == Variant::Rmnn
                        && self.net.head_dim() == d
                        && self.word_out.shape() == (self.words.len(), h),
                    "RelationVec needs an RMNN over {d}-wide causes and {h}-wide effects"
                );
            }
        }
        contract!(
            self.word_in.is_finite() && self.word_out.is_finite() && self.codes.is_finite(),
            "non-finite embedding entry"
        );
        Ok(())
    }

    pub fn scorer(&self) -> Scorer {
        self.scorer
    }

    pub fn words(&self) -> &SymbolTable {
        &self.words
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn patterns_mut(&mut self) -> &mut [Matrix] {
        &mut self.patterns
    }

    pub fn codes_mut(&mut self) -> &mut Matrix {
        &mut self.codes
    }

    fn bow(&self, tokens: &[String], table: &Matrix) -> Bow {
        let ids: Vec<usize> = tokens.iter().filter_map(|t| self.words.get(t)).collect();
        let mut vector = vec![0.0; table.cols()];
        for &i in &ids {
            axpy(1.0, table.row(i), &mut vector);
        }
        if ids.len() > 1 {
            let inv = 1.0 / ids.len() as f64;
            vector.iter_mut().for_each(|x| *x *= inv);
        }
        Bow { vector, ids }
    }

    fn encode(&self, cause: &PatternedPhrase, effect: &PatternedPhrase) -> Encoded {
        let cp = cause.pattern.index();
        let ep = effect.pattern.index();
        match self.scorer {
            Scorer::TransMat => {
                let x_cause = self.bow(&cause.tokens, &self.word_in);
                let x_effect = self.bow(&effect.tokens, &self.word_in);
                let h = self.net.output_dim();
                let mut head = vec![0.0; h];
                let mut tail = vec![0.0; h];
                self.patterns[cp].mul_vec_into(&x_cause.vector, &mut head);
                self.patterns[ep].mul_vec_into(&x_effect.vector, &mut tail);
                Encoded {
                    x_cause,
                    x_effect,
                    head,
                    tail,
                    code_row: 0,
                    cause_pattern: cp,
                    effect_pattern: ep,
                }
            }
            Scorer::RelationVec => {
                let x_cause = self.bow(&cause.tokens, &self.word_in);
                let x_effect = self.bow(&effect.tokens, &self.word_out);
                Encoded {
                    head: x_cause.vector.clone(),
                    tail: x_effect.vector.clone(),
                    x_cause,
                    x_effect,
                    code_row: relation_index(cause.pattern, effect.pattern),
                    cause_pattern: cp,
                    effect_pattern: ep,
                }
            }
        }
    }

    /// `Pr(effect | cause)`. All-OOV phrases are scored as zero vectors and
    /// flagged.
    pub fn score(&self, cause: &PatternedPhrase, effect: &PatternedPhrase) -> Result<Scored> {
        let enc = self.encode(cause, effect);
        let cache = self
            .net
            .forward(&enc.head, self.codes.row(enc.code_row), &enc.tail, Mode::Infer)?;
        Ok(Scored {
            p: cache.score,
            cause_oov: enc.x_cause.ids.is_empty(),
            effect_oov: enc.x_effect.ids.is_empty(),
        })
    }

    pub fn is_oov(&self, phrase: &PatternedPhrase) -> bool {
        phrase.tokens.iter().all(|t| self.words.get(t).is_none())
    }

    /// Log-likelihood gradient of one labelled pair.
    pub fn gradients(
        &self,
        cause: &PatternedPhrase,
        effect: &PatternedPhrase,
        label: bool,
        mode: Mode<'_>,
    ) -> Result<(f64, WinogradGradients)> {
        let enc = self.encode(cause, effect);
        let code = self.codes.row(enc.code_row);
        let cache = self.net.forward(&enc.head, code, &enc.tail, mode)?;
        let net = self.net.backward(&cache, code, &enc.tail, label)?;
        let spread = |bow: &Bow, g: &[f64]| -> Vec<(usize, Vector)> {
            if bow.ids.is_empty() {
                return Vec::new();
            }
            let scale = 1.0 / bow.ids.len() as f64;
            let row: Vector = g.iter().map(|x| x * scale).collect();
            bow.ids.iter().map(|&i| (i, row.clone())).collect()
        };
        let (word_in, word_out, patterns) = match self.scorer {
            Scorer::TransMat => {
                let d = self.word_in.cols();
                let mut pats: BTreeMap<usize, Matrix> = BTreeMap::new();
                let h = self.net.output_dim();
                pats.entry(enc.cause_pattern)
                    .or_insert_with(|| Matrix::zeros(h, d))
                    .add_outer(1.0, &net.head, &enc.x_cause.vector);
                pats.entry(enc.effect_pattern)
                    .or_insert_with(|| Matrix::zeros(h, d))
                    .add_outer(1.0, &net.tail, &enc.x_effect.vector);
                let mut dx_cause = vec![0.0; d];
                self.patterns[enc.cause_pattern].mul_vec_transposed_into(&net.head, &mut dx_cause);
                let mut dx_effect = vec![0.0; d];
                self.patterns[enc.effect_pattern].mul_vec_transposed_into(&net.tail, &mut dx_effect);
                let mut rows = spread(&enc.x_cause, &dx_cause);
                rows.extend(spread(&enc.x_effect, &dx_effect));
                (rows, Vec::new(), pats.into_iter().collect())
            }
            Scorer::RelationVec => (
                spread(&enc.x_cause, &net.head),
                spread(&enc.x_effect, &net.tail),
                Vec::new(),
            ),
        };
        let ll = example_log_likelihood(cache.score, label);
        Ok((
            ll,
            WinogradGradients {
                net,
                code_row: enc.code_row,
                word_in,
                word_out,
                patterns,
            },
        ))
    }

    /// Ascent step: network tensors and pattern matrices at `net_rate`,
    /// word rows and relation codes at `embedding_rate`.
    pub fn apply(&mut self, g: &WinogradGradients, net_rate: f64, embedding_rate: f64) {
        self.net.apply(&g.net, net_rate);
        for (p, m) in &g.patterns {
            self.patterns[*p].add_scaled(net_rate, m);
        }
        axpy(embedding_rate, &g.net.code, self.codes.row_mut(g.code_row));
        for (i, row) in &g.word_in {
            axpy(embedding_rate, row, self.word_in.row_mut(*i));
        }
        for (i, row) in &g.word_out {
            axpy(embedding_rate, row, self.word_out.row_mut(*i));
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string(self).expect("model values are serializable");
        out.push('\n');
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| NamError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NamError::io(path, e))?;
        let model: WinogradModel = serde_json::from_str(&text).map_err(|e| NamError::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        model.validate().map_err(|e| NamError::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinogradReport {
    /// Summed training log-likelihood per epoch, from the train-mode passes.
    pub log_likelihood: Vec<f64>,
}

/// SGD over count-weighted positives, each followed by one negative from
/// the scorer's own scheme. One epoch draws as many positives as the total
/// pair count.
pub fn train(
    pairs: &[CauseEffectPair],
    config: &WinogradConfig,
    pretrained: Option<&WordVectorTable>,
) -> Result<(WinogradModel, WinogradReport)> {
    contract!(!pairs.is_empty(), "no training pairs");
    let base = Rng::new(config.seed);
    let mut model = WinogradModel::init(config, pairs, pretrained, &mut base.derive(0))?;
    let effects = effect_vocabulary(pairs);
    if config.scorer == Scorer::RelationVec {
        contract!(
            effects.len() >= 2,
            "RelationVec training needs at least 2 distinct effect phrases"
        );
    }
    let mut cumulative = Vec::with_capacity(pairs.len());
    let mut total = 0.0;
    for p in pairs {
        total += f64::from(p.count);
        cumulative.push(total);
    }
    let draws = total as usize;
    let mut report = WinogradReport {
        log_likelihood: Vec::with_capacity(config.epochs),
    };
    for epoch in 1..=config.epochs {
        let mut rng = base.derive(epoch as u64);
        let mut ll = 0.0;
        for _ in 0..draws {
            let pos = &pairs[rng.weighted_index(&cumulative)];
            let neg = match config.scorer {
                Scorer::TransMat => negatives_transmat(pos, &mut rng),
                Scorer::RelationVec => negatives_relationvec(pos, &effects, &mut rng)?,
            };
            for (pair, label) in [(pos, true), (&neg, false)] {
                let mode = Mode::Train {
                    rng: &mut rng,
                    dropout: config.dropout,
                };
                let (l, g) = model.gradients(&pair.cause, &pair.effect, label, mode)?;
                model.apply(&g, config.learning_rate, config.embedding_learning_rate);
                ll += l;
            }
        }
        report.log_likelihood.push(ll);
    }
    Ok((model, report))
}

/// Argmax over two probabilities; an exact tie answers `A` and sets the
/// tie flag.
pub fn choose(p_a: f64, p_b: f64) -> (Choice, bool) {
    if p_a == p_b {
        (Choice::A, true)
    } else if p_a > p_b {
        (Choice::A, false)
    } else {
        (Choice::B, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolution {
    pub answer: Choice,
    pub p_a: f64,
    pub p_b: f64,
    pub tie: bool,
}

/// Compares `Pr(query | candidate A)` with `Pr(query | candidate B)`.
pub fn resolve(model: &WinogradModel, problem: &SchemaProblem) -> Result<Resolution> {
    let p_a = model.score(&problem.candidate_a, &problem.query)?.p;
    let p_b = model.score(&problem.candidate_b, &problem.query)?.p;
    let (answer, tie) = choose(p_a, p_b);
    Ok(Resolution { answer, p_a, p_b, tie })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaEval {
    pub correct: usize,
    pub usable: usize,
    /// Problems whose query or both candidates are entirely out of
    /// vocabulary.
    pub excluded: usize,
    /// One entry per problem, in input order; `None` for excluded ones.
    pub log: Vec<Option<Resolution>>,
}

impl SchemaEval {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.usable as f64
    }

    /// `index,answer,gold,p_a,p_b,tie,correct`; excluded problems are
    /// reported with `answer` `-`.
    pub fn to_csv(&self, problems: &[SchemaProblem]) -> String {
        let mut out = String::from("index,answer,gold,p_a,p_b,tie,correct\n");
        for (i, (entry, p)) in self.log.iter().zip(problems).enumerate() {
            match entry {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "{i},{},{},{:.6},{:.6},{},{}",
                        r.answer,
                        p.gold,
                        r.p_a,
                        r.p_b,
                        r.tie,
                        r.answer == p.gold
                    );
                }
                None => {
                    let _ = writeln!(out, "{i},-,{},,,,", p.gold);
                }
            }
        }
        out
    }
}

pub fn evaluate_schema_set(model: &WinogradModel, problems: &[SchemaProblem]) -> Result<SchemaEval> {
    let mut eval = SchemaEval {
        correct: 0,
        usable: 0,
        excluded: 0,
        log: Vec::with_capacity(problems.len()),
    };
    for p in problems {
        if model.is_oov(&p.query) || (model.is_oov(&p.candidate_a) && model.is_oov(&p.candidate_b)) {
            eval.excluded += 1;
            eval.log.push(None);
            continue;
        }
        let r = resolve(model, p)?;
        eval.usable += 1;
        if r.answer == p.gold {
            eval.correct += 1;
        }
        eval.log.push(Some(r));
    }
    contract!(
        eval.usable > 0,
        "no usable schema problems ({} excluded as out of vocabulary)",
        eval.excluded
    );
    Ok(eval)
}

/// Settings for the planted cause-effect generator.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub verbs: usize,
    /// Pair occurrences drawn before aggregation into counted pairs.
    pub occurrences: usize,
    /// Chance that an occurrence uses a non-preferred effect pattern.
    pub noise: f64,
    pub problems: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            verbs: 40,
            occurrences: 5000,
            noise: 0.1,
            problems: 20,
            seed: 1,
        }
    }
}

/// Planted pair statistics: cause verb `v` always leads to its partner
/// effect verb, and under cause pattern `pc` it prefers the effect pattern
/// `preference[v][pc]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedWinograd {
    pub pairs: Vec<CauseEffectPair>,
    pub problems: Vec<SchemaProblem>,
    pub preference: Vec<[Pattern; 4]>,
}

pub fn cause_verb(v: usize) -> String {
    format!("act{v:03}")
}

pub fn effect_verb(v: usize) -> String {
    format!("feel{v:03}")
}

/// Pairs aggregated from `occurrences` draws, plus schema problems whose
/// candidates are the same cause verb under two patterns with different
/// preferred effect patterns; the query is the partner verb under the gold
/// candidate's preferred pattern.
pub fn generate_planted(config: &PlantedConfig) -> Result<PlantedWinograd> {
    contract!(config.verbs >= 2, "planted data needs at least 2 verbs");
    contract!(
        config.problems <= config.verbs,
        "at most one schema problem per verb ({} verbs, {} problems)",
        config.verbs,
        config.problems
    );
    contract!(
        (0.0..1.0).contains(&config.noise),
        "noise {} outside [0, 1)",
        config.noise
    );
    let mut rng = Rng::new(config.seed);
    let preference: Vec<[Pattern; 4]> = (0..config.verbs)
        .map(|_| loop {
            let prefs = [0; 4].map(|_| Pattern::from_index(rng.below(4)));
            if prefs.iter().any(|&p| p != prefs[0]) {
                break prefs;
            }
        })
        .collect();

    let mut counts: BTreeMap<(usize, usize, usize), u32> = BTreeMap::new();
    for _ in 0..config.occurrences {
        let v = rng.below(config.verbs);
        let pc = rng.below(4);
        let preferred = preference[v][pc].index();
        let pe = if rng.uniform() < config.noise {
            let mut k = rng.below(3);
            if k >= preferred {
                k += 1;
            }
            k
        } else {
            preferred
        };
        *counts.entry((v, pc, pe)).or_default() += 1;
    }
    let pairs = counts
        .into_iter()
        .map(|((v, pc, pe), count)| {
            Ok(CauseEffectPair {
                cause: PatternedPhrase::new(&cause_verb(v), Pattern::from_index(pc))?,
                effect: PatternedPhrase::new(&effect_verb(v), Pattern::from_index(pe))?,
                count,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut verbs: Vec<usize> = (0..config.verbs).collect();
    rng.shuffle(&mut verbs);
    let mut problems = Vec::with_capacity(config.problems);
    for &v in verbs.iter().take(config.problems) {
        let (pa, pb) = loop {
            let a = rng.below(4);
            let b = rng.below(4);
            if preference[v][a] != preference[v][b] {
                break (a, b);
            }
        };
        let gold = if rng.below(2) == 0 { Choice::A } else { Choice::B };
        let gold_pattern = match gold {
            Choice::A => preference[v][pa],
            Choice::B => preference[v][pb],
        };
        problems.push(SchemaProblem::new(
            PatternedPhrase::new(&cause_verb(v), Pattern::from_index(pa))?,
            PatternedPhrase::new(&cause_verb(v), Pattern::from_index(pb))?,
            PatternedPhrase::new(&effect_verb(v), gold_pattern)?,
            gold,
        )?);
    }
    Ok(PlantedWinograd {
        pairs,
        problems,
        preference,
    })
}
