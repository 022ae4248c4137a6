//! Symbolic knowledge-base data: vocabularies, triples, triple files,
//! word vectors, phrase composition and negative sampling.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract, NamError, Result};
use crate::math::{uniform_vector, Matrix, Rng, Vector};

/// Range of the uniform fallback for embeddings and relation codes.
pub const EMBEDDING_INIT_RANGE: f64 = 0.1;

/// Rejections allowed before `sample_negative` settles for its last draw.
pub const MAX_NEGATIVE_REJECTIONS: usize = 100;

/// Ordered set of unique symbols with O(1) lookup both ways.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct SymbolTable {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for SymbolTable {
    fn from(items: Vec<String>) -> Self {
        let mut table = SymbolTable::default();
        for item in items {
            table.intern(&item);
        }
        table
    }
}

impl From<SymbolTable> for Vec<String> {
    fn from(table: SymbolTable) -> Self {
        table.items
    }
}

impl SymbolTable {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.items[idx]
    }

    /// Index of `symbol`, appending it if new.
    pub fn intern(&mut self, symbol: &str) -> usize {
        if let Some(&i) = self.index.get(symbol) {
            return i;
        }
        let i = self.items.len();
        self.items.push(symbol.to_owned());
        self.index.insert(symbol.to_owned(), i);
        i
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub entities: SymbolTable,
    pub relations: SymbolTable,
    pub words: SymbolTable,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity_tokens(&self, entity: usize) -> Vec<String> {
        tokenize(self.entities.name(entity))
    }

    pub fn contains(&self, t: &Triple) -> bool {
        t.head < self.entities.len() && t.tail < self.entities.len() && t.relation < self.relations.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple { head, relation, tail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledTriple {
    pub triple: Triple,
    pub label: bool,
}

impl LabeledTriple {
    pub fn new(triple: Triple, label: bool) -> Self {
        LabeledTriple { triple, label }
    }
}

/// Whether loading may add unseen symbols to the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    Extend,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// Labeled triples split into disjoint positive and negative sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub split: Split,
    pub positives: Vec<Triple>,
    pub negatives: Vec<Triple>,
}

impl Dataset {
    pub fn new(split: Split, positives: Vec<Triple>, negatives: Vec<Triple>) -> Result<Self> {
        let pos: HashSet<&Triple> = positives.iter().collect();
        if let Some(t) = negatives.iter().find(|t| pos.contains(t)) {
            return Err(NamError::Contract(format!(
                "triple {t:?} is both positive and negative"
            )));
        }
        Ok(Dataset {
            split,
            positives,
            negatives,
        })
    }

    pub fn from_labeled(split: Split, labeled: &[LabeledTriple]) -> Result<Self> {
        let (pos, neg): (Vec<&LabeledTriple>, Vec<&LabeledTriple>) = labeled.iter().partition(|l| l.label);
        Dataset::new(
            split,
            pos.into_iter().map(|l| l.triple).collect(),
            neg.into_iter().map(|l| l.triple).collect(),
        )
    }

    pub fn labeled(&self) -> Vec<LabeledTriple> {
        self.positives
            .iter()
            .map(|&t| LabeledTriple::new(t, true))
            .chain(self.negatives.iter().map(|&t| LabeledTriple::new(t, false)))
            .collect()
    }

    pub fn write_tsv(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        write_triples(path, vocab, &self.labeled())
    }
}

/// Reads `head<TAB>relation<TAB>tail[<TAB>label]` lines; `#` starts a
/// comment line and a missing label means positive.
pub fn load_triples(path: &Path, vocab: &mut Vocabulary, mode: VocabMode) -> Result<Vec<LabeledTriple>> {
    let text = fs::read_to_string(path).map_err(|e| NamError::io(path, e))?;
    parse_triples(&text, path, vocab, mode)
}

pub fn parse_triples(text: &str, source: &Path, vocab: &mut Vocabulary, mode: VocabMode) -> Result<Vec<LabeledTriple>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| NamError::Parse {
            path: source.to_path_buf(),
            line: lineno + 1,
            text: line.to_owned(),
            reason: reason.to_owned(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let label = match fields.len() {
            3 => true,
            4 => match fields[3].trim() {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label must be 0 or 1")),
            },
            _ => return Err(bad("expected 3 or 4 tab-separated fields")),
        };
        if fields[..3].iter().any(|f| f.trim().is_empty()) {
            return Err(bad("empty symbol"));
        }
        let (h, r, t) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        let triple = match mode {
            VocabMode::Extend => Triple::new(
                vocab.entities.intern(h),
                vocab.relations.intern(r),
                vocab.entities.intern(t),
            ),
            VocabMode::Frozen => {
                let ent = |s: &str| {
                    vocab.entities.get(s).ok_or_else(|| NamError::UnknownSymbol {
                        kind: "entity",
                        symbol: s.to_owned(),
                    })
                };
                let rel = vocab.relations.get(r).ok_or_else(|| NamError::UnknownSymbol {
                    kind: "relation",
                    symbol: r.to_owned(),
                })?;
                Triple::new(ent(h)?, rel, ent(t)?)
            }
        };
        out.push(LabeledTriple::new(triple, label));
    }
    Ok(out)
}

pub fn write_triples(path: &Path, vocab: &Vocabulary, triples: &[LabeledTriple]) -> Result<()> {
    let mut buf = Vec::new();
    for l in triples {
        let t = l.triple;
        writeln!(
            buf,
            "{}\t{}\t{}\t{}",
            vocab.entities.name(t.head),
            vocab.relations.name(t.relation),
            vocab.entities.name(t.tail),
            u8::from(l.label)
        )
        .expect("write to Vec");
    }
    fs::write(path, buf).map_err(|e| NamError::io(path, e))
}

/// Splits an entity or phrase name on underscores and whitespace, lowercased.
pub fn tokenize(name: &str) -> Vec<String> {
    name.split(|c: char| c == '_' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vector>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        WordVectorTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn insert(&mut self, word: &str, v: Vector) -> Result<()> {
        contract!(
            v.len() == self.dim,
            "word {word:?} has dimension {}, table dimension is {}",
            v.len(),
            self.dim
        );
        self.vectors.insert(word.to_owned(), v);
        Ok(())
    }

    /// Text format: optional `count dim` header, then `word v1 .. vdim`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| NamError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut table: Option<WordVectorTable> = None;
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let bad = |reason: String| NamError::Parse {
                path: source.to_path_buf(),
                line: lineno + 1,
                text: line.to_owned(),
                reason,
            };
            if lineno == 0 && fields.len() == 2 {
                if let (Ok(_), Ok(dim)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                    table = Some(WordVectorTable::new(dim));
                    continue;
                }
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vector>>()
                .ok_or_else(|| bad("non-numeric or non-finite component".into()))?;
            let t = table.get_or_insert_with(|| WordVectorTable::new(values.len()));
            if values.len() != t.dim || values.is_empty() {
                return Err(bad(format!("expected {} components, found {}", t.dim, values.len())));
            }
            t.vectors.insert(fields[0].to_owned(), values);
        }
        table.ok_or_else(|| NamError::Parse {
            path: source.to_path_buf(),
            line: 0,
            text: String::new(),
            reason: "no word vectors".into(),
        })
    }
}

/// Bag-of-words phrase vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Composed {
    pub vector: Vector,
    /// Tokens found in the table.
    pub found: usize,
}

impl Composed {
    pub fn all_oov(&self) -> bool {
        self.found == 0
    }
}

/// Mean of the in-table token vectors; the zero vector when none are found.
pub fn compose_phrase<S: AsRef<str>>(words: &[S], table: &WordVectorTable) -> Composed {
    let mut vector = vec![0.0; table.dim];
    let mut found = 0;
    for w in words {
        if let Some(v) = table.get(w.as_ref()) {
            for (acc, x) in vector.iter_mut().zip(v) {
                *acc += x;
            }
            found += 1;
        }
    }
    if found > 1 {
        let inv = 1.0 / found as f64;
        vector.iter_mut().for_each(|x| *x *= inv);
    }
    Composed { vector, found }
}

/// Corrupts the tail of `positive` with a uniformly drawn entity, rejecting
/// the original tail and any known positive.
pub fn sample_negative(
    positive: Triple,
    num_entities: usize,
    known_positives: &HashSet<Triple>,
    rng: &mut Rng,
) -> Result<Triple> {
    contract!(
        num_entities >= 2,
        "negative sampling needs at least 2 entities, vocabulary has {num_entities}"
    );
    let mut last = None;
    for _ in 0..MAX_NEGATIVE_REJECTIONS {
        let tail = rng.below(num_entities);
        if tail == positive.tail {
            continue;
        }
        let candidate = Triple::new(positive.head, positive.relation, tail);
        if !known_positives.contains(&candidate) {
            return Ok(candidate);
        }
        last = Some(candidate);
    }
    Ok(last.unwrap_or_else(|| Triple::new(positive.head, positive.relation, (positive.tail + 1) % num_entities)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingDims {
    /// Width of head-entity vectors (V1).
    pub entity: usize,
    /// Width of tail-entity vectors (V2), equal to the top hidden layer.
    pub output: usize,
    pub relation: usize,
}

/// Entity tables `V1`, `V2` and relation codes `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub entity_in: Matrix,
    pub entity_out: Matrix,
    pub relation_codes: Matrix,
}

/// Entity rows come from composing their name tokens when a word table is
/// supplied (and its width fits the table); otherwise, and for entities
/// whose tokens are all out of vocabulary, rows are uniform in ±0.1.
/// Relation codes are always uniform in ±0.1.
pub fn init_embeddings(
    vocab: &Vocabulary,
    word_table: Option<&WordVectorTable>,
    dims: EmbeddingDims,
    rng: &mut Rng,
) -> Result<Embeddings> {
    contract!(
        dims.entity >= 1 && dims.output >= 1 && dims.relation >= 1,
        "embedding dimensions must be positive: {dims:?}"
    );
    if let Some(t) = word_table {
        if t.dim() != dims.entity {
            return Err(NamError::Contract(format!(
                "word vectors have dimension {}, entity dimension is {}",
                t.dim(),
                dims.entity
            )));
        }
    }
    let n = vocab.entities.len();
    let table_for = |width: usize, rng: &mut Rng| -> Matrix {
        let mut m = Matrix::zeros(0, width);
        for e in 0..n {
            let composed = word_table
                .filter(|t| t.dim() == width)
                .map(|t| compose_phrase(&vocab.entity_tokens(e), t))
                .filter(|c| !c.all_oov());
            let row = match composed {
                Some(c) => c.vector,
                None => uniform_vector(width, EMBEDDING_INIT_RANGE, rng),
            };
            m.push_row(&row).expect("row width fixed");
        }
        m
    };
    let entity_in = table_for(dims.entity, rng);
    let entity_out = table_for(dims.output, rng);
    let mut relation_codes = Matrix::zeros(0, dims.relation);
    for _ in 0..vocab.relations.len() {
        relation_codes
            .push_row(&uniform_vector(dims.relation, EMBEDDING_INIT_RANGE, rng))
            .expect("row width fixed");
    }
    Ok(Embeddings {
        entity_in,
        entity_out,
        relation_codes,
    })
}
