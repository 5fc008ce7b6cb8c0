//! Unified vocabulary over text, motion tokens, and sentinels; token-stream
//! serialization; task-prompt construction; hand-token masking.
//!
//! Motion spans are sandwiched between `<HOI>` sentinels and follow the
//! per-window pattern `HAND HAND OBJ` (left, right, object). Malformed
//! streams are rejected, never repaired.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::quantizer::TokenTriple;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("malformed stream: {0}")]
    MalformedStream(String),
    #[error("empty token stream")]
    EmptyTokenStream,
    #[error("sequence too short for task: {0} windows")]
    TooShort(usize),
    #[error("unknown token '{0}'")]
    UnknownToken(String),
    #[error("bad vocabulary file: {0}")]
    BadVocabFile(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Number of span-corruption sentinels `<X0>..<X99>`.
pub const SPAN_SENTINELS: usize = 100;

/// Closed word list: the caption grammar plus the instruction templates.
const WORDS: &[&str] = &[
    "a", "approach", "both", "box", "by", "caption", "capsule", "complete", "continue", "cube",
    "cylinder", "describe", "described", "fill", "for", "generate", "grasp", "hand", "hands",
    "in", "left", "lift", "masked", "matching", "motion", "object", "of", "open", "pass",
    "predict", "produce", "rest", "right", "rotate", "sphere", "the", "tokens", "windows",
    "with",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Pad,
    Eos,
    Hoi,
    Mask,
    Span(usize),
    Word,
    Byte(u8),
    Hand(usize),
    Obj(usize),
}

/// Dense, stable token id space:
/// `<PAD> <EOS> <HOI> <MASK> <X0>.. words.. bytes.. HAND_0.. OBJ_0..`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, u32>,
    word_base: u32,
    byte_base: u32,
    hand_base: u32,
    obj_base: u32,
    k_hand: usize,
    k_obj: usize,
}

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const HOI: u32 = 2;
pub const MASK: u32 = 3;
pub const SPAN_BASE: u32 = 4;

impl Vocabulary {
    pub fn new(k_hand: usize, k_obj: usize) -> Self {
        let mut names: Vec<String> = vec![
            "<PAD>".into(),
            "<EOS>".into(),
            "<HOI>".into(),
            "<MASK>".into(),
        ];
        for i in 0..SPAN_SENTINELS {
            names.push(format!("<X{i}>"));
        }
        let word_base = names.len() as u32;
        for w in WORDS {
            names.push((*w).to_string());
        }
        let byte_base = names.len() as u32;
        for b in 0..256 {
            names.push(format!("<BYTE_{b}>"));
        }
        let hand_base = names.len() as u32;
        for i in 0..k_hand {
            names.push(format!("HAND_{i}"));
        }
        let obj_base = names.len() as u32;
        for i in 0..k_obj {
            names.push(format!("OBJ_{i}"));
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Vocabulary {
            names,
            index,
            word_base,
            byte_base,
            hand_base,
            obj_base,
            k_hand,
            k_obj,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn k_hand(&self) -> usize {
        self.k_hand
    }

    pub fn k_obj(&self) -> usize {
        self.k_obj
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn hand_token(&self, i: usize) -> u32 {
        assert!(i < self.k_hand);
        self.hand_base + i as u32
    }

    pub fn obj_token(&self, i: usize) -> u32 {
        assert!(i < self.k_obj);
        self.obj_base + i as u32
    }

    pub fn span_token(&self, i: usize) -> u32 {
        assert!(i < SPAN_SENTINELS);
        SPAN_BASE + i as u32
    }

    pub fn classify(&self, id: u32) -> TokenClass {
        match id {
            PAD => TokenClass::Pad,
            EOS => TokenClass::Eos,
            HOI => TokenClass::Hoi,
            MASK => TokenClass::Mask,
            _ if id >= self.obj_base => TokenClass::Obj((id - self.obj_base) as usize),
            _ if id >= self.hand_base => TokenClass::Hand((id - self.hand_base) as usize),
            _ if id >= self.byte_base => TokenClass::Byte((id - self.byte_base) as u8),
            _ if id >= self.word_base => TokenClass::Word,
            _ => TokenClass::Span((id - SPAN_BASE) as usize),
        }
    }

    /// Word-level encoding with byte fallback for unknown words.
    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            match self.index.get(word) {
                Some(&id) => out.push(id),
                None => {
                    for b in word.bytes() {
                        out.push(self.byte_base + b as u32);
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`Vocabulary::encode_text`] up to whitespace around byte
    /// fallbacks; sentinels are skipped.
    pub fn decode_text(&self, ids: &[u32]) -> String {
        let mut words: Vec<String> = Vec::new();
        let mut bytes: Vec<u8> = Vec::new();
        let flush = |bytes: &mut Vec<u8>, words: &mut Vec<String>| {
            if !bytes.is_empty() {
                words.push(String::from_utf8_lossy(bytes).into_owned());
                bytes.clear();
            }
        };
        for &id in ids {
            match self.classify(id) {
                TokenClass::Word => {
                    flush(&mut bytes, &mut words);
                    words.push(self.name(id).to_string());
                }
                TokenClass::Byte(b) => bytes.push(b),
                _ => flush(&mut bytes, &mut words),
            }
        }
        flush(&mut bytes, &mut words);
        words.join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<(), CodecError> {
        let mut out = String::new();
        for (i, n) in self.names.iter().enumerate() {
            out.push_str(&format!("{n} {i}\n"));
        }
        fs::write(path, out).map_err(|e| CodecError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    /// Load and verify id stability: ids must be dense and in file order.
    pub fn load(path: &Path) -> Result<Self, CodecError> {
        let text = fs::read_to_string(path).map_err(|e| CodecError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut names = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let (name, id) = line
                .rsplit_once(' ')
                .ok_or_else(|| CodecError::BadVocabFile(format!("line {lineno}")))?;
            let id: usize = id
                .parse()
                .map_err(|_| CodecError::BadVocabFile(format!("bad id on line {lineno}")))?;
            if id != lineno {
                return Err(CodecError::BadVocabFile(format!(
                    "non-dense id {id} on line {lineno}"
                )));
            }
            names.push(name.to_string());
        }
        let k_hand = names.iter().filter(|n| n.starts_with("HAND_")).count();
        let k_obj = names.iter().filter(|n| n.starts_with("OBJ_")).count();
        let rebuilt = Vocabulary::new(k_hand, k_obj);
        if rebuilt.names != names {
            return Err(CodecError::BadVocabFile(
                "file does not match the canonical layout".into(),
            ));
        }
        Ok(rebuilt)
    }
}

/// An ordered token id sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream {
    pub ids: Vec<u32>,
}

impl TokenStream {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenStream { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn concat(streams: &[&TokenStream]) -> TokenStream {
        let mut ids = Vec::new();
        for s in streams {
            ids.extend_from_slice(&s.ids);
        }
        TokenStream { ids }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Text,
    Motion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Range into the stream ids; motion ranges exclude the sentinels.
    pub range: std::ops::Range<usize>,
}

/// Split a stream into text and motion segments, validating motion spans:
/// `<HOI>` sentinels must pair up, and each window slot must hold the right
/// token class (`<MASK>` is allowed in any motion slot).
pub fn segments(stream: &TokenStream, vocab: &Vocabulary) -> Result<Vec<Segment>, CodecError> {
    let mut out = Vec::new();
    let mut text_start = 0usize;
    let mut i = 0usize;
    let n = stream.ids.len();
    while i < n {
        if stream.ids[i] == HOI {
            if text_start < i {
                out.push(Segment {
                    kind: SegmentKind::Text,
                    range: text_start..i,
                });
            }
            let close = stream.ids[i + 1..]
                .iter()
                .position(|&t| t == HOI)
                .map(|p| i + 1 + p)
                .ok_or_else(|| CodecError::MalformedStream("unpaired <HOI> sentinel".into()))?;
            let interior = i + 1..close;
            validate_motion_interior(&stream.ids[interior.clone()], vocab)?;
            out.push(Segment {
                kind: SegmentKind::Motion,
                range: interior,
            });
            i = close + 1;
            text_start = i;
        } else {
            i += 1;
        }
    }
    if text_start < n {
        out.push(Segment {
            kind: SegmentKind::Text,
            range: text_start..n,
        });
    }
    Ok(out)
}

fn validate_motion_interior(ids: &[u32], vocab: &Vocabulary) -> Result<(), CodecError> {
    if ids.len() % 3 != 0 {
        return Err(CodecError::MalformedStream(format!(
            "motion segment length {} is not a multiple of 3",
            ids.len()
        )));
    }
    for (slot, &id) in ids.iter().enumerate() {
        let class = vocab.classify(id);
        let ok = match slot % 3 {
            0 | 1 => matches!(class, TokenClass::Hand(_) | TokenClass::Mask),
            _ => matches!(class, TokenClass::Obj(_) | TokenClass::Mask),
        };
        if !ok {
            return Err(CodecError::MalformedStream(format!(
                "token '{}' in motion slot {}",
                vocab.name(id),
                slot
            )));
        }
    }
    Ok(())
}

/// Sandwich window triples between `<HOI>` sentinels (L, R, O order).
pub fn motion_to_tokens(triples: &[TokenTriple], vocab: &Vocabulary) -> Result<TokenStream, CodecError> {
    if triples.is_empty() {
        return Err(CodecError::EmptyTokenStream);
    }
    let mut ids = Vec::with_capacity(2 + triples.len() * 3);
    ids.push(HOI);
    for t in triples {
        ids.push(vocab.hand_token(t.hand_l));
        ids.push(vocab.hand_token(t.hand_r));
        ids.push(vocab.obj_token(t.object));
    }
    ids.push(HOI);
    Ok(TokenStream { ids })
}

/// Exact inverse of [`motion_to_tokens`]: the stream must be a single
/// sandwiched, fully concrete motion segment.
pub fn tokens_to_motion(stream: &TokenStream, vocab: &Vocabulary) -> Result<Vec<TokenTriple>, CodecError> {
    let segs = segments(stream, vocab)?;
    let [seg] = segs.as_slice() else {
        return Err(CodecError::MalformedStream(format!(
            "expected exactly one motion segment, found {} segments",
            segs.len()
        )));
    };
    if seg.kind != SegmentKind::Motion {
        return Err(CodecError::MalformedStream("no motion segment".into()));
    }
    let interior = &stream.ids[seg.range.clone()];
    if interior.is_empty() {
        return Err(CodecError::MalformedStream("empty motion segment".into()));
    }
    let mut out = Vec::with_capacity(interior.len() / 3);
    for w in interior.chunks(3) {
        let triple = match (vocab.classify(w[0]), vocab.classify(w[1]), vocab.classify(w[2])) {
            (TokenClass::Hand(l), TokenClass::Hand(r), TokenClass::Obj(o)) => TokenTriple {
                hand_l: l,
                hand_r: r,
                object: o,
            },
            _ => {
                return Err(CodecError::MalformedStream(
                    "masked or mixed window cannot be decoded".into(),
                ))
            }
        };
        out.push(triple);
    }
    Ok(out)
}

/// Replace every hand token with `<MASK>`, keeping a reversible record of
/// `(position, original id)`. Object tokens, sentinels, and text are
/// untouched; streams without motion segments pass through unchanged.
pub fn mask_hand_tokens(
    stream: &TokenStream,
    vocab: &Vocabulary,
) -> Result<(TokenStream, Vec<(usize, u32)>), CodecError> {
    let segs = segments(stream, vocab)?;
    let mut out = stream.clone();
    let mut record = Vec::new();
    for seg in segs {
        if seg.kind != SegmentKind::Motion {
            continue;
        }
        for (off, pos) in seg.range.clone().enumerate() {
            if off % 3 == 2 {
                continue;
            }
            if matches!(vocab.classify(out.ids[pos]), TokenClass::Hand(_)) {
                record.push((pos, out.ids[pos]));
                out.ids[pos] = MASK;
            }
        }
    }
    Ok((out, record))
}

// ---------------------------------------------------------------------------
// Task construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    TextToMotion,
    MotionToText,
    Prediction,
    Interpolation,
    ObjectConditioned,
}

impl TaskKind {
    pub fn all() -> [TaskKind; 5] {
        [
            TaskKind::TextToMotion,
            TaskKind::MotionToText,
            TaskKind::Prediction,
            TaskKind::Interpolation,
            TaskKind::ObjectConditioned,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::TextToMotion => "text-to-motion",
            TaskKind::MotionToText => "motion-to-text",
            TaskKind::Prediction => "prediction",
            TaskKind::Interpolation => "interpolation",
            TaskKind::ObjectConditioned => "object-conditioned",
        }
    }
}

/// Fixed instruction-template table.
pub const INSTRUCTIONS: &[(&str, &[&str])] = &[
    ("text-to-motion", &[
        "generate a motion matching the caption",
        "produce the motion described by the caption",
    ]),
    ("motion-to-text", &["describe the motion", "caption the motion"]),
    ("prediction", &["predict the rest of the motion", "continue the motion"]),
    ("interpolation", &[
        "fill in the masked windows",
        "complete the masked motion",
    ]),
    ("object-conditioned", &[
        "generate hand motion for the object motion",
        "fill in the hand tokens",
    ]),
];

fn instruction_for(kind: TaskKind, seed: u64) -> &'static str {
    let table = INSTRUCTIONS
        .iter()
        .find(|(n, _)| *n == kind.name())
        .expect("instruction table covers every task")
        .1;
    table[(seed as usize) % table.len()]
}

/// Task-specific bookkeeping needed to stitch generations back together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskInfo {
    None,
    Prediction { prefix_windows: usize },
    Interpolation { masked_windows: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct TaskPair {
    pub source: TokenStream,
    pub target: TokenStream,
    pub info: TaskInfo,
}

/// Build the (source, target) streams for one task instance.
pub fn build_task(
    kind: TaskKind,
    caption: &str,
    triples: &[TokenTriple],
    vocab: &Vocabulary,
    seed: u64,
) -> Result<TaskPair, CodecError> {
    let instruction = vocab.encode_text(instruction_for(kind, seed));
    let n = triples.len();
    let full = motion_to_tokens(triples, vocab)?;
    let with_eos = |mut ids: Vec<u32>| -> TokenStream {
        ids.push(EOS);
        TokenStream { ids }
    };
    match kind {
        TaskKind::TextToMotion => {
            let mut src = instruction;
            src.extend(vocab.encode_text(caption));
            Ok(TaskPair {
                source: with_eos(src),
                target: with_eos(full.ids),
                info: TaskInfo::None,
            })
        }
        TaskKind::MotionToText => {
            let mut src = instruction;
            src.extend(full.ids.iter());
            Ok(TaskPair {
                source: with_eos(src),
                target: with_eos(vocab.encode_text(caption)),
                info: TaskInfo::None,
            })
        }
        TaskKind::Prediction => {
            if n < 2 {
                return Err(CodecError::TooShort(n));
            }
            let prefix = (0.2 * n as f64).ceil() as usize;
            let prefix = prefix.clamp(1, n - 1);
            let head = motion_to_tokens(&triples[..prefix], vocab)?;
            let tail = motion_to_tokens(&triples[prefix..], vocab)?;
            let mut src = instruction;
            src.extend(head.ids.iter());
            Ok(TaskPair {
                source: with_eos(src),
                target: with_eos(tail.ids),
                info: TaskInfo::Prediction {
                    prefix_windows: prefix,
                },
            })
        }
        TaskKind::Interpolation => {
            if n < 2 {
                return Err(CodecError::TooShort(n));
            }
            let k = n / 2;
            let masked = sample_without_replacement(n, k, seed);
            let mut ids = full.ids.clone();
            for &w in &masked {
                for slot in 0..3 {
                    ids[1 + w * 3 + slot] = MASK;
                }
            }
            let mut src = instruction;
            src.extend(ids);
            Ok(TaskPair {
                source: with_eos(src),
                target: with_eos(full.ids),
                info: TaskInfo::Interpolation {
                    masked_windows: masked,
                },
            })
        }
        TaskKind::ObjectConditioned => {
            let (masked, _) = mask_hand_tokens(&full, vocab)?;
            let mut src = instruction;
            src.extend(masked.ids.iter());
            Ok(TaskPair {
                source: with_eos(src),
                target: with_eos(full.ids),
                info: TaskInfo::None,
            })
        }
    }
}

/// Seeded k-of-n selection, returned sorted.
fn sample_without_replacement(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A7E);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut picked: Vec<usize> = idx.into_iter().take(k).collect();
    picked.sort_unstable();
    picked
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

/// Whitespace-separated token names, one stream per line.
pub fn stream_to_text(stream: &TokenStream, vocab: &Vocabulary) -> String {
    stream
        .ids
        .iter()
        .map(|&id| vocab.name(id))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_stream(line: &str, vocab: &Vocabulary) -> Result<TokenStream, CodecError> {
    let mut ids = Vec::new();
    for name in line.split_whitespace() {
        let id = vocab
            .id(name)
            .ok_or_else(|| CodecError::UnknownToken(name.to_string()))?;
        ids.push(id);
    }
    Ok(TokenStream { ids })
}
