//! Two-stage language model training (span-corruption pretraining,
//! instruction tuning) and the task runners that stitch generations back
//! into sequences.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{generate, LmConfig, LmError, LmParams, SampleMode};
use crate::codec::{
    mask_hand_tokens, motion_to_tokens, segments, tokens_to_motion, CodecError, SegmentKind,
    TaskKind, TokenStream, Vocabulary, EOS, HOI, MASK,
};
use crate::diff::adam::{Adam, GradAccum};
use crate::diff::{Tape, Tensor};
use crate::kinematics::{HoiSequence, ObjectModel};
use crate::quantizer::TokenTriple;
use crate::toktrain::{decode_sequence, encode_sequence, TokTrainError, TokenizerArtifacts};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Tokenizer(#[from] TokTrainError),
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Span corruption
// ---------------------------------------------------------------------------

/// T5-style span corruption. Roughly `rate * len` tokens are removed in
/// spans of the configured mean length and replaced by `<Xi>` sentinels; the
/// target lists each sentinel followed by its original tokens, ending in
/// `<EOS>`. Spans never cover `<HOI>` sentinels, so the motion grammar stays
/// intact in the corrupted input.
pub fn corrupt_spans(
    stream: &[u32],
    rate: f64,
    mean_span: f64,
    rng: &mut ChaCha8Rng,
    vocab: &Vocabulary,
) -> (Vec<u32>, Vec<u32>) {
    let n = stream.len();
    let eligible: Vec<bool> = stream.iter().map(|&t| t != HOI).collect();
    let eligible_count = eligible.iter().filter(|&&e| e).count();
    let m = ((rate * n as f64).round() as usize).min(eligible_count);
    if m == 0 {
        return (stream.to_vec(), vec![EOS]);
    }
    let mut masked = vec![false; n];
    let mut remaining = m;
    let continue_p = 1.0 - 1.0 / mean_span.max(1.0);
    while remaining > 0 {
        let mut span_len = 1usize;
        while span_len < remaining && span_len < 2 * mean_span as usize && rng.gen_bool(continue_p)
        {
            span_len += 1;
        }
        let mut placed = false;
        for _ in 0..50 {
            let start = rng.gen_range(0..n);
            if start + span_len > n {
                continue;
            }
            if (start..start + span_len).all(|i| eligible[i] && !masked[i]) {
                for i in start..start + span_len {
                    masked[i] = true;
                }
                remaining -= span_len;
                placed = true;
                break;
            }
        }
        if !placed {
            // Deterministic fallback: first free eligible slot.
            match (0..n).find(|&i| eligible[i] && !masked[i]) {
                Some(i) => {
                    masked[i] = true;
                    remaining -= 1;
                }
                None => break,
            }
        }
    }

    let mut input = Vec::with_capacity(n);
    let mut target = Vec::new();
    let mut sentinel = 0usize;
    let mut i = 0;
    while i < n {
        if masked[i] {
            let tok = vocab.span_token(sentinel);
            input.push(tok);
            target.push(tok);
            while i < n && masked[i] {
                target.push(stream[i]);
                i += 1;
            }
            sentinel += 1;
        } else {
            input.push(stream[i]);
            i += 1;
        }
    }
    target.push(EOS);
    (input, target)
}

// ---------------------------------------------------------------------------
// Stage 1: pretraining
// ---------------------------------------------------------------------------

/// Stage-1 corpus: caption/motion pairs plus unpaired streams (either pure
/// text or pure motion), all without trailing `<EOS>`.
pub struct PretrainCorpus {
    pub paired: Vec<(Vec<u32>, Vec<u32>)>,
    pub unpaired: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy)]
pub struct PretrainLog {
    pub step: usize,
    pub loss: f64,
}

/// Span-mask pretraining over a mixed corpus: each batch draws supervised
/// caption/motion pairs and span-corrupted streams at the configured ratio.
pub fn pretrain_spans(
    params: &mut LmParams,
    corpus: &PretrainCorpus,
    cfg: &LmConfig,
    vocab: &Vocabulary,
) -> Result<Vec<PretrainLog>, LmError> {
    assert!(
        !corpus.paired.is_empty() || !corpus.unpaired.is_empty(),
        "empty pretraining corpus"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ 0x57A6E1));
    let mut adam = Adam::new(&params.store, cfg.learning_rate);
    let mut accum = GradAccum::new(&params.store);
    let mut log = Vec::with_capacity(cfg.pretrain_steps);

    for step in 0..cfg.pretrain_steps {
        let mut examples: Vec<(Vec<u32>, Vec<u32>)> = Vec::with_capacity(cfg.pretrain_batch);
        for _ in 0..cfg.pretrain_batch {
            let supervised = !corpus.paired.is_empty()
                && (corpus.unpaired.is_empty() || rng.gen_bool(cfg.supervised_ratio));
            if supervised {
                let (caption, motion) = &corpus.paired[rng.gen_range(0..corpus.paired.len())];
                let (mut src, mut tgt) = if rng.gen_bool(0.5) {
                    (caption.clone(), motion.clone())
                } else {
                    (motion.clone(), caption.clone())
                };
                src.push(EOS);
                tgt.push(EOS);
                examples.push((src, tgt));
            } else {
                // Span corruption over a paired concatenation or an
                // unpaired stream.
                let use_pair = !corpus.paired.is_empty()
                    && (corpus.unpaired.is_empty() || rng.gen_bool(0.5));
                let stream: Vec<u32> = if use_pair {
                    let (caption, motion) = &corpus.paired[rng.gen_range(0..corpus.paired.len())];
                    caption.iter().chain(motion.iter()).copied().collect()
                } else {
                    corpus.unpaired[rng.gen_range(0..corpus.unpaired.len())].clone()
                };
                let (input, target) = corrupt_spans(&stream, cfg.span_rate, cfg.mean_span, &mut rng, vocab);
                examples.push((input, target));
            }
        }

        let tape = Tape::new();
        let bound = params.store.bind(&tape);
        let mut losses = Vec::with_capacity(examples.len());
        for (src, tgt) in &examples {
            losses.push(params.loss_graph(&tape, &bound, src, tgt)?);
        }
        let batch_loss = Tensor::concat_cols(&losses)?.reduce_mean();
        let grads = batch_loss.backward()?;
        accum.reset();
        for (i, leaf) in bound.iter().enumerate() {
            accum.add(i, &grads.get(leaf));
        }
        adam.step(&mut params.store, accum.sums());
        log.push(PretrainLog {
            step,
            loss: batch_loss.item(),
        });
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// Stage 2: instruction tuning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TuneExample {
    pub kind: TaskKind,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct TuneEpochLog {
    pub epoch: usize,
    pub total: f64,
    pub per_task: Vec<(TaskKind, f64)>,
}

/// Instruction tuning: full shuffled passes over the multi-task dataset, so
/// every epoch's task mixture matches the dataset proportions exactly.
pub fn instruction_tune(
    params: &mut LmParams,
    dataset: &[TuneExample],
    cfg: &LmConfig,
) -> Result<Vec<TuneEpochLog>, LmError> {
    assert!(!dataset.is_empty(), "empty instruction-tuning dataset");
    let mut adam = Adam::new(&params.store, cfg.learning_rate);
    let mut accum = GradAccum::new(&params.store);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(cfg.tune_epochs);

    for epoch in 0..cfg.tune_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ 0x7E41 ^ epoch as u64));
        order.shuffle(&mut rng);
        let mut totals: Vec<(TaskKind, f64, usize)> = TaskKind::all()
            .iter()
            .map(|k| (*k, 0.0, 0usize))
            .collect();
        let mut epoch_total = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let bound = params.store.bind(&tape);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let ex = &dataset[i];
                let loss = params.loss_graph(&tape, &bound, &ex.source, &ex.target)?;
                let slot = totals.iter_mut().find(|(k, ..)| *k == ex.kind).unwrap();
                slot.1 += loss.item();
                slot.2 += 1;
                epoch_total += loss.item();
                losses.push(loss);
            }
            let batch_loss = Tensor::concat_cols(&losses)?.reduce_mean();
            let grads = batch_loss.backward()?;
            accum.reset();
            for (i, leaf) in bound.iter().enumerate() {
                accum.add(i, &grads.get(leaf));
            }
            adam.step(&mut params.store, accum.sums());
        }

        log.push(TuneEpochLog {
            epoch,
            total: epoch_total / dataset.len() as f64,
            per_task: totals
                .into_iter()
                .filter(|(_, _, n)| *n > 0)
                .map(|(k, s, n)| (k, s / n as f64))
                .collect(),
        });
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// Task runners
// ---------------------------------------------------------------------------

/// Inputs to one task run.
pub struct TaskInput<'a> {
    /// Caption (text-to-motion only).
    pub caption: Option<&'a str>,
    /// Input sequence (all motion-conditioned tasks).
    pub sequence: Option<&'a HoiSequence>,
    pub model: &'a ObjectModel,
    /// Fraction of windows masked for interpolation.
    pub interp_mask_ratio: f64,
}

#[derive(Debug, Clone)]
pub enum TaskOutput {
    Sequence(HoiSequence),
    Text(String),
}

/// Outcome of one task run: the generated stream, an optional decoded
/// output, and a malformed-generation note (outputs are never repaired).
pub struct TaskRun {
    pub generated: TokenStream,
    pub output: Option<TaskOutput>,
    pub malformed: Option<String>,
    /// Final stitched motion stream (motion tasks), with conditioning
    /// tokens preserved verbatim.
    pub stitched: Option<TokenStream>,
}

fn instruction_ids(kind: TaskKind, vocab: &Vocabulary, seed: u64) -> Vec<u32> {
    // Keep prompt choice aligned with the tuning dataset builder.
    let table: Vec<&str> = crate::codec::INSTRUCTIONS
        .iter()
        .find(|(n, _)| *n == kind.name())
        .map(|(_, t)| t.to_vec())
        .expect("instruction table");
    vocab.encode_text(table[(seed as usize) % table.len()])
}

fn parse_motion_windows(
    ids: &[u32],
    vocab: &Vocabulary,
) -> Result<Vec<TokenTriple>, CodecError> {
    // Accept exactly one motion segment, ignoring stray non-motion tokens
    // is NOT allowed: the stream must be the sandwich alone.
    tokens_to_motion(&TokenStream::new(ids.to_vec()), vocab)
}

/// Run one task end to end: build the source, generate, validate, stitch,
/// and decode. Conditioning windows and object tokens from the input are
/// preserved verbatim in the stitched output.
#[allow(clippy::too_many_arguments)]
pub fn run_task(
    kind: TaskKind,
    input: &TaskInput,
    params: &LmParams,
    vocab: &Vocabulary,
    artifacts: &TokenizerArtifacts,
    mode: SampleMode,
    seed: u64,
) -> Result<TaskRun, TaskError> {
    let w = artifacts.window();
    match kind {
        TaskKind::TextToMotion => {
            let caption = input.caption.unwrap_or_default();
            let mut src = instruction_ids(kind, vocab, seed);
            src.extend(vocab.encode_text(caption));
            src.push(EOS);
            let gen = generate(params, &src, mode, seed)?;
            let generated = TokenStream::new(gen.clone());
            match parse_motion_windows(&gen, vocab) {
                Ok(triples) => {
                    let seq = decode_sequence(&triples, input.model, artifacts, 30.0, caption, None)?;
                    Ok(TaskRun {
                        generated: generated.clone(),
                        output: Some(TaskOutput::Sequence(seq)),
                        malformed: None,
                        stitched: Some(generated),
                    })
                }
                Err(e) => Ok(TaskRun {
                    generated,
                    output: None,
                    malformed: Some(e.to_string()),
                    stitched: None,
                }),
            }
        }
        TaskKind::MotionToText => {
            let seq = input.sequence.expect("motion-to-text needs a sequence");
            let triples = encode_sequence(seq, artifacts)?;
            let motion = motion_to_tokens(&triples, vocab)?;
            let mut src = instruction_ids(kind, vocab, seed);
            src.extend(motion.ids.iter());
            src.push(EOS);
            let gen = generate(params, &src, mode, seed)?;
            let generated = TokenStream::new(gen.clone());
            // A caption must be pure text.
            let malformed = segments(&generated, vocab)
                .ok()
                .filter(|segs| segs.iter().all(|s| s.kind == SegmentKind::Text))
                .is_none();
            if malformed {
                Ok(TaskRun {
                    generated,
                    output: None,
                    malformed: Some("caption contains motion tokens".into()),
                    stitched: None,
                })
            } else {
                let text = vocab.decode_text(&gen);
                Ok(TaskRun {
                    generated,
                    output: Some(TaskOutput::Text(text)),
                    malformed: None,
                    stitched: None,
                })
            }
        }
        TaskKind::Prediction => {
            let seq = input.sequence.expect("prediction needs a sequence");
            let triples = encode_sequence(seq, artifacts)?;
            let n = triples.len();
            if n < 2 {
                return Err(TaskError::Codec(CodecError::TooShort(n)));
            }
            let prefix = ((0.2 * n as f64).ceil() as usize).clamp(1, n - 1);
            let head = motion_to_tokens(&triples[..prefix], vocab)?;
            let mut src = instruction_ids(kind, vocab, seed);
            src.extend(head.ids.iter());
            src.push(EOS);
            let gen = generate(params, &src, mode, seed)?;
            let generated = TokenStream::new(gen.clone());
            match parse_motion_windows(&gen, vocab) {
                Ok(tail) => {
                    // Stitch: the observed prefix stays verbatim, both as
                    // tokens and as frames.
                    let mut all = triples[..prefix].to_vec();
                    all.extend(tail);
                    let stitched = motion_to_tokens(&all, vocab)?;
                    let decoded =
                        decode_sequence(&all, input.model, artifacts, seq.fps, &seq.caption, None)?;
                    let mut frames = seq.frames[..(prefix * w).min(seq.len())].to_vec();
                    frames.extend_from_slice(&decoded.frames[frames.len().min(decoded.len())..]);
                    let out = HoiSequence {
                        frames,
                        fps: seq.fps,
                        object_id: seq.object_id.clone(),
                        caption: seq.caption.clone(),
                        seed: seq.seed,
                    };
                    Ok(TaskRun {
                        generated,
                        output: Some(TaskOutput::Sequence(out)),
                        malformed: None,
                        stitched: Some(stitched),
                    })
                }
                Err(e) => Ok(TaskRun {
                    generated,
                    output: None,
                    malformed: Some(e.to_string()),
                    stitched: None,
                }),
            }
        }
        TaskKind::Interpolation => {
            let seq = input.sequence.expect("interpolation needs a sequence");
            let triples = encode_sequence(seq, artifacts)?;
            let n = triples.len();
            let k = ((input.interp_mask_ratio * n as f64).floor() as usize).min(n);
            let masked_windows = seeded_pick(n, k, seed);
            if k == 0 {
                // Nothing masked: the input sequence passes through.
                return Ok(TaskRun {
                    generated: TokenStream::default(),
                    output: Some(TaskOutput::Sequence(seq.clone())),
                    malformed: None,
                    stitched: Some(motion_to_tokens(&triples, vocab)?),
                });
            }
            let full = motion_to_tokens(&triples, vocab)?;
            let mut src_ids = instruction_ids(kind, vocab, seed);
            let mut masked_stream = full.ids.clone();
            for &wi in &masked_windows {
                for slot in 0..3 {
                    masked_stream[1 + wi * 3 + slot] = MASK;
                }
            }
            src_ids.extend(masked_stream);
            src_ids.push(EOS);
            let gen = generate(params, &src_ids, mode, seed)?;
            let generated = TokenStream::new(gen.clone());
            match parse_motion_windows(&gen, vocab) {
                Ok(pred) if pred.len() == n => {
                    // Keep provided windows verbatim; fill masked ones from
                    // the generation.
                    let mut stitched_triples = triples.clone();
                    for &wi in &masked_windows {
                        stitched_triples[wi] = pred[wi];
                    }
                    let stitched = motion_to_tokens(&stitched_triples, vocab)?;
                    let decoded = decode_sequence(
                        &stitched_triples,
                        input.model,
                        artifacts,
                        seq.fps,
                        &seq.caption,
                        Some(seq.len()),
                    )?;
                    // Frame-level stitching: unmasked windows keep the input
                    // frames exactly.
                    let mut frames = decoded.frames.clone();
                    for wi in 0..n {
                        if masked_windows.contains(&wi) {
                            continue;
                        }
                        for f in wi * w..((wi + 1) * w).min(seq.len()) {
                            frames[f] = seq.frames[f].clone();
                        }
                    }
                    let out = HoiSequence {
                        frames,
                        fps: seq.fps,
                        object_id: seq.object_id.clone(),
                        caption: seq.caption.clone(),
                        seed: seq.seed,
                    };
                    Ok(TaskRun {
                        generated,
                        output: Some(TaskOutput::Sequence(out)),
                        malformed: None,
                        stitched: Some(stitched),
                    })
                }
                Ok(pred) => Ok(TaskRun {
                    generated,
                    output: None,
                    malformed: Some(format!(
                        "expected {n} windows, generation holds {}",
                        pred.len()
                    )),
                    stitched: None,
                }),
                Err(e) => Ok(TaskRun {
                    generated,
                    output: None,
                    malformed: Some(e.to_string()),
                    stitched: None,
                }),
            }
        }
        TaskKind::ObjectConditioned => {
            let seq = input.sequence.expect("object conditioning needs a sequence");
            let triples = encode_sequence(seq, artifacts)?;
            let full = motion_to_tokens(&triples, vocab)?;
            let (masked, _) = mask_hand_tokens(&full, vocab)?;
            let mut src = instruction_ids(kind, vocab, seed);
            src.extend(masked.ids.iter());
            src.push(EOS);
            let gen = generate(params, &src, mode, seed)?;
            let generated = TokenStream::new(gen.clone());
            match parse_motion_windows(&gen, vocab) {
                Ok(pred) if pred.len() == triples.len() => {
                    // Object tokens from the input, hand tokens from the
                    // generation.
                    let stitched_triples: Vec<TokenTriple> = triples
                        .iter()
                        .zip(&pred)
                        .map(|(orig, p)| TokenTriple {
                            hand_l: p.hand_l,
                            hand_r: p.hand_r,
                            object: orig.object,
                        })
                        .collect();
                    let stitched = motion_to_tokens(&stitched_triples, vocab)?;
                    let decoded = decode_sequence(
                        &stitched_triples,
                        input.model,
                        artifacts,
                        seq.fps,
                        &seq.caption,
                        Some(seq.len()),
                    )?;
                    Ok(TaskRun {
                        generated,
                        output: Some(TaskOutput::Sequence(decoded)),
                        malformed: None,
                        stitched: Some(stitched),
                    })
                }
                Ok(pred) => Ok(TaskRun {
                    generated,
                    output: None,
                    malformed: Some(format!(
                        "expected {} windows, generation holds {}",
                        triples.len(),
                        pred.len()
                    )),
                    stitched: None,
                }),
                Err(e) => Ok(TaskRun {
                    generated,
                    output: None,
                    malformed: Some(e.to_string()),
                    stitched: None,
                }),
            }
        }
    }
}

fn seeded_pick(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A7E);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut picked: Vec<usize> = idx.into_iter().take(k).collect();
    picked.sort_unstable();
    picked
}
