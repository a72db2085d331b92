//! Finite-difference checks over the primitives, the LSTM cell, one
//! attention read and the full teacher-forced MTL loss.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use phrasenet_core::prosody::{lstm_cell, LstmParams};
use phrasenet_core::spectral::{attention_step, Attention, MelSpectrogram, N_MELS};
use phrasenet_core::tensor::{grad_check, GradCheckReport, Graph, OpKind, ParamStore, Tensor, Var};
use phrasenet_core::text::{parse_annotated, SymbolTable, WordEmbeddingTable, WORD_EMBED_DIM};
use phrasenet_core::train::{Batch, Model, TrainConfig, Variant};

pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;
/// The full model sums thousands of terms; a wider step keeps FD round-off
/// well below the smallest gradients being checked.
const MODEL_STEP: f64 = 1e-4;
const SAMPLES: usize = 64;

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: String,
    pub passed: bool,
}

impl CaseResult {
    fn new(name: &str, r: GradCheckReport) -> Self {
        Self {
            name: name.to_string(),
            max_rel_error: r.max_rel_error,
            checked: r.checked,
            worst: r.worst.clone(),
            passed: r.passes(TOLERANCE),
        }
    }
}

fn smooth(shape: &[usize], phase: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| (i as f64 * 0.73 + phase).sin()).collect()).expect("shape")
}

/// Reduces `out` against fixed random weights so no gradient is trivially zero.
fn probe_loss(g: &mut Graph, out: Var, seed: u64) -> phrasenet_core::Result<Var> {
    let shape = g.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let wv = g.constant(w);
    let p = g.mul(out, wv)?;
    Ok(g.sum(p))
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> phrasenet_core::Result<Var>>;

fn primitive_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    let kind = |k: OpKind| -> Build { Box::new(move |g, v| g.forward_primitive(&k, v)) };
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], kind(OpKind::MatMul)),
        ("add", vec![vec![3, 4], vec![3, 4]], kind(OpKind::Add)),
        ("add_row", vec![vec![3, 4], vec![4]], kind(OpKind::Add)),
        ("mul", vec![vec![3, 4], vec![3, 4]], kind(OpKind::Mul)),
        ("concat", vec![vec![2, 3], vec![2, 2]], kind(OpKind::Concat { axis: 1 })),
        ("slice", vec![vec![4, 5]], kind(OpKind::Slice { axis: 1, start: 1, end: 4 })),
        ("sigmoid", vec![vec![3, 4]], kind(OpKind::Sigmoid)),
        ("tanh", vec![vec![3, 4]], kind(OpKind::Tanh)),
        ("relu", vec![vec![3, 4]], kind(OpKind::Relu)),
        ("softmax", vec![vec![3, 5]], kind(OpKind::Softmax)),
        (
            "embedding_gather",
            vec![vec![5, 3]],
            kind(OpKind::EmbeddingGather { indices: vec![0, 3, 3, 1] }),
        ),
        ("sum", vec![vec![3, 4]], kind(OpKind::Sum)),
        ("mean", vec![vec![3, 4]], kind(OpKind::Mean)),
        ("sub", vec![vec![3, 4], vec![3, 4]], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("affine", vec![vec![3, 4]], Box::new(|g, v| Ok(g.affine(v[0], -1.7, 0.3)))),
        ("transpose", vec![vec![3, 4]], Box::new(|g, v| g.transpose(v[0]))),
        ("reshape", vec![vec![3, 4]], Box::new(|g, v| g.reshape(v[0], &[2, 6]))),
        ("tile_rows", vec![vec![2, 3]], Box::new(|g, v| g.tile_rows(v[0], 3))),
        (
            "attend",
            vec![vec![2, 3], vec![6, 4]],
            Box::new(|g, v| {
                let w = g.softmax(v[0]);
                g.attend(w, v[1])
            }),
        ),
        (
            "weighted_sq_err",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|g, v| g.weighted_sq_err(v[0], v[1], Some((0..12).map(|i| 0.1 * (i % 3) as f64).collect()))),
        ),
        (
            "nll",
            vec![vec![3, 5]],
            Box::new(|g, v| {
                let p = g.softmax(v[0]);
                g.nll(p, &[0, 4, 2], &[0.5, 0.5, 1.0], 1e-12)
            }),
        ),
    ]
}

pub fn check_primitives(seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (ci, (name, shapes, build)) in primitive_cases().into_iter().enumerate() {
        let mut store = ParamStore::new();
        let ids = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.register(&format!("in{i}"), smooth(s, ci as f64 + i as f64)))
            .collect::<phrasenet_core::Result<Vec<_>>>()?;
        let probe = seed.wrapping_add(ci as u64);
        let report = grad_check(
            &store,
            |g, s| {
                let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
                let y = build(g, &vars)?;
                probe_loss(g, y, probe)
            },
            SAMPLES,
            STEP,
            seed,
        )?;
        out.push(CaseResult::new(&format!("primitive/{name}"), report));
    }
    Ok(out)
}

pub fn check_lstm_cell(seed: u64) -> Result<CaseResult> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = LstmParams::register(&mut store, "cell", 4, 3, &mut rng)?;
    for param in store.iter_mut() {
        param.tensor.data_mut().iter_mut().for_each(|v| *v *= 4.0);
    }
    let x = smooth(&[2, 4], 0.2);
    let h0 = smooth(&[2, 3], 1.1);
    let c0 = smooth(&[2, 3], 2.3);
    let report = grad_check(
        &store,
        |g, s| {
            let (xv, hv, cv) = (g.constant(x.clone()), g.constant(h0.clone()), g.constant(c0.clone()));
            let (h, c) = lstm_cell(g, s, &p, xv, hv, cv)?;
            let both = g.concat(&[h, c], 1)?;
            probe_loss(g, both, seed)
        },
        SAMPLES,
        STEP,
        seed,
    )?;
    Ok(CaseResult::new("lstm_cell", report))
}

pub fn check_attention_step(seed: u64) -> Result<CaseResult> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attn = Attention::register(&mut store, "attn", 4, 6, 5, &mut rng)?;
    for param in store.iter_mut() {
        param.tensor.data_mut().iter_mut().for_each(|v| *v *= 12.0);
    }
    let q = smooth(&[1, 4], 0.4);
    let m = smooth(&[5, 6], 1.7);
    let report = grad_check(
        &store,
        |g, s| {
            let (qv, mv) = (g.constant(q.clone()), g.constant(m.clone()));
            let (c, w) = attention_step(g, s, &attn, qv, mv)?;
            let both = g.concat(&[c, w], 1)?;
            probe_loss(g, both, seed)
        },
        SAMPLES,
        STEP,
        seed,
    )?;
    Ok(CaseResult::new("attention_step", report))
}

/// Tiny MTL configuration used by the full-loss check.
pub fn toy_config() -> TrainConfig {
    TrainConfig {
        system_variant: Variant::MtlTacotron,
        reduction: 2,
        char_embed: 6,
        enc_prenet1: 5,
        enc_prenet2: 4,
        enc_rnn: 3,
        attention_dim: 4,
        dec_prenet: 4,
        attention_rnn: 5,
        decoder_rnn: 5,
        prosody_lstm: 3,
        prosody_hidden: 4,
        ..TrainConfig::default()
    }
}

pub fn check_full_mtl_loss(seed: u64) -> Result<CaseResult> {
    let config = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut utts = vec![parse_annotated("ab#B cd.")?, parse_annotated("ba, d.")?];
    let symbols = SymbolTable::build(utts.iter());
    let mut words: Vec<String> = utts.iter().flat_map(|u| u.words.clone()).collect();
    words.sort();
    words.dedup();
    let entries = words
        .into_iter()
        .map(|w| (w, (0..WORD_EMBED_DIM).map(|_| rng.random_range(-0.5..0.5)).collect()))
        .collect();
    let table = WordEmbeddingTable::new(entries)?;
    for (i, u) in utts.iter_mut().enumerate() {
        u.encode(&symbols);
        let frames = 6 + 2 * i;
        let data = (0..frames * N_MELS).map(|_| rng.random_range(-0.5..0.5)).collect();
        u.mel_target = Some(MelSpectrogram::new(frames, data, 16000, 256, 1024)?);
    }
    let refs: Vec<_> = utts.iter().collect();
    let batch = Batch::new(&refs, &table, config.reduction, true)?;

    let mut store = ParamStore::new();
    let model = Model::register(&mut store, &config, symbols.len(), &mut rng)?;
    for param in store.iter_mut() {
        param.tensor.data_mut().iter_mut().for_each(|v| *v *= 8.0);
    }
    let report = grad_check(
        &store,
        |g, s| {
            let l = model.losses::<ChaCha8Rng>(g, s, &batch, config.w, None)?;
            Ok(l.total)
        },
        2 * SAMPLES,
        MODEL_STEP,
        seed,
    )?;
    Ok(CaseResult::new("full_mtl_loss", report))
}

pub fn run_suite(seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = check_primitives(seed)?;
    out.push(check_lstm_cell(seed)?);
    out.push(check_attention_step(seed)?);
    out.push(check_full_mtl_loss(seed)?);
    Ok(out)
}
