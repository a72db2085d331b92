use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phrasenet_core::spectral::MelSpectrogram;
use phrasenet_core::tensor::ParamStore;
use phrasenet_core::text::{parse_annotated, SymbolTable, Utterance, WordEmbeddingTable, WORD_EMBED_DIM};
use phrasenet_core::train::{train_step, Batch, Model, TrainConfig, TrainState};

/// Eight utterances of about 40 characters with 150-frame targets.
fn batch_inputs(config: &TrainConfig) -> (Vec<Utterance>, WordEmbeddingTable, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let words = ["ab", "kmo", "tisn", "ep", "gul", "dra", "mos"];
    let mut utts = Vec::new();
    for i in 0..8 {
        let line: Vec<String> = (0..10)
            .map(|j| {
                let w = words[(i * 3 + j) % words.len()];
                if (i + j) % 3 == 0 { format!("{w}#B") } else { w.to_string() }
            })
            .collect();
        utts.push(parse_annotated(&(line.join(" ") + ".")).unwrap());
    }
    let symbols = SymbolTable::build(utts.iter());
    let table = WordEmbeddingTable::new(
        words
            .iter()
            .map(|w| (w.to_string(), (0..WORD_EMBED_DIM).map(|_| rng.random_range(-0.5..0.5)).collect()))
            .collect(),
    )
    .unwrap();
    for u in &mut utts {
        u.encode(&symbols);
        let frames = 150;
        let data = (0..frames * 80).map(|_| rng.random_range(-11.0..0.0)).collect();
        u.mel_target = Some(MelSpectrogram::new(frames, data, config.sample_rate, config.hop, config.n_fft).unwrap());
    }
    (utts, table, symbols.len())
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        char_embed: 128,
        enc_prenet1: 128,
        enc_prenet2: 64,
        enc_rnn: 64,
        attention_dim: 64,
        dec_prenet: 64,
        attention_rnn: 128,
        decoder_rnn: 128,
        prosody_lstm: 64,
        prosody_hidden: 64,
        ..TrainConfig::default()
    }
}

fn bench_train_step(c: &mut Criterion) {
    let config = desk_config();
    let (utts, table, vocab) = batch_inputs(&config);
    let refs: Vec<&Utterance> = utts.iter().collect();
    let batch = Batch::new(&refs, &table, config.reduction, true).unwrap();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::register(&mut store, &config, vocab, &mut rng).unwrap();
    let mut state = TrainState::new(store, &config);
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    group.bench_function("mtl_desk_batch8", |b| {
        b.iter(|| train_step(black_box(&mut state), &model, &batch, &config).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_train_step);
criterion_main!(benches);
