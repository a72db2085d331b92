use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phrasenet_core::prosody::{predict_breaks, ProsodyDims, WordBatch};
use phrasenet_core::spectral::{upsample_indices, upsample_pe, Attention};
use phrasenet_core::text::{format_annotated, parse_annotated, WORD_EMBED_DIM};
use phrasenet_core::vocoder::{StftConfig, Vocoder};
use phrasenet_core::{Graph, ParamStore, ProsodyGenerator, Tensor, Utterance, WordEmbeddingTable};

fn word() -> impl Strategy<Value = String> {
    "[a-e]{1,4}"
}

fn line() -> impl Strategy<Value = String> {
    prop::collection::vec((word(), any::<bool>(), prop::sample::select(vec!["", ",", ";"])), 1..8).prop_map(|ws| {
        let n = ws.len();
        let mut parts = Vec::new();
        for (i, (w, b, p)) in ws.into_iter().enumerate() {
            let mark = if b { "#B" } else { "" };
            let punct = if i + 1 == n { "." } else { p };
            parts.push(format!("{w}{mark}{punct}"));
        }
        parts.join(" ")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generator_rows_are_distributions(text in line(), seed in 0u64..1000) {
        let utt = parse_annotated(&text).unwrap();
        prop_assert_eq!(parse_annotated(&format_annotated(&utt)).unwrap().break_labels, utt.break_labels.clone());
        let table = WordEmbeddingTable::new(vec![("a".into(), vec![0.5; WORD_EMBED_DIM])]).unwrap();
        let mut store = ParamStore::new();
        let dims = ProsodyDims { lstm: 4, hidden: 3 };
        let gen = ProsodyGenerator::register(&mut store, dims, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let pe = gen.predict(&store, &utt, &table).unwrap();
        prop_assert_eq!(pe.len(), utt.num_tokens());
        for t in 0..pe.len() {
            let row = pe.row(t);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(predict_breaks(&pe).len(), utt.num_tokens());
    }

    #[test]
    fn batched_upsampling_matches_per_utterance(texts in prop::collection::vec(line(), 1..4)) {
        let utts: Vec<Utterance> = texts.iter().map(|t| parse_annotated(t).unwrap()).collect();
        let refs: Vec<&Utterance> = utts.iter().collect();
        let table = WordEmbeddingTable::new(vec![("a".into(), vec![0.0; WORD_EMBED_DIM])]).unwrap();
        let words = WordBatch::new(&refs, &table);
        let b = utts.len();
        let steps = utts.iter().map(|u| u.num_chars()).max().unwrap();
        let spans: Vec<&[(usize, usize)]> = utts.iter().map(|u| u.word_char_spans.as_slice()).collect();
        let idx = upsample_indices(&spans, steps).unwrap();
        for (bi, u) in utts.iter().enumerate() {
            // Token t of item bi lives in row t·B + bi of the time-major word matrix.
            let pe = Tensor::new(vec![u.num_tokens(), 1], (0..u.num_tokens()).map(|t| t as f64).collect()).unwrap();
            let up = upsample_pe(&pe, &u.word_char_spans).unwrap();
            for c in 0..u.num_chars() {
                prop_assert_eq!(idx[c * b + bi], up.row(c)[0] as usize * words.batch_size() + bi);
            }
        }
    }

    #[test]
    fn masked_attention_is_a_distribution_over_valid_positions(
        lengths in prop::collection::vec(1usize..7, 1..4),
        seed in 0u64..1000,
    ) {
        let mut store = ParamStore::new();
        let attn = Attention::register(&mut store, "a", 3, 4, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = lengths.len();
        let steps = *lengths.iter().max().unwrap();
        let mut g = Graph::new();
        let values = g.constant(Tensor::new(vec![steps * b, 4], (0..steps * b * 4).map(|i| ((i as f64) * 0.37 + seed as f64).sin()).collect()).unwrap());
        let mem = attn.prepare(&mut g, &store, values, &lengths).unwrap();
        let q = g.constant(Tensor::new(vec![b, 3], (0..3 * b).map(|i| (i as f64).cos() * 3.0).collect()).unwrap());
        let (_, w) = attn.step(&mut g, &store, q, &mem).unwrap();
        let w = g.value(w);
        for (bi, &len) in lengths.iter().enumerate() {
            let row = w.row(bi);
            prop_assert!((row[..len].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row[len..].iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn vocoder_keeps_a_tone_in_its_mel_band() {
    let voc = Vocoder::new(StftConfig::default()).unwrap();
    let x: Vec<f64> = (0..8000).map(|n| 0.5 * (2.0 * std::f64::consts::PI * 500.0 * n as f64 / 16000.0).sin()).collect();
    let mel = voc.analyze(&x).unwrap();
    let y = voc.synthesize(&mel, 30, 1.5).unwrap();
    assert_eq!(y.len(), (mel.frames - 1) * 256);
    let again = voc.analyze(&y).unwrap();
    let peak = |m: &phrasenet_core::MelSpectrogram| {
        let t = m.frames / 2;
        let f = m.frame(t);
        (0..f.len()).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap()
    };
    assert!(peak(&mel).abs_diff(peak(&again)) <= 1);
}
