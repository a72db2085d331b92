use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Utterance;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WORD_EMBED_DIM: usize = 200;

/// Immutable word → vector table. Lookups are case-sensitive; unknown
/// words map to the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddingTable {
    words: Vec<String>,
    vocab: HashMap<String, usize>,
    matrix: Vec<f64>,
}

impl WordEmbeddingTable {
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut t = Self {
            words: Vec::with_capacity(entries.len()),
            vocab: HashMap::with_capacity(entries.len()),
            matrix: Vec::with_capacity(entries.len() * WORD_EMBED_DIM),
        };
        for (line, (w, v)) in entries.into_iter().enumerate() {
            if v.len() != WORD_EMBED_DIM {
                return Err(Error::DimensionMismatch {
                    path: "<memory>".into(),
                    line: line + 1,
                    expected: WORD_EMBED_DIM,
                    found: v.len(),
                });
            }
            if t.vocab.contains_key(&w) {
                return Err(Error::DuplicateWord {
                    path: "<memory>".into(),
                    line: line + 1,
                    word: w,
                });
            }
            t.vocab.insert(w.clone(), t.words.len());
            t.words.push(w);
            t.matrix.extend(v);
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        WORD_EMBED_DIM
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vocab
            .get(word)
            .map(|&i| &self.matrix[i * WORD_EMBED_DIM..(i + 1) * WORD_EMBED_DIM])
    }
}

/// `T×200` word-embedding matrix for an utterance plus the number of
/// out-of-vocabulary lexical words. Non-lexical tokens and unknown words get
/// zero rows.
pub fn lookup_word_embeddings(utt: &Utterance, table: &WordEmbeddingTable) -> (Tensor, usize) {
    let mut data = vec![0.0; utt.num_tokens() * WORD_EMBED_DIM];
    let mut oov = 0;
    for (t, (w, l)) in utt.words.iter().zip(&utt.break_labels).enumerate() {
        if !l.is_lexical() {
            continue;
        }
        match table.get(w) {
            Some(row) => data[t * WORD_EMBED_DIM..(t + 1) * WORD_EMBED_DIM].copy_from_slice(row),
            None => oov += 1,
        }
    }
    if oov > 0 {
        log::debug!("{}: {oov} out-of-vocabulary word(s)", utt.id);
    }
    let t = Tensor::new(vec![utt.num_tokens(), WORD_EMBED_DIM], data).expect("shape");
    (t, oov)
}

/// Reads the `<vocab> <dim>` header plus one `<word> <floats...>` line per word.
pub fn load_embedding_file(path: &Path) -> Result<WordEmbeddingTable> {
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, reason: String| Error::EmbeddingParse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let [count, dim] = head[..] else {
        return Err(parse_err(1, format!("expected `<vocab_size> <dim>`, got `{header}`")));
    };
    let count: usize = count
        .parse()
        .map_err(|_| parse_err(1, format!("bad vocab size `{count}`")))?;
    let dim: usize = dim.parse().map_err(|_| parse_err(1, format!("bad dim `{dim}`")))?;
    if dim != WORD_EMBED_DIM {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            line: 1,
            expected: WORD_EMBED_DIM,
            found: dim,
        });
    }

    let mut table = WordEmbeddingTable {
        words: Vec::with_capacity(count),
        vocab: HashMap::with_capacity(count),
        matrix: Vec::with_capacity(count * dim),
    };
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let word = fields.next().expect("non-empty line").to_string();
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(ln, format!("bad float `{f}`"))))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::DimensionMismatch {
                path: path.to_path_buf(),
                line: ln,
                expected: dim,
                found: values.len(),
            });
        }
        if table.vocab.contains_key(&word) {
            return Err(Error::DuplicateWord {
                path: path.to_path_buf(),
                line: ln,
                word,
            });
        }
        table.vocab.insert(word.clone(), table.words.len());
        table.words.push(word);
        table.matrix.extend(values);
    }
    if table.words.len() != count {
        return Err(parse_err(
            1,
            format!("header declares {count} words, file has {}", table.words.len()),
        ));
    }
    Ok(table)
}

/// Writes the table with shortest round-trip float formatting, so loading
/// reproduces every value bit-exactly.
pub fn save_embedding_file(table: &WordEmbeddingTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{} {}", table.len(), WORD_EMBED_DIM).expect("string write");
    for (i, w) in table.words.iter().enumerate() {
        out.push_str(w);
        for v in &table.matrix[i * WORD_EMBED_DIM..(i + 1) * WORD_EMBED_DIM] {
            write!(out, " {v}").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_annotated;
    use rand::{Rng, SeedableRng};

    fn entry(word: &str, fill: f64) -> (String, Vec<f64>) {
        (word.to_string(), vec![fill; WORD_EMBED_DIM])
    }

    #[test]
    fn lookup_present_and_oov() {
        let table = WordEmbeddingTable::new(vec![entry("ab", 0.5), entry("Cd", -1.0)]).unwrap();
        let u = parse_annotated("ab cd#B Cd.").unwrap();
        let (we, oov) = lookup_word_embeddings(&u, &table);
        assert_eq!(we.shape(), &[u.num_tokens(), WORD_EMBED_DIM]);
        assert_eq!(oov, 1);
        assert_eq!(we.row(0), table.get("ab").unwrap());
        assert!(we.row(2).iter().all(|&v| v == 0.0));
        assert_eq!(we.row(4), table.get("Cd").unwrap());
        // Blank and stop rows are zero too.
        assert!(we.row(1).iter().chain(we.row(5)).all(|&v| v == 0.0));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let entries = (0..5)
            .map(|i| {
                let v: Vec<f64> = (0..WORD_EMBED_DIM).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                (format!("w{i}"), v)
            })
            .collect();
        let table = WordEmbeddingTable::new(entries).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        save_embedding_file(&table, &p).unwrap();
        assert_eq!(load_embedding_file(&p).unwrap(), table);
    }

    #[test]
    fn load_small_file_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let row = |n: usize| vec!["0.25"; n].join(" ");
        let p = dir.path().join("ok.txt");
        fs::write(&p, format!("2 200\nab {}\ncd {}\n", row(200), row(200))).unwrap();
        assert_eq!(load_embedding_file(&p).unwrap().len(), 2);

        let p = dir.path().join("short.txt");
        fs::write(&p, format!("2 200\nab {}\ncd {}\n", row(200), row(199))).unwrap();
        let e = load_embedding_file(&p).unwrap_err();
        assert!(matches!(e, Error::DimensionMismatch { line: 3, found: 199, .. }), "{e}");

        let p = dir.path().join("dup.txt");
        fs::write(&p, format!("2 200\nab {}\nab {}\n", row(200), row(200))).unwrap();
        assert!(matches!(load_embedding_file(&p), Err(Error::DuplicateWord { line: 3, .. })));

        let p = dir.path().join("dim.txt");
        fs::write(&p, "1 3\nab 1 2 3\n").unwrap();
        assert!(matches!(load_embedding_file(&p), Err(Error::DimensionMismatch { line: 1, .. })));

        let p = dir.path().join("bad.txt");
        fs::write(&p, format!("1 200\nab {} x\n", row(199))).unwrap();
        assert!(matches!(load_embedding_file(&p), Err(Error::EmbeddingParse { line: 2, .. })));
    }
}
