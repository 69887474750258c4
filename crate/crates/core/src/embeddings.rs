//! Aligned cross-lingual word embeddings and cosine similarity matrices.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::subtitle::TokenSequence;

/// Word vectors for one language, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    language: String,
    dim: usize,
    index: HashMap<String, usize>,
    words: Vec<String>,
    vectors: Vec<f32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub entries: usize,
    pub duplicates: usize,
    /// Row count announced by the header.
    pub declared: usize,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` entries; the first occurrence of a word wins.
    pub fn from_entries<I>(language: impl Into<String>, dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        let mut table = EmbeddingTable {
            language: language.into(),
            dim,
            index: HashMap::new(),
            words: Vec::new(),
            vectors: Vec::new(),
        };
        for (word, vector) in entries {
            if vector.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: vector.len(),
                });
            }
            table.insert(word, &vector);
        }
        if table.words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        Ok(table)
    }

    fn insert(&mut self, word: String, vector: &[f32]) -> bool {
        if self.index.contains_key(&word) {
            return false;
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.vectors.extend_from_slice(vector);
        true
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Writes the table in the text layout read by [`load_embeddings`].
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Reads a `<count> <dim>` header followed by `<token> <v1> ... <v_dim>` rows.
pub fn load_embeddings<R: BufRead>(
    reader: R,
    expected_dim: usize,
    language: &str,
) -> Result<(EmbeddingTable, LoadReport)> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.ok_or(Error::EmptyVocabulary)?;
    let mut head = header.split_whitespace();
    let parse_head = |s: Option<&str>| -> Result<usize> {
        s.and_then(|s| s.parse().ok()).ok_or_else(|| Error::MalformedRow {
            line: 1,
            reason: format!("expected `<count> <dim>` header, got {header:?}"),
        })
    };
    let declared = parse_head(head.next())?;
    let dim = parse_head(head.next())?;
    if dim != expected_dim {
        return Err(Error::DimMismatch {
            expected: expected_dim,
            found: dim,
        });
    }

    let mut table = EmbeddingTable {
        language: language.to_string(),
        dim,
        index: HashMap::with_capacity(declared),
        words: Vec::with_capacity(declared),
        vectors: Vec::with_capacity(declared * dim),
    };
    let mut report = LoadReport {
        declared,
        ..Default::default()
    };
    let mut row = Vec::with_capacity(dim);
    for (n, line) in lines.enumerate() {
        let line = line?;
        let line_no = n + 2;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        row.clear();
        for field in fields {
            let v: f32 = field.parse().map_err(|_| Error::MalformedRow {
                line: line_no,
                reason: format!("non-numeric value {field:?}"),
            })?;
            row.push(v);
        }
        if row.len() != dim {
            return Err(Error::MalformedRow {
                line: line_no,
                reason: format!("expected {dim} values, found {}", row.len()),
            });
        }
        if !table.insert(word.to_string(), &row) {
            report.duplicates += 1;
        }
    }
    if table.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    report.entries = table.len();
    Ok((table, report))
}

/// Cosine similarity, 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    Ok(cosine_unchecked(u, v))
}

pub(crate) fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

/// Cosine similarities between in-vocabulary source and target tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    pub row_tokens: Vec<String>,
    pub col_tokens: Vec<String>,
    pub src_oov: usize,
    pub tgt_oov: usize,
}

impl SimilarityMatrix {
    /// Builds a matrix from row-major values; token labels are left empty.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged similarity rows".into()));
        }
        Ok(SimilarityMatrix {
            rows: rows.len(),
            cols,
            values: rows.concat(),
            row_tokens: Vec::new(),
            col_tokens: Vec::new(),
            src_oov: 0,
            tgt_oov: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                values.push(self.get(i, j));
            }
        }
        SimilarityMatrix {
            rows: self.cols,
            cols: self.rows,
            values,
            row_tokens: self.col_tokens.clone(),
            col_tokens: self.row_tokens.clone(),
            src_oov: self.tgt_oov,
            tgt_oov: self.src_oov,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SimilarityMatrix {
        SimilarityMatrix {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

pub(crate) fn lookup_f64(table: &EmbeddingTable, word: &str) -> Option<Vec<f64>> {
    table.get(word).map(|v| v.iter().map(|&x| x as f64).collect())
}

/// Cosine matrix between the in-vocabulary tokens of two sequences.
///
/// Out-of-vocabulary tokens are dropped and counted in `src_oov` / `tgt_oov`.
pub fn similarity_matrix(
    src: &TokenSequence,
    tgt: &TokenSequence,
    src_table: &EmbeddingTable,
    tgt_table: &EmbeddingTable,
) -> Result<SimilarityMatrix> {
    if src_table.dim() != tgt_table.dim() {
        return Err(Error::DimMismatch {
            expected: src_table.dim(),
            found: tgt_table.dim(),
        });
    }
    let embed = |seq: &TokenSequence, table: &EmbeddingTable| {
        let mut kept = Vec::new();
        let mut oov = 0;
        for tok in seq.tokens() {
            match lookup_f64(table, tok) {
                Some(v) => kept.push((tok.clone(), v)),
                None => oov += 1,
            }
        }
        (kept, oov)
    };
    let (src_vecs, src_oov) = embed(src, src_table);
    let (tgt_vecs, tgt_oov) = embed(tgt, tgt_table);
    if src_vecs.is_empty() {
        return Err(Error::EmptyAfterOov { side: "source" });
    }
    if tgt_vecs.is_empty() {
        return Err(Error::EmptyAfterOov { side: "target" });
    }
    let mut values = Vec::with_capacity(src_vecs.len() * tgt_vecs.len());
    for (_, u) in &src_vecs {
        for (_, v) in &tgt_vecs {
            values.push(cosine_unchecked(u, v));
        }
    }
    Ok(SimilarityMatrix {
        rows: src_vecs.len(),
        cols: tgt_vecs.len(),
        values,
        row_tokens: src_vecs.into_iter().map(|(t, _)| t).collect(),
        col_tokens: tgt_vecs.into_iter().map(|(t, _)| t).collect(),
        src_oov,
        tgt_oov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toy_table(lang: &str) -> EmbeddingTable {
        EmbeddingTable::from_entries(
            lang,
            2,
            [("a".to_string(), vec![1.0, 0.0]), ("b".to_string(), vec![0.0, 1.0])],
        )
        .unwrap()
    }

    #[test]
    fn loads_text_format() {
        let (t, report) = load_embeddings("2 3\na 1 0 0\nb 0 1 0\n".as_bytes(), 3, "en").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 3);
        assert_eq!(t.get("b").unwrap(), &[0.0, 1.0, 0.0]);
        assert_eq!(report.duplicates, 0);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(
            load_embeddings("2 3\na 1 0 0 0\n".as_bytes(), 3, "en"),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            load_embeddings("2 4\na 1 0 0 0\n".as_bytes(), 3, "en"),
            Err(Error::DimMismatch { expected: 3, found: 4 })
        ));
        assert!(matches!(
            load_embeddings("1 2\na 1 x\n".as_bytes(), 2, "en"),
            Err(Error::MalformedRow { .. })
        ));
        assert!(matches!(load_embeddings("0 2\n".as_bytes(), 2, "en"), Err(Error::EmptyVocabulary)));
    }

    #[test]
    fn duplicates_keep_first() {
        let (t, report) = load_embeddings("3 2\na 1 0\na 0 1\nb 0 1\n".as_bytes(), 2, "en").unwrap();
        assert_eq!(report.duplicates, 1);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("a").unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn write_then_load() {
        let t = toy_table("en");
        let mut buf = Vec::new();
        t.write_text(&mut buf).unwrap();
        let (back, _) = load_embeddings(buf.as_slice(), 2, "en").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), 0.707_106_781, epsilon = 1e-6);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn similarity_examples() {
        let t = toy_table("en");
        let s = similarity_matrix(
            &TokenSequence::from_tokens(["a"]),
            &TokenSequence::from_tokens(["a"]),
            &t,
            &t,
        )
        .unwrap();
        assert_eq!((s.rows(), s.cols()), (1, 1));
        assert_eq!(s.get(0, 0), 1.0);

        let s = similarity_matrix(
            &TokenSequence::from_tokens(["a", "zzz"]),
            &TokenSequence::from_tokens(["a", "b"]),
            &t,
            &t,
        )
        .unwrap();
        assert_eq!((s.rows(), s.cols(), s.src_oov), (1, 2, 1));

        let s = similarity_matrix(
            &TokenSequence::from_tokens(["a", "b"]),
            &TokenSequence::from_tokens(["b"]),
            &t,
            &t,
        )
        .unwrap();
        assert_eq!(s.values(), &[0.0, 1.0]);

        let err = similarity_matrix(
            &TokenSequence::from_tokens(["q"]),
            &TokenSequence::from_tokens(["b"]),
            &t,
            &t,
        );
        assert!(matches!(err, Err(Error::EmptyAfterOov { side: "source" })));
    }

    fn random_table(words: usize, dim: usize, seed: &[f32]) -> EmbeddingTable {
        EmbeddingTable::from_entries(
            "xx",
            dim,
            (0..words).map(|w| {
                let v = (0..dim).map(|d| seed[(w * dim + d) % seed.len()] + 0.01 * w as f32).collect();
                (format!("w{w}"), v)
            }),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn similarity_properties(
            seed in prop::collection::vec(-1.0f32..1.0, 16..64),
            src in prop::collection::vec(0usize..8, 1..10),
            tgt in prop::collection::vec(0usize..8, 1..10),
        ) {
            let table = random_table(8, 4, &seed);
            let a = TokenSequence::from_tokens(src.iter().map(|w| format!("w{w}")));
            let b = TokenSequence::from_tokens(tgt.iter().map(|w| format!("w{w}")));
            let ab = similarity_matrix(&a, &b, &table, &table).unwrap();
            let ba = similarity_matrix(&b, &a, &table, &table).unwrap();
            prop_assert!(ab.values().iter().all(|v| v.abs() <= 1.0 + 1e-9));
            prop_assert_eq!(ab.transpose(), ba);
            let aa = similarity_matrix(&a, &a, &table, &table).unwrap();
            for i in 0..aa.rows() {
                if table.get(&a.tokens()[i]).unwrap().iter().any(|v| *v != 0.0) {
                    prop_assert!((aa.get(i, i) - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
