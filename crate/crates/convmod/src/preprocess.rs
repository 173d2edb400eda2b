//! N-gram extraction, post vectors and the cosine distance used for
//! clustering and language modeling.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{Post, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GramKind {
    Word,
    Pos,
    Char,
}

/// The bag of n-grams emitted by one post. Grams are kept in extraction
/// order so that the j-th word gram lines up with the j-th POS gram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramBag {
    pub grams: Vec<String>,
    pub n: usize,
    pub kind: GramKind,
}

impl NGramBag {
    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    /// Multiset view of the bag.
    pub fn counts(&self) -> HashMap<&str, usize> {
        let mut m = HashMap::new();
        for g in &self.grams {
            *m.entry(g.as_str()).or_insert(0) += 1;
        }
        m
    }
}

fn ngrams_over_units(units: &[&str], n: usize) -> Vec<String> {
    if units.len() < n {
        return Vec::new();
    }
    units.windows(n).map(|w| w.join(" ")).collect()
}

/// Extracts the post's n-grams of the given kind. Word and POS grams are
/// per-post token windows; character grams run over the whitespace-joined
/// surface string, spaces included.
pub fn extract_ngrams(post: &Post, n: usize, kind: GramKind) -> Result<NGramBag> {
    if n < 1 {
        return Err(Error::Parameter(format!("n-gram order must be >= 1, got {n}")));
    }
    let grams = match kind {
        GramKind::Word => {
            let units: Vec<&str> = post.surfaces().collect();
            ngrams_over_units(&units, n)
        }
        GramKind::Pos => {
            let mut units = Vec::with_capacity(post.tokens.len());
            for t in &post.tokens {
                match t.pos.as_deref() {
                    Some(p) if !p.is_empty() => units.push(p),
                    _ => {
                        return Err(Error::Parameter(
                            "POS n-grams require POS tags on every token".into(),
                        ))
                    }
                }
            }
            ngrams_over_units(&units, n)
        }
        GramKind::Char => {
            let joined = post.surfaces().collect::<Vec<_>>().join(" ");
            let chars: Vec<char> = joined.chars().collect();
            if chars.len() < n {
                Vec::new()
            } else {
                chars.windows(n).map(|w| w.iter().collect()).collect()
            }
        }
    };
    Ok(NGramBag { grams, n, kind })
}

/// Word skip-bigrams with a gap of at most `max_skip` intervening tokens
/// (a gap of zero is the ordinary bigram). Off by default in configs.
pub fn extract_skip_bigrams(post: &Post, max_skip: usize) -> NGramBag {
    let units: Vec<&str> = post.surfaces().collect();
    let mut grams = Vec::new();
    for i in 0..units.len() {
        for j in i + 1..units.len().min(i + 2 + max_skip) {
            grams.push(format!("{} {}", units[i], units[j]));
        }
    }
    NGramBag { grams, n: 2, kind: GramKind::Word }
}

/// Sparse frequency vector of a post in vocab order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostVector {
    values: BTreeMap<usize, f64>,
    dim: usize,
}

impl PostVector {
    pub fn new(dim: usize) -> Self {
        PostVector { values: BTreeMap::new(), dim }
    }

    pub fn from_counts(counts: impl IntoIterator<Item = (usize, f64)>, dim: usize) -> Self {
        let mut values = BTreeMap::new();
        for (i, c) in counts {
            assert!(i < dim, "index {i} out of bounds for dim {dim}");
            if c != 0.0 {
                *values.entry(i).or_insert(0.0) += c;
            }
        }
        PostVector { values, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values.get(&index).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, index: usize, value: f64) {
        assert!(index < self.dim);
        if value == 0.0 {
            self.values.remove(&index);
        } else {
            self.values.insert(index, value);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().map(|(&i, &v)| (i, v))
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &PostVector) -> f64 {
        // iterate the sparser side
        let (a, b) = if self.values.len() <= other.values.len() {
            (self, other)
        } else {
            (other, self)
        };
        a.values
            .iter()
            .map(|(&i, &v)| v * b.get(i))
            .sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in &self.values {
            out[i] = v;
        }
        out
    }
}

/// Frequency-count vector of the post's word n-grams over a gram vocabulary.
/// Grams outside the vocabulary are skipped (they cannot occur when the
/// vocabulary was built over the same corpus).
pub fn vectorize(post: &Post, vocab: &Vocab, n: usize) -> Result<PostVector> {
    let bag = extract_ngrams(post, n, GramKind::Word)?;
    Ok(vectorize_bag(&bag, vocab))
}

pub fn vectorize_bag(bag: &NGramBag, vocab: &Vocab) -> PostVector {
    let mut v = PostVector::new(vocab.len());
    for gram in &bag.grams {
        if let Some(i) = vocab.index_of(gram) {
            let cur = v.get(i);
            v.set(i, cur + 1.0);
        }
    }
    v
}

/// Cosine similarity in [-1, 1]; zero vectors have similarity 0.
pub fn cosine_similarity(a: &PostVector, b: &PostVector) -> f64 {
    assert_eq!(a.dim(), b.dim(), "cosine requires equal dimensionality");
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

/// Cosine distance 1 - cos(a, b) in [0, 2]. Either vector all-zero gives
/// distance 1.
pub fn cosine_distance(a: &PostVector, b: &PostVector) -> f64 {
    assert_eq!(a.dim(), b.dim(), "cosine requires equal dimensionality");
    if a.is_zero() || b.is_zero() {
        return 1.0;
    }
    1.0 - cosine_similarity(a, b)
}

pub fn cosine_distance_dense(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine requires equal dimensionality");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

/// In-place TF-IDF reweighting of a vector collection: idf(t) = ln(N / df(t)).
/// Implemented for completeness; configs leave it off by default.
pub fn tfidf_weight(vectors: &mut [PostVector]) {
    if vectors.is_empty() {
        return;
    }
    let dim = vectors[0].dim();
    let mut df = vec![0usize; dim];
    for v in vectors.iter() {
        for (i, _) in v.iter() {
            df[i] += 1;
        }
    }
    let n = vectors.len() as f64;
    for v in vectors.iter_mut() {
        let entries: Vec<(usize, f64)> = v.iter().collect();
        for (i, tf) in entries {
            let idf = (n / df[i] as f64).ln();
            v.set(i, tf * idf);
        }
    }
}

/// Small English stopword list used only when `removeStopwords` is on.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "if", "then", "so", "of", "to", "in", "on", "at", "by",
    "for", "with", "about", "as", "is", "are", "was", "were", "be", "been", "being", "am", "i",
    "you", "he", "she", "it", "we", "they", "me", "him", "her", "us", "them", "my", "your", "its",
    "our", "their", "this", "that", "these", "those", "not", "no", "do", "does", "did", "have",
    "has", "had", "will", "would", "can", "could", "there", "here",
];

pub fn is_stopword(surface: &str) -> bool {
    STOPWORDS.iter().any(|s| surface.eq_ignore_ascii_case(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;

    fn post(words: &[&str]) -> Post {
        Post {
            post_index: 0,
            author_id: "a".into(),
            tokens: words.iter().map(|w| Token::new(*w, "NN")).collect(),
            gold_label: None,
            embedding: None,
            has_quote: false,
            has_url: false,
            has_image: false,
        }
    }

    #[test]
    fn word_unigrams_count_tokens() {
        let bag = extract_ngrams(&post(&["good", "tire", "good"]), 1, GramKind::Word).unwrap();
        let counts = bag.counts();
        assert_eq!(counts["good"], 2);
        assert_eq!(counts["tire"], 1);
        assert_eq!(bag.len(), 3);
    }

    #[test]
    fn word_bigrams_slide_a_window() {
        let bag = extract_ngrams(&post(&["good", "tire", "good"]), 2, GramKind::Word).unwrap();
        assert_eq!(bag.grams, vec!["good tire", "tire good"]);
    }

    #[test]
    fn single_token_post_has_no_bigrams() {
        let bag = extract_ngrams(&post(&["good"]), 2, GramKind::Word).unwrap();
        assert!(bag.is_empty());
    }

    #[test]
    fn order_zero_is_rejected() {
        assert!(extract_ngrams(&post(&["x"]), 0, GramKind::Word).is_err());
    }

    #[test]
    fn bag_size_matches_window_count() {
        for n in 1..=3 {
            let bag = extract_ngrams(&post(&["a", "b", "c", "d"]), n, GramKind::Word).unwrap();
            assert_eq!(bag.len(), 4usize.saturating_sub(n - 1));
        }
    }

    #[test]
    fn unigram_bag_sums_to_token_count() {
        let p = post(&["a", "b", "a", "c", "a"]);
        let bag = extract_ngrams(&p, 1, GramKind::Word).unwrap();
        assert_eq!(bag.counts().values().sum::<usize>(), p.tokens.len());
    }

    #[test]
    fn char_grams_include_spaces() {
        let bag = extract_ngrams(&post(&["ab", "c"]), 2, GramKind::Char).unwrap();
        // joined string "ab c"
        assert_eq!(bag.grams, vec!["ab", "b ", " c"]);
    }

    #[test]
    fn pos_grams_require_tags() {
        let mut p = post(&["x", "y"]);
        p.tokens[1].pos = None;
        assert!(extract_ngrams(&p, 1, GramKind::Pos).is_err());
        let ok = extract_ngrams(&post(&["x", "y"]), 2, GramKind::Pos).unwrap();
        assert_eq!(ok.grams, vec!["NN NN"]);
    }

    #[test]
    fn skip_bigrams_respect_the_gap() {
        let bag = extract_skip_bigrams(&post(&["a", "b", "c", "d", "e"]), 2);
        assert!(bag.grams.contains(&"a b".to_string()));
        assert!(bag.grams.contains(&"a c".to_string()));
        assert!(bag.grams.contains(&"a d".to_string()));
        assert!(!bag.grams.contains(&"a e".to_string()));
    }

    #[test]
    fn vectorize_counts_in_vocab_order() {
        let vocab = Vocab::build(["good", "tire", "mud"]);
        let v = vectorize(&post(&["good", "tire", "good"]), &vocab, 1).unwrap();
        assert_eq!(v.to_dense(), vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn vectorize_is_deterministic() {
        let vocab = Vocab::build(["good", "tire", "mud"]);
        let a = vectorize(&post(&["tire", "mud"]), &vocab, 1).unwrap();
        let b = vectorize(&post(&["tire", "mud"]), &vocab, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn absent_vocab_entries_stay_zero() {
        let vocab = Vocab::build(["good", "tire", "mud", "snow"]);
        let v = vectorize(&post(&["snow"]), &vocab, 1).unwrap();
        assert_eq!(v.to_dense(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn cosine_orthogonal_is_one() {
        let a = PostVector::from_counts([(0, 1.0)], 2);
        let b = PostVector::from_counts([(1, 1.0)], 2);
        assert!((cosine_distance(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_identity_is_zero() {
        let a = PostVector::from_counts([(0, 1.0), (1, 1.0)], 2);
        assert!(cosine_distance(&a, &a).abs() < 1e-12);
    }

    #[test]
    fn cosine_matches_independent_arithmetic() {
        // 1 - 3/sqrt(10)
        let a = PostVector::from_counts([(0, 2.0), (1, 1.0)], 3);
        let b = PostVector::from_counts([(0, 1.0), (1, 1.0)], 3);
        let expected = 1.0 - 3.0 / 10f64.sqrt();
        assert!((cosine_distance(&a, &b) - expected).abs() < 1e-4);
        assert!((cosine_distance(&a, &b) - 0.0513).abs() < 1e-4);
    }

    #[test]
    fn zero_vector_distance_is_one() {
        let z = PostVector::new(3);
        let a = PostVector::from_counts([(0, 1.0)], 3);
        assert_eq!(cosine_distance(&z, &a), 1.0);
        assert_eq!(cosine_distance(&z, &z), 1.0);
    }

    #[test]
    fn cosine_is_symmetric_and_zero_iff_parallel() {
        let mut rng = 1234u64;
        let mut next = move || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 33) as f64) / (u32::MAX as f64)
        };
        for _ in 0..200 {
            let a = PostVector::from_counts((0..4).map(|i| (i, (next() * 5.0).floor())), 4);
            let b = PostVector::from_counts((0..4).map(|i| (i, (next() * 5.0).floor())), 4);
            let d1 = cosine_distance(&a, &b);
            let d2 = cosine_distance(&b, &a);
            assert_eq!(d1, d2);
        }
        // positive scalar multiples have distance ~0
        let a = PostVector::from_counts([(0, 1.0), (2, 3.0)], 4);
        let b = PostVector::from_counts([(0, 2.5), (2, 7.5)], 4);
        assert!(cosine_distance(&a, &b).abs() < 1e-12);
    }

    #[test]
    fn tfidf_downweights_ubiquitous_terms() {
        let mut vs = vec![
            PostVector::from_counts([(0, 1.0), (1, 1.0)], 2),
            PostVector::from_counts([(0, 1.0)], 2),
            PostVector::from_counts([(0, 2.0)], 2),
        ];
        tfidf_weight(&mut vs);
        // term 0 appears in every post: idf = ln(1) = 0
        assert_eq!(vs[0].get(0), 0.0);
        assert!((vs[0].get(1) - (3f64).ln()).abs() < 1e-12);
    }
}
