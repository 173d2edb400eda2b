//! Thread/post data model, corpus file ingestion and validation.
//!
//! A corpus file is JSON Lines: one thread object per line. Each post carries
//! its chronological index, author, pre-tagged tokens, an optional gold label,
//! an optional embedding vector and quote/URL/image flags. Quoted text, URLs
//! and images appear in token streams as the literal tokens `[QUOTE]`, `[URL]`
//! and `[IMG]`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
}

impl Token {
    pub fn new(surface: impl Into<String>, pos: impl Into<String>) -> Self {
        Token { surface: surface.into(), pos: Some(pos.into()), stem: None }
    }

    pub fn word(surface: impl Into<String>) -> Self {
        Token { surface: surface.into(), pos: None, stem: None }
    }
}

/// A post category name, validated against the configured label set at load.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryLabel(pub String);

impl CategoryLabel {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    #[serde(rename = "index")]
    pub post_index: usize,
    #[serde(rename = "author")]
    pub author_id: String,
    pub tokens: Vec<Token>,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<CategoryLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(rename = "quote", default, skip_serializing_if = "is_false")]
    pub has_quote: bool,
    #[serde(rename = "url", default, skip_serializing_if = "is_false")]
    pub has_url: bool,
    #[serde(rename = "img", default, skip_serializing_if = "is_false")]
    pub has_image: bool,
}

impl Post {
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thread {
    pub thread_id: String,
    pub posts: Vec<Post>,
}

impl Thread {
    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }
}

/// The configured, ordered set of category names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Self {
        LabelSet { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Word-type (or POS-type) index built over a corpus. Term ids follow first
/// occurrence order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(terms: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab::default();
        for t in terms {
            v.insert(t);
        }
        v
    }

    pub fn insert(&mut self, term: &str) -> usize {
        if let Some(&i) = self.index.get(term) {
            return i;
        }
        let i = self.terms.len();
        self.terms.push(term.to_string());
        self.index.insert(term.to_string(), i);
        i
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// A validated, immutable corpus. Safe to share read-only across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub threads: Vec<Thread>,
    pub label_set: LabelSet,
    pub vocab: Vocab,
    pub pos_vocab: Vocab,
}

impl Corpus {
    /// Loads and validates a JSON-Lines corpus file.
    pub fn load<P: AsRef<Path>>(path: P, config: &ModelConfig) -> Result<Corpus> {
        let file = fs::File::open(path.as_ref())?;
        let reader = BufReader::new(file);
        let mut threads = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let thread: Thread = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            threads.push(thread);
        }
        Corpus::from_threads(threads, config)
    }

    /// Validates in-memory threads and builds the vocabularies.
    pub fn from_threads(mut threads: Vec<Thread>, config: &ModelConfig) -> Result<Corpus> {
        config.validate()?;
        let label_set = LabelSet::new(config.label_set.clone());
        let mut embedding_dim: Option<usize> = None;
        let mut any_embedding = false;
        let mut any_missing_embedding = false;

        for thread in &mut threads {
            if thread.posts.is_empty() {
                return Err(Error::Validation(format!(
                    "thread '{}' has no posts",
                    thread.thread_id
                )));
            }
            thread.posts.sort_by_key(|p| p.post_index);
            for pair in thread.posts.windows(2) {
                if pair[0].post_index == pair[1].post_index {
                    return Err(Error::Validation(format!(
                        "thread '{}' has duplicate post index {}",
                        thread.thread_id, pair[0].post_index
                    )));
                }
            }
            for post in &mut thread.posts {
                if post.tokens.is_empty() {
                    return Err(Error::Validation(format!(
                        "thread '{}' post {} has no tokens",
                        thread.thread_id, post.post_index
                    )));
                }
                for token in &mut post.tokens {
                    if token.surface.is_empty() {
                        return Err(Error::Validation(format!(
                            "thread '{}' post {} has an empty token surface",
                            thread.thread_id, post.post_index
                        )));
                    }
                    if config.case_fold {
                        token.surface = token.surface.to_lowercase();
                    }
                    if config.requires_pos() && token.pos.as_deref().map_or(true, str::is_empty) {
                        return Err(Error::Config(format!(
                            "thread '{}' post {} token '{}' lacks a POS tag but the POS model is enabled",
                            thread.thread_id, post.post_index, token.surface
                        )));
                    }
                }
                if let Some(label) = &post.gold_label {
                    if label_set.index_of(label.as_str()).is_none() {
                        return Err(Error::Validation(format!(
                            "thread '{}' post {} has label '{}' outside the configured label set",
                            thread.thread_id, post.post_index, label
                        )));
                    }
                }
                match &post.embedding {
                    Some(vec) => {
                        if vec.iter().any(|x| !x.is_finite()) {
                            return Err(Error::Validation(format!(
                                "thread '{}' post {} has a non-finite embedding value",
                                thread.thread_id, post.post_index
                            )));
                        }
                        any_embedding = true;
                        match embedding_dim {
                            None => embedding_dim = Some(vec.len()),
                            Some(d) if d != vec.len() => {
                                return Err(Error::Validation(format!(
                                    "inconsistent embedding dimensions: {} vs {}",
                                    d,
                                    vec.len()
                                )));
                            }
                            _ => {}
                        }
                    }
                    None => any_missing_embedding = true,
                }
            }
        }
        if any_embedding && any_missing_embedding {
            return Err(Error::Validation(
                "some posts carry embeddings and some do not; embeddings must cover every post".into(),
            ));
        }

        let mut vocab = Vocab::default();
        let mut pos_vocab = Vocab::default();
        for thread in &threads {
            for post in &thread.posts {
                for token in &post.tokens {
                    vocab.insert(&token.surface);
                    if let Some(pos) = &token.pos {
                        pos_vocab.insert(pos);
                    }
                }
            }
        }

        Ok(Corpus { threads, label_set, vocab, pos_vocab })
    }

    /// Writes the corpus back out as JSON Lines. Loading the result yields an
    /// identical corpus.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut file = fs::File::create(path.as_ref())?;
        for thread in &self.threads {
            let line = serde_json::to_string(thread).expect("thread serializes");
            writeln!(file, "{line}")?;
        }
        Ok(())
    }

    pub fn num_threads(&self) -> usize {
        self.threads.len()
    }

    pub fn num_posts(&self) -> usize {
        self.threads.iter().map(Thread::len).sum()
    }

    /// Flat post iterator in thread-major order.
    pub fn posts(&self) -> impl Iterator<Item = &Post> {
        self.threads.iter().flat_map(|t| t.posts.iter())
    }

    /// Flat index ranges of each thread's posts, in thread order.
    pub fn thread_ranges(&self) -> Vec<std::ops::Range<usize>> {
        thread_ranges(&self.threads)
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.threads
            .first()
            .and_then(|t| t.posts.first())
            .and_then(|p| p.embedding.as_ref())
            .map(Vec::len)
    }

    /// Gold label index of each post (thread-major), `None` when unlabeled.
    pub fn gold_label_indices(&self) -> Vec<Option<usize>> {
        self.posts()
            .map(|p| {
                p.gold_label
                    .as_ref()
                    .and_then(|l| self.label_set.index_of(l.as_str()))
            })
            .collect()
    }

    pub fn stats(&self) -> CorpusStats {
        corpus_stats(self)
    }
}

/// Flat index ranges of each thread's posts for an arbitrary thread slice.
pub fn thread_ranges(threads: &[Thread]) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::with_capacity(threads.len());
    let mut start = 0;
    for t in threads {
        ranges.push(start..start + t.len());
        start += t.len();
    }
    ranges
}

/// Summary counts in the shape of the dataset tables: threads, posts and
/// per-label counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub num_threads: usize,
    pub num_posts: usize,
    pub num_labeled_posts: usize,
    /// (label name, count) in label-set order.
    pub label_counts: Vec<(String, usize)>,
    pub vocab_size: usize,
    pub pos_vocab_size: usize,
    pub embedding_dim: Option<usize>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut counts = vec![0usize; corpus.label_set.len()];
    let mut labeled = 0usize;
    for post in corpus.posts() {
        if let Some(label) = &post.gold_label {
            if let Some(i) = corpus.label_set.index_of(label.as_str()) {
                counts[i] += 1;
                labeled += 1;
            }
        }
    }
    CorpusStats {
        num_threads: corpus.num_threads(),
        num_posts: corpus.num_posts(),
        num_labeled_posts: labeled,
        label_counts: corpus
            .label_set
            .names()
            .iter()
            .cloned()
            .zip(counts)
            .collect(),
        vocab_size: corpus.vocab.len(),
        pos_vocab_size: corpus.pos_vocab.len(),
        embedding_dim: corpus.embedding_dim(),
    }
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "threads:        {}", self.num_threads)?;
        writeln!(f, "posts:          {}", self.num_posts)?;
        writeln!(f, "labeled posts:  {}", self.num_labeled_posts)?;
        writeln!(f, "vocabulary:     {} word types, {} POS types", self.vocab_size, self.pos_vocab_size)?;
        if let Some(d) = self.embedding_dim {
            writeln!(f, "embeddings:     dim {d}")?;
        }
        for (name, count) in &self.label_counts {
            writeln!(f, "  {name}: {count}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        ModelConfig::default()
    }

    pub(crate) fn post(index: usize, author: &str, words: &[&str]) -> Post {
        Post {
            post_index: index,
            author_id: author.to_string(),
            tokens: words.iter().map(|w| Token::new(*w, "NN")).collect(),
            gold_label: None,
            embedding: None,
            has_quote: false,
            has_url: false,
            has_image: false,
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_one_thread_with_two_posts() {
        let f = write_lines(&[concat!(
            r#"{"thread_id":"t1","posts":["#,
            r#"{"index":0,"author":"a","tokens":[{"surface":"Good","pos":"JJ"},{"surface":"tire","pos":"NN"}],"label":"Problem"},"#,
            r#"{"index":1,"author":"b","tokens":[{"surface":"thanks","pos":"NNS"}],"label":"Feedback","quote":true}"#,
            r#"]}"#
        )]);
        let corpus = Corpus::load(f.path(), &config()).unwrap();
        assert_eq!(corpus.num_threads(), 1);
        assert_eq!(corpus.num_posts(), 2);
        // surfaces are case-folded by default
        assert_eq!(corpus.threads[0].posts[0].tokens[0].surface, "good");
        assert!(corpus.threads[0].posts[1].has_quote);
        assert_eq!(corpus.vocab.len(), 3);
    }

    #[test]
    fn parse_error_names_the_line() {
        let f = write_lines(&[
            r#"{"thread_id":"t1","posts":[{"index":0,"author":"a","tokens":[{"surface":"x"}]}]}"#,
            r#"{"thread_id":"t2", this is not json}"#,
        ]);
        match Corpus::load(f.path(), &config()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_pos_with_pos_model_is_a_config_error() {
        let f = write_lines(&[concat!(
            r#"{"thread_id":"t1","posts":["#,
            r#"{"index":0,"author":"a","tokens":[{"surface":"x","pos":"NN"}]},"#,
            r#"{"index":1,"author":"b","tokens":[{"surface":"y"}]}"#,
            r#"]}"#
        )]);
        let mut cfg = config();
        assert!(Corpus::load(f.path(), &cfg).is_ok());
        cfg.use_pos_model = true;
        match Corpus::load(f.path(), &cfg) {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_embedding_dims_are_rejected() {
        let f = write_lines(&[concat!(
            r#"{"thread_id":"t1","posts":["#,
            r#"{"index":0,"author":"a","tokens":[{"surface":"x"}],"embedding":[0.1,0.2]},"#,
            r#"{"index":1,"author":"b","tokens":[{"surface":"y"}],"embedding":[0.3]}"#,
            r#"]}"#
        )]);
        match Corpus::load(f.path(), &config()) {
            Err(Error::Validation(_)) => {}
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn partial_embeddings_are_rejected() {
        let f = write_lines(&[concat!(
            r#"{"thread_id":"t1","posts":["#,
            r#"{"index":0,"author":"a","tokens":[{"surface":"x"}],"embedding":[0.1]},"#,
            r#"{"index":1,"author":"b","tokens":[{"surface":"y"}]}"#,
            r#"]}"#
        )]);
        assert!(matches!(Corpus::load(f.path(), &config()), Err(Error::Validation(_))));
    }

    #[test]
    fn labels_outside_the_set_are_rejected() {
        let f = write_lines(&[
            r#"{"thread_id":"t1","posts":[{"index":0,"author":"a","tokens":[{"surface":"x"}],"label":"Spam"}]}"#,
        ]);
        assert!(matches!(Corpus::load(f.path(), &config()), Err(Error::Validation(_))));
    }

    #[test]
    fn round_trip_is_identity() {
        let f = write_lines(&[
            concat!(
                r#"{"thread_id":"t1","posts":["#,
                r#"{"index":0,"author":"a","tokens":[{"surface":"Hi","pos":"UH","stem":"hi"}],"label":"Problem","quote":true},"#,
                r#"{"index":1,"author":"b","tokens":[{"surface":"[URL]"},{"surface":"fix","pos":"VB"}],"url":true}"#,
                r#"]}"#
            ),
            r#"{"thread_id":"t2","posts":[{"index":0,"author":"c","tokens":[{"surface":"ok"}]}]}"#,
        ]);
        let corpus = Corpus::load(f.path(), &config()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        corpus.save(out.path()).unwrap();
        let reloaded = Corpus::load(out.path(), &config()).unwrap();
        assert_eq!(corpus, reloaded);
    }

    #[test]
    fn posts_are_sorted_by_index_and_duplicates_rejected() {
        let f = write_lines(&[concat!(
            r#"{"thread_id":"t1","posts":["#,
            r#"{"index":1,"author":"b","tokens":[{"surface":"later"}]},"#,
            r#"{"index":0,"author":"a","tokens":[{"surface":"first"}]}"#,
            r#"]}"#
        )]);
        let corpus = Corpus::load(f.path(), &config()).unwrap();
        assert_eq!(corpus.threads[0].posts[0].tokens[0].surface, "first");

        let dup = write_lines(&[concat!(
            r#"{"thread_id":"t1","posts":["#,
            r#"{"index":0,"author":"a","tokens":[{"surface":"x"}]},"#,
            r#"{"index":0,"author":"b","tokens":[{"surface":"y"}]}"#,
            r#"]}"#
        )]);
        assert!(Corpus::load(dup.path(), &config()).is_err());
    }

    #[test]
    fn stats_count_labels() {
        let mut cfg = config();
        cfg.label_set = vec!["S".into(), "P".into()];
        let mut threads = vec![Thread {
            thread_id: "t".into(),
            posts: vec![post(0, "a", &["x"]), post(1, "b", &["y"]), post(2, "c", &["z"])],
        }];
        threads[0].posts[0].gold_label = Some(CategoryLabel("S".into()));
        threads[0].posts[1].gold_label = Some(CategoryLabel("S".into()));
        threads[0].posts[2].gold_label = Some(CategoryLabel("P".into()));
        let corpus = Corpus::from_threads(threads, &cfg).unwrap();
        let stats = corpus.stats();
        assert_eq!(stats.label_counts, vec![("S".to_string(), 2), ("P".to_string(), 1)]);
        assert_eq!(stats.num_labeled_posts, 3);
    }

    #[test]
    fn stats_with_no_labels_sum_to_zero() {
        let corpus = Corpus::from_threads(
            vec![Thread { thread_id: "t".into(), posts: vec![post(0, "a", &["x"])] }],
            &config(),
        )
        .unwrap();
        let stats = corpus.stats();
        assert_eq!(stats.num_labeled_posts, 0);
        assert!(stats.label_counts.iter().all(|(_, c)| *c == 0));
    }

    #[test]
    fn ninety_three_threads_count_as_ninety_three() {
        let threads: Vec<Thread> = (0..93)
            .map(|i| Thread {
                thread_id: format!("t{i}"),
                posts: vec![post(0, "a", &["hello"]), post(1, "b", &["world"])],
            })
            .collect();
        let corpus = Corpus::from_threads(threads, &config()).unwrap();
        assert_eq!(corpus.stats().num_threads, 93);
    }

    #[test]
    fn vocab_indexes_every_distinct_surface_once() {
        let corpus = Corpus::from_threads(
            vec![Thread {
                thread_id: "t".into(),
                posts: vec![post(0, "a", &["Mud", "mud", "tire", "MUD"])],
            }],
            &config(),
        )
        .unwrap();
        // case-folded: {mud, tire}
        assert_eq!(corpus.vocab.len(), 2);
        assert_eq!(corpus.vocab.index_of("mud"), Some(0));
        assert_eq!(corpus.vocab.index_of("tire"), Some(1));
        assert_eq!(corpus.vocab.index_of("MUD"), None);
    }
}
