//! Tokenization, lemmatization, n-gram extraction and binary vectorization.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_LEXICON: &str = include_str!("../data/lemmas.tsv");

/// Default vocabulary cap.
pub const DEFAULT_VOCAB_SIZE: usize = 10_000;

/// Longest n-gram extracted.
pub const MAX_NGRAM: usize = 3;

const EMOTICONS: [&str; 6] = [":)", ":(", ":/", ";)", ":D", "D:"];
const STRIP: &[char] = &['.', ',', '!', '?', '"', '(', ')', ';', ':'];

#[derive(Debug, Error)]
pub enum TextError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon line {line}: expected `form<TAB>lemma`")]
    Lexicon { line: usize },
    #[error("invalid token {0:?}")]
    InvalidToken(String),
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary size must be at least 1")]
    ZeroVocabulary,
}

/// Lowercase tokens with no empty entries and no whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenStream(Vec<String>);

impl TokenStream {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TextError> {
        for t in &tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) || t.to_lowercase() != *t {
                return Err(TextError::InvalidToken(t.clone()));
            }
        }
        Ok(TokenStream(tokens))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Rule-based tweet tokenizer.
///
/// Splits on whitespace, lowercases, keeps handles, links, hashtags,
/// emoticons and apostrophe contractions whole, and strips the punctuation
/// in `.,!?"();:` from both ends of word tokens. Runs of two or more dots
/// inside a token (`hell...depression`) also separate tokens.
pub fn tokenize(anon_text: &str) -> TokenStream {
    let text = anon_text.replace(['\u{2019}', '\u{2018}'], "'");
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        if EMOTICONS.contains(&chunk) {
            tokens.push(chunk.to_lowercase());
            continue;
        }
        let lower = chunk.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") {
            tokens.push(lower);
            continue;
        }
        for piece in split_ellipses(&lower) {
            let trimmed = piece.trim_matches(STRIP);
            if !trimmed.is_empty() {
                tokens.push(trimmed.to_string());
            }
        }
    }
    TokenStream(tokens)
}

fn split_ellipses(chunk: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let bytes = chunk.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'.' && i + 1 < bytes.len() && bytes[i + 1] == b'.' {
            let mut j = i;
            while j < bytes.len() && bytes[j] == b'.' {
                j += 1;
            }
            pieces.push(&chunk[start..i]);
            start = j;
            i = j;
        } else {
            i += 1;
        }
    }
    pieces.push(&chunk[start..]);
    pieces
}

/// Dictionary lookup followed by suffix stripping.
#[derive(Debug, Clone)]
pub struct Lemmatizer {
    lexicon: HashMap<String, String>,
}

impl Lemmatizer {
    pub fn bundled() -> Self {
        Lemmatizer::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn bundled_source() -> &'static str {
        DEFAULT_LEXICON
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        let text = fs::read_to_string(path).map_err(|source| TextError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Lemmatizer::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TextError> {
        let mut lexicon = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(form), Some(lemma), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(TextError::Lexicon { line: idx + 1 });
            };
            let (form, lemma) = (form.trim(), lemma.trim());
            if form.is_empty() || lemma.is_empty() {
                return Err(TextError::Lexicon { line: idx + 1 });
            }
            lexicon.insert(form.to_lowercase(), lemma.to_lowercase());
        }
        Ok(Lemmatizer { lexicon })
    }

    pub fn lexicon(&self) -> impl Iterator<Item = (&str, &str)> {
        self.lexicon.iter().map(|(f, l)| (f.as_str(), l.as_str()))
    }

    pub fn lemmatize(&self, tokens: &TokenStream) -> TokenStream {
        TokenStream(tokens.0.iter().map(|t| self.lemma(t)).collect())
    }

    pub fn lemma(&self, token: &str) -> String {
        if token.starts_with('@') || token.starts_with('#') || token.starts_with("http") {
            return token.to_string();
        }
        if let Some(lemma) = self.lexicon.get(token) {
            return lemma.clone();
        }
        if !token.chars().all(|c| c.is_ascii_lowercase()) {
            return token.to_string();
        }
        strip_suffix(token)
    }
}

fn strip_suffix(word: &str) -> String {
    if let Some(stem) = word.strip_suffix("ies") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
        return word.to_string();
    }
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("es") {
        let sibilant = ["s", "x", "z", "ch", "sh"].iter().any(|s| stem.ends_with(s));
        if sibilant && stem.len() >= 3 {
            return stem.to_string();
        }
    }
    if let Some(stem) = word.strip_suffix('s') {
        if stem.len() >= 3 {
            return stem.to_string();
        }
        return word.to_string();
    }
    for suffix in ["ing", "ed"] {
        if let Some(stem) = word.strip_suffix(suffix) {
            if stem.len() >= 3 && stem.chars().any(is_vowel) {
                return undouble(stem);
            }
            return word.to_string();
        }
    }
    word.to_string()
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

fn undouble(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1] as char) && !matches!(b[n - 1], b'l' | b's' | b'z') {
        stem[..n - 1].to_string()
    } else {
        stem.to_string()
    }
}

/// All contiguous 1-, 2- and 3-grams, space-joined, in stream order.
pub fn extract_ngrams(tokens: &TokenStream) -> Vec<String> {
    let toks = tokens.tokens();
    let mut out = Vec::with_capacity(3 * toks.len());
    for n in 1..=MAX_NGRAM {
        out.extend(toks.windows(n).map(|w| w.join(" ")));
    }
    out
}

/// Number of words in an n-gram.
pub fn ngram_order(ngram: &str) -> usize {
    ngram.split(' ').count()
}

/// Ranked n-gram vocabulary: document frequency descending, then
/// lexicographic ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    entries: Vec<String>,
    doc_freq: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    max_size: usize,
    /// Distinct n-grams per order (1, 2, 3) seen before truncation.
    unique_by_order: [usize; MAX_NGRAM],
}

impl Vocabulary {
    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn doc_freq(&self) -> &[usize] {
        &self.doc_freq
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn position(&self, ngram: &str) -> Option<usize> {
        self.index.get(ngram).copied()
    }

    pub fn contains(&self, ngram: &str) -> bool {
        self.index.contains_key(ngram)
    }

    pub fn unique_by_order(&self) -> [usize; MAX_NGRAM] {
        self.unique_by_order
    }

    pub fn unique_total(&self) -> usize {
        self.unique_by_order.iter().sum()
    }

    /// CSV with header `rank,ngram,doc_freq`, ranks starting at 1.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "ngram", "doc_freq"]).unwrap();
        for (i, (g, df)) in self.entries.iter().zip(&self.doc_freq).enumerate() {
            w.write_record([(i + 1).to_string(), g.clone(), df.to_string()]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

pub fn build_vocabulary(corpus: &[TokenStream], max_size: usize) -> Result<Vocabulary, TextError> {
    if corpus.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    if max_size == 0 {
        return Err(TextError::ZeroVocabulary);
    }
    // Per-document sets, reduced by summation; the sum is order independent.
    let counts: HashMap<String, usize> = corpus
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<String, usize>, doc| {
            let mut grams = extract_ngrams(doc);
            grams.sort_unstable();
            grams.dedup();
            for g in grams {
                *acc.entry(g).or_default() += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (g, c) in b {
                *a.entry(g).or_default() += c;
            }
            a
        });

    let mut unique_by_order = [0usize; MAX_NGRAM];
    for g in counts.keys() {
        unique_by_order[ngram_order(g) - 1] += 1;
    }

    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);

    let index = ranked.iter().enumerate().map(|(i, (g, _))| (g.clone(), i)).collect();
    let (entries, doc_freq) = ranked.into_iter().unzip();
    Ok(Vocabulary {
        entries,
        doc_freq,
        index,
        max_size,
        unique_by_order,
    })
}

/// Binary presence vector over a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    dimension: usize,
    active: Vec<u32>,
}

impl FeatureVector {
    /// Sorts and deduplicates `active`; panics if a position is out of range.
    pub fn new(dimension: usize, mut active: Vec<u32>) -> Self {
        active.sort_unstable();
        active.dedup();
        assert!(
            active.last().is_none_or(|&p| (p as usize) < dimension),
            "feature position out of range"
        );
        FeatureVector { dimension, active }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn active(&self) -> &[u32] {
        &self.active
    }
}

pub fn vectorize(tokens: &TokenStream, vocab: &Vocabulary) -> FeatureVector {
    let active = extract_ngrams(tokens)
        .iter()
        .filter_map(|g| vocab.position(g).map(|p| p as u32))
        .collect();
    FeatureVector::new(vocab.len(), active)
}

/// Tokenize then lemmatize.
#[derive(Debug, Clone)]
pub struct TextPipeline {
    lemmatizer: Lemmatizer,
}

impl TextPipeline {
    pub fn new(lemmatizer: Lemmatizer) -> Self {
        TextPipeline { lemmatizer }
    }

    pub fn bundled() -> Self {
        TextPipeline::new(Lemmatizer::bundled())
    }

    pub fn prepare(&self, anon_text: &str) -> TokenStream {
        self.lemmatizer.lemmatize(&tokenize(anon_text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(tokens: &[&str]) -> TokenStream {
        TokenStream::from_tokens(tokens.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("I can't go on.").tokens(), ["i", "can't", "go", "on"]);
        assert_eq!(
            tokenize("@SOMEONE wishing you good health!").tokens(),
            ["@someone", "wishing", "you", "good", "health"]
        );
        assert_eq!(tokenize("Fuck this. #useless").tokens(), ["fuck", "this", "#useless"]);
    }

    #[test]
    fn tokenize_special_tokens() {
        assert_eq!(
            tokenize("see HTTP://LINK :) D: ;) I'd \"quoted\" (x)").tokens(),
            ["see", "http://link", ":)", "d:", ";)", "i'd", "quoted", "x"]
        );
        assert_eq!(tokenize("hell...depression is bad...").tokens(), ["hell", "depression", "is", "bad"]);
        assert_eq!(tokenize("don\u{2019}t #dafaq?").tokens(), ["don't", "#dafaq"]);
        assert!(tokenize("  !!! ... ").is_empty());
    }

    #[test]
    fn lemmatize_examples() {
        let lem = Lemmatizer::bundled();
        assert_eq!(lem.lemmatize(&ts(&["feelings"])).tokens(), ["feeling"]);
        assert_eq!(lem.lemmatize(&ts(&["suicide"])).tokens(), ["suicide"]);
        assert_eq!(lem.lemmatize(&ts(&["tried"])).tokens(), ["try"]);
        assert_eq!(lem.lemmatize(&ts(&["took"])).tokens(), ["take"]);
        assert_eq!(lem.lemmatize(&ts(&["hanged"])).tokens(), ["hang"]);
    }

    #[test]
    fn suffix_rules() {
        let lem = Lemmatizer::parse("").unwrap();
        let cases = [
            ("flies", "fly"),
            ("thoughts", "thought"),
            ("wishes", "wish"),
            ("boxes", "box"),
            ("kisses", "kiss"),
            ("miss", "miss"),
            ("this", "this"),
            ("was", "was"),
            ("killing", "kill"),
            ("stopped", "stop"),
            ("running", "run"),
            ("missed", "miss"),
            ("string", "string"),
            ("bed", "bed"),
            ("can't", "can't"),
            ("@someone", "@someone"),
            ("#hashtags", "#hashtags"),
            ("http://link", "http://link"),
        ];
        for (form, lemma) in cases {
            assert_eq!(lem.lemma(form), lemma, "{form}");
        }
    }

    #[test]
    fn lexicon_lemmas_are_fixed_points() {
        let lem = Lemmatizer::bundled();
        for (form, lemma) in lem.lexicon() {
            assert_eq!(lem.lemma(lemma), lemma, "{form} -> {lemma} is not stable");
            let twice = lem.lemmatize(&lem.lemmatize(&ts(&[form])));
            assert_eq!(twice.tokens(), [lemma]);
        }
    }

    #[test]
    fn malformed_lexicon_line() {
        assert!(matches!(Lemmatizer::parse("ok\tfine\nbroken\n"), Err(TextError::Lexicon { line: 2 })));
    }

    #[test]
    fn ngram_examples() {
        let mut got = extract_ngrams(&ts(&["want", "to", "die"]));
        got.sort();
        let mut want = vec!["want", "to", "die", "want to", "to die", "want to die"];
        want.sort();
        assert_eq!(got, want);
        assert_eq!(extract_ngrams(&ts(&["help"])), ["help"]);
        assert!(extract_ngrams(&ts(&[])).is_empty());
    }

    #[test]
    fn vocabulary_examples() {
        let docs = vec![ts(&["suicide"]), ts(&["suicide", "now"]), ts(&["suicide", "is"])];
        let v = build_vocabulary(&docs, 1).unwrap();
        assert_eq!(v.entries(), ["suicide"]);
        assert_eq!(v.doc_freq(), [3]);

        let v = build_vocabulary(&[ts(&["b"]), ts(&["a"])], 10).unwrap();
        assert_eq!(v.entries(), ["a", "b"]);

        assert!(matches!(build_vocabulary(&[], 10), Err(TextError::EmptyCorpus)));
    }

    #[test]
    fn vocabulary_keeps_everything_under_capacity() {
        // Ten documents of four fresh tokens: 4 + 3 + 2 + 1 = 10 distinct
        // n-grams each would overshoot, so use two tokens (3 n-grams) in
        // ten documents plus ten singletons: 30 + 10 = 40.
        let mut docs: Vec<TokenStream> = (0..10)
            .map(|i| TokenStream::from_tokens(vec![format!("a{i}"), format!("b{i}")]).unwrap())
            .collect();
        docs.extend((0..10).map(|i| TokenStream::from_tokens(vec![format!("c{i}")]).unwrap()));
        let v = build_vocabulary(&docs, DEFAULT_VOCAB_SIZE).unwrap();
        assert_eq!(v.len(), 40);
        assert_eq!(v.unique_by_order(), [30, 10, 0]);
    }

    #[test]
    fn doc_frequency_not_term_frequency() {
        let docs = vec![ts(&["spam", "spam", "spam"]), ts(&["ham"]), ts(&["ham"])];
        let v = build_vocabulary(&docs, 1).unwrap();
        assert_eq!(v.entries(), ["ham"]);
    }

    #[test]
    fn vectorize_examples() {
        let docs = vec![ts(&["help", "me"]), ts(&["help"])];
        let v = build_vocabulary(&docs, 10).unwrap();
        assert_eq!(v.entries()[0], "help");
        assert_eq!(vectorize(&ts(&["help"]), &v).active(), [0]);
        assert!(vectorize(&ts(&["zzz", "yyy"]), &v).active().is_empty());
        assert_eq!(vectorize(&ts(&["help", "help", "help"]), &v), vectorize(&ts(&["help"]), &v));
        assert_eq!(vectorize(&ts(&[]), &v).dimension(), v.len());
    }

    #[test]
    fn vocab_csv() {
        let v = build_vocabulary(&[ts(&["a", "b"])], 10).unwrap();
        assert_eq!(v.to_csv(), "rank,ngram,doc_freq\n1,a,1\n2,a b,1\n3,b,1\n");
    }

    proptest! {
        #[test]
        fn ngram_count(words in proptest::collection::vec("[a-z]{1,5}", 0..20)) {
            let l = words.len();
            let t = TokenStream::from_tokens(words).unwrap();
            let n = extract_ngrams(&t).len();
            prop_assert_eq!(n, l + l.saturating_sub(1) + l.saturating_sub(2));
            if l >= 2 {
                prop_assert_eq!(n, 3 * l - 3);
            }
        }

        #[test]
        fn tokens_are_clean(s in "\\PC{0,80}") {
            let t = tokenize(&s);
            for tok in t.tokens() {
                prop_assert!(!tok.is_empty());
                prop_assert!(!tok.chars().any(char::is_whitespace));
            }
            prop_assert_eq!(tokenize(&s), t);
        }

        #[test]
        fn vocabulary_order_and_vector_shape(
            docs in proptest::collection::vec(proptest::collection::vec("[a-d]", 0..6), 1..8),
            cap in 1usize..30,
        ) {
            let docs: Vec<TokenStream> = docs.into_iter().map(|d| TokenStream::from_tokens(d).unwrap()).collect();
            let v = build_vocabulary(&docs, cap).unwrap();
            prop_assert!(v.len() <= cap);
            for i in 1..v.len() {
                let (a, b) = (&v.entries()[i - 1], &v.entries()[i]);
                let (fa, fb) = (v.doc_freq()[i - 1], v.doc_freq()[i]);
                prop_assert!(fa > fb || (fa == fb && a < b));
            }
            for d in &docs {
                let fv = vectorize(d, &v);
                prop_assert_eq!(fv.dimension(), v.len());
                prop_assert!(fv.active().windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
