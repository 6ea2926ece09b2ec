//! Message storage, anonymization and the rule-based candidate filter.
//!
//! The filter rules are data: one pattern per line in a small mini-language.
//!
//! * `a/b/c` matches any one of the alternative words at that position.
//! * `(x/y)` is an optional element; its body may hold several words.
//! * `...` skips between zero and [`MAX_GAP`] tokens.
//!
//! Words match case-insensitively against the lowercased token stream of the
//! anonymized text (before lemmatization).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::LazyLock;

use rand::seq::index;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;
use crate::textprep;

/// Upper bound on the number of tokens a `...` gap may skip.
pub const MAX_GAP: usize = 3;

/// Replacement for `@handle` mentions.
pub const HANDLE_TOKEN: &str = "@SOMEONE";
/// Replacement for URLs.
pub const LINK_TOKEN: &str = "HTTP://LINK";

const DEFAULT_RULES: &str = include_str!("../data/c0_rules.txt");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate message id {0:?}")]
    DuplicateId(String),
    #[error("rule file contains no patterns")]
    EmptyRuleSet,
    #[error("rule line {line}: {message}")]
    MalformedRule { line: usize, message: String },
    #[error("requested {requested} messages but only {available} matched")]
    SampleTooLarge { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Source1,
    Source2,
    Synthetic,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Source1 => "source1",
            Source::Source2 => "source2",
            Source::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub id: String,
    pub raw_text: String,
    pub anon_text: String,
    pub source: Source,
}

impl Message {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>, source: Source) -> Self {
        let raw_text = raw_text.into();
        let anon_text = anonymize(&raw_text);
        Message {
            id: id.into(),
            raw_text,
            anon_text,
            source,
        }
    }
}

/// One line of a corpus file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    pub source: Source,
}

static URL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S*").unwrap());
static HANDLE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(^|[^\w])@\w+").unwrap());

/// Replaces `@handles` with [`HANDLE_TOKEN`] and URLs with [`LINK_TOKEN`].
///
/// A handle is an `@` that does not follow a word character, together with
/// the run of word characters after it. A URL runs from `http://`, `https://`
/// or `www.` up to the next whitespace. Everything else is copied verbatim.
pub fn anonymize(raw_text: &str) -> String {
    let without_links = URL_RE.replace_all(raw_text, LINK_TOKEN);
    HANDLE_RE
        .replace_all(&without_links, format!("${{1}}{HANDLE_TOKEN}"))
        .into_owned()
}

pub fn read_corpus(path: &Path) -> Result<Vec<Message>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut messages = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId(record.id));
        }
        messages.push(Message::new(record.id, record.text, record.source));
    }
    Ok(messages)
}

pub fn write_corpus(path: &Path, messages: &[Message]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for m in messages {
        let record = CorpusRecord {
            id: m.id.clone(),
            text: m.raw_text.clone(),
            source: m.source,
        };
        out.push_str(&serde_json::to_string(&record).expect("corpus record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Element {
    Words(Vec<String>),
    Optional(Vec<Vec<String>>),
    Gap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RulePattern {
    pub id: String,
    pub template: String,
    elements: Vec<Element>,
}

impl RulePattern {
    /// Compiles a template. The error string describes what is malformed.
    pub fn parse(template: &str) -> Result<Self, String> {
        // Allow "a / b" as well as "a/b".
        let normalized = template
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .replace(" / ", "/")
            .replace("/ ", "/")
            .replace(" /", "/");
        if normalized.is_empty() {
            return Err("empty pattern".into());
        }
        let lowered = normalized.to_lowercase();

        let mut elements = Vec::new();
        let mut rest = lowered.as_str();
        while !rest.is_empty() {
            rest = rest.trim_start();
            if rest.is_empty() {
                break;
            }
            if let Some(after) = rest.strip_prefix('(') {
                let close = after.find(')').ok_or("unbalanced '('")?;
                let body = &after[..close];
                if body.contains('(') {
                    return Err("nested '(' is not supported".into());
                }
                let group = body
                    .split_whitespace()
                    .map(parse_alternation)
                    .collect::<Result<Vec<_>, _>>()?;
                if group.is_empty() {
                    return Err("empty optional group".into());
                }
                elements.push(Element::Optional(group));
                rest = &after[close + 1..];
                continue;
            }
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            let word = &rest[..end];
            rest = &rest[end..];
            if word.contains(')') {
                return Err("unbalanced ')'".into());
            }
            if word.contains('(') {
                return Err("'(' must start a token".into());
            }
            if word == "..." {
                elements.push(Element::Gap);
            } else {
                elements.push(Element::Words(parse_alternation(word)?));
            }
        }
        if !elements.iter().any(|e| matches!(e, Element::Words(_))) {
            return Err("pattern needs at least one required word".into());
        }
        Ok(RulePattern {
            id: normalized.clone(),
            template: normalized,
            elements,
        })
    }

    pub fn matches(&self, tokens: &[String]) -> bool {
        (0..tokens.len()).any(|start| match_from(&self.elements, tokens, start))
    }
}

fn parse_alternation(word: &str) -> Result<Vec<String>, String> {
    if word.contains("...") {
        return Err(format!("gap '...' glued to a word in {word:?}"));
    }
    let alts: Vec<String> = word.split('/').map(str::to_string).collect();
    if alts.iter().any(String::is_empty) {
        return Err(format!("empty alternative in {word:?}"));
    }
    Ok(alts)
}

fn match_from(elements: &[Element], tokens: &[String], pos: usize) -> bool {
    let Some((head, tail)) = elements.split_first() else {
        return true;
    };
    match head {
        Element::Words(alts) => {
            pos < tokens.len() && alts.iter().any(|a| *a == tokens[pos]) && match_from(tail, tokens, pos + 1)
        }
        Element::Gap => (0..=MAX_GAP)
            .take_while(|skip| pos + skip <= tokens.len())
            .any(|skip| match_from(tail, tokens, pos + skip)),
        Element::Optional(group) => {
            let group_len = group.len();
            let present = pos + group_len <= tokens.len()
                && group
                    .iter()
                    .zip(&tokens[pos..pos + group_len])
                    .all(|(alts, tok)| alts.iter().any(|a| a == tok));
            (present && match_from(tail, tokens, pos + group_len)) || match_from(tail, tokens, pos)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    pub name: String,
    pub rules: Vec<RulePattern>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchResult {
    pub matched: bool,
    pub rule_ids: Vec<String>,
}

impl RuleSet {
    pub fn parse(name: &str, text: &str) -> Result<Self, CorpusError> {
        let mut rules: Vec<RulePattern> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let rule = RulePattern::parse(line).map_err(|message| CorpusError::MalformedRule {
                line: idx + 1,
                message,
            })?;
            if rules.iter().any(|r| r.id == rule.id) {
                return Err(CorpusError::MalformedRule {
                    line: idx + 1,
                    message: format!("duplicate pattern {:?}", rule.id),
                });
            }
            rules.push(rule);
        }
        if rules.is_empty() {
            return Err(CorpusError::EmptyRuleSet);
        }
        Ok(RuleSet {
            name: name.to_string(),
            rules,
        })
    }

    /// The bundled transcription of the candidate filter.
    pub fn bundled() -> Self {
        RuleSet::parse("C0", DEFAULT_RULES).expect("bundled rule file is valid")
    }

    pub fn bundled_source() -> &'static str {
        DEFAULT_RULES
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// `#` opens a comment at the start of a line or after whitespace, so
/// hashtag words inside a pattern survive.
fn strip_comment(line: &str) -> &str {
    if line.trim_start().starts_with('#') {
        return "";
    }
    match line.find(" #").or_else(|| line.find("\t#")) {
        Some(pos) => &line[..pos],
        None => line,
    }
}

pub fn load_ruleset(path: &Path) -> Result<RuleSet, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RuleSet::parse("C0", &text)
}

/// Tokens the filter sees: the tokenizer's output, without lemmatization.
pub fn filter_tokens(anon_text: &str) -> Vec<String> {
    textprep::tokenize(anon_text).into_tokens()
}

pub fn filter_match(ruleset: &RuleSet, msg: &Message) -> MatchResult {
    let tokens = filter_tokens(&msg.anon_text);
    let rule_ids: Vec<String> = ruleset
        .rules
        .iter()
        .filter(|r| r.matches(&tokens))
        .map(|r| r.id.clone())
        .collect();
    MatchResult {
        matched: !rule_ids.is_empty(),
        rule_ids,
    }
}

/// Uniform sample of `n` filter-matched messages, returned sorted by id.
pub fn sample_matched(corpus: &[Message], ruleset: &RuleSet, n: usize, seed: u64) -> Result<Vec<Message>, CorpusError> {
    let mut matched: Vec<&Message> = corpus.iter().filter(|m| filter_match(ruleset, m).matched).collect();
    if n > matched.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: matched.len(),
        });
    }
    // Canonical order first so the sample does not depend on input order.
    matched.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = seeding::substream(seed, "sample_matched");
    let mut picked: Vec<Message> = index::sample(&mut rng, matched.len(), n)
        .into_iter()
        .map(|i| matched[i].clone())
        .collect();
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(text: &str) -> Message {
        Message::new("m", text, Source::Synthetic)
    }

    #[test]
    fn anonymize_examples() {
        assert_eq!(anonymize("@john call me"), "@SOMEONE call me");
        assert_eq!(anonymize("see http://t.co/abc now"), "see HTTP://LINK now");
        assert_eq!(anonymize("no handles here"), "no handles here");
        assert_eq!(anonymize("hey @a_b, read www.x.org/y!"), "hey @SOMEONE, read HTTP://LINK");
        assert_eq!(anonymize("mail me at bob@example.com"), "mail me at bob@example.com");
        assert_eq!(anonymize("a @ b"), "a @ b");
    }

    proptest! {
        #[test]
        fn anonymize_is_idempotent(s in "[ a-zA-Z0-9@:/._#!,'\u{e9}\u{1F600}-]{0,60}") {
            let once = anonymize(&s);
            prop_assert_eq!(anonymize(&once), once.clone());
        }

        #[test]
        fn anonymized_text_has_no_handles_or_urls(s in "[ a-z0-9@:/._]{0,60}") {
            let out = anonymize(&s);
            for cap in HANDLE_RE.find_iter(&out) {
                prop_assert!(cap.as_str().ends_with(HANDLE_TOKEN), "{out:?}");
            }
            for cap in URL_RE.find_iter(&out) {
                prop_assert_eq!(cap.as_str(), LINK_TOKEN);
            }
        }
    }

    #[test]
    fn one_rule_file() {
        let rs = RuleSet::parse("C0", "# comment\nkill/killing/hate myself\n").unwrap();
        assert_eq!(rs.len(), 1);
        assert_eq!(rs.rules[0].id, "kill/killing/hate myself");
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(RuleSet::parse("C0", ""), Err(CorpusError::EmptyRuleSet)));
        assert!(matches!(RuleSet::parse("C0", "# only comments\n\n"), Err(CorpusError::EmptyRuleSet)));
    }

    #[test]
    fn unbalanced_paren_reports_line() {
        let err = RuleSet::parse("C0", "end my life\n\ntook (my/your own life\n").unwrap_err();
        match err {
            CorpusError::MalformedRule { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = RuleSet::parse("C0", "took my) own life").unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRule { line: 1, .. }));
    }

    #[test]
    fn pattern_without_required_word_rejected() {
        assert!(RulePattern::parse("...").is_err());
        assert!(RulePattern::parse("(it) ...").is_err());
        assert!(RulePattern::parse("a//b").is_err());
    }

    #[test]
    fn spaced_alternation_normalizes() {
        let p = RulePattern::parse("want / wanted / wanting to die").unwrap();
        assert_eq!(p.template, "want/wanted/wanting to die");
        let toks = filter_tokens("i wanted to die today");
        assert!(p.matches(&toks));
    }

    #[test]
    fn optional_and_gap_semantics() {
        let took = RulePattern::parse("took/taken (my/your/his/her) own life").unwrap();
        assert!(took.matches(&filter_tokens("he took his own life")));
        assert!(took.matches(&filter_tokens("she has taken own life")));
        assert!(!took.matches(&filter_tokens("he took their own life")));

        let gap = RulePattern::parse("sad/these ... thoughts/feelings").unwrap();
        assert!(gap.matches(&filter_tokens("these thoughts")));
        assert!(gap.matches(&filter_tokens("these dark and heavy thoughts")));
        assert!(!gap.matches(&filter_tokens("these dark and very heavy thoughts")));

        let anymore = RulePattern::parse("can't take (it) anymore").unwrap();
        assert!(anymore.matches(&filter_tokens("I can't take it anymore!")));
        assert!(anymore.matches(&filter_tokens("can't take anymore")));
    }

    #[test]
    fn filter_examples() {
        let rs = RuleSet::bundled();
        let r = filter_match(&rs, &msg("I'd rather kill myself than commit suicide"));
        assert!(r.matched);
        assert!(r.rule_ids.iter().any(|id| id.starts_with("kill/") && id.ends_with("myself")), "{r:?}");

        let r = filter_match(&rs, &msg("@someone wishing you good health and happiness"));
        assert!(r.rule_ids.iter().any(|id| id == "web/blog/health/advice"), "{r:?}");

        assert!(!filter_match(&rs, &msg("the weather is nice")).matched);
    }

    #[test]
    fn rule_ids_follow_rule_order() {
        let rs = RuleSet::parse("t", "zebra\nalpha\n").unwrap();
        let r = filter_match(&rs, &msg("alpha zebra"));
        assert_eq!(r.rule_ids, vec!["zebra".to_string(), "alpha".to_string()]);
    }

    #[test]
    fn adding_rules_never_unmatches() {
        let small = RuleSet::parse("t", "end my life").unwrap();
        let big = RuleSet::parse("t", "end my life\nfoo bar").unwrap();
        for text in ["i will end my life", "foo bar", "nothing"] {
            let m = msg(text);
            assert!(!filter_match(&small, &m).matched || filter_match(&big, &m).matched);
        }
    }

    fn corpus(n: usize) -> Vec<Message> {
        (0..n)
            .map(|i| {
                let text = if i % 2 == 0 { "i want to die" } else { "lovely day" };
                Message::new(format!("m{i:03}"), text, Source::Synthetic)
            })
            .collect()
    }

    #[test]
    fn sampling() {
        let rs = RuleSet::bundled();
        let c = corpus(20);
        let all = sample_matched(&c, &rs, 10, 1).unwrap();
        assert_eq!(all.len(), 10);
        assert!(all.iter().all(|m| filter_match(&rs, m).matched));
        assert!(all.windows(2).all(|w| w[0].id < w[1].id));

        let a = sample_matched(&c, &rs, 4, 9).unwrap();
        let b = sample_matched(&c, &rs, 4, 9).unwrap();
        assert_eq!(a, b);
        assert!(sample_matched(&c, &rs, 0, 9).unwrap().is_empty());
        assert!(matches!(
            sample_matched(&c, &rs, 11, 9),
            Err(CorpusError::SampleTooLarge { requested: 11, available: 10 })
        ));
    }

    #[test]
    fn sample_ignores_input_order() {
        let rs = RuleSet::bundled();
        let c = corpus(30);
        let mut rev = c.clone();
        rev.reverse();
        assert_eq!(sample_matched(&c, &rs, 5, 3).unwrap(), sample_matched(&rev, &rs, 5, 3).unwrap());
    }

    #[test]
    fn corpus_roundtrip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = corpus(3);
        write_corpus(&path, &c).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), c);

        fs::write(&path, "{\"id\":\"a\",\"text\":\"x\",\"source\":\"source1\"}\n{\"id\":\"a\",\"text\":\"y\",\"source\":\"source2\"}\n").unwrap();
        assert!(matches!(read_corpus(&path), Err(CorpusError::DuplicateId(_))));

        fs::write(&path, "{\"id\":\"a\",\"text\":\"x\",\"source\":\"source1\"}\nnot json\n").unwrap();
        assert!(matches!(read_corpus(&path), Err(CorpusError::Parse { line: 2, .. })));
    }
}
