//! Synthetic corpus and annotation generator.
//!
//! Items are either easy or hard. Easy items carry words from their own
//! category only and the crowd labels them well. Hard items also carry words
//! from a decoy category; the crowd splits between the true and the decoy
//! label while experts mostly pick the true one. Crowd unanimity therefore
//! correlates with label correctness, which is the property the pipeline's
//! variant comparison depends on.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{Annotation, Label};
use crate::corpus::{self, CorpusError, Message, Source};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_items: usize,
    /// Category prior in A, B, C, D order.
    pub label_prior: [f64; 4],
    pub easy_rate: f64,
    pub crowd_size: usize,
    pub crowd_pool: usize,
    pub crowd_accuracy_easy: f64,
    /// Probabilities a crowd worker picks the true and the decoy label on a
    /// hard item; the remainder is spread over the other two labels.
    pub crowd_accuracy_hard: f64,
    pub crowd_decoy_hard: f64,
    pub expert_accuracy_hard: f64,
    pub expert_decoy_hard: f64,
    /// Whether to emit expert labels for every item the crowd split on.
    pub with_experts: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_items: 2000,
            label_prior: [0.10, 0.25, 0.25, 0.40],
            easy_rate: 0.35,
            crowd_size: 5,
            crowd_pool: 24,
            crowd_accuracy_easy: 0.9,
            crowd_accuracy_hard: 0.5,
            crowd_decoy_hard: 0.4,
            expert_accuracy_hard: 0.8,
            expert_decoy_hard: 0.15,
            with_experts: true,
            seed: 2016,
        }
    }
}

pub const EXPERTS: [&str; 2] = ["expert1", "expert2"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueItem {
    pub label: Label,
    pub decoy: Option<Label>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub messages: Vec<Message>,
    pub annotations: Vec<Annotation>,
    pub truth: BTreeMap<String, TrueItem>,
}

// Phrases that trip the candidate filter, per category.
const FILTER_PHRASES: [&[&str]; 4] = [
    &[
        "i want to die",
        "i hate myself",
        "i just can't go on",
        "i want to end my life",
        "these suicidal thoughts",
        "i can't take it anymore",
        "i don't want to live anymore",
        "i want to kill myself",
    ],
    &[
        "please call for help",
        "talk to someone tonight",
        "read this health advice",
        "an offer of help",
        "stop bullying now",
        "ask for help anytime",
    ],
    &[
        "he took his own life",
        "she took her own life",
        "found hanged",
        "died of an overdose",
        "committed suicide",
        "hanging scene",
    ],
    &[
        "my boyfriend",
        "my girlfriend",
        "miss you so much",
        "so fucking",
        "just feel like",
        "end it all lol",
    ],
];

const CONTENT_WORDS: [&[&str]; 4] = [
    &[
        "suicide", "myself", "depression", "alone", "worthless", "tired", "nobody", "pain", "empty", "crying",
        "hopeless", "nothing", "goodbye", "numb", "hurt",
    ],
    &[
        "hotline", "support", "reach", "matter", "prevention", "resources", "listen", "share", "awareness",
        "counselor", "helpline", "care", "safe",
    ],
    &[
        "news", "movie", "song", "rip", "actor", "article", "episode", "singer", "sad", "tribute", "report",
        "film", "album", "story",
    ],
    &[
        "lol", "game", "pizza", "weekend", "traffic", "homework", "haha", "party", "coffee", "monday", "bored",
        "phone", "dinner", "music",
    ],
];

const FILLER: &[&str] = &[
    "i", "the", "and", "so", "today", "really", "is", "this", "it", "of", "me", "my", "just", "about", "now",
    "that", "what", "all",
];

const HANDLES: &[&str] = &["@sam_k", "@jo", "@newsbot", "@mike99", "@anna"];
const LINKS: &[&str] = &["http://t.co/xk2", "https://bit.ly/4ab", "www.example.org/story"];

fn draw_label(rng: &mut ChaCha8Rng, prior: &[f64; 4]) -> Label {
    let total: f64 = prior.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &p) in prior.iter().enumerate() {
        if u < p {
            return Label::from_index(i);
        }
        u -= p;
    }
    Label::D
}

fn other_than(rng: &mut ChaCha8Rng, exclude: &[Label]) -> Label {
    let pool: Vec<Label> = Label::ALL.into_iter().filter(|l| !exclude.contains(l)).collect();
    *pool.choose(rng).expect("at least one label left")
}

fn words(rng: &mut ChaCha8Rng, label: Label, phrases: usize, content: usize, out: &mut Vec<String>) {
    for _ in 0..phrases {
        out.push(FILTER_PHRASES[label.index()].choose(rng).unwrap().to_string());
    }
    for w in CONTENT_WORDS[label.index()].choose_multiple(rng, content) {
        out.push(w.to_string());
    }
}

fn compose(rng: &mut ChaCha8Rng, item: &TrueItem) -> String {
    let mut parts = Vec::new();
    let n = rng.random_range(2..=4);
    words(rng, item.label, 1, n, &mut parts);
    if let Some(decoy) = item.decoy {
        let n = rng.random_range(1..=3);
        words(rng, decoy, 1, n, &mut parts);
    }
    for _ in 0..rng.random_range(1..=3) {
        parts.push(FILLER.choose(rng).unwrap().to_string());
    }
    parts.shuffle(rng);
    if rng.random::<f64>() < 0.15 {
        parts.insert(0, HANDLES.choose(rng).unwrap().to_string());
    }
    if rng.random::<f64>() < 0.1 {
        parts.push(LINKS.choose(rng).unwrap().to_string());
    }
    parts.join(" ")
}

fn crowd_vote(rng: &mut ChaCha8Rng, cfg: &SynthConfig, item: &TrueItem) -> Label {
    let u = rng.random::<f64>();
    match item.decoy {
        None if u < cfg.crowd_accuracy_easy => item.label,
        None => other_than(rng, &[item.label]),
        Some(_) if u < cfg.crowd_accuracy_hard => item.label,
        Some(decoy) if u < cfg.crowd_accuracy_hard + cfg.crowd_decoy_hard => decoy,
        Some(decoy) => other_than(rng, &[item.label, decoy]),
    }
}

fn expert_vote(rng: &mut ChaCha8Rng, cfg: &SynthConfig, item: &TrueItem) -> Label {
    let u = rng.random::<f64>();
    match item.decoy {
        None if u < cfg.crowd_accuracy_easy => item.label,
        None => other_than(rng, &[item.label]),
        Some(_) if u < cfg.expert_accuracy_hard => item.label,
        Some(decoy) if u < cfg.expert_accuracy_hard + cfg.expert_decoy_hard => decoy,
        Some(decoy) => other_than(rng, &[item.label, decoy]),
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthData {
    assert!(cfg.crowd_size <= cfg.crowd_pool, "crowd larger than the worker pool");
    let mut item_rng = seeding::substream(cfg.seed, "synth/items");
    let mut text_rng = seeding::substream(cfg.seed, "synth/text");
    let mut crowd_rng = seeding::substream(cfg.seed, "synth/crowd");
    let mut expert_rng = seeding::substream(cfg.seed, "synth/experts");

    let workers: Vec<(String, f64)> = (0..cfg.crowd_pool)
        .map(|i| {
            // Trust in [0.70, 1.00] at two decimals.
            let trust = (70 + item_rng.random_range(0..=30)) as f64 / 100.0;
            (format!("w{i:02}"), trust)
        })
        .collect();

    let width = cfg.n_items.max(1).to_string().len().max(4);
    let mut messages = Vec::with_capacity(cfg.n_items);
    let mut annotations = Vec::new();
    let mut truth = BTreeMap::new();
    for n in 0..cfg.n_items {
        let id = format!("m{n:0width$}");
        let label = draw_label(&mut item_rng, &cfg.label_prior);
        let decoy = (item_rng.random::<f64>() >= cfg.easy_rate).then(|| other_than(&mut item_rng, &[label]));
        let item = TrueItem { label, decoy };
        messages.push(Message::new(id.clone(), compose(&mut text_rng, &item), Source::Synthetic));

        let mut votes = Vec::with_capacity(cfg.crowd_size);
        for (worker, trust) in workers.choose_multiple(&mut crowd_rng, cfg.crowd_size) {
            let vote = crowd_vote(&mut crowd_rng, cfg, &item);
            votes.push(vote);
            annotations.push(Annotation {
                trust: *trust,
                ..Annotation::crowd(&id, worker, vote)
            });
        }
        let unanimous = votes.windows(2).all(|w| w[0] == w[1]);
        if cfg.with_experts && !unanimous {
            for expert in EXPERTS {
                annotations.push(Annotation::expert(&id, expert, expert_vote(&mut expert_rng, cfg, &item)));
            }
        }
        truth.insert(id, item);
    }
    SynthData {
        messages,
        annotations,
        truth,
    }
}

impl SynthData {
    /// Writes `corpus.jsonl` and `annotations.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| CorpusError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        corpus::write_corpus(&dir.join("corpus.jsonl"), &self.messages)?;
        let mut out = String::new();
        for a in &self.annotations {
            out.push_str(&a.to_json_line());
            out.push('\n');
        }
        let path = dir.join("annotations.jsonl");
        std::fs::write(&path, out).map_err(io(&path))?;
        Ok(())
    }
}
