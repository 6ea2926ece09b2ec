//! Experiment settings from flags and an optional `key = value` file.
//! A flag always wins over the file; the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use labelcraft::annotation::{TiePolicy, VariantName};
use labelcraft::experiment::ExperimentConfig;

const KEYS: &[&str] = &[
    "corpus",
    "annotations",
    "rules",
    "lexicon",
    "vocab-size",
    "k",
    "seed",
    "grid",
    "variants",
    "output-dir",
    "tie-policy",
    "c",
    "tol",
    "max-epochs",
    "fractions",
];

#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// `key = value` file; keys are the long flag names, e.g. `vocab-size`.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Corpus JSON Lines file (`id`, `text`, `source`).
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Annotation JSON Lines file.
    #[arg(long, value_name = "FILE")]
    pub annotations: Option<PathBuf>,
    /// Filter rule file (bundled rules when omitted).
    #[arg(long, value_name = "FILE")]
    pub rules: Option<PathBuf>,
    /// Lemma lexicon, `form<TAB>lemma` (bundled lexicon when omitted).
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Number of cross-validation folds.
    #[arg(short, long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Class-weight grid as `pos:neg` pairs, e.g. `1:1,2:1,4:1`.
    #[arg(long)]
    pub grid: Option<String>,
    /// Comma-separated variants, e.g. `V_R1S,V_R1U_R2U` or `C1,C4`.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(short, long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// `unresolved` or `lowest_label`.
    #[arg(long)]
    pub tie_policy: Option<String>,
    /// SVM penalty C.
    #[arg(long = "c")]
    pub reg_c: Option<f64>,
    /// Relative duality-gap tolerance of the solver.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Learning-curve fractions, e.g. `0.1,0.5,1`.
    #[arg(long)]
    pub fractions: Option<String>,
}

pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", i + 1))?;
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(format!("config line {}: unknown key {key:?}", i + 1));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

pub fn parse_grid(s: &str) -> Result<Vec<(f64, f64)>, String> {
    s.split(',')
        .map(|pair| {
            let (p, n) = pair.trim().split_once(':').ok_or_else(|| format!("grid entry {pair:?} is not `pos:neg`"))?;
            let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("grid entry {pair:?}: {e}"));
            Ok((num(p)?, num(n)?))
        })
        .collect()
}

pub fn parse_variants(s: &str) -> Result<Vec<VariantName>, String> {
    s.split(',').map(|v| v.parse::<VariantName>().map_err(|e| e.to_string())).collect()
}

pub fn parse_fractions(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|e| format!("fraction {f:?}: {e}")))
        .collect()
}

fn pick<T>(flag: Option<T>, file: Option<&String>, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, String> {
    match (flag, file) {
        (Some(v), _) => Ok(Some(v)),
        (None, Some(s)) => parse(s).map(Some).map_err(|e| format!("config key {key}: {e}")),
        (None, None) => Ok(None),
    }
}

fn from_str<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

impl ExperimentArgs {
    /// Merges flags, the config file (relative paths resolve against its
    /// directory) and defaults.
    pub fn resolve(&self) -> Result<ExperimentConfig, String> {
        let (file, base) = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
                (parse_config_file(&text)?, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (BTreeMap::new(), PathBuf::new()),
        };
        let path = |s: &str| -> Result<PathBuf, String> { Ok(base.join(s)) };
        let mut c = ExperimentConfig::default();
        if let Some(v) = pick(self.corpus.clone(), file.get("corpus"), "corpus", path)? {
            c.corpus_path = v;
        }
        if let Some(v) = pick(self.annotations.clone(), file.get("annotations"), "annotations", path)? {
            c.annotations_path = v;
        }
        c.ruleset_path = pick(self.rules.clone(), file.get("rules"), "rules", path)?;
        c.lexicon_path = pick(self.lexicon.clone(), file.get("lexicon"), "lexicon", path)?;
        if let Some(v) = pick(self.output_dir.clone(), file.get("output-dir"), "output-dir", path)? {
            c.output_dir = v;
        }
        if let Some(v) = pick(self.vocab_size, file.get("vocab-size"), "vocab-size", from_str)? {
            c.vocab_size = v;
        }
        if let Some(v) = pick(self.k, file.get("k"), "k", from_str)? {
            c.k = v;
        }
        if let Some(v) = pick(self.seed, file.get("seed"), "seed", from_str)? {
            c.seed = v;
        }
        if let Some(v) = pick(self.reg_c, file.get("c"), "c", from_str)? {
            c.reg_c = v;
        }
        if let Some(v) = pick(self.tol, file.get("tol"), "tol", from_str)? {
            c.tol = v;
        }
        if let Some(v) = pick(self.max_epochs, file.get("max-epochs"), "max-epochs", from_str)? {
            c.max_epochs = v;
        }
        let grid = self.grid.as_deref().map(parse_grid).transpose()?;
        if let Some(v) = pick(grid, file.get("grid"), "grid", parse_grid)? {
            c.grid = v;
        }
        let variants = self.variants.as_deref().map(parse_variants).transpose()?;
        if let Some(v) = pick(variants, file.get("variants"), "variants", parse_variants)? {
            c.variants = v;
        }
        let fractions = self.fractions.as_deref().map(parse_fractions).transpose()?;
        if let Some(v) = pick(fractions, file.get("fractions"), "fractions", parse_fractions)? {
            c.curve_fractions = v;
        }
        let tie = self.tie_policy.as_deref().map(TiePolicy::from_str).transpose()?;
        if let Some(v) = pick(tie, file.get("tie-policy"), "tie-policy", TiePolicy::from_str)? {
            c.tie_policy = v;
        }
        Ok(c)
    }
}
