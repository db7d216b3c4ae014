//! Flat JSON configuration file plus command-line overrides.
//!
//! Precedence is defaults ← file values ← flags. Unknown keys in the file
//! are rejected by name, and every input path named in the file must exist
//! when the file is loaded.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use xaug_core::{AugmentMethod, RunConfig, SelectionPolicy, TrainConfig};

/// Raw file shape. Every field optional; absent fields keep their
/// defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    method: Option<String>,
    ratio: Option<f64>,
    cap_ratio: Option<f64>,
    escalation_step: Option<f64>,
    min_k: Option<usize>,
    max_iterations: Option<usize>,
    epsilon: Option<f64>,
    miss_trigger: Option<f64>,
    seed: Option<u64>,
    ig_steps: Option<usize>,
    src_lang: Option<String>,
    pivot_lang: Option<String>,
    stability_q: Option<f64>,
    train_ratio: Option<f64>,
    dev_ratio: Option<f64>,
    test_ratio: Option<f64>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    l2: Option<f64>,
    embed_dim: Option<usize>,
    min_freq: Option<usize>,
    dataset: Option<PathBuf>,
    data_format: Option<String>,
    synonyms: Option<PathBuf>,
    forward_dict: Option<PathBuf>,
    reverse_dict: Option<PathBuf>,
    paraphrases: Option<PathBuf>,
    cache: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    translator_endpoint: Option<String>,
    api_key_env: Option<String>,
    paraphraser_endpoint: Option<String>,
}

/// Fully resolved configuration used by every subcommand.
#[derive(Debug, Clone)]
pub struct AppConfig {
    pub run: RunConfig,
    pub min_freq: usize,
    pub dataset: Option<PathBuf>,
    pub data_format: String,
    pub synonyms: Option<PathBuf>,
    pub forward_dict: Option<PathBuf>,
    pub reverse_dict: Option<PathBuf>,
    pub paraphrases: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub translator_endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub paraphraser_endpoint: Option<String>,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            run: RunConfig::default(),
            min_freq: 1,
            dataset: None,
            data_format: "jsonl".into(),
            synonyms: None,
            forward_dict: None,
            reverse_dict: None,
            paraphrases: None,
            cache: None,
            out_dir: None,
            translator_endpoint: None,
            api_key_env: None,
            paraphraser_endpoint: None,
        }
    }
}

/// Flag-level overrides shared by the subcommands. `None` means the flag
/// was not given.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub method: Option<AugmentMethod>,
    pub ratio: Option<f64>,
    pub seed: Option<u64>,
    pub ig_steps: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub data_format: Option<String>,
}

pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> Result<AppConfig> {
    let mut cfg = AppConfig::default();

    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let file: ConfigFile = serde_json::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))?;
        apply_file(&mut cfg, file, path)?;
    }

    apply_overrides(&mut cfg, overrides)?;

    cfg.run
        .validate()
        .context("configuration violates an invariant")?;
    if cfg.min_freq < 1 {
        bail!("min_freq must be >= 1");
    }
    cfg.data_format
        .parse::<xaug_core::corpus::DataFormat>()
        .map_err(anyhow::Error::msg)?;
    Ok(cfg)
}

fn apply_file(cfg: &mut AppConfig, file: ConfigFile, path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    // Input paths are resolved relative to the config file and must exist
    // now, so a typo fails at load time instead of mid-run. Cache and
    // out_dir are outputs and may not exist yet.
    let input = |p: PathBuf, key: &str| -> Result<PathBuf> {
        let resolved = if p.is_absolute() { p } else { base.join(p) };
        if !resolved.exists() {
            bail!("config key '{key}' points at a missing path: {}", resolved.display());
        }
        Ok(resolved)
    };
    let output = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

    if let Some(v) = file.method {
        cfg.run.method = v.parse().map_err(anyhow::Error::msg)?;
    }
    if let Some(v) = file.ratio {
        cfg.run.policy.base_ratio = v;
    }
    if let Some(v) = file.cap_ratio {
        cfg.run.policy.cap_ratio = v;
    }
    if let Some(v) = file.escalation_step {
        cfg.run.policy.escalation_step = v;
    }
    if let Some(v) = file.min_k {
        cfg.run.policy.min_k = v;
    }
    if let Some(v) = file.max_iterations {
        cfg.run.max_iterations = v;
    }
    if let Some(v) = file.epsilon {
        cfg.run.epsilon = v;
    }
    if let Some(v) = file.miss_trigger {
        cfg.run.miss_trigger = v;
    }
    if let Some(v) = file.seed {
        cfg.run.seed = v;
        cfg.run.train.seed = v;
    }
    if let Some(v) = file.ig_steps {
        cfg.run.ig_steps = v;
    }
    if let Some(v) = file.src_lang {
        cfg.run.src_lang = v;
    }
    if let Some(v) = file.pivot_lang {
        cfg.run.pivot_lang = v;
    }
    if let Some(v) = file.stability_q {
        cfg.run.stability_q = v;
    }
    let (mut tr, mut dr, mut te) = cfg.run.split_ratios;
    if let Some(v) = file.train_ratio {
        tr = v;
    }
    if let Some(v) = file.dev_ratio {
        dr = v;
    }
    if let Some(v) = file.test_ratio {
        te = v;
    }
    cfg.run.split_ratios = (tr, dr, te);
    if let Some(v) = file.learning_rate {
        cfg.run.train.learning_rate = v;
    }
    if let Some(v) = file.epochs {
        cfg.run.train.epochs = v;
    }
    if let Some(v) = file.batch_size {
        cfg.run.train.batch_size = v;
    }
    if let Some(v) = file.l2 {
        cfg.run.train.l2 = v;
    }
    if let Some(v) = file.embed_dim {
        cfg.run.train.embed_dim = v;
    }
    if let Some(v) = file.min_freq {
        cfg.min_freq = v;
    }
    if let Some(v) = file.dataset {
        cfg.dataset = Some(input(v, "dataset")?);
    }
    if let Some(v) = file.data_format {
        cfg.data_format = v;
    }
    if let Some(v) = file.synonyms {
        cfg.synonyms = Some(input(v, "synonyms")?);
    }
    if let Some(v) = file.forward_dict {
        cfg.forward_dict = Some(input(v, "forward_dict")?);
    }
    if let Some(v) = file.reverse_dict {
        cfg.reverse_dict = Some(input(v, "reverse_dict")?);
    }
    if let Some(v) = file.paraphrases {
        cfg.paraphrases = Some(input(v, "paraphrases")?);
    }
    if let Some(v) = file.cache {
        cfg.cache = Some(output(v));
    }
    if let Some(v) = file.out_dir {
        cfg.out_dir = Some(output(v));
    }
    cfg.translator_endpoint = file.translator_endpoint.or(cfg.translator_endpoint.take());
    cfg.api_key_env = file.api_key_env.or(cfg.api_key_env.take());
    cfg.paraphraser_endpoint = file
        .paraphraser_endpoint
        .or(cfg.paraphraser_endpoint.take());
    Ok(())
}

fn apply_overrides(cfg: &mut AppConfig, overrides: &Overrides) -> Result<()> {
    if let Some(method) = overrides.method {
        cfg.run.method = method;
    }
    if let Some(ratio) = overrides.ratio {
        cfg.run.policy.base_ratio = ratio;
    }
    if let Some(seed) = overrides.seed {
        cfg.run.seed = seed;
        cfg.run.train.seed = seed;
    }
    if let Some(steps) = overrides.ig_steps {
        cfg.run.ig_steps = steps;
    }
    if let Some(out) = &overrides.out_dir {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(data) = &overrides.data {
        if !data.exists() {
            bail!("data path does not exist: {}", data.display());
        }
        cfg.dataset = Some(data.clone());
    }
    if let Some(format) = &overrides.data_format {
        cfg.data_format = format.clone();
    }
    Ok(())
}

/// Default used when training/evaluating: allow shorthand TrainConfig
/// access without reaching through the run config.
impl AppConfig {
    pub fn train_config(&self) -> &TrainConfig {
        &self.run.train
    }

    pub fn policy(&self) -> &SelectionPolicy {
        &self.run.policy
    }
}
