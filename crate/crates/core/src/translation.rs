//! Pluggable translation backends behind one contract, with a persistent
//! on-disk cache so repeated runs never re-query a backend.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::Result;

/// A translation result. `pass_through` marks words a mock backend could
/// not translate and returned unchanged; nothing is ever dropped silently.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationOutcome {
    pub text: String,
    pub pass_through: bool,
}

#[derive(Debug)]
enum BackendKind {
    /// Deterministic dictionary-backed mock. Maps (src, tgt) to a word
    /// dictionary; unknown words pass through unchanged.
    Mock {
        dictionaries: HashMap<(String, String), HashMap<String, String>>,
    },
    /// External HTTP service speaking
    /// `{"q": text, "source": code, "target": code}` →
    /// `{"translatedText": text}`.
    Http {
        endpoint: String,
        api_key: Option<String>,
    },
}

/// A translation backend plus its invocation counter (the counter is what
/// lets tests observe that cache hits never reach the backend).
#[derive(Debug)]
pub struct Translator {
    id: String,
    kind: BackendKind,
    invocations: AtomicUsize,
}

fn load_dictionary(path: &Path) -> Result<HashMap<String, String>> {
    let display = path.display().to_string();
    let content = std::fs::read_to_string(path).map_err(|e| CoreError::io(&display, e))?;
    let mut dict = HashMap::new();
    for (lineno0, line) in content.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let source = parts.next().unwrap_or("").trim().to_lowercase();
        let target = parts
            .next()
            .ok_or_else(|| {
                CoreError::parse(&display, lineno0 + 1, "missing tab-separated target word")
            })?
            .trim()
            .to_lowercase();
        dict.insert(source, target);
    }
    Ok(dict)
}

impl Translator {
    /// Mock backend over one or more direction-specific dictionary files.
    pub fn mock_from_files(
        id: impl Into<String>,
        directions: &[((&str, &str), &Path)],
    ) -> Result<Self> {
        let mut dictionaries = HashMap::new();
        for ((src, tgt), path) in directions {
            dictionaries.insert((src.to_string(), tgt.to_string()), load_dictionary(path)?);
        }
        Ok(Translator {
            id: id.into(),
            kind: BackendKind::Mock { dictionaries },
            invocations: AtomicUsize::new(0),
        })
    }

    /// Mock backend from in-memory dictionaries.
    pub fn mock_from_maps(
        id: impl Into<String>,
        dictionaries: HashMap<(String, String), HashMap<String, String>>,
    ) -> Self {
        Translator {
            id: id.into(),
            kind: BackendKind::Mock { dictionaries },
            invocations: AtomicUsize::new(0),
        }
    }

    /// Identity mock: every word passes through unchanged.
    pub fn identity_mock(id: impl Into<String>) -> Self {
        Translator {
            id: id.into(),
            kind: BackendKind::Mock {
                dictionaries: HashMap::new(),
            },
            invocations: AtomicUsize::new(0),
        }
    }

    /// HTTP backend; the credential is read from the named environment
    /// variable at construction time, if set.
    pub fn http(id: impl Into<String>, endpoint: impl Into<String>, api_key_env: Option<&str>) -> Self {
        let api_key = api_key_env.and_then(|name| std::env::var(name).ok());
        Translator {
            id: id.into(),
            kind: BackendKind::Http {
                endpoint: endpoint.into(),
                api_key,
            },
            invocations: AtomicUsize::new(0),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }

    fn query(&self, text: &str, src: &str, tgt: &str) -> Result<TranslationOutcome> {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        match &self.kind {
            BackendKind::Mock { dictionaries } => {
                let dict = dictionaries.get(&(src.to_string(), tgt.to_string()));
                let mut any_hit = false;
                let translated: Vec<String> = text
                    .split_whitespace()
                    .map(|word| match dict.and_then(|d| d.get(word)) {
                        Some(out) => {
                            any_hit = true;
                            out.clone()
                        }
                        None => word.to_string(),
                    })
                    .collect();
                Ok(TranslationOutcome {
                    text: translated.join(" "),
                    pass_through: !any_hit,
                })
            }
            BackendKind::Http { endpoint, api_key } => {
                let attempt = || -> std::result::Result<String, String> {
                    let client = reqwest::blocking::Client::new();
                    let mut request = client.post(endpoint).json(&serde_json::json!({
                        "q": text,
                        "source": src,
                        "target": tgt,
                    }));
                    if let Some(key) = api_key {
                        request = request.header("Authorization", format!("Bearer {key}"));
                    }
                    let response = request.send().map_err(|e| e.to_string())?;
                    let status = response.status();
                    if !status.is_success() {
                        return Err(format!("status {status}"));
                    }
                    let body: serde_json::Value =
                        response.json().map_err(|e| format!("malformed response: {e}"))?;
                    body.get("translatedText")
                        .and_then(|v| v.as_str())
                        .map(|s| s.to_string())
                        .ok_or_else(|| "malformed response: missing translatedText".to_string())
                };
                // Single retry on transient failure.
                let text = attempt().or_else(|_| attempt()).map_err(|message| {
                    CoreError::Backend {
                        backend: self.id.clone(),
                        message,
                    }
                })?;
                Ok(TranslationOutcome {
                    text,
                    pass_through: false,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct CacheKey {
    backend: String,
    src: String,
    tgt: String,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    backend: String,
    src: String,
    tgt: String,
    text: String,
    result: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pass_through: bool,
}

/// Persistent (backend, src, tgt, folded text) → result map, stored as
/// JSONL where the last record for a key wins on load. Append-only within
/// a run; saved atomically via write-temp-then-rename.
#[derive(Debug, Default)]
pub struct TranslationCache {
    entries: BTreeMap<CacheKey, (String, bool)>,
    path: Option<PathBuf>,
}

impl TranslationCache {
    pub fn in_memory() -> Self {
        TranslationCache::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Open a cache file, creating an empty cache when the file does not
    /// exist yet.
    pub fn open(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let mut cache = TranslationCache {
            entries: BTreeMap::new(),
            path: Some(path.to_path_buf()),
        };
        if !path.exists() {
            return Ok(cache);
        }
        let content = std::fs::read_to_string(path).map_err(|e| CoreError::io(&display, e))?;
        for (lineno0, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: CacheRecord = serde_json::from_str(line).map_err(|e| {
                CoreError::parse(&display, lineno0 + 1, format!("invalid cache record: {e}"))
            })?;
            cache.entries.insert(
                CacheKey {
                    backend: record.backend,
                    src: record.src,
                    tgt: record.tgt,
                    text: record.text,
                },
                (record.result, record.pass_through),
            );
        }
        Ok(cache)
    }

    /// Write the cache atomically to its backing file (no-op for
    /// in-memory caches).
    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let display = path.display().to_string();
        let mut body = String::new();
        for (key, (result, pass_through)) in &self.entries {
            let record = CacheRecord {
                backend: key.backend.clone(),
                src: key.src.clone(),
                tgt: key.tgt.clone(),
                text: key.text.clone(),
                result: result.clone(),
                pass_through: *pass_through,
            };
            body.push_str(&serde_json::to_string(&record).expect("cache record serializes"));
            body.push('\n');
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, body).map_err(|e| CoreError::io(tmp.display().to_string(), e))?;
        std::fs::rename(&tmp, path).map_err(|e| CoreError::io(&display, e))
    }
}

/// Translate through the cache: a hit is returned verbatim without
/// contacting the backend; a miss queries, stores, and returns.
pub fn translate(
    backend: &Translator,
    cache: &mut TranslationCache,
    text: &str,
    src: &str,
    tgt: &str,
) -> Result<TranslationOutcome> {
    if src == tgt {
        return Err(CoreError::InvalidArgument(format!(
            "source and target language are both {src:?}"
        )));
    }
    let key = CacheKey {
        backend: backend.id().to_string(),
        src: src.to_string(),
        tgt: tgt.to_string(),
        text: text.to_lowercase(),
    };
    if let Some((result, pass_through)) = cache.entries.get(&key) {
        return Ok(TranslationOutcome {
            text: result.clone(),
            pass_through: *pass_through,
        });
    }
    let outcome = backend.query(&key.text, src, tgt)?;
    cache
        .entries
        .insert(key, (outcome.text.clone(), outcome.pass_through));
    Ok(outcome)
}

/// The back-translation leg of a replacement chain: exactly [`translate`]
/// from the pivot language back to the source language.
pub fn back_translate(
    backend: &Translator,
    cache: &mut TranslationCache,
    text: &str,
    pivot: &str,
    src: &str,
) -> Result<TranslationOutcome> {
    translate(backend, cache, text, pivot, src)
}
