//! Flat synonym-table parsing and lookup for pivot-language candidates.
//!
//! Format: `headword<TAB>syn1,syn2|syn3` — pipes separate sense groups,
//! commas separate synonyms within a group, `#` lines are comments.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::CoreError;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexicalDatabase {
    /// Headword → sense groups, preserving file order for iteration.
    entries: HashMap<String, Vec<Vec<String>>>,
    order: Vec<String>,
    /// Headwords dropped at parse time (e.g. only self-synonyms), kept so
    /// callers can report them.
    warnings: Vec<String>,
}

impl LexicalDatabase {
    pub fn empty() -> Self {
        LexicalDatabase {
            entries: HashMap::new(),
            order: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Case-folds the query and returns candidates flattened in
    /// (sense-group order, within-group order). Absent headword → `None`.
    pub fn lookup(&self, word: &str) -> Option<Vec<&str>> {
        let folded = word.to_lowercase();
        self.entries.get(&folded).map(|groups| {
            groups
                .iter()
                .flat_map(|g| g.iter().map(|s| s.as_str()))
                .collect()
        })
    }

    /// Serialize back to the TSV format; reparsing yields an identical
    /// structure.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for headword in &self.order {
            let groups = &self.entries[headword];
            let body = groups
                .iter()
                .map(|g| g.join(","))
                .collect::<Vec<_>>()
                .join("|");
            let _ = writeln!(out, "{headword}\t{body}");
        }
        out
    }
}

pub fn load_synonym_table(path: &Path) -> Result<LexicalDatabase> {
    let display = path.display().to_string();
    let content =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(&display, e))?;
    parse_synonym_table(&content, &display)
}

pub fn parse_synonym_table(content: &str, source: &str) -> Result<LexicalDatabase> {
    let mut db = LexicalDatabase::empty();

    for (lineno0, line) in content.lines().enumerate() {
        let lineno = lineno0 + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let headword = parts
            .next()
            .unwrap_or("")
            .trim()
            .to_lowercase();
        let body = parts.next().ok_or_else(|| {
            CoreError::parse(source, lineno, "missing tab between headword and synonyms")
        })?;
        if headword.is_empty() {
            return Err(CoreError::parse(source, lineno, "empty headword"));
        }
        if db.entries.contains_key(&headword) {
            return Err(CoreError::parse(
                source,
                lineno,
                format!("duplicate headword {headword:?}"),
            ));
        }

        let mut groups: Vec<Vec<String>> = Vec::new();
        for group in body.split('|') {
            let synonyms: Vec<String> = group
                .split(',')
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty() && *s != headword)
                .collect();
            if !synonyms.is_empty() {
                groups.push(synonyms);
            }
        }

        if groups.is_empty() {
            db.warnings.push(format!(
                "{source}:{lineno}: headword {headword:?} has no usable synonyms, dropped"
            ));
            continue;
        }

        db.order.push(headword.clone());
        db.entries.insert(headword, groups);
    }

    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_sense_groups() {
        let db = parse_synonym_table("big\tlarge,huge|major\n", "test").unwrap();
        assert_eq!(db.lookup("big").unwrap(), vec!["large", "huge", "major"]);
    }

    #[test]
    fn self_synonym_only_line_is_dropped_with_warning() {
        let db = parse_synonym_table("big\tbig\n", "test").unwrap();
        assert!(db.lookup("big").is_none());
        assert_eq!(db.warnings().len(), 1);
    }

    #[test]
    fn duplicate_headword_cites_second_line() {
        let err = parse_synonym_table("big\tlarge\nbig\thuge\n", "test").unwrap_err();
        assert!(err.to_string().contains(":2"));
    }

    #[test]
    fn lookup_case_folds_query() {
        let db = parse_synonym_table("big\tlarge,huge|major\n", "test").unwrap();
        assert_eq!(db.lookup("Big").unwrap(), vec!["large", "huge", "major"]);
    }

    #[test]
    fn lookup_absent_word_is_miss() {
        let db = parse_synonym_table("big\tlarge\n", "test").unwrap();
        assert!(db.lookup("small").is_none());
    }

    #[test]
    fn lookup_on_empty_database_is_miss() {
        assert!(LexicalDatabase::empty().lookup("big").is_none());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let db = parse_synonym_table("# comment\n\nbig\tlarge\n", "test").unwrap();
        assert_eq!(db.len(), 1);
    }

    #[test]
    fn missing_tab_errors_with_line() {
        let err = parse_synonym_table("big large\n", "test").unwrap_err();
        assert!(err.to_string().contains(":1"));
    }

    proptest! {
        #[test]
        fn tsv_round_trip(
            entries in proptest::collection::vec(
                ("[a-z]{2,8}", proptest::collection::vec(
                    proptest::collection::vec("[a-z]{2,8}", 1..4), 1..3)),
                1..10,
            )
        ) {
            let mut content = String::new();
            let mut seen = std::collections::HashSet::new();
            for (head, groups) in &entries {
                if !seen.insert(head.clone()) {
                    continue;
                }
                let body = groups
                    .iter()
                    .map(|g| g.join(","))
                    .collect::<Vec<_>>()
                    .join("|");
                content.push_str(&format!("{head}\t{body}\n"));
            }
            let db = parse_synonym_table(&content, "prop").unwrap();
            let reparsed = parse_synonym_table(&db.to_tsv(), "prop2").unwrap();
            prop_assert_eq!(db.entries, reparsed.entries);
            prop_assert_eq!(db.order, reparsed.order);
        }

        #[test]
        fn lookup_never_returns_query(word in "[a-z]{2,8}") {
            let content = format!("{word}\t{word},other\n");
            let db = parse_synonym_table(&content, "prop").unwrap();
            if let Some(candidates) = db.lookup(&word) {
                prop_assert!(!candidates.contains(&word.as_str()));
            }
        }
    }
}
