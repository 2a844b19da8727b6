//! Extraction of relation lists, narratives, and judge verdicts from
//! free-form model completions.
//!
//! The completion surface varies by model: some answer with a bare
//! `return [...]`, some regenerate the whole class, some prepend a lead
//! phrase. Parsing is total — failures are encoded in the validity flag and
//! diagnostics, never as errors.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

/// A parsed completion: the raw text, the extracted relation list in
/// first-seen order, and the narrative section when one was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub raw: String,
    pub relations: Vec<(String, String)>,
    pub narrative: Option<String>,
    pub validity: bool,
    pub diagnostics: Vec<String>,
}

fn relation_entry_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"["']\s*([A-Za-z_]\w*)\s*(?:->|→)\s*([A-Za-z_]\w*)\s*["']"#).unwrap()
    })
}

fn relations_def_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"def\s+get_relations?\s*\(").unwrap())
}

fn narrative_def_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"def\s+get_narrative\s*\(").unwrap())
}

/// Balanced `[...]` slice starting at the first `[` at or after `from`.
fn bracketed_slice(text: &str, from: usize) -> Option<&str> {
    let open = text[from..].find('[')? + from;
    let mut depth = 0usize;
    for (offset, ch) in text[open..].char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[open..open + offset + 1]);
                }
            }
            _ => {}
        }
    }
    // Unterminated list: parse what is there.
    Some(&text[open..])
}

fn parse_entries(slice: &str) -> Vec<(String, String)> {
    relation_entry_re()
        .captures_iter(slice)
        .map(|cap| (cap[1].to_string(), cap[2].to_string()))
        .collect()
}

fn looks_like_code(line: &str) -> bool {
    let trimmed = line.trim_start();
    ["class ", "def ", "return", "#", "[", "\"", "'", "```"]
        .iter()
        .any(|prefix| trimmed.starts_with(prefix))
}

/// Extracts the relation list from a completion.
///
/// Preference order: the return statement of the last relations method, then
/// the last bare `return [...]`, then the last bracketed list containing
/// arrow strings. When the model echoed the demonstrations, the last
/// occurrence wins — the query is rendered last.
pub fn extract_relations(raw: &str) -> ModelOutput {
    let mut diagnostics = Vec::new();
    let text: String = if raw.contains("```") {
        diagnostics.push("code fence stripped".to_string());
        raw.lines()
            .filter(|line| !line.trim_start().starts_with("```"))
            .collect::<Vec<_>>()
            .join("\n")
    } else {
        raw.to_string()
    };

    if let Some(first) = text.lines().find(|l| !l.trim().is_empty()) {
        if !looks_like_code(first) {
            diagnostics.push("lead phrase stripped".to_string());
        }
    }
    if text.contains("class ") && relations_def_re().is_match(&text) {
        diagnostics.push("full class regenerated".to_string());
    }

    let mut relations = Vec::new();
    if let Some(def_at) = relations_def_re().find_iter(&text).last().map(|m| m.end()) {
        if let Some(ret_at) = text[def_at..].find("return").map(|i| def_at + i) {
            if let Some(slice) = bracketed_slice(&text, ret_at) {
                relations = parse_entries(slice);
            }
        }
    }
    if relations.is_empty() {
        let return_list_re = Regex::new(r"return\s*\[").unwrap();
        for m in return_list_re.find_iter(&text) {
            if let Some(slice) = bracketed_slice(&text, m.start()) {
                let parsed = parse_entries(slice);
                if !parsed.is_empty() {
                    relations = parsed;
                }
            }
        }
    }
    if relations.is_empty() {
        let mut search_from = 0;
        while let Some(slice) = bracketed_slice(&text, search_from) {
            let start = slice.as_ptr() as usize - text.as_ptr() as usize;
            let parsed = parse_entries(slice);
            if !parsed.is_empty() {
                relations = parsed;
            }
            search_from = start + slice.len().max(1);
            if search_from >= text.len() {
                break;
            }
        }
    }

    if !relations.is_empty() {
        let chosen: std::collections::HashSet<&(String, String)> = relations.iter().collect();
        let arrow_lines = text
            .lines()
            .filter(|l| l.contains("->") && l.trim_start().starts_with(['"', '\'']))
            .count();
        // Rough malformed-entry signal: quoted arrow lines that produced
        // no entry at all.
        if arrow_lines > 0 && chosen.len() > relations.len() {
            diagnostics.push("duplicate relations in output".to_string());
        }
        let malformed = text
            .lines()
            .filter(|l| {
                let t = l.trim();
                t.starts_with(['"', '\'']) && t.contains("->") && !relation_entry_re().is_match(t)
            })
            .count();
        if malformed > 0 {
            diagnostics.push(format!("{malformed} malformed relation line(s) skipped"));
        }
    }

    let narrative = extract_narrative(raw);
    let validity = !relations.is_empty();
    ModelOutput {
        raw: raw.to_string(),
        relations,
        narrative,
        validity,
        diagnostics,
    }
}

fn strip_string_literal(text: &str) -> String {
    let t = text.trim();
    let t = t.strip_prefix('(').map(str::trim_start).unwrap_or(t);
    let t = t.strip_suffix(')').map(str::trim_end).unwrap_or(t);
    for quote in ["\"\"\"", "'''"] {
        if let Some(inner) = t.strip_prefix(quote) {
            return inner.strip_suffix(quote).unwrap_or(inner).trim().to_string();
        }
    }
    for quote in ['"', '\''] {
        if let Some(inner) = t.strip_prefix(quote) {
            return inner
                .strip_suffix(quote)
                .unwrap_or(inner)
                .replace("\\\"", "\"")
                .trim()
                .to_string();
        }
    }
    t.to_string()
}

/// The narrative section of a completion: text between the last
/// `get_narrative` definition and the following method (or end of text),
/// with string-literal quoting removed. Absent when no narrative exists.
pub fn extract_narrative(raw: &str) -> Option<String> {
    let def = narrative_def_re().find_iter(raw).last()?;
    let after_header = raw[def.end()..].find('\n').map(|i| def.end() + i + 1)?;
    let region_end = relations_def_re()
        .find_iter(&raw[after_header..])
        .map(|m| after_header + m.start())
        .next()
        .map(|abs| {
            // Back up over a cue comment that introduces the next method.
            raw[..abs]
                .rfind('\n')
                .map(|line_start| {
                    let prev = raw[..line_start].trim_end();
                    if prev.lines().last().is_some_and(|l| l.trim_start().starts_with('#')) {
                        prev.rfind('\n').map(|i| i + 1).unwrap_or(0)
                    } else {
                        abs
                    }
                })
                .unwrap_or(abs)
        })
        .unwrap_or(raw.len());
    let region = &raw[after_header..region_end];

    let body: Vec<&str> = region
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#') && !l.starts_with("def "))
        .collect();
    if body.is_empty() {
        return None;
    }
    let text = body.join(" ");
    let text = text.strip_prefix("return").map(str::trim_start).unwrap_or(&text);
    let cleaned = strip_string_literal(text);
    (!cleaned.is_empty()).then_some(cleaned)
}

/// The five-way faithfulness assessment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictClass {
    Yes,
    LargelyYes,
    Ambivalent,
    LargelyNo,
    No,
}

impl VerdictClass {
    pub fn aligned(self) -> bool {
        matches!(self, VerdictClass::Yes | VerdictClass::LargelyYes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub verdict: VerdictClass,
    pub rationale: String,
    pub total_links: Option<u32>,
    pub correct_links: Option<u32>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JudgeParseError {
    #[error("no Answer line in judge output")]
    MissingAnswer,
    #[error("verdict {0:?} is outside the five-way set")]
    UnknownVerdict(String),
    #[error("correct links {correct} exceed total links {total}")]
    InconsistentCounts { total: u32, correct: u32 },
}

/// Parses the judge template's `Answer` / `Rationale` / `Temporal links` /
/// `Correct temporal links` lines. Missing count lines yield absent counts
/// with a diagnostic; a missing or out-of-set Answer is an error.
pub fn parse_judge(raw: &str) -> Result<JudgeVerdict, JudgeParseError> {
    static ANSWER_RE: OnceLock<Regex> = OnceLock::new();
    let answer_re = ANSWER_RE
        .get_or_init(|| Regex::new(r"(?im)^\s*Answer\s*:\s*(.+?)\s*$").unwrap());
    let answer = answer_re
        .captures(raw)
        .ok_or(JudgeParseError::MissingAnswer)?[1]
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c.is_whitespace())
        .to_lowercase();
    let verdict = match answer.as_str() {
        "yes" => VerdictClass::Yes,
        "largely yes" => VerdictClass::LargelyYes,
        "ambivalent" => VerdictClass::Ambivalent,
        "largely no" => VerdictClass::LargelyNo,
        "no" => VerdictClass::No,
        other => return Err(JudgeParseError::UnknownVerdict(other.to_string())),
    };

    static RATIONALE_RE: OnceLock<Regex> = OnceLock::new();
    static CUE_RE: OnceLock<Regex> = OnceLock::new();
    let rationale = RATIONALE_RE
        .get_or_init(|| Regex::new(r"(?im)^\s*Rationale\s*:").unwrap())
        .find(raw)
        .map(|m| {
            let rest = &raw[m.end()..];
            let end = CUE_RE
                .get_or_init(|| {
                    Regex::new(r"(?im)^\s*(?:Temporal links|Correct temporal links)\s*:").unwrap()
                })
                .find(rest)
                .map(|cue| cue.start())
                .unwrap_or(rest.len());
            rest[..end].trim().to_string()
        })
        .unwrap_or_default();

    let count = |label: &str| -> Option<u32> {
        Regex::new(&format!(r"(?im)^\s*{label}\s*:\s*(\d+)"))
            .unwrap()
            .captures(raw)
            .and_then(|c| c[1].parse().ok())
    };
    let total_links = count("Temporal links");
    let correct_links = count("Correct temporal links");
    let mut diagnostics = Vec::new();
    if total_links.is_none() {
        diagnostics.push("missing temporal link count".to_string());
    }
    if correct_links.is_none() {
        diagnostics.push("missing correct link count".to_string());
    }
    if let (Some(total), Some(correct)) = (total_links, correct_links) {
        if correct > total {
            return Err(JudgeParseError::InconsistentCounts { total, correct });
        }
    }
    Ok(JudgeVerdict {
        verdict,
        rationale,
        total_links,
        correct_links,
        diagnostics,
    })
}
