//! Offline evaluation of external rollout logs: unbiased pass@k estimation
//! and equation-level diversity over verifier-accepted rollouts.
//!
//! Logs are line-delimited JSON records `{"prompt_id", "text", "correct"}`,
//! grouped by prompt in first-seen order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad json on line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rollout {
    pub text: String,
    pub correct: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub rollouts: Vec<Rollout>,
}

/// Prompt -> rollout records consumed by the evaluators.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RolloutLog {
    pub prompts: Vec<PromptRecord>,
}

#[derive(Debug, Deserialize)]
struct LogLine {
    prompt_id: String,
    text: String,
    correct: bool,
}

impl RolloutLog {
    /// Parse line-delimited JSON records, grouping rollouts by prompt id in
    /// first-seen order. Blank lines are skipped.
    pub fn from_jsonl_reader<R: BufRead>(reader: R) -> Result<Self, EvalError> {
        let mut order: Vec<String> = Vec::new();
        let mut by_prompt: BTreeMap<String, Vec<Rollout>> = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LogLine =
                serde_json::from_str(&line).map_err(|source| EvalError::Json {
                    line: idx + 1,
                    source,
                })?;
            if !by_prompt.contains_key(&record.prompt_id) {
                order.push(record.prompt_id.clone());
            }
            by_prompt
                .entry(record.prompt_id)
                .or_default()
                .push(Rollout {
                    text: record.text,
                    correct: record.correct,
                });
        }
        Ok(RolloutLog {
            prompts: order
                .into_iter()
                .map(|prompt_id| {
                    let rollouts = by_prompt.remove(&prompt_id).expect("grouped above");
                    PromptRecord {
                        prompt_id,
                        rollouts,
                    }
                })
                .collect(),
        })
    }

    pub fn from_jsonl_path(path: &Path) -> Result<Self, EvalError> {
        let file = std::fs::File::open(path)?;
        Self::from_jsonl_reader(std::io::BufReader::new(file))
    }
}

/// Exact binomial coefficient; every value with n <= 64 fits in u128.
fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc * (n - k + i) as u128 / i as u128;
    }
    acc
}

/// Unbiased pass@k: 1 - C(n-c, k) / C(n, k).
///
/// For n <= 64 the hit count is formed in exact integer arithmetic and a
/// single division produces the correctly rounded result; larger n falls
/// back to the stable telescoping product, which never overflows and stays
/// in [0, 1].
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, EvalError> {
    if c > n {
        return Err(EvalError::InvalidInput(format!(
            "correct count {c} exceeds sample count {n}"
        )));
    }
    if k < 1 || k > n {
        return Err(EvalError::InvalidInput(format!(
            "need 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    if c == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    if n <= 64 {
        let total = binomial(n, k);
        let misses = binomial(n - c, k);
        Ok((total - misses) as f64 / total as f64)
    } else {
        let mut miss = 1.0f64;
        for i in 0..k {
            miss *= (n - c - i) as f64 / (n - i) as f64;
        }
        Ok(1.0 - miss)
    }
}

/// Mean pass@k over prompts for each requested k.
pub fn passk_curve(log: &RolloutLog, ks: &[usize]) -> Result<Vec<(usize, f64)>, EvalError> {
    if log.prompts.is_empty() {
        return Err(EvalError::InvalidInput("log has no prompts".into()));
    }
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut total = 0.0;
        for prompt in &log.prompts {
            let n = prompt.rollouts.len();
            let c = prompt.rollouts.iter().filter(|r| r.correct).count();
            let score = pass_at_k(n, c, k).map_err(|e| {
                EvalError::InvalidInput(format!("prompt {}: {e}", prompt.prompt_id))
            })?;
            total += score;
        }
        out.push((k, total / log.prompts.len() as f64));
    }
    Ok(out)
}

/// Extract the set of formula strings inside math delimiters (`$...$`,
/// `\(...\)`, `\[...\]`) within the first `max_chars` characters.
///
/// Formulas are trimmed of surrounding whitespace; anything that trims to
/// empty is dropped, so a `$$` display-math marker scans as an empty `$...$`
/// pair and contributes nothing. A delimiter left unterminated at the
/// truncation boundary is discarded.
pub fn extract_formulas(text: &str, max_chars: usize) -> BTreeSet<String> {
    let chars: Vec<char> = text.chars().take(max_chars).collect();
    let mut formulas = BTreeSet::new();
    // returns (content end, scan resume) for the first matching closer
    let find_close = |open: usize,
                      single: Option<char>,
                      pair: Option<char>|
     -> Option<(usize, usize)> {
        let mut j = open;
        while j < chars.len() {
            match (single, pair) {
                (Some(d), None) if chars[j] == d => return Some((j, j + 1)),
                (None, Some(d)) if chars[j] == '\\' && j + 1 < chars.len() && chars[j + 1] == d => {
                    return Some((j, j + 2))
                }
                _ => {}
            }
            j += 1;
        }
        None
    };
    let mut i = 0;
    while i < chars.len() {
        let (content_start, close) = if chars[i] == '\\' && i + 1 < chars.len() {
            match chars[i + 1] {
                '(' => (i + 2, find_close(i + 2, None, Some(')'))),
                '[' => (i + 2, find_close(i + 2, None, Some(']'))),
                _ => {
                    i += 1;
                    continue;
                }
            }
        } else if chars[i] == '$' {
            (i + 1, find_close(i + 1, Some('$'), None))
        } else {
            i += 1;
            continue;
        };
        match close {
            Some((end, resume)) => {
                let content: String = chars[content_start..end].iter().collect();
                let trimmed = content.trim();
                if !trimmed.is_empty() {
                    formulas.insert(trimmed.to_string());
                }
                i = resume;
            }
            // unterminated at the truncation boundary: discard the fragment
            None => break,
        }
    }
    formulas
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DiversityCounts {
    pub prompts_total: usize,
    pub prompts_scored: usize,
    pub prompts_skipped_no_correct: usize,
    pub rollouts_total: usize,
    pub rollouts_correct: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiversityReport {
    pub per_prompt_scores: BTreeMap<String, f64>,
    pub dataset_mean: f64,
    pub rollouts_considered: DiversityCounts,
}

/// Equation-level diversity: for each correct rollout, the fraction of its
/// extracted formulas that appear in no other correct rollout of the same
/// prompt; averaged per prompt and then across prompts with at least one
/// correct rollout.
pub fn equation_diversity(log: &RolloutLog, max_chars: usize) -> DiversityReport {
    let mut per_prompt_scores = BTreeMap::new();
    let mut counts = DiversityCounts {
        prompts_total: log.prompts.len(),
        ..Default::default()
    };
    for prompt in &log.prompts {
        counts.rollouts_total += prompt.rollouts.len();
        let formula_sets: Vec<BTreeSet<String>> = prompt
            .rollouts
            .iter()
            .filter(|r| r.correct)
            .map(|r| extract_formulas(&r.text, max_chars))
            .collect();
        counts.rollouts_correct += formula_sets.len();
        if formula_sets.is_empty() {
            counts.prompts_skipped_no_correct += 1;
            continue;
        }
        let mut total = 0.0;
        for (i, set) in formula_sets.iter().enumerate() {
            let unique = set
                .iter()
                .filter(|f| {
                    formula_sets
                        .iter()
                        .enumerate()
                        .all(|(j, other)| j == i || !other.contains(*f))
                })
                .count();
            total += unique as f64 / (set.len().max(1)) as f64;
        }
        counts.prompts_scored += 1;
        per_prompt_scores.insert(prompt.prompt_id.clone(), total / formula_sets.len() as f64);
    }
    let dataset_mean = if counts.prompts_scored > 0 {
        per_prompt_scores.values().sum::<f64>() / counts.prompts_scored as f64
    } else {
        0.0
    };
    DiversityReport {
        per_prompt_scores,
        dataset_mean,
        rollouts_considered: counts,
    }
}
