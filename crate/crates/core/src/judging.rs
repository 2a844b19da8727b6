//! Faithfulness-judging bookkeeping: verdict distributions, the alignment
//! score, and the review queue that routes suspicious judgments to a human.

use crate::parse::{JudgeVerdict, VerdictClass};
use serde::{Deserialize, Serialize};

/// Tally of five-way verdicts; completions with no parseable verdict are
/// tallied separately and excluded from the alignment denominator.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictDistribution {
    pub yes: usize,
    pub largely_yes: usize,
    pub ambivalent: usize,
    pub largely_no: usize,
    pub no: usize,
    pub unparseable: usize,
}

impl VerdictDistribution {
    pub fn record(&mut self, verdict: VerdictClass) {
        match verdict {
            VerdictClass::Yes => self.yes += 1,
            VerdictClass::LargelyYes => self.largely_yes += 1,
            VerdictClass::Ambivalent => self.ambivalent += 1,
            VerdictClass::LargelyNo => self.largely_no += 1,
            VerdictClass::No => self.no += 1,
        }
    }

    pub fn judged(&self) -> usize {
        self.yes + self.largely_yes + self.ambivalent + self.largely_no + self.no
    }

    /// Percentage of judged outputs rated "yes" or "largely yes".
    pub fn alignment_percent(&self) -> f64 {
        if self.judged() == 0 {
            return 0.0;
        }
        100.0 * (self.yes + self.largely_yes) as f64 / self.judged() as f64
    }
}

/// One judged output flagged for manual inspection: the judge reported zero
/// correct links, or declined to produce counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReviewItem {
    pub scenario: String,
    pub shuffle: u32,
    pub reason: String,
    pub verdict: Option<VerdictClass>,
    pub rationale: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub judge_model: String,
    pub sample_size: usize,
    pub distribution: VerdictDistribution,
    pub alignment_percent: f64,
    pub review_queue: Vec<ReviewItem>,
}

/// Routes a verdict into the review queue when warranted.
pub fn review_reason(verdict: &JudgeVerdict) -> Option<String> {
    match (verdict.total_links, verdict.correct_links) {
        (_, Some(0)) => Some("zero correct temporal links".to_string()),
        (None, _) | (_, None) => Some("judge declined to produce link counts".to_string()),
        _ => None,
    }
}
