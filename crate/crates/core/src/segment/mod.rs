//! Sentence segmentation by thresholded boundary scores with hard length
//! wrapping, plus simplified/traditional Chinese detection.

mod chinese;

pub use chinese::{classify_chinese_script, resolve_language, ChineseScript, ScriptSets};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    pub threshold: f64,
    /// Maximum sentence length in characters.
    pub max_len: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            threshold: 0.02,
            max_len: 256,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "segment.threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("segment.max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-character probability that a sentence ends right after it.
pub trait BoundaryScorer: Send + Sync {
    /// One score in `[0, 1]` per `char` of `text`.
    fn scores(&self, text: &str) -> Vec<f64>;
}

/// Scores 1.0 after sentence-final punctuation followed by whitespace or the
/// end of the text. Full-width CJK stops need no following space.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleScorer;

const TERMINALS: [char; 6] = ['.', '!', '?', '؟', '।', '。'];
const CJK_TERMINALS: [char; 3] = ['。', '！', '？'];

impl BoundaryScorer for RuleScorer {
    fn scores(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = text.chars().collect();
        (0..chars.len())
            .map(|i| {
                let c = chars[i];
                let next_is_break = chars.get(i + 1).is_none_or(|n| n.is_whitespace());
                let hit = CJK_TERMINALS.contains(&c) || (TERMINALS.contains(&c) && next_is_break);
                if hit {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Splits `text` after every character scoring at least `cfg.threshold`,
/// trims each piece, and wraps pieces longer than `cfg.max_len` characters.
pub fn split(text: &str, scorer: &dyn BoundaryScorer, cfg: &SegmentationConfig) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let scores = scorer.scores(text);
    debug_assert_eq!(scores.len(), chars.len());
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let end_here = i + 1 == chars.len() || scores.get(i).is_some_and(|&s| s >= cfg.threshold);
        if end_here {
            push_wrapped(&chars[start..=i], cfg.max_len, &mut out);
            start = i + 1;
        }
    }
    out
}

fn push_wrapped(piece: &[char], max_len: usize, out: &mut Vec<String>) {
    let Some(first) = piece.iter().position(|c| !c.is_whitespace()) else {
        return;
    };
    let last = piece
        .iter()
        .rposition(|c| !c.is_whitespace())
        .unwrap_or(first);
    for chunk in piece[first..=last].chunks(max_len.max(1)) {
        let s: String = chunk.iter().collect();
        let s = s.trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
    }
}

/// A scorer paired with its thresholds.
pub struct Segmenter {
    scorer: Box<dyn BoundaryScorer>,
    config: SegmentationConfig,
}

impl Segmenter {
    pub fn new(scorer: Box<dyn BoundaryScorer>, config: SegmentationConfig) -> Result<Self> {
        config.validate()?;
        Ok(Segmenter { scorer, config })
    }

    /// The punctuation-rule scorer with the given thresholds.
    pub fn rule_based(config: SegmentationConfig) -> Result<Self> {
        Self::new(Box::new(RuleScorer), config)
    }

    pub fn config(&self) -> &SegmentationConfig {
        &self.config
    }

    pub fn split(&self, text: &str) -> Vec<String> {
        split(text, self.scorer.as_ref(), &self.config)
    }
}

impl Default for Segmenter {
    fn default() -> Self {
        Segmenter {
            scorer: Box::new(RuleScorer),
            config: SegmentationConfig::default(),
        }
    }
}
