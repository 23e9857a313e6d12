//! Tunable thresholds for every engine phase.
//!
//! Defaults are the pinned values the test-suite relies on. [`ConfigOverrides`]
//! is the flat key-value form read from config files.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    /// Minimum intersection-over-child-area for parent assignment.
    pub ioa_threshold: f64,
    /// Maximum partner-center to anchor-edge distance for geometric pairing.
    pub caption_distance: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            ioa_threshold: 0.5,
            caption_distance: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingConfig {
    /// Narrowest whitespace gap XY-cut will cut along.
    pub min_gap: f64,
    /// Horizontal overlap (fraction of the narrower box) for "above" precedence.
    pub stack_overlap: f64,
    /// Vertical overlap (fraction of the shorter box) for same-band precedence.
    pub band_overlap: f64,
    pub align_tolerance: f64,
}

impl Default for OrderingConfig {
    fn default() -> Self {
        Self {
            min_gap: 0.012,
            stack_overlap: 0.3,
            band_overlap: 0.5,
            align_tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchConfig {
    pub max_batch: usize,
    pub max_wait_ms: f64,
    /// Route Image/Figure to the captioning expert; otherwise pass them through.
    pub captioning: bool,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self {
            max_batch: 16,
            max_wait_ms: 25.0,
            captioning: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidateConfig {
    pub terminal_punctuation: String,
    /// Force no-space joins; `None` derives it from the language tag (zh/ja).
    pub cjk_join: Option<bool>,
}

impl Default for ConsolidateConfig {
    fn default() -> Self {
        Self {
            terminal_punctuation: ".!?:;".to_string(),
            cjk_join: None,
        }
    }
}

impl ConsolidateConfig {
    pub fn cjk_for(&self, language_tag: &str) -> bool {
        self.cjk_join
            .unwrap_or_else(|| language_tag.starts_with("zh") || language_tag.starts_with("ja"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EngineConfig {
    pub layout: LayoutConfig,
    pub ordering: OrderingConfig,
    pub dispatch: DispatchConfig,
    pub consolidate: ConsolidateConfig,
    /// Chunk size limit in whitespace tokens.
    pub max_tokens: usize,
}

impl EngineConfig {
    pub fn new() -> Self {
        Self {
            max_tokens: 256,
            ..Default::default()
        }
    }
}

/// Flat override set; every key is optional and unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub ioa_threshold: Option<f64>,
    pub caption_distance: Option<f64>,
    pub min_gap: Option<f64>,
    pub stack_overlap: Option<f64>,
    pub band_overlap: Option<f64>,
    pub align_tolerance: Option<f64>,
    pub max_batch: Option<usize>,
    pub max_wait_ms: Option<f64>,
    pub captioning: Option<bool>,
    pub terminal_punctuation: Option<String>,
    pub cjk_join: Option<bool>,
    pub max_tokens: Option<usize>,
    pub max_retries: Option<u32>,
    pub backoff_ms: Option<f64>,
    pub queue_capacity: Option<usize>,
    pub max_inflight_docs: Option<usize>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut EngineConfig) {
        macro_rules! set {
            ($field:ident => $target:expr) => {
                if let Some(v) = self.$field.clone() {
                    $target = v;
                }
            };
        }
        set!(ioa_threshold => cfg.layout.ioa_threshold);
        set!(caption_distance => cfg.layout.caption_distance);
        set!(min_gap => cfg.ordering.min_gap);
        set!(stack_overlap => cfg.ordering.stack_overlap);
        set!(band_overlap => cfg.ordering.band_overlap);
        set!(align_tolerance => cfg.ordering.align_tolerance);
        set!(max_batch => cfg.dispatch.max_batch);
        set!(max_wait_ms => cfg.dispatch.max_wait_ms);
        set!(captioning => cfg.dispatch.captioning);
        set!(terminal_punctuation => cfg.consolidate.terminal_punctuation);
        set!(max_tokens => cfg.max_tokens);
        if self.cjk_join.is_some() {
            cfg.consolidate.cjk_join = self.cjk_join;
        }
    }
}
