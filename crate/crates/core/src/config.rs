//! Model configuration, mirrored in the weight-file header and the CLI's
//! `--config` JSON.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature-extraction settings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockConfig {
    /// Spatial downsample of the patch embedding and the context encoder (4 or 8).
    pub patch_size: usize,
    pub embed_dim: usize,
    pub state_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    /// Depthwise convolution size on the token grid (odd).
    pub conv_kernel: usize,
    pub context_dim: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            patch_size: 4,
            embed_dim: 128,
            state_dim: 16,
            num_heads: 4,
            num_blocks: 4,
            conv_kernel: 3,
            context_dim: 128,
        }
    }
}

/// Correlation lookup and refinement settings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub num_levels: usize,
    pub radius: usize,
    pub flow_iters: usize,
    pub disparity_iters: usize,
    /// Width of the recurrent hidden state; the context map is split into
    /// `hidden_dim` state-initialization channels and the remaining input channels.
    pub hidden_dim: usize,
    pub motion_dim: usize,
    /// Number of disparity update resolutions (1 to 3), each half the previous.
    pub disparity_scales: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            num_levels: 4,
            radius: 4,
            flow_iters: 12,
            disparity_iters: 8,
            hidden_dim: 64,
            motion_dim: 64,
            disparity_scales: 3,
        }
    }
}

impl MatchConfig {
    pub fn flow_lookup_channels(&self) -> usize {
        self.num_levels * (2 * self.radius + 1).pow(2)
    }

    pub fn disparity_lookup_channels(&self) -> usize {
        self.num_levels * (2 * self.radius + 1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub block: BlockConfig,
    pub matching: MatchConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.block;
        let m = &self.matching;
        let fail = |msg: String| Err(Error::Config(msg));
        if ![4, 8].contains(&b.patch_size) {
            return fail(format!("patch_size must be 4 or 8, got {}", b.patch_size));
        }
        for (name, v) in [
            ("embed_dim", b.embed_dim),
            ("state_dim", b.state_dim),
            ("num_heads", b.num_heads),
            ("num_blocks", b.num_blocks),
            ("conv_kernel", b.conv_kernel),
            ("context_dim", b.context_dim),
            ("num_levels", m.num_levels),
            ("hidden_dim", m.hidden_dim),
            ("motion_dim", m.motion_dim),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if !b.embed_dim.is_multiple_of(b.num_heads) {
            return fail(format!(
                "embed_dim {} not divisible by num_heads {}",
                b.embed_dim, b.num_heads
            ));
        }
        if b.conv_kernel.is_multiple_of(2) {
            return fail(format!("conv_kernel must be odd, got {}", b.conv_kernel));
        }
        if b.context_dim <= m.hidden_dim {
            return fail(format!(
                "context_dim {} must exceed hidden_dim {}",
                b.context_dim, m.hidden_dim
            ));
        }
        if b.context_dim < 4 {
            return fail("context_dim must be at least 4".into());
        }
        if !(1..=3).contains(&m.disparity_scales) {
            return fail(format!(
                "disparity_scales must be 1, 2 or 3, got {}",
                m.disparity_scales
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.matching.flow_lookup_channels(), 324);
        assert_eq!(cfg.matching.disparity_lookup_channels(), 36);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = ModelConfig::from_json(r#"{"block": {"embed_dim": 32, "num_heads": 2}}"#).unwrap();
        assert_eq!(cfg.block.embed_dim, 32);
        assert_eq!(cfg.block.patch_size, 4);
        assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            r#"{"block": {"patch_size": 2}}"#,
            r#"{"block": {"embed_dim": 30, "num_heads": 4}}"#,
            r#"{"block": {"conv_kernel": 4}}"#,
            r#"{"matching": {"disparity_scales": 4}}"#,
            r#"{"block": {"bogus": 1}}"#,
        ] {
            assert!(matches!(ModelConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
