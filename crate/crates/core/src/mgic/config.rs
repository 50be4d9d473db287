use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::template::BlockTemplate;
use crate::error::{Error, Result};

/// How the nominal group size is adapted to widths it does not divide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum GroupClamp {
    /// Require `s_g` to divide every level width.
    Strict,
    /// One group size for the whole block: the largest integer `≤ s_g`
    /// dividing every level width.
    #[default]
    PerBlock,
    /// Each level uses the largest integer `≤ s_g` dividing its own width.
    PerLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MgicConfig {
    /// Channels per group in the grouped relaxations and transfers.
    pub s_g: usize,
    /// Coarsest grid size; the coarsest width lands in `[s_c, 2·s_c)`.
    pub s_c: usize,
    pub template: BlockTemplate,
    #[serde(default)]
    pub clamp: GroupClamp,
}

impl MgicConfig {
    pub fn new(s_g: usize, s_c: usize, template: BlockTemplate) -> Self {
        MgicConfig { s_g, s_c, template, clamp: GroupClamp::PerBlock }
    }

    pub fn with_clamp(mut self, clamp: GroupClamp) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_g == 0 || self.s_c == 0 {
            return Err(Error::config("s_g and s_c must be at least 1"));
        }
        if self.s_c < self.s_g {
            return Err(Error::config(format!("s_c={} must be at least s_g={}", self.s_c, self.s_g)));
        }
        self.template.validate()
    }
}

/// Number of coarsening steps: `⌊log₂(c_in / s_c)⌋`.
pub fn num_levels(c_in: usize, s_c: usize) -> Result<usize> {
    if s_c == 0 || c_in < s_c {
        return Err(Error::config(format!("need c_in ≥ s_c ≥ 1, got c_in={c_in}, s_c={s_c}")));
    }
    // largest n with s_c·2ⁿ ≤ c_in, computed in integers
    let mut n = 0;
    while s_c << (n + 1) <= c_in {
        n += 1;
    }
    Ok(n)
}

/// Largest integer `≤ s_g` dividing every width. Always at least 1.
pub fn effective_group_size(s_g: usize, widths: &[usize]) -> usize {
    (1..=s_g.max(1)).rev().find(|s| widths.iter().all(|w| w % s == 0)).unwrap_or(1)
}

/// Channel widths of the hierarchy, finest first, coarsest last.
pub fn level_widths(c_in: usize, s_c: usize) -> Result<Vec<usize>> {
    let n = num_levels(c_in, s_c)?;
    let mut widths = vec![c_in];
    for j in 0..n {
        let c = widths[j];
        if c % 2 != 0 {
            return Err(Error::config(format!("level {j} width {c} cannot be halved")));
        }
        widths.push(c / 2);
    }
    Ok(widths)
}

/// Group size used at each non-coarsest level under the given policy.
pub fn level_group_sizes(s_g: usize, widths: &[usize], clamp: GroupClamp) -> Result<Vec<usize>> {
    let fine = &widths[..widths.len() - 1];
    match clamp {
        GroupClamp::Strict => {
            if let Some((j, c)) = fine.iter().enumerate().find(|(_, &c)| c % s_g != 0) {
                return Err(Error::config(format!("s_g={s_g} does not divide level {j} width {c}")));
            }
            Ok(vec![s_g; fine.len()])
        }
        GroupClamp::PerBlock => Ok(vec![effective_group_size(s_g, fine); fine.len()]),
        GroupClamp::PerLevel => Ok(fine.iter().map(|&c| effective_group_size(s_g, &[c])).collect()),
    }
}
