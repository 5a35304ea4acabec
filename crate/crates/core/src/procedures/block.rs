//! Stratified permuted blocks with unequal allocation ratios.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ratio::AllocationRatios;
use crate::schema::{BlindedProfile, CovariateSchema, StratumId};

/// Block sizes per observed stratum: a common multiple of the period `Q`, with optional
/// per-stratum overrides. Every size is a positive multiple of `Q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSizes {
    default: u32,
    overrides: HashMap<StratumId, u32>,
}

impl BlockSizes {
    /// `B_s = c·Q` for every stratum.
    pub fn uniform(ratios: &AllocationRatios, block_multiple: u32) -> Result<Self> {
        if block_multiple == 0 {
            return Err(Error::BlockSize("block multiple must be at least 1".into()));
        }
        let q = ratios.period()? as u32;
        Ok(Self {
            default: block_multiple * q,
            overrides: HashMap::new(),
        })
    }

    /// Uses an explicit block size, which must be a positive multiple of `Q`.
    pub fn from_size(ratios: &AllocationRatios, size: u32) -> Result<Self> {
        check_size(ratios, size)?;
        Ok(Self {
            default: size,
            overrides: HashMap::new(),
        })
    }

    pub fn with_override(mut self, ratios: &AllocationRatios, stratum: StratumId, size: u32) -> Result<Self> {
        check_size(ratios, size)?;
        self.overrides.insert(stratum, size);
        Ok(self)
    }

    pub fn size(&self, stratum: StratumId) -> u32 {
        self.overrides.get(&stratum).copied().unwrap_or(self.default)
    }

    pub fn default_size(&self) -> u32 {
        self.default
    }
}

fn check_size(ratios: &AllocationRatios, size: u32) -> Result<()> {
    let q = ratios.period()? as u32;
    if size == 0 || size % q != 0 {
        return Err(Error::BlockSize(format!(
            "block size {size} is not a positive multiple of the period {q}"
        )));
    }
    Ok(())
}

/// Per-stratum queues of the arms remaining in the current block.
#[derive(Debug, Clone)]
pub struct StrPbState {
    schema: Arc<CovariateSchema>,
    ratios: AllocationRatios,
    sizes: BlockSizes,
    queues: HashMap<StratumId, Vec<usize>>,
}

impl StrPbState {
    pub fn new(schema: Arc<CovariateSchema>, ratios: AllocationRatios, sizes: BlockSizes) -> Self {
        Self {
            schema,
            ratios,
            sizes,
            queues: HashMap::new(),
        }
    }

    pub fn schema(&self) -> &Arc<CovariateSchema> {
        &self.schema
    }

    pub fn ratios(&self) -> &AllocationRatios {
        &self.ratios
    }

    pub fn block_sizes(&self) -> &BlockSizes {
        &self.sizes
    }

    /// Arm counts `B_s·ρ_g` of one fresh block in stratum `s`.
    pub fn block_composition(&self, stratum: StratumId) -> Vec<u32> {
        let size = self.sizes.size(stratum) as i64;
        let q = self.ratios.common_denominator();
        self.ratios
            .scaled_numerators()
            .iter()
            .map(|&r| (size / q * r) as u32)
            .collect()
    }

    /// Arms still to be handed out in the stratum's current block, in reverse pop order.
    pub fn pending(&self, stratum: StratumId) -> &[usize] {
        self.queues.get(&stratum).map_or(&[], |q| q.as_slice())
    }

    pub fn assign<R: Rng + ?Sized>(&mut self, profile: &BlindedProfile<'_>, rng: &mut R) -> usize {
        let stratum = profile.stratum();
        if self.queues.get(&stratum).is_none_or(|q| q.is_empty()) {
            let mut block = Vec::with_capacity(self.sizes.size(stratum) as usize);
            for (arm, count) in self.block_composition(stratum).into_iter().enumerate() {
                block.extend(std::iter::repeat_n(arm, count as usize));
            }
            block.shuffle(rng);
            self.queues.insert(stratum, block);
        }
        let queue = self.queues.get_mut(&stratum).expect("queue filled above");
        queue.pop().expect("fresh blocks are non-empty")
    }
}

/// Builds an STR-PB state with `B_s = c·Q` in every stratum.
pub fn new_str_pb(schema: Arc<CovariateSchema>, ratios: AllocationRatios, block_multiple: u32) -> Result<StrPbState> {
    let sizes = BlockSizes::uniform(&ratios, block_multiple)?;
    Ok(StrPbState::new(schema, ratios, sizes))
}
