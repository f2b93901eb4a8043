//! Roofline-style resource allocation: each block gets the fewest MAC
//! engines (convolution), mappers (fused) or MAC units (classifier) that
//! bring its compute cycles within the budget.

use serde::{Deserialize, Serialize};

use super::conv::MACS_PER_ENGINE;
use super::plan::{BlockKind, BlockParams, PipelinePlan};
use super::PipeError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationConfig {
    /// Target compute cycles per block.
    pub budget: u64,
    /// Relative slack on the budget; a block meets it with at most
    /// `floor(budget · (1 + tolerance))` cycles.
    pub tolerance: f64,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            budget: 30,
            tolerance: 0.1,
        }
    }
}

impl AllocationConfig {
    pub fn limit(&self) -> u64 {
        (self.budget as f64 * (1.0 + self.tolerance.max(0.0)) + 1e-9).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockBudget {
    pub block: String,
    pub kind: BlockKind,
    /// MAC units (convolution, classifier) or mappers (fused).
    pub resources: usize,
    pub compute_cycles: u64,
    pub meets_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub limit: u64,
    pub blocks: Vec<BlockBudget>,
}

impl Allocation {
    fn of_kind(&self, kind: BlockKind) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|b| b.kind == kind)
            .map(|b| b.resources)
            .collect()
    }

    pub fn conv_macs(&self) -> Vec<usize> {
        self.of_kind(BlockKind::ConvBlock)
    }

    pub fn fused_mappers(&self) -> Vec<usize> {
        self.of_kind(BlockKind::FusedBlock)
    }

    /// Blocks that cannot meet the budget at any allocation; they carry the
    /// floor achievable.
    pub fn unattainable(&self) -> Vec<&BlockBudget> {
        self.blocks.iter().filter(|b| !b.meets_budget).collect()
    }

    /// Copy of `plan` with these resource counts.
    pub fn apply(&self, plan: &PipelinePlan) -> Result<PipelinePlan, PipeError> {
        let mut out = plan.clone();
        for b in &self.blocks {
            let block = out
                .blocks
                .iter_mut()
                .find(|x| x.name == b.block)
                .ok_or_else(|| PipeError::Config {
                    block: b.block.clone(),
                    detail: "not in the plan".into(),
                })?;
            block.mac_count = b.resources;
        }
        Ok(out)
    }

    /// The pipeline's slowest block.
    pub fn max_cycles(&self) -> u64 {
        self.blocks
            .iter()
            .map(|b| b.compute_cycles)
            .max()
            .unwrap_or(0)
    }
}

/// Resource unit step and the largest useful count for a block.
fn range(plan: &PipelinePlan, i: usize) -> (usize, usize) {
    let b = &plan.blocks[i];
    let (_, n) = b.input_shape;
    match &b.params {
        BlockParams::Conv(k) => (
            MACS_PER_ENGINE,
            MACS_PER_ENGINE * k.out_len(n).unwrap_or(1).max(1),
        ),
        BlockParams::Fused(f) => (1, f.mapped_len(n).max(1)),
        BlockParams::Classifier(d) => (1, (d.in_dim * d.out_dim).max(1)),
        _ => (1, 1),
    }
}

fn cycles_with(plan: &PipelinePlan, i: usize, resources: usize) -> u64 {
    let mut b = plan.blocks[i].clone();
    b.mac_count = resources;
    b.compute_cycles()
}

/// Smallest allocation per block meeting the budget limit. Blocks that
/// cannot meet it get their maximum useful allocation and are flagged.
pub fn allocate_resources(plan: &PipelinePlan, cfg: &AllocationConfig) -> Allocation {
    let limit = cfg.limit();
    let blocks = plan
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (step, max) = range(plan, i);
            let mut r = step;
            while r < max && cycles_with(plan, i, r) > limit {
                r += step;
            }
            let cycles = cycles_with(plan, i, r);
            BlockBudget {
                block: b.name.clone(),
                kind: b.kind,
                resources: r,
                compute_cycles: cycles,
                meets_budget: cycles <= limit,
            }
        })
        .collect();
    Allocation { limit, blocks }
}

/// Checks a given allocation of convolution MACs and fused mappers (in
/// block order) against `limit` cycles; other blocks keep the plan's
/// counts.
pub fn verify_allocation(
    plan: &PipelinePlan,
    conv_macs: &[usize],
    fused_mappers: &[usize],
    limit: u64,
) -> Result<Allocation, PipeError> {
    let (mut ci, mut fi) = (conv_macs.iter(), fused_mappers.iter());
    let mut blocks = Vec::with_capacity(plan.blocks.len());
    for (i, b) in plan.blocks.iter().enumerate() {
        let resources = match b.kind {
            BlockKind::ConvBlock => *ci.next().ok_or_else(|| PipeError::Config {
                block: b.name.clone(),
                detail: "no MAC count given".into(),
            })?,
            BlockKind::FusedBlock => *fi.next().ok_or_else(|| PipeError::Config {
                block: b.name.clone(),
                detail: "no mapper count given".into(),
            })?,
            _ => b.mac_count,
        };
        if b.kind == BlockKind::ConvBlock && (resources == 0 || resources % MACS_PER_ENGINE != 0) {
            return Err(PipeError::Config {
                block: b.name.clone(),
                detail: format!("{resources} MACs is not a positive multiple of {MACS_PER_ENGINE}"),
            });
        }
        let cycles = cycles_with(plan, i, resources.max(1));
        blocks.push(BlockBudget {
            block: b.name.clone(),
            kind: b.kind,
            resources,
            compute_cycles: cycles,
            meets_budget: cycles <= limit,
        });
    }
    if ci.next().is_some() || fi.next().is_some() {
        return Err(PipeError::Shape(
            "more counts given than the plan has blocks".into(),
        ));
    }
    Ok(Allocation { limit, blocks })
}
