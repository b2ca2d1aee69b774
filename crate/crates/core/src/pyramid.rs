//! Periodic pyramid construction: per-level component ranges, the
//! inclusion relation between adjacent levels, the attention mask, and
//! token embedding of zero-padded components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tensor, Var};
use crate::spectral::PeriodSet;

/// Additive penalty applied to disallowed attention entries.
pub const MASK_NEG: f64 = -1e9;

/// One periodic component: a half-open time range at a pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentIndex {
    /// Pyramid level, 1-based; level 1 is the whole window.
    pub level: usize,
    /// Position within the level, 1-based, left to right.
    pub slot: usize,
    pub start: usize,
    pub end: usize,
}

impl ComponentIndex {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &ComponentIndex) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// All components of one pyramid in canonical order
/// (level-major, slot-minor).
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentTable {
    components: Vec<ComponentIndex>,
    level_counts: Vec<usize>,
    series_len: usize,
}

impl ComponentTable {
    /// Tiles `[0, len)` at every level: level l holds ceil(len / p_l)
    /// consecutive chunks of length p_l, the last possibly shorter.
    pub fn build(len: usize, periods: &PeriodSet) -> ComponentTable {
        let mut components = Vec::new();
        let mut level_counts = Vec::with_capacity(periods.k);
        for (li, &p) in periods.periods.iter().enumerate() {
            let count = len.div_ceil(p);
            level_counts.push(count);
            for slot in 0..count {
                components.push(ComponentIndex {
                    level: li + 1,
                    slot: slot + 1,
                    start: slot * p,
                    end: ((slot + 1) * p).min(len),
                });
            }
        }
        ComponentTable {
            components,
            level_counts,
            series_len: len,
        }
    }

    pub fn components(&self) -> &[ComponentIndex] {
        &self.components
    }

    pub fn token_count(&self) -> usize {
        self.components.len()
    }

    pub fn level_count(&self) -> usize {
        self.level_counts.len()
    }

    pub fn level_counts(&self) -> &[usize] {
        &self.level_counts
    }

    pub fn series_len(&self) -> usize {
        self.series_len
    }

    /// Canonical token index of a (1-based) level/slot pair.
    pub fn token_index(&self, level: usize, slot: usize) -> usize {
        self.level_counts[..level - 1].iter().sum::<usize>() + slot - 1
    }

    /// Token indices of the leaf (bottom) level.
    pub fn leaf_range(&self) -> std::ops::Range<usize> {
        let start = self.token_count() - self.level_counts[self.level_count() - 1];
        start..self.token_count()
    }
}

/// Overlap relation between components of adjacent levels.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionRelation {
    /// children[i]: canonical indices at level(i)+1 overlapping component i.
    children: Vec<Vec<usize>>,
    /// parents[i]: canonical indices at level(i)-1 overlapping component i.
    parents: Vec<Vec<usize>>,
}

impl InclusionRelation {
    pub fn children_of(&self, token: usize) -> &[usize] {
        &self.children[token]
    }

    pub fn parents_of(&self, token: usize) -> &[usize] {
        &self.parents[token]
    }

    /// True when the adjacent-level pair overlaps in time.
    pub fn related(&self, parent: usize, child: usize) -> bool {
        self.children[parent].contains(&child)
    }
}

/// Computes the adjacency between consecutive levels from interval
/// overlap of the component ranges.
pub fn inclusion(table: &ComponentTable) -> InclusionRelation {
    let n = table.token_count();
    let mut children = vec![Vec::new(); n];
    let mut parents = vec![Vec::new(); n];
    let comps = table.components();
    for (i, a) in comps.iter().enumerate() {
        for (j, b) in comps.iter().enumerate() {
            if b.level == a.level + 1 && a.overlaps(b) {
                children[i].push(j);
                parents[j].push(i);
            }
        }
    }
    InclusionRelation { children, parents }
}

/// Symmetric attention mask over pyramid tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    n: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }

    pub fn all_allowed(&self) -> bool {
        self.allowed.iter().all(|&a| a)
    }

    /// Additive-bias view: 0 where allowed, [`MASK_NEG`] where not.
    pub fn bias_tensor(&self) -> Tensor {
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { MASK_NEG })
            .collect();
        Tensor::matrix(self.n, self.n, data).expect("mask dims are consistent")
    }

    /// Rows of 0/1 flags, for JSON and CSV export.
    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.is_allowed(i, j) as u8).collect())
            .collect()
    }
}

/// Builds the neighborhood mask: a pair of tokens may attend iff they
/// share a level or sit on adjacent levels with overlapping ranges.
/// Levels two or more apart are never directly connected.
pub fn build_mask(relation: &InclusionRelation, table: &ComponentTable) -> AttentionMask {
    let n = table.token_count();
    let comps = table.components();
    let mut allowed = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (&comps[i], &comps[j]);
            let ok = if a.level == b.level {
                true
            } else if b.level == a.level + 1 {
                relation.related(i, j)
            } else if a.level == b.level + 1 {
                relation.related(j, i)
            } else {
                false
            };
            allowed[i * n + j] = ok;
        }
    }
    AttentionMask { n, allowed }
}

/// Upper bound on the token count any pyramid of this length and depth
/// can produce; positional-embedding tables are sized with it.
pub fn max_token_count(len: usize, k: usize) -> usize {
    let max_freq = len.div_ceil(2);
    // per-level count never exceeds its frequency, and frequencies are
    // distinct values in 1..=max_freq with f1 = 1
    let mut total = 1;
    for i in 0..k.saturating_sub(1) {
        total += max_freq.saturating_sub(i).max(1);
    }
    total
}

/// Extracts one channel's raw component values in canonical order.
pub fn component_values(channel: &[f64], table: &ComponentTable) -> Vec<Vec<f64>> {
    table
        .components()
        .iter()
        .map(|c| channel[c.start..c.end].to_vec())
        .collect()
}

/// Zero-pads each component to the window length and stacks them into
/// an N x L matrix ready for the shared projection.
pub fn padded_component_matrix(channel: &[f64], table: &ComponentTable) -> Tensor {
    let len = table.series_len();
    let n = table.token_count();
    let mut data = vec![0.0; n * len];
    for (row, c) in table.components().iter().enumerate() {
        data[row * len..row * len + c.len()].copy_from_slice(&channel[c.start..c.end]);
    }
    Tensor::matrix(n, len, data).expect("finite input series")
}

/// Maps padded components through the shared linear layer and adds the
/// learned positional embedding for each canonical token slot.
pub fn embed<'t>(
    components: Var<'t>,
    proj_w: Var<'t>,
    proj_b: Var<'t>,
    pos_table: Var<'t>,
) -> Result<Var<'t>> {
    let n = components.shape()[0];
    if pos_table.shape()[0] < n {
        return Err(Error::Config(format!(
            "positional table has {} slots, pyramid needs {n}",
            pos_table.shape()[0]
        )));
    }
    let projected = components.matmul(proj_w)?.add_bias(proj_b)?;
    let indices: Vec<usize> = (0..n).collect();
    let pos = pos_table.gather_rows(&indices)?;
    projected.add(pos)
}
