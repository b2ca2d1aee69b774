//! Root-to-leaf feature flows through the inclusion relation and their
//! aggregation into the seasonal output.

use crate::error::{Error, Result};
use crate::numerics::Var;
use crate::pyramid::{ComponentTable, InclusionRelation};

/// Flow enumeration refuses to produce more than this many paths;
/// silently sampling would change the mean semantics of aggregation.
pub const DEFAULT_MAX_FLOWS: usize = 4096;

/// One branch from the pyramid root to a leaf: a canonical token index
/// per level, each consecutive pair overlapping in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureFlow {
    pub path: Vec<usize>,
}

/// Enumerates every root-to-leaf path in deterministic order
/// (lexicographic by slot at each level).
pub fn enumerate_flows(
    relation: &InclusionRelation,
    table: &ComponentTable,
) -> Result<Vec<FeatureFlow>> {
    enumerate_flows_bounded(relation, table, DEFAULT_MAX_FLOWS)
}

/// [`enumerate_flows`] with an explicit path-count guard.
pub fn enumerate_flows_bounded(
    relation: &InclusionRelation,
    table: &ComponentTable,
    max_flows: usize,
) -> Result<Vec<FeatureFlow>> {
    let depth = table.level_count();
    let mut flows = Vec::new();
    let mut path = vec![0usize; depth];

    fn descend(
        token: usize,
        level: usize,
        depth: usize,
        relation: &InclusionRelation,
        path: &mut Vec<usize>,
        flows: &mut Vec<FeatureFlow>,
        max_flows: usize,
    ) -> Result<()> {
        path[level] = token;
        if level + 1 == depth {
            if flows.len() >= max_flows {
                return Err(Error::Config(format!(
                    "flow count exceeds max_flows = {max_flows}; lower k or raise the limit"
                )));
            }
            flows.push(FeatureFlow { path: path.clone() });
            return Ok(());
        }
        for &child in relation.children_of(token) {
            descend(child, level + 1, depth, relation, path, flows, max_flows)?;
        }
        Ok(())
    }

    descend(0, 0, depth, relation, &mut path, &mut flows, max_flows)?;
    Ok(flows)
}

/// Concatenates each flow's k token embeddings, projects them to the
/// target length with one shared linear map, and averages over flows.
pub fn aggregate_flows<'t>(
    encoded: Var<'t>,
    flows: &[FeatureFlow],
    proj_w: Var<'t>,
    proj_b: Var<'t>,
) -> Result<Var<'t>> {
    if flows.is_empty() {
        return Err(Error::InvalidArgument("no feature flows to aggregate".into()));
    }
    let d_model = encoded.shape()[1];
    let k = flows[0].path.len();
    let indices: Vec<usize> = flows.iter().flat_map(|f| f.path.iter().copied()).collect();
    let stacked = encoded
        .gather_rows(&indices)?
        .reshape(vec![flows.len(), k * d_model])?;
    stacked.matmul(proj_w)?.add_bias(proj_b)?.mean_rows()
}
