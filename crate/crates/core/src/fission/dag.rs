use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::plan::FissionPlan;
use crate::error::Result;

/// One stage computation: a stage evaluated with one weight group on one
/// distinct input activation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagNode {
    pub stage: usize,
    pub group: usize,
    /// Node producing this node's input; `None` for first-stage nodes, which
    /// read the stem output.
    pub lineage: Option<usize>,
    /// Exits whose path runs through this node.
    pub exits: Vec<usize>,
}

/// Deduplicated computation graph for a multi-exit forward pass.
///
/// Nodes are stored in stage order, so index order is a topological order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionDag {
    pub nodes: Vec<DagNode>,
    pub edges: Vec<(usize, usize)>,
    pub exit_heads: Vec<usize>,
}

impl ExecutionDag {
    pub fn build(plan: &FissionPlan) -> Result<Self> {
        plan.validate()?;
        let n = plan.num_exits();
        let mut nodes: Vec<DagNode> = Vec::new();
        let mut edges = Vec::new();
        let mut index: HashMap<(usize, usize, Option<usize>), usize> = HashMap::new();
        let mut current: Vec<Option<usize>> = vec![None; n];

        for stage in 0..plan.num_stages() {
            for (exit, cur) in current.iter_mut().enumerate() {
                let group = plan.group_for(stage, exit)?;
                let key = (stage, group, *cur);
                let id = *index.entry(key).or_insert_with(|| {
                    nodes.push(DagNode {
                        stage,
                        group,
                        lineage: *cur,
                        exits: Vec::new(),
                    });
                    if let Some(parent) = *cur {
                        edges.push((parent, nodes.len() - 1));
                    }
                    nodes.len() - 1
                });
                nodes[id].exits.push(exit);
                *cur = Some(id);
            }
        }

        let exit_heads = current.into_iter().map(|c| c.expect("plan has at least one stage")).collect();
        Ok(ExecutionDag {
            nodes,
            edges,
            exit_heads,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_exits(&self) -> usize {
        self.exit_heads.len()
    }

    /// Nodes visited by `exit`, first stage first.
    pub fn path_nodes(&self, exit: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = Some(self.exit_heads[exit]);
        while let Some(id) = cur {
            path.push(id);
            cur = self.nodes[id].lineage;
        }
        path.reverse();
        path
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |(p, _)| *p == node).map(|(_, c)| *c)
    }
}

pub fn build_execution_dag(plan: &FissionPlan) -> Result<ExecutionDag> {
    ExecutionDag::build(plan)
}
