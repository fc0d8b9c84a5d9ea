//! Network fission: disjoint weight grouping per stage, exit paths with the
//! group-0 fall-back rule, and the deduplicated execution graph.
//!
//! Masks are elementwise over the flattened groupable weights of a stage (the
//! concatenation of its grouped tensors, in block order).

mod container;
mod dag;
mod mask;
mod plan;

pub use container::{read_mask_container, write_mask_container, MASK_MAGIC};
pub use dag::{build_execution_dag, DagNode, ExecutionDag};
pub use mask::{mask_sum, Mask};
pub use plan::{
    apply_pai, default_plan, group_for, partition_from_draws, partition_stage, FissionPlan,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pai::PaiMasks;

/// Pruning mask and group masks of one stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageMasks {
    pub pai: Mask,
    pub groups: Vec<Mask>,
}

/// Complete mask state of a fissioned network.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupMaskSet {
    pub plan: FissionPlan,
    pub seed: u64,
    pub sparsity: f64,
    /// Pruning mask of the stem convolution (not grouped), if the network has one.
    pub stem_pai: Option<Mask>,
    pub stages: Vec<StageMasks>,
}

impl GroupMaskSet {
    /// Draws group masks for every stage with dense (all-ones) pruning masks.
    pub fn generate(
        plan: &FissionPlan,
        stage_sizes: &[usize],
        stem_size: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        plan.validate()?;
        if stage_sizes.len() != plan.num_stages() {
            return Err(Error::shape(
                "stage count",
                &[plan.num_stages()],
                &[stage_sizes.len()],
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = stage_sizes
            .iter()
            .enumerate()
            .map(|(i, &size)| {
                let groups = partition_stage(&[size], plan.groups(i), plan.ratios(i), &mut rng)?;
                Ok(StageMasks {
                    pai: Mask::ones(size),
                    groups,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupMaskSet {
            plan: plan.clone(),
            seed,
            sparsity: 0.0,
            stem_pai: stem_size.map(Mask::ones),
            stages,
        })
    }

    /// Intersects all groups with pruning masks; the partition invariant then
    /// holds against the pruning masks.
    pub fn with_pai(mut self, pai: &PaiMasks) -> Result<Self> {
        if pai.stages.len() != self.stages.len() {
            return Err(Error::shape(
                "pruning mask stages",
                &[self.stages.len()],
                &[pai.stages.len()],
            ));
        }
        for (sm, p) in self.stages.iter_mut().zip(&pai.stages) {
            sm.groups = apply_pai(&sm.groups, p)?;
            sm.pai = p.clone();
        }
        match (&mut self.stem_pai, &pai.stem) {
            (Some(stem), Some(p)) => {
                if p.len() != stem.len() {
                    return Err(Error::shape("stem pruning mask", &[stem.len()], &[p.len()]));
                }
                *stem = p.clone();
            }
            (None, None) | (Some(_), None) => {}
            (None, Some(_)) => {
                return Err(Error::InvalidConfig(
                    "stem pruning mask given for a network without a stem".into(),
                ))
            }
        }
        self.sparsity = pai.sparsity;
        Ok(self)
    }

    pub fn stage_sizes(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.pai.len()).collect()
    }

    pub fn group_mask(&self, stage: usize, group: usize) -> &Mask {
        &self.stages[stage].groups[group]
    }

    /// Checks shapes against the plan, pairwise disjointness and the
    /// partition of every stage's pruning mask.
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if self.stages.len() != self.plan.num_stages() {
            return Err(Error::shape(
                "mask stages",
                &[self.plan.num_stages()],
                &[self.stages.len()],
            ));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::InvalidSparsity(self.sparsity));
        }
        for (i, sm) in self.stages.iter().enumerate() {
            if sm.groups.len() != self.plan.groups(i) {
                return Err(Error::shape(
                    &format!("stage {i} group count"),
                    &[self.plan.groups(i)],
                    &[sm.groups.len()],
                ));
            }
            for g in &sm.groups {
                if g.len() != sm.pai.len() {
                    return Err(Error::shape(&format!("stage {i} group mask"), &[sm.pai.len()], &[g.len()]));
                }
            }
            let sum = mask_sum(&sm.groups);
            for (pos, (&s, &p)) in sum.iter().zip(sm.pai.bits()).enumerate() {
                if s != p as u32 {
                    return Err(Error::Format(format!(
                        "stage {i} position {pos}: groups cover it {s} times, pruning mask is {}",
                        p as u8
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fails if some exit's path reaches a group with no surviving weights.
    pub fn check_live_exits(&self) -> Result<()> {
        for exit in 0..self.plan.num_exits() {
            for (stage, sm) in self.stages.iter().enumerate() {
                let group = self.plan.group_for(stage, exit)?;
                if sm.groups[group].all_zero() && !sm.groups[group].is_empty() {
                    return Err(Error::DeadExit { exit, stage, group });
                }
            }
        }
        Ok(())
    }

    /// Fraction of groupable (and stem) weights removed by the pruning masks.
    pub fn realized_sparsity(&self) -> f64 {
        let masks = self.stem_pai.iter().chain(self.stages.iter().map(|s| &s.pai));
        let (kept, total) = masks.fold((0usize, 0usize), |(k, t), m| (k + m.count_ones(), t + m.len()));
        if total == 0 {
            0.0
        } else {
            1.0 - kept as f64 / total as f64
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_mask_container(self, &mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        read_mask_container(&mut std::io::Cursor::new(bytes))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_mask_container(self, &mut f)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        read_mask_container(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_is_deterministic() {
        let plan = default_plan(3, 3).unwrap();
        let a = GroupMaskSet::generate(&plan, &[50, 60, 70], Some(9), 7).unwrap();
        let b = GroupMaskSet::generate(&plan, &[50, 60, 70], Some(9), 7).unwrap();
        let c = GroupMaskSet::generate(&plan, &[50, 60, 70], Some(9), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.validate().unwrap();
    }

    #[test]
    fn pai_all_zero_kills_exits() {
        let plan = default_plan(2, 2).unwrap();
        let set = GroupMaskSet::generate(&plan, &[10, 10], None, 1).unwrap();
        let pai = PaiMasks {
            stem: None,
            stages: vec![Mask::ones(10), Mask::zeros(10)],
            sparsity: 0.5,
        };
        let set = set.with_pai(&pai).unwrap();
        set.validate().unwrap();
        assert!(matches!(set.check_live_exits(), Err(Error::DeadExit { stage: 1, .. })));
    }

    #[test]
    fn validate_catches_overlap() {
        let plan = default_plan(2, 2).unwrap();
        let mut set = GroupMaskSet::generate(&plan, &[8, 8], None, 1).unwrap();
        set.stages[1].groups[0] = Mask::ones(8);
        assert!(set.validate().is_err());
    }
}
