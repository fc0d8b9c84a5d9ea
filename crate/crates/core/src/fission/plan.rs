use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mask::Mask;
use crate::error::{Error, Result};

const RATIO_TOLERANCE: f64 = 1e-9;

/// Per-stage group counts and grouping ratios of a multi-exit topology.
///
/// Stages, exits and groups are zero-based. Group 0 of every stage is the
/// fall-back group used by exits that have no group of their own there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FissionPlan {
    num_exits: usize,
    groups_per_stage: Vec<usize>,
    group_ratios: Vec<Vec<f64>>,
}

impl FissionPlan {
    /// Builds a plan with explicit group counts. `ratios = None` means
    /// balanced (uniform) ratios in every stage.
    pub fn new(
        num_exits: usize,
        groups_per_stage: Vec<usize>,
        ratios: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let group_ratios = match ratios {
            Some(r) => r,
            None => groups_per_stage
                .iter()
                .map(|&g| vec![1.0 / g.max(1) as f64; g])
                .collect(),
        };
        let plan = FissionPlan {
            num_exits,
            groups_per_stage,
            group_ratios,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Balanced plan counting down from `num_exits` groups in the last stage,
    /// one fewer per earlier stage, never below one.
    pub fn default_plan(num_exits: usize, num_stages: usize) -> Result<Self> {
        if num_exits == 0 || num_stages == 0 {
            return Err(Error::InvalidPlan(format!(
                "exits ({num_exits}) and stages ({num_stages}) must be positive"
            )));
        }
        if num_exits > num_stages {
            return Err(Error::InvalidPlan(format!(
                "{num_exits} exits cannot be formed from {num_stages} stages with a shared first stage"
            )));
        }
        let groups = (1..=num_stages)
            .map(|i| (num_exits + i).saturating_sub(num_stages).max(1))
            .collect();
        FissionPlan::new(num_exits, groups, None)
    }

    /// Two-exit variant names such as `Res1**4`, `Res*2*4`, `Res**34` or `WRN1*3`.
    ///
    /// The suffix has one character per stage: a digit equal to its one-based
    /// position marks a stage that carries a second group, `*` (or `1` in the
    /// first position) marks a shared stage.
    pub fn from_variant(name: &str) -> Result<Self> {
        let suffix = name.trim_start_matches(|c: char| c.is_ascii_alphabetic());
        if suffix.is_empty() {
            return Err(Error::InvalidPlan(format!("variant `{name}` has no stage code")));
        }
        let mut groups = Vec::with_capacity(suffix.len());
        for (pos, ch) in suffix.chars().enumerate() {
            let stage = pos + 1;
            let g = match ch {
                '*' => 1,
                '1' if stage == 1 => 1,
                d if d.is_ascii_digit() && d.to_digit(10) == Some(stage as u32) => 2,
                _ => {
                    return Err(Error::InvalidPlan(format!(
                        "variant `{name}`: character `{ch}` invalid at stage {stage}"
                    )))
                }
            };
            groups.push(g);
        }
        if groups.iter().all(|&g| g == 1) {
            return Err(Error::InvalidPlan(format!("variant `{name}` splits no stage")));
        }
        FissionPlan::new(2, groups, None)
    }

    /// Replaces the ratios of every stage that has exactly `ratios.len()` groups.
    pub fn with_uniform_split(mut self, ratios: &[f64]) -> Result<Self> {
        for (g, r) in self.groups_per_stage.iter().zip(self.group_ratios.iter_mut()) {
            if *g == ratios.len() {
                *r = ratios.to_vec();
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn num_exits(&self) -> usize {
        self.num_exits
    }

    pub fn num_stages(&self) -> usize {
        self.groups_per_stage.len()
    }

    pub fn groups_per_stage(&self) -> &[usize] {
        &self.groups_per_stage
    }

    pub fn groups(&self, stage: usize) -> usize {
        self.groups_per_stage[stage]
    }

    pub fn ratios(&self, stage: usize) -> &[f64] {
        &self.group_ratios[stage]
    }

    pub fn group_ratios(&self) -> &[Vec<f64>] {
        &self.group_ratios
    }

    pub fn is_monotone(&self) -> bool {
        self.groups_per_stage.windows(2).all(|w| w[0] <= w[1])
    }

    /// Group used by `exit` in `stage`: its own group when the stage has one,
    /// otherwise group 0.
    pub fn group_for(&self, stage: usize, exit: usize) -> Result<usize> {
        if stage >= self.num_stages() {
            return Err(Error::OutOfRange(format!(
                "stage {stage} of {}",
                self.num_stages()
            )));
        }
        if exit >= self.num_exits {
            return Err(Error::OutOfRange(format!("exit {exit} of {}", self.num_exits)));
        }
        Ok(if exit < self.groups_per_stage[stage] { exit } else { 0 })
    }

    /// Groups visited by `exit`, one per stage.
    pub fn exit_path(&self, exit: usize) -> Result<Vec<usize>> {
        (0..self.num_stages()).map(|s| self.group_for(s, exit)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_exits == 0 {
            return Err(Error::InvalidPlan("at least one exit required".into()));
        }
        if self.groups_per_stage.is_empty() {
            return Err(Error::InvalidPlan("at least one stage required".into()));
        }
        if self.groups_per_stage[0] != 1 {
            return Err(Error::InvalidPlan(format!(
                "first stage must be shared, got {} groups",
                self.groups_per_stage[0]
            )));
        }
        for (i, &g) in self.groups_per_stage.iter().enumerate() {
            if g == 0 || g > self.num_exits {
                return Err(Error::InvalidPlan(format!(
                    "stage {i} has {g} groups; must be in 1..={}",
                    self.num_exits
                )));
            }
        }
        if self.group_ratios.len() != self.groups_per_stage.len() {
            return Err(Error::InvalidRatios(format!(
                "{} ratio lists for {} stages",
                self.group_ratios.len(),
                self.groups_per_stage.len()
            )));
        }
        for (i, (r, &g)) in self.group_ratios.iter().zip(&self.groups_per_stage).enumerate() {
            if r.len() != g {
                return Err(Error::InvalidRatios(format!(
                    "stage {i}: {} ratios for {g} groups",
                    r.len()
                )));
            }
            check_ratios(r)?;
        }
        Ok(())
    }
}

fn check_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::InvalidRatios(format!("{ratios:?} contains a negative or non-finite value")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > RATIO_TOLERANCE {
        return Err(Error::InvalidRatios(format!("{ratios:?} sums to {sum}, not 1")));
    }
    Ok(())
}

pub fn default_plan(num_exits: usize, num_stages: usize) -> Result<FissionPlan> {
    FissionPlan::default_plan(num_exits, num_stages)
}

pub fn group_for(stage: usize, exit: usize, plan: &FissionPlan) -> Result<usize> {
    plan.group_for(stage, exit)
}

/// Splits a weight tensor into `num_groups` disjoint masks by one categorical
/// draw per position.
pub fn partition_stage<R: Rng + ?Sized>(
    weight_shape: &[usize],
    num_groups: usize,
    ratios: &[f64],
    rng: &mut R,
) -> Result<Vec<Mask>> {
    if num_groups == 0 {
        return Err(Error::InvalidPlan("num_groups must be at least 1".into()));
    }
    if ratios.len() != num_groups {
        return Err(Error::InvalidRatios(format!(
            "{} ratios for {num_groups} groups",
            ratios.len()
        )));
    }
    check_ratios(ratios)?;
    let numel: usize = weight_shape.iter().product();
    if num_groups == 1 {
        return Ok(vec![Mask::ones(numel)]);
    }
    let dist = WeightedIndex::new(ratios)
        .map_err(|e| Error::InvalidRatios(format!("{ratios:?}: {e}")))?;
    let draws: Vec<usize> = (0..numel).map(|_| dist.sample(rng)).collect();
    partition_from_draws(&draws, num_groups)
}

/// Masks from explicit zero-based group draws, one per weight position.
pub fn partition_from_draws(draws: &[usize], num_groups: usize) -> Result<Vec<Mask>> {
    if num_groups == 0 {
        return Err(Error::InvalidPlan("num_groups must be at least 1".into()));
    }
    if let Some(&bad) = draws.iter().find(|&&d| d >= num_groups) {
        return Err(Error::OutOfRange(format!("draw {bad} for {num_groups} groups")));
    }
    Ok((0..num_groups)
        .map(|g| Mask::from_bits(draws.iter().map(|&d| d == g).collect()))
        .collect())
}

/// Intersects every group mask with the pruning mask.
pub fn apply_pai(group_masks: &[Mask], pai_mask: &Mask) -> Result<Vec<Mask>> {
    if pai_mask.all_zero() && !pai_mask.is_empty() {
        log::warn!("pruning mask removes every weight of the stage; all groups will be empty");
    }
    group_masks.iter().map(|m| m.and(pai_mask)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_plan_countdown() {
        assert_eq!(default_plan(4, 4).unwrap().groups_per_stage(), &[1, 2, 3, 4]);
        assert_eq!(default_plan(1, 4).unwrap().groups_per_stage(), &[1, 1, 1, 1]);
        assert_eq!(default_plan(2, 4).unwrap().groups_per_stage(), &[1, 1, 1, 2]);
        assert_eq!(default_plan(3, 3).unwrap().groups_per_stage(), &[1, 2, 3]);
    }

    #[test]
    fn default_plan_rejects_bad_arguments() {
        assert!(default_plan(5, 4).is_err());
        assert!(default_plan(0, 4).is_err());
        assert!(default_plan(2, 0).is_err());
    }

    #[test]
    fn fall_back_rule() {
        let plan = default_plan(4, 4).unwrap();
        // third exit at the second stage falls back to the shared group
        assert_eq!(group_for(1, 2, &plan).unwrap(), 0);
        assert_eq!(group_for(3, 1, &plan).unwrap(), 1);
        for e in 0..4 {
            assert_eq!(group_for(0, e, &plan).unwrap(), 0);
        }
        assert!(group_for(4, 0, &plan).is_err());
        assert!(group_for(0, 4, &plan).is_err());
    }

    #[test]
    fn four_exit_paths() {
        let plan = default_plan(4, 4).unwrap();
        let paths: Vec<_> = (0..4).map(|e| plan.exit_path(e).unwrap()).collect();
        assert_eq!(
            paths,
            vec![vec![0, 0, 0, 0], vec![0, 1, 1, 1], vec![0, 0, 2, 2], vec![0, 0, 0, 3]]
        );
    }

    #[test]
    fn variant_names() {
        let g = |n: &str| FissionPlan::from_variant(n).unwrap().groups_per_stage().to_vec();
        assert_eq!(g("Res1**4"), vec![1, 1, 1, 2]);
        assert_eq!(g("Res*2*4"), vec![1, 2, 1, 2]);
        assert_eq!(g("Res**34"), vec![1, 1, 2, 2]);
        assert_eq!(g("WRN1*3"), vec![1, 1, 2]);
        assert!(FissionPlan::from_variant("Res1**5").is_err());
        assert!(FissionPlan::from_variant("Res****").is_err());
        assert!(FissionPlan::from_variant("Res").is_err());
    }

    #[test]
    fn plan_validation() {
        assert!(FissionPlan::new(2, vec![2, 2], None).is_err());
        assert!(FissionPlan::new(2, vec![1, 3], None).is_err());
        assert!(FissionPlan::new(2, vec![1, 2], Some(vec![vec![1.0], vec![0.3, 0.6]])).is_err());
        assert!(FissionPlan::new(2, vec![1, 2], Some(vec![vec![1.0], vec![0.25, 0.75]])).is_ok());
        assert!(FissionPlan::new(2, vec![1, 0], None).is_err());
    }

    #[test]
    fn forced_draws() {
        let masks = partition_from_draws(&[0, 1, 1, 0], 2).unwrap();
        assert_eq!(masks[0].to_u8(), vec![1, 0, 0, 1]);
        assert_eq!(masks[1].to_u8(), vec![0, 1, 1, 0]);
    }

    #[test]
    fn single_group_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let masks = partition_stage(&[3, 5, 2], 1, &[1.0], &mut rng).unwrap();
        assert_eq!(masks, vec![Mask::ones(30)]);
    }

    #[test]
    fn partition_rejects_bad_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(partition_stage(&[4], 2, &[0.5, 0.6], &mut rng).is_err());
        assert!(partition_stage(&[4], 0, &[], &mut rng).is_err());
        assert!(partition_stage(&[4], 2, &[1.0], &mut rng).is_err());
    }

    #[test]
    fn apply_pai_identity_and_zero() {
        let groups = partition_from_draws(&[0, 1, 1, 0], 2).unwrap();
        assert_eq!(apply_pai(&groups, &Mask::ones(4)).unwrap(), groups);
        let zeroed = apply_pai(&groups, &Mask::zeros(4)).unwrap();
        assert!(zeroed.iter().all(Mask::all_zero));
        assert!(apply_pai(&groups, &Mask::ones(3)).is_err());
    }
}
