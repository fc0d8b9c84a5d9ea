//! Sweeps over one experiment axis.

use std::path::Path;

use nfe_core::pai::PaiMethod;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment_on, ExperimentResult};
use crate::ingest::Splits;
use crate::spec::ExperimentSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepAxis {
    /// Pruning-at-init sparsity; a spec without a pruning method uses SNIP.
    Sparsity { values: Vec<f64> },
    /// Share `r` of the first group in every two-group stage (`r / 1 - r`).
    GroupingRatio { values: Vec<f64> },
    Pai { methods: Vec<PaiMethod> },
    Exits { values: Vec<usize> },
    Alpha { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ExperimentSpec,
    pub sweep: SweepAxis,
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// One labelled spec per axis value.
    pub fn expand(&self) -> Result<Vec<(String, ExperimentSpec)>> {
        let base = &self.base;
        let mut out = Vec::new();
        match &self.sweep {
            SweepAxis::Sparsity { values } => {
                for &s in values {
                    let mut spec = base.clone();
                    spec.pai.sparsity = s;
                    if spec.pai.method == PaiMethod::None {
                        spec.pai.method = PaiMethod::Snip;
                    }
                    spec.name = format!("{}-s{s}", base.name);
                    out.push((format!("S={s}"), spec));
                }
            }
            SweepAxis::GroupingRatio { values } => {
                for &r in values {
                    if !(r > 0.0 && r < 1.0) {
                        return Err(HarnessError::Spec(format!("grouping ratio {r} not in (0, 1)")));
                    }
                    let mut spec = base.clone();
                    spec.plan.ratios = Some(vec![r, 1.0 - r]);
                    spec.name = format!("{}-r{r}", base.name);
                    out.push((format!("{r}/{}", 1.0 - r), spec));
                }
            }
            SweepAxis::Pai { methods } => {
                for &m in methods {
                    let mut spec = base.clone();
                    spec.pai.method = m;
                    if m == PaiMethod::None {
                        spec.pai.sparsity = 0.0;
                    }
                    spec.name = format!("{}-{m}", base.name);
                    out.push((m.to_string(), spec));
                }
            }
            SweepAxis::Exits { values } => {
                for &n in values {
                    let mut spec = base.clone();
                    spec.plan.exits = n;
                    spec.plan.variant = None;
                    spec.plan.groups_per_stage = None;
                    spec.name = format!("{}-n{n}", base.name);
                    out.push((format!("N={n}"), spec));
                }
            }
            SweepAxis::Alpha { values } => {
                for &a in values {
                    let mut spec = base.clone();
                    spec.train.alpha = a;
                    spec.name = format!("{}-a{a}", base.name);
                    out.push((format!("alpha={a}"), spec));
                }
            }
        }
        if out.is_empty() {
            return Err(HarnessError::Spec("sweep has no values".into()));
        }
        for (_, s) in &out {
            s.validate()?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label: String,
    pub result: ExperimentResult,
}

pub fn run_sweep(sweep: &SweepSpec, splits: &Splits, out: Option<&Path>) -> Result<Vec<SweepEntry>> {
    sweep
        .expand()?
        .into_iter()
        .map(|(label, spec)| {
            Ok(SweepEntry {
                label,
                result: run_experiment_on(&spec, splits, out)?,
            })
        })
        .collect()
}
