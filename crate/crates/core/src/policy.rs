//! Selection policies: per-group, per-bin acceptance probabilities.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::metrics::OutcomeModel;
use crate::population::{GroupState, Population};

/// Acceptance probability `τ_k(x)` for every group `k` and score bin `x`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Policy {
    acceptance: BTreeMap<String, Vec<f64>>,
}

impl Policy {
    pub fn new(acceptance: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        for (label, tau) in &acceptance {
            if let Some(bad) = tau.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(Error::Domain(format!(
                    "acceptance probability {bad} for group `{label}` outside [0,1]"
                )));
            }
        }
        Ok(Policy { acceptance })
    }

    /// The same acceptance vector for every listed group.
    pub fn group_blind<'a>(labels: impl IntoIterator<Item = &'a str>, tau: &[f64]) -> Result<Self> {
        Self::new(
            labels
                .into_iter()
                .map(|l| (l.to_string(), tau.to_vec()))
                .collect(),
        )
    }

    pub fn constant<'a>(
        labels: impl IntoIterator<Item = &'a str>,
        bins: usize,
        value: f64,
    ) -> Result<Self> {
        Self::group_blind(labels, &vec![value; bins])
    }

    pub fn get(&self, label: &str) -> Result<&[f64]> {
        self.acceptance
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Key(label.to_string()))
    }

    pub fn set(&mut self, label: impl Into<String>, tau: Vec<f64>) {
        self.acceptance.insert(label.into(), tau);
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.acceptance
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.acceptance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acceptance.is_empty()
    }

    /// Checks that the policy covers every group of `pop` with vectors of grid length.
    pub fn check_against(&self, pop: &Population) -> Result<()> {
        for g in &pop.groups {
            let tau = self.get(&g.label)?;
            if tau.len() != pop.grid.len() {
                return Err(Error::Dimension(format!(
                    "policy for group `{}` has {} bins, grid has {}",
                    g.label,
                    tau.len(),
                    pop.grid.len()
                )));
            }
        }
        Ok(())
    }
}

/// Accept every bin above `threshold_bin`, the threshold bin itself with
/// probability `boundary_acceptance`, and nothing below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRule {
    pub threshold_bin: usize,
    pub boundary_acceptance: f64,
}

impl ThresholdRule {
    pub fn expand(&self, bins: usize) -> Vec<f64> {
        (0..bins)
            .map(|i| match i.cmp(&self.threshold_bin) {
                std::cmp::Ordering::Less => 0.0,
                std::cmp::Ordering::Equal => self.boundary_acceptance,
                std::cmp::Ordering::Greater => 1.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RandomizedThresholdPolicy {
    pub rules: BTreeMap<String, ThresholdRule>,
}

impl RandomizedThresholdPolicy {
    pub fn expand(&self, bins: usize) -> Policy {
        Policy {
            acceptance: self
                .rules
                .iter()
                .map(|(k, r)| (k.clone(), r.expand(bins)))
                .collect(),
        }
    }
}

/// Utilities the institution assigns to an accepted success and an accepted failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstitutionModel {
    pub u_plus: f64,
    pub u_minus: f64,
}

impl InstitutionModel {
    pub fn new(u_plus: f64, u_minus: f64) -> Result<Self> {
        if !u_plus.is_finite() || !u_minus.is_finite() {
            return Err(Error::Domain("institution utilities must be finite".into()));
        }
        Ok(InstitutionModel { u_plus, u_minus })
    }

    /// Expected utility of accepting one individual with success probability `rho`.
    pub fn bin_utility(&self, rho: f64) -> f64 {
        self.u_plus * rho + self.u_minus * (1.0 - rho)
    }
}

/// `Σ_x π(x)·τ(x)` for the group's own acceptance vector.
pub fn acceptance_rate(policy: &Policy, group: &GroupState) -> Result<f64> {
    let tau = policy.get(&group.label)?;
    if tau.len() != group.pmf.len() {
        return Err(Error::Dimension(format!(
            "policy for `{}` has {} bins, pmf has {}",
            group.label,
            tau.len(),
            group.pmf.len()
        )));
    }
    Ok(group.pmf.iter().zip(tau).map(|(p, t)| p * t).sum())
}

const FILL_SNAP: f64 = 1e-12;

/// Fills `target` units of `weights` from the highest bin downwards.
///
/// When `target` exceeds the total weight every bin with weight is accepted.
pub(crate) fn fill_from_top(weights: &[f64], target: f64) -> ThresholdRule {
    let n = weights.len();
    let mut cum = 0.0;
    for i in (0..n).rev() {
        let w = weights[i];
        if i == 0 || cum + w >= target {
            // Rounding in the running sum must not leave a bin that should be
            // taken whole at 0.999...
            let boundary = if w > 0.0 && cum + w - target <= FILL_SNAP {
                1.0
            } else if w > 0.0 {
                ((target - cum) / w).clamp(0.0, 1.0)
            } else if target > cum {
                1.0
            } else {
                0.0
            };
            return ThresholdRule {
                threshold_bin: i,
                boundary_acceptance: boundary,
            };
        }
        cum += w;
    }
    unreachable!("weights must be non-empty")
}

/// The randomized threshold rule whose acceptance rate on `group` is exactly `target_rate`.
pub fn threshold_policy_for_rate(group: &GroupState, target_rate: f64) -> Result<ThresholdRule> {
    if !(0.0..=1.0).contains(&target_rate) {
        return Err(Error::Domain(format!(
            "target acceptance rate {target_rate} outside [0,1]"
        )));
    }
    if group.pmf.is_empty() {
        return Err(Error::Dimension(format!(
            "group `{}` has an empty pmf",
            group.label
        )));
    }
    Ok(fill_from_top(&group.pmf, target_rate))
}

/// `Σ_k g_k Σ_x π_k(x)·τ_k(x)·[u₊·ρ_k(x) + u₋·(1−ρ_k(x))]`.
pub fn institution_utility(
    policy: &Policy,
    pop: &Population,
    outcome: &OutcomeModel,
    inst: &InstitutionModel,
) -> Result<f64> {
    let mut total = 0.0;
    for g in &pop.groups {
        total +=
            g.proportion * group_utility(policy.get(&g.label)?, g, outcome.rho(&g.label)?, inst)?;
    }
    Ok(total)
}

/// Utility contributed by one group per unit of group proportion.
pub(crate) fn group_utility(
    tau: &[f64],
    group: &GroupState,
    rho: &[f64],
    inst: &InstitutionModel,
) -> Result<f64> {
    if tau.len() != group.pmf.len() || rho.len() != group.pmf.len() {
        return Err(Error::Dimension(format!(
            "group `{}`: pmf {}, policy {}, rho {} bins",
            group.label,
            group.pmf.len(),
            tau.len(),
            rho.len()
        )));
    }
    Ok(group
        .pmf
        .iter()
        .zip(tau)
        .zip(rho)
        .map(|((p, t), r)| p * t * inst.bin_utility(*r))
        .sum())
}
