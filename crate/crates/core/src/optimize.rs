//! Policy construction for the institution.
//!
//! Constrained searches run over randomized threshold policies: for a common
//! rate `β` on the grid `{0, r, 2r, …, 1}` each group gets the threshold rule
//! that realizes `β` exactly, and the utility-maximizing `β` wins.

use std::fmt;
use std::str::FromStr;

use crate::dynamics::{group_delta_mu, Decision, DecisionRule};
use crate::error::{Error, Result};
use crate::metrics::{Audit, OutcomeModel};
use crate::policy::{fill_from_top, group_utility, institution_utility, InstitutionModel, Policy};
use crate::population::{GroupState, Population};

pub const DEFAULT_RESOLUTION: f64 = 0.01;
/// Largest constraint gap accepted from a constructed policy.
pub const CONSTRAINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FairnessConstraint {
    DemographicParity,
    EqualOpportunity,
}

impl fmt::Display for FairnessConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FairnessConstraint::DemographicParity => "dp",
            FairnessConstraint::EqualOpportunity => "eo",
        })
    }
}

impl FromStr for FairnessConstraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(FairnessConstraint::DemographicParity),
            "eo" => Ok(FairnessConstraint::EqualOpportunity),
            other => Err(Error::Domain(format!(
                "unknown constraint `{other}` (expected dp or eo)"
            ))),
        }
    }
}

/// The rate grid `{0, r, 2r, …}` capped at 1, always ending at exactly 1.
pub fn rate_grid(resolution: f64) -> Result<Vec<f64>> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::Domain(format!(
            "resolution {resolution} must lie in (0, 1]"
        )));
    }
    let steps = (1.0 / resolution + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=steps)
        .map(|k| (k as f64 * resolution).min(1.0))
        .collect();
    if *grid.last().expect("non-empty") < 1.0 - 1e-12 {
        grid.push(1.0);
    } else {
        *grid.last_mut().expect("non-empty") = 1.0;
    }
    Ok(grid)
}

/// Accepts exactly the bins with strictly positive expected utility.
pub fn max_utility_policy(
    pop: &Population,
    outcome: &OutcomeModel,
    inst: &InstitutionModel,
) -> Result<Policy> {
    outcome.check_against(pop)?;
    let mut policy = Policy::default();
    for g in &pop.groups {
        let tau = outcome
            .rho(&g.label)?
            .iter()
            .map(|&r| if inst.bin_utility(r) > 0.0 { 1.0 } else { 0.0 })
            .collect();
        policy.set(g.label.clone(), tau);
    }
    Ok(policy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedPolicy {
    pub policy: Policy,
    pub utility: f64,
    /// The common acceptance rate (DP) or true-positive rate (EO).
    pub rate: f64,
}

/// Threshold rule giving `group` a true-positive rate of exactly `beta`.
fn tpr_threshold(group: &GroupState, rho: &[f64], beta: f64) -> Vec<f64> {
    let weights: Vec<f64> = group.pmf.iter().zip(rho).map(|(p, r)| p * r).collect();
    let qualified: f64 = weights.iter().sum();
    fill_from_top(&weights, beta * qualified).expand(group.pmf.len())
}

fn rate_threshold(group: &GroupState, beta: f64) -> Vec<f64> {
    fill_from_top(&group.pmf, beta).expand(group.pmf.len())
}

fn two_groups(pop: &Population) -> Result<(&GroupState, &GroupState)> {
    match pop.groups.as_slice() {
        [a, b] => Ok((a, b)),
        gs => Err(Error::Precondition(format!(
            "constrained policies need exactly two groups, population has {}",
            gs.len()
        ))),
    }
}

/// Utility-maximizing policy satisfying demographic parity or equal
/// opportunity, found by scanning the common rate on the resolution grid.
/// Ties go to the larger rate.
pub fn constrained_policy(
    pop: &Population,
    outcome: &OutcomeModel,
    inst: &InstitutionModel,
    constraint: FairnessConstraint,
    resolution: f64,
) -> Result<ConstrainedPolicy> {
    let (a, b) = two_groups(pop)?;
    outcome.check_against(pop)?;
    if constraint == FairnessConstraint::EqualOpportunity {
        for g in [a, b] {
            let rho = outcome.rho(&g.label)?;
            if rho.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Precondition(format!(
                    "equal opportunity search needs nondecreasing success probabilities; group `{}` violates this",
                    g.label
                )));
            }
            let qualified: f64 = g.pmf.iter().zip(rho).map(|(p, r)| p * r).sum();
            if qualified <= 0.0 {
                return Err(Error::UndefinedConditional {
                    group: g.label.clone(),
                    event: "Y = 1".into(),
                });
            }
        }
    }

    let mut best: Option<ConstrainedPolicy> = None;
    for beta in rate_grid(resolution)? {
        let mut policy = Policy::default();
        for g in [a, b] {
            let tau = match constraint {
                FairnessConstraint::DemographicParity => rate_threshold(g, beta),
                FairnessConstraint::EqualOpportunity => {
                    tpr_threshold(g, outcome.rho(&g.label)?, beta)
                }
            };
            policy.set(g.label.clone(), tau);
        }
        let audit = Audit::new(pop, outcome, &policy);
        let gap = match constraint {
            FairnessConstraint::DemographicParity => {
                audit.demographic_parity_gap(&a.label, &b.label)?
            }
            FairnessConstraint::EqualOpportunity => {
                audit.equal_opportunity_gap(&a.label, &b.label)?
            }
        };
        if gap > CONSTRAINT_TOL {
            continue;
        }
        let utility = institution_utility(&policy, pop, outcome, inst)?;
        if best.as_ref().is_none_or(|b| utility >= b.utility) {
            best = Some(ConstrainedPolicy {
                policy,
                utility,
                rate: beta,
            });
        }
    }
    best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no rate on the grid satisfies the {constraint} constraint"
        ))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeOptimalPolicy {
    pub policy: Policy,
    pub utility: f64,
    pub delta_mu: f64,
    /// Acceptance rate chosen for each group, in population order.
    pub rates: Vec<(String, f64)>,
}

/// Maximizes the target group's expected score change subject to
/// institution utility of at least `utility_floor`.
///
/// Non-target groups only affect utility, so each takes its best-utility rate
/// on the grid (lower rate on ties); the target's rate is then scanned with
/// ties broken toward higher utility, then lower rate.
pub fn outcome_optimal_policy(
    pop: &Population,
    outcome: &OutcomeModel,
    inst: &InstitutionModel,
    target: &str,
    utility_floor: f64,
    resolution: f64,
) -> Result<OutcomeOptimalPolicy> {
    let target_idx = pop.group_index(target)?;
    outcome.check_against(pop)?;
    let grid = rate_grid(resolution)?;

    let mut policy = Policy::default();
    let mut rates = vec![(String::new(), 0.0); pop.groups.len()];
    let mut others_utility = 0.0;
    for (i, g) in pop.groups.iter().enumerate() {
        if i == target_idx {
            continue;
        }
        let rho = outcome.rho(&g.label)?;
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for &beta in &grid {
            let tau = rate_threshold(g, beta);
            let u = g.proportion * group_utility(&tau, g, rho, inst)?;
            if best.as_ref().is_none_or(|(bu, _, _)| u > *bu) {
                best = Some((u, beta, tau));
            }
        }
        let (u, beta, tau) = best.expect("grid is non-empty");
        others_utility += u;
        rates[i] = (g.label.clone(), beta);
        policy.set(g.label.clone(), tau);
    }

    let g = &pop.groups[target_idx];
    let rho = outcome.rho(&g.label)?;
    let mut best: Option<(f64, f64, f64, Vec<f64>)> = None;
    let mut max_utility = f64::NEG_INFINITY;
    for &beta in &grid {
        let tau = rate_threshold(g, beta);
        let utility = others_utility + g.proportion * group_utility(&tau, g, rho, inst)?;
        max_utility = max_utility.max(utility);
        if utility < utility_floor {
            continue;
        }
        policy.set(g.label.clone(), tau.clone());
        let dm = group_delta_mu(g, &policy, outcome, &pop.grid)?;
        let better = match &best {
            None => true,
            Some((bdm, bu, _, _)) => dm > *bdm || (dm == *bdm && utility > *bu),
        };
        if better {
            best = Some((dm, utility, beta, tau));
        }
    }
    let (delta_mu, _, beta, tau) = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "utility floor {utility_floor} is unattainable; the best achievable utility is {max_utility}"
        ))
    })?;
    policy.set(g.label.clone(), tau);
    rates[target_idx] = (g.label.clone(), beta);
    let utility = institution_utility(&policy, pop, outcome, inst)?;
    Ok(OutcomeOptimalPolicy {
        policy,
        utility,
        delta_mu,
        rates,
    })
}

/// How the institution chooses its policy at each step.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyRule {
    Fixed(Policy),
    MaxUtility,
    Constrained {
        constraint: FairnessConstraint,
        resolution: f64,
    },
    OutcomeOptimal {
        target: String,
        utility_floor: f64,
        resolution: f64,
    },
}

impl PolicyRule {
    pub fn policy_for(
        &self,
        pop: &Population,
        outcome: &OutcomeModel,
        inst: &InstitutionModel,
    ) -> Result<Policy> {
        match self {
            PolicyRule::Fixed(p) => Ok(p.clone()),
            PolicyRule::MaxUtility => max_utility_policy(pop, outcome, inst),
            PolicyRule::Constrained {
                constraint,
                resolution,
            } => Ok(constrained_policy(pop, outcome, inst, *constraint, *resolution)?.policy),
            PolicyRule::OutcomeOptimal {
                target,
                utility_floor,
                resolution,
            } => Ok(outcome_optimal_policy(
                pop,
                outcome,
                inst,
                target,
                *utility_floor,
                *resolution,
            )?
            .policy),
        }
    }
}

/// Re-evaluates a [`PolicyRule`] against the current population at every step.
#[derive(Debug, Clone)]
pub struct RuleDriver<'a> {
    pub rule: &'a PolicyRule,
    pub outcome: &'a OutcomeModel,
    pub inst: &'a InstitutionModel,
}

impl DecisionRule for RuleDriver<'_> {
    fn decide(&mut self, _step: usize, pop: &Population) -> Result<Decision> {
        Ok(Decision {
            population: pop.clone(),
            policy: self.rule.policy_for(pop, self.outcome, self.inst)?,
            active_interventions: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::ScoreGrid;

    fn two_group_pop(pi0: Vec<f64>, pi1: Vec<f64>) -> Population {
        let n = pi0.len();
        Population::new(
            ScoreGrid::uniform(0.0, 1.0, n).unwrap(),
            vec![
                GroupState::new("A", 0.5, pi0),
                GroupState::new("B", 0.5, pi1),
            ],
        )
    }

    #[test]
    fn grid_shape() {
        let g = rate_grid(0.25).unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = rate_grid(0.3).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert_eq!(rate_grid(0.01).unwrap().len(), 101);
        assert!(rate_grid(0.0).is_err());
        assert!(rate_grid(1.5).is_err());
    }

    #[test]
    fn max_utility_extremes() {
        let pop = two_group_pop(vec![0.5, 0.5], vec![0.2, 0.8]);
        let out = OutcomeModel::shared(["A", "B"], vec![0.1, 0.9], 1, 1);
        let p = max_utility_policy(&pop, &out, &InstitutionModel::new(1.0, 0.0).unwrap()).unwrap();
        assert_eq!(p.get("A").unwrap(), &[1.0, 1.0]);
        let p =
            max_utility_policy(&pop, &out, &InstitutionModel::new(-1.0, -0.5).unwrap()).unwrap();
        assert_eq!(p.get("B").unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn max_utility_matches_exhaustive_search() {
        let pop = two_group_pop(vec![0.5, 0.5], vec![0.2, 0.8]);
        let out = OutcomeModel::shared(["A", "B"], vec![0.7, 0.9], 1, 1);
        let inst = InstitutionModel::new(1.0, -4.0).unwrap();
        let p = max_utility_policy(&pop, &out, &inst).unwrap();
        assert_eq!(p.get("A").unwrap(), &[0.0, 1.0]);

        let mut best = (f64::NEG_INFINITY, vec![]);
        for mask in 0..4u32 {
            let tau: Vec<f64> = (0..2).map(|i| ((mask >> i) & 1) as f64).collect();
            let cand = Policy::group_blind(["A", "B"], &tau).unwrap();
            let u = institution_utility(&cand, &pop, &out, &inst).unwrap();
            if u > best.0 {
                best = (u, tau);
            }
        }
        assert_eq!(best.1, vec![0.0, 1.0]);
    }

    #[test]
    fn identical_groups_have_zero_gap() {
        let pop = two_group_pop(vec![0.3, 0.3, 0.4], vec![0.3, 0.3, 0.4]);
        let out = OutcomeModel::shared(["A", "B"], vec![0.2, 0.6, 0.9], 1, 1);
        let inst = InstitutionModel::new(1.0, -1.0).unwrap();
        let c = constrained_policy(
            &pop,
            &out,
            &inst,
            FairnessConstraint::DemographicParity,
            0.01,
        )
        .unwrap();
        assert_eq!(c.policy.get("A").unwrap(), c.policy.get("B").unwrap());
        // Best threshold policy accepts the two upper bins: β = 0.7.
        assert!((c.rate - 0.7).abs() < 1e-12);
    }

    #[test]
    fn dp_constraint_holds() {
        let pop = two_group_pop(vec![0.5, 0.5], vec![0.8, 0.2]);
        let out = OutcomeModel::shared(["A", "B"], vec![0.3, 0.95], 1, 1);
        let inst = InstitutionModel::new(1.0, -2.0).unwrap();
        let c = constrained_policy(
            &pop,
            &out,
            &inst,
            FairnessConstraint::DemographicParity,
            0.01,
        )
        .unwrap();
        let gap = Audit::new(&pop, &out, &c.policy)
            .demographic_parity_gap("A", "B")
            .unwrap();
        assert!(gap <= 1e-9);
    }

    #[test]
    fn eo_preconditions() {
        let pop = two_group_pop(vec![0.5, 0.5], vec![0.8, 0.2]);
        let inst = InstitutionModel::new(1.0, -1.0).unwrap();
        let decreasing = OutcomeModel::shared(["A", "B"], vec![0.9, 0.3], 1, 1);
        assert!(matches!(
            constrained_policy(
                &pop,
                &decreasing,
                &inst,
                FairnessConstraint::EqualOpportunity,
                0.01
            ),
            Err(Error::Precondition(_))
        ));
        let hopeless = OutcomeModel::shared(["A", "B"], vec![0.0, 0.0], 1, 1);
        assert!(constrained_policy(
            &pop,
            &hopeless,
            &inst,
            FairnessConstraint::EqualOpportunity,
            0.01
        )
        .is_err());

        let three = Population::new(
            ScoreGrid::uniform(0.0, 1.0, 2).unwrap(),
            vec![
                GroupState::new("A", 0.3, vec![0.5, 0.5]),
                GroupState::new("B", 0.3, vec![0.5, 0.5]),
                GroupState::new("C", 0.4, vec![0.5, 0.5]),
            ],
        );
        let out = OutcomeModel::shared(["A", "B", "C"], vec![0.2, 0.8], 1, 1);
        assert!(matches!(
            constrained_policy(
                &three,
                &out,
                &inst,
                FairnessConstraint::DemographicParity,
                0.01
            ),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn outcome_optimal_sign_cases() {
        let pop = two_group_pop(vec![0.25, 0.25, 0.5], vec![0.4, 0.4, 0.2]);
        let inst = InstitutionModel::new(1.0, -1.0).unwrap();
        // ρ < 0.5 with equal steps: every Δ(x) < 0.
        let harmful = OutcomeModel::shared(["A", "B"], vec![0.1, 0.3, 0.45], 1, 1);
        let r =
            outcome_optimal_policy(&pop, &harmful, &inst, "B", f64::NEG_INFINITY, 0.01).unwrap();
        assert_eq!(r.policy.get("B").unwrap(), &[0.0, 0.0, 0.0]);
        assert_eq!(r.delta_mu, 0.0);

        let helpful = OutcomeModel::shared(["A", "B"], vec![0.6, 0.7, 0.9], 1, 1);
        let r =
            outcome_optimal_policy(&pop, &helpful, &inst, "B", f64::NEG_INFINITY, 0.01).unwrap();
        assert_eq!(r.policy.get("B").unwrap(), &[1.0, 1.0, 1.0]);

        assert!(matches!(
            outcome_optimal_policy(&pop, &helpful, &inst, "Z", 0.0, 0.01),
            Err(Error::Key(_))
        ));
    }

    #[test]
    fn outcome_optimal_reports_unreachable_floor() {
        let pop = two_group_pop(vec![0.5, 0.5], vec![0.5, 0.5]);
        let inst = InstitutionModel::new(1.0, -1.0).unwrap();
        let out = OutcomeModel::shared(["A", "B"], vec![0.2, 0.8], 1, 1);
        // Best achievable: both groups accept the top bin, 0.5·0.3 + 0.5·0.3 = 0.3.
        let err = outcome_optimal_policy(&pop, &out, &inst, "B", 0.5, 0.01).unwrap_err();
        assert!(
            matches!(err, Error::Infeasible(ref m) if m.contains("0.3")),
            "{err}"
        );
    }

    #[test]
    fn rule_driver_reoptimizes() {
        let pop = two_group_pop(vec![0.5, 0.5], vec![0.8, 0.2]);
        let out = OutcomeModel::shared(["A", "B"], vec![0.3, 0.95], 1, 1);
        let inst = InstitutionModel::new(1.0, -2.0).unwrap();
        let rule = PolicyRule::MaxUtility;
        let mut driver = RuleDriver {
            rule: &rule,
            outcome: &out,
            inst: &inst,
        };
        let d = driver.decide(0, &pop).unwrap();
        assert_eq!(d.policy, max_utility_policy(&pop, &out, &inst).unwrap());
    }
}
