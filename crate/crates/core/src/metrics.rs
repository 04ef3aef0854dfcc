//! Exact observational fairness metrics over a discrete population.
//!
//! The true label `Y` of an individual at bin `x` in group `k` is Bernoulli
//! with parameter `ρ_k(x)`, and the decision `F` is Bernoulli with parameter
//! `τ_k(x)`, independent of `Y` given `(k, x)`. Every rate below is therefore
//! an exact finite sum over bins; nothing is estimated from samples.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::population::{Population, ScoreGrid};

/// Tolerance for treating two acceptance vectors as equal.
pub const UNAWARENESS_TOL: f64 = 1e-12;
/// Slack added to the individual-fairness bound before reporting a violation.
pub const INDIVIDUAL_FAIRNESS_SLACK: f64 = 1e-12;

/// Success probabilities and the score movement of accepted individuals.
///
/// A success moves an accepted individual `steps_up` bins up and a failure
/// `steps_down` bins down, so `c₊ = steps_up·width` and `c₋ = −steps_down·width`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    rho: BTreeMap<String, Vec<f64>>,
    pub steps_up: usize,
    pub steps_down: usize,
}

impl OutcomeModel {
    pub fn new(
        rho: BTreeMap<String, Vec<f64>>,
        steps_up: usize,
        steps_down: usize,
    ) -> Result<Self> {
        for (label, r) in &rho {
            if let Some(bad) = r.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!(
                    "success probability {bad} for group `{label}` outside [0,1]"
                )));
            }
        }
        Ok(OutcomeModel {
            rho,
            steps_up,
            steps_down,
        })
    }

    /// One success curve shared by all listed groups. Panics if `rho` leaves [0,1].
    pub fn shared<'a>(
        labels: impl IntoIterator<Item = &'a str>,
        rho: Vec<f64>,
        steps_up: usize,
        steps_down: usize,
    ) -> Self {
        Self::new(
            labels
                .into_iter()
                .map(|l| (l.to_string(), rho.clone()))
                .collect(),
            steps_up,
            steps_down,
        )
        .expect("success probabilities must lie in [0,1]")
    }

    pub fn rho(&self, label: &str) -> Result<&[f64]> {
        self.rho
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Key(label.to_string()))
    }

    pub fn c_plus(&self, grid: &ScoreGrid) -> f64 {
        self.steps_up as f64 * grid.width()
    }

    pub fn c_minus(&self, grid: &ScoreGrid) -> f64 {
        -(self.steps_down as f64) * grid.width()
    }

    pub fn check_against(&self, pop: &Population) -> Result<()> {
        for g in &pop.groups {
            let r = self.rho(&g.label)?;
            if r.len() != pop.grid.len() {
                return Err(Error::Dimension(format!(
                    "rho for group `{}` has {} bins, grid has {}",
                    g.label,
                    r.len(),
                    pop.grid.len()
                )));
            }
        }
        Ok(())
    }
}

/// Per-group decision rates. A conditional rate is `None` when its
/// conditioning event has zero mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub acceptance: f64,
    pub true_positive: Option<f64>,
    pub false_positive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub group_a: String,
    pub group_b: String,
    pub dp_gap: f64,
    pub eo_gap: Option<f64>,
    pub eodds_gap: Option<f64>,
    pub rates_a: GroupRates,
    pub rates_b: GroupRates,
}

/// A (group, bin) cell of the population.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub group: String,
    pub bin: usize,
}

impl Cell {
    pub fn new(group: impl Into<String>, bin: usize) -> Self {
        Cell {
            group: group.into(),
            bin,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndividualViolation {
    pub first: Cell,
    pub second: Cell,
    /// Amount by which the decision distance exceeds the scaled score distance.
    pub slack: f64,
}

/// A population, outcome model and policy evaluated together.
#[derive(Debug, Clone, Copy)]
pub struct Audit<'a> {
    pub pop: &'a Population,
    pub outcome: &'a OutcomeModel,
    pub policy: &'a Policy,
}

struct Masses {
    accepted: f64,
    qualified: f64,
    accepted_qualified: f64,
    unqualified: f64,
    accepted_unqualified: f64,
}

impl<'a> Audit<'a> {
    pub fn new(pop: &'a Population, outcome: &'a OutcomeModel, policy: &'a Policy) -> Self {
        Audit {
            pop,
            outcome,
            policy,
        }
    }

    fn masses(&self, label: &str) -> Result<Masses> {
        let g = self.pop.group(label)?;
        let tau = self.policy.get(label)?;
        let rho = self.outcome.rho(label)?;
        if tau.len() != g.pmf.len() || rho.len() != g.pmf.len() {
            return Err(Error::Dimension(format!(
                "group `{label}`: pmf {}, policy {}, rho {} bins",
                g.pmf.len(),
                tau.len(),
                rho.len()
            )));
        }
        let mut m = Masses {
            accepted: 0.0,
            qualified: 0.0,
            accepted_qualified: 0.0,
            unqualified: 0.0,
            accepted_unqualified: 0.0,
        };
        for ((&p, &t), &r) in g.pmf.iter().zip(tau).zip(rho) {
            m.accepted += p * t;
            m.qualified += p * r;
            m.accepted_qualified += p * t * r;
            m.unqualified += p * (1.0 - r);
            m.accepted_unqualified += p * t * (1.0 - r);
        }
        Ok(m)
    }

    pub fn rates(&self, label: &str) -> Result<GroupRates> {
        let m = self.masses(label)?;
        let ratio = |num: f64, den: f64| (den > 0.0).then(|| (num / den).clamp(0.0, 1.0));
        Ok(GroupRates {
            acceptance: m.accepted.clamp(0.0, 1.0),
            true_positive: ratio(m.accepted_qualified, m.qualified),
            false_positive: ratio(m.accepted_unqualified, m.unqualified),
        })
    }

    fn tpr(&self, label: &str) -> Result<f64> {
        self.rates(label)?
            .true_positive
            .ok_or_else(|| Error::UndefinedConditional {
                group: label.to_string(),
                event: "Y = 1".into(),
            })
    }

    fn fpr(&self, label: &str) -> Result<f64> {
        self.rates(label)?
            .false_positive
            .ok_or_else(|| Error::UndefinedConditional {
                group: label.to_string(),
                event: "Y = 0".into(),
            })
    }

    /// `|p(F | A = a0) − p(F | A = a1)|`
    pub fn demographic_parity_gap(&self, a0: &str, a1: &str) -> Result<f64> {
        Ok((self.rates(a0)?.acceptance - self.rates(a1)?.acceptance).abs())
    }

    /// `|p(F | A = a0, Y = 1) − p(F | A = a1, Y = 1)|`
    pub fn equal_opportunity_gap(&self, a0: &str, a1: &str) -> Result<f64> {
        Ok((self.tpr(a0)? - self.tpr(a1)?).abs())
    }

    /// Largest of the true-positive and false-positive rate gaps.
    pub fn equalized_odds_gap(&self, a0: &str, a1: &str) -> Result<f64> {
        let tp = (self.tpr(a0)? - self.tpr(a1)?).abs();
        let fp = (self.fpr(a0)? - self.fpr(a1)?).abs();
        Ok(tp.max(fp))
    }

    /// Every rate and gap that is defined for the pair; undefined conditionals stay `None`.
    pub fn report(&self, a0: &str, a1: &str) -> Result<MetricReport> {
        let ra = self.rates(a0)?;
        let rb = self.rates(a1)?;
        let gap = |x: Option<f64>, y: Option<f64>| Some((x? - y?).abs());
        let eo = gap(ra.true_positive, rb.true_positive);
        let fp = gap(ra.false_positive, rb.false_positive);
        Ok(MetricReport {
            group_a: a0.to_string(),
            group_b: a1.to_string(),
            dp_gap: (ra.acceptance - rb.acceptance).abs(),
            eo_gap: eo,
            eodds_gap: eo.zip(fp).map(|(a, b)| a.max(b)),
            rates_a: ra,
            rates_b: rb,
        })
    }
}

/// Pairs of cells whose acceptance probabilities differ by more than
/// `lipschitz · |x₁ − x₂|`.
pub fn individual_fairness_violations(
    pop: &Population,
    policy: &Policy,
    lipschitz: f64,
    pairs: &[(Cell, Cell)],
) -> Result<Vec<IndividualViolation>> {
    if lipschitz <= 0.0 || !lipschitz.is_finite() {
        return Err(Error::Domain(format!(
            "Lipschitz constant {lipschitz} must be positive"
        )));
    }
    let scores = pop.grid.scores();
    let lookup = |c: &Cell| -> Result<(f64, f64)> {
        let tau = policy.get(&c.group)?;
        match (tau.get(c.bin), scores.get(c.bin)) {
            (Some(&t), Some(&x)) => Ok((t, x)),
            _ => Err(Error::Domain(format!(
                "bin {} out of range for group `{}`",
                c.bin, c.group
            ))),
        }
    };
    let mut out = Vec::new();
    for (c1, c2) in pairs {
        let (t1, x1) = lookup(c1)?;
        let (t2, x2) = lookup(c2)?;
        let excess = (t1 - t2).abs() - lipschitz * (x1 - x2).abs();
        if excess > INDIVIDUAL_FAIRNESS_SLACK {
            out.push(IndividualViolation {
                first: c1.clone(),
                second: c2.clone(),
                slack: excess,
            });
        }
    }
    Ok(out)
}

/// All unordered pairs of distinct cells over the population's groups and bins.
pub fn all_cell_pairs(pop: &Population) -> Vec<(Cell, Cell)> {
    let cells: Vec<Cell> = pop
        .groups
        .iter()
        .flat_map(|g| (0..pop.grid.len()).map(move |b| Cell::new(g.label.clone(), b)))
        .collect();
    let mut pairs = Vec::with_capacity(cells.len() * cells.len().saturating_sub(1) / 2);
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            pairs.push((cells[i].clone(), cells[j].clone()));
        }
    }
    pairs
}

/// True iff every group receives the same acceptance vector, i.e. the
/// decision is a function of the score alone.
pub fn unawareness_check(policy: &Policy) -> Result<bool> {
    if policy.len() < 2 {
        return Err(Error::Domain(
            "unawareness needs a policy over at least two groups".into(),
        ));
    }
    let mut groups = policy.groups();
    let (_, first) = groups.next().expect("checked above");
    Ok(groups.all(|(_, tau)| {
        tau.len() == first.len()
            && tau
                .iter()
                .zip(first)
                .all(|(a, b)| (a - b).abs() <= UNAWARENESS_TOL)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::GroupState;

    fn pop(pi0: Vec<f64>, pi1: Vec<f64>) -> Population {
        Population::new(
            ScoreGrid::new(vec![300.0, 400.0]).unwrap(),
            vec![
                GroupState::new("A", 0.5, pi0),
                GroupState::new("B", 0.5, pi1),
            ],
        )
    }

    #[test]
    fn parity_gap_examples() {
        let p = pop(vec![0.5, 0.5], vec![0.8, 0.2]);
        let out = OutcomeModel::shared(["A", "B"], vec![0.2, 0.8], 1, 1);
        let top = Policy::group_blind(["A", "B"], &[0.0, 1.0]).unwrap();
        let gap = Audit::new(&p, &out, &top)
            .demographic_parity_gap("A", "B")
            .unwrap();
        assert!((gap - 0.3).abs() < 1e-15);

        let all = Policy::constant(["A", "B"], 2, 1.0).unwrap();
        assert_eq!(
            Audit::new(&p, &out, &all)
                .demographic_parity_gap("A", "B")
                .unwrap(),
            0.0
        );

        let same = pop(vec![0.3, 0.7], vec![0.3, 0.7]);
        assert_eq!(
            Audit::new(&same, &out, &top)
                .demographic_parity_gap("A", "B")
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn opportunity_and_odds_examples() {
        // TPR_A = 0.5·0.8 / (0.5·0.2 + 0.5·0.8) = 0.8
        // TPR_B = 0.2·0.8 / (0.8·0.2 + 0.2·0.8) = 0.5
        let p = pop(vec![0.5, 0.5], vec![0.8, 0.2]);
        let out = OutcomeModel::shared(["A", "B"], vec![0.2, 0.8], 1, 1);
        let top = Policy::group_blind(["A", "B"], &[0.0, 1.0]).unwrap();
        let audit = Audit::new(&p, &out, &top);
        let eo = audit.equal_opportunity_gap("A", "B").unwrap();
        assert!((eo - 0.3).abs() < 1e-12);
        // FPR_A = 0.1/0.5 = 0.2, FPR_B = 0.04/0.64 = 0.0625, gap 0.1375 < 0.3
        let eodds = audit.equalized_odds_gap("A", "B").unwrap();
        assert!((eodds - 0.3).abs() < 1e-12);

        let all = Policy::constant(["A", "B"], 2, 1.0).unwrap();
        assert_eq!(
            Audit::new(&p, &out, &all)
                .equalized_odds_gap("A", "B")
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn empty_qualified_mass_names_the_group() {
        let p = pop(vec![0.5, 0.5], vec![0.8, 0.2]);
        let mut rho = BTreeMap::new();
        rho.insert("A".to_string(), vec![0.0, 0.0]);
        rho.insert("B".to_string(), vec![0.2, 0.8]);
        let out = OutcomeModel::new(rho, 1, 1).unwrap();
        let top = Policy::group_blind(["A", "B"], &[0.0, 1.0]).unwrap();
        let err = Audit::new(&p, &out, &top)
            .equal_opportunity_gap("A", "B")
            .unwrap_err();
        assert!(matches!(err, Error::UndefinedConditional { ref group, .. } if group == "A"));
        let report = Audit::new(&p, &out, &top).report("A", "B").unwrap();
        assert_eq!(report.eo_gap, None);
    }

    #[test]
    fn unknown_label() {
        let p = pop(vec![0.5, 0.5], vec![0.8, 0.2]);
        let out = OutcomeModel::shared(["A", "B"], vec![0.2, 0.8], 1, 1);
        let top = Policy::group_blind(["A", "B"], &[0.0, 1.0]).unwrap();
        assert!(matches!(
            Audit::new(&p, &out, &top).demographic_parity_gap("A", "C"),
            Err(Error::Key(_))
        ));
    }

    #[test]
    fn individual_fairness_examples() {
        let p = pop(vec![0.5, 0.5], vec![0.8, 0.2]);
        let mut acc = BTreeMap::new();
        acc.insert("A".to_string(), vec![0.0, 1.0]);
        acc.insert("B".to_string(), vec![0.0, 0.0]);
        let policy = Policy::new(acc).unwrap();
        let v = individual_fairness_violations(
            &p,
            &policy,
            0.001,
            &[(Cell::new("A", 1), Cell::new("B", 1))],
        )
        .unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0].slack - 1.0).abs() < 1e-15);

        let same = individual_fairness_violations(
            &p,
            &policy,
            0.001,
            &[
                (Cell::new("A", 1), Cell::new("A", 1)),
                (Cell::new("B", 0), Cell::new("B", 0)),
            ],
        )
        .unwrap();
        assert!(same.is_empty());
    }

    #[test]
    fn group_blind_lipschitz_policy_has_no_violations() {
        let grid = ScoreGrid::uniform(0.0, 0.25, 5).unwrap();
        let p = Population::new(
            grid.clone(),
            vec![
                GroupState::new("A", 0.5, vec![0.2; 5]),
                GroupState::new("B", 0.5, vec![0.2; 5]),
            ],
        );
        // τ(x) = x on scores normalized to [0, 1]
        let policy = Policy::group_blind(["A", "B"], grid.scores()).unwrap();
        let v = individual_fairness_violations(&p, &policy, 1.0, &all_cell_pairs(&p)).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn unawareness_examples() {
        let blind = Policy::group_blind(["A", "B"], &[0.0, 1.0]).unwrap();
        assert!(unawareness_check(&blind).unwrap());
        let mut acc = BTreeMap::new();
        acc.insert("A".to_string(), vec![0.0, 1.0]);
        acc.insert("B".to_string(), vec![0.5, 1.0]);
        assert!(!unawareness_check(&Policy::new(acc).unwrap()).unwrap());
        let constant = Policy::constant(["A", "B"], 2, 0.3).unwrap();
        assert!(unawareness_check(&constant).unwrap());
        let single = Policy::constant(["A"], 2, 0.3).unwrap();
        assert!(matches!(unawareness_check(&single), Err(Error::Domain(_))));
    }

    #[test]
    fn blind_policy_with_unequal_distributions_breaks_parity() {
        let p = pop(vec![0.5, 0.5], vec![0.8, 0.2]);
        let out = OutcomeModel::shared(["A", "B"], vec![0.2, 0.8], 1, 1);
        let blind = Policy::group_blind(["A", "B"], &[0.0, 1.0]).unwrap();
        assert!(unawareness_check(&blind).unwrap());
        assert!(
            Audit::new(&p, &out, &blind)
                .demographic_parity_gap("A", "B")
                .unwrap()
                > 0.0
        );
    }
}
