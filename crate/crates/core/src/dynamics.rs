//! One-step feedback dynamics of selection policies on score distributions.
//!
//! An accepted individual at bin `x` succeeds with probability `ρ(x)` and
//! moves `steps_up` bins up, or fails and moves `steps_down` bins down;
//! moves are clamped at the grid edges. Rejected individuals keep their score.

use std::collections::BTreeMap;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{Audit, MetricReport, OutcomeModel};
use crate::policy::{acceptance_rate, institution_utility, InstitutionModel, Policy};
use crate::population::{
    group_mean, total_variation, validate_population, GroupState, Population, ScoreGrid,
};
use crate::report::{fmt_f64, fmt_opt, Table};

pub const DEFAULT_MAX_STEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimeLabel {
    Improvement,
    Stagnation,
    Decline,
}

impl fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegimeLabel::Improvement => "improvement",
            RegimeLabel::Stagnation => "stagnation",
            RegimeLabel::Decline => "decline",
        })
    }
}

/// How the group-level expected change averages over individuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeltaMuMode {
    /// Average over the whole group; unselected individuals contribute zero.
    #[default]
    GroupWide,
    /// Average over selected individuals only.
    SelectedOnly,
}

/// `Δ(x) = c₊ρ(x) + c₋(1−ρ(x))` for bin `bin` of group `label`.
pub fn expected_delta(
    bin: usize,
    label: &str,
    outcome: &OutcomeModel,
    grid: &ScoreGrid,
) -> Result<f64> {
    let rho = outcome.rho(label)?;
    let r = *rho
        .get(bin)
        .ok_or_else(|| Error::Domain(format!("bin {bin} out of range for group `{label}`")))?;
    Ok(delta(r, outcome, grid))
}

fn delta(rho: f64, outcome: &OutcomeModel, grid: &ScoreGrid) -> f64 {
    grid.width() * (outcome.steps_up as f64 * rho - outcome.steps_down as f64 * (1.0 - rho))
}

/// `Δμ = Σ_x π(x)·τ(x)·Δ(x)`.
pub fn group_delta_mu(
    group: &GroupState,
    policy: &Policy,
    outcome: &OutcomeModel,
    grid: &ScoreGrid,
) -> Result<f64> {
    group_delta_mu_with(DeltaMuMode::GroupWide, group, policy, outcome, grid)
}

pub fn group_delta_mu_with(
    mode: DeltaMuMode,
    group: &GroupState,
    policy: &Policy,
    outcome: &OutcomeModel,
    grid: &ScoreGrid,
) -> Result<f64> {
    let tau = policy.get(&group.label)?;
    let rho = outcome.rho(&group.label)?;
    if tau.len() != group.pmf.len() || rho.len() != group.pmf.len() || grid.len() != group.pmf.len()
    {
        return Err(Error::Dimension(format!(
            "group `{}`: pmf {}, policy {}, rho {}, grid {} bins",
            group.label,
            group.pmf.len(),
            tau.len(),
            rho.len(),
            grid.len()
        )));
    }
    let total: f64 = group
        .pmf
        .iter()
        .zip(tau)
        .zip(rho)
        .map(|((p, t), r)| p * t * delta(*r, outcome, grid))
        .sum();
    Ok(match mode {
        DeltaMuMode::GroupWide => total,
        DeltaMuMode::SelectedOnly => {
            let accepted: f64 = group.pmf.iter().zip(tau).map(|(p, t)| p * t).sum();
            if accepted > 0.0 {
                total / accepted
            } else {
                0.0
            }
        }
    })
}

pub fn classify_regime(delta_mu: f64, tol: f64) -> Result<RegimeLabel> {
    if !delta_mu.is_finite() {
        return Err(Error::Domain(format!("Δμ = {delta_mu} is not finite")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain(format!(
            "regime tolerance {tol} must be positive"
        )));
    }
    Ok(if delta_mu > tol {
        RegimeLabel::Improvement
    } else if delta_mu < -tol {
        RegimeLabel::Decline
    } else {
        RegimeLabel::Stagnation
    })
}

fn check_inputs(pop: &Population, policy: &Policy, outcome: &OutcomeModel) -> Result<()> {
    validate_population(pop).into_result()?;
    policy.check_against(pop)?;
    outcome.check_against(pop)
}

/// Applies one round of decisions and returns the next population.
pub fn step(pop: &Population, policy: &Policy, outcome: &OutcomeModel) -> Result<Population> {
    check_inputs(pop, policy, outcome)?;
    let n = pop.grid.len();
    let groups = pop
        .groups
        .iter()
        .map(|g| {
            let tau = policy.get(&g.label)?;
            let rho = outcome.rho(&g.label)?;
            let mut next = vec![0.0; n];
            for x in 0..n {
                let mass = g.pmf[x];
                let accepted = mass * tau[x];
                next[x] += mass - accepted;
                next[(x + outcome.steps_up).min(n - 1)] += accepted * rho[x];
                next[x.saturating_sub(outcome.steps_down)] += accepted * (1.0 - rho[x]);
            }
            Ok(GroupState::new(g.label.clone(), g.proportion, next))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Population::new(pop.grid.clone(), groups))
}

/// What a decision rule produces for one step: the population it acted on
/// (after any pre-step adjustments) and the policy it applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub population: Population,
    pub policy: Policy,
    pub active_interventions: Vec<String>,
}

/// Chooses the policy applied at each step of a simulation.
pub trait DecisionRule {
    fn decide(&mut self, step: usize, pop: &Population) -> Result<Decision>;
}

impl DecisionRule for Policy {
    fn decide(&mut self, _step: usize, pop: &Population) -> Result<Decision> {
        Ok(Decision {
            population: pop.clone(),
            policy: self.clone(),
            active_interventions: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSettings {
    /// Width of the stagnation band around zero.
    pub regime_tol: f64,
    pub max_steps: usize,
    pub delta_mu_mode: DeltaMuMode,
    /// Groups compared by the pairwise metrics; defaults to the first two groups.
    pub pair: Option<(String, String)>,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            regime_tol: 1e-9,
            max_steps: DEFAULT_MAX_STEPS,
            delta_mu_mode: DeltaMuMode::GroupWide,
            pair: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub population: Population,
    pub policy: Policy,
    pub metrics: Option<MetricReport>,
    pub delta_mu: BTreeMap<String, f64>,
    pub regimes: BTreeMap<String, RegimeLabel>,
    pub acceptance: BTreeMap<String, f64>,
    /// Share of all accepted mass that comes from each group; empty when nobody is accepted.
    pub accepted_share: BTreeMap<String, f64>,
    pub active_interventions: Vec<String>,
    pub utility: f64,
}

impl StepRecord {
    pub fn intervention_active(&self) -> bool {
        !self.active_interventions.is_empty()
    }

    pub fn is_active(&self, name: &str) -> bool {
        self.active_interventions.iter().any(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec![
            "step",
            "group",
            "mean_score",
            "acceptance_rate",
            "delta_mu",
            "regime",
            "dp_gap",
            "eo_gap",
            "eodds_gap",
            "utility",
            "intervention_active",
        ]);
        for rec in &self.steps {
            for g in &rec.population.groups {
                let mean = group_mean(g, &rec.population.grid).unwrap_or(f64::NAN);
                let m = rec.metrics.as_ref();
                t.push(vec![
                    rec.step.to_string(),
                    g.label.clone(),
                    fmt_f64(mean),
                    fmt_opt(rec.acceptance.get(&g.label).copied()),
                    fmt_opt(rec.delta_mu.get(&g.label).copied()),
                    rec.regimes
                        .get(&g.label)
                        .map(|r| r.to_string())
                        .unwrap_or_default(),
                    fmt_opt(m.map(|m| m.dp_gap)),
                    fmt_opt(m.and_then(|m| m.eo_gap)),
                    fmt_opt(m.and_then(|m| m.eodds_gap)),
                    fmt_f64(rec.utility),
                    rec.intervention_active().to_string(),
                ]);
            }
        }
        t
    }

    pub fn to_csv(&self) -> String {
        self.to_table().to_csv()
    }
}

/// Evaluates one decision against the population it was applied to.
pub fn record_step(
    step: usize,
    decision: Decision,
    outcome: &OutcomeModel,
    inst: &InstitutionModel,
    settings: &SimulationSettings,
) -> Result<StepRecord> {
    let Decision {
        population,
        policy,
        active_interventions,
    } = decision;
    check_inputs(&population, &policy, outcome)?;
    let mut delta_mu = BTreeMap::new();
    let mut regimes = BTreeMap::new();
    let mut acceptance = BTreeMap::new();
    for g in &population.groups {
        let dm = group_delta_mu_with(
            settings.delta_mu_mode,
            g,
            &policy,
            outcome,
            &population.grid,
        )?;
        regimes.insert(g.label.clone(), classify_regime(dm, settings.regime_tol)?);
        delta_mu.insert(g.label.clone(), dm);
        acceptance.insert(g.label.clone(), acceptance_rate(&policy, g)?);
    }
    let accepted_share = accepted_shares(&population, &acceptance);
    let pair = match &settings.pair {
        Some((a, b)) => Some((a.clone(), b.clone())),
        None if population.groups.len() >= 2 => Some((
            population.groups[0].label.clone(),
            population.groups[1].label.clone(),
        )),
        None => None,
    };
    let metrics = match pair {
        Some((a, b)) => Some(Audit::new(&population, outcome, &policy).report(&a, &b)?),
        None => None,
    };
    let utility = institution_utility(&policy, &population, outcome, inst)?;
    Ok(StepRecord {
        step,
        population,
        policy,
        metrics,
        delta_mu,
        regimes,
        acceptance,
        accepted_share,
        active_interventions,
        utility,
    })
}

/// Share of total accepted mass contributed by each group.
pub fn accepted_shares(
    pop: &Population,
    acceptance: &BTreeMap<String, f64>,
) -> BTreeMap<String, f64> {
    let weighted: Vec<(String, f64)> = pop
        .groups
        .iter()
        .map(|g| {
            (
                g.label.clone(),
                g.proportion * acceptance.get(&g.label).copied().unwrap_or(0.0),
            )
        })
        .collect();
    let total: f64 = weighted.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return BTreeMap::new();
    }
    weighted.into_iter().map(|(l, w)| (l, w / total)).collect()
}

/// Runs `horizon` steps and records `horizon + 1` states, the last one
/// evaluated but not advanced.
pub fn simulate(
    pop: &Population,
    rule: &mut dyn DecisionRule,
    outcome: &OutcomeModel,
    inst: &InstitutionModel,
    horizon: usize,
    settings: &SimulationSettings,
) -> Result<Trajectory> {
    if horizon > settings.max_steps {
        return Err(Error::Domain(format!(
            "horizon {horizon} exceeds the configured maximum of {}",
            settings.max_steps
        )));
    }
    check_inputs(
        pop,
        &Policy::constant(pop.labels(), pop.grid.len(), 0.0)?,
        outcome,
    )?;
    let mut traj = Trajectory {
        steps: Vec::with_capacity(horizon + 1),
    };
    let mut state = pop.clone();
    for t in 0..=horizon {
        let decision = rule.decide(t, &state).map_err(|e| match e {
            Error::Infeasible(message) => Error::InfeasibleAtStep { step: t, message },
            other => other,
        })?;
        let record = record_step(t, decision, outcome, inst, settings)?;
        if t < horizon {
            state = step(&record.population, &record.policy, outcome)?;
        }
        traj.steps.push(record);
    }
    Ok(traj)
}

/// True iff every group pmf moved less than `eps` in total variation over
/// each of the last `window` transitions.
pub fn is_stationary(traj: &Trajectory, window: usize, eps: f64) -> Result<bool> {
    if window == 0 {
        return Err(Error::Domain("stationarity window must be positive".into()));
    }
    if traj.len() < window + 1 {
        return Err(Error::Domain(format!(
            "window {window} needs at least {} recorded states, trajectory has {}",
            window + 1,
            traj.len()
        )));
    }
    let tail = &traj.steps[traj.len() - window - 1..];
    Ok(tail.windows(2).all(|w| {
        w[0].population
            .groups
            .iter()
            .zip(&w[1].population.groups)
            .all(|(a, b)| total_variation(&a.pmf, &b.pmf) < eps)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloGroup {
    pub acceptance_rate: f64,
    pub acceptance_se: f64,
    pub delta_mu: f64,
    pub delta_mu_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub samples: usize,
    pub groups: BTreeMap<String, MonteCarloGroup>,
}

/// Sampling oracle for the exact engine: draws `n` individuals per group
/// (bin ~ π, acceptance ~ τ, success ~ ρ) and reports empirical acceptance
/// rates and group-wide score changes with their standard errors.
pub fn monte_carlo_validate(
    pop: &Population,
    policy: &Policy,
    outcome: &OutcomeModel,
    n: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if n == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    check_inputs(pop, policy, outcome)?;
    let c_plus = outcome.c_plus(&pop.grid);
    let c_minus = outcome.c_minus(&pop.grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = BTreeMap::new();
    for g in &pop.groups {
        let tau = policy.get(&g.label)?;
        let rho = outcome.rho(&g.label)?;
        let bins = WeightedIndex::new(&g.pmf)
            .map_err(|e| Error::Domain(format!("group `{}`: {e}", g.label)))?;
        let mut accepted = 0usize;
        let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
        for _ in 0..n {
            let x = bins.sample(&mut rng);
            if rng.random::<f64>() < tau[x] {
                accepted += 1;
                let change = if rng.random::<f64>() < rho[x] {
                    c_plus
                } else {
                    c_minus
                };
                sum += change;
                sum_sq += change * change;
            }
        }
        let nf = n as f64;
        let rate = accepted as f64 / nf;
        let mean = sum / nf;
        let (rate_se, mean_se) = if n > 1 {
            let var_rate = (rate * (1.0 - rate)) * nf / (nf - 1.0);
            let var_change = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
            ((var_rate / nf).sqrt(), (var_change / nf).sqrt())
        } else {
            (0.0, 0.0)
        };
        groups.insert(
            g.label.clone(),
            MonteCarloGroup {
                acceptance_rate: rate,
                acceptance_se: rate_se,
                delta_mu: mean,
                delta_mu_se: mean_se,
            },
        );
    }
    Ok(MonteCarloReport { samples: n, groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> ScoreGrid {
        ScoreGrid::uniform(0.0, 100.0, n).unwrap()
    }

    fn single(pmf: Vec<f64>) -> Population {
        let n = pmf.len();
        Population::new(grid(n), vec![GroupState::new("A", 1.0, pmf)])
    }

    #[test]
    fn expected_delta_examples() {
        let g = grid(3);
        let out = OutcomeModel::shared(["A"], vec![1.0, 0.0, 0.7], 1, 1);
        assert_eq!(expected_delta(0, "A", &out, &g).unwrap(), out.c_plus(&g));
        assert_eq!(expected_delta(1, "A", &out, &g).unwrap(), out.c_minus(&g));
        assert!((expected_delta(2, "A", &out, &g).unwrap() - 40.0).abs() < 1e-12);
        assert!(expected_delta(3, "A", &out, &g).is_err());
    }

    #[test]
    fn delta_mu_examples() {
        let pop = single(vec![0.5, 0.5]);
        let g = &pop.groups[0];
        let out = OutcomeModel::shared(["A"], vec![0.3, 0.9], 1, 1);
        let none = Policy::constant(["A"], 2, 0.0).unwrap();
        let all = Policy::constant(["A"], 2, 1.0).unwrap();
        assert_eq!(group_delta_mu(g, &none, &out, &pop.grid).unwrap(), 0.0);
        let still = OutcomeModel::shared(["A"], vec![0.3, 0.9], 0, 0);
        assert_eq!(group_delta_mu(g, &all, &still, &pop.grid).unwrap(), 0.0);
        // 0.5·(100·0.3 − 100·0.7) + 0.5·(100·0.9 − 100·0.1) = 0.5·(−40) + 0.5·80
        assert!((group_delta_mu(g, &all, &out, &pop.grid).unwrap() - 20.0).abs() < 1e-12);

        let top = Policy::group_blind(["A"], &[0.0, 1.0]).unwrap();
        let sel = group_delta_mu_with(DeltaMuMode::SelectedOnly, g, &top, &out, &pop.grid).unwrap();
        assert!((sel - 80.0).abs() < 1e-12);
    }

    #[test]
    fn regimes() {
        assert_eq!(
            classify_regime(0.5, 1e-9).unwrap(),
            RegimeLabel::Improvement
        );
        assert_eq!(classify_regime(0.0, 1e-3).unwrap(), RegimeLabel::Stagnation);
        assert_eq!(
            classify_regime(-1e-12, 1e-9).unwrap(),
            RegimeLabel::Stagnation
        );
        assert_eq!(classify_regime(-0.1, 1e-9).unwrap(), RegimeLabel::Decline);
        assert!(classify_regime(f64::NAN, 1e-9).is_err());
        assert!(classify_regime(0.0, 0.0).is_err());
    }

    #[test]
    fn step_examples() {
        let pop = single(vec![0.2, 0.5, 0.3]);
        let out = OutcomeModel::shared(["A"], vec![0.1, 0.6, 0.9], 1, 1);
        let none = Policy::constant(["A"], 3, 0.0).unwrap();
        assert_eq!(step(&pop, &none, &out).unwrap(), pop);
        let all = Policy::constant(["A"], 3, 1.0).unwrap();
        let still = OutcomeModel::shared(["A"], vec![0.1, 0.6, 0.9], 0, 0);
        assert_eq!(step(&pop, &all, &still).unwrap(), pop);

        let mid = single(vec![0.0, 1.0, 0.0]);
        let next = step(&mid, &all, &out).unwrap();
        let expected = [0.4, 0.0, 0.6];
        for (a, b) in next.groups[0].pmf.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn step_rejects_invalid_population() {
        let pop = single(vec![0.6, 0.6]);
        let out = OutcomeModel::shared(["A"], vec![0.5, 0.5], 1, 1);
        let all = Policy::constant(["A"], 2, 1.0).unwrap();
        assert!(step(&pop, &all, &out).is_err());
    }

    #[test]
    fn simulate_zero_horizon_and_null_policy() {
        let pop = single(vec![0.2, 0.5, 0.3]);
        let out = OutcomeModel::shared(["A"], vec![0.1, 0.6, 0.9], 1, 1);
        let inst = InstitutionModel::new(1.0, -1.0).unwrap();
        let mut none = Policy::constant(["A"], 3, 0.0).unwrap();
        let s = SimulationSettings::default();
        let t0 = simulate(&pop, &mut none, &out, &inst, 0, &s).unwrap();
        assert_eq!(t0.len(), 1);
        assert_eq!(t0.steps[0].population, pop);

        let t = simulate(&pop, &mut none, &out, &inst, 12, &s).unwrap();
        assert_eq!(t.len(), 13);
        for rec in &t.steps {
            assert_eq!(rec.population, pop);
            assert_eq!(rec.regimes["A"], RegimeLabel::Stagnation);
        }
        assert!(is_stationary(&t, 12, 1e-15).unwrap());
        assert!(is_stationary(&t, 13, 1e-15).is_err());
    }

    #[test]
    fn horizon_limit() {
        let pop = single(vec![0.5, 0.5]);
        let out = OutcomeModel::shared(["A"], vec![0.5, 0.5], 1, 1);
        let inst = InstitutionModel::new(1.0, -1.0).unwrap();
        let mut none = Policy::constant(["A"], 2, 0.0).unwrap();
        let s = SimulationSettings {
            max_steps: 3,
            ..Default::default()
        };
        assert!(simulate(&pop, &mut none, &out, &inst, 4, &s).is_err());
    }

    #[test]
    fn top_bin_absorbs() {
        let pop = single(vec![0.0, 0.0, 1.0]);
        let out = OutcomeModel::shared(["A"], vec![0.2, 0.5, 0.7], 1, 0);
        let inst = InstitutionModel::new(1.0, -1.0).unwrap();
        let mut all = Policy::constant(["A"], 3, 1.0).unwrap();
        let t = simulate(
            &pop,
            &mut all,
            &out,
            &inst,
            3,
            &SimulationSettings::default(),
        )
        .unwrap();
        assert!(is_stationary(&t, 1, 1e-12).unwrap());
        assert!(is_stationary(&t, 3, 1e-12).unwrap());
    }

    #[test]
    fn recent_jump_is_not_stationary() {
        let out = OutcomeModel::shared(["A"], vec![1.0, 1.0], 1, 1);
        let inst = InstitutionModel::new(1.0, -1.0).unwrap();
        let mut all = Policy::constant(["A"], 2, 1.0).unwrap();
        // Half the mass moves up in the only transition: TV = 0.5.
        let t = simulate(
            &single(vec![0.5, 0.5]),
            &mut all,
            &out,
            &inst,
            1,
            &SimulationSettings::default(),
        )
        .unwrap();
        assert!(!is_stationary(&t, 1, 0.01).unwrap());
    }

    #[test]
    fn monte_carlo_trivial_policies() {
        let pop = single(vec![0.3, 0.7]);
        let out = OutcomeModel::shared(["A"], vec![0.3, 0.9], 1, 1);
        let all = Policy::constant(["A"], 2, 1.0).unwrap();
        let none = Policy::constant(["A"], 2, 0.0).unwrap();
        for seed in [0, 1, 42] {
            let r = monte_carlo_validate(&pop, &all, &out, 1000, seed).unwrap();
            assert_eq!(r.groups["A"].acceptance_rate, 1.0);
            let r = monte_carlo_validate(&pop, &none, &out, 1000, seed).unwrap();
            assert_eq!(r.groups["A"].delta_mu, 0.0);
        }
        let a = monte_carlo_validate(&pop, &all, &out, 500, 9).unwrap();
        let b = monte_carlo_validate(&pop, &all, &out, 500, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_matches_exact_delta_mu() {
        let pop = single(vec![0.5, 0.5]);
        let out = OutcomeModel::shared(["A"], vec![0.3, 0.9], 1, 1);
        let all = Policy::constant(["A"], 2, 1.0).unwrap();
        let r = monte_carlo_validate(&pop, &all, &out, 1_000_000, 2024).unwrap();
        let g = r.groups["A"];
        assert!((g.delta_mu - 20.0).abs() <= 4.0 * g.delta_mu_se, "{g:?}");
    }
}
