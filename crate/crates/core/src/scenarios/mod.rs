//! Scenarios: a declared goal, its formal metric, and the downstream model
//! the goal is judged against, plus interventions layered on the policy rule.
//!
//! Each scenario names the goal in words, commits to one computable metric
//! with a tolerance, and fixes the population, outcome model, institution and
//! policy rule whose simulated trajectory decides whether the goal is met.

mod config;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{built_in_source, load_scenario, parse_scenario, BUILT_IN};

use crate::dynamics::{
    simulate, Decision, DecisionRule, DeltaMuMode, SimulationSettings, StepRecord, Trajectory,
};
use crate::error::{Error, Result};
use crate::metrics::{
    all_cell_pairs, individual_fairness_violations, unawareness_check, Audit, OutcomeModel,
};
use crate::optimize::{PolicyRule, RuleDriver};
use crate::policy::{
    acceptance_rate, institution_utility, threshold_policy_for_rate, InstitutionModel, Policy,
};
use crate::population::{GroupState, Population};
use crate::report::{fmt_f64, fmt_opt, Table};

/// Spread above this multiple of the perturbation size marks a scenario unreliable.
pub const UNRELIABLE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GoalMetric {
    DpGap,
    EoGap,
    EoddsGap,
    /// Expected score change of the named group.
    DeltaMu(String),
}

impl GoalMetric {
    /// The metric's value at a recorded step; `None` when it is undefined there.
    pub fn value(&self, rec: &StepRecord) -> Option<f64> {
        match self {
            GoalMetric::DpGap => rec.metrics.as_ref().map(|m| m.dp_gap),
            GoalMetric::EoGap => rec.metrics.as_ref().and_then(|m| m.eo_gap),
            GoalMetric::EoddsGap => rec.metrics.as_ref().and_then(|m| m.eodds_gap),
            GoalMetric::DeltaMu(g) => rec.delta_mu.get(g).copied(),
        }
    }
}

impl std::fmt::Display for GoalMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GoalMetric::DpGap => f.write_str("dp_gap"),
            GoalMetric::EoGap => f.write_str("eo_gap"),
            GoalMetric::EoddsGap => f.write_str("eodds_gap"),
            GoalMetric::DeltaMu(g) => write!(f, "delta_mu({g})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeclaredGoal {
    /// The goal in plain words.
    pub statement: String,
    /// How the statement was turned into the metric below.
    pub formalisation: String,
    pub metric: GoalMetric,
    pub tolerance: f64,
}

impl DeclaredGoal {
    /// Gaps must be within the tolerance of zero; a group's Δμ must not fall
    /// below `-tolerance`.
    pub fn achieved(&self, value: Option<f64>) -> bool {
        match (value, &self.metric) {
            (None, _) => false,
            (Some(v), GoalMetric::DeltaMu(_)) => v >= -self.tolerance,
            (Some(v), _) => v <= self.tolerance,
        }
    }

    pub fn achieved_at(&self, rec: &StepRecord) -> bool {
        self.achieved(self.metric.value(rec))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sunset {
    pub eps: f64,
    /// Consecutive steps the share must stay within `eps` of the quota.
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InterventionKind {
    /// Minimum share `q` of accepted mass drawn from `group`.
    Quota {
        group: String,
        q: f64,
        sunset: Option<Sunset>,
    },
    /// Moves fraction `s` of each non-top bin's mass up one bin before every step.
    PipelineInvestment { group: String, s: f64 },
    /// Scales the group's applicant proportion by `1 + α·r`, where `r` is its
    /// share of the previous step's accepted mass.
    RoleModelFeedback { group: String, alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionRule {
    pub name: String,
    pub kind: InterventionKind,
    pub active_from: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub regime: f64,
    pub stationarity_eps: f64,
    pub window: usize,
    /// Lipschitz constant for the individual-fairness audit, if requested.
    pub lipschitz: Option<f64>,
    pub delta_mu_mode: DeltaMuMode,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub version: Option<u32>,
    pub notes: Option<String>,
    pub declared_goal: DeclaredGoal,
    pub population: Population,
    /// Groups compared by pairwise metrics.
    pub pair: Option<(String, String)>,
    pub outcome: OutcomeModel,
    pub institution: InstitutionModel,
    pub policy_rule: PolicyRule,
    pub interventions: Vec<InterventionRule>,
    pub horizon: usize,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub resolution: f64,
}

impl ScenarioConfig {
    pub fn settings(&self) -> SimulationSettings {
        SimulationSettings {
            regime_tol: self.tolerances.regime,
            max_steps: self.tolerances.max_steps,
            delta_mu_mode: self.tolerances.delta_mu_mode,
            pair: self.pair.clone(),
        }
    }

    /// A copy keeping only the named interventions. `"none"` keeps none;
    /// otherwise names are joined with `+`.
    pub fn variant(&self, spec: &str) -> Result<ScenarioConfig> {
        let spec = spec.trim();
        let mut out = self.clone();
        if spec == "none" || spec.is_empty() {
            out.interventions.clear();
            return Ok(out);
        }
        let names: Vec<&str> = spec.split('+').map(str::trim).collect();
        for n in &names {
            if !self.interventions.iter().any(|iv| iv.name == *n) {
                return Err(Error::Key(format!(
                    "intervention `{n}` in variant `{spec}`"
                )));
            }
        }
        out.interventions
            .retain(|iv| names.contains(&iv.name.as_str()));
        Ok(out)
    }
}

#[derive(Debug, Clone, Default)]
struct QuotaState {
    streak: usize,
    retired: bool,
}

/// Applies a scenario's interventions around its policy rule, one step at a time.
#[derive(Debug, Clone)]
pub struct ScenarioDriver<'a> {
    cfg: &'a ScenarioConfig,
    base_proportions: Vec<f64>,
    quotas: Vec<QuotaState>,
    last_share: BTreeMap<String, f64>,
}

impl<'a> ScenarioDriver<'a> {
    pub fn new(cfg: &'a ScenarioConfig) -> Self {
        ScenarioDriver {
            cfg,
            base_proportions: cfg.population.groups.iter().map(|g| g.proportion).collect(),
            quotas: vec![QuotaState::default(); cfg.interventions.len()],
            last_share: BTreeMap::new(),
        }
    }

    fn role_model(&self, pop: &mut Population, active: &[(usize, &str, f64)]) -> Result<()> {
        let mut props = self.base_proportions.clone();
        for &(_, group, alpha) in active {
            let i = pop.group_index(group)?;
            let r = self.last_share.get(group).copied().unwrap_or(0.0);
            props[i] *= 1.0 + alpha * r;
        }
        let total: f64 = props.iter().sum();
        for (g, p) in pop.groups.iter_mut().zip(props) {
            g.proportion = p / total;
        }
        Ok(())
    }
}

/// Moves fraction `s` of every bin's mass except the top one up by one bin.
pub fn pipeline_shift(pmf: &[f64], s: f64) -> Vec<f64> {
    let n = pmf.len();
    let mut out = pmf.to_vec();
    for x in 0..n.saturating_sub(1) {
        let moved = s * pmf[x];
        out[x] -= moved;
        out[x + 1] += moved;
    }
    out
}

/// Raises `group`'s acceptance so that it supplies at least share `q` of all
/// accepted mass. Returns the adjusted policy, or `None` when it already does.
///
/// When even accepting the whole group falls short, the group is accepted in
/// full and every other group's rate is scaled down by a common factor.
pub fn enforce_quota(
    pop: &Population,
    policy: &Policy,
    group: &str,
    q: f64,
) -> Result<Option<Policy>> {
    let p_idx = pop.group_index(group)?;
    let protected = &pop.groups[p_idx];
    if protected.proportion <= 0.0 {
        return Err(Error::Infeasible(format!(
            "quota for `{group}` cannot be met: the group has zero mass"
        )));
    }
    let mut others = 0.0;
    let mut own = 0.0;
    for (i, g) in pop.groups.iter().enumerate() {
        let m = g.proportion * acceptance_rate(policy, g)?;
        if i == p_idx {
            own = m;
        } else {
            others += m;
        }
    }
    let total = own + others;
    if total <= 0.0 || own >= q * total || q <= 0.0 {
        return Ok(None);
    }
    let bins = pop.grid.len();
    let mut adjusted = policy.clone();
    let needed = if q < 1.0 {
        q * others / (1.0 - q) / protected.proportion
    } else {
        f64::INFINITY
    };
    if needed <= 1.0 {
        let rule = threshold_policy_for_rate(protected, needed)?;
        adjusted.set(group, rule.expand(bins));
        return Ok(Some(adjusted));
    }
    adjusted.set(group, vec![1.0; bins]);
    let allowed = if q < 1.0 {
        protected.proportion * (1.0 - q) / q
    } else {
        0.0
    };
    let factor = allowed / others;
    for (i, g) in pop.groups.iter().enumerate() {
        if i == p_idx {
            continue;
        }
        let rate = (acceptance_rate(policy, g)? * factor).clamp(0.0, 1.0);
        adjusted.set(
            g.label.clone(),
            threshold_policy_for_rate(g, rate)?.expand(bins),
        );
    }
    Ok(Some(adjusted))
}

/// Protected share of all accepted mass, or `None` when nobody is accepted.
fn accepted_share(pop: &Population, policy: &Policy, group: &str) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut own = 0.0;
    for g in &pop.groups {
        let m = g.proportion * acceptance_rate(policy, g)?;
        total += m;
        if g.label == group {
            own = m;
        }
    }
    Ok((total > 0.0).then(|| own / total))
}

impl DecisionRule for ScenarioDriver<'_> {
    fn decide(&mut self, step: usize, state: &Population) -> Result<Decision> {
        let cfg = self.cfg;
        let mut pop = state.clone();
        let mut active = Vec::new();

        let role_models: Vec<(usize, &str, f64)> = cfg
            .interventions
            .iter()
            .enumerate()
            .filter_map(|(i, iv)| match &iv.kind {
                InterventionKind::RoleModelFeedback { group, alpha } if step >= iv.active_from => {
                    Some((i, group.as_str(), *alpha))
                }
                _ => None,
            })
            .collect();
        if !role_models.is_empty() {
            self.role_model(&mut pop, &role_models)?;
            active.extend(
                role_models
                    .iter()
                    .map(|&(i, _, _)| cfg.interventions[i].name.clone()),
            );
        }

        // The last recorded state is evaluated but not advanced, so there is
        // no step for an investment to precede.
        if step < cfg.horizon {
            for iv in &cfg.interventions {
                if let InterventionKind::PipelineInvestment { group, s } = &iv.kind {
                    if step >= iv.active_from {
                        let i = pop.group_index(group)?;
                        pop.groups[i].pmf = pipeline_shift(&pop.groups[i].pmf, *s);
                        active.push(iv.name.clone());
                    }
                }
            }
        }

        let mut policy = cfg
            .policy_rule
            .policy_for(&pop, &cfg.outcome, &cfg.institution)?;

        for (i, iv) in cfg.interventions.iter().enumerate() {
            let InterventionKind::Quota { group, q, sunset } = &iv.kind else {
                continue;
            };
            if step < iv.active_from || self.quotas[i].retired {
                continue;
            }
            if let Some(adjusted) = enforce_quota(&pop, &policy, group, *q)? {
                policy = adjusted;
            }
            active.push(iv.name.clone());
            if let Some(sunset) = sunset {
                let share = accepted_share(&pop, &policy, group)?;
                let state = &mut self.quotas[i];
                match share {
                    Some(r) if (r - q).abs() <= sunset.eps => state.streak += 1,
                    _ => state.streak = 0,
                }
                if state.streak >= sunset.window {
                    state.retired = true;
                }
            }
        }

        for iv in &cfg.interventions {
            if let InterventionKind::RoleModelFeedback { group, .. } = &iv.kind {
                let share = accepted_share(&pop, &policy, group)?.unwrap_or(0.0);
                self.last_share.insert(group.clone(), share);
            }
        }

        Ok(Decision {
            population: pop,
            policy,
            active_interventions: active,
        })
    }
}

/// Simulates the scenario for its horizon with all interventions applied.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Trajectory> {
    let settings = cfg.settings();
    if cfg.interventions.is_empty() {
        let mut driver = RuleDriver {
            rule: &cfg.policy_rule,
            outcome: &cfg.outcome,
            inst: &cfg.institution,
        };
        return simulate(
            &cfg.population,
            &mut driver,
            &cfg.outcome,
            &cfg.institution,
            cfg.horizon,
            &settings,
        );
    }
    let mut driver = ScenarioDriver::new(cfg);
    simulate(
        &cfg.population,
        &mut driver,
        &cfg.outcome,
        &cfg.institution,
        cfg.horizon,
        &settings,
    )
}

/// Runs the scenario with its horizon replaced by `steps`.
pub fn run_scenario_for(cfg: &ScenarioConfig, steps: usize) -> Result<Trajectory> {
    let mut cfg = cfg.clone();
    cfg.horizon = steps;
    run_scenario(&cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutcome {
    pub variant: String,
    pub final_goal_value: Option<f64>,
    /// First step at which the goal holds.
    pub steps_to_goal: Option<usize>,
    /// A quota was retired and the goal held at every step from then on.
    pub persists_after_sunset: bool,
    /// Step at which the first quota stopped being applied, if any.
    pub sunset_step: Option<usize>,
    pub final_delta_mu: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<VariantOutcome>,
}

impl Comparison {
    pub fn row(&self, variant: &str) -> Option<&VariantOutcome> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec![
            "variant",
            "final_goal_value",
            "steps_to_goal",
            "persists_after_sunset",
            "final_delta_mu_per_group",
        ]);
        for r in &self.rows {
            let dm: Vec<String> = r
                .final_delta_mu
                .iter()
                .map(|(g, v)| format!("{g}={}", fmt_f64(*v)))
                .collect();
            t.push(vec![
                r.variant.clone(),
                fmt_opt(r.final_goal_value),
                r.steps_to_goal
                    .map_or_else(|| "not reached".to_string(), |s| s.to_string()),
                r.persists_after_sunset.to_string(),
                dm.join(";"),
            ]);
        }
        t
    }

    pub fn to_csv(&self) -> String {
        self.to_table().to_csv()
    }
}

fn quota_names(cfg: &ScenarioConfig) -> Vec<&str> {
    cfg.interventions
        .iter()
        .filter(|iv| matches!(iv.kind, InterventionKind::Quota { .. }))
        .map(|iv| iv.name.as_str())
        .collect()
}

/// Summarizes one trajectory against the scenario's declared goal.
pub fn evaluate_variant(cfg: &ScenarioConfig, variant: &str, traj: &Trajectory) -> VariantOutcome {
    let goal = &cfg.declared_goal;
    let quotas = quota_names(cfg);
    let sunset_step = traj.steps.windows(2).find_map(|w| {
        quotas
            .iter()
            .any(|q| w[0].is_active(q) && !w[1].is_active(q))
            .then_some(w[1].step)
    });
    let persists_after_sunset =
        sunset_step.is_some_and(|s| traj.steps[s..].iter().all(|r| goal.achieved_at(r)));
    let last = traj.last();
    VariantOutcome {
        variant: variant.to_string(),
        final_goal_value: last.and_then(|r| goal.metric.value(r)),
        steps_to_goal: traj
            .steps
            .iter()
            .find(|r| goal.achieved_at(r))
            .map(|r| r.step),
        persists_after_sunset,
        sunset_step,
        final_delta_mu: last.map(|r| r.delta_mu.clone()).unwrap_or_default(),
    }
}

/// Runs each variant from the same initial state and summarizes it.
pub fn compare_interventions(cfg: &ScenarioConfig, variants: &[&str]) -> Result<Comparison> {
    if variants.len() < 2 {
        return Err(Error::Domain(format!(
            "comparison needs at least two variants, got {}",
            variants.len()
        )));
    }
    let rows = variants
        .iter()
        .map(|v| {
            let vcfg = cfg.variant(v)?;
            let traj = run_scenario(&vcfg)?;
            Ok(evaluate_variant(&vcfg, v.trim(), &traj))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub eps: f64,
    /// Final goal value of each draw, in draw order.
    pub draws: Vec<Option<f64>>,
    pub min: f64,
    pub max: f64,
    pub spread: f64,
    /// Spread exceeds `UNRELIABLE_FACTOR · eps`.
    pub unreliable: bool,
}

impl SweepReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec!["draw", "final_goal_value"]);
        for (i, v) in self.draws.iter().enumerate() {
            t.push(vec![i.to_string(), fmt_opt(*v)]);
        }
        t
    }

    pub fn to_csv(&self) -> String {
        self.to_table().to_csv()
    }
}

/// Mixes `pmf` with a random pmf at weight `eps`, moving it by at most `eps`
/// in total variation.
fn perturb(pmf: &[f64], eps: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise: Vec<f64> = pmf.iter().map(|_| rng.random::<f64>()).collect();
    if eps == 0.0 {
        return pmf.to_vec();
    }
    let total: f64 = noise.iter().sum();
    let mixed: Vec<f64> = pmf
        .iter()
        .zip(&noise)
        .map(|(p, n)| (1.0 - eps) * p + eps * n / total)
        .collect();
    let s: f64 = mixed.iter().sum();
    mixed.into_iter().map(|m| m / s).collect()
}

/// Reruns the scenario on `n_draws` perturbed initial populations and
/// reports the spread of the final goal metric.
pub fn sensitivity_sweep(
    cfg: &ScenarioConfig,
    eps: f64,
    n_draws: usize,
    seed: u64,
) -> Result<SweepReport> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Domain(format!(
            "perturbation {eps} must lie in [0, 1]"
        )));
    }
    if n_draws == 0 {
        return Err(Error::Domain("a sweep needs at least one draw".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let mut dcfg = cfg.clone();
        for g in &mut dcfg.population.groups {
            g.pmf = perturb(&g.pmf, eps, &mut rng);
        }
        let traj = run_scenario(&dcfg)?;
        draws.push(traj.last().and_then(|r| cfg.declared_goal.metric.value(r)));
    }
    let defined: Vec<f64> = draws.iter().flatten().copied().collect();
    let (min, max) = if defined.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            defined.iter().copied().fold(f64::INFINITY, f64::min),
            defined.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let spread = max - min;
    Ok(SweepReport {
        eps,
        draws,
        min,
        max,
        spread,
        unreliable: spread.is_nan() || spread > UNRELIABLE_FACTOR * eps,
    })
}

/// The static metric suite on the initial population under the scenario's
/// policy rule, as a one-row table.
pub fn initial_metrics(cfg: &ScenarioConfig) -> Result<Table> {
    let pop = &cfg.population;
    let policy = cfg
        .policy_rule
        .policy_for(pop, &cfg.outcome, &cfg.institution)?;
    let (a, b) = cfg
        .pair
        .clone()
        .ok_or_else(|| Error::Precondition("metrics need at least two groups".into()))?;
    let report = Audit::new(pop, &cfg.outcome, &policy).report(&a, &b)?;
    let utility = institution_utility(&policy, pop, &cfg.outcome, &cfg.institution)?;
    let unaware = unawareness_check(&policy)?;
    let violations = match cfg.tolerances.lipschitz {
        Some(l) => {
            Some(individual_fairness_violations(pop, &policy, l, &all_cell_pairs(pop))?.len())
        }
        None => None,
    };
    let mut t = Table::new(vec![
        "group_a",
        "group_b",
        "dp_gap",
        "eo_gap",
        "eodds_gap",
        "acceptance_a",
        "acceptance_b",
        "tpr_a",
        "tpr_b",
        "fpr_a",
        "fpr_b",
        "utility",
        "unaware",
        "individual_violations",
    ]);
    t.push(vec![
        report.group_a.clone(),
        report.group_b.clone(),
        fmt_f64(report.dp_gap),
        fmt_opt(report.eo_gap),
        fmt_opt(report.eodds_gap),
        fmt_f64(report.rates_a.acceptance),
        fmt_f64(report.rates_b.acceptance),
        fmt_opt(report.rates_a.true_positive),
        fmt_opt(report.rates_b.true_positive),
        fmt_opt(report.rates_a.false_positive),
        fmt_opt(report.rates_b.false_positive),
        fmt_f64(utility),
        unaware.to_string(),
        violations.map(|v| v.to_string()).unwrap_or_default(),
    ]);
    Ok(t)
}

/// The group's pmf after one pipeline shift; exposed for checks on a single group.
pub fn invest(group: &GroupState, s: f64) -> GroupState {
    GroupState::new(
        group.label.clone(),
        group.proportion,
        pipeline_shift(&group.pmf, s),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{group_mean, ScoreGrid};

    #[test]
    fn pipeline_conserves_mass_and_raises_mean() {
        let grid = ScoreGrid::uniform(0.0, 1.0, 4).unwrap();
        let g = GroupState::new("W", 1.0, vec![0.4, 0.3, 0.2, 0.1]);
        let h = invest(&g, 0.25);
        assert!((h.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(group_mean(&h, &grid).unwrap() >= group_mean(&g, &grid).unwrap());
        assert_eq!(pipeline_shift(&[0.0, 0.0, 1.0], 0.5), vec![0.0, 0.0, 1.0]);
        assert_eq!(pipeline_shift(&[1.0, 0.0], 0.0), vec![1.0, 0.0]);
    }

    fn two(pw: f64, w: Vec<f64>, m: Vec<f64>) -> Population {
        let n = w.len();
        Population::new(
            ScoreGrid::uniform(0.0, 1.0, n).unwrap(),
            vec![
                GroupState::new("W", pw, w),
                GroupState::new("M", 1.0 - pw, m),
            ],
        )
    }

    #[test]
    fn quota_raises_share_exactly() {
        let pop = two(0.5, vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5]);
        let top = Policy::group_blind(["W", "M"], &[0.0, 0.0, 1.0]).unwrap();
        let adjusted = enforce_quota(&pop, &top, "W", 0.4).unwrap().unwrap();
        let share = accepted_share(&pop, &adjusted, "W").unwrap().unwrap();
        assert!((share - 0.4).abs() < 1e-12, "{share}");
        assert_eq!(adjusted.get("M").unwrap(), top.get("M").unwrap());
        // Already satisfied.
        assert!(enforce_quota(&pop, &top, "W", 0.2).unwrap().is_none());
    }

    #[test]
    fn quota_falls_back_to_scaling_others() {
        let pop = two(0.1, vec![0.5, 0.5], vec![0.5, 0.5]);
        let all = Policy::constant(["W", "M"], 2, 1.0).unwrap();
        let adjusted = enforce_quota(&pop, &all, "W", 0.4).unwrap().unwrap();
        let share = accepted_share(&pop, &adjusted, "W").unwrap().unwrap();
        assert!((share - 0.4).abs() < 1e-12, "{share}");
        assert_eq!(adjusted.get("W").unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn quota_on_empty_group_is_infeasible() {
        let pop = two(0.0, vec![0.5, 0.5], vec![0.5, 0.5]);
        let all = Policy::constant(["W", "M"], 2, 1.0).unwrap();
        assert!(matches!(
            enforce_quota(&pop, &all, "W", 0.4),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn goal_predicates() {
        let gap = DeclaredGoal {
            statement: String::new(),
            formalisation: String::new(),
            metric: GoalMetric::DpGap,
            tolerance: 0.05,
        };
        assert!(gap.achieved(Some(0.05)));
        assert!(!gap.achieved(Some(0.06)));
        assert!(!gap.achieved(None));
        let dm = DeclaredGoal {
            metric: GoalMetric::DeltaMu("B".into()),
            ..gap
        };
        assert!(dm.achieved(Some(3.0)));
        assert!(!dm.achieved(Some(-0.06)));
    }

    #[test]
    fn perturbation_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pmf = [0.1, 0.2, 0.3, 0.4];
        for _ in 0..100 {
            let p = perturb(&pmf, 0.01, &mut rng);
            assert!(crate::population::total_variation(&pmf, &p) <= 0.01 + 1e-12);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(perturb(&pmf, 0.0, &mut rng), pmf.to_vec());
    }
}
