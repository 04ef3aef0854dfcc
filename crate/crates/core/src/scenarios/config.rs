//! Scenario file format (TOML) and its validation into [`ScenarioConfig`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{
    DeclaredGoal, GoalMetric, InterventionKind, InterventionRule, ScenarioConfig, Sunset,
    Tolerances,
};
use crate::dynamics::{DeltaMuMode, DEFAULT_MAX_STEPS};
use crate::error::{Error, Result};
use crate::metrics::OutcomeModel;
use crate::optimize::{FairnessConstraint, PolicyRule, DEFAULT_RESOLUTION};
use crate::policy::{InstitutionModel, Policy};
use crate::population::{validate_population, GroupState, Population, ScoreGrid};

const LENDING_LIU: &str = include_str!("../../scenarios/lending_liu.toml");
const BOARDS_QUOTA: &str = include_str!("../../scenarios/boards_quota.toml");

pub const BUILT_IN: [&str; 2] = ["lending_liu", "boards_quota"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    version: Option<u32>,
    #[serde(default)]
    notes: Option<String>,
    declared_goal: GoalFile,
    population: PopulationFile,
    outcome: OutcomeFile,
    institution: InstitutionFile,
    policy_rule: PolicyRuleFile,
    #[serde(default)]
    interventions: Vec<InterventionFile>,
    horizon: usize,
    #[serde(default)]
    tolerances: TolerancesFile,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_resolution")]
    resolution: f64,
}

fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoalFile {
    statement: String,
    formalisation: String,
    metric: String,
    tolerance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PopulationFile {
    #[serde(default)]
    scores: Option<Vec<f64>>,
    #[serde(default)]
    grid: Option<GridFile>,
    #[serde(default)]
    pair: Option<(String, String)>,
    groups: Vec<GroupFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    start: f64,
    width: f64,
    bins: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupFile {
    label: String,
    proportion: f64,
    pmf: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutcomeFile {
    steps_up: usize,
    steps_down: usize,
    #[serde(default)]
    rho: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(default)]
    shared_rho: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstitutionFile {
    u_plus: f64,
    u_minus: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyRuleFile {
    kind: String,
    #[serde(default)]
    constraint: Option<String>,
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    utility_floor: Option<f64>,
    #[serde(default)]
    acceptance: Option<BTreeMap<String, Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterventionFile {
    kind: String,
    #[serde(default)]
    name: Option<String>,
    group: String,
    #[serde(default)]
    active_from: usize,
    #[serde(default)]
    q: Option<f64>,
    #[serde(default)]
    sunset: Option<SunsetFile>,
    #[serde(default)]
    s: Option<f64>,
    #[serde(default)]
    alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SunsetFile {
    eps: f64,
    window: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TolerancesFile {
    #[serde(default = "default_regime_tol")]
    regime: f64,
    #[serde(default = "default_stationarity_eps")]
    stationarity_eps: f64,
    #[serde(default = "default_window")]
    window: usize,
    #[serde(default)]
    lipschitz: Option<f64>,
    #[serde(default)]
    delta_mu_mode: Option<String>,
    #[serde(default)]
    max_steps: Option<usize>,
}

fn default_regime_tol() -> f64 {
    1e-9
}

fn default_stationarity_eps() -> f64 {
    1e-9
}

fn default_window() -> usize {
    5
}

impl Default for TolerancesFile {
    fn default() -> Self {
        TolerancesFile {
            regime: default_regime_tol(),
            stationarity_eps: default_stationarity_eps(),
            window: default_window(),
            lipschitz: None,
            delta_mu_mode: None,
            max_steps: None,
        }
    }
}

/// Loads a built-in scenario by name, or a scenario file by path.
pub fn load_scenario(name_or_path: &str) -> Result<ScenarioConfig> {
    match name_or_path {
        "lending_liu" => parse_scenario(LENDING_LIU),
        "boards_quota" => parse_scenario(BOARDS_QUOTA),
        path => {
            let text = std::fs::read_to_string(Path::new(path)).map_err(|e| Error::Io {
                path: path.to_string(),
                message: format!("cannot read scenario file: {e}"),
            })?;
            parse_scenario(&text).map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse {
                    path: path.to_string(),
                    message,
                },
                other => other,
            })
        }
    }
}

/// The shipped text of a built-in scenario.
pub fn built_in_source(name: &str) -> Option<&'static str> {
    match name {
        "lending_liu" => Some(LENDING_LIU),
        "boards_quota" => Some(BOARDS_QUOTA),
        _ => None,
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: "<scenario>".into(),
        message: e.to_string(),
    })?;
    build(file)
}

fn finite(path: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::validation(path, format!("{x} is not finite")))
    }
}

fn unit(path: &str, name: &str, x: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(Error::validation(path, format!("{name} out of [0,1]")))
    }
}

fn positive(path: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::validation(path, format!("{x} must be positive")))
    }
}

fn build(file: ScenarioFile) -> Result<ScenarioConfig> {
    let population = build_population(&file.population)?;
    let labels: Vec<String> = population.labels().map(str::to_string).collect();
    let has = |l: &str| labels.iter().any(|x| x == l);

    let pair = match &file.population.pair {
        Some((a, b)) => {
            for l in [a, b] {
                if !has(l) {
                    return Err(Error::validation(
                        "population.pair",
                        format!("unknown group `{l}`"),
                    ));
                }
            }
            if a == b {
                return Err(Error::validation("population.pair", "groups must differ"));
            }
            Some((a.clone(), b.clone()))
        }
        None if labels.len() >= 2 => Some((labels[0].clone(), labels[1].clone())),
        None => None,
    };

    let metric = parse_goal_metric(&file.declared_goal.metric)?;
    match &metric {
        GoalMetric::DeltaMu(g) if !has(g) => {
            return Err(Error::validation(
                "declared_goal.metric",
                format!("unknown group `{g}`"),
            ))
        }
        GoalMetric::DeltaMu(_) => {}
        _ if pair.is_none() => {
            return Err(Error::validation(
                "declared_goal.metric",
                "pairwise metrics need at least two groups",
            ))
        }
        _ => {}
    }
    let declared_goal = DeclaredGoal {
        statement: file.declared_goal.statement,
        formalisation: file.declared_goal.formalisation,
        metric,
        tolerance: {
            let t = finite("declared_goal.tolerance", file.declared_goal.tolerance)?;
            if t < 0.0 {
                return Err(Error::validation(
                    "declared_goal.tolerance",
                    "must be non-negative",
                ));
            }
            t
        },
    };

    let outcome = build_outcome(&file.outcome, &labels, population.grid.len())?;
    let institution = InstitutionModel::new(
        finite("institution.u_plus", file.institution.u_plus)?,
        finite("institution.u_minus", file.institution.u_minus)?,
    )?;
    let resolution = file.resolution;
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::validation("resolution", "must lie in (0, 1]"));
    }
    let policy_rule = build_policy_rule(
        &file.policy_rule,
        &labels,
        population.grid.len(),
        resolution,
    )?;

    let mut interventions = Vec::with_capacity(file.interventions.len());
    for (i, iv) in file.interventions.iter().enumerate() {
        let rule = build_intervention(i, iv, &labels)?;
        if interventions
            .iter()
            .any(|r: &InterventionRule| r.name == rule.name)
        {
            return Err(Error::validation(
                format!("interventions[{i}].name"),
                format!("duplicate intervention name `{}`", rule.name),
            ));
        }
        interventions.push(rule);
    }

    let t = &file.tolerances;
    let delta_mu_mode = match t.delta_mu_mode.as_deref() {
        None | Some("group_wide") => DeltaMuMode::GroupWide,
        Some("selected_only") => DeltaMuMode::SelectedOnly,
        Some(other) => {
            return Err(Error::validation(
                "tolerances.delta_mu_mode",
                format!("`{other}` is not group_wide or selected_only"),
            ))
        }
    };
    let tolerances = Tolerances {
        regime: positive("tolerances.regime", t.regime)?,
        stationarity_eps: positive("tolerances.stationarity_eps", t.stationarity_eps)?,
        window: if t.window == 0 {
            return Err(Error::validation("tolerances.window", "must be positive"));
        } else {
            t.window
        },
        lipschitz: t
            .lipschitz
            .map(|l| positive("tolerances.lipschitz", l))
            .transpose()?,
        delta_mu_mode,
        max_steps: t.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
    };
    if file.horizon > tolerances.max_steps {
        return Err(Error::validation(
            "horizon",
            format!(
                "{} exceeds the maximum of {}",
                file.horizon, tolerances.max_steps
            ),
        ));
    }

    Ok(ScenarioConfig {
        name: file.name,
        version: file.version,
        notes: file.notes,
        declared_goal,
        population,
        pair,
        outcome,
        institution,
        policy_rule,
        interventions,
        horizon: file.horizon,
        tolerances,
        seed: file.seed,
        resolution,
    })
}

fn build_population(p: &PopulationFile) -> Result<Population> {
    let grid = match (&p.scores, &p.grid) {
        (Some(scores), None) => ScoreGrid::new(scores.clone()),
        (None, Some(g)) => ScoreGrid::uniform(g.start, g.width, g.bins),
        _ => {
            return Err(Error::validation(
                "population",
                "give exactly one of `scores` or `grid`",
            ))
        }
    }
    .map_err(|e| Error::validation("population.grid", e.to_string()))?;
    let groups: Vec<GroupState> = p
        .groups
        .iter()
        .map(|g| GroupState::new(g.label.clone(), g.proportion, g.pmf.clone()))
        .collect();
    let pop = Population::new(grid, groups);
    let report = validate_population(&pop);
    if let Some(v) = report.violations.first() {
        return Err(Error::validation("population.groups", v.to_string()));
    }
    Ok(pop)
}

fn build_outcome(o: &OutcomeFile, labels: &[String], bins: usize) -> Result<OutcomeModel> {
    let rho: BTreeMap<String, Vec<f64>> = match (&o.rho, &o.shared_rho) {
        (Some(map), None) => {
            for l in labels {
                if !map.contains_key(l) {
                    return Err(Error::validation(
                        format!("outcome.rho.{l}"),
                        "missing success probabilities",
                    ));
                }
            }
            if let Some(extra) = map.keys().find(|k| !labels.contains(k)) {
                return Err(Error::validation(
                    format!("outcome.rho.{extra}"),
                    "unknown group",
                ));
            }
            map.clone()
        }
        (None, Some(shared)) => labels.iter().map(|l| (l.clone(), shared.clone())).collect(),
        _ => {
            return Err(Error::validation(
                "outcome",
                "give exactly one of `rho` or `shared_rho`",
            ))
        }
    };
    for (l, r) in &rho {
        let path = format!("outcome.rho.{l}");
        if r.len() != bins {
            return Err(Error::validation(
                path,
                format!("has {} bins, grid has {bins}", r.len()),
            ));
        }
        if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(path, "rho out of [0,1]"));
        }
    }
    OutcomeModel::new(rho, o.steps_up, o.steps_down)
}

fn build_policy_rule(
    p: &PolicyRuleFile,
    labels: &[String],
    bins: usize,
    resolution: f64,
) -> Result<PolicyRule> {
    match p.kind.as_str() {
        "fixed" => {
            let acc = p.acceptance.as_ref().ok_or_else(|| {
                Error::validation("policy_rule.acceptance", "required for a fixed policy")
            })?;
            for l in labels {
                match acc.get(l) {
                    None => {
                        return Err(Error::validation(
                            format!("policy_rule.acceptance.{l}"),
                            "missing acceptance vector",
                        ))
                    }
                    Some(t) if t.len() != bins => {
                        return Err(Error::validation(
                            format!("policy_rule.acceptance.{l}"),
                            format!("has {} bins, grid has {bins}", t.len()),
                        ))
                    }
                    Some(_) => {}
                }
            }
            let policy = Policy::new(acc.clone())
                .map_err(|e| Error::validation("policy_rule.acceptance", e.to_string()))?;
            Ok(PolicyRule::Fixed(policy))
        }
        "max_utility" => Ok(PolicyRule::MaxUtility),
        "constrained" => {
            let c = p.constraint.as_deref().ok_or_else(|| {
                Error::validation("policy_rule.constraint", "required (dp or eo)")
            })?;
            let constraint: FairnessConstraint = c
                .parse()
                .map_err(|e: Error| Error::validation("policy_rule.constraint", e.to_string()))?;
            if labels.len() != 2 {
                return Err(Error::validation(
                    "policy_rule",
                    "constrained policies need exactly two groups",
                ));
            }
            Ok(PolicyRule::Constrained {
                constraint,
                resolution,
            })
        }
        "outcome_optimal" => {
            let target = p.target.clone().ok_or_else(|| {
                Error::validation("policy_rule.target", "required for outcome_optimal")
            })?;
            if !labels.contains(&target) {
                return Err(Error::validation(
                    "policy_rule.target",
                    format!("unknown group `{target}`"),
                ));
            }
            let utility_floor = p.utility_floor.unwrap_or(f64::NEG_INFINITY);
            if utility_floor.is_nan() {
                return Err(Error::validation("policy_rule.utility_floor", "is NaN"));
            }
            Ok(PolicyRule::OutcomeOptimal {
                target,
                utility_floor,
                resolution,
            })
        }
        other => Err(Error::validation(
            "policy_rule.kind",
            format!("`{other}` is not one of fixed, max_utility, constrained, outcome_optimal"),
        )),
    }
}

fn build_intervention(
    i: usize,
    iv: &InterventionFile,
    labels: &[String],
) -> Result<InterventionRule> {
    let path = |field: &str| format!("interventions[{i}].{field}");
    if !labels.contains(&iv.group) {
        return Err(Error::validation(
            path("group"),
            format!("unknown group `{}`", iv.group),
        ));
    }
    let reject = |field: &str, present: bool| -> Result<()> {
        if present {
            Err(Error::validation(
                path(field),
                format!("not allowed for kind `{}`", iv.kind),
            ))
        } else {
            Ok(())
        }
    };
    let kind = match iv.kind.as_str() {
        "quota" => {
            reject("s", iv.s.is_some())?;
            reject("alpha", iv.alpha.is_some())?;
            let q =
                iv.q.ok_or_else(|| Error::validation(path("q"), "required for a quota"))?;
            let sunset = match &iv.sunset {
                None => None,
                Some(s) => {
                    if !(s.eps >= 0.0 && s.eps.is_finite()) {
                        return Err(Error::validation(
                            path("sunset.eps"),
                            "must be non-negative",
                        ));
                    }
                    if s.window == 0 {
                        return Err(Error::validation(path("sunset.window"), "must be positive"));
                    }
                    Some(Sunset {
                        eps: s.eps,
                        window: s.window,
                    })
                }
            };
            InterventionKind::Quota {
                group: iv.group.clone(),
                q: unit(&path("q"), "q", q)?,
                sunset,
            }
        }
        "pipeline_investment" => {
            reject("q", iv.q.is_some())?;
            reject("sunset", iv.sunset.is_some())?;
            reject("alpha", iv.alpha.is_some())?;
            let s = iv
                .s
                .ok_or_else(|| Error::validation(path("s"), "required for pipeline_investment"))?;
            InterventionKind::PipelineInvestment {
                group: iv.group.clone(),
                s: unit(&path("s"), "s", s)?,
            }
        }
        "role_model_feedback" => {
            reject("q", iv.q.is_some())?;
            reject("sunset", iv.sunset.is_some())?;
            reject("s", iv.s.is_some())?;
            let alpha = iv.alpha.ok_or_else(|| {
                Error::validation(path("alpha"), "required for role_model_feedback")
            })?;
            InterventionKind::RoleModelFeedback {
                group: iv.group.clone(),
                alpha: unit(&path("alpha"), "alpha", alpha)?,
            }
        }
        other => {
            return Err(Error::validation(
                path("kind"),
                format!("`{other}` is not one of quota, pipeline_investment, role_model_feedback"),
            ))
        }
    };
    let name = iv.name.clone().unwrap_or_else(|| iv.kind.clone());
    if name.is_empty() || name.contains([',', '+']) || name == "none" {
        return Err(Error::validation(
            path("name"),
            format!("`{name}` is not a usable intervention name"),
        ));
    }
    Ok(InterventionRule {
        name,
        kind,
        active_from: iv.active_from,
    })
}

fn parse_goal_metric(s: &str) -> Result<GoalMetric> {
    let s = s.trim();
    match s {
        "dp_gap" => Ok(GoalMetric::DpGap),
        "eo_gap" => Ok(GoalMetric::EoGap),
        "eodds_gap" => Ok(GoalMetric::EoddsGap),
        _ => s
            .strip_prefix("delta_mu(")
            .and_then(|rest| rest.strip_suffix(')'))
            .map(|g| GoalMetric::DeltaMu(g.trim().to_string()))
            .filter(|m| matches!(m, GoalMetric::DeltaMu(g) if !g.is_empty()))
            .ok_or_else(|| {
                Error::validation(
                    "declared_goal.metric",
                    format!("`{s}` is not one of dp_gap, eo_gap, eodds_gap, delta_mu(<group>)"),
                )
            }),
    }
}
