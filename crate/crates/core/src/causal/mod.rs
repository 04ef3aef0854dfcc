//! Finite causal Bayesian networks with do-interventions.
//!
//! A [`CausalModel`] is a DAG over variables with finite domains, one
//! conditional probability table per node, a designated protected node `A`
//! and a designated outcome node `F`. Every interventional quantity is
//! computed by exact enumeration of the joint distribution.

mod file;

use std::collections::{BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::population::total_variation;

pub use file::{load_model, parse_model};

/// Upper bound on the number of joint assignments that will be enumerated.
pub const MAX_JOINT_STATES: usize = 1_000_000;
pub const CPT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub domain: Vec<String>,
}

/// Node declaration used by [`ModelBuilder`]; parents are referenced by name.
#[derive(Debug, Clone)]
struct NodeSpec {
    name: String,
    domain: Vec<String>,
    parents: Vec<String>,
    rows: Vec<Vec<f64>>,
}

/// Builds a [`CausalModel`] from named nodes.
///
/// CPT rows are indexed by the parent assignment in mixed radix, first parent
/// most significant; each row lists `p(node = v | parents)` for every value `v`
/// in domain order.
#[derive(Debug, Clone, Default)]
pub struct ModelBuilder {
    nodes: Vec<NodeSpec>,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(
        mut self,
        name: &str,
        domain: &[&str],
        parents: &[&str],
        rows: Vec<Vec<f64>>,
    ) -> Self {
        self.nodes.push(NodeSpec {
            name: name.to_string(),
            domain: domain.iter().map(|s| s.to_string()).collect(),
            parents: parents.iter().map(|s| s.to_string()).collect(),
            rows,
        });
        self
    }

    /// Binary node with domain `["0", "1"]`; `p_one[row]` is `p(node = 1 | row)`.
    pub fn binary(self, name: &str, parents: &[&str], p_one: &[f64]) -> Self {
        let rows = p_one.iter().map(|&p| vec![1.0 - p, p]).collect();
        self.node(name, &["0", "1"], parents, rows)
    }

    pub fn build(self, protected: &str, outcome: &str) -> Result<CausalModel> {
        let variables: Vec<Variable> = self
            .nodes
            .iter()
            .map(|n| Variable {
                name: n.name.clone(),
                domain: n.domain.clone(),
            })
            .collect();
        let index = |name: &str| -> Result<usize> {
            variables
                .iter()
                .position(|v| v.name == name)
                .ok_or_else(|| Error::Structure(format!("unknown node `{name}`")))
        };
        let mut parents = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            parents.push(
                n.parents
                    .iter()
                    .map(|p| index(p))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let protected = index(protected)?;
        let outcome = index(outcome)?;
        CausalModel::new(
            variables,
            parents,
            self.nodes.into_iter().map(|n| n.rows).collect(),
            protected,
            outcome,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalModel {
    variables: Vec<Variable>,
    parents: Vec<Vec<usize>>,
    cpts: Vec<Vec<Vec<f64>>>,
    protected: usize,
    outcome: usize,
}

/// `do(target = value)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterventionSpec {
    pub target: String,
    pub value: String,
}

impl InterventionSpec {
    pub fn new(target: impl Into<String>, value: impl Into<String>) -> Self {
        InterventionSpec {
            target: target.into(),
            value: value.into(),
        }
    }
}

impl CausalModel {
    pub fn new(
        variables: Vec<Variable>,
        parents: Vec<Vec<usize>>,
        cpts: Vec<Vec<Vec<f64>>>,
        protected: usize,
        outcome: usize,
    ) -> Result<Self> {
        let n = variables.len();
        if n == 0 {
            return Err(Error::Structure("model has no variables".into()));
        }
        if parents.len() != n || cpts.len() != n {
            return Err(Error::Structure(
                "parents and CPTs must be given for every variable".into(),
            ));
        }
        for (i, v) in variables.iter().enumerate() {
            if v.domain.is_empty() {
                return Err(Error::Structure(format!(
                    "node `{}` has an empty domain",
                    v.name
                )));
            }
            if variables[..i].iter().any(|w| w.name == v.name) {
                return Err(Error::Structure(format!("duplicate node `{}`", v.name)));
            }
            let distinct: BTreeSet<_> = v.domain.iter().collect();
            if distinct.len() != v.domain.len() {
                return Err(Error::Structure(format!(
                    "node `{}` has repeated domain values",
                    v.name
                )));
            }
        }
        for (i, ps) in parents.iter().enumerate() {
            for (j, &p) in ps.iter().enumerate() {
                if p >= n {
                    return Err(Error::Structure(format!("parent index {p} out of range")));
                }
                if p == i {
                    return Err(Error::Structure(format!(
                        "node `{}` is its own parent",
                        variables[i].name
                    )));
                }
                if ps[..j].contains(&p) {
                    return Err(Error::Structure(format!(
                        "node `{}` lists parent `{}` twice",
                        variables[i].name, variables[p].name
                    )));
                }
            }
        }
        if protected >= n || outcome >= n {
            return Err(Error::Structure(
                "protected/outcome node out of range".into(),
            ));
        }
        let model = CausalModel {
            variables,
            parents,
            cpts,
            protected,
            outcome,
        };
        model.topological_order()?;
        for i in 0..n {
            model.check_cpt(i)?;
        }
        Ok(model)
    }

    fn check_cpt(&self, node: usize) -> Result<()> {
        let name = &self.variables[node].name;
        let expected_rows: usize = self.parents[node]
            .iter()
            .map(|&p| self.variables[p].domain.len())
            .product();
        let card = self.variables[node].domain.len();
        let cpt = &self.cpts[node];
        if cpt.len() != expected_rows {
            return Err(Error::Structure(format!(
                "CPT of `{name}` has {} rows, expected {expected_rows}",
                cpt.len()
            )));
        }
        for (r, row) in cpt.iter().enumerate() {
            if row.len() != card {
                return Err(Error::Structure(format!(
                    "CPT of `{name}` row {r} has {} entries, expected {card}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Domain(format!(
                    "CPT of `{name}` row {r} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > CPT_TOL {
                return Err(Error::Domain(format!(
                    "CPT of `{name}` row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Kahn's algorithm; fails on a cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.variables.len();
        let children = self.children();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Structure("graph contains a directed cycle".into()));
        }
        Ok(order)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn cpt(&self, node: usize) -> &[Vec<f64>] {
        &self.cpts[node]
    }

    pub fn protected(&self) -> usize {
        self.protected
    }

    pub fn outcome(&self) -> usize {
        self.outcome
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::Domain(format!("unknown node `{name}`")))
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c)))
            .collect()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.variables.len()];
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
            }
        }
        children
    }

    /// Nodes reachable from `node` along directed edges, excluding `node` itself.
    pub fn descendants(&self, node: usize) -> BTreeSet<usize> {
        let children = self.children();
        let mut seen = BTreeSet::new();
        let mut stack = children[node].clone();
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                stack.extend(children[v].iter().copied());
            }
        }
        seen
    }

    fn state_count(&self) -> Result<usize> {
        let mut total: usize = 1;
        for v in &self.variables {
            total = total
                .checked_mul(v.domain.len())
                .filter(|&t| t <= MAX_JOINT_STATES)
                .ok_or_else(|| {
                    Error::Capacity(format!(
                        "joint state space exceeds {MAX_JOINT_STATES} assignments"
                    ))
                })?;
        }
        Ok(total)
    }

    fn cpt_row(&self, node: usize, assignment: &[usize]) -> usize {
        self.parents[node].iter().fold(0, |row, &p| {
            row * self.variables[p].domain.len() + assignment[p]
        })
    }
}

/// Exact joint pmf over full assignments, indexed in mixed radix with the
/// first variable most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub cards: Vec<usize>,
    pub probs: Vec<f64>,
}

impl Joint {
    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut values = vec![0; self.cards.len()];
        for i in (0..self.cards.len()).rev() {
            values[i] = index % self.cards[i];
            index /= self.cards[i];
        }
        values
    }

    /// Marginal over `vars`, indexed in mixed radix in the order given.
    pub fn marginal(&self, vars: &[usize]) -> Vec<f64> {
        let size: usize = vars.iter().map(|&v| self.cards[v]).product();
        let mut out = vec![0.0; size];
        for (idx, &p) in self.probs.iter().enumerate() {
            let values = self.decode(idx);
            let key = vars.iter().fold(0, |k, &v| k * self.cards[v] + values[v]);
            out[key] += p;
        }
        out
    }
}

/// Enumerates the joint distribution by the chain rule along the DAG.
pub fn joint_distribution(m: &CausalModel) -> Result<Joint> {
    let total = m.state_count()?;
    m.topological_order()?;
    let cards: Vec<usize> = m.variables.iter().map(|v| v.domain.len()).collect();
    let mut joint = Joint {
        cards,
        probs: Vec::with_capacity(total),
    };
    for idx in 0..total {
        let values = joint.decode(idx);
        let p = (0..m.variables.len())
            .map(|node| m.cpts[node][m.cpt_row(node, &values)][values[node]])
            .product();
        joint.probs.push(p);
    }
    Ok(joint)
}

/// Graph surgery: cuts the target's incoming edges and pins it to the value.
pub fn intervene(m: &CausalModel, spec: &InterventionSpec) -> Result<CausalModel> {
    let target = m.index_of(&spec.target)?;
    let domain = &m.variables[target].domain;
    let value = domain
        .iter()
        .position(|d| *d == spec.value)
        .ok_or_else(|| {
            Error::Domain(format!(
                "value `{}` is not in the domain of `{}`",
                spec.value, spec.target
            ))
        })?;
    let mut out = m.clone();
    out.parents[target].clear();
    let mut row = vec![0.0; domain.len()];
    row[value] = 1.0;
    out.cpts[target] = vec![row];
    Ok(out)
}

fn binary_node(m: &CausalModel, node: usize, role: &str) -> Result<[String; 2]> {
    match m.variables[node].domain.as_slice() {
        [a, b] => Ok([a.clone(), b.clone()]),
        d => Err(Error::Domain(format!(
            "{role} `{}` must be binary, has {} values",
            m.variables[node].name,
            d.len()
        ))),
    }
}

/// TV distance between the outcome marginals under `do(node = v₀)` and `do(node = v₁)`.
fn interventional_outcome_gap(m: &CausalModel, node: usize, role: &str) -> Result<f64> {
    let [v0, v1] = binary_node(m, node, role)?;
    let name = m.variables[node].name.clone();
    let marginal = |value: String| -> Result<Vec<f64>> {
        let surgered = intervene(m, &InterventionSpec::new(name.clone(), value))?;
        Ok(joint_distribution(&surgered)?.marginal(&[m.outcome]))
    };
    let p0 = marginal(v0)?;
    let p1 = marginal(v1)?;
    Ok(total_variation(&p0, &p1).clamp(0.0, 1.0))
}

/// Total variation between `p(F | do(A = a₀))` and `p(F | do(A = a₁))`.
pub fn counterfactual_fairness_gap(m: &CausalModel) -> Result<f64> {
    interventional_outcome_gap(m, m.protected, "protected attribute")
}

/// Total variation between `p(F | do(P = p₀))` and `p(F | do(P = p₁))` for a proxy `P`.
pub fn proxy_discrimination_gap(m: &CausalModel, proxy: &str) -> Result<f64> {
    let node = m.index_of(proxy)?;
    interventional_outcome_gap(m, node, "proxy")
}

fn resolve_set(m: &CausalModel, names: &[&str]) -> Result<BTreeSet<usize>> {
    names.iter().map(|n| m.index_of(n)).collect()
}

/// d-separation of `sources` and `targets` given `given`, by the
/// reachability (Bayes-ball) procedure over trail directions.
pub fn d_separated(
    m: &CausalModel,
    sources: &[&str],
    targets: &[&str],
    given: &[&str],
) -> Result<bool> {
    let xs = resolve_set(m, sources)?;
    let ys = resolve_set(m, targets)?;
    let zs = resolve_set(m, given)?;
    if !xs.is_disjoint(&ys) || !xs.is_disjoint(&zs) || !ys.is_disjoint(&zs) {
        return Err(Error::Domain(
            "source, target and conditioning sets must be disjoint".into(),
        ));
    }
    Ok(d_separated_idx(m, &xs, &ys, &zs))
}

pub(crate) fn d_separated_idx(
    m: &CausalModel,
    xs: &BTreeSet<usize>,
    ys: &BTreeSet<usize>,
    zs: &BTreeSet<usize>,
) -> bool {
    let n = m.variables.len();
    let children = m.children();

    // Conditioning nodes and their ancestors open colliders.
    let mut opens_collider = vec![false; n];
    let mut stack: Vec<usize> = zs.iter().copied().collect();
    while let Some(v) = stack.pop() {
        if !opens_collider[v] {
            opens_collider[v] = true;
            stack.extend(m.parents[v].iter().copied());
        }
    }

    const UP: usize = 0; // arrived from a child
    const DOWN: usize = 1; // arrived from a parent
    let mut visited = vec![[false; 2]; n];
    let mut queue: Vec<(usize, usize)> = xs.iter().map(|&x| (x, UP)).collect();
    while let Some((v, dir)) = queue.pop() {
        if visited[v][dir] {
            continue;
        }
        visited[v][dir] = true;
        let observed = zs.contains(&v);
        if !observed && ys.contains(&v) {
            return false;
        }
        if dir == UP && !observed {
            queue.extend(m.parents[v].iter().map(|&p| (p, UP)));
            queue.extend(children[v].iter().map(|&c| (c, DOWN)));
        } else if dir == DOWN {
            if !observed {
                queue.extend(children[v].iter().map(|&c| (c, DOWN)));
            }
            if opens_collider[v] {
                queue.extend(m.parents[v].iter().map(|&p| (p, UP)));
            }
        }
    }
    true
}

/// True iff some directed path from the protected node to the outcome avoids
/// every resolving node in its interior.
pub fn unresolved_discrimination(m: &CausalModel, resolving: &[&str]) -> Result<bool> {
    let resolving = resolve_set(m, resolving)?;
    let children = m.children();
    let (a, f) = (m.protected, m.outcome);
    if a == f {
        return Err(Error::Structure(
            "protected and outcome nodes must differ".into(),
        ));
    }
    let mut seen = vec![false; m.variables.len()];
    let mut stack = vec![a];
    seen[a] = true;
    while let Some(v) = stack.pop() {
        for &c in &children[v] {
            if c == f {
                return Ok(true);
            }
            if !seen[c] && !resolving.contains(&c) {
                seen[c] = true;
                stack.push(c);
            }
        }
    }
    Ok(false)
}
