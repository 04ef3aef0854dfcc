//! TOML encoding of causal models.
//!
//! ```toml
//! protected = "A"
//! outcome = "F"
//! edges = [["A", "M"], ["M", "F"]]
//!
//! [[nodes]]
//! name = "A"
//! domain = ["0", "1"]
//!
//! [[nodes]]
//! name = "M"
//! domain = ["0", "1"]
//!
//! [cpt.A]
//! "" = ["0.5", "0.5"]
//!
//! [cpt.M]
//! "A=0" = ["0.8", "0.2"]
//! "A=1" = ["0.2", "0.8"]
//! ```
//!
//! A node's parents are ordered as the nodes are declared. CPT rows are keyed
//! by the parent assignment written as comma-separated `Parent=value` pairs in
//! any order (the empty key for root nodes); probabilities are decimal
//! strings listed in domain order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{CausalModel, Variable};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    protected: String,
    outcome: String,
    #[serde(default)]
    edges: Vec<(String, String)>,
    nodes: Vec<NodeEntry>,
    #[serde(default)]
    cpt: BTreeMap<String, BTreeMap<String, Vec<Decimal>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    name: String,
    domain: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Decimal {
    Text(String),
    Number(f64),
}

impl Decimal {
    fn value(&self, path: &str) -> Result<f64> {
        match self {
            Decimal::Number(x) => Ok(*x),
            Decimal::Text(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::validation(path, format!("`{s}` is not a decimal number"))),
        }
    }
}

pub fn load_model(path: &Path) -> Result<CausalModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_model(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

pub fn parse_model(text: &str) -> Result<CausalModel> {
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: "<model>".into(),
        message: e.to_string(),
    })?;

    let variables: Vec<Variable> = file
        .nodes
        .iter()
        .map(|n| Variable {
            name: n.name.clone(),
            domain: n.domain.clone(),
        })
        .collect();
    let index = |name: &str, path: &str| -> Result<usize> {
        variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::validation(path, format!("unknown node `{name}`")))
    };

    let mut parents = vec![Vec::new(); variables.len()];
    for (i, (from, to)) in file.edges.iter().enumerate() {
        let path = format!("edges[{i}]");
        let p = index(from, &path)?;
        let c = index(to, &path)?;
        if parents[c].contains(&p) {
            return Err(Error::validation(
                path,
                format!("duplicate edge {from} -> {to}"),
            ));
        }
        parents[c].push(p);
    }
    for ps in &mut parents {
        ps.sort_unstable();
    }

    for name in file.cpt.keys() {
        index(name, &format!("cpt.{name}"))?;
    }

    let mut cpts = Vec::with_capacity(variables.len());
    for (node, var) in variables.iter().enumerate() {
        let table_path = format!("cpt.{}", var.name);
        let table = file.cpt.get(&var.name).ok_or_else(|| {
            Error::validation(&table_path, "missing conditional probability table")
        })?;
        let radix: Vec<usize> = parents[node]
            .iter()
            .map(|&p| variables[p].domain.len())
            .collect();
        let rows: usize = radix.iter().product();
        let mut cpt: Vec<Option<Vec<f64>>> = vec![None; rows];
        for (key, values) in table {
            let row_path = format!("{table_path}.\"{key}\"");
            let row = row_index(key, &parents[node], &variables, &row_path)?;
            if cpt[row].is_some() {
                return Err(Error::validation(
                    row_path,
                    "parent assignment listed twice",
                ));
            }
            cpt[row] = Some(
                values
                    .iter()
                    .map(|v| v.value(&row_path))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let cpt = cpt
            .into_iter()
            .enumerate()
            .map(|(r, row)| {
                row.ok_or_else(|| {
                    Error::validation(
                        &table_path,
                        format!("missing row for parent assignment #{r}"),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        cpts.push(cpt);
    }

    let protected = index(&file.protected, "protected")?;
    let outcome = index(&file.outcome, "outcome")?;
    CausalModel::new(variables, parents, cpts, protected, outcome)
}

fn row_index(key: &str, parents: &[usize], variables: &[Variable], path: &str) -> Result<usize> {
    let mut assigned: BTreeMap<&str, &str> = BTreeMap::new();
    for part in key.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| Error::validation(path, format!("`{part}` is not `Parent=value`")))?;
        if assigned.insert(name.trim(), value.trim()).is_some() {
            return Err(Error::validation(
                path,
                format!("parent `{name}` assigned twice"),
            ));
        }
    }
    if assigned.len() != parents.len() {
        return Err(Error::validation(
            path,
            format!(
                "expected {} parent assignments, found {}",
                parents.len(),
                assigned.len()
            ),
        ));
    }
    let mut row = 0;
    for &p in parents {
        let var = &variables[p];
        let value = assigned.get(var.name.as_str()).ok_or_else(|| {
            Error::validation(path, format!("parent `{}` not assigned", var.name))
        })?;
        let v = var.domain.iter().position(|d| d == value).ok_or_else(|| {
            Error::validation(
                path,
                format!("`{value}` is not in the domain of `{}`", var.name),
            )
        })?;
        row = row * var.domain.len() + v;
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::counterfactual_fairness_gap;

    const CHAIN: &str = r#"
protected = "A"
outcome = "F"
edges = [["A", "M"], ["M", "F"]]

[[nodes]]
name = "A"
domain = ["0", "1"]

[[nodes]]
name = "M"
domain = ["0", "1"]

[[nodes]]
name = "F"
domain = ["0", "1"]

[cpt.A]
"" = ["0.5", "0.5"]

[cpt.M]
"A=0" = ["0.8", "0.2"]
"A=1" = ["0.2", "0.8"]

[cpt.F]
"M=1" = ["0.1", "0.9"]
"M=0" = ["0.9", "0.1"]
"#;

    #[test]
    fn parses_chain() {
        let m = parse_model(CHAIN).unwrap();
        assert_eq!(m.parents(2), &[1]);
        assert_eq!(m.cpt(2), &[vec![0.9, 0.1], vec![0.1, 0.9]]);
        let gap = counterfactual_fairness_gap(&m).unwrap();
        assert!((gap - 0.48).abs() < 1e-12);
    }

    #[test]
    fn multi_parent_keys_in_any_order() {
        let text = r#"
protected = "A"
outcome = "C"
edges = [["B", "C"], ["A", "C"]]
nodes = [{ name = "A", domain = ["0", "1"] }, { name = "B", domain = ["x", "y"] }, { name = "C", domain = ["0", "1"] }]
[cpt]
A = { "" = ["0.5", "0.5"] }
B = { "" = ["0.5", "0.5"] }
[cpt.C]
"B=x,A=0" = ["1.0", "0.0"]
"A=0, B=y" = ["0.75", "0.25"]
"A=1,B=x" = ["0.5", "0.5"]
"B=y,A=1" = ["0.0", "1.0"]
"#;
        let m = parse_model(text).unwrap();
        assert_eq!(m.parents(2), &[0, 1]);
        assert_eq!(m.cpt(2)[1], vec![0.75, 0.25]);
    }

    #[test]
    fn errors_name_the_field() {
        let missing = CHAIN.replace("\"M=0\" = [\"0.9\", \"0.1\"]", "");
        let err = parse_model(&missing).unwrap_err().to_string();
        assert!(err.contains("cpt.F"), "{err}");

        let bad = CHAIN.replace("\"0.8\", \"0.2\"", "\"0.8\", \"zero\"");
        let err = parse_model(&bad).unwrap_err().to_string();
        assert!(err.contains("cpt.M"), "{err}");

        let cyclic = CHAIN.replace(
            "edges = [[\"A\", \"M\"], [\"M\", \"F\"]]",
            "edges = [[\"A\", \"M\"], [\"M\", \"A\"]]",
        );
        assert!(parse_model(&cyclic).is_err());
    }
}
