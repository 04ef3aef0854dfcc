//! Discrete score distributions per demographic group.
//!
//! A [`Population`] is an ordered, uniformly spaced [`ScoreGrid`] together with
//! one probability mass function per group. The group label plays the role of
//! the protected attribute.

use std::fmt;

use crate::error::{Error, Result};

/// Tolerance used for every probabilistic invariant of a population.
pub const VALIDATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    scores: Vec<f64>,
    width: f64,
}

impl ScoreGrid {
    /// Builds a grid from explicit bin scores, which must be strictly
    /// ascending with uniform spacing and at least two bins.
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::Domain(format!(
                "score grid needs at least 2 bins, got {}",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Domain(
                "score grid contains a non-finite score".into(),
            ));
        }
        let width = scores[1] - scores[0];
        if width <= 0.0 {
            return Err(Error::Domain(
                "score grid must be strictly ascending".into(),
            ));
        }
        for (i, pair) in scores.windows(2).enumerate() {
            let d = pair[1] - pair[0];
            if d <= 0.0 {
                return Err(Error::Domain(format!(
                    "score grid must be strictly ascending (bins {} and {})",
                    i,
                    i + 1
                )));
            }
            if (d - width).abs() > VALIDATION_TOL {
                return Err(Error::Domain(format!(
                    "score grid spacing is not uniform: bins {}..{} differ by {} instead of {}",
                    i,
                    i + 1,
                    d,
                    width
                )));
            }
        }
        Ok(ScoreGrid { scores, width })
    }

    /// `bins` scores starting at `start`, spaced by `width`.
    pub fn uniform(start: f64, width: f64, bins: usize) -> Result<Self> {
        Self::new((0..bins).map(|i| start + width * i as f64).collect())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn min_score(&self) -> f64 {
        self.scores[0]
    }

    pub fn max_score(&self) -> f64 {
        self.scores[self.scores.len() - 1]
    }
}

/// One group's share of the population and its score distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupState {
    pub label: String,
    pub proportion: f64,
    pub pmf: Vec<f64>,
}

impl GroupState {
    pub fn new(label: impl Into<String>, proportion: f64, pmf: Vec<f64>) -> Self {
        GroupState {
            label: label.into(),
            proportion,
            pmf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub grid: ScoreGrid,
    pub groups: Vec<GroupState>,
}

impl Population {
    /// Assembles a population without checking it; see [`validate_population`].
    pub fn new(grid: ScoreGrid, groups: Vec<GroupState>) -> Self {
        Population { grid, groups }
    }

    /// Assembles a population and fails with the first reported violation.
    pub fn validated(grid: ScoreGrid, groups: Vec<GroupState>) -> Result<Self> {
        let pop = Population { grid, groups };
        validate_population(&pop).into_result()?;
        Ok(pop)
    }

    pub fn group(&self, label: &str) -> Result<&GroupState> {
        self.groups
            .iter()
            .find(|g| g.label == label)
            .ok_or_else(|| Error::Key(label.to_string()))
    }

    pub fn group_index(&self, label: &str) -> Result<usize> {
        self.groups
            .iter()
            .position(|g| g.label == label)
            .ok_or_else(|| Error::Key(label.to_string()))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|g| g.label.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyPopulation,
    DuplicateLabel {
        label: String,
    },
    PmfLength {
        label: String,
        expected: usize,
        found: usize,
    },
    NegativeMass {
        label: String,
        bin: usize,
        value: f64,
    },
    NonFinite {
        label: String,
    },
    PmfSum {
        label: String,
        sum: f64,
    },
    ProportionRange {
        label: String,
        value: f64,
    },
    ProportionSum {
        sum: f64,
    },
}

impl Violation {
    /// Distance from the nearest admissible value.
    pub fn slack(&self) -> f64 {
        match self {
            Violation::PmfSum { sum, .. } | Violation::ProportionSum { sum } => (sum - 1.0).abs(),
            Violation::NegativeMass { value, .. } => -value,
            Violation::ProportionRange { value, .. } => {
                if *value < 0.0 {
                    -value
                } else {
                    value - 1.0
                }
            }
            Violation::PmfLength {
                expected, found, ..
            } => (*expected as f64 - *found as f64).abs(),
            _ => f64::NAN,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyPopulation => write!(f, "population has no groups"),
            Violation::DuplicateLabel { label } => write!(f, "duplicate group label `{label}`"),
            Violation::PmfLength {
                label,
                expected,
                found,
            } => write!(
                f,
                "group `{label}`: pmf has {found} bins, grid has {expected}"
            ),
            Violation::NegativeMass { label, bin, value } => {
                write!(f, "group `{label}`: negative mass {value} at bin {bin}")
            }
            Violation::NonFinite { label } => write!(f, "group `{label}`: non-finite value"),
            Violation::PmfSum { label, sum } => write!(f, "group `{label}`: pmf sum {sum} ≠ 1"),
            Violation::ProportionRange { label, value } => {
                write!(f, "group `{label}`: proportion {value} outside [0,1]")
            }
            Violation::ProportionSum { sum } => write!(f, "proportions sum {sum} ≠ 1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::validation("population", v.to_string())),
        }
    }
}

/// Checks every population invariant and reports all of the violations found.
pub fn validate_population(p: &Population) -> ValidationReport {
    let mut violations = Vec::new();
    if p.groups.is_empty() {
        violations.push(Violation::EmptyPopulation);
    }
    for (i, g) in p.groups.iter().enumerate() {
        if p.groups[..i].iter().any(|h| h.label == g.label) {
            violations.push(Violation::DuplicateLabel {
                label: g.label.clone(),
            });
        }
        if g.pmf.len() != p.grid.len() {
            violations.push(Violation::PmfLength {
                label: g.label.clone(),
                expected: p.grid.len(),
                found: g.pmf.len(),
            });
        }
        if !g.proportion.is_finite() || g.pmf.iter().any(|x| !x.is_finite()) {
            violations.push(Violation::NonFinite {
                label: g.label.clone(),
            });
            continue;
        }
        for (bin, &m) in g.pmf.iter().enumerate() {
            if m < 0.0 {
                violations.push(Violation::NegativeMass {
                    label: g.label.clone(),
                    bin,
                    value: m,
                });
            }
        }
        let sum: f64 = g.pmf.iter().sum();
        if (sum - 1.0).abs() > VALIDATION_TOL {
            violations.push(Violation::PmfSum {
                label: g.label.clone(),
                sum,
            });
        }
        if !(0.0..=1.0).contains(&g.proportion) {
            violations.push(Violation::ProportionRange {
                label: g.label.clone(),
                value: g.proportion,
            });
        }
    }
    if !p.groups.is_empty() {
        let sum: f64 = p.groups.iter().map(|g| g.proportion).sum();
        if (sum - 1.0).abs() > VALIDATION_TOL {
            violations.push(Violation::ProportionSum { sum });
        }
    }
    ValidationReport { violations }
}

/// Mean score of a group, `Σ π(x)·x`.
pub fn group_mean(g: &GroupState, grid: &ScoreGrid) -> Result<f64> {
    if g.pmf.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "group `{}` pmf has {} bins, grid has {}",
            g.label,
            g.pmf.len(),
            grid.len()
        )));
    }
    Ok(g.pmf.iter().zip(grid.scores()).map(|(p, x)| p * x).sum())
}

/// Total-variation distance between two pmfs of equal length.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
