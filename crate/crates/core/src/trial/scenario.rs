use serde::{Deserialize, Serialize};

use crate::dose_models::{logistic_truth, Combo, DoseGrid, LogisticCoeffs, ProbMatrix};
use crate::error::{ModelError, Result};
use crate::trial::onset::HazardPattern;

/// True toxicity and efficacy probabilities of every combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct Scenario {
    pub name: String,
    /// Dose skeleton the scenario was written for; the design's grid is used
    /// when absent.
    pub grid: Option<DoseGrid>,
    pub toxicity: ProbMatrix,
    pub efficacy: ProbMatrix,
    /// Late-onset efficacy; `None` means outcomes are known at enrollment.
    pub hazard: Option<HazardPattern>,
}

/// A truth matrix written out by rows (dose of drug A), or generated from
/// logistic coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruthSpec {
    Rows(Vec<Vec<f64>>),
    Logistic(LogisticCoeffs),
}

impl TruthSpec {
    fn resolve(&self, field: &str) -> Result<ProbMatrix> {
        match self {
            TruthSpec::Rows(rows) => ProbMatrix::from_rows(rows),
            TruthSpec::Logistic(c) => logistic_truth(c),
        }
        .map_err(|e| ModelError::domain(format!("truth.{field}: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub toxicity: TruthSpec,
    pub efficacy: TruthSpec,
}

/// On-disk form of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazard: Option<HazardPattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<DoseGrid>,
    pub truth: TruthFile,
}

fn to_rows(m: &ProbMatrix) -> Vec<Vec<f64>> {
    m.values.chunks(m.cols).map(<[f64]>::to_vec).collect()
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = ModelError;
    fn try_from(f: ScenarioFile) -> Result<Self> {
        let s = Scenario {
            name: f.name,
            grid: f.grid,
            toxicity: f.truth.toxicity.resolve("toxicity")?,
            efficacy: f.truth.efficacy.resolve("efficacy")?,
            hazard: f.hazard,
        };
        s.validate()?;
        Ok(s)
    }
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> Self {
        ScenarioFile {
            truth: TruthFile {
                toxicity: TruthSpec::Rows(to_rows(&s.toxicity)),
                efficacy: TruthSpec::Rows(to_rows(&s.efficacy)),
            },
            name: s.name,
            hazard: s.hazard,
            grid: s.grid,
        }
    }
}

type Rows = [[f64; 2]; 3];

/// Rows are doses of drug A, columns doses of drug B.
const BUILTIN: [(Rows, Rows); 12] = [
    (
        [[0.05, 0.1], [0.15, 0.15], [0.2, 0.45]],
        [[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]],
    ),
    (
        [[0.05, 0.1], [0.15, 0.2], [0.4, 0.5]],
        [[0.1, 0.2], [0.3, 0.4], [0.5, 0.55]],
    ),
    (
        [[0.05, 0.1], [0.1, 0.15], [0.15, 0.2]],
        [[0.1, 0.2], [0.2, 0.3], [0.4, 0.5]],
    ),
    (
        [[0.05, 0.1], [0.2, 0.4], [0.5, 0.6]],
        [[0.2, 0.3], [0.4, 0.5], [0.55, 0.6]],
    ),
    (
        [[0.05, 0.1], [0.15, 0.2], [0.2, 0.25]],
        [[0.2, 0.3], [0.4, 0.5], [0.4, 0.2]],
    ),
    (
        [[0.05, 0.05], [0.05, 0.05], [0.05, 0.05]],
        [[0.1, 0.2], [0.2, 0.3], [0.4, 0.5]],
    ),
    (
        [[0.05, 0.1], [0.15, 0.2], [0.2, 0.5]],
        [[0.1, 0.2], [0.3, 0.4], [0.4, 0.5]],
    ),
    (
        [[0.5, 0.5], [0.55, 0.55], [0.6, 0.6]],
        [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]],
    ),
    (
        [[0.23, 0.4], [0.4, 0.72], [0.59, 0.9]],
        [[0.36, 0.44], [0.49, 0.58], [0.62, 0.71]],
    ),
    (
        [[0.13, 0.24], [0.25, 0.56], [0.42, 0.83]],
        [[0.32, 0.4], [0.5, 0.6], [0.68, 0.78]],
    ),
    (
        [[0.11, 0.15], [0.15, 0.25], [0.2, 0.4]],
        [[0.15, 0.3], [0.22, 0.41], [0.31, 0.54]],
    ),
    (
        [[0.12, 0.15], [0.15, 0.19], [0.19, 0.23]],
        [[0.1, 0.17], [0.22, 0.33], [0.39, 0.55]],
    ),
];

impl Scenario {
    pub const BUILTIN_COUNT: usize = BUILTIN.len();

    /// One of the twelve bundled melanoma-grid scenarios, numbered from 1.
    pub fn builtin(number: usize) -> Result<Self> {
        let (tox, eff) = BUILTIN.get(number.wrapping_sub(1)).ok_or_else(|| {
            ModelError::domain(format!(
                "no bundled scenario {number} (1 to {})",
                BUILTIN.len()
            ))
        })?;
        let m = |rows: &Rows| ProbMatrix::new(3, 2, rows.concat()).expect("bundled scenario");
        Ok(Scenario {
            name: format!("scenario {number}"),
            grid: Some(DoseGrid::melanoma()),
            toxicity: m(tox),
            efficacy: m(eff),
            hazard: None,
        })
    }

    pub fn with_hazard(mut self, hazard: Option<HazardPattern>) -> Self {
        self.hazard = hazard;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if (self.toxicity.rows, self.toxicity.cols) != (self.efficacy.rows, self.efficacy.cols) {
            return Err(ModelError::domain(
                "truth.efficacy: dimensions differ from truth.toxicity",
            ));
        }
        if let Some(g) = &self.grid {
            self.check_grid(g)?;
        }
        Ok(())
    }

    pub fn check_grid(&self, grid: &DoseGrid) -> Result<()> {
        if (self.toxicity.rows, self.toxicity.cols) != (grid.rows(), grid.cols()) {
            return Err(ModelError::domain(format!(
                "truth.toxicity: {}x{} matrix does not match the {}x{} dose grid",
                self.toxicity.rows,
                self.toxicity.cols,
                grid.rows(),
                grid.cols()
            )));
        }
        Ok(())
    }

    /// Most efficacious combinations among those with true toxicity below
    /// `phi_t`.
    pub fn targets(&self, phi_t: f64) -> Vec<Combo> {
        let cols = self.toxicity.cols;
        let safe: Vec<usize> = (0..self.toxicity.values.len())
            .filter(|&k| self.toxicity.values[k] < phi_t)
            .collect();
        let best = safe
            .iter()
            .map(|&k| self.efficacy.values[k])
            .fold(f64::NEG_INFINITY, f64::max);
        safe.into_iter()
            .filter(|&k| self.efficacy.values[k] >= best - 1e-12)
            .map(|k| Combo::new(k / cols, k % cols))
            .collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ModelError::domain(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}
