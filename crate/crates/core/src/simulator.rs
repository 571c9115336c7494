//! Monte Carlo operating characteristics.
//!
//! Replicate `r` runs with seed `seeds::replicate_seed(master_seed, r)`.
//! Replicate results are collected in replicate order and reduced
//! sequentially, so the aggregates do not depend on how many threads ran them.

use serde::{Deserialize, Serialize};

use crate::dose_models::Combo;
use crate::efficacy::{sample_efficacy_posterior, ArmData, ArmTally, HyperPriors};
use crate::error::{ModelError, Result};
use crate::posterior::McmcConfig;
use crate::randomization::{draw_assignment, far_probabilities, mar_probabilities};
use crate::seeds::{self, tags};
use crate::trial::{run_trial, DesignConfig, EngineError, Scenario, StopReason, TrialResult};
use rand::Rng;

/// Duration quantiles reported in [`OperatingCharacteristics`].
pub const DURATION_PROBS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopCount {
    pub reason: StopReason,
    pub count: u64,
}

/// Aggregates over replicates. Per-combination vectors are row-major over the
/// dose grid (rows are doses of drug A).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub scenario: String,
    pub rows: usize,
    pub cols: usize,
    pub reps: u64,
    pub true_toxicity: Vec<f64>,
    pub true_efficacy: Vec<f64>,
    pub selection_pct: Vec<f64>,
    pub no_selection_pct: f64,
    pub mean_patients: Vec<f64>,
    pub mean_total_patients: f64,
    pub admissible_pct: Vec<f64>,
    pub mean_admissible: f64,
    pub mean_duration: f64,
    pub duration_quantiles: Vec<Quantile>,
    /// Trials stopped for toxicity, for an empty admissible set or because
    /// every arm closed.
    pub early_termination_pct: f64,
    pub stops: Vec<StopCount>,
}

/// Compensated (Neumaier) sum.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() {
            (s - t) + x
        } else {
            (x - t) + s
        };
        s = t;
    }
    s + c
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

const STOP_ORDER: [StopReason; 5] = [
    StopReason::Completed,
    StopReason::Toxicity,
    StopReason::NoAdmissible,
    StopReason::AllArmsClosed,
    StopReason::StoppedInPhaseOne,
];

impl OperatingCharacteristics {
    pub fn from_results(
        scenario: &Scenario,
        config: &DesignConfig,
        results: &[TrialResult],
    ) -> Self {
        let grid = &config.grid;
        let cells = grid.cells();
        let reps = results.len() as u64;
        let n = reps.max(1) as f64;
        let mut selected = vec![0u64; cells];
        let mut patients = vec![0u64; cells];
        let mut admissible = vec![0u64; cells];
        let mut stops = [0u64; STOP_ORDER.len()];
        for r in results {
            if let Some(c) = r.selected {
                selected[grid.index(c)] += 1;
            }
            for (acc, &p) in patients.iter_mut().zip(&r.patients) {
                *acc += u64::from(p);
            }
            for &c in &r.admissible {
                admissible[grid.index(c)] += 1;
            }
            stops[STOP_ORDER
                .iter()
                .position(|&s| s == r.reason)
                .expect("known reason")] += 1;
        }
        let pct = |c: u64| 100.0 * c as f64 / n;
        let mut durations: Vec<f64> = results.iter().map(|r| r.duration).collect();
        let mean_duration = neumaier_sum(durations.iter().copied()) / n;
        durations.sort_by(f64::total_cmp);
        let early: u64 = stops[1] + stops[2] + stops[3];
        OperatingCharacteristics {
            scenario: scenario.name.clone(),
            rows: grid.rows(),
            cols: grid.cols(),
            reps,
            true_toxicity: scenario.toxicity.values.clone(),
            true_efficacy: scenario.efficacy.values.clone(),
            selection_pct: selected.iter().map(|&c| pct(c)).collect(),
            no_selection_pct: pct(reps - selected.iter().sum::<u64>()),
            mean_patients: patients.iter().map(|&c| c as f64 / n).collect(),
            mean_total_patients: patients.iter().sum::<u64>() as f64 / n,
            admissible_pct: admissible.iter().map(|&c| pct(c)).collect(),
            mean_admissible: admissible.iter().sum::<u64>() as f64 / n,
            mean_duration,
            duration_quantiles: DURATION_PROBS
                .iter()
                .map(|&p| Quantile {
                    p,
                    value: quantile(&durations, p),
                })
                .collect(),
            early_termination_pct: pct(early),
            stops: STOP_ORDER
                .iter()
                .zip(stops)
                .map(|(&reason, count)| StopCount { reason, count })
                .collect(),
        }
    }

    fn index(&self, c: Combo) -> usize {
        c.i * self.cols + c.j
    }

    /// Plain-text report. Each quantity is laid out with one row per dose of
    /// drug B, highest first, and one column per dose of drug A.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out += &format!("{}  ({} replicates)\n", self.scenario, self.reps);
        let header: String = (1..=self.rows)
            .map(|i| format!("{:>10}", format!("A{i}")))
            .collect();
        let block = |out: &mut String, title: &str, cell: &dyn Fn(usize) -> String| {
            *out += &format!("\n{title}\n{:>6}{header}\n", "");
            for j in (0..self.cols).rev() {
                *out += &format!("{:>6}", format!("B{}", j + 1));
                for i in 0..self.rows {
                    *out += &format!("{:>10}", cell(self.index(Combo::new(i, j))));
                }
                *out += "\n";
            }
        };
        block(&mut out, "true pr(toxicity), pr(efficacy)", &|k| {
            format!("{:.2},{:.2}", self.true_toxicity[k], self.true_efficacy[k])
        });
        block(&mut out, "selection %", &|k| {
            format!("{:.1}", self.selection_pct[k])
        });
        block(&mut out, "patients", &|k| {
            format!("{:.1}", self.mean_patients[k])
        });
        block(&mut out, "admissible %", &|k| {
            format!("{:.1}", self.admissible_pct[k])
        });
        out += &format!("\nno selection %          {:.1}\n", self.no_selection_pct);
        out += &format!("mean patients           {:.1}\n", self.mean_total_patients);
        out += &format!("mean admissible set     {:.2}\n", self.mean_admissible);
        out += &format!(
            "early termination %     {:.1}\n",
            self.early_termination_pct
        );
        out += &format!("mean duration (months)  {:.1}\n", self.mean_duration);
        out += "duration quantiles     ";
        for q in &self.duration_quantiles {
            out += &format!(" {:.0}%:{:.1}", q.p * 100.0, q.value);
        }
        out += "\nstops                  ";
        for s in &self.stops {
            out += &format!(
                " {}:{}",
                serde_json::to_value(s.reason)
                    .expect("reason")
                    .as_str()
                    .unwrap_or(""),
                s.count
            );
        }
        out += "\n";
        out
    }

    /// One line per combination.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "a,b,true_toxicity,true_efficacy,selection_pct,mean_patients,admissible_pct\n",
        );
        for i in 0..self.rows {
            for j in 0..self.cols {
                let k = self.index(Combo::new(i, j));
                out += &format!(
                    "{},{},{},{},{},{},{}\n",
                    i + 1,
                    j + 1,
                    self.true_toxicity[k],
                    self.true_efficacy[k],
                    self.selection_pct[k],
                    self.mean_patients[k],
                    self.admissible_pct[k]
                );
            }
        }
        out
    }

    /// Scalar summaries as `metric,value` lines.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out += &format!("reps,{}\n", self.reps);
        out += &format!("no_selection_pct,{}\n", self.no_selection_pct);
        out += &format!("mean_total_patients,{}\n", self.mean_total_patients);
        out += &format!("mean_admissible,{}\n", self.mean_admissible);
        out += &format!("early_termination_pct,{}\n", self.early_termination_pct);
        out += &format!("mean_duration,{}\n", self.mean_duration);
        for q in &self.duration_quantiles {
            out += &format!("duration_q{},{}\n", q.p, q.value);
        }
        for s in &self.stops {
            out += &format!(
                "stop_{},{}\n",
                serde_json::to_value(s.reason)
                    .expect("reason")
                    .as_str()
                    .unwrap_or(""),
                s.count
            );
        }
        out
    }
}

/// Per-replicate results as CSV, one line per replicate.
pub fn replicates_csv(config: &DesignConfig, master_seed: u64, results: &[TrialResult]) -> String {
    let grid = &config.grid;
    let mut out = String::from("replicate,seed,selected_a,selected_b,reason,phase1_patients,phase2_patients,admissible,duration");
    for k in 0..grid.cells() {
        let c = grid.combo(k);
        out += &format!(",n_a{}b{}", c.i + 1, c.j + 1);
    }
    out += "\n";
    for (r, t) in results.iter().enumerate() {
        let (a, b) = t.selected.map_or((String::new(), String::new()), |c| {
            ((c.i + 1).to_string(), (c.j + 1).to_string())
        });
        let reason = serde_json::to_value(t.reason).expect("reason");
        out += &format!(
            "{r},{},{a},{b},{},{},{},{},{}",
            seeds::replicate_seed(master_seed, r as u64),
            reason.as_str().unwrap_or(""),
            t.phase1_patients,
            t.phase2_patients,
            t.admissible.len(),
            t.duration
        );
        for p in &t.patients {
            out += &format!(",{p}");
        }
        out += "\n";
    }
    out
}

/// Evaluates `f` for every replicate index, in order, on `parallelism`
/// threads.
pub fn map_replicates<T, E, F>(
    n_reps: u64,
    parallelism: usize,
    f: F,
) -> std::result::Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> std::result::Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallelism > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .expect("thread pool");
        return pool.install(|| (0..n_reps).into_par_iter().map(&f).collect());
    }
    let _ = parallelism;
    (0..n_reps).map(f).collect()
}

/// Runs `n_reps` independent trials and returns their results in replicate
/// order.
pub fn run_replicates(
    scenario: &Scenario,
    config: &DesignConfig,
    n_reps: u64,
    master_seed: u64,
    parallelism: usize,
) -> std::result::Result<Vec<TrialResult>, EngineError> {
    if n_reps == 0 {
        return Err(ModelError::domain("reps: must be at least 1").into());
    }
    config.validate()?;
    scenario.check_grid(&config.grid)?;
    map_replicates(n_reps, parallelism, |r| {
        run_trial(scenario, config, seeds::replicate_seed(master_seed, r))
    })
}

pub fn run_oc(
    scenario: &Scenario,
    config: &DesignConfig,
    n_reps: u64,
    master_seed: u64,
    parallelism: usize,
) -> std::result::Result<OperatingCharacteristics, EngineError> {
    let results = run_replicates(scenario, config, n_reps, master_seed, parallelism)?;
    Ok(OperatingCharacteristics::from_results(
        scenario, config, &results,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArScheme {
    Mar,
    /// Fixed reference, comparing every arm with the first.
    Far,
}

impl std::str::FromStr for ArScheme {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mar" => Ok(ArScheme::Mar),
            "far" => Ok(ArScheme::Far),
            _ => Err(ModelError::domain(format!(
                "scheme: expected mar or far, got {s:?}"
            ))),
        }
    }
}

/// Settings of the randomization-only harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArOptions {
    pub n_patients: u32,
    pub scheme: ArScheme,
    pub eff_priors: HyperPriors,
    pub mcmc: McmcConfig,
}

impl Default for ArOptions {
    fn default() -> Self {
        ArOptions {
            n_patients: 100,
            scheme: ArScheme::Mar,
            eff_priors: HyperPriors::default(),
            mcmc: McmcConfig::default(),
        }
    }
}

/// Arms of a randomization-only study, given by their true response rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArScenario {
    pub name: String,
    pub rates: Vec<f64>,
}

const AR_BUILTIN: [[f64; 3]; 8] = [
    [0.1, 0.2, 0.3],
    [0.2, 0.1, 0.3],
    [0.3, 0.1, 0.2],
    [0.1, 0.3, 0.6],
    [0.3, 0.6, 0.1],
    [0.6, 0.3, 0.1],
    [0.01, 0.4, 0.6],
    [0.01, 0.01, 0.5],
];

impl ArScenario {
    /// One of the eight bundled three-arm scenarios, numbered from 1.
    pub fn builtin(number: usize) -> Result<Self> {
        let rates = AR_BUILTIN.get(number.wrapping_sub(1)).ok_or_else(|| {
            ModelError::domain(format!(
                "no bundled randomization scenario {number} (1 to 8)"
            ))
        })?;
        Ok(ArScenario {
            name: format!("randomization scenario {number}"),
            rates: rates.to_vec(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: ArScenario = toml::from_str(text).map_err(|e| ModelError::domain(e.to_string()))?;
        if s.rates.is_empty() || s.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(ModelError::domain(
                "rates: need at least one rate, each in [0, 1]",
            ));
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArResult {
    pub reps: u64,
    pub scheme: ArScheme,
    pub rates: Vec<f64>,
    /// Mean patients per arm.
    pub mean_allocation: Vec<f64>,
    /// Mean randomization probabilities used for patient `t`, per arm.
    pub trajectory: Vec<Vec<f64>>,
}

struct ArReplicate {
    allocation: Vec<u32>,
    trajectory: Vec<Vec<f64>>,
}

fn ar_replicate(rates: &[f64], opts: &ArOptions, seed: u64) -> Result<ArReplicate> {
    let k = rates.len();
    let all: Vec<usize> = (0..k).collect();
    let mut data = ArmData {
        arms: vec![ArmTally::default(); k],
    };
    let mut outcomes = seeds::rng(seeds::derive(seed, tags::OUTCOMES, 0));
    let mut trajectory = Vec::with_capacity(opts.n_patients as usize);
    for t in 0..u64::from(opts.n_patients) {
        let chain = sample_efficacy_posterior(
            &data,
            &opts.eff_priors,
            &opts.mcmc,
            seeds::derive(seed, tags::EFF_FIT, t),
        )?;
        let rp = match opts.scheme {
            ArScheme::Mar => mar_probabilities(&chain, &all)?,
            ArScheme::Far => far_probabilities(&chain, &all, 0)?,
        };
        let arm = draw_assignment(&rp, &mut seeds::rng(seeds::derive(seed, tags::ASSIGN, t)));
        let response = outcomes.random::<f64>() < rates[arm];
        data.arms[arm].n += 1;
        data.arms[arm].y += u32::from(response);
        trajectory.push(rp.probs);
    }
    Ok(ArReplicate {
        allocation: data.arms.iter().map(|a| a.n).collect(),
        trajectory,
    })
}

/// Phase II randomization alone: `n_patients` patients randomized one at a
/// time among arms with the given true response rates, outcomes observed
/// immediately.
pub fn run_ar_only(
    rates: &[f64],
    opts: &ArOptions,
    n_reps: u64,
    master_seed: u64,
    parallelism: usize,
) -> Result<ArResult> {
    if rates.is_empty() || rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(ModelError::domain(
            "rates: need at least one rate, each in [0, 1]",
        ));
    }
    if n_reps == 0 {
        return Err(ModelError::domain("reps: must be at least 1"));
    }
    if opts.n_patients == 0 {
        return Err(ModelError::domain("n_patients: must be at least 1"));
    }
    let reps = map_replicates(n_reps, parallelism, |r| {
        ar_replicate(rates, opts, seeds::replicate_seed(master_seed, r))
    })?;
    let n = n_reps as f64;
    let k = rates.len();
    let mean_allocation = (0..k)
        .map(|a| reps.iter().map(|r| u64::from(r.allocation[a])).sum::<u64>() as f64 / n)
        .collect();
    let trajectory = (0..opts.n_patients as usize)
        .map(|t| {
            (0..k)
                .map(|a| neumaier_sum(reps.iter().map(|r| r.trajectory[t][a])) / n)
                .collect()
        })
        .collect();
    Ok(ArResult {
        reps: n_reps,
        scheme: opts.scheme,
        rates: rates.to_vec(),
        mean_allocation,
        trajectory,
    })
}

impl ArResult {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "randomization only, {:?}, {} replicates\n",
            self.scheme, self.reps
        )
        .replace("Mar", "MAR")
        .replace("Far", "FAR");
        out += &format!("{:>6}{:>10}{:>12}\n", "arm", "rate", "patients");
        for (k, (r, a)) in self.rates.iter().zip(&self.mean_allocation).enumerate() {
            out += &format!("{:>6}{:>10.3}{:>12.1}\n", k + 1, r, a);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,rate,mean_patients\n");
        for (k, (r, a)) in self.rates.iter().zip(&self.mean_allocation).enumerate() {
            out += &format!("{},{r},{a}\n", k + 1);
        }
        out
    }

    /// Mean randomization probability per patient and arm.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("patient");
        for k in 0..self.rates.len() {
            out += &format!(",arm{}", k + 1);
        }
        out += "\n";
        for (t, p) in self.trajectory.iter().enumerate() {
            out += &(t + 1).to_string();
            for x in p {
                out += &format!(",{x}");
            }
            out += "\n";
        }
        out
    }
}
