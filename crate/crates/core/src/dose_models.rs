//! Copula-type toxicity surface for two combined drugs, its binomial
//! likelihood and gamma-prior posterior density, and the logistic model used
//! to generate true probabilities for misspecification scenarios.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{ModelError, Result};

/// Floor/ceiling applied to toxicity probabilities inside the sampler's
/// likelihood so extreme proposals stay finite.
pub const PROB_GUARD: f64 = 1e-12;

/// A dose combination `(A_i, B_j)`, stored with zero-based indices.
///
/// On the wire a combination is written with one-based dose levels,
/// `{"a": 1, "b": 1}` for `(A1, B1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Combo {
    pub i: usize,
    pub j: usize,
}

impl Combo {
    pub const fn new(i: usize, j: usize) -> Self {
        Combo { i, j }
    }

    /// Builds a combination from one-based dose levels.
    pub fn from_levels(a: usize, b: usize) -> Option<Self> {
        (a >= 1 && b >= 1).then(|| Combo::new(a - 1, b - 1))
    }
}

impl std::fmt::Display for Combo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(A{},B{})", self.i + 1, self.j + 1)
    }
}

#[derive(Serialize, Deserialize)]
struct ComboLevels {
    a: usize,
    b: usize,
}

impl Serialize for Combo {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ComboLevels {
            a: self.i + 1,
            b: self.j + 1,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Combo {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let l = ComboLevels::deserialize(d)?;
        Combo::from_levels(l.a, l.b)
            .ok_or_else(|| serde::de::Error::custom("dose levels are numbered from 1"))
    }
}

/// Prespecified single-agent toxicity probabilities of the two drugs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct DoseGrid {
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Deserialize)]
struct RawGrid {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl TryFrom<RawGrid> for DoseGrid {
    type Error = ModelError;
    fn try_from(raw: RawGrid) -> Result<Self> {
        DoseGrid::new(raw.a, raw.b)
    }
}

fn check_skeleton(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(ModelError::domain(format!(
            "{name}: at least one dose level is required"
        )));
    }
    for (k, &v) in p.iter().enumerate() {
        if !(v > 0.0 && v < 1.0) {
            return Err(ModelError::domain(format!(
                "{name}[{k}] = {v} is not in (0, 1)"
            )));
        }
        if k > 0 && v <= p[k - 1] {
            return Err(ModelError::domain(format!(
                "{name} must be strictly increasing (entry {k})"
            )));
        }
    }
    Ok(())
}

impl DoseGrid {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        check_skeleton("a", &a)?;
        check_skeleton("b", &b)?;
        Ok(DoseGrid { a, b })
    }

    /// Three doses of drug A and two of drug B, as in the melanoma trial.
    pub fn melanoma() -> Self {
        DoseGrid {
            a: vec![0.05, 0.1, 0.2],
            b: vec![0.1, 0.2],
        }
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn rows(&self) -> usize {
        self.a.len()
    }

    pub fn cols(&self) -> usize {
        self.b.len()
    }

    pub fn cells(&self) -> usize {
        self.a.len() * self.b.len()
    }

    pub fn contains(&self, c: Combo) -> bool {
        c.i < self.rows() && c.j < self.cols()
    }

    /// Row-major position of a combination.
    pub fn index(&self, c: Combo) -> usize {
        c.i * self.cols() + c.j
    }

    pub fn combo(&self, index: usize) -> Combo {
        Combo::new(index / self.cols(), index % self.cols())
    }

    pub fn combos(&self) -> impl Iterator<Item = Combo> + '_ {
        (0..self.cells()).map(|k| self.combo(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToxicityParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ToxicityParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let p = ToxicityParams { alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::domain(format!(
                    "{name} = {v} must be positive and finite"
                )));
            }
        }
        Ok(())
    }
}

/// Patients treated (`n`) and dose-limiting toxicities (`x`) per combination,
/// row-major over the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToxicityCounts {
    rows: usize,
    cols: usize,
    n: Vec<u32>,
    x: Vec<u32>,
}

impl ToxicityCounts {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ToxicityCounts {
            rows,
            cols,
            n: vec![0; rows * cols],
            x: vec![0; rows * cols],
        }
    }

    pub fn for_grid(grid: &DoseGrid) -> Self {
        Self::zeros(grid.rows(), grid.cols())
    }

    /// Builds counts from `(combo, n, x)` triples.
    pub fn from_cells(grid: &DoseGrid, cells: &[(Combo, u32, u32)]) -> Result<Self> {
        let mut c = Self::for_grid(grid);
        for &(combo, n, x) in cells {
            if !grid.contains(combo) {
                return Err(ModelError::domain(format!("{combo} is outside the grid")));
            }
            if x > n {
                return Err(ModelError::domain(format!(
                    "{combo}: {x} toxicities among {n} patients"
                )));
            }
            let k = grid.index(combo);
            c.n[k] += n;
            c.x[k] += x;
        }
        Ok(c)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n(&self) -> &[u32] {
        &self.n
    }

    pub fn x(&self) -> &[u32] {
        &self.x
    }

    pub fn total(&self) -> u32 {
        self.n.iter().sum()
    }

    pub fn record(&mut self, cell: usize, dlt: bool) {
        self.n[cell] += 1;
        if dlt {
            self.x[cell] += 1;
        }
    }

    pub fn conforms(&self, grid: &DoseGrid) -> Result<()> {
        if self.rows != grid.rows() || self.cols != grid.cols() {
            return Err(ModelError::domain(format!(
                "counts are {}x{} but the grid is {}x{}",
                self.rows,
                self.cols,
                grid.rows(),
                grid.cols()
            )));
        }
        if self.n.len() != self.rows * self.cols || self.x.len() != self.n.len() {
            return Err(ModelError::domain("count vectors do not match their shape"));
        }
        if let Some(k) = (0..self.n.len()).find(|&k| self.x[k] > self.n[k]) {
            return Err(ModelError::domain(format!(
                "cell {k}: more toxicities than patients"
            )));
        }
        Ok(())
    }
}

/// Gamma prior in shape/rate form (mean = shape / rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        let p = GammaPrior { shape, rate };
        p.validate()?;
        Ok(p)
    }

    /// Mean-one prior `Ga(s, s)`.
    pub const fn mean_one(s: f64) -> Self {
        GammaPrior { shape: s, rate: s }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape.is_finite() && self.shape > 0.0 && self.rate.is_finite() && self.rate > 0.0)
        {
            return Err(ModelError::domain(format!(
                "gamma prior needs positive shape and rate, got ({}, {})",
                self.shape, self.rate
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// Normalized log density; `-inf` outside `(0, inf)`.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }

    /// Log density of `u = ln x` (includes the Jacobian `x`).
    pub fn ln_pdf_log_scale(&self, u: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) + self.shape * u - self.rate * u.exp()
    }
}

/// Priors on the three toxicity-model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToxicityPriors {
    pub alpha: GammaPrior,
    pub beta: GammaPrior,
    pub gamma: GammaPrior,
}

impl Default for ToxicityPriors {
    fn default() -> Self {
        ToxicityPriors {
            alpha: GammaPrior::mean_one(0.5),
            beta: GammaPrior::mean_one(0.5),
            gamma: GammaPrior::mean_one(0.1),
        }
    }
}

impl ToxicityPriors {
    pub fn validate(&self) -> Result<()> {
        self.alpha.validate()?;
        self.beta.validate()?;
        self.gamma.validate()
    }

    pub fn as_array(&self) -> [GammaPrior; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

/// `ln(1 - p^e)` for a single-agent term, stable for tiny and near-one `p^e`.
#[inline]
pub(crate) fn ln_one_minus_pow(p: f64, e: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else if p >= 1.0 {
        f64::NEG_INFINITY
    } else {
        (-(e * p.ln()).exp()).ln_1p()
    }
}

/// Returns `(ln pi, ln(1 - pi))` from the two single-agent terms
/// `la = ln(1 - a^alpha)`, `lb = ln(1 - b^beta)`.
///
/// Works in log space: with `A = exp(-gamma la)` and `B = exp(-gamma lb)`,
/// `1 - pi = (A + B - 1)^(-1/gamma)`.
#[inline]
pub(crate) fn joint_log_terms(la: f64, lb: f64, gamma: f64) -> (f64, f64) {
    if la == f64::NEG_INFINITY || lb == f64::NEG_INFINITY {
        return (0.0, f64::NEG_INFINITY);
    }
    let ln_a = -gamma * la;
    let ln_b = -gamma * lb;
    let (hi, lo) = if ln_a >= ln_b {
        (ln_a, ln_b)
    } else {
        (ln_b, ln_a)
    };
    // ln S = hi + ln(1 + e^{-hi} (e^{lo} - 1))
    let tail = if lo < 700.0 {
        (-hi).exp() * lo.exp_m1()
    } else {
        (lo - hi).exp() - (-hi).exp()
    };
    let ln_s = hi + tail.ln_1p();
    let ln_surv = -ln_s / gamma;
    let ln_surv = ln_surv.min(0.0);
    let pi = -ln_surv.exp_m1();
    (pi.ln(), ln_surv)
}

/// Joint toxicity probability of a combination whose single agents have
/// toxicity probabilities `a` and `b`.
pub fn combo_toxicity(params: &ToxicityParams, a: f64, b: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(ModelError::domain(format!(
            "non-finite single-agent probability ({a}, {b})"
        )));
    }
    params.validate()?;
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return Err(ModelError::domain(format!(
            "single-agent probabilities ({a}, {b}) outside [0, 1]"
        )));
    }
    if a >= 1.0 || b >= 1.0 {
        return Ok(1.0);
    }
    if a <= 0.0 && b <= 0.0 {
        return Ok(0.0);
    }
    let la = ln_one_minus_pow(a, params.alpha);
    let lb = ln_one_minus_pow(b, params.beta);
    let (_, ln_surv) = joint_log_terms(la, lb, params.gamma);
    Ok((-ln_surv.exp_m1()).clamp(0.0, 1.0))
}

/// Row-major `I x J` matrix of toxicity probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ProbMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(ModelError::domain(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ModelError::domain(format!(
                "probability {v} outside [0, 1]"
            )));
        }
        Ok(ProbMatrix { rows, cols, values })
    }

    /// Builds a matrix from rows indexed by the dose of drug A.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ModelError::domain("ragged probability matrix"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn get(&self, c: Combo) -> f64 {
        self.values[c.i * self.cols + c.j]
    }
}

pub fn toxicity_surface(params: &ToxicityParams, grid: &DoseGrid) -> Result<ProbMatrix> {
    params.validate()?;
    let mut values = Vec::with_capacity(grid.cells());
    for &a in grid.a() {
        for &b in grid.b() {
            values.push(combo_toxicity(params, a, b)?);
        }
    }
    Ok(ProbMatrix {
        rows: grid.rows(),
        cols: grid.cols(),
        values,
    })
}

/// Binomial log likelihood of the toxicity data (binomial coefficients
/// omitted). Uses `0 * ln 0 = 0`.
pub fn log_likelihood(
    params: &ToxicityParams,
    grid: &DoseGrid,
    counts: &ToxicityCounts,
) -> Result<f64> {
    counts.conforms(grid)?;
    params.validate()?;
    let la: Vec<f64> = grid
        .a()
        .iter()
        .map(|&a| ln_one_minus_pow(a, params.alpha))
        .collect();
    let lb: Vec<f64> = grid
        .b()
        .iter()
        .map(|&b| ln_one_minus_pow(b, params.beta))
        .collect();
    let mut ll = 0.0;
    for (k, (&n, &x)) in counts.n().iter().zip(counts.x()).enumerate() {
        if n == 0 {
            continue;
        }
        let (ln_pi, ln_surv) =
            joint_log_terms(la[k / grid.cols()], lb[k % grid.cols()], params.gamma);
        if x > 0 {
            ll += f64::from(x) * ln_pi;
        }
        if n > x {
            ll += f64::from(n - x) * ln_surv;
        }
    }
    Ok(ll)
}

/// Sum of the three gamma log densities.
pub fn log_prior(params: &ToxicityParams, priors: &ToxicityPriors) -> f64 {
    priors.alpha.ln_pdf(params.alpha)
        + priors.beta.ln_pdf(params.beta)
        + priors.gamma.ln_pdf(params.gamma)
}

/// Log posterior density of `(alpha, beta, gamma)`, up to the omitted
/// binomial coefficients and the marginal likelihood. The prior densities are
/// normalized, so `log_posterior - log_likelihood == log_prior` exactly.
/// Parameters outside `(0, inf)` give `-inf`.
pub fn log_posterior(
    params: &ToxicityParams,
    grid: &DoseGrid,
    counts: &ToxicityCounts,
    priors: &ToxicityPriors,
) -> Result<f64> {
    priors.validate()?;
    if params.validate().is_err() {
        counts.conforms(grid)?;
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_likelihood(params, grid, counts)? + log_prior(params, priors))
}

/// Coefficients of the logistic truth model
/// `logit pi_ij = b0 + b1 zA_i + b2 zB_j + b3 zA_i zB_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub z_a: Vec<f64>,
    pub z_b: Vec<f64>,
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logistic_truth(coeffs: &LogisticCoeffs) -> Result<ProbMatrix> {
    let all = [coeffs.b0, coeffs.b1, coeffs.b2, coeffs.b3];
    if all
        .iter()
        .chain(&coeffs.z_a)
        .chain(&coeffs.z_b)
        .any(|v| !v.is_finite())
    {
        return Err(ModelError::domain(
            "logistic coefficients and doses must be finite",
        ));
    }
    let mut values = Vec::with_capacity(coeffs.z_a.len() * coeffs.z_b.len());
    for &za in &coeffs.z_a {
        for &zb in &coeffs.z_b {
            values.push(expit(
                coeffs.b0 + coeffs.b1 * za + coeffs.b2 * zb + coeffs.b3 * za * zb,
            ));
        }
    }
    Ok(ProbMatrix {
        rows: coeffs.z_a.len(),
        cols: coeffs.z_b.len(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> ToxicityParams {
        ToxicityParams::new(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn combo_toxicity_examples() {
        let p = unit();
        assert_eq!(combo_toxicity(&p, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(combo_toxicity(&p, 0.2, 1.0).unwrap(), 1.0);
        // 1 - 1 / (1.25 + 1.1111... - 1)
        let expected: f64 = 1.0 - 1.0 / (1.25 + 1.0 / 0.9 - 1.0);
        assert!((expected - 0.265_306_122_448_979_6).abs() < 1e-15);
        assert!((combo_toxicity(&p, 0.2, 0.1).unwrap() - expected).abs() < 1e-14);
        let q = ToxicityParams::new(1.0, 2.0, 1.0).unwrap();
        assert!((combo_toxicity(&q, 0.0, 0.3).unwrap() - 0.09).abs() < 1e-14);
    }

    #[test]
    fn combo_toxicity_rejects_non_finite() {
        assert!(combo_toxicity(&unit(), f64::NAN, 0.1).is_err());
        assert!(combo_toxicity(&unit(), 0.1, f64::INFINITY).is_err());
        assert!(ToxicityParams::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn extreme_gamma_stays_finite() {
        for g in [1e-9, 1e-4, 50.0, 500.0, 1e4] {
            let p = ToxicityParams::new(1.0, 1.0, g).unwrap();
            let v = combo_toxicity(&p, 0.2, 0.1).unwrap();
            assert!(
                v.is_finite() && (0.1..=0.28 + 1e-9).contains(&v),
                "gamma {g}: {v}"
            );
        }
        // gamma -> 0 approaches independence, gamma -> inf approaches max(a, b).
        let near0 =
            combo_toxicity(&ToxicityParams::new(1.0, 1.0, 1e-9).unwrap(), 0.2, 0.1).unwrap();
        assert!((near0 - 0.28).abs() < 1e-6);
        let big = combo_toxicity(&ToxicityParams::new(1.0, 1.0, 1e4).unwrap(), 0.2, 0.1).unwrap();
        assert!((big - 0.2).abs() < 1e-3);
    }

    #[test]
    fn surface_examples() {
        let g1 = DoseGrid::new(vec![0.2], vec![0.1]).unwrap();
        let s = toxicity_surface(&unit(), &g1).unwrap();
        assert!((s.values[0] - 0.265_306_122_448_979_6).abs() < 1e-14);

        let grid = DoseGrid::melanoma();
        let s = toxicity_surface(&unit(), &grid).unwrap();
        assert_eq!((s.rows, s.cols), (3, 2));
        for c in grid.combos() {
            let v = s.get(c);
            assert!(v >= grid.a()[c.i].max(grid.b()[c.j]), "{c}: {v}");
        }

        let near_one = DoseGrid::new(vec![0.1, 1.0 - 1e-15], vec![0.1, 0.2]).unwrap();
        let p = ToxicityParams::new(0.7, 1.3, 2.0).unwrap();
        let s = toxicity_surface(&p, &near_one).unwrap();
        assert!(s.values[2] > 1.0 - 1e-9 && s.values[3] > 1.0 - 1e-9);
    }

    #[test]
    fn log_likelihood_examples() {
        let grid = DoseGrid::new(vec![0.2], vec![0.1]).unwrap();
        let empty = ToxicityCounts::for_grid(&grid);
        assert_eq!(log_likelihood(&unit(), &grid, &empty).unwrap(), 0.0);

        let c = ToxicityCounts::from_cells(&grid, &[(Combo::new(0, 0), 2, 1)]).unwrap();
        let ll = log_likelihood(&unit(), &grid, &c).unwrap();
        let pi: f64 = 0.265_306_122_448_979_6;
        assert!((ll - (pi.ln() + (1.0 - pi).ln())).abs() < 1e-12);
        assert!((ll + 1.635_172_300_303_606).abs() < 1e-12);

        let mismatch = ToxicityCounts::zeros(2, 2);
        assert!(log_likelihood(&unit(), &grid, &mismatch).is_err());
    }

    #[test]
    fn log_likelihood_certain_toxicity() {
        // The grid excludes b = 1 itself; at b = 1 - 1e-12 an observed DLT is
        // certain to machine precision.
        let grid = DoseGrid::new(vec![0.2], vec![1.0 - 1e-12]).unwrap();
        let c = ToxicityCounts::from_cells(&grid, &[(Combo::new(0, 0), 1, 1)]).unwrap();
        let ll = log_likelihood(&unit(), &grid, &c).unwrap();
        assert!(ll.abs() < 1e-9, "{ll}");
        // A non-DLT at a certain-toxicity cell is impossible.
        let c = ToxicityCounts::from_cells(&grid, &[(Combo::new(0, 0), 1, 0)]).unwrap();
        assert!(log_likelihood(&unit(), &grid, &c).unwrap() < -20.0);
    }

    #[test]
    fn log_posterior_decomposes() {
        let grid = DoseGrid::melanoma();
        let priors = ToxicityPriors::default();
        let c = ToxicityCounts::from_cells(
            &grid,
            &[(Combo::new(0, 0), 3, 1), (Combo::new(1, 0), 2, 1)],
        )
        .unwrap();
        let p = ToxicityParams::new(0.8, 1.7, 0.3).unwrap();
        let lp = log_posterior(&p, &grid, &c, &priors).unwrap();
        let ll = log_likelihood(&p, &grid, &c).unwrap();
        let prior_sum =
            priors.alpha.ln_pdf(0.8) + priors.beta.ln_pdf(1.7) + priors.gamma.ln_pdf(0.3);
        assert!((lp - ll - prior_sum).abs() < 1e-12);

        let bad = ToxicityParams {
            alpha: -1.0,
            beta: 1.0,
            gamma: 1.0,
        };
        assert_eq!(
            log_posterior(&bad, &grid, &c, &priors).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn log_posterior_prior_mode() {
        // Ga(2, 2) has its mode at 0.5; with no data the posterior is the prior.
        let grid = DoseGrid::melanoma();
        let g = GammaPrior::mean_one(2.0);
        let priors = ToxicityPriors {
            alpha: g,
            beta: g,
            gamma: g,
        };
        let p = ToxicityParams::new(0.5, 0.5, 0.5).unwrap();
        let lp = log_posterior(&p, &grid, &ToxicityCounts::for_grid(&grid), &priors).unwrap();
        // density of Ga(2,2) at 0.5 is 4 * 0.5 * e^{-1}
        let one = (4.0 * 0.5 * (-1.0f64).exp()).ln();
        assert!((lp - 3.0 * one).abs() < 1e-12);
    }

    #[test]
    fn log_posterior_ratio_matches_direct_evaluation() {
        // Direct evaluation of both factors of the density ratio.
        let grid = DoseGrid::melanoma();
        let priors = ToxicityPriors::default();
        let c = ToxicityCounts::from_cells(
            &grid,
            &[(Combo::new(0, 0), 6, 1), (Combo::new(1, 0), 6, 2)],
        )
        .unwrap();
        let direct = |p: &ToxicityParams| {
            let mut lik = 1.0;
            for (combo, n, x) in [(Combo::new(0, 0), 6, 1), (Combo::new(1, 0), 6, 2)] {
                let (a, b) = (grid.a()[combo.i], grid.b()[combo.j]);
                let s = (1.0 - a.powf(p.alpha)).powf(-p.gamma)
                    + (1.0 - b.powf(p.beta)).powf(-p.gamma)
                    - 1.0;
                let pi = 1.0 - s.powf(-1.0 / p.gamma);
                lik *= pi.powi(x) * (1.0 - pi).powi(n - x);
            }
            let dens = |g: &GammaPrior, v: f64| {
                g.rate.powf(g.shape) / statrs::function::gamma::gamma(g.shape)
                    * v.powf(g.shape - 1.0)
                    * (-g.rate * v).exp()
            };
            lik * dens(&priors.alpha, p.alpha)
                * dens(&priors.beta, p.beta)
                * dens(&priors.gamma, p.gamma)
        };
        let p1 = ToxicityParams::new(1.2, 0.6, 0.9).unwrap();
        let p2 = ToxicityParams::new(0.4, 2.0, 0.05).unwrap();
        let lr = log_posterior(&p1, &grid, &c, &priors).unwrap()
            - log_posterior(&p2, &grid, &c, &priors).unwrap();
        let direct_ratio = direct(&p1) / direct(&p2);
        assert!((lr - direct_ratio.ln()).abs() < 1e-9);
    }

    #[test]
    fn logistic_examples() {
        let zeros = LogisticCoeffs {
            b0: 0.0,
            b1: 0.0,
            b2: 0.0,
            b3: 0.0,
            z_a: vec![0.05, 0.1, 0.2],
            z_b: vec![0.1, 0.2],
        };
        assert!(logistic_truth(&zeros)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.5));
        let low = LogisticCoeffs {
            b0: -50.0,
            ..zeros.clone()
        };
        assert!(logistic_truth(&low)
            .unwrap()
            .values
            .iter()
            .all(|&v| v < 1e-20));
        let c = LogisticCoeffs {
            b0: -2.0,
            b1: 1.0,
            b2: 1.0,
            b3: 0.0,
            ..zeros
        };
        let m = logistic_truth(&c).unwrap();
        // expit(-1.85)
        assert!((m.values[0] - 0.135_872_897_009_094_3).abs() < 1e-12);
    }

    #[test]
    fn saturated_likelihood_peaks_at_observed_rate() {
        // 1x1 grid with alpha = beta = gamma = 1 fixed except the single-agent
        // probability, scanning pi over a dense lattice.
        let (n, x) = (9u32, 3u32);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 1..1000 {
            let b = k as f64 / 1000.0;
            let grid = DoseGrid::new(vec![1e-9], vec![b]).unwrap();
            let c = ToxicityCounts::from_cells(&grid, &[(Combo::new(0, 0), n, x)]).unwrap();
            let p = ToxicityParams::new(1.0, 1.0, 1.0).unwrap();
            let pi = combo_toxicity(&p, 1e-9, b).unwrap();
            let ll = log_likelihood(&p, &grid, &c).unwrap();
            if ll > best.0 {
                best = (ll, pi);
            }
        }
        assert!((best.1 - 1.0 / 3.0).abs() < 2e-3, "{}", best.1);
    }

    #[test]
    fn combo_serde_uses_levels() {
        let s = serde_json::to_string(&Combo::new(0, 1)).unwrap();
        assert_eq!(s, r#"{"a":1,"b":2}"#);
        let c: Combo = serde_json::from_str(r#"{"a":3,"b":1}"#).unwrap();
        assert_eq!(c, Combo::new(2, 0));
        assert!(serde_json::from_str::<Combo>(r#"{"a":0,"b":1}"#).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(DoseGrid::new(vec![], vec![0.1]).is_err());
        assert!(DoseGrid::new(vec![0.2, 0.1], vec![0.1]).is_err());
        assert!(DoseGrid::new(vec![0.0, 0.1], vec![0.1]).is_err());
        assert!(serde_json::from_str::<DoseGrid>(r#"{"a":[0.3,0.2],"b":[0.1]}"#).is_err());
    }

    fn params() -> impl Strategy<Value = ToxicityParams> {
        (0.05f64..8.0, 0.05f64..8.0, 0.001f64..20.0).prop_map(|(a, b, g)| ToxicityParams {
            alpha: a,
            beta: b,
            gamma: g,
        })
    }

    proptest! {
        #[test]
        fn monotone_on_lattice(p in params()) {
            let lattice: Vec<f64> = (0..50).map(|k| k as f64 / 49.0).collect();
            for w in lattice.windows(2) {
                for &other in &[0.0, 0.13, 0.5, 0.97] {
                    let lo = combo_toxicity(&p, w[0], other).unwrap();
                    let hi = combo_toxicity(&p, w[1], other).unwrap();
                    prop_assert!(hi >= lo - 1e-12, "a: {} -> {}", lo, hi);
                    let lo = combo_toxicity(&p, other, w[0]).unwrap();
                    let hi = combo_toxicity(&p, other, w[1]).unwrap();
                    prop_assert!(hi >= lo - 1e-12, "b: {} -> {}", lo, hi);
                }
            }
        }

        #[test]
        fn boundaries(p in params(), v in 0.0f64..1.0) {
            prop_assert_eq!(combo_toxicity(&p, 0.0, 0.0).unwrap(), 0.0);
            prop_assert_eq!(combo_toxicity(&p, 1.0, v).unwrap(), 1.0);
            prop_assert_eq!(combo_toxicity(&p, v, 1.0).unwrap(), 1.0);
        }

        #[test]
        fn single_agent_reduction(p in params(), b in 0.001f64..0.999) {
            let v = combo_toxicity(&p, 0.0, b).unwrap();
            prop_assert!((v - b.powf(p.beta)).abs() < 1e-12);
        }

        #[test]
        fn symmetric_in_agents(p in params(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let swapped = ToxicityParams { alpha: p.beta, beta: p.alpha, gamma: p.gamma };
            let v1 = combo_toxicity(&p, a, b).unwrap();
            let v2 = combo_toxicity(&swapped, b, a).unwrap();
            prop_assert!((v1 - v2).abs() < 1e-13);
        }
    }
}
