//! Deterministic quadrature for the toxicity posterior.
//!
//! Validation oracle for the MCMC sampler: posterior functionals are computed
//! by tensor-product trapezoid rules over `(ln alpha, ln beta, ln gamma)`.
//! Each axis covers the region where the log-scale prior density is within
//! `e^-16` of its peak (well over 99.9% of prior mass) with a coarse segment on
//! the far-left tail and a fine one elsewhere. The integrands vanish at both
//! ends, where the trapezoid rule converges very fast. The surface is evaluated
//! with its own arithmetic rather than the sampler's.
//!
//! `pr(pi_ij < phi_t)` has a discontinuous integrand. Toxicity decreases in
//! alpha, so for each `(beta, gamma)` the alpha crossing is solved in closed
//! form and the alpha rule is cut there.
//!
//! The error estimate is the largest change of any functional between the
//! rule and the same rule at half resolution; calls fail when it exceeds
//! [`ORACLE_TOLERANCE`].

use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::dose_models::{DoseGrid, GammaPrior, ToxicityCounts, ToxicityPriors};
use crate::error::{ModelError, Result};

pub const ORACLE_TOLERANCE: f64 = 0.005;
/// Largest dataset (total patients) the oracle accepts.
pub const ORACLE_MAX_PATIENTS: u32 = 40;

const TAIL_DROP: f64 = 16.0;
const FINE_STEP: f64 = 0.1;
const COARSE_STEP: f64 = 1.0;
const FINE_FROM: f64 = -6.0;
/// Prior mass below `e^LUMP_BELOW` sits on a single node there; the surface
/// is flat in each parameter that small.
const LUMP_BELOW: f64 = -10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSummary {
    /// Posterior means of `(alpha, beta, gamma)`.
    pub mean_params: [f64; 3],
    /// Posterior mean of each cell's toxicity probability (row-major).
    pub mean_surface: Vec<f64>,
    /// `pr(pi_ij < phi_t | data)` per cell.
    pub prob_below: Vec<f64>,
    pub phi_t: f64,
    pub error_estimate: f64,
}

/// Nodes and trapezoid weights on the log scale. The first weight also
/// carries the lumped left tail.
struct Axis {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn trapezoid_segment(
    lo: f64,
    hi: f64,
    intervals: usize,
    nodes: &mut Vec<f64>,
    weights: &mut Vec<f64>,
) {
    let n = intervals.max(1);
    let h = (hi - lo) / n as f64;
    let start = if nodes.is_empty() { 0 } else { 1 };
    if start == 1 {
        *weights.last_mut().unwrap() += h / 2.0;
    }
    for k in start..=n {
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        nodes.push(lo + h * k as f64);
        weights.push(w * h);
    }
}

/// Solves `f(u) = target` for `u` by bisection on a monotone bracket.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, target: f64) -> f64 {
    let increasing = f(hi) > f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < target) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Log density of `ln x` when `x ~ Ga(shape, rate)`.
fn log_prior(p: &GammaPrior, u: f64) -> f64 {
    p.shape * p.rate.ln() - ln_gamma(p.shape) + p.shape * u - p.rate * u.exp()
}

impl Axis {
    fn for_prior(prior: &GammaPrior, resolution: usize) -> Axis {
        let dens = |u: f64| log_prior(prior, u);
        let mode = (prior.shape / prior.rate).ln();
        let peak = dens(mode);
        let mut span = 1.0;
        while dens(mode - span) > peak - TAIL_DROP {
            span *= 2.0;
        }
        let lo = bisect(dens, mode - span, mode, peak - TAIL_DROP);
        let mut span = 1.0;
        while dens(mode + span) > peak - TAIL_DROP {
            span *= 2.0;
        }
        let hi = bisect(dens, mode, mode + span, peak - TAIL_DROP);

        let lumped = lo < LUMP_BELOW && hi > LUMP_BELOW + 1.0;
        let lo = if lumped { LUMP_BELOW } else { lo };
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let split = FINE_FROM.max(lo).min(hi);
        if split > lo + 1e-12 {
            let n = ((split - lo) / COARSE_STEP).ceil() as usize;
            trapezoid_segment(lo, split, n * resolution, &mut nodes, &mut weights);
        }
        let n = (((hi - split) / FINE_STEP).ceil() as usize).max(40);
        trapezoid_segment(split, hi, n * resolution, &mut nodes, &mut weights);
        if lumped {
            weights[0] += gamma_lr(prior.shape, prior.rate * lo.exp()) / dens(lo).exp();
        }
        Axis { nodes, weights }
    }
}

/// `ln(1 - e^t)` for `t < 0`.
fn ln_one_minus_exp(t: f64) -> f64 {
    if t < -std::f64::consts::LN_2 {
        (-t.exp()).ln_1p()
    } else {
        (-t.exp_m1()).ln()
    }
}

/// `(1 - x^e)^-gamma - 1` for every dose `x` given by its log.
fn excess(ln_x: &[f64], e: f64, gamma: f64, out: &mut [f64]) {
    for (o, &l) in out.iter_mut().zip(ln_x) {
        *o = (-gamma * ln_one_minus_exp(e * l)).exp_m1();
    }
}

/// Log-likelihood of the counts, with each cell's toxicity written to `pis`.
/// `1 - pi = (1 + ea + eb)^(-1/gamma)`.
fn log_lik(ea: &[f64], eb: &[f64], gamma: f64, counts: &ToxicityCounts, pis: &mut [f64]) -> f64 {
    let cols = eb.len();
    let mut ll = 0.0;
    for (k, pi) in pis.iter_mut().enumerate() {
        let ln_s = -(ea[k / cols] + eb[k % cols]).ln_1p() / gamma;
        *pi = -ln_s.exp_m1();
        let (n, x) = (counts.n()[k], counts.x()[k]);
        if x > 0 {
            ll += f64::from(x) * pi.ln();
        }
        if n > x {
            ll += f64::from(n - x) * ln_s;
        }
    }
    ll
}

struct Accumulator {
    mass: f64,
    params: [f64; 3],
    mean: Vec<f64>,
    below: Vec<f64>,
}

/// Posterior density on one `gamma` plane, unnormalized and without the
/// alpha and beta weights.
struct Plane<'a> {
    ln_a: &'a [f64],
    ln_b: &'a [f64],
    priors: [GammaPrior; 3],
    counts: &'a ToxicityCounts,
    gamma: f64,
    offset: f64,
}

impl Plane<'_> {
    fn density(&self, u_alpha: f64, u_beta: f64) -> f64 {
        let mut ea = vec![0.0; self.ln_a.len()];
        let mut eb = vec![0.0; self.ln_b.len()];
        let mut pis = vec![0.0; ea.len() * eb.len()];
        excess(self.ln_a, u_alpha.exp(), self.gamma, &mut ea);
        excess(self.ln_b, u_beta.exp(), self.gamma, &mut eb);
        let ll = log_lik(&ea, &eb, self.gamma, self.counts, &mut pis);
        self.weighted(u_alpha, u_beta, ll)
    }

    fn weighted(&self, u_alpha: f64, u_beta: f64, ll: f64) -> f64 {
        let d = (log_prior(&self.priors[0], u_alpha)
            + log_prior(&self.priors[1], u_beta)
            + self.offset
            + ll)
            .exp();
        if d.is_finite() {
            d
        } else {
            0.0
        }
    }
}

fn integrate(
    grid: &DoseGrid,
    counts: &ToxicityCounts,
    priors: &ToxicityPriors,
    phi_t: f64,
    resolution: usize,
) -> Accumulator {
    let axes: Vec<Axis> = priors
        .as_array()
        .iter()
        .map(|p| Axis::for_prior(p, resolution))
        .collect();
    let cells = grid.cells();
    let cols = grid.cols();
    let ln_a: Vec<f64> = grid.a().iter().map(|v| v.ln()).collect();
    let ln_b: Vec<f64> = grid.b().iter().map(|v| v.ln()).collect();
    let (ua, ub) = (&axes[0].nodes, &axes[1].nodes);
    let (na, nb) = (ua.len(), ub.len());
    let mut acc = Accumulator {
        mass: 0.0,
        params: [0.0; 3],
        mean: vec![0.0; cells],
        below: vec![0.0; cells],
    };
    let mut ea = vec![0.0; na * ln_a.len()];
    let mut eb = vec![0.0; nb * ln_b.len()];
    // dens[ib][ia] and dens_t[ia][ib]
    let mut dens = vec![vec![0.0; na]; nb];
    let mut dens_t = vec![vec![0.0; nb]; na];
    let mut pis = vec![0.0; cells];
    for (ig, &ug) in axes[2].nodes.iter().enumerate() {
        let gamma = ug.exp();
        let plane = Plane {
            ln_a: &ln_a,
            ln_b: &ln_b,
            priors: priors.as_array(),
            counts,
            gamma,
            offset: axes[2].weights[ig].ln() + log_prior(&priors.gamma, ug),
        };
        for (ia, &u) in ua.iter().enumerate() {
            excess(
                &ln_a,
                u.exp(),
                gamma,
                &mut ea[ia * ln_a.len()..(ia + 1) * ln_a.len()],
            );
        }
        for (ib, &u) in ub.iter().enumerate() {
            excess(
                &ln_b,
                u.exp(),
                gamma,
                &mut eb[ib * ln_b.len()..(ib + 1) * ln_b.len()],
            );
        }
        for ib in 0..nb {
            let eb = &eb[ib * ln_b.len()..(ib + 1) * ln_b.len()];
            for ia in 0..na {
                let ea = &ea[ia * ln_a.len()..(ia + 1) * ln_a.len()];
                let ll = log_lik(ea, eb, gamma, counts, &mut pis);
                let d = plane.weighted(ua[ia], ub[ib], ll);
                dens[ib][ia] = d;
                dens_t[ia][ib] = d;
                let w = axes[0].weights[ia] * axes[1].weights[ib] * d;
                if w == 0.0 {
                    continue;
                }
                acc.mass += w;
                acc.params[0] += w * ua[ia].exp();
                acc.params[1] += w * ub[ib].exp();
                acc.params[2] += w * gamma;
                for (m, pi) in acc.mean.iter_mut().zip(&pis) {
                    *m += w * pi;
                }
            }
        }
        let cum_a: Vec<Vec<f64>> = dens.iter().map(|f| cumulative(ua, f)).collect();
        let cum_b: Vec<Vec<f64>> = dens_t.iter().map(|f| cumulative(ub, f)).collect();
        for k in 0..cells {
            let (la, lb) = (ln_a[k / cols], ln_b[k % cols]);
            if let Some(p) = below_on_plane(
                &plane, ua, ub, &dens, &dens_t, &cum_a, &cum_b, la, lb, phi_t,
            ) {
                acc.below[k] += p;
            }
        }
    }
    acc
}

/// Mass of `pi < phi` for one cell on one `gamma` plane. The region lies above
/// a boundary curve with one asymptote in each direction; it is split at the
/// curve's knee, integrating over alpha first beyond it in beta and over beta
/// first beyond it in alpha, so that each inner integral has a smooth limit.
#[allow(clippy::too_many_arguments)]
fn below_on_plane(
    plane: &Plane,
    ua: &[f64],
    ub: &[f64],
    dens: &[Vec<f64>],
    dens_t: &[Vec<f64>],
    cum_a: &[Vec<f64>],
    cum_b: &[Vec<f64>],
    la: f64,
    lb: f64,
    phi: f64,
) -> Option<f64> {
    let gamma = plane.gamma;
    let (ka, kb) = knee(la, lb, gamma, phi)?;
    let (a_top, b_top) = (ua[ua.len() - 1], ub[ub.len() - 1]);
    let over_alpha =
        |u_beta: f64, line: &[f64], cum: &[f64]| match crossing(la, lb, u_beta.exp(), gamma, phi) {
            Some(c) => cut_integral(ua, line, cum, c, a_top, |u| plane.density(u, u_beta)),
            None => 0.0,
        };
    let g1: Vec<f64> = (0..ub.len())
        .map(|ib| {
            if ub[ib] < kb {
                0.0
            } else {
                over_alpha(ub[ib], &dens[ib], &cum_a[ib])
            }
        })
        .collect();
    let part1 = cut_integral(ub, &g1, &cumulative(ub, &g1), kb, b_top, |u| {
        let line: Vec<f64> = ua.iter().map(|&x| plane.density(x, u)).collect();
        over_alpha(u, &line, &cumulative(ua, &line))
    });
    let g2: Vec<f64> = (0..ua.len())
        .map(|ia| {
            if ua[ia] < ka {
                return 0.0;
            }
            match crossing(lb, la, ua[ia].exp(), gamma, phi) {
                Some(c) => cut_integral(ub, &dens_t[ia], &cum_b[ia], c, kb, |u| {
                    plane.density(ua[ia], u)
                }),
                None => 0.0,
            }
        })
        .collect();
    // the inner range is empty at the knee itself
    let part2 = cut_integral(ua, &g2, &cumulative(ua, &g2), ka, a_top, |_| 0.0);
    Some(part1 + part2)
}

/// Running trapezoid integral of `f` over the nodes `u`.
fn cumulative(u: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(u.len());
    let mut s = 0.0;
    for j in 0..u.len() {
        if j > 0 {
            s += 0.5 * (u[j] - u[j - 1]) * (f[j - 1] + f[j]);
        }
        out.push(s);
    }
    out
}

/// Trapezoid integral of `f` from `lo` to `hi`, with end points falling
/// between nodes evaluated by `at`.
fn cut_integral(
    u: &[f64],
    f: &[f64],
    cum: &[f64],
    lo: f64,
    hi: f64,
    mut at: impl FnMut(f64) -> f64,
) -> f64 {
    let n = u.len();
    let (lo, hi) = (lo.max(u[0]), hi.min(u[n - 1]));
    if lo >= hi || lo.is_nan() || hi.is_nan() {
        return 0.0;
    }
    // first node above lo, last node below hi
    let j1 = u.partition_point(|&x| x <= lo);
    let j2 = u.partition_point(|&x| x < hi) - 1;
    let f_lo = if lo == u[j1 - 1] { f[j1 - 1] } else { at(lo) };
    let f_hi = if hi == u[j2 + 1] { f[j2 + 1] } else { at(hi) };
    if j1 > j2 {
        return 0.5 * (hi - lo) * (f_lo + f_hi);
    }
    0.5 * (u[j1] - lo) * (f_lo + f[j1]) + (cum[j2] - cum[j1]) + 0.5 * (hi - u[j2]) * (f[j2] + f_hi)
}

/// Point of the boundary `pi = phi` in `(ln alpha, ln beta)` equally far from
/// its two asymptotes.
fn knee(ln_a: f64, ln_b: f64, gamma: f64, phi: f64) -> Option<(f64, f64)> {
    let a0 = (phi.ln() / ln_a).ln();
    let b0 = (phi.ln() / ln_b).ln();
    let gap = |u_beta: f64| match crossing(ln_a, ln_b, u_beta.exp(), gamma, phi) {
        Some(u) => u - a0 - (u_beta - b0),
        None => f64::INFINITY,
    };
    let (mut lo, mut hi) = (b0, b0 + 64.0);
    if gap(hi) > 0.0 {
        return None;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let kb = 0.5 * (lo + hi);
    Some((a0 + (kb - b0), kb))
}

/// The `ln alpha` at which a cell's toxicity equals `phi`, if it does
/// anywhere; toxicity lies below `phi` for all larger alpha. With the two
/// doses swapped this gives the `ln beta` crossing.
fn crossing(ln_a: f64, ln_b: f64, beta: f64, gamma: f64, phi: f64) -> Option<f64> {
    let e_phi = (-gamma * (-phi).ln_1p()).exp_m1();
    let e_b = (-gamma * ln_one_minus_exp(beta * ln_b)).exp_m1();
    let d = e_phi - e_b;
    if !(d > 0.0 && d.is_finite()) {
        return None;
    }
    // (1 - a^alpha)^-gamma - 1 = d
    let ln_a_alpha = (-(-d.ln_1p() / gamma).exp_m1()).ln();
    let alpha = ln_a_alpha / ln_a;
    if alpha > 0.0 && alpha.is_finite() {
        Some(alpha.ln())
    } else if alpha == 0.0 {
        Some(f64::NEG_INFINITY)
    } else {
        None
    }
}

fn summarize(acc: &Accumulator, phi_t: f64) -> QuadratureSummary {
    QuadratureSummary {
        mean_params: acc.params.map(|v| v / acc.mass),
        mean_surface: acc.mean.iter().map(|v| v / acc.mass).collect(),
        prob_below: acc.below.iter().map(|v| v / acc.mass).collect(),
        phi_t,
        error_estimate: 0.0,
    }
}

/// Posterior means and `pr(pi_ij < phi_t)` by quadrature, for small datasets.
pub fn quadrature_oracle(
    counts: &ToxicityCounts,
    grid: &DoseGrid,
    priors: &ToxicityPriors,
    phi_t: f64,
) -> Result<QuadratureSummary> {
    counts.conforms(grid)?;
    priors.validate()?;
    if counts.total() > ORACLE_MAX_PATIENTS {
        return Err(ModelError::domain(format!(
            "quadrature oracle accepts at most {ORACLE_MAX_PATIENTS} patients"
        )));
    }
    let coarse = summarize(&integrate(grid, counts, priors, phi_t, 1), phi_t);
    let acc = integrate(grid, counts, priors, phi_t, 2);
    if !(acc.mass > 0.0 && acc.mass.is_finite()) {
        return Err(ModelError::Inference(
            "quadrature found no posterior mass".into(),
        ));
    }
    let mut fine = summarize(&acc, phi_t);
    let diff = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    // Parameter means are reported but not gated: gamma's long right tail
    // makes its mean converge slowly while leaving the surface unaffected.
    fine.error_estimate = diff(&fine.mean_surface, &coarse.mean_surface)
        .max(diff(&fine.prob_below, &coarse.prob_below));
    if fine.error_estimate > ORACLE_TOLERANCE {
        return Err(ModelError::Inference(format!(
            "quadrature did not converge (estimated error {:.4})",
            fine.error_estimate
        )));
    }
    Ok(fine)
}
