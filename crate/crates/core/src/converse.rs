//! Concentration of the information density around capacity.
//!
//! For i.i.d. inputs from the capacity-achieving law, the normalized
//! information density `(1/n) sum_t log W(y_t|x_t) / P_Y(y_t)` exceeds
//! `C + nu` with probability at most `gamma(lambda, P_max) / n` by
//! Chebyshev's inequality. The experiment measures that tail.

use std::f64::consts::LOG2_E;

use serde::{Deserialize, Serialize};

use crate::capacity::{capacity, CapacityResult, OutputDistribution, SolverConfig};
use crate::channel::{ln_poisson_pmf, PoissonChannel, PowerConstraint};
use crate::error::{invalid, Error, Result};
use crate::id::block_power_limit;
use crate::par::{self, Exec};
use crate::stats::Proportion;

/// `(1/n) sum_t log2 W(y_t|x_t) / P_Y(y_t)`.
pub fn info_density(xs: &[f64], ys: &[u64], output: &OutputDistribution, ch: &PoissonChannel) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(invalid(
            "sequences",
            "inputs and outputs must be nonempty and of equal length",
        ));
    }
    let mut total = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let p = *output.pmf.get(y as usize).ok_or(Error::OutsideTruncation {
            y,
            y_max: output.pmf.len() as u64 - 1,
        })?;
        if p <= 0.0 {
            return Err(Error::ZeroOutputMass);
        }
        total += ch.ln_pmf(x, y)? - p.ln();
    }
    Ok(total / xs.len() as f64 * LOG2_E)
}

/// Closed-form variance proxy, all logarithms base 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaBound {
    pub lambda: f64,
    pub p_max: f64,
    /// `log2(1 + P_max / lambda)`
    pub alpha: f64,
    /// `P_max`
    pub beta: f64,
    pub gamma: f64,
}

/// `gamma = log2(e) (log2(e) (lambda + P_max)^2 / lambda + P_max + 1)
///        + alpha^2 (lambda + P_max)^2 + 2 alpha beta (lambda + P_max) + beta^2`.
pub fn gamma_bound(lambda: f64, p_max: f64) -> Result<GammaBound> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda", "the bound needs a positive dark current"));
    }
    if !(p_max > 0.0 && p_max.is_finite()) {
        return Err(invalid("p_max", "must be positive"));
    }
    let alpha = (1.0 + p_max / lambda).log2();
    let beta = p_max;
    let s = lambda + p_max;
    let gamma =
        LOG2_E * (LOG2_E * s * s / lambda + p_max + 1.0) + alpha * alpha * s * s + 2.0 * alpha * beta * s + beta * beta;
    Ok(GammaBound {
        lambda,
        p_max,
        alpha,
        beta,
        gamma,
    })
}

/// Per-letter information density table over the support and the output
/// range, extended in closed form past the truncation.
struct DensityTable<'a> {
    ch: &'a PoissonChannel,
    support: Vec<(f64, f64)>,
    table: Vec<Vec<f64>>,
}

impl<'a> DensityTable<'a> {
    fn new(ch: &'a PoissonChannel, cap: &CapacityResult) -> Self {
        let support = cap.distribution.points().to_vec();
        let out = OutputDistribution::of(&cap.distribution, ch);
        let table = support
            .iter()
            .map(|&(x, _)| {
                out.pmf
                    .iter()
                    .enumerate()
                    .map(|(y, &p)| (ln_poisson_pmf(ch.mean(x), y as u64) - p.ln()) * LOG2_E)
                    .collect()
            })
            .collect();
        Self { ch, support, table }
    }

    fn value(&self, j: usize, y: u64) -> f64 {
        if let Some(&v) = self.table[j].get(y as usize) {
            return v;
        }
        let ln_out = self
            .support
            .iter()
            .map(|&(x, p)| p.ln() + ln_poisson_pmf(self.ch.mean(x), y))
            .fold(f64::NEG_INFINITY, |a, b| {
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            });
        (ln_poisson_pmf(self.ch.mean(self.support[j].0), y) - ln_out) * LOG2_E
    }

    /// Exact `E[i]` and `E[i^2]` of the per-letter density under the law.
    fn moments(&self) -> (f64, f64) {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (j, &(x, p)) in self.support.iter().enumerate() {
            for (y, &v) in self.table[j].iter().enumerate() {
                let w = p * ln_poisson_pmf(self.ch.mean(x), y as u64).exp();
                m1 += w * v;
                m2 += w * v * v;
            }
        }
        (m1, m2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverseConfig {
    pub nu: f64,
    pub samples: u64,
    pub seed: u64,
}

impl Default for ConverseConfig {
    fn default() -> Self {
        Self {
            nu: 0.1,
            samples: 100_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverseRow {
    pub n: usize,
    pub nu: f64,
    pub empirical_tail: f64,
    pub tail: Proportion,
    pub chebyshev_bound: f64,
    pub samples: u64,
    pub seed: u64,
    pub mean_density: f64,
    /// Empirical 0.999 quantile of the block density.
    pub quantile_999: f64,
    /// Empirical variance of a single letter's density.
    pub letter_variance: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverseReport {
    pub capacity_bits: f64,
    pub gamma: GammaBound,
    /// Exact per-letter mean and variance of the density.
    pub letter_mean: f64,
    pub letter_variance: f64,
    pub rows: Vec<ConverseRow>,
    pub within_bound: bool,
    /// Tails strictly decrease along the row order.
    pub tails_decreasing: bool,
}

/// Block density samples for one `n`.
fn sample_blocks(
    table: &DensityTable,
    pc: &PowerConstraint,
    n: usize,
    cfg: &ConverseConfig,
    exec: Exec,
) -> Vec<(f64, f64, f64)> {
    let limit = block_power_limit(pc, n);
    let root = par::derive_seed(cfg.seed, n as u64);
    let cdf: Vec<f64> = table
        .support
        .iter()
        .scan(0.0, |acc, &(_, p)| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    exec.map(cfg.samples as usize, |s| {
        use rand::Rng;
        let mut rng = par::stream(root, s as u64);
        let idx: Vec<usize> = loop {
            let idx: Vec<usize> = (0..n)
                .map(|_| {
                    let u: f64 = rng.gen();
                    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
                })
                .collect();
            if idx.iter().map(|&j| table.support[j].0).sum::<f64>() <= limit {
                break idx;
            }
        };
        let mut sum = 0.0;
        let mut sq = 0.0;
        for &j in &idx {
            let y = table.ch.sample(table.support[j].0, &mut rng);
            let v = table.value(j, y);
            sum += v;
            sq += v * v;
        }
        (sum / n as f64, sum, sq)
    })
}

/// Tail of the information density at each blocklength against `gamma / n`.
pub fn converse_experiment(
    ch: &PoissonChannel,
    pc: &PowerConstraint,
    ns: &[usize],
    cfg: &ConverseConfig,
    exec: Exec,
) -> Result<ConverseReport> {
    let cap = capacity(ch, pc, &SolverConfig::default())?.require_certified()?;
    converse_experiment_with(ch, pc, &cap, ns, cfg, exec)
}

/// As [`converse_experiment`], reusing a solved capacity.
pub fn converse_experiment_with(
    ch: &PoissonChannel,
    pc: &PowerConstraint,
    cap: &CapacityResult,
    ns: &[usize],
    cfg: &ConverseConfig,
    exec: Exec,
) -> Result<ConverseReport> {
    if !(cfg.nu > 0.0) {
        return Err(invalid("nu", "must be positive"));
    }
    if ns.is_empty() || ns.contains(&0) || cfg.samples == 0 {
        return Err(invalid("n", "need positive blocklengths and samples"));
    }
    let gamma = gamma_bound(ch.dark_current(), ch.p_max())?;
    let table = DensityTable::new(ch, cap);
    let (m1, m2) = table.moments();
    let threshold = cap.capacity_bits + cfg.nu;
    let rows: Vec<ConverseRow> = ns
        .iter()
        .map(|&n| {
            let samples = sample_blocks(&table, pc, n, cfg, exec);
            let mut dens: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let hits = dens.iter().filter(|&&d| d >= threshold).count() as u64;
            let letters = (n as u64 * cfg.samples) as f64;
            let lsum: f64 = samples.iter().map(|s| s.1).sum();
            let lsq: f64 = samples.iter().map(|s| s.2).sum();
            let lmean = lsum / letters;
            let letter_variance = (lsq / letters - lmean * lmean) * letters / (letters - 1.0).max(1.0);
            dens.sort_by(f64::total_cmp);
            let qi = ((dens.len() as f64 * 0.999).ceil() as usize).clamp(1, dens.len()) - 1;
            let tail = Proportion::new(hits, cfg.samples);
            let chebyshev_bound = gamma.gamma / n as f64;
            ConverseRow {
                n,
                nu: cfg.nu,
                empirical_tail: tail.rate,
                tail,
                chebyshev_bound,
                samples: cfg.samples,
                seed: cfg.seed,
                mean_density: dens.iter().sum::<f64>() / dens.len() as f64,
                quantile_999: dens[qi],
                letter_variance,
                within_bound: tail.rate <= chebyshev_bound,
            }
        })
        .collect();
    let within_bound = rows.iter().all(|r| r.within_bound);
    let tails_decreasing = rows.windows(2).all(|w| w[1].empirical_tail < w[0].empirical_tail);
    Ok(ConverseReport {
        capacity_bits: cap.capacity_bits,
        gamma,
        letter_mean: m1,
        letter_variance: m2 - m1 * m1,
        rows,
        within_bound,
        tails_decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::DiscreteInputDistribution;

    #[test]
    fn gamma_closed_form() {
        let g = gamma_bound(1.0, 1.0).unwrap();
        assert_eq!(g.alpha, 1.0);
        assert_eq!(g.beta, 1.0);
        assert!((g.gamma - 20.2108).abs() < 1e-3, "{}", g.gamma);
        assert!(gamma_bound(0.0, 1.0).is_err());
        assert!(gamma_bound(1.0, 0.0).is_err());
        let a = gamma_bound(1.0, 1.0).unwrap().gamma;
        let b = gamma_bound(1.0, 2.0).unwrap().gamma;
        let c = gamma_bound(1.0, 5.0).unwrap().gamma;
        assert!(a < b && b < c);
        // linear growth in lambda once the constant terms are negligible
        let r = gamma_bound(1e4, 1.0).unwrap().gamma / gamma_bound(1e3, 1.0).unwrap().gamma;
        assert!((r - 10.0).abs() <= 2.5, "{r}");
        let slope = gamma_bound(1e6, 1.0).unwrap().gamma / 1e6;
        assert!((slope - LOG2_E * LOG2_E).abs() < 1e-3, "{slope}");
    }

    #[test]
    fn uninformative_rows_have_zero_density() {
        // one input: the output law equals the channel row
        let ch = PoissonChannel::new(2.0, 5.0).unwrap();
        let d = DiscreteInputDistribution::point_mass(3.0).unwrap();
        let out = OutputDistribution::of(&d, &ch);
        let v = info_density(&[3.0, 3.0, 3.0], &[0, 5, 11], &out, &ch).unwrap();
        assert!(v.abs() < 1e-12);
        assert!(info_density(&[3.0], &[0, 1], &out, &ch).is_err());
        assert!(matches!(
            info_density(&[3.0], &[10_000], &out, &ch),
            Err(Error::OutsideTruncation { .. })
        ));
    }

    #[test]
    fn unreachable_threshold_has_no_tail() {
        let ch = PoissonChannel::new(1.0, 5.0).unwrap();
        let pc = PowerConstraint::peak(5.0).unwrap();
        let cfg = ConverseConfig {
            nu: 50.0,
            samples: 2000,
            seed: 3,
        };
        let r = converse_experiment(&ch, &pc, &[1, 10], &cfg, Exec::default()).unwrap();
        assert!(r.rows.iter().all(|row| row.empirical_tail == 0.0));
        assert!(r.within_bound);
        assert!(r.letter_variance <= r.gamma.gamma);
    }
}
