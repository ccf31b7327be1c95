//! Exact probabilities and sampling for the discrete-time Poisson channel.
//!
//! The one-shot law is `Y ~ Poisson(gain * x + dark_current)`. The output
//! alphabet is truncated at `y_max`, chosen so that the missing upper tail
//! at the peak input is below [`TRUNCATION_TAIL`]. All divergences are
//! computed in nats internally; public functions that return information
//! quantities say which unit they use.

use std::f64::consts::LOG2_E;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Upper-tail mass allowed to fall outside the truncated output alphabet.
pub const TRUNCATION_TAIL: f64 = 1e-12;

/// Tolerance on row sums of a [`GenericDmc`].
pub const ROW_SUM_TOL: f64 = 1e-12;

const LN_FACT_TABLE: usize = 512;

fn ln_factorial_table() -> &'static [f64] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(LN_FACT_TABLE);
        let mut acc = 0.0f64;
        t.push(0.0);
        for k in 1..LN_FACT_TABLE {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    })
}

/// `ln(k!)`: exact summation below 512, Stirling series above.
pub fn ln_factorial(k: u64) -> f64 {
    if (k as usize) < LN_FACT_TABLE {
        return ln_factorial_table()[k as usize];
    }
    let x = k as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (x - 0.5) * x.ln() - x
        + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

/// `ln Poisson(y; mean)`, with the degenerate law at `mean == 0`.
pub fn ln_poisson_pmf(mean: f64, y: u64) -> f64 {
    if mean == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    y as f64 * mean.ln() - mean - ln_factorial(y)
}

/// Smallest `y` such that `Pr{Poisson(mean) > y} < tail`.
pub fn poisson_quantile_tail(mean: f64, tail: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let top = (mean + 40.0 * mean.sqrt() + 60.0).ceil() as u64;
    let pmf: Vec<f64> = (0..=top).map(|y| ln_poisson_pmf(mean, y).exp()).collect();
    // suffix[y] = Pr{Y >= y}, summed from the far tail for accuracy
    let mut suffix = vec![0.0; pmf.len() + 1];
    for y in (0..pmf.len()).rev() {
        suffix[y] = suffix[y + 1] + pmf[y];
    }
    (0..=top).find(|&y| suffix[y as usize + 1] < tail).unwrap_or(top)
}

/// Draws from `Poisson(mean)`.
///
/// Inversion by sequential search below a mean of 30; Hörmann's
/// transformed rejection (PTRS) above.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 30.0 {
        let u: f64 = rng.gen();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            let next = cdf + p;
            if next == cdf {
                break;
            }
            cdf = next;
        }
        return k;
    }
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        let v: f64 = rng.gen();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -mean + k * loglam - ln_factorial(k as u64);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// A memoryless channel with nonnegative real input and truncated
/// integer output, evaluable at any input in `[0, input_bound()]`.
pub trait ChannelLaw: Sync {
    /// Number of output symbols, `y_max + 1`.
    fn output_len(&self) -> usize;

    /// Writes the output pmf for input `x` into `out[..output_len()]`.
    fn row_into(&self, x: f64, out: &mut [f64]);

    /// Largest input covered by the truncation certificate.
    fn input_bound(&self) -> f64;

    fn row(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.output_len()];
        self.row_into(x, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonChannel {
    dark_current: f64,
    gain: f64,
    p_max: f64,
    y_max: u64,
}

impl PoissonChannel {
    /// Channel with unit gain, truncated for inputs up to `p_max`.
    pub fn new(dark_current: f64, p_max: f64) -> Result<Self> {
        Self::with_gain(dark_current, 1.0, p_max)
    }

    pub fn with_gain(dark_current: f64, gain: f64, p_max: f64) -> Result<Self> {
        if !(dark_current >= 0.0) || !dark_current.is_finite() {
            return Err(invalid(
                "dark_current",
                format!("{dark_current} is not a finite nonnegative value"),
            ));
        }
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(invalid("gain", format!("{gain} must be positive")));
        }
        if !(p_max >= 0.0) || !p_max.is_finite() {
            return Err(invalid("p_max", format!("{p_max} is not a finite nonnegative value")));
        }
        let y_max = poisson_quantile_tail(dark_current + gain * p_max, TRUNCATION_TAIL);
        Ok(Self {
            dark_current,
            gain,
            p_max,
            y_max,
        })
    }

    /// Extends the output alphabet. Shrinking below the certified bound is
    /// rejected.
    pub fn extend_truncation(mut self, y_max: u64) -> Result<Self> {
        if y_max < self.y_max {
            return Err(invalid(
                "y_max",
                format!("{y_max} is below the certified bound {}", self.y_max),
            ));
        }
        self.y_max = y_max;
        Ok(self)
    }

    pub fn dark_current(&self) -> f64 {
        self.dark_current
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn y_max(&self) -> u64 {
        self.y_max
    }

    /// Expected count for input `x`.
    pub fn mean(&self, x: f64) -> f64 {
        self.gain * x + self.dark_current
    }

    /// Upper-tail mass missing from the truncated row at `p_max`.
    pub fn truncation_certificate(&self) -> f64 {
        let row = self.row(self.p_max);
        (1.0 - row.iter().sum::<f64>()).max(0.0)
    }

    pub fn ln_pmf(&self, x: f64, y: u64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(invalid("x", format!("input {x} is negative")));
        }
        if y > self.y_max {
            return Err(Error::OutsideTruncation { y, y_max: self.y_max });
        }
        Ok(ln_poisson_pmf(self.mean(x), y))
    }

    /// `W(y|x)`, evaluated in the log domain.
    pub fn pmf(&self, x: f64, y: u64) -> Result<f64> {
        self.ln_pmf(x, y).map(f64::exp)
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> u64 {
        debug_assert!(x >= 0.0);
        sample_poisson(self.mean(x), rng)
    }
}

impl ChannelLaw for PoissonChannel {
    fn output_len(&self) -> usize {
        self.y_max as usize + 1
    }

    fn row_into(&self, x: f64, out: &mut [f64]) {
        let mean = self.mean(x);
        let len = self.output_len();
        if mean == 0.0 {
            out[..len].fill(0.0);
            out[0] = 1.0;
            return;
        }
        let ln_mean = mean.ln();
        let table = ln_factorial_table();
        for (y, o) in out[..len].iter_mut().enumerate() {
            let lf = if y < LN_FACT_TABLE {
                table[y]
            } else {
                ln_factorial(y as u64)
            };
            *o = (y as f64 * ln_mean - mean - lf).exp();
        }
    }

    fn input_bound(&self) -> f64 {
        self.p_max
    }
}

/// Peak and average input power limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerConstraint {
    pub p_max: f64,
    pub p_avg: f64,
}

impl PowerConstraint {
    pub fn new(p_max: f64, p_avg: f64) -> Result<Self> {
        if !(p_max > 0.0) || !p_max.is_finite() {
            return Err(invalid("p_max", format!("{p_max} must be positive")));
        }
        if !(p_avg > 0.0) || !p_avg.is_finite() {
            return Err(invalid("p_avg", format!("{p_avg} must be positive")));
        }
        Ok(Self { p_max, p_avg })
    }

    /// Peak-only constraint.
    pub fn peak(p_max: f64) -> Result<Self> {
        Self::new(p_max, p_max)
    }

    /// Whether the average constraint can bind.
    pub fn average_active(&self) -> bool {
        self.p_avg < self.p_max
    }
}

/// Parameters of the map that turns the main output into the eavesdropper's.
///
/// `Z = Binomial(Y, keep) + Poisson(extra_dark)` has law `V(.|x)` whenever
/// `Y ~ W(.|x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degradation {
    pub keep: f64,
    pub extra_dark: f64,
}

/// Main channel `W` to the legitimate receiver and channel `V` to the
/// eavesdropper.
#[derive(Debug, Clone, PartialEq)]
pub struct WiretapPair {
    pub main: PoissonChannel,
    pub eve: PoissonChannel,
}

impl WiretapPair {
    pub fn new(main: PoissonChannel, eve: PoissonChannel) -> Self {
        Self { main, eve }
    }

    /// Unit-gain pair sharing a peak bound.
    pub fn from_dark_currents(lambda_b: f64, lambda_e: f64, p_max: f64) -> Result<Self> {
        Ok(Self::new(
            PoissonChannel::new(lambda_b, p_max)?,
            PoissonChannel::new(lambda_e, p_max)?,
        ))
    }

    /// Explicit degrading map via Poisson thinning plus independent dark
    /// counts, if one exists. With unit gains this is `lambda_e >= lambda_b`.
    pub fn degradation(&self) -> Option<Degradation> {
        let keep = self.eve.gain / self.main.gain;
        if keep > 1.0 {
            return None;
        }
        let extra_dark = self.eve.dark_current - keep * self.main.dark_current;
        (extra_dark >= 0.0).then_some(Degradation { keep, extra_dark })
    }

    pub fn degraded(&self) -> bool {
        self.degradation().is_some()
    }

    /// Applies the degrading map to a main-channel output.
    pub fn degrade<R: Rng + ?Sized>(&self, y: u64, rng: &mut R) -> Option<u64> {
        let d = self.degradation()?;
        let kept = if d.keep >= 1.0 {
            y
        } else {
            (0..y).filter(|_| rng.gen::<f64>() < d.keep).count() as u64
        };
        Some(kept + sample_poisson(d.extra_dark, rng))
    }
}

/// Poisson channel whose dark current is drawn i.i.d. per slot from a
/// finite state distribution, seen through its averaged law.
#[derive(Debug, Clone, PartialEq)]
pub struct StateChannel {
    states: Vec<(f64, PoissonChannel)>,
    output_len: usize,
}

impl StateChannel {
    pub fn new(states: Vec<(f64, PoissonChannel)>) -> Result<Self> {
        if states.is_empty() {
            return Err(invalid("states", "state list is empty"));
        }
        if states.iter().any(|(p, _)| !(*p >= 0.0)) {
            return Err(invalid("states", "negative state probability"));
        }
        let total: f64 = states.iter().map(|(p, _)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("states", format!("state probabilities sum to {total}")));
        }
        let output_len = states.iter().map(|(_, c)| c.output_len()).max().unwrap_or(1);
        Ok(Self { states, output_len })
    }

    pub fn states(&self) -> &[(f64, PoissonChannel)] {
        &self.states
    }
}

impl ChannelLaw for StateChannel {
    fn output_len(&self) -> usize {
        self.output_len
    }

    fn row_into(&self, x: f64, out: &mut [f64]) {
        let out = &mut out[..self.output_len];
        out.fill(0.0);
        let mut buf = vec![0.0; self.output_len];
        for (p, ch) in &self.states {
            let n = ch.output_len();
            ch.row_into(x, &mut buf[..n]);
            for (o, w) in out.iter_mut().zip(&buf[..n]) {
                *o += p * w;
            }
        }
    }

    fn input_bound(&self) -> f64 {
        self.states.iter().map(|(_, c)| c.p_max()).fold(f64::INFINITY, f64::min)
    }
}

/// Finite-input, finite-output channel given by its transition table.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericDmc {
    inputs: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl GenericDmc {
    pub fn new(inputs: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != rows.len() {
            return Err(invalid("rows", "need one nonempty row per input label"));
        }
        let width = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::SupportMismatch {
                    left: width,
                    right: r.len(),
                });
            }
            if r.iter().any(|w| !(*w >= 0.0)) {
                return Err(invalid("rows", format!("row {i} has a negative entry")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid("rows", format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { inputs, rows })
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn output_len(&self) -> usize {
        self.rows[0].len()
    }
}

/// Tabulates the averaged state channel on an input grid.
pub fn averaged_channel(sc: &StateChannel, grid: &[f64]) -> Result<GenericDmc> {
    if grid.iter().any(|x| !(*x >= 0.0)) {
        return Err(invalid("grid", "inputs must be nonnegative"));
    }
    let rows = grid.iter().map(|&x| sc.row(x)).collect();
    GenericDmc::new(grid.to_vec(), rows)
}

/// Total variation `½ Σ |p - q|`, in `[0, 1]`.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `D(Poisson(mu1) || Poisson(mu2))` in nats.
pub fn kl_poisson_nats(mu1: f64, mu2: f64) -> Result<f64> {
    if !(mu1 > 0.0) || !(mu2 > 0.0) {
        return Err(invalid("mean", format!("means must be positive, got ({mu1}, {mu2})")));
    }
    Ok((mu1 * (mu1 / mu2).ln() + mu2 - mu1).max(0.0))
}

/// `D(Poisson(mu1) || Poisson(mu2))` in bits.
pub fn kl_poisson(mu1: f64, mu2: f64) -> Result<f64> {
    kl_poisson_nats(mu1, mu2).map(|d| d * LOG2_E)
}

/// `D(p || q)` in nats over a common finite support; infinite when `p`
/// charges an outcome `q` does not.
pub fn kl_divergence_nats(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut d = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            d += a * (a / b).ln();
        }
    }
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pmf_closed_forms() {
        let ch = PoissonChannel::new(1.0, 5.0).unwrap();
        assert_abs_diff_eq!(ch.pmf(0.0, 0).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        // independent route: product of terms instead of ln-factorial table
        let direct = (-2.0f64).exp() * 2.0 * 2.0 / (1.0 * 2.0);
        assert_abs_diff_eq!(ch.pmf(1.0, 2).unwrap(), direct, epsilon = 1e-15);
        assert_abs_diff_eq!(direct, 0.270_670_566_473_225_4, epsilon = 1e-15);

        let dark = PoissonChannel::new(0.0, 0.0).unwrap();
        assert_eq!(dark.y_max(), 0);
        assert_eq!(dark.pmf(0.0, 0).unwrap(), 1.0);
        let dark = dark.extend_truncation(3).unwrap();
        assert_eq!(dark.pmf(0.0, 2).unwrap(), 0.0);
    }

    #[test]
    fn pmf_rejects_bad_arguments() {
        let ch = PoissonChannel::new(1.0, 5.0).unwrap();
        assert!(ch.pmf(-0.1, 0).is_err());
        let y = ch.y_max() + 1;
        assert_eq!(ch.pmf(1.0, y), Err(Error::OutsideTruncation { y, y_max: ch.y_max() }));
        assert!(PoissonChannel::new(-1.0, 5.0).is_err());
        assert!(ch.clone().extend_truncation(1).is_err());
    }

    #[test]
    fn ln_factorial_matches_summation_past_table() {
        for k in [600u64, 1000, 5000] {
            let direct: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
            assert_abs_diff_eq!(ln_factorial(k), direct, epsilon = 1e-8 * direct);
        }
    }

    #[test]
    fn truncation_is_tight() {
        for (lambda, p_max) in [(1.0, 5.0), (0.1, 2.0), (1.0, 50.0), (10.0, 5.0)] {
            let ch = PoissonChannel::new(lambda, p_max).unwrap();
            let mean = lambda + p_max;
            let tail_beyond = |y: u64| -> f64 { (y + 1..y + 400).map(|k| ln_poisson_pmf(mean, k).exp()).sum() };
            assert!(tail_beyond(ch.y_max()) < TRUNCATION_TAIL);
            assert!(tail_beyond(ch.y_max() - 1) >= TRUNCATION_TAIL);
            assert!(ch.truncation_certificate() <= TRUNCATION_TAIL);
        }
    }

    #[test]
    fn rows_sum_to_one_over_input_range() {
        let ch = PoissonChannel::new(1.0, 5.0).unwrap();
        for i in 0..1000 {
            let x = 5.0 * i as f64 / 999.0;
            let s: f64 = ch.row(x).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12, "x = {x}: {s}");
        }
    }

    #[test]
    fn kl_poisson_values() {
        assert_eq!(kl_poisson(1.0, 1.0).unwrap(), 0.0);
        let series = |a: f64, b: f64| -> f64 {
            let mut d = 0.0;
            let mut tail = 1.0;
            let mut y = 0u64;
            while tail > 1e-14 {
                let pa = ln_poisson_pmf(a, y).exp();
                d += pa * (ln_poisson_pmf(a, y) - ln_poisson_pmf(b, y));
                tail -= pa;
                y += 1;
            }
            d * LOG2_E
        };
        assert_abs_diff_eq!(kl_poisson(2.0, 1.0).unwrap(), series(2.0, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(kl_poisson(2.0, 1.0).unwrap(), 0.557_304_959, epsilon = 1e-9);
        assert_abs_diff_eq!(kl_poisson(1.0, 2.0).unwrap(), series(1.0, 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(kl_poisson(1.0, 2.0).unwrap(), 0.442_695_041, epsilon = 1e-9);
        assert!(kl_poisson(0.0, 1.0).is_err());
        assert!(kl_poisson(1.0, -1.0).is_err());
    }

    #[test]
    fn total_variation_cases() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(total_variation(&p, &p).unwrap(), 0.0);
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(
            total_variation(&[1.0], &[0.5, 0.5]),
            Err(Error::SupportMismatch { .. })
        ));
        // Poisson(1) vs Poisson(2) against a long direct sum
        let ch = PoissonChannel::new(1.0, 1.0).unwrap().extend_truncation(60).unwrap();
        let tv = total_variation(&ch.row(0.0), &ch.row(1.0)).unwrap();
        let direct: f64 = 0.5
            * (0..200u64)
                .map(|y| (ln_poisson_pmf(1.0, y).exp() - ln_poisson_pmf(2.0, y).exp()).abs())
                .sum::<f64>();
        assert_abs_diff_eq!(tv, direct, epsilon = 1e-13);
    }

    #[test]
    fn averaged_channel_cases() {
        let a = PoissonChannel::new(1.0, 5.0).unwrap();
        let grid = [0.0, 1.0, 2.5, 5.0];
        let twin = StateChannel::new(vec![(0.5, a.clone()), (0.5, a.clone())]).unwrap();
        let dmc = averaged_channel(&twin, &grid).unwrap();
        for (row, &x) in dmc.rows().iter().zip(&grid) {
            for (u, v) in row.iter().zip(a.row(x)) {
                assert_abs_diff_eq!(*u, v, epsilon = 1e-16);
            }
        }
        let single = StateChannel::new(vec![(1.0, a.clone())]).unwrap();
        let dmc = averaged_channel(&single, &grid).unwrap();
        for (row, &x) in dmc.rows().iter().zip(&grid) {
            assert_eq!(row, &a.row(x));
        }

        let s0 = PoissonChannel::new(0.0, 5.0).unwrap();
        let s2 = PoissonChannel::new(2.0, 5.0).unwrap();
        let mix = StateChannel::new(vec![(0.5, s0), (0.5, s2)]).unwrap();
        let dmc = averaged_channel(&mix, &[0.0]).unwrap();
        assert_abs_diff_eq!(dmc.rows()[0][0], 0.5 * (1.0 + (-2.0f64).exp()), epsilon = 1e-15);
        assert_abs_diff_eq!(dmc.rows()[0][0], 0.567_667_641, epsilon = 1e-9);

        assert!(StateChannel::new(vec![(0.5, a.clone()), (0.4, a)]).is_err());
        assert!(StateChannel::new(vec![]).is_err());
    }

    #[test]
    fn degradedness_predicate() {
        let pair = WiretapPair::from_dark_currents(1.0, 10.0, 5.0).unwrap();
        assert!(pair.degraded());
        assert!(WiretapPair::from_dark_currents(1.0, 1.0, 5.0).unwrap().degraded());
        assert!(!WiretapPair::from_dark_currents(1.0, 0.5, 5.0).unwrap().degraded());
    }

    #[test]
    fn degrading_map_reproduces_eve_law() {
        let pair = WiretapPair::from_dark_currents(1.0, 4.0, 5.0).unwrap();
        let mut rng = stream(3, 0);
        let x = 2.0;
        let n = 200_000;
        let mut counts = vec![0u64; pair.eve.output_len() + 1];
        for _ in 0..n {
            let y = pair.main.sample(x, &mut rng);
            let z = pair.degrade(y, &mut rng).unwrap() as usize;
            let last = counts.len() - 1;
            counts[z.min(last)] += 1;
        }
        let row = pair.eve.row(x);
        for (z, p) in row.iter().enumerate().take(15) {
            let emp = counts[z] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((emp - p).abs() < 5.0 * sigma + 1e-12, "z = {z}");
        }
    }

    #[test]
    fn sampler_moments() {
        let ch = PoissonChannel::new(1.0, 5.0).unwrap();
        let n = 1_000_000;
        let mut rng = stream(42, 0);
        let draws: Vec<f64> = (0..n).map(|_| ch.sample(2.0, &mut rng) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 3.0).abs() < 0.01, "{mean}");
        assert!((var - 3.0).abs() < 0.02, "{var}");
        // CLT bands
        assert!((mean - 3.0).abs() < 5.0 * (3.0 / n as f64).sqrt());
    }

    #[test]
    fn sampler_matches_pmf_chi_square() {
        for mean_x in [0.0, 45.0] {
            let ch = PoissonChannel::new(1.0, 50.0).unwrap();
            let n = 1_000_000u64;
            let mut rng = stream(9, mean_x as u64);
            let len = ch.output_len();
            let mut counts = vec![0u64; len];
            for _ in 0..n {
                counts[(ch.sample(mean_x, &mut rng) as usize).min(len - 1)] += 1;
            }
            let row = ch.row(mean_x);
            // pool cells with expected count below 5
            let (mut chi2, mut dof, mut exp_acc, mut obs_acc) = (0.0, 0i64, 0.0, 0.0);
            for (c, p) in counts.iter().zip(&row) {
                exp_acc += p * n as f64;
                obs_acc += *c as f64;
                if exp_acc >= 5.0 {
                    chi2 += (obs_acc - exp_acc).powi(2) / exp_acc;
                    dof += 1;
                    exp_acc = 0.0;
                    obs_acc = 0.0;
                }
            }
            let dof = (dof - 1) as f64;
            assert!(chi2 < dof + 5.0 * (2.0 * dof).sqrt(), "chi2 {chi2} dof {dof}");
        }
    }

    #[test]
    fn sampler_reproducible() {
        let ch = PoissonChannel::new(1.0, 5.0).unwrap();
        let a: Vec<u64> = (0..10).map(|i| ch.sample(3.0, &mut stream(5, i))).collect();
        let b: Vec<u64> = (0..10).map(|i| ch.sample(3.0, &mut stream(5, i))).collect();
        assert_eq!(a, b);
    }
}
