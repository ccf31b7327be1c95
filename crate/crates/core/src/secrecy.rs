//! What an eavesdropper observing `Z^n` learns about the message.
//!
//! Small problems (`n <= 3`, at most 8 messages) are solved by enumerating
//! the truncated output space; larger ones fall back to Monte-Carlo
//! estimates built on exact per-sample likelihoods. Every report says which
//! path produced it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ln_factorial, PoissonChannel};
use crate::error::{invalid, Error, Result};
use crate::id::IdCodeSpec;
use crate::par::{self, Exec, StreamRng};
use crate::stats::mean_var;

/// Largest output space enumerated exactly.
pub const ENUMERATION_BUDGET: u128 = 4_000_000;
/// Longest block handled by enumeration.
pub const EXACT_MAX_LENGTH: usize = 3;
/// Largest message set handled by enumeration.
pub const EXACT_MAX_MESSAGES: usize = 8;
/// Default `lambda` in the secrecy criterion: Eve's error sum must stay
/// at or above `1 - lambda`.
pub const DEFAULT_LAMBDA: f64 = 0.1;
const JACKKNIFE_BLOCKS: usize = 20;
const TAG_EVENTS: u64 = 0x6576_656e_7473;

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `z ln(mean) - mean`, without the `-ln z!` term.
fn ln_kernel(mean: f64, z: u64) -> f64 {
    if z == 0 {
        -mean
    } else if mean == 0.0 {
        f64::NEG_INFINITY
    } else {
        z as f64 * mean.ln() - mean
    }
}

fn ln_factorials(z: &[u64]) -> f64 {
    z.iter().map(|&v| ln_factorial(v)).sum()
}

/// Per-message law of Eve's output block.
pub trait EveSource: Sync {
    fn length(&self) -> usize;
    fn eve(&self) -> &PoissonChannel;
    fn check_message(&self, message: u128) -> Result<()>;
    /// `ln Q_m V^n(z)` for each listed message.
    fn ln_likelihoods(&self, messages: &[u128], z: &[u64]) -> Vec<f64>;
    fn sample(&self, message: u128, rng: &mut StreamRng) -> Vec<u64>;
}

/// Per-message input laws given as finite lists of weighted sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEnsemble {
    length: usize,
    messages: Vec<Vec<(Vec<f64>, f64)>>,
}

impl InputEnsemble {
    pub fn new(messages: Vec<Vec<(Vec<f64>, f64)>>) -> Result<Self> {
        let length = messages.first().and_then(|m| m.first()).map_or(0, |(s, _)| s.len());
        if length == 0 {
            return Err(invalid(
                "ensemble",
                "need at least one message with a nonempty sequence",
            ));
        }
        let mut out = Vec::with_capacity(messages.len());
        for m in messages {
            let total: f64 = m.iter().map(|(_, p)| p).sum();
            if m.is_empty() || !(total > 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(invalid("ensemble", "each message law must sum to 1"));
            }
            for (s, p) in &m {
                if s.len() != length {
                    return Err(invalid("ensemble", "sequences differ in length"));
                }
                if !(*p >= 0.0) || s.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(invalid("ensemble", "negative or non-finite entry"));
                }
            }
            out.push(m.into_iter().map(|(s, p)| (s, p / total)).collect());
        }
        Ok(Self { length, messages: out })
    }

    /// Deterministic encoder: message `i` always sends `codewords[i]`.
    pub fn deterministic(codewords: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(codewords.into_iter().map(|c| vec![(c, 1.0)]).collect())
    }

    /// Random ensemble: each message draws `support` sequences with letters
    /// uniform on `[0, p_max]` and random weights.
    pub fn random<R: Rng + ?Sized>(
        messages: usize,
        length: usize,
        support: usize,
        p_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if messages == 0 || length == 0 || support == 0 || !(p_max >= 0.0) {
            return Err(invalid("ensemble", "sizes must be positive and p_max nonnegative"));
        }
        let laws = (0..messages)
            .map(|_| {
                let w: Vec<f64> = (0..support).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let total: f64 = w.iter().sum();
                w.into_iter()
                    .map(|p| ((0..length).map(|_| rng.gen::<f64>() * p_max).collect(), p / total))
                    .collect()
            })
            .collect();
        Self::new(laws)
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn message_count(&self) -> usize {
        self.messages.len()
    }

    pub fn message(&self, i: usize) -> &[(Vec<f64>, f64)] {
        &self.messages[i]
    }

    /// `(E[X_t], E[X_t^2])` for each letter under a uniform message.
    pub fn letter_moments(&self) -> Vec<(f64, f64)> {
        let w = 1.0 / self.messages.len() as f64;
        (0..self.length)
            .map(|t| {
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for law in &self.messages {
                    for (s, p) in law {
                        m1 += w * p * s[t];
                        m2 += w * p * s[t] * s[t];
                    }
                }
                (m1, m2)
            })
            .collect()
    }

    fn max_letter(&self) -> f64 {
        self.messages
            .iter()
            .flatten()
            .flat_map(|(s, _)| s.iter().copied())
            .fold(0.0, f64::max)
    }

    fn check_channel(&self, ch: &PoissonChannel) -> Result<()> {
        if self.max_letter() > ch.p_max() {
            return Err(invalid("ensemble", "letter above the channel's p_max"));
        }
        Ok(())
    }

    /// Every letter replaced by its nearest grid point.
    pub fn quantized(&self, grid: &[f64]) -> Self {
        let nearest = |x: f64| {
            grid.iter()
                .copied()
                .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
                .unwrap_or(x)
        };
        Self {
            length: self.length,
            messages: self
                .messages
                .iter()
                .map(|law| {
                    law.iter()
                        .map(|(s, p)| (s.iter().map(|&x| nearest(x)).collect(), *p))
                        .collect()
                })
                .collect(),
        }
    }
}

/// An ensemble seen through a Poisson channel.
#[derive(Debug, Clone)]
pub struct EnsembleSource<'a> {
    ensemble: &'a InputEnsemble,
    channel: PoissonChannel,
}

impl<'a> EnsembleSource<'a> {
    pub fn new(ensemble: &'a InputEnsemble, channel: &PoissonChannel) -> Result<Self> {
        ensemble.check_channel(channel)?;
        Ok(Self {
            ensemble,
            channel: channel.clone(),
        })
    }
}

impl EveSource for EnsembleSource<'_> {
    fn length(&self) -> usize {
        self.ensemble.length
    }

    fn eve(&self) -> &PoissonChannel {
        &self.channel
    }

    fn check_message(&self, message: u128) -> Result<()> {
        let count = self.ensemble.message_count() as u128;
        if message >= count {
            return Err(Error::MessageOutOfRange { message, count });
        }
        Ok(())
    }

    fn ln_likelihoods(&self, messages: &[u128], z: &[u64]) -> Vec<f64> {
        let lf = ln_factorials(z);
        messages
            .iter()
            .map(|&m| {
                let law = &self.ensemble.messages[m as usize];
                log_sum_exp(law.iter().filter(|(_, p)| *p > 0.0).map(|(s, p)| {
                    p.ln()
                        + s.iter()
                            .zip(z)
                            .map(|(&x, &zt)| ln_kernel(self.channel.mean(x), zt))
                            .sum::<f64>()
                })) - lf
            })
            .collect()
    }

    fn sample(&self, message: u128, rng: &mut StreamRng) -> Vec<u64> {
        let law = &self.ensemble.messages[message as usize];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = law.len() - 1;
        for (k, (_, p)) in law.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = k;
                break;
            }
        }
        law[pick].0.iter().map(|&x| self.channel.sample(x, rng)).collect()
    }
}

/// Eve's view of the identification code: a uniform index, its color under
/// the message, and a uniform dummy inside the color's bin.
#[derive(Debug, Clone)]
pub struct IdEveSource<'a> {
    spec: &'a IdCodeSpec,
    channel: PoissonChannel,
    inner_means: Vec<Vec<f64>>,
    tag_means: Vec<Vec<f64>>,
}

impl<'a> IdEveSource<'a> {
    pub fn new(spec: &'a IdCodeSpec, eve: &PoissonChannel) -> Result<Self> {
        let limit = spec.inner.channel().p_max();
        if limit > eve.p_max() {
            return Err(invalid(
                "eve",
                "eavesdropper truncation must cover the code's peak power",
            ));
        }
        let means = |cws: &[Vec<f64>]| -> Vec<Vec<f64>> {
            cws.iter().map(|c| c.iter().map(|&x| eve.mean(x)).collect()).collect()
        };
        Ok(Self {
            spec,
            channel: eve.clone(),
            inner_means: means(spec.inner.codewords()),
            tag_means: means(spec.tag.codewords()),
        })
    }
}

impl EveSource for IdEveSource<'_> {
    fn length(&self) -> usize {
        self.spec.total_length()
    }

    fn eve(&self) -> &PoissonChannel {
        &self.channel
    }

    fn check_message(&self, message: u128) -> Result<()> {
        self.spec.coloring.check_message(message)
    }

    fn ln_likelihoods(&self, messages: &[u128], z: &[u64]) -> Vec<f64> {
        let n = self.spec.inner.blocklength();
        let (zi, zt) = z.split_at(n);
        let kernel = |means: &[f64], zs: &[u64]| -> f64 { means.iter().zip(zs).map(|(&m, &v)| ln_kernel(m, v)).sum() };
        let inner: Vec<f64> = self.inner_means.iter().map(|m| kernel(m, zi)).collect();
        let bins = self.spec.bins;
        let ln_bins = (bins as f64).ln();
        let mut tag = vec![None::<f64>; self.spec.coloring.color_count() as usize];
        let mut tag_ll = |k: u64| -> f64 {
            *tag[k as usize].get_or_insert_with(|| {
                let base = k as usize * bins;
                log_sum_exp((base..base + bins).map(|c| kernel(&self.tag_means[c], zt))) - ln_bins
            })
        };
        let ln_index = (inner.len() as f64).ln();
        let lf = ln_factorials(z);
        messages
            .iter()
            .map(|&m| {
                let terms: Vec<f64> = (0..inner.len())
                    .map(|j| inner[j] + tag_ll(self.spec.coloring.color(m, j as u64)))
                    .collect();
                log_sum_exp(terms.into_iter()) - ln_index - lf
            })
            .collect()
    }

    fn sample(&self, message: u128, rng: &mut StreamRng) -> Vec<u64> {
        let cw = crate::id::encode_id(self.spec, message, rng).expect("message checked by caller");
        cw.input.iter().map(|&x| self.channel.sample(x, rng)).collect()
    }
}

/// Output-space shape for enumeration: radix `y_max + 1` per letter.
fn enumeration_cells(length: usize, y_max: u64) -> Result<usize> {
    let radix = y_max as u128 + 1;
    let size = u32::try_from(length)
        .ok()
        .and_then(|l| radix.checked_pow(l))
        .unwrap_or(u128::MAX);
    if size > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded {
            size,
            budget: ENUMERATION_BUDGET,
        });
    }
    Ok(size as usize)
}

fn cell_to_z(mut cell: usize, radix: usize, z: &mut [u64]) {
    for v in z.iter_mut() {
        *v = (cell % radix) as u64;
        cell /= radix;
    }
}

/// Exact truncated pmf of one message over `[0, y_max]^n`, letters in
/// little-endian order.
pub fn exact_pmf<S: EveSource + ?Sized>(src: &S, message: u128) -> Result<Vec<f64>> {
    src.check_message(message)?;
    let y_max = src.eve().y_max();
    let cells = enumeration_cells(src.length(), y_max)?;
    let radix = y_max as usize + 1;
    let mut z = vec![0u64; src.length()];
    Ok((0..cells)
        .map(|c| {
            cell_to_z(c, radix, &mut z);
            src.ln_likelihoods(&[message], &z)[0].exp()
        })
        .collect())
}

/// Eve's output law for one message, enumerated or sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeasureData {
    Exact { y_max: u64, pmf: Vec<f64> },
    Sampled { samples: Vec<Vec<u64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EveOutputMeasure {
    pub message: u128,
    pub length: usize,
    pub data: MeasureData,
    /// Certified bound on the mass outside the enumerated space.
    pub truncation_bound: f64,
}

impl EveOutputMeasure {
    /// Enumerated when the block is at most [`EXACT_MAX_LENGTH`] long,
    /// otherwise `samples` draws from the stream rooted at `seed`.
    pub fn of<S: EveSource + ?Sized>(src: &S, message: u128, samples: usize, seed: u64) -> Result<Self> {
        if src.length() <= EXACT_MAX_LENGTH {
            Self::exact(src, message)
        } else {
            Self::sampled(src, message, samples, seed)
        }
    }

    pub fn exact<S: EveSource + ?Sized>(src: &S, message: u128) -> Result<Self> {
        let pmf = exact_pmf(src, message)?;
        Ok(Self {
            message,
            length: src.length(),
            data: MeasureData::Exact {
                y_max: src.eve().y_max(),
                pmf,
            },
            truncation_bound: src.length() as f64 * src.eve().truncation_certificate(),
        })
    }

    pub fn sampled<S: EveSource + ?Sized>(src: &S, message: u128, samples: usize, seed: u64) -> Result<Self> {
        src.check_message(message)?;
        let samples = (0..samples)
            .map(|t| src.sample(message, &mut par::stream(seed, t as u64)))
            .collect();
        Ok(Self {
            message,
            length: src.length(),
            data: MeasureData::Sampled { samples },
            truncation_bound: 0.0,
        })
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.data, MeasureData::Exact { .. })
    }

    /// Enumerated mass, or `None` for a sampled measure.
    pub fn total_mass(&self) -> Option<f64> {
        match &self.data {
            MeasureData::Exact { pmf, .. } => Some(pmf.iter().sum()),
            MeasureData::Sampled { .. } => None,
        }
    }
}

fn check_exact_ensemble(ensemble: &InputEnsemble) -> Result<()> {
    if ensemble.length() > EXACT_MAX_LENGTH || ensemble.message_count() > EXACT_MAX_MESSAGES {
        return Err(invalid(
            "ensemble",
            format!("exact leakage needs n <= {EXACT_MAX_LENGTH} and at most {EXACT_MAX_MESSAGES} messages"),
        ));
    }
    Ok(())
}

/// `I(M; Z^n)` in bits for a uniform message, by enumeration.
pub fn exact_leakage(ensemble: &InputEnsemble, channel: &PoissonChannel) -> Result<f64> {
    check_exact_ensemble(ensemble)?;
    let src = EnsembleSource::new(ensemble, channel)?;
    let pmfs = (0..ensemble.message_count())
        .map(|i| exact_pmf(&src, i as u128))
        .collect::<Result<Vec<_>>>()?;
    let w = 1.0 / pmfs.len() as f64;
    let mut mi = 0.0;
    for c in 0..pmfs[0].len() {
        let mix: f64 = pmfs.iter().map(|p| p[c]).sum::<f64>() * w;
        for p in &pmfs {
            if p[c] > 0.0 {
                mi += w * p[c] * (p[c] / mix).ln();
            }
        }
    }
    Ok(mi.max(0.0) * std::f64::consts::LOG2_E)
}

/// `E[X^2] / (2 (lambda + E[X]))` converted to bits, with both moments
/// taken after the channel gain.
pub fn per_letter_kl_bound(mean: f64, second_moment: f64, eve: &PoissonChannel) -> Result<f64> {
    if !(mean >= 0.0) || !(second_moment >= mean * mean * (1.0 - 1e-12)) {
        return Err(invalid("moments", "need E[X] >= 0 and E[X^2] >= E[X]^2"));
    }
    let g = eve.gain();
    let denom = 2.0 * (eve.dark_current() + g * mean);
    if g * g * second_moment == 0.0 {
        return Ok(0.0);
    }
    if denom == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(g * g * second_moment / denom * std::f64::consts::LOG2_E)
}

/// Per-letter bounds and their sum over the block.
pub fn chain_rule_bound(ensemble: &InputEnsemble, eve: &PoissonChannel) -> Result<(Vec<f64>, f64)> {
    let per = ensemble
        .letter_moments()
        .into_iter()
        .map(|(m1, m2)| per_letter_kl_bound(m1, m2, eve))
        .collect::<Result<Vec<_>>>()?;
    let total = per.iter().sum();
    Ok((per, total))
}

/// Total bound over `n` letters each fixed at `(c / n) lambda_E`.
pub fn peak_scaling(c: f64, eve: &PoissonChannel, ns: &[usize]) -> Result<Vec<(usize, f64)>> {
    ns.iter()
        .map(|&n| {
            let x = c / n as f64 * eve.dark_current();
            Ok((n, n as f64 * per_letter_kl_bound(x, x * x, eve)?))
        })
        .collect()
}

/// `TV <= sqrt(D / 2)` with `D` in nats, clamped at 1.
pub fn pinsker_bound(kl_nats: f64) -> Result<f64> {
    if !(kl_nats >= 0.0) {
        return Err(invalid("kl", "divergence must be nonnegative"));
    }
    Ok((kl_nats / 2.0).sqrt().min(1.0))
}

/// The looser-constant form `TV <= sqrt(D) / 2`, logged alongside.
pub fn half_root_bound(kl_nats: f64) -> Result<f64> {
    if !(kl_nats >= 0.0) {
        return Err(invalid("kl", "divergence must be nonnegative"));
    }
    Ok((0.5 * kl_nats.sqrt()).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    Exact,
    MonteCarlo,
}

/// Eve's best test between two messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indistinguishability {
    pub path: Path,
    pub message_i: u128,
    pub message_j: u128,
    /// Type I plus type II error of the likelihood-ratio test at threshold
    /// 1, which equals `1 - TV`.
    pub error_sum: f64,
    pub type_one: f64,
    pub type_two: f64,
    /// Zero on the exact path.
    pub std_error: f64,
    pub trials: Option<u64>,
    pub lambda: f64,
    /// `error_sum >= 1 - lambda`.
    pub secure: bool,
}

fn distinct(i: u128, j: u128) -> Result<()> {
    if i == j {
        return Err(invalid("messages", "the two messages must differ"));
    }
    Ok(())
}

/// Exact `1 - TV` by enumeration.
pub fn exact_error_sum<S: EveSource + ?Sized>(src: &S, i: u128, j: u128, lambda: f64) -> Result<Indistinguishability> {
    distinct(i, j)?;
    let pi = exact_pmf(src, i)?;
    let pj = exact_pmf(src, j)?;
    let mut type_one = 0.0;
    let mut type_two = 0.0;
    for (a, b) in pi.iter().zip(&pj) {
        if b > a {
            type_one += a;
        } else {
            type_two += b;
        }
    }
    let error_sum = type_one + type_two;
    Ok(Indistinguishability {
        path: Path::Exact,
        message_i: i,
        message_j: j,
        error_sum,
        type_one,
        type_two,
        std_error: 0.0,
        trials: None,
        lambda,
        secure: error_sum >= 1.0 - lambda,
    })
}

/// Monte-Carlo estimate of the likelihood-ratio test errors. Each trial
/// draws one block under `i` and one under `j`.
pub fn sampled_error_sum<S: EveSource + ?Sized>(
    src: &S,
    i: u128,
    j: u128,
    trials: u64,
    seed: u64,
    lambda: f64,
    exec: Exec,
) -> Result<Indistinguishability> {
    distinct(i, j)?;
    src.check_message(i)?;
    src.check_message(j)?;
    if trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    let pair = [i, j];
    let outcomes = exec.map(trials as usize, |t| {
        let mut rng = par::stream(seed, t as u64);
        let zi = src.sample(i, &mut rng);
        let li = src.ln_likelihoods(&pair, &zi);
        let zj = src.sample(j, &mut rng);
        let lj = src.ln_likelihoods(&pair, &zj);
        (li[1] > li[0], lj[0] >= lj[1])
    });
    let n = trials as f64;
    let type_one = outcomes.iter().filter(|o| o.0).count() as f64 / n;
    let type_two = outcomes.iter().filter(|o| o.1).count() as f64 / n;
    let error_sum = type_one + type_two;
    let std_error = ((type_one * (1.0 - type_one) + type_two * (1.0 - type_two)) / n).sqrt();
    Ok(Indistinguishability {
        path: Path::MonteCarlo,
        message_i: i,
        message_j: j,
        error_sum,
        type_one,
        type_two,
        std_error,
        trials: Some(trials),
        lambda,
        secure: error_sum >= 1.0 - lambda,
    })
}

/// Exact for blocks of at most [`EXACT_MAX_LENGTH`] letters, sampled
/// otherwise.
pub fn error_sum<S: EveSource + ?Sized>(
    src: &S,
    i: u128,
    j: u128,
    trials: u64,
    seed: u64,
    exec: Exec,
) -> Result<Indistinguishability> {
    if src.length() <= EXACT_MAX_LENGTH {
        exact_error_sum(src, i, j, DEFAULT_LAMBDA)
    } else {
        sampled_error_sum(src, i, j, trials, seed, DEFAULT_LAMBDA, exec)
    }
}

/// Eve's error sum between messages `i` and `j` of an identification code.
pub fn eve_indistinguishability(
    spec: &IdCodeSpec,
    eve: &PoissonChannel,
    i: u128,
    j: u128,
    trials: u64,
    seed: u64,
) -> Result<Indistinguishability> {
    let src = IdEveSource::new(spec, eve)?;
    error_sum(&src, i, j, trials, seed, Exec::default())
}

/// A quantized output law with its certified distance to the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMeasure {
    pub measure: EveOutputMeasure,
    pub z0: u64,
    pub grid: Vec<f64>,
    /// Enumerated TV between the original and quantized laws.
    pub enumerated_tv: f64,
    /// Mass outside the enumerated space.
    pub truncation_bound: f64,
    /// `enumerated_tv + truncation_bound`.
    pub delta_prime: f64,
}

/// Output law after snapping letters to `grid` and lumping outputs above
/// `z0` into `z0`, with `delta'` certified by enumeration.
pub fn quantized_measure(
    ensemble: &InputEnsemble,
    eve: &PoissonChannel,
    message: usize,
    z0: u64,
    grid: &[f64],
) -> Result<QuantizedMeasure> {
    check_exact_ensemble(ensemble)?;
    if grid.is_empty() || grid.iter().any(|&g| !(g >= 0.0 && g <= eve.p_max())) {
        return Err(invalid("grid", "grid must be nonempty and inside [0, p_max]"));
    }
    let y_max = eve.y_max();
    let z0 = z0.min(y_max);
    let src = EnsembleSource::new(ensemble, eve)?;
    let original = exact_pmf(&src, message as u128)?;
    let q_ens = ensemble.quantized(grid);
    let q_src = EnsembleSource::new(&q_ens, eve)?;
    let raw = exact_pmf(&q_src, message as u128)?;

    let radix = y_max as usize + 1;
    let mut lumped = vec![0.0; raw.len()];
    let mut z = vec![0u64; ensemble.length()];
    for (c, &p) in raw.iter().enumerate() {
        cell_to_z(c, radix, &mut z);
        let target = z.iter().rev().fold(0usize, |acc, &v| acc * radix + v.min(z0) as usize);
        lumped[target] += p;
    }
    let enumerated_tv = 0.5 * original.iter().zip(&lumped).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let truncation_bound = ensemble.length() as f64 * eve.truncation_certificate();
    Ok(QuantizedMeasure {
        measure: EveOutputMeasure {
            message: message as u128,
            length: ensemble.length(),
            data: MeasureData::Exact { y_max, pmf: lumped },
            truncation_bound,
        },
        z0,
        grid: grid.to_vec(),
        enumerated_tv,
        truncation_bound,
        delta_prime: enumerated_tv + truncation_bound,
    })
}

/// One random event of the audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAuditRow {
    pub event_id: usize,
    pub q_i: f64,
    pub q_j: f64,
    pub diff: f64,
    /// Same event under the quantized laws.
    pub quantized_diff: f64,
    /// `quantized_diff + delta'_i + delta'_j`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAudit {
    pub rows: Vec<EventAuditRow>,
    pub delta_i: f64,
    pub delta_j: f64,
    /// TV between the two quantized laws.
    pub quantized_tv: f64,
    /// `quantized_tv + 2 max(delta'_i, delta'_j)`, uniform over events.
    pub uniform_bound: f64,
    pub max_diff: f64,
    pub violations: usize,
}

/// Compares `|Q_i(E) - Q_j(E)|` with its quantized counterpart on random
/// events `E`, each output cell included with probability 1/2.
#[allow(clippy::too_many_arguments)]
pub fn event_audit(
    ensemble: &InputEnsemble,
    eve: &PoissonChannel,
    i: usize,
    j: usize,
    z0: u64,
    grid: &[f64],
    events: usize,
    seed: u64,
) -> Result<EventAudit> {
    distinct(i as u128, j as u128)?;
    let src = EnsembleSource::new(ensemble, eve)?;
    let pi = exact_pmf(&src, i as u128)?;
    let pj = exact_pmf(&src, j as u128)?;
    let qi = quantized_measure(ensemble, eve, i, z0, grid)?;
    let qj = quantized_measure(ensemble, eve, j, z0, grid)?;
    let (MeasureData::Exact { pmf: hi, .. }, MeasureData::Exact { pmf: hj, .. }) = (&qi.measure.data, &qj.measure.data)
    else {
        unreachable!("quantized measures are enumerated")
    };
    let quantized_tv = 0.5 * hi.iter().zip(hj).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let slack = qi.delta_prime + qj.delta_prime;
    let uniform_bound = quantized_tv + 2.0 * qi.delta_prime.max(qj.delta_prime);
    let root = par::derive_seed(seed, TAG_EVENTS);
    let rows: Vec<EventAuditRow> = (0..events)
        .map(|e| {
            let mut rng = par::stream(root, e as u64);
            let (mut a, mut b, mut ha, mut hb) = (0.0, 0.0, 0.0, 0.0);
            let mut bits = 0u64;
            for c in 0..pi.len() {
                if c % 64 == 0 {
                    bits = rng.gen();
                }
                if bits >> (c % 64) & 1 == 1 {
                    a += pi[c];
                    b += pj[c];
                    ha += hi[c];
                    hb += hj[c];
                }
            }
            let quantized_diff = (ha - hb).abs();
            EventAuditRow {
                event_id: e,
                q_i: a,
                q_j: b,
                diff: (a - b).abs(),
                quantized_diff,
                bound: quantized_diff + slack,
            }
        })
        .collect();
    let violations = rows
        .iter()
        .filter(|r| r.diff > r.bound + 1e-12 || r.diff > uniform_bound + 1e-12)
        .count();
    let max_diff = rows.iter().map(|r| r.diff).fold(0.0, f64::max);
    Ok(EventAudit {
        rows,
        delta_i: qi.delta_prime,
        delta_j: qj.delta_prime,
        quantized_tv,
        uniform_bound,
        max_diff,
        violations,
    })
}

/// Sampled mutual information with a delete-one-block jackknife error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledInformation {
    pub bits: f64,
    pub jackknife_se: f64,
    pub samples: u64,
}

/// Plug-in `I(M; Z^n)` from exact per-sample likelihoods, messages taken
/// in rotation.
pub fn sampled_leakage<S: EveSource + ?Sized>(
    src: &S,
    messages: u128,
    samples: u64,
    seed: u64,
    exec: Exec,
) -> Result<SampledInformation> {
    if messages < 2 || samples < JACKKNIFE_BLOCKS as u64 {
        return Err(invalid("samples", "need two messages and at least 20 samples"));
    }
    src.check_message(messages - 1)?;
    let all: Vec<u128> = (0..messages).collect();
    let ln_m = (messages as f64).ln();
    let values = exec.map(samples as usize, |t| {
        let m = t as u128 % messages;
        let z = src.sample(m, &mut par::stream(seed, t as u64));
        let ll = src.ln_likelihoods(&all, &z);
        (ll[m as usize] - (log_sum_exp(ll.iter().copied()) - ln_m)) * std::f64::consts::LOG2_E
    });
    let block = values.len() / JACKKNIFE_BLOCKS;
    let used = block * JACKKNIFE_BLOCKS;
    let total: f64 = values[..used].iter().sum();
    let leave_out: Vec<f64> = (0..JACKKNIFE_BLOCKS)
        .map(|b| (total - values[b * block..(b + 1) * block].iter().sum::<f64>()) / (used - block) as f64)
        .collect();
    let (_, var) = mean_var(&leave_out);
    let k = JACKKNIFE_BLOCKS as f64;
    let jackknife_se = ((k - 1.0) * (k - 1.0) / k * var).sqrt();
    Ok(SampledInformation {
        bits: values.iter().sum::<f64>() / values.len() as f64,
        jackknife_se,
        samples,
    })
}

/// Everything measured about one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub path: Path,
    pub messages: usize,
    pub length: usize,
    /// Present iff `n <= 3` and at most 8 messages.
    pub exact_mi_bits: Option<f64>,
    /// Present on the sampled path.
    pub sampled_mi: Option<SampledInformation>,
    pub chain_rule_bound_bits: f64,
    pub per_letter_kl_bounds: Vec<f64>,
    /// Average TV between a message's law and the mixture, from the
    /// chain-rule bound.
    pub pinsker_tv_bound: f64,
    pub half_root_tv_bound: f64,
    /// Eve's test between messages 0 and 1.
    pub empirical_lrt_error_sum: Option<Indistinguishability>,
    pub exact_error_sum: Option<f64>,
}

pub fn leakage_report(
    ensemble: &InputEnsemble,
    eve: &PoissonChannel,
    trials: u64,
    seed: u64,
    exec: Exec,
) -> Result<LeakageReport> {
    let src = EnsembleSource::new(ensemble, eve)?;
    let exact = ensemble.length() <= EXACT_MAX_LENGTH && ensemble.message_count() <= EXACT_MAX_MESSAGES;
    let (per_letter_kl_bounds, chain_rule_bound_bits) = chain_rule_bound(ensemble, eve)?;
    let bound_nats = chain_rule_bound_bits * std::f64::consts::LN_2;
    let two = ensemble.message_count() >= 2;
    let (exact_mi_bits, sampled_mi, exact_error_sum) = if exact {
        let es = if two {
            Some(exact_error_sum(&src, 0, 1, DEFAULT_LAMBDA)?.error_sum)
        } else {
            None
        };
        (Some(exact_leakage(ensemble, eve)?), None, es)
    } else {
        let mi = sampled_leakage(&src, ensemble.message_count() as u128, trials, seed, exec)?;
        (None, Some(mi), None)
    };
    let empirical_lrt_error_sum = if two {
        Some(sampled_error_sum(
            &src,
            0,
            1,
            trials,
            par::derive_seed(seed, 1),
            DEFAULT_LAMBDA,
            exec,
        )?)
    } else {
        None
    };
    Ok(LeakageReport {
        path: if exact { Path::Exact } else { Path::MonteCarlo },
        messages: ensemble.message_count(),
        length: ensemble.length(),
        exact_mi_bits,
        sampled_mi,
        chain_rule_bound_bits,
        per_letter_kl_bounds,
        pinsker_tv_bound: pinsker_bound(bound_nats)?,
        half_root_tv_bound: half_root_bound(bound_nats)?,
        empirical_lrt_error_sum,
        exact_error_sum,
    })
}
