//! Randomized identification codes for the Poisson channel.
//!
//! A message `i` is a polynomial of degree at most `d` over the prime field
//! `F_q`. To send it, the encoder draws an index `j` uniformly, computes the
//! color `T_i(j)`, and transmits the codeword of `j` in an inner
//! transmission code followed by a codeword for the color in a short tag
//! code. The receiver testing candidate `i'` decodes `(j, color)` and
//! accepts iff `T_{i'}(j)` equals the decoded color. Two distinct messages
//! agree on at most `d` indices, which bounds the second-kind error by
//! `d / q` plus the decoding errors.
//!
//! The tag code may be binned: each color owns `bins` codewords and a
//! uniform dummy picks one, which randomizes what an eavesdropper sees.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::capacity::{capacity, CapacityResult, DiscreteInputDistribution, SolverConfig};
use crate::channel::{PoissonChannel, PowerConstraint};
use crate::error::{invalid, Error, Result};
use crate::par::{self, Exec};
use crate::stats::Proportion;

/// Largest codebook `build_inner_code` will materialize.
pub const CODEBOOK_BUDGET: u128 = 1 << 20;

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut f = 3u64;
    while f.saturating_mul(f) <= n {
        if n.is_multiple_of(f) {
            return false;
        }
        f += 2;
    }
    true
}

/// Smallest prime `>= n`.
pub fn next_prime(n: u64) -> u64 {
    let mut k = n.max(2);
    while !is_prime(k) {
        k += 1;
    }
    k
}

/// Polynomial-evaluation colorings `T_i(j) = sum_k c_k j^k mod q`, with the
/// coefficients `c_0..c_d` given by the base-`q` digits of `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColoringFamily {
    q: u64,
    degree: u64,
    index_count: u64,
}

impl ColoringFamily {
    /// `q` prime, `degree < q`, and `1 <= index_count <= q`.
    pub fn new(q: u64, degree: u64, index_count: u64) -> Result<Self> {
        if !is_prime(q) {
            return Err(invalid("q", format!("{q} is not prime")));
        }
        if q > u32::MAX as u64 {
            return Err(invalid("q", "field size must fit in 32 bits"));
        }
        if degree >= q {
            return Err(invalid("degree", format!("degree {degree} must be below q = {q}")));
        }
        if index_count == 0 || index_count > q {
            return Err(invalid("index_count", format!("{index_count} must lie in 1..={q}")));
        }
        Ok(Self { q, degree, index_count })
    }

    /// Index space equal to the whole field.
    pub fn full(q: u64, degree: u64) -> Result<Self> {
        Self::new(q, degree, q)
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn degree(&self) -> u64 {
        self.degree
    }

    pub fn index_count(&self) -> u64 {
        self.index_count
    }

    pub fn color_count(&self) -> u64 {
        self.q
    }

    /// `N = q^(d+1)`, or `None` if it does not fit in `u128`.
    pub fn message_count(&self) -> Option<u128> {
        let exp = u32::try_from(self.degree + 1).ok()?;
        (self.q as u128).checked_pow(exp)
    }

    pub fn log2_message_count(&self) -> f64 {
        (self.degree + 1) as f64 * (self.q as f64).log2()
    }

    pub fn check_message(&self, message: u128) -> Result<()> {
        match self.message_count() {
            Some(count) if message >= count => Err(Error::MessageOutOfRange { message, count }),
            _ => Ok(()),
        }
    }

    /// Coefficients `c_0..c_d` of the message polynomial.
    pub fn coefficients(&self, message: u128) -> Vec<u64> {
        let q = self.q as u128;
        let mut m = message;
        (0..=self.degree)
            .map(|_| {
                let c = (m % q) as u64;
                m /= q;
                c
            })
            .collect()
    }

    /// `T_message(j)`.
    pub fn color(&self, message: u128, j: u64) -> u64 {
        let q = self.q;
        let x = j % q;
        self.coefficients(message)
            .iter()
            .rev()
            .fold(0u64, |acc, &c| (acc * x + c) % q)
    }

    /// Number of indices on which two messages share a color.
    pub fn collisions(&self, a: u128, b: u128) -> u64 {
        let ca = self.coefficients(a);
        let cb = self.coefficients(b);
        let diff: Vec<u64> = ca.iter().zip(&cb).map(|(x, y)| (x + self.q - y) % self.q).collect();
        (0..self.index_count)
            .filter(|&j| diff.iter().rev().fold(0u64, |acc, &c| (acc * j + c) % self.q) == 0)
            .count() as u64
    }
}

/// Block code over the Poisson channel with maximum-likelihood decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerTransmissionCode {
    channel: PoissonChannel,
    blocklength: usize,
    codewords: Vec<Vec<f64>>,
    /// Per-letter output means of every codeword.
    means: Vec<Vec<f64>>,
    ln_means: Vec<Vec<f64>>,
}

impl InnerTransmissionCode {
    pub fn from_codewords(channel: PoissonChannel, codewords: Vec<Vec<f64>>) -> Result<Self> {
        let blocklength = codewords.first().map_or(0, Vec::len);
        if blocklength == 0 {
            return Err(invalid("codewords", "need at least one nonempty codeword"));
        }
        for c in &codewords {
            if c.len() != blocklength {
                return Err(invalid("codewords", "codewords differ in length"));
            }
            if c.iter().any(|&x| !(0.0..=channel.p_max()).contains(&x)) {
                return Err(invalid("codewords", "letter outside [0, p_max]"));
            }
        }
        let means: Vec<Vec<f64>> = codewords
            .iter()
            .map(|c| c.iter().map(|&x| channel.mean(x)).collect())
            .collect();
        let ln_means = means.iter().map(|m| m.iter().map(|v| v.ln()).collect()).collect();
        Ok(Self {
            channel,
            blocklength,
            codewords,
            means,
            ln_means,
        })
    }

    /// Random code: letters i.i.d. from `dist`, each codeword redrawn until
    /// its sum is at most `len * p_avg + p_max`.
    pub fn random<R: Rng + ?Sized>(
        channel: PoissonChannel,
        dist: &DiscreteInputDistribution,
        pc: &PowerConstraint,
        blocklength: usize,
        size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if blocklength == 0 || size == 0 {
            return Err(invalid("blocklength", "blocklength and size must be positive"));
        }
        if dist.mean() > pc.p_avg + 1e-9 || dist.points().last().is_some_and(|p| p.0 > pc.p_max) {
            return Err(invalid("dist", "input law violates the power constraint"));
        }
        let limit = block_power_limit(pc, blocklength);
        let codewords = (0..size)
            .map(|_| loop {
                let c: Vec<f64> = (0..blocklength).map(|_| dist.sample(rng)).collect();
                if c.iter().sum::<f64>() <= limit {
                    break c;
                }
            })
            .collect();
        Self::from_codewords(channel, codewords)
    }

    pub fn channel(&self) -> &PoissonChannel {
        &self.channel
    }

    pub fn blocklength(&self) -> usize {
        self.blocklength
    }

    pub fn size(&self) -> usize {
        self.codewords.len()
    }

    pub fn codeword(&self, index: usize) -> &[f64] {
        &self.codewords[index]
    }

    pub fn codewords(&self) -> &[Vec<f64>] {
        &self.codewords
    }

    pub fn rate_bits(&self) -> f64 {
        (self.size() as f64).log2() / self.blocklength as f64
    }

    /// Log-likelihood of `y` under codeword `index`, up to terms that do not
    /// depend on the codeword.
    pub fn score(&self, index: usize, y: &[u64]) -> f64 {
        let mut s = 0.0;
        for ((&yt, &m), &lm) in y.iter().zip(&self.means[index]).zip(&self.ln_means[index]) {
            if yt > 0 {
                if m == 0.0 {
                    return f64::NEG_INFINITY;
                }
                s += yt as f64 * lm;
            }
            s -= m;
        }
        s
    }

    /// Maximum-likelihood decision; ties go to the lowest index.
    pub fn decode(&self, y: &[u64]) -> usize {
        debug_assert_eq!(y.len(), self.blocklength);
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for j in 0..self.size() {
            let s = self.score(j, y);
            if s > best_score {
                best = j;
                best_score = s;
            }
        }
        best
    }

    pub fn transmit<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> Vec<u64> {
        self.codewords[index]
            .iter()
            .map(|&x| self.channel.sample(x, rng))
            .collect()
    }

    /// Monte-Carlo block error with a uniformly drawn message per trial.
    pub fn block_error(&self, trials: u64, seed: u64, exec: Exec) -> Proportion {
        let errors = exec.map(trials as usize, |t| {
            let mut rng = par::stream(seed, t as u64);
            let j = rng.gen_range(0..self.size());
            let y = self.transmit(j, &mut rng);
            self.decode(&y) != j
        });
        Proportion::new(errors.iter().filter(|e| **e).count() as u64, trials)
    }
}

/// `len * p_avg + p_max` when the average limit binds, else `len * p_max`.
pub fn block_power_limit(pc: &PowerConstraint, len: usize) -> f64 {
    if pc.average_active() {
        len as f64 * pc.p_avg + pc.p_max
    } else {
        len as f64 * pc.p_max
    }
}

/// Codebook size `ceil(2^(blocklength * rate))`.
pub fn codebook_size(blocklength: usize, rate_bits: f64) -> u128 {
    let log2 = blocklength as f64 * rate_bits;
    if log2 >= 127.0 {
        return u128::MAX;
    }
    (2f64.powf(log2) - 1e-9).ceil().max(1.0) as u128
}

/// Random code at `rate_bits` drawn from the capacity-achieving input law.
pub fn build_inner_code(
    ch: &PoissonChannel,
    pc: &PowerConstraint,
    blocklength: usize,
    rate_bits: f64,
    seed: u64,
) -> Result<InnerTransmissionCode> {
    let cap = capacity(ch, pc, &SolverConfig::default())?.require_certified()?;
    build_inner_code_from(ch, pc, &cap, blocklength, rate_bits, seed)
}

/// As [`build_inner_code`], reusing a solved capacity.
pub fn build_inner_code_from(
    ch: &PoissonChannel,
    pc: &PowerConstraint,
    cap: &CapacityResult,
    blocklength: usize,
    rate_bits: f64,
    seed: u64,
) -> Result<InnerTransmissionCode> {
    if blocklength == 0 {
        return Err(invalid("blocklength", "must be positive"));
    }
    if !(rate_bits >= 0.0) {
        return Err(invalid("rate_bits", "must be nonnegative"));
    }
    if rate_bits >= cap.capacity_bits {
        return Err(Error::RateAboveCapacity {
            rate: rate_bits,
            capacity: cap.capacity_bits,
        });
    }
    let size = codebook_size(blocklength, rate_bits);
    if size > CODEBOOK_BUDGET {
        return Err(Error::BudgetExceeded {
            size,
            budget: CODEBOOK_BUDGET,
        });
    }
    let mut rng = par::stream(seed, 0);
    InnerTransmissionCode::random(ch.clone(), &cap.distribution, pc, blocklength, size as usize, &mut rng)
}

/// Concatenated identification code.
#[derive(Debug, Clone, PartialEq)]
pub struct IdCodeSpec {
    pub inner: InnerTransmissionCode,
    pub tag: InnerTransmissionCode,
    pub coloring: ColoringFamily,
    /// Tag codewords per color; `1` means no binning.
    pub bins: usize,
    pub lambda1_target: f64,
    pub lambda2_target: f64,
}

/// `ceil(sqrt(n))`.
pub fn tag_length(n: usize) -> usize {
    let mut t = (n as f64).sqrt().ceil() as usize;
    while t * t < n {
        t += 1;
    }
    while t > 0 && (t - 1) * (t - 1) >= n {
        t -= 1;
    }
    t
}

impl IdCodeSpec {
    pub fn new(
        inner: InnerTransmissionCode,
        tag: InnerTransmissionCode,
        coloring: ColoringFamily,
        bins: usize,
        lambda1_target: f64,
        lambda2_target: f64,
    ) -> Result<Self> {
        if !(lambda1_target >= 0.0 && lambda2_target >= 0.0 && lambda1_target + lambda2_target < 1.0) {
            return Err(invalid(
                "lambda",
                "targets must be nonnegative with lambda1 + lambda2 < 1",
            ));
        }
        if inner.size() as u64 != coloring.index_count() {
            return Err(invalid(
                "inner",
                format!("{} codewords for {} indices", inner.size(), coloring.index_count()),
            ));
        }
        if bins == 0 || tag.size() as u64 != coloring.color_count() * bins as u64 {
            return Err(invalid(
                "tag",
                format!(
                    "{} codewords for {} colors x {bins} bins",
                    tag.size(),
                    coloring.color_count()
                ),
            ));
        }
        if tag.blocklength() != tag_length(inner.blocklength()) {
            return Err(invalid(
                "tag",
                format!(
                    "tag length {} must be ceil(sqrt({}))",
                    tag.blocklength(),
                    inner.blocklength()
                ),
            ));
        }
        Ok(Self {
            inner,
            tag,
            coloring,
            bins,
            lambda1_target,
            lambda2_target,
        })
    }

    /// Random inner and tag codes from one input law; the inner code gets
    /// one codeword per field element.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        ch: &PoissonChannel,
        dist: &DiscreteInputDistribution,
        pc: &PowerConstraint,
        n: usize,
        coloring: ColoringFamily,
        bins: usize,
        targets: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        let mut rng = par::stream(seed, 0);
        let inner = InnerTransmissionCode::random(ch.clone(), dist, pc, n, coloring.index_count() as usize, &mut rng)?;
        let mut rng = par::stream(seed, 1);
        let tag = InnerTransmissionCode::random(
            ch.clone(),
            dist,
            pc,
            tag_length(n),
            (coloring.color_count() as usize) * bins,
            &mut rng,
        )?;
        Self::new(inner, tag, coloring, bins, targets.0, targets.1)
    }

    /// Total blocklength `m = n + ceil(sqrt(n))`.
    pub fn total_length(&self) -> usize {
        self.inner.blocklength() + self.tag.blocklength()
    }

    pub fn message_count(&self) -> Option<u128> {
        self.coloring.message_count()
    }

    /// Tag codeword carrying `color` with dummy `dummy`.
    pub fn tag_index(&self, color: u64, dummy: usize) -> usize {
        color as usize * self.bins + dummy
    }

    /// Decodes the index and the color from a received block.
    pub fn decode(&self, received: &[u64]) -> Result<(u64, u64)> {
        if received.len() != self.total_length() {
            return Err(invalid(
                "received",
                format!(
                    "length {} but the code has length {}",
                    received.len(),
                    self.total_length()
                ),
            ));
        }
        let n = self.inner.blocklength();
        let j = self.inner.decode(&received[..n]) as u64;
        let k = (self.tag.decode(&received[n..]) / self.bins) as u64;
        Ok((j, k))
    }

    /// Acceptance rule for candidate `i'` given a decoded `(j, color)`.
    pub fn accepts(&self, j: u64, color: u64, candidate: u128) -> bool {
        self.coloring.color(candidate, j) == color
    }
}

/// One randomized encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdCodeword {
    pub index: u64,
    pub color: u64,
    pub dummy: usize,
    pub input: Vec<f64>,
}

pub fn encode_id<R: Rng + ?Sized>(spec: &IdCodeSpec, message: u128, rng: &mut R) -> Result<IdCodeword> {
    spec.coloring.check_message(message)?;
    let index = rng.gen_range(0..spec.coloring.index_count());
    let color = spec.coloring.color(message, index);
    let dummy = rng.gen_range(0..spec.bins);
    let mut input = spec.inner.codeword(index as usize).to_vec();
    input.extend_from_slice(spec.tag.codeword(spec.tag_index(color, dummy)));
    Ok(IdCodeword {
        index,
        color,
        dummy,
        input,
    })
}

/// Decodes and tests "was `candidate` sent?".
pub fn identify(spec: &IdCodeSpec, received: &[u64], candidate: u128) -> Result<bool> {
    spec.coloring.check_message(candidate)?;
    let (j, k) = spec.decode(received)?;
    Ok(spec.accepts(j, k, candidate))
}

/// `log2(log2 N) / m` from `log2 N`.
pub fn id_rate(log2_count: f64, total_length: usize) -> Result<f64> {
    if !(log2_count >= 1.0) {
        return Err(invalid("N", "identification rate needs at least two messages"));
    }
    if total_length == 0 {
        return Err(invalid("m", "blocklength must be positive"));
    }
    Ok(log2_count.log2() / total_length as f64)
}

pub fn rate_of(spec: &IdCodeSpec) -> Result<f64> {
    id_rate(spec.coloring.log2_message_count(), spec.total_length())
}

/// How the encoded block reaches the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    /// Sampled through the codes' Poisson channel and ML-decoded.
    Poisson,
    /// The receiver recovers the index and color exactly, leaving only
    /// coloring collisions.
    Noiseless,
}

/// Monte-Carlo identification experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorExperiment {
    /// Transmissions per sender.
    pub trials: u64,
    pub senders: usize,
    /// Wrong candidates tested against each sender.
    pub candidates: usize,
    pub seed: u64,
}

impl Default for ErrorExperiment {
    fn default() -> Self {
        Self {
            trials: 10_000,
            senders: 16,
            candidates: 16,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondKind {
    /// Worst sampled pair.
    pub worst: Proportion,
    pub worst_sender: u128,
    pub worst_candidate: u128,
    /// Exact collision count of the worst pair over the index space.
    pub worst_collisions: u64,
    /// All pairs pooled.
    pub pooled: Proportion,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trials: u64,
    pub senders: usize,
    pub link: Link,
    /// Pooled over senders.
    pub first_kind: Proportion,
    pub worst_sender_first_kind: Proportion,
    /// Absent when the code has a single message.
    pub second_kind: Option<SecondKind>,
    /// `d / index_count`, the largest exact collision fraction.
    pub collision_bound: f64,
    pub seed: u64,
}

/// Per-trial detail: the self test of one sender and one cross test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub true_msg: u128,
    pub candidate: u128,
    pub accepted: bool,
    pub first_kind: bool,
    pub second_kind: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMeasurement {
    pub report: TrialReport,
    pub records: Vec<TrialRecord>,
}

const TAG_PAIRS: u64 = 0x7061_6972;

fn random_message<R: Rng + ?Sized>(count: Option<u128>, rng: &mut R) -> u128 {
    match count {
        Some(n) => rng.gen_range(0..n),
        None => rng.gen(),
    }
}

/// Sender messages and, per sender, distinct wrong candidates.
pub fn sample_pairs(spec: &IdCodeSpec, exp: &ErrorExperiment) -> (Vec<u128>, Vec<Vec<u128>>) {
    let count = spec.message_count();
    let mut rng = par::stream(par::derive_seed(exp.seed, TAG_PAIRS), 0);
    let senders: Vec<u128> = (0..exp.senders).map(|_| random_message(count, &mut rng)).collect();
    let candidates = senders
        .iter()
        .map(|&s| {
            if count == Some(1) {
                return Vec::new();
            }
            (0..exp.candidates)
                .map(|_| loop {
                    let c = random_message(count, &mut rng);
                    if c != s {
                        break c;
                    }
                })
                .collect()
        })
        .collect();
    (senders, candidates)
}

pub fn measure_errors(spec: &IdCodeSpec, link: Link, exp: &ErrorExperiment) -> Result<ErrorMeasurement> {
    measure_errors_with(spec, link, exp, Exec::default())
}

pub fn measure_errors_with(
    spec: &IdCodeSpec,
    link: Link,
    exp: &ErrorExperiment,
    exec: Exec,
) -> Result<ErrorMeasurement> {
    if exp.trials == 0 || exp.senders == 0 {
        return Err(invalid("trials", "need at least one trial and one sender"));
    }
    let (senders, candidates) = sample_pairs(spec, exp);
    let s_count = senders.len();
    let c_count = candidates[0].len();

    // per trial: self-test misses per sender, then accept flags per pair
    let outcomes: Vec<(Vec<bool>, Vec<bool>)> = exec.map(exp.trials as usize, |t| {
        let mut rng = par::stream(exp.seed, t as u64);
        let mut misses = Vec::with_capacity(s_count);
        let mut accepts = Vec::with_capacity(s_count * c_count);
        for (s, &msg) in senders.iter().enumerate() {
            let cw = encode_id(spec, msg, &mut rng).expect("sampled message in range");
            let (j, k) = match link {
                Link::Noiseless => (cw.index, cw.color),
                Link::Poisson => {
                    let y: Vec<u64> = cw
                        .input
                        .iter()
                        .map(|&x| spec.inner.channel().sample(x, &mut rng))
                        .collect();
                    spec.decode(&y).expect("block has the code length")
                }
            };
            misses.push(!spec.accepts(j, k, msg));
            for &c in &candidates[s] {
                accepts.push(spec.accepts(j, k, c));
            }
        }
        (misses, accepts)
    });

    let trials = exp.trials;
    let mut miss_by_sender = vec![0u64; s_count];
    let mut accept_by_pair = vec![0u64; s_count * c_count];
    let mut records = Vec::with_capacity(2 * trials as usize);
    for (t, (misses, accepts)) in outcomes.iter().enumerate() {
        for (a, m) in miss_by_sender.iter_mut().zip(misses) {
            *a += *m as u64;
        }
        for (a, m) in accept_by_pair.iter_mut().zip(accepts) {
            *a += *m as u64;
        }
        let s = t % s_count;
        records.push(TrialRecord {
            trial: t as u64,
            true_msg: senders[s],
            candidate: senders[s],
            accepted: !misses[s],
            first_kind: misses[s],
            second_kind: false,
        });
        if c_count > 0 {
            let c = (t / s_count) % c_count;
            let accepted = accepts[s * c_count + c];
            records.push(TrialRecord {
                trial: t as u64,
                true_msg: senders[s],
                candidate: candidates[s][c],
                accepted,
                first_kind: false,
                second_kind: accepted,
            });
        }
    }

    let first_kind = Proportion::new(miss_by_sender.iter().sum(), trials * s_count as u64);
    let worst_s = (0..s_count)
        .max_by_key(|&s| (miss_by_sender[s], std::cmp::Reverse(s)))
        .unwrap_or(0);
    let worst_sender_first_kind = Proportion::new(miss_by_sender[worst_s], trials);
    let second_kind = (c_count > 0).then(|| {
        let w = (0..accept_by_pair.len())
            .max_by_key(|&p| (accept_by_pair[p], std::cmp::Reverse(p)))
            .unwrap_or(0);
        let (ws, wc) = (w / c_count, w % c_count);
        SecondKind {
            worst: Proportion::new(accept_by_pair[w], trials),
            worst_sender: senders[ws],
            worst_candidate: candidates[ws][wc],
            worst_collisions: spec.coloring.collisions(senders[ws], candidates[ws][wc]),
            pooled: Proportion::new(accept_by_pair.iter().sum(), trials * accept_by_pair.len() as u64),
            pairs: accept_by_pair.len(),
        }
    });
    let collision_bound = spec.coloring.degree() as f64 / spec.coloring.index_count() as f64;
    Ok(ErrorMeasurement {
        report: TrialReport {
            trials,
            senders: s_count,
            link,
            first_kind,
            worst_sender_first_kind,
            second_kind,
            collision_bound,
            seed: exp.seed,
        },
        records,
    })
}

/// Construction sizes at one blocklength of the scaling schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub m: usize,
    pub q: u64,
    /// `log2(d + 1)`
    pub log2_coefficients: f64,
    /// `log2(log2 N)`
    pub log2_log2_count: f64,
    /// `log2(log2 N) / m`
    pub rate: f64,
    pub target: f64,
}

/// Sizes of the coloring family that hits the identification rate
/// `target` at each `n`: `q` is the smallest prime `>= 2^ceil(sqrt(n) eps)`
/// and `d + 1 = ceil(2^(L target) / log2 q)`, where `L` is `m` when
/// `per_total_length` is set and `n` otherwise. Only sizes are computed;
/// `d` may exceed `q`.
pub fn scaling_schedule(ns: &[usize], eps: f64, target: f64, per_total_length: bool) -> Result<Vec<ScalingRow>> {
    if !(eps > 0.0) || !(target > 0.0) {
        return Err(invalid("eps", "eps and target must be positive"));
    }
    ns.iter()
        .map(|&n| {
            if n == 0 {
                return Err(invalid("n", "must be positive"));
            }
            let m = n + tag_length(n);
            let bits = ((n as f64).sqrt() * eps).ceil().max(1.0);
            if bits > 40.0 {
                return Err(invalid("eps", "field size beyond 2^40"));
            }
            let q = next_prime(2f64.powf(bits) as u64);
            let len = if per_total_length { m } else { n } as f64;
            let log2_q = (q as f64).log2();
            // d + 1 = ceil(2^(len target) / log2 q), kept in log form
            let ratio_log2 = len * target - log2_q.log2();
            let log2_coefficients = if ratio_log2 > 52.0 {
                ratio_log2
            } else {
                2f64.powf(ratio_log2).ceil().max(1.0).log2()
            };
            let log2_log2_count = log2_coefficients + log2_q.log2();
            Ok(ScalingRow {
                n,
                m,
                q,
                log2_coefficients,
                log2_log2_count,
                rate: log2_log2_count / m as f64,
                target,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::stream;

    fn clean_channel() -> PoissonChannel {
        PoissonChannel::new(1e-9, 10_000.0).unwrap()
    }

    /// Codeword `j` sends `200 j` in every slot.
    fn level_code(ch: &PoissonChannel, size: usize, len: usize) -> InnerTransmissionCode {
        let cws = (0..size).map(|j| vec![200.0 * j as f64; len]).collect();
        InnerTransmissionCode::from_codewords(ch.clone(), cws).unwrap()
    }

    fn clean_spec(q: u64, d: u64) -> IdCodeSpec {
        let ch = clean_channel();
        let coloring = ColoringFamily::full(q, d).unwrap();
        IdCodeSpec::new(
            level_code(&ch, q as usize, 4),
            level_code(&ch, q as usize, 2),
            coloring,
            1,
            0.05,
            0.05,
        )
        .unwrap()
    }

    #[test]
    fn primes() {
        assert!(is_prime(2) && is_prime(257) && is_prime(65537));
        assert!(!is_prime(1) && !is_prime(255) && !is_prime(65535));
        assert_eq!(next_prime(256), 257);
        assert_eq!(next_prime(2), 2);
    }

    #[test]
    fn coloring_validation_and_counts() {
        assert!(ColoringFamily::full(8, 1).is_err());
        assert!(ColoringFamily::full(7, 7).is_err());
        assert!(ColoringFamily::new(7, 1, 8).is_err());
        let f = ColoringFamily::full(257, 4).unwrap();
        assert_eq!(f.message_count(), Some(257u128.pow(5)));
        assert!(f.check_message(257u128.pow(5)).is_err());
        // 7 + 3 j + j^2 at j = 2 over F_11
        let f = ColoringFamily::full(11, 2).unwrap();
        let msg = 7 + 3 * 11 + 121;
        assert_eq!(f.coefficients(msg), vec![7, 3, 1]);
        assert_eq!(f.color(msg, 2), (7 + 6 + 4) % 11);
    }

    #[test]
    fn coloring_soundness_exhaustive() {
        for (q, d) in [(7u64, 3u64), (11, 2), (5, 3), (3, 1)] {
            let f = ColoringFamily::full(q, d).unwrap();
            let n = f.message_count().unwrap();
            let colors: Vec<Vec<u64>> = (0..n).map(|m| (0..q).map(|j| f.color(m, j)).collect()).collect();
            for a in 0..n as usize {
                for b in a + 1..n as usize {
                    let c = colors[a].iter().zip(&colors[b]).filter(|(x, y)| x == y).count() as u64;
                    assert!(c <= d, "q={q} d={d} messages {a},{b} collide on {c}");
                }
            }
        }
    }

    #[test]
    fn degree_zero_colors_are_constant() {
        let f = ColoringFamily::full(5, 0).unwrap();
        for m in 0..5u128 {
            let c: Vec<u64> = (0..5).map(|j| f.color(m, j)).collect();
            assert!(c.iter().all(|&v| v == m as u64));
        }
    }

    #[test]
    fn collision_triples_exhaustive() {
        let spec = clean_spec(7, 2);
        let f = &spec.coloring;
        let n = f.message_count().unwrap();
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let mut accepted = 0;
                for j in 0..7 {
                    if spec.accepts(j, f.color(a, j), b) {
                        accepted += 1;
                    }
                }
                assert_eq!(accepted, f.collisions(a, b));
                assert!(accepted as f64 / 7.0 <= 2.0 / 7.0);
            }
        }
    }

    #[test]
    fn single_codeword_never_errs() {
        let ch = PoissonChannel::new(1.0, 5.0).unwrap();
        let code = InnerTransmissionCode::from_codewords(ch, vec![vec![2.0; 5]]).unwrap();
        assert_eq!(code.block_error(1000, 3, Exec::Sequential).successes, 0);
    }

    #[test]
    fn decode_ties_go_to_lowest_index() {
        let ch = PoissonChannel::new(1.0, 5.0).unwrap();
        let code =
            InnerTransmissionCode::from_codewords(ch, vec![vec![3.0, 3.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(code.decode(&[1, 1]), 1);
    }

    #[test]
    fn encoding_is_reproducible_and_respects_power() {
        let ch = PoissonChannel::new(1.0, 5.0).unwrap();
        let pc = PowerConstraint::new(5.0, 2.0).unwrap();
        let dist = DiscreteInputDistribution::new(vec![(0.0, 0.7), (5.0, 0.3)]).unwrap();
        let spec = IdCodeSpec::random(
            &ch,
            &dist,
            &pc,
            16,
            ColoringFamily::full(13, 2).unwrap(),
            3,
            (0.05, 0.05),
            9,
        )
        .unwrap();
        let a = encode_id(&spec, 100, &mut stream(4, 2)).unwrap();
        let b = encode_id(&spec, 100, &mut stream(4, 2)).unwrap();
        assert_eq!(a, b);
        for c in spec.inner.codewords() {
            assert!(c.iter().all(|&x| x <= 5.0));
            assert!(c.iter().sum::<f64>() <= 16.0 * 2.0 + 5.0);
        }
        for c in spec.tag.codewords() {
            assert!(c.iter().sum::<f64>() <= 4.0 * 2.0 + 5.0);
        }
        assert_eq!(a.input.len(), 20);
        assert!(encode_id(&spec, 13u128.pow(3), &mut stream(4, 2)).is_err());
    }

    #[test]
    fn encoded_index_is_uniform() {
        let spec = clean_spec(7, 1);
        let n = 100_000;
        let mut counts = [0u64; 7];
        let mut rng = stream(11, 0);
        for _ in 0..n {
            counts[encode_id(&spec, 12, &mut rng).unwrap().index as usize] += 1;
        }
        let e = n as f64 / 7.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 6 degrees of freedom: mean 6, sd sqrt(12)
        assert!(chi2 < 6.0 + 3.0 * 12f64.sqrt(), "chi2 {chi2}");
    }

    #[test]
    fn clean_channel_identifies() {
        let spec = clean_spec(5, 1);
        let mut rng = stream(1, 0);
        for msg in 0..25u128 {
            let cw = encode_id(&spec, msg, &mut rng).unwrap();
            let y = cw
                .input
                .iter()
                .map(|&x| spec.inner.channel().sample(x, &mut rng))
                .collect::<Vec<_>>();
            assert!(identify(&spec, &y, msg).unwrap());
            for other in 0..25u128 {
                if other != msg && spec.coloring.color(other, cw.index) != cw.color {
                    assert!(!identify(&spec, &y, other).unwrap());
                }
            }
        }
        assert!(identify(&spec, &[0; 3], 0).is_err());
    }

    #[test]
    fn rates() {
        assert_eq!(id_rate(2.0, 1).unwrap(), 1.0);
        assert_eq!(id_rate(64.0, 64).unwrap(), 0.09375);
        assert!(id_rate(0.0, 4).is_err());
        let spec = clean_spec(5, 1);
        let expected = (2.0 * 5f64.log2()).log2() / 6.0;
        assert!((rate_of(&spec).unwrap() - expected).abs() < 1e-15);
        assert_eq!(tag_length(64), 8);
        assert_eq!(tag_length(65), 9);
        assert_eq!(tag_length(1), 1);
        assert_eq!(codebook_size(64, 0.0), 1);
        assert_eq!(codebook_size(4, 0.5), 4);
    }

    #[test]
    fn scaling_schedule_tracks_target() {
        let (c, eps) = (0.74, 0.1);
        let target = c - 2.0 * eps;
        // sized against n: log2 log2 N / n near the target
        for row in scaling_schedule(&[16, 36, 64], eps, target, false).unwrap() {
            let per_n = row.log2_log2_count / row.n as f64;
            assert!((per_n - target).abs() <= 0.1 * target, "{row:?}");
        }
        // sized against m: the identification rate itself
        for row in scaling_schedule(&[16, 36, 64], eps, target, true).unwrap() {
            assert!((row.rate - target).abs() <= 0.1 * target, "{row:?}");
            assert!(row.rate >= target - 1e-12);
        }
    }

    #[test]
    fn rate_above_capacity_rejected() {
        let ch = PoissonChannel::new(1.0, 5.0).unwrap();
        let pc = PowerConstraint::peak(5.0).unwrap();
        assert!(matches!(
            build_inner_code(&ch, &pc, 8, 0.8, 1),
            Err(Error::RateAboveCapacity { .. })
        ));
    }

    #[test]
    fn no_candidates_means_no_second_kind() {
        let spec = clean_spec(3, 1);
        let exp = ErrorExperiment {
            trials: 10,
            senders: 2,
            candidates: 0,
            seed: 0,
        };
        let m = measure_errors(&spec, Link::Noiseless, &exp).unwrap();
        assert_eq!(m.report.first_kind.successes, 0);
        assert!(m.report.second_kind.is_none());
        assert_eq!(m.records.len(), 10);
    }

    #[test]
    fn noiseless_second_kind_matches_collisions() {
        let spec = clean_spec(11, 2);
        let exp = ErrorExperiment {
            trials: 4000,
            senders: 4,
            candidates: 4,
            seed: 5,
        };
        let r = measure_errors(&spec, Link::Noiseless, &exp).unwrap().report;
        let sk = r.second_kind.unwrap();
        let p = sk.worst_collisions as f64 / 11.0;
        assert!(p <= r.collision_bound + 1e-15);
        let sigma = (p * (1.0 - p) / 4000.0).sqrt().max(1e-3);
        assert!((sk.worst.rate - p).abs() <= 4.0 * sigma, "{} vs {p}", sk.worst.rate);
    }
}
