//! Constrained capacity of the Poisson channel and its wiretap variants.
//!
//! Pipeline: constrained Blahut–Arimoto on a uniform input grid (the average
//! constraint enforced through a Lagrange multiplier found by bisection),
//! extraction of the mass clusters into a sparse support, refinement of the
//! support locations against the Lagrangian, and a final certificate of the
//! optimality conditions on a dense verification grid.
//!
//! The same machinery maximizes a signed sum of mutual informations, which
//! covers both `I(X;Y)` and the secrecy objective `I(X;Y) - I(X;Z)`.

use std::f64::consts::{LN_2, LOG2_E};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelLaw, GenericDmc, PoissonChannel, PowerConstraint, WiretapPair};
use crate::error::{invalid, Error, Result};
use crate::par::{self, Exec};

/// Floor for `ln P(y)` so that zero-probability outputs stay finite.
const LN_FLOOR: f64 = -708.0;

/// Secrecy values below this many bits count as zero.
pub const SECRECY_POSITIVITY: f64 = 1e-6;

/// Finite-support input law `sum_j p_j delta(x - x_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInputDistribution {
    points: Vec<(f64, f64)>,
}

impl DiscreteInputDistribution {
    /// Validates strictly increasing locations, positive masses summing to 1.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("points", "empty support"));
        }
        if points.iter().any(|&(x, p)| !(x >= 0.0) || !(p > 0.0) || !x.is_finite()) {
            return Err(invalid("points", "locations must be nonnegative and masses positive"));
        }
        if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(invalid("points", "locations must be strictly increasing"));
        }
        let total: f64 = points.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(invalid("points", format!("masses sum to {total}")));
        }
        Ok(Self { points })
    }

    pub fn point_mass(x: f64) -> Result<Self> {
        Self::new(vec![(x, 1.0)])
    }

    pub fn uniform(xs: &[f64]) -> Result<Self> {
        let p = 1.0 / xs.len() as f64;
        Self::new(xs.iter().map(|&x| (x, p)).collect())
    }

    /// Sorts, merges duplicate locations, drops zero masses and
    /// renormalizes.
    pub fn from_unnormalized(mut points: Vec<(f64, f64)>) -> Result<Self> {
        points.retain(|&(_, p)| p > 0.0);
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        for (x, p) in points {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += p,
                _ => merged.push((x, p)),
            }
        }
        let total: f64 = merged.iter().map(|p| p.1).sum();
        if !(total > 0.0) {
            return Err(invalid("points", "no positive mass"));
        }
        merged.iter_mut().for_each(|p| p.1 /= total);
        Self::new(merged)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn locations(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn mean(&self) -> f64 {
        self.points.iter().map(|(x, p)| x * p).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.points.iter().map(|(x, p)| x * x * p).sum()
    }

    /// Whether the support fits under the peak and the mean under the
    /// average limit.
    pub fn satisfies(&self, pc: &PowerConstraint) -> bool {
        self.points.last().is_none_or(|p| p.0 <= pc.p_max + 1e-12) && self.mean() <= pc.p_avg + 1e-9
    }

    /// Index of a support point drawn according to the masses.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (j, (_, p)) in self.points.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        self.points.len() - 1
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.points[self.sample_index(rng)].0
    }
}

/// Output pmf induced by an input law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDistribution {
    pub pmf: Vec<f64>,
}

impl OutputDistribution {
    pub fn of(dist: &DiscreteInputDistribution, law: &dyn ChannelLaw) -> Self {
        let mut pmf = vec![0.0; law.output_len()];
        let mut row = vec![0.0; law.output_len()];
        for &(x, p) in dist.points() {
            law.row_into(x, &mut row);
            pmf.iter_mut().zip(&row).for_each(|(o, w)| *o += p * w);
        }
        Self { pmf }
    }
}

fn ln_floor(v: f64) -> f64 {
    if v > 0.0 {
        v.ln().max(LN_FLOOR)
    } else {
        LN_FLOOR
    }
}

fn neg_entropy(row: &[f64]) -> f64 {
    row.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum()
}

/// `D(W(.|x) || P_Y)` in nats.
pub fn divergence_to_output(law: &dyn ChannelLaw, x: f64, output: &OutputDistribution) -> f64 {
    let row = law.row(x);
    let mut d = 0.0;
    for (w, q) in row.iter().zip(&output.pmf) {
        if *w > 0.0 {
            if *q <= 0.0 {
                return f64::INFINITY;
            }
            d += w * (w / q).ln();
        }
    }
    d
}

/// `I(X;Y)` in bits, as `sum_j p_j D(W(.|x_j) || P_Y)`.
pub fn mutual_information(dist: &DiscreteInputDistribution, law: &dyn ChannelLaw) -> f64 {
    let out = OutputDistribution::of(dist, law);
    let nats: f64 = dist
        .points()
        .iter()
        .map(|&(x, p)| p * divergence_to_output(law, x, &out))
        .sum();
    nats.max(0.0) * LOG2_E
}

/// Lagrangian `I + mu (x - p_avg) - D(W(.|x) || P_Y)` in bits, with `mu` in
/// bits per unit input. At an optimal law it is nonnegative on
/// `[0, p_max]` and vanishes on the support.
pub fn lagrangian(mu: f64, x: f64, dist: &DiscreteInputDistribution, law: &dyn ChannelLaw, p_avg: f64) -> f64 {
    let out = OutputDistribution::of(dist, law);
    let info = mutual_information(dist, law);
    info + mu * (x - p_avg) - divergence_to_output(law, x, &out) * LOG2_E
}

// ---------------------------------------------------------------------------
// Tabulated objective

struct LawTable {
    len: usize,
    rows: Vec<f64>,
    negent: Vec<f64>,
    sign: f64,
}

impl LawTable {
    fn from_law(law: &dyn ChannelLaw, xs: &[f64], sign: f64) -> Self {
        let len = law.output_len();
        let mut rows = vec![0.0; xs.len() * len];
        for (j, &x) in xs.iter().enumerate() {
            law.row_into(x, &mut rows[j * len..(j + 1) * len]);
        }
        Self::from_rows(rows, len, sign)
    }

    fn from_rows(rows: Vec<f64>, len: usize, sign: f64) -> Self {
        let negent = rows.chunks(len).map(neg_entropy).collect();
        Self {
            len,
            rows,
            negent,
            sign,
        }
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.len..(j + 1) * self.len]
    }
}

/// Signed combination of channel laws: the objective is
/// `sum_k sign_k I(X; Y_k)`.
#[derive(Clone, Copy)]
struct Objective<'a> {
    laws: &'a [(&'a dyn ChannelLaw, f64)],
}

impl<'a> Objective<'a> {
    fn is_plain(&self) -> bool {
        self.laws.len() == 1 && self.laws[0].1 > 0.0
    }

    fn tabulate(&self, xs: &[f64]) -> Problem {
        Problem {
            xs: xs.to_vec(),
            tables: self
                .laws
                .iter()
                .map(|(law, s)| LawTable::from_law(*law, xs, *s))
                .collect(),
        }
    }

    /// Score of an arbitrary input against fixed log-outputs.
    fn score_at(&self, x: f64, ln_out: &[Vec<f64>], buf: &mut Vec<f64>) -> f64 {
        let mut s = 0.0;
        for ((law, sign), lo) in self.laws.iter().zip(ln_out) {
            buf.resize(law.output_len(), 0.0);
            law.row_into(x, buf);
            let mut d = 0.0;
            for (w, l) in buf.iter().zip(lo) {
                if *w > 0.0 {
                    d += w * (w.ln() - l);
                }
            }
            s += sign * d;
        }
        s
    }
}

struct Problem {
    xs: Vec<f64>,
    tables: Vec<LawTable>,
}

struct Eval {
    /// Per-point score `sum_k sign_k D(W_k(.|x_j) || P_k)`, nats.
    scores: Vec<f64>,
    /// Objective value `sum_j p_j scores_j`, nats.
    value: f64,
    mean: f64,
    ln_out: Vec<Vec<f64>>,
}

impl Problem {
    fn len(&self) -> usize {
        self.xs.len()
    }

    fn evaluate(&self, p: &[f64]) -> Eval {
        let n = self.len();
        let mut scores = vec![0.0; n];
        let mut ln_out = Vec::with_capacity(self.tables.len());
        for t in &self.tables {
            let mut out = vec![0.0; t.len];
            for (j, &pj) in p.iter().enumerate() {
                if pj > 0.0 {
                    for (o, w) in out.iter_mut().zip(t.row(j)) {
                        *o += pj * w;
                    }
                }
            }
            let lo: Vec<f64> = out.iter().map(|v| ln_floor(*v)).collect();
            for (j, s) in scores.iter_mut().enumerate() {
                let cross: f64 = t.row(j).iter().zip(&lo).map(|(w, l)| w * l).sum();
                *s += t.sign * (t.negent[j] - cross);
            }
            ln_out.push(lo);
        }
        let value = p.iter().zip(&scores).map(|(a, b)| a * b).sum();
        let mean = p.iter().zip(&self.xs).map(|(a, b)| a * b).sum();
        Eval {
            scores,
            value,
            mean,
            ln_out,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct WeightOpts {
    gap_tol: f64,
    max_iter: usize,
}

struct WeightSolution {
    p: Vec<f64>,
    eval: Eval,
    /// `max_j (score_j - mu x_j)`
    upper: f64,
    iterations: usize,
}

impl WeightSolution {
    fn adjusted(&self, mu: f64) -> f64 {
        self.eval.value - mu * self.eval.mean
    }
}

fn max_adjusted(scores: &[f64], xs: &[f64], mu: f64) -> f64 {
    scores
        .iter()
        .zip(xs)
        .map(|(s, x)| s - mu * x)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn normalize(p: &mut [f64]) {
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
}

/// Maximizes `objective - mu E[X]` over the masses on fixed locations.
///
/// Plain capacity uses the Blahut–Arimoto update, whose adjusted objective
/// never decreases. Signed objectives use a multiplicative-gradient update
/// with a backtracked step.
fn solve_weights(problem: &Problem, plain: bool, mu: f64, p0: &[f64], opts: WeightOpts) -> WeightSolution {
    let mut p = p0.to_vec();
    normalize(&mut p);
    let mut eval = problem.evaluate(&p);
    let mut step = 1.0;
    let mut prev = f64::NEG_INFINITY;
    for it in 0..opts.max_iter {
        let upper = max_adjusted(&eval.scores, &problem.xs, mu);
        let current = eval.value - mu * eval.mean;
        if plain {
            debug_assert!(
                current >= prev - 1e-12 * (1.0 + prev.abs()),
                "Blahut-Arimoto lower bound decreased: {prev} -> {current}"
            );
        }
        prev = current;
        if upper - current <= opts.gap_tol {
            return WeightSolution {
                p,
                eval,
                upper,
                iterations: it,
            };
        }
        if plain {
            for ((pj, s), x) in p.iter_mut().zip(&eval.scores).zip(&problem.xs) {
                *pj *= (s - mu * x - upper).exp();
            }
            normalize(&mut p);
            eval = problem.evaluate(&p);
        } else {
            loop {
                let mut cand: Vec<f64> = p
                    .iter()
                    .zip(&eval.scores)
                    .zip(&problem.xs)
                    .map(|((pj, s), x)| pj * (step * (s - mu * x - upper)).exp())
                    .collect();
                normalize(&mut cand);
                let ce = problem.evaluate(&cand);
                if ce.value - mu * ce.mean >= current - 1e-15 {
                    p = cand;
                    eval = ce;
                    step = (step * 1.5).min(16.0);
                    break;
                }
                step *= 0.5;
                if step < 1e-12 {
                    let upper = max_adjusted(&eval.scores, &problem.xs, mu);
                    return WeightSolution {
                        p,
                        eval,
                        upper,
                        iterations: it,
                    };
                }
            }
        }
    }
    let upper = max_adjusted(&eval.scores, &problem.xs, mu);
    WeightSolution {
        p,
        eval,
        upper,
        iterations: opts.max_iter,
    }
}

struct Constrained {
    sol: WeightSolution,
    mu: f64,
    iterations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Bisection {
    /// Options for the first solve at `mu = 0`.
    cold: WeightOpts,
    /// Options for the warm-started solves along the bisection.
    warm: WeightOpts,
    steps: usize,
    mean_tol: f64,
}

/// Enforces `E[X] <= p_avg` through bisection on the multiplier, doubling
/// the upper bracket until the mean drops below the limit.
fn solve_constrained(problem: &Problem, plain: bool, pc: &PowerConstraint, p0: &[f64], opts: Bisection) -> Constrained {
    let mut iterations = 0;
    let free = solve_weights(problem, plain, 0.0, p0, opts.cold);
    iterations += free.iterations;
    if !pc.average_active() || free.eval.mean <= pc.p_avg + opts.mean_tol {
        return Constrained {
            sol: free,
            mu: 0.0,
            iterations,
        };
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut warm = free.p.clone();
    let mut best = loop {
        let s = solve_weights(problem, plain, hi, &warm, opts.warm);
        iterations += s.iterations;
        warm.clone_from(&s.p);
        if s.eval.mean <= pc.p_avg || hi > 1e12 {
            break s;
        }
        lo = hi;
        hi *= 2.0;
    };
    let mut best_mu = hi;
    for _ in 0..opts.steps {
        if (pc.p_avg - best.eval.mean).abs() <= opts.mean_tol || hi - lo <= 1e-15 * (1.0 + hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let s = solve_weights(problem, plain, mid, &warm, opts.warm);
        iterations += s.iterations;
        warm.clone_from(&s.p);
        if s.eval.mean > pc.p_avg {
            lo = mid;
        } else {
            hi = mid;
            best = s;
            best_mu = mid;
        }
    }
    Constrained {
        sol: best,
        mu: best_mu,
        iterations,
    }
}

// ---------------------------------------------------------------------------
// Public types

/// Tolerances and budgets of the capacity pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Uniform grid size for the Blahut–Arimoto stage.
    pub grid_points: usize,
    /// Verification grid size for the optimality certificate.
    pub verify_points: usize,
    /// Certified upper-lower gap, bits.
    pub ba_gap_tol: f64,
    /// Certified Lagrangian violation, bits.
    pub kkt_tol: f64,
    /// Support points below this mass are pruned.
    pub mass_tol: f64,
    /// Support points closer than `merge_rel * p_max` are merged.
    pub merge_rel: f64,
    /// Blahut–Arimoto iterations per grid-stage solve.
    pub grid_iterations: usize,
    /// Outer refinement rounds.
    pub max_refinements: usize,
    /// Random restarts for signed (secrecy) objectives.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_points: 2000,
            verify_points: 10_000,
            ba_gap_tol: 1e-6,
            kkt_tol: 1e-4,
            mass_tol: 1e-9,
            merge_rel: 1e-4,
            grid_iterations: 1500,
            max_refinements: 300,
            restarts: 8,
            seed: 0x5eed,
        }
    }
}

/// Certified optimum of a constrained capacity problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityResult {
    pub capacity_bits: f64,
    pub distribution: DiscreteInputDistribution,
    /// Lagrange multiplier of the average constraint, bits per unit input.
    pub mu: f64,
    /// `max(0, -min L)` over the verification grid and the support, bits.
    pub kkt_max_violation: f64,
    /// `max |L|` over the support points, bits.
    pub kkt_support_residual: f64,
    /// Upper minus lower bound, bits.
    pub ba_gap: f64,
    pub iterations: usize,
    pub certified: bool,
    pub wallclock_ms: f64,
}

impl CapacityResult {
    /// Turns a failed certificate into an error.
    pub fn require_certified(self) -> Result<Self> {
        if self.certified {
            Ok(self)
        } else {
            Err(Error::CertificationFailed(format!(
                "gap {:.3e} bits, KKT violation {:.3e} bits, support residual {:.3e} bits, mean input {}",
                self.ba_gap,
                self.kkt_max_violation,
                self.kkt_support_residual,
                self.distribution.mean()
            )))
        }
    }

    pub fn support_size(&self) -> usize {
        self.distribution.len()
    }
}

/// One Blahut–Arimoto step at multiplier `mu` (bits per unit input).
///
/// `lower` is `I - mu E[X]` and `upper` is `max_j (D_j - mu x_j)` for the
/// input law, both in bits; `upper - lower` is the Csiszár gap.
#[derive(Debug, Clone)]
pub struct BaStep {
    pub distribution: DiscreteInputDistribution,
    pub lower: f64,
    pub upper: f64,
}

pub fn ba_step(dist: &DiscreteInputDistribution, law: &dyn ChannelLaw, mu: f64) -> BaStep {
    let mu_nats = mu * LN_2;
    let laws: [(&dyn ChannelLaw, f64); 1] = [(law, 1.0)];
    let problem = Objective { laws: &laws }.tabulate(&dist.locations());
    let p = dist.masses();
    let eval = problem.evaluate(&p);
    let upper = max_adjusted(&eval.scores, &problem.xs, mu_nats);
    let lower = eval.value - mu_nats * eval.mean;
    let mut next: Vec<f64> = p
        .iter()
        .zip(&eval.scores)
        .zip(&problem.xs)
        .map(|((pj, s), x)| (pj * (s - mu_nats * x - upper).exp()).max(f64::MIN_POSITIVE))
        .collect();
    normalize(&mut next);
    let points = problem.xs.iter().copied().zip(next).collect();
    BaStep {
        distribution: DiscreteInputDistribution { points },
        lower: lower * LOG2_E,
        upper: upper * LOG2_E,
    }
}

// ---------------------------------------------------------------------------
// Pipeline

fn uniform_grid(p_max: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    (0..n).map(|i| p_max * i as f64 / (n - 1) as f64).collect()
}

/// Splits grid masses into clusters at local minima and returns one point
/// per cluster: the cluster's heaviest location carrying the cluster mass.
fn extract_support(xs: &[f64], p: &[f64], mass_tol: f64) -> Vec<(f64, f64)> {
    let peak = p.iter().cloned().fold(0.0, f64::max);
    let floor = mass_tol.max(peak * 1e-7);
    let mut out = Vec::new();
    let mut j = 0;
    while j < p.len() {
        if p[j] < floor {
            j += 1;
            continue;
        }
        // climb to the local maximum, then descend to the next local minimum
        let mut mass = 0.0;
        let mut best = j;
        let mut k = j;
        while k < p.len() && p[k] >= floor {
            mass += p[k];
            if p[k] > p[best] {
                best = k;
            }
            let descending = k > best;
            if descending && k + 1 < p.len() && p[k + 1] > p[k] {
                k += 1;
                break;
            }
            k += 1;
        }
        out.push((xs[best], mass));
        j = k;
    }
    if out.is_empty() {
        let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
        out.push((xs[best], 1.0));
    }
    out
}

fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Masses solved to machine precision on a small fixed support.
struct Support {
    xs: Vec<f64>,
    p: Vec<f64>,
    /// Multiplier of the mean constraint, nats per unit input.
    mu: f64,
    eval: Eval,
    iterations: usize,
}

impl Problem {
    fn subset(&self, keep: &[usize]) -> Problem {
        Problem {
            xs: keep.iter().map(|&j| self.xs[j]).collect(),
            tables: self
                .tables
                .iter()
                .map(|t| LawTable {
                    len: t.len,
                    rows: keep.iter().flat_map(|&j| t.row(j).iter().copied()).collect(),
                    negent: keep.iter().map(|&j| t.negent[j]).collect(),
                    sign: t.sign,
                })
                .collect(),
        }
    }

    /// Hessian of the objective with respect to the masses.
    fn hessian(&self, p: &[f64]) -> DMatrix<f64> {
        let k = self.len();
        let mut h = DMatrix::zeros(k, k);
        for t in &self.tables {
            let mut out = vec![0.0; t.len];
            for (j, &pj) in p.iter().enumerate() {
                out.iter_mut().zip(t.row(j)).for_each(|(o, w)| *o += pj * w);
            }
            for (y, &py) in out.iter().enumerate() {
                if py < 1e-300 {
                    continue;
                }
                let scale = t.sign / py;
                for j in 0..k {
                    let wj = t.rows[j * t.len + y];
                    if wj == 0.0 {
                        continue;
                    }
                    for l in j..k {
                        h[(j, l)] -= scale * wj * t.rows[l * t.len + y];
                    }
                }
            }
        }
        for j in 0..k {
            for l in 0..j {
                h[(j, l)] = h[(l, j)];
            }
        }
        h
    }
}

/// Equality-constrained Newton ascent on the masses, with `sum p = 1` and,
/// when `mean` is given, `sum p x = mean`. Points whose mass reaches zero
/// leave the support. Falls back to the projected gradient wherever the
/// Newton direction is not an ascent direction.
fn newton_masses(mut problem: Problem, p0: &[f64], mean: Option<f64>) -> (Problem, Vec<f64>, Eval, usize) {
    let mut p = p0.to_vec();
    normalize(&mut p);
    let mut iterations = 0;
    loop {
        let eval = problem.evaluate(&p);
        let k = problem.len();
        if iterations >= 200 || k == 1 {
            return (problem, p, eval, iterations);
        }
        iterations += 1;
        let m = if mean.is_some() { 2 } else { 1 };
        let mut a = DMatrix::zeros(m, k);
        for j in 0..k {
            a[(0, j)] = 1.0;
            if m == 2 {
                a[(1, j)] = problem.xs[j];
            }
        }
        let mut residual = DVector::zeros(m);
        residual[0] = 1.0 - p.iter().sum::<f64>();
        if let Some(target) = mean {
            residual[1] = target - eval.mean;
        }
        let feasible = residual.amax() < 1e-13;
        let g = DVector::from_column_slice(&eval.scores);

        let mut kkt = DMatrix::zeros(k + m, k + m);
        kkt.view_mut((0, 0), (k, k)).copy_from(&problem.hessian(&p));
        kkt.view_mut((k, 0), (m, k)).copy_from(&a);
        kkt.view_mut((0, k), (k, m)).copy_from(&a.transpose());
        let mut rhs = DVector::zeros(k + m);
        rhs.rows_mut(0, k).copy_from(&(-&g));
        rhs.rows_mut(k, m).copy_from(&residual);
        let newton = kkt.lu().solve(&rhs).map(|s| s.rows(0, k).into_owned());

        let aat = &a * a.transpose();
        let mut dir = match newton {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            // singular system: minimum-norm step back onto the constraints
            _ => match aat.clone().lu().solve(&residual) {
                Some(coef) if !feasible => a.transpose() * coef,
                _ => DVector::zeros(k),
            },
        };
        if feasible && !(g.dot(&dir) > 0.0) {
            // projected gradient onto the constraint null space
            match aat.lu().solve(&(&a * &g)) {
                Some(coef) => dir = &g - a.transpose() * coef,
                None => return (problem, p, eval, iterations),
            }
        }
        let ascent = g.dot(&dir);
        if feasible && !(ascent > 1e-26) {
            return (problem, p, eval, iterations);
        }

        let t_max = p
            .iter()
            .zip(dir.iter())
            .filter(|(_, d)| **d < 0.0)
            .map(|(pj, d)| -pj / d)
            .fold(f64::INFINITY, f64::min);
        let mut t = t_max.min(1.0);
        let mut candidate: Vec<f64>;
        loop {
            candidate = p.iter().zip(dir.iter()).map(|(pj, d)| (pj + t * d).max(0.0)).collect();
            if !feasible {
                break;
            }
            let value = problem.evaluate(&candidate).value;
            if value >= eval.value - 1e-15 * (1.0 + eval.value.abs()) {
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return (problem, p, eval, iterations);
            }
        }
        if t == t_max {
            // the limiting coordinates land exactly on zero
            for ((c, pj), d) in candidate.iter_mut().zip(&p).zip(dir.iter()) {
                if *d < 0.0 && -pj / d <= t_max {
                    *c = 0.0;
                }
            }
        }
        let keep: Vec<usize> = (0..k).filter(|&j| candidate[j] > 0.0).collect();
        if keep.is_empty() {
            return (problem, p, eval, iterations);
        }
        if keep.len() < k {
            problem = problem.subset(&keep);
            p = keep.iter().map(|&j| candidate[j]).collect();
        } else {
            p = candidate;
        }
    }
}

/// Least-squares slope of the scores against the locations.
fn score_slope(xs: &[f64], scores: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let ms = scores.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(scores).map(|(x, s)| (x - mx) * (s - ms)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if var > 0.0 {
        cov / var
    } else {
        0.0
    }
}

struct Pipeline<'a> {
    objective: Objective<'a>,
    pc: PowerConstraint,
    cfg: &'a SolverConfig,
    verify: &'a Problem,
}

impl<'a> Pipeline<'a> {
    fn mean_tol(&self) -> f64 {
        1e-12 * self.pc.p_max.max(1.0)
    }

    fn grid_stage(&self, p0: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
        let xs = uniform_grid(self.pc.p_max, self.cfg.grid_points);
        let problem = self.objective.tabulate(&xs);
        let opts = WeightOpts {
            gap_tol: 1e-7,
            max_iter: self.cfg.grid_iterations,
        };
        let bisection = Bisection {
            cold: opts,
            warm: WeightOpts {
                max_iter: opts.max_iter.min(300),
                ..opts
            },
            steps: 30,
            mean_tol: 1e-4 * self.pc.p_max,
        };
        let c = solve_constrained(&problem, self.objective.is_plain(), &self.pc, p0, bisection);
        (xs, c.sol.p, c.iterations)
    }

    fn merge_close(&self, xs: &mut Vec<f64>, p: &mut Vec<f64>) {
        let tol = self.cfg.merge_rel * self.pc.p_max;
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let mut nx: Vec<f64> = Vec::with_capacity(xs.len());
        let mut np: Vec<f64> = Vec::with_capacity(xs.len());
        for i in order {
            match (nx.last_mut(), np.last_mut()) {
                (Some(lx), Some(lp)) if xs[i] - *lx < tol => {
                    let total = *lp + p[i];
                    // boundary points stay on the boundary
                    *lx = if *lx == 0.0 {
                        0.0
                    } else if xs[i] == self.pc.p_max {
                        xs[i]
                    } else {
                        (*lx * *lp + xs[i] * p[i]) / total
                    };
                    *lp = total;
                }
                _ => {
                    nx.push(xs[i]);
                    np.push(p[i]);
                }
            }
        }
        *xs = nx;
        *p = np;
    }

    fn solve_masses(&self, xs: &[f64], p: &[f64]) -> Support {
        let mut iterations = 0;
        let (problem, free, eval, it) = newton_masses(self.objective.tabulate(xs), p, None);
        iterations += it;
        let (problem, p, eval, mu) = if !self.pc.average_active() || eval.mean <= self.pc.p_avg + self.mean_tol() {
            (problem, free, eval, 0.0)
        } else {
            let (problem, p, eval, it) = newton_masses(self.objective.tabulate(xs), p, Some(self.pc.p_avg));
            iterations += it;
            let mu = score_slope(&problem.xs, &eval.scores).max(0.0);
            (problem, p, eval, mu)
        };
        if p.len() > 1 && p.iter().any(|&v| v < self.cfg.mass_tol) {
            let keep: Vec<usize> = (0..p.len()).filter(|&j| p[j] >= self.cfg.mass_tol).collect();
            let xs: Vec<f64> = keep.iter().map(|&j| problem.xs[j]).collect();
            let p: Vec<f64> = keep.iter().map(|&j| p[j]).collect();
            let mut s = self.solve_masses(&xs, &p);
            s.iterations += iterations;
            return s;
        }
        Support {
            xs: problem.xs,
            p,
            mu,
            eval,
            iterations,
        }
    }

    /// Best location for each support point within its Voronoi bracket,
    /// maximizing `score(x) - mu x` against the current outputs.
    fn location_targets(&self, s: &Support) -> Vec<f64> {
        let xs = &s.xs;
        let p_max = self.pc.p_max;
        let tol = 1e-12 * p_max.max(1e-300);
        let mut buf = Vec::new();
        let mut f = |x: f64| self.objective.score_at(x, &s.eval.ln_out, &mut buf) - s.mu * x;
        (0..xs.len())
            .map(|j| {
                let a = if j == 0 { 0.0 } else { 0.5 * (xs[j - 1] + xs[j]) };
                let b = if j + 1 == xs.len() {
                    p_max
                } else {
                    0.5 * (xs[j] + xs[j + 1])
                };
                let (mut bx, mut bf) = golden_max(&mut f, a, b, tol);
                let here = f(xs[j]);
                if here >= bf {
                    bx = xs[j];
                    bf = here;
                }
                if j == 0 {
                    let f0 = f(0.0);
                    if f0 >= bf - 1e-15 {
                        bx = 0.0;
                        bf = f0;
                    }
                }
                if j + 1 == xs.len() && f(p_max) > bf {
                    bx = p_max;
                }
                bx
            })
            .collect()
    }

    fn refine(&self, mut xs: Vec<f64>, mut p: Vec<f64>) -> Support {
        if self.pc.average_active() && xs[0] > self.pc.p_avg {
            xs.insert(0, 0.0);
            p.insert(0, 0.5);
        }
        self.merge_close(&mut xs, &mut p);
        let move_tol = 1e-11 * self.pc.p_max.max(1e-300);
        let merge_tol = self.cfg.merge_rel * self.pc.p_max;
        let insert_tol = 1e-11;
        let mut s = self.solve_masses(&xs, &p);
        let mut iterations = s.iterations;
        for _round in 0..self.cfg.max_refinements {
            let targets = self.location_targets(&s);
            let shift =
                s.xs.iter()
                    .zip(&targets)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
            if shift > move_tol {
                // damped move: the largest fraction that does not lower the
                // objective
                let mut t = 1.0;
                let mut moved = false;
                for _ in 0..10 {
                    let mut trial: Vec<f64> = s.xs.iter().zip(&targets).map(|(a, b)| a + t * (b - a)).collect();
                    let mut tp = s.p.clone();
                    self.merge_close(&mut trial, &mut tp);
                    let cand = self.solve_masses(&trial, &tp);
                    iterations += cand.iterations;
                    let feasible = !self.pc.average_active() || cand.eval.mean <= self.pc.p_avg + 1e-9;
                    if feasible && cand.eval.value >= s.eval.value - 1e-15 {
                        s = cand;
                        moved = true;
                        break;
                    }
                    t *= 0.5;
                }
                if moved {
                    continue;
                }
            }

            // cutting plane: add the worst violator of the optimality
            // condition on the verification grid
            let grid = self.verify.evaluate_against(&s.eval.ln_out);
            let level = max_adjusted(&s.eval.scores, &s.xs, s.mu);
            let worst = grid
                .iter()
                .zip(&self.verify.xs)
                .map(|(sc, x)| (sc - s.mu * x - level, *x))
                .filter(|(_, x)| s.xs.iter().all(|v| (v - x).abs() >= merge_tol))
                .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
            if worst.0 > insert_tol {
                let mut xs = s.xs.clone();
                let mut p = s.p.clone();
                let at = xs.partition_point(|v| *v < worst.1);
                xs.insert(at, worst.1);
                p.insert(at, 1e-3);
                s = self.solve_masses(&xs, &p);
                iterations += s.iterations;
                continue;
            }
            break;
        }
        s.iterations = iterations;
        s
    }

    fn certify(&self, s: Support, iterations: usize, start: Instant) -> CapacityResult {
        let Support { xs, p, mu, eval, .. } = s;
        let value = eval.value;
        let mean = eval.mean;
        let grid_scores = self.verify.evaluate_against(&eval.ln_out);
        let p_avg_term = if mu > 0.0 { self.pc.p_avg } else { 0.0 };
        // Lagrangian in nats
        let lag = |s: f64, x: f64| value + mu * (x - p_avg_term) - s;
        let mut min_l = f64::INFINITY;
        let mut upper = f64::NEG_INFINITY;
        for (s, x) in grid_scores
            .iter()
            .zip(&self.verify.xs)
            .chain(eval.scores.iter().zip(&xs))
        {
            min_l = min_l.min(lag(*s, *x));
            upper = upper.max(s - mu * x);
        }
        let support_residual = eval
            .scores
            .iter()
            .zip(&xs)
            .map(|(s, x)| lag(*s, *x).abs())
            .fold(0.0, f64::max);
        let lower = value - mu * (mean - p_avg_term);
        let upper = upper + mu * p_avg_term;
        let gap = (upper - lower).max(0.0) * LOG2_E;
        let violation = (-min_l).max(0.0) * LOG2_E;
        let support_residual = support_residual * LOG2_E;
        let certified = gap <= self.cfg.ba_gap_tol
            && violation <= self.cfg.kkt_tol
            && support_residual <= self.cfg.kkt_tol
            && mean <= self.pc.p_avg + 1e-9;
        let points: Vec<(f64, f64)> = xs.into_iter().zip(p).collect();
        let distribution =
            DiscreteInputDistribution::from_unnormalized(points).expect("refined support has positive mass");
        CapacityResult {
            capacity_bits: (value * LOG2_E).max(0.0),
            distribution,
            mu: mu * LOG2_E,
            kkt_max_violation: violation,
            kkt_support_residual: support_residual,
            ba_gap: gap,
            iterations,
            certified,
            wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }

    fn run(&self, p0: &[f64], start: Instant) -> CapacityResult {
        let (xs, p, grid_iters) = self.grid_stage(p0);
        let support = extract_support(&xs, &p, self.cfg.mass_tol);
        let (sx, sp): (Vec<f64>, Vec<f64>) = support.into_iter().unzip();
        let refined = self.refine(sx, sp);
        let iterations = grid_iters + refined.iterations;
        self.certify(refined, iterations, start)
    }
}

impl Problem {
    /// Scores of this problem's points against externally fixed outputs.
    fn evaluate_against(&self, ln_out: &[Vec<f64>]) -> Vec<f64> {
        let mut scores = vec![0.0; self.len()];
        for (t, lo) in self.tables.iter().zip(ln_out) {
            for (j, s) in scores.iter_mut().enumerate() {
                let cross: f64 = t.row(j).iter().zip(lo).map(|(w, l)| w * l).sum();
                *s += t.sign * (t.negent[j] - cross);
            }
        }
        scores
    }
}

fn validate(pc: &PowerConstraint, cfg: &SolverConfig, laws: &[(&dyn ChannelLaw, f64)]) -> Result<()> {
    if cfg.grid_points < 2 || cfg.verify_points < 2 {
        return Err(invalid("grid_points", "grids need at least two points"));
    }
    if !(cfg.ba_gap_tol > 0.0) || !(cfg.kkt_tol > 0.0) {
        return Err(invalid("tol", "tolerances must be positive"));
    }
    for (law, _) in laws {
        if law.input_bound() + 1e-12 < pc.p_max {
            return Err(invalid(
                "p_max",
                format!(
                    "channel truncation only certified up to {}, constraint asks for {}",
                    law.input_bound(),
                    pc.p_max
                ),
            ));
        }
    }
    Ok(())
}

fn solve_signed(
    laws: &[(&dyn ChannelLaw, f64)],
    pc: &PowerConstraint,
    cfg: &SolverConfig,
    exec: Exec,
) -> Result<CapacityResult> {
    validate(pc, cfg, laws)?;
    let start = Instant::now();
    let objective = Objective { laws };
    let verify = objective.tabulate(&uniform_grid(pc.p_max, cfg.verify_points));
    let pipeline = Pipeline {
        objective,
        pc: *pc,
        cfg,
        verify: &verify,
    };
    let g = cfg.grid_points;
    if objective.is_plain() {
        return Ok(pipeline.run(&vec![1.0 / g as f64; g], start));
    }
    let restarts = cfg.restarts.max(1);
    let results = exec.map(restarts, |r| {
        let p0: Vec<f64> = if r == 0 {
            vec![1.0; g]
        } else {
            let mut rng = par::stream(cfg.seed, r as u64);
            (0..g).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect()
        };
        pipeline.run(&p0, start)
    });
    let iterations: usize = results.iter().map(|r| r.iterations).sum();
    let best = results
        .into_iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            (a.certified, a.capacity_bits)
                .partial_cmp(&(b.certified, b.capacity_bits))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ib.cmp(ia))
        })
        .map(|(_, r)| r)
        .expect("at least one restart");
    Ok(CapacityResult {
        iterations,
        wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
        ..best
    })
}

/// `C(W, P_max, P_avg)` for any tabulable channel law.
pub fn capacity_of(law: &dyn ChannelLaw, pc: &PowerConstraint, cfg: &SolverConfig) -> Result<CapacityResult> {
    solve_signed(&[(law, 1.0)], pc, cfg, Exec::Sequential)
}

/// `C(W, P_max, P_avg)` of the Poisson channel with a certificate.
pub fn capacity(ch: &PoissonChannel, pc: &PowerConstraint, cfg: &SolverConfig) -> Result<CapacityResult> {
    capacity_of(ch, pc, cfg)
}

/// `sup [I(X;Y) - I(X;Z)]` over the constrained input class, without any
/// degradedness requirement.
pub fn secrecy_capacity_of(
    main: &dyn ChannelLaw,
    eve: &dyn ChannelLaw,
    pc: &PowerConstraint,
    cfg: &SolverConfig,
    exec: Exec,
) -> Result<CapacityResult> {
    let mut r = solve_signed(&[(main, 1.0), (eve, -1.0)], pc, cfg, exec)?;
    r.capacity_bits = r.capacity_bits.max(0.0);
    Ok(r)
}

/// Secrecy capacity of a degraded Poisson wiretap pair.
pub fn secrecy_capacity(wp: &WiretapPair, pc: &PowerConstraint, cfg: &SolverConfig) -> Result<CapacityResult> {
    if !wp.degraded() {
        return Err(Error::NotDegraded(format!(
            "eavesdropper dark current {} is below the main channel's {}",
            wp.eve.dark_current(),
            wp.main.dark_current()
        )));
    }
    secrecy_capacity_of(&wp.main, &wp.eve, pc, cfg, Exec::default())
}

/// Secure identification capacity together with the values it is built from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidReport {
    pub c_main: f64,
    pub c_secrecy: f64,
    pub c_sid: f64,
}

impl SidReport {
    fn from_parts(c_main: f64, c_secrecy: f64) -> Self {
        let c_sid = if c_secrecy > SECRECY_POSITIVITY { c_main } else { 0.0 };
        Self {
            c_main,
            c_secrecy,
            c_sid,
        }
    }
}

/// `C(W)` if the secrecy capacity is positive, else `0`.
pub fn sid_capacity(wp: &WiretapPair, pc: &PowerConstraint, cfg: &SolverConfig) -> Result<SidReport> {
    let cs = secrecy_capacity(wp, pc, cfg)?.require_certified()?;
    let cm = capacity(&wp.main, pc, cfg)?.require_certified()?;
    Ok(SidReport::from_parts(cm.capacity_bits, cs.capacity_bits))
}

/// Dichotomy for arbitrary laws, e.g. an averaged state channel.
pub fn sid_capacity_of(
    main: &dyn ChannelLaw,
    eve: &dyn ChannelLaw,
    pc: &PowerConstraint,
    cfg: &SolverConfig,
) -> Result<SidReport> {
    let cs = secrecy_capacity_of(main, eve, pc, cfg, Exec::default())?.require_certified()?;
    let cm = capacity_of(main, pc, cfg)?.require_certified()?;
    Ok(SidReport::from_parts(cm.capacity_bits, cs.capacity_bits))
}

/// Capacity of a finite-input channel table under `E[X] <= p_avg`, where
/// the input labels are the costs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DmcCapacity {
    pub capacity_bits: f64,
    pub masses: Vec<f64>,
    pub mu: f64,
    pub gap_bits: f64,
}

pub fn dmc_capacity(dmc: &GenericDmc, p_avg: f64, gap_tol_bits: f64) -> Result<DmcCapacity> {
    let p_max = dmc.inputs().iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let pc = PowerConstraint::new(p_max, p_avg.min(p_max).max(f64::MIN_POSITIVE))?;
    let len = dmc.output_len();
    let rows: Vec<f64> = dmc.rows().iter().flatten().copied().collect();
    let problem = Problem {
        xs: dmc.inputs().to_vec(),
        tables: vec![LawTable::from_rows(rows, len, 1.0)],
    };
    let opts = WeightOpts {
        gap_tol: gap_tol_bits * LN_2,
        max_iter: 1_000_000,
    };
    let p0 = vec![1.0 / problem.len() as f64; problem.len()];
    let bisection = Bisection {
        cold: opts,
        warm: opts,
        steps: 100,
        mean_tol: 1e-12 * p_max,
    };
    let c = solve_constrained(&problem, true, &pc, &p0, bisection);
    let gap = c.sol.upper - c.sol.adjusted(c.mu);
    if gap > opts.gap_tol {
        return Err(Error::NoConvergence {
            what: "finite-input Blahut-Arimoto",
            iterations: c.iterations,
        });
    }
    Ok(DmcCapacity {
        capacity_bits: c.sol.eval.value * LOG2_E,
        masses: c.sol.p,
        mu: c.mu * LOG2_E,
        gap_bits: gap * LOG2_E,
    })
}
