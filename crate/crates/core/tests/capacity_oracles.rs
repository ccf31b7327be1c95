//! Solver results against brute-force references that share no code with
//! the library: Poisson rows by recursion, plain Blahut–Arimoto loops and
//! exhaustive searches over small supports.

use dtpc::capacity::ba_step;
use dtpc::*;

const Y: usize = 160;

fn rows(lambda: f64, xs: &[f64]) -> Vec<Vec<f64>> {
    rows_to(lambda, xs, Y)
}

fn rows_to(lambda: f64, xs: &[f64], len: usize) -> Vec<Vec<f64>> {
    xs.iter()
        .map(|&x| {
            let m = x + lambda;
            let mut r = vec![0.0; len];
            r[0] = (-m).exp();
            for y in 1..len {
                r[y] = r[y - 1] * m / y as f64;
            }
            r
        })
        .collect()
}

fn info_bits(rows: &[Vec<f64>], p: &[f64]) -> f64 {
    let len = rows[0].len();
    let mut out = vec![0.0; len];
    for (r, pj) in rows.iter().zip(p) {
        for y in 0..len {
            out[y] += pj * r[y];
        }
    }
    let mut i = 0.0;
    for (r, pj) in rows.iter().zip(p) {
        if *pj == 0.0 {
            continue;
        }
        for y in 0..len {
            if r[y] > 0.0 {
                i += pj * r[y] * (r[y] / out[y]).log2();
            }
        }
    }
    i
}

/// Warm-started Blahut–Arimoto at multiplier `mu` (nats per unit input).
/// Returns the mutual information and mean of the final iterate, and the
/// Csiszár upper bound `max_j (D_j - mu x_j)` in nats.
fn plain_ba(rows: &[Vec<f64>], xs: &[f64], mu: f64, p: &mut [f64], iters: usize) -> (f64, f64, f64) {
    let n = rows.len();
    let len = rows[0].len();
    let mut upper = f64::INFINITY;
    for _ in 0..iters {
        let mut out = vec![0.0; len];
        for (r, pj) in rows.iter().zip(p.iter()) {
            for y in 0..len {
                out[y] += pj * r[y];
            }
        }
        let d: Vec<f64> = rows
            .iter()
            .map(|r| {
                (0..len)
                    .filter(|&y| r[y] > 0.0)
                    .map(|y| r[y] * (r[y] / out[y]).ln())
                    .sum()
            })
            .collect();
        upper = (0..n).map(|j| d[j] - mu * xs[j]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..n {
            p[j] *= (d[j] - mu * xs[j] - upper).exp();
            total += p[j];
        }
        p.iter_mut().for_each(|v| *v /= total);
    }
    let mean = p.iter().zip(xs).map(|(a, b)| a * b).sum();
    (info_bits(rows, p), mean, upper)
}

fn grid(p_max: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| p_max * i as f64 / (n - 1) as f64).collect()
}

/// Best value of a concave function of one mass by ternary search.
fn ternary<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..100 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) < f(m2) {
            a = m1;
        } else {
            b = m2;
        }
    }
    f(0.5 * (a + b))
}

#[test]
fn ba_on_64_points_matches_three_point_search() {
    let xs = grid(5.0, 64);
    let r = rows_to(1.0, &xs, 48);

    let ch = PoissonChannel::new(1.0, 5.0).unwrap();
    let mut d = DiscreteInputDistribution::uniform(&xs).unwrap();
    let mut step = ba_step(&d, &ch, 0.0);
    for _ in 0..20_000 {
        d = step.distribution.clone();
        step = ba_step(&d, &ch, 0.0);
        if step.upper - step.lower < 1e-9 {
            break;
        }
    }
    let ba = step.lower;

    // exhaustive over 3-point sub-supports on a coarse mass simplex, then
    // the best triple polished by nested ternary search
    let k = 20;
    let mut best = (f64::NEG_INFINITY, 0, 0, 0);
    for i in 0..64 {
        for j in i + 1..64 {
            for l in j + 1..64 {
                let sub = [r[i].clone(), r[j].clone(), r[l].clone()];
                for a in 0..=k {
                    for b in 0..=(k - a) {
                        let p = [a as f64 / k as f64, b as f64 / k as f64, (k - a - b) as f64 / k as f64];
                        let v = info_bits(&sub, &p);
                        if v > best.0 {
                            best = (v, i, j, l);
                        }
                    }
                }
            }
        }
    }
    let sub = [r[best.1].clone(), r[best.2].clone(), r[best.3].clone()];
    let polished = ternary(
        |a| {
            ternary(
                |b| info_bits(&sub, &[a, b * (1.0 - a), (1.0 - b) * (1.0 - a)]),
                0.0,
                1.0,
            )
        },
        0.0,
        1.0,
    );
    assert!((ba - polished).abs() <= 1e-4, "BA {ba} vs search {polished}");
}

#[test]
fn active_constraint_matches_grid_ba_oracle() {
    let (lambda, p_max, p_avg) = (1.0, 5.0, 1.0);
    let ch = PoissonChannel::new(lambda, p_max).unwrap();
    let r = capacity(
        &ch,
        &PowerConstraint::new(p_max, p_avg).unwrap(),
        &SolverConfig::default(),
    )
    .unwrap();
    assert!(r.certified);

    // weak duality: C <= max_p (I - mu E[X]) + mu p_avg for every mu, and
    // any iterate meeting the mean limit is a lower bound
    let xs = grid(p_max, 2000);
    // outputs past 48 carry less than 1e-20 of the mass at mean 6
    let table = rows_to(lambda, &xs, 48);
    let mut p = vec![1.0 / xs.len() as f64; xs.len()];
    let (mut lo, mut hi) = (0.0, 2.0);
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        let (bits, mean, up) = plain_ba(&table, &xs, mid, &mut p, 1500);
        upper = upper.min((up + mid * p_avg) * std::f64::consts::LOG2_E);
        if mean > p_avg {
            lo = mid;
        } else {
            hi = mid;
            lower = lower.max(bits);
        }
    }
    assert!(upper - lower <= 1e-4, "oracle bracket [{lower}, {upper}]");
    assert!(
        r.capacity_bits >= lower - 1e-9 && r.capacity_bits <= upper + 1e-9,
        "{} outside [{lower}, {upper}]",
        r.capacity_bits
    );
    assert!((r.distribution.mean() - p_avg).abs() <= 1e-6);
}

#[test]
fn capacity_monotone_on_lattice() {
    let cfg = SolverConfig::default();
    let peaks = [2.0, 5.0, 10.0];
    let avgs = [0.5, 1.0, 2.0];
    let mut table = [[0.0; 3]; 3];
    for (i, &pm) in peaks.iter().enumerate() {
        let ch = PoissonChannel::new(1.0, pm).unwrap();
        for (j, &pa) in avgs.iter().enumerate() {
            let r = capacity(&ch, &PowerConstraint::new(pm, pa).unwrap(), &cfg).unwrap();
            assert!(r.certified, "{pm} {pa}");
            table[i][j] = r.capacity_bits;
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            if i + 1 < 3 {
                assert!(table[i + 1][j] >= table[i][j] - 1e-9, "{table:?}");
            }
            if j + 1 < 3 {
                assert!(table[i][j + 1] >= table[i][j] - 1e-9, "{table:?}");
            }
        }
    }
}

#[test]
fn support_size_grows_with_peak() {
    let cfg = SolverConfig::default();
    let mut last = 0;
    for pm in [1.0, 5.0, 20.0, 50.0] {
        let ch = PoissonChannel::new(1.0, pm).unwrap();
        let r = capacity(&ch, &PowerConstraint::peak(pm).unwrap(), &cfg).unwrap();
        assert!(r.certified);
        assert!(r.support_size() >= last, "P_max {pm}: {} < {last}", r.support_size());
        last = r.support_size();
    }
}

#[test]
fn secrecy_matches_difference_search() {
    let (lb, le, p_max) = (1.0, 10.0, 5.0);
    let wp = WiretapPair::from_dark_currents(lb, le, p_max).unwrap();
    let pc = PowerConstraint::new(p_max, p_max).unwrap();
    let r = secrecy_capacity(&wp, &pc, &SolverConfig::default()).unwrap();
    let main = capacity(&wp.main, &pc, &SolverConfig::default()).unwrap();
    assert!(r.certified);
    assert!(r.capacity_bits > 0.0);
    assert!(r.capacity_bits <= main.capacity_bits);

    // supports {0, a, P_max} with a on a 51-point grid and masses on a
    // 1/100 simplex
    let xs = grid(p_max, 51);
    let wb = rows(lb, &xs);
    let we = rows(le, &xs);
    let mut best = f64::NEG_INFINITY;
    let k = 100;
    for a in 1..50 {
        let b_rows = [wb[0].clone(), wb[a].clone(), wb[50].clone()];
        let e_rows = [we[0].clone(), we[a].clone(), we[50].clone()];
        for i in 0..=k {
            for j in 0..=(k - i) {
                let p = [i as f64 / k as f64, j as f64 / k as f64, (k - i - j) as f64 / k as f64];
                best = best.max(info_bits(&b_rows, &p) - info_bits(&e_rows, &p));
            }
        }
    }
    assert!(r.capacity_bits >= best - 1e-9, "{} < {best}", r.capacity_bits);
    assert!(r.capacity_bits - best <= 1e-3, "{} vs {best}", r.capacity_bits);
}

#[test]
fn secrecy_grows_with_eve_noise() {
    let pc = PowerConstraint::peak(5.0).unwrap();
    let cfg = SolverConfig::default();
    let main = capacity(&PoissonChannel::new(1.0, 5.0).unwrap(), &pc, &cfg).unwrap();
    let mut last = 0.0;
    for le in [2.0, 10.0, 100.0] {
        let wp = WiretapPair::from_dark_currents(1.0, le, 5.0).unwrap();
        let r = secrecy_capacity(&wp, &pc, &cfg).unwrap();
        assert!(r.capacity_bits > last);
        assert!(r.capacity_bits <= main.capacity_bits);
        last = r.capacity_bits;
    }
}

#[test]
fn sid_dichotomy_values() {
    let cfg = SolverConfig::default();
    let pc = PowerConstraint::new(5.0, 2.0).unwrap();

    let same = WiretapPair::from_dark_currents(1.0, 1.0, 5.0).unwrap();
    let r = sid_capacity(&same, &pc, &cfg).unwrap();
    assert_eq!(r.c_sid, 0.0);

    let wp = WiretapPair::from_dark_currents(1.0, 10.0, 5.0).unwrap();
    let r = sid_capacity(&wp, &pc, &cfg).unwrap();
    let main = capacity(&wp.main, &pc, &cfg).unwrap();
    assert!(r.c_secrecy > 0.0);
    assert_eq!(r.c_sid, main.capacity_bits);
    assert_eq!(r.c_main, main.capacity_bits);
}

#[test]
fn sid_over_averaged_state_channel() {
    let cfg = SolverConfig::default();
    let pc = PowerConstraint::peak(5.0).unwrap();
    let main = StateChannel::new(vec![
        (0.5, PoissonChannel::new(0.5, 5.0).unwrap()),
        (0.5, PoissonChannel::new(1.5, 5.0).unwrap()),
    ])
    .unwrap();
    let eve = PoissonChannel::new(10.0, 5.0).unwrap();
    let r = sid_capacity_of(&main, &eve, &pc, &cfg).unwrap();
    assert!(r.c_secrecy > 0.0);

    // the averaged law tabulated on a fine grid and solved as a finite
    // input channel is a lower bound that the refined solution must meet
    let xs = grid(5.0, 401);
    let dmc = averaged_channel(&main, &xs).unwrap();
    let d = dmc_capacity(&dmc, 5.0, 1e-10).unwrap();
    assert_eq!(r.c_sid, r.c_main);
    assert!(r.c_main >= d.capacity_bits - 1e-9);
    assert!(
        r.c_main - d.capacity_bits <= 1e-4,
        "{} vs {}",
        r.c_main,
        d.capacity_bits
    );
}
