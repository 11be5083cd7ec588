//! Reference implementations used only by the tests. Each one takes a
//! different route from the library code it checks: plain 2D quadrature
//! instead of radial reductions, brute force instead of cell lists, explicit
//! map enumeration instead of the library visitor.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Potential of a unit charge spread uniformly on the disc of radius `a`,
/// at distance `s` from its centre.
pub fn disc_potential(a: f64, s: f64) -> f64 {
    if s >= a {
        -s.ln()
    } else {
        -a.ln() + 0.5 * (1.0 - s * s / (a * a))
    }
}

/// Mean of `disc_potential(a, ·)` over the disc of radius `b` centred at
/// distance `r`, by a polar midpoint rule on the second disc.
pub fn disc_interaction(a: f64, b: f64, r: f64, radial: usize, angular: usize) -> f64 {
    if r >= a + b {
        return -r.ln();
    }
    let (hr, ht) = (b / radial as f64, 2.0 * PI / angular as f64);
    let mut acc = 0.0;
    for i in 0..radial {
        let rho = (i as f64 + 0.5) * hr;
        let mut ring = 0.0;
        for j in 0..angular {
            let t = (j as f64 + 0.5) * ht;
            let (x, y) = (r + rho * t.cos(), rho * t.sin());
            ring += disc_potential(a, (x * x + y * y).sqrt());
        }
        acc += ring * rho;
    }
    acc * hr * ht / (PI * b * b)
}

/// `κ` as `2∫_0^1 U_1(s) s ds` by a composite midpoint rule.
pub fn kappa(cells: usize) -> f64 {
    let h = 1.0 / cells as f64;
    (0..cells)
        .map(|i| {
            let s = (i as f64 + 0.5) * h;
            disc_potential(1.0, s) * s
        })
        .sum::<f64>()
        * 2.0
        * h
}

/// Smeared pair interaction at distance `r`.
pub fn g_lambda(lambda: f64, r: f64) -> f64 {
    if r >= 2.0 * lambda {
        -r.ln()
    } else {
        disc_interaction(lambda, lambda, r, 160, 320)
    }
}

/// `½ Σ_{i≠j} d_i d_j g_λ(z_i - z_j)`.
pub fn energy(points: &[(f64, f64)], charges: &[f64], lambda: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let r = ((points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2)).sqrt();
            acc += charges[i] * charges[j] * g_lambda(lambda, r);
        }
    }
    acc
}

/// Right side of the ball-growth identity, with every disc pair evaluated
/// by 2D quadrature.
pub fn ball_growth_rhs(points: &[(f64, f64)], charges: &[f64], from: &[f64], to: &[f64]) -> f64 {
    let w = |a: f64, b: f64, r: f64| {
        if r < 1e-300 {
            // Concentric: the self term.
            disc_interaction(a, b, 0.0, 400, 8)
        } else {
            disc_interaction(a, b, r, 200, 400)
        }
    };
    let mut acc = 0.0;
    for i in 0..points.len() {
        for j in 0..points.len() {
            let r = ((points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2)).sqrt();
            let term = w(to[i], to[j], r) - w(from[i], to[j], r) + w(to[i], from[j], r) - w(from[i], from[j], r);
            acc += charges[i] * charges[j] * term;
        }
    }
    acc
}

/// Counts every map `φ: [p] → [p]` without fixed points whose cycles all have
/// length 2, split by number of cycles.
pub fn count_nn_maps(p: usize) -> Vec<u64> {
    let mut counts = vec![0u64; p / 2 + 1];
    let mut phi = vec![0usize; p];
    let total = (p as u64).pow(p as u32);
    'maps: for code in 0..total {
        let mut c = code;
        for slot in phi.iter_mut() {
            *slot = (c % p as u64) as usize;
            c /= p as u64;
        }
        if (0..p).any(|i| phi[i] == i) {
            continue;
        }
        for i in 0..p {
            // After p steps every orbit sits on its cycle.
            let mut v = i;
            for _ in 0..p {
                v = phi[v];
            }
            if phi[phi[v]] != v {
                continue 'maps;
            }
        }
        let cycles = (0..p).filter(|&i| phi[phi[i]] == i).count() / 2;
        counts[cycles] += 1;
    }
    counts
}

/// Number of mutual nearest-neighbor pairs, by brute force.
pub fn mutual_nn_pairs(points: &[(f64, f64)]) -> usize {
    let nn: Vec<usize> = (0..points.len())
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for (j, q) in points.iter().enumerate() {
                if j != i {
                    let d = (points[i].0 - q.0).powi(2) + (points[i].1 - q.1).powi(2);
                    if d < best.0 {
                        best = (d, j);
                    }
                }
            }
            best.1
        })
        .collect();
    (0..points.len()).filter(|&i| nn[i] > i && nn[nn[i]] == i).count()
}

/// `∫ 1_{Σt<s} Π t_i^{α_i-1} dt` by importance sampling: `t_i = s u_i^{1/α_i}`
/// has density `α_i t^{α_i-1}/s^{α_i}`, leaving the bounded weight
/// `Π s^{α_i}/α_i` on the simplex. Returns (mean, SE).
pub fn dirichlet_mc(alphas: &[f64], s: f64, uniforms: &mut dyn FnMut() -> f64, samples: usize) -> (f64, f64) {
    let scale: f64 = alphas.iter().map(|&a| s.powf(a) / a).product();
    let mut hits = 0usize;
    for _ in 0..samples {
        let total: f64 = alphas.iter().map(|&a| s * uniforms().powf(1.0 / a)).sum();
        if total < s {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    (scale * p, scale * (p * (1.0 - p) / samples as f64).sqrt())
}

/// Kolmogorov distance of a sample to a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS distance.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// One line of the acceptance report.
pub fn report(criterion: u32, title: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion:>2} [{}] {title}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}
