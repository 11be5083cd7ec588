//! Counting nearest-neighbor graph shapes and Dirichlet-type integrals.
//!
//! A nearest-neighbor graph shape on `p` labeled vertices is a map `φ` with
//! `φ(i) ≠ i` whose cycles all have length two. With `K` components there are
//!
//! ```text
//! |D_{p,K}| = 2 (p-1)! p^{p-2K} / (2^K (K-1)! (p-2K)!)
//! ```
//!
//! of them.

use crate::error::{Error, Result};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Exact big-integer counts are produced up to this many vertices.
pub const EXACT_COUNT_LIMIT: usize = 200;
/// Exhaustive enumeration is limited to `p ≤ 8` (`7^8` candidate maps).
pub const ENUMERATION_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphCount {
    pub p: usize,
    pub k: usize,
    /// Exact value, present for `p ≤ EXACT_COUNT_LIMIT`.
    #[serde(with = "big_as_string")]
    pub count: Option<BigUint>,
    pub log_count: f64,
}

mod big_as_string {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<BigUint>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&b.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BigUint>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        s.map(|t| t.parse().map_err(serde::de::Error::custom)).transpose()
    }
}

fn factorial(n: usize) -> BigUint {
    (1..=n as u64).fold(BigUint::from(1u32), |acc, k| acc * k)
}

/// `ln |D_{p,K}|` via log-gamma.
pub fn log_count_nn_graphs(p: usize, k: usize) -> f64 {
    let (pf, kf) = (p as f64, k as f64);
    let free = (p - 2 * k) as f64;
    2f64.ln() + ln_gamma(pf) + free * pf.ln() - kf * 2f64.ln() - ln_gamma(kf) - ln_gamma(free + 1.0)
}

/// `|D_{p,K}|`, exact for small `p` and as a logarithm always.
pub fn count_nn_graphs(p: usize, k: usize) -> Result<GraphCount> {
    if p < 2 || k < 1 || 2 * k > p {
        return Err(Error::param(format!(
            "graph count needs p >= 2 and 1 <= K <= p/2 (got p = {p}, K = {k})"
        )));
    }
    let count = (p <= EXACT_COUNT_LIMIT).then(|| {
        let num = factorial(p - 1) * 2u32 * BigUint::from(p).pow((p - 2 * k) as u32);
        let den = BigUint::from(2u32).pow(k as u32) * factorial(k - 1) * factorial(p - 2 * k);
        debug_assert!((&num % &den) == BigUint::from(0u32));
        num / den
    });
    Ok(GraphCount {
        p,
        k,
        count,
        log_count: log_count_nn_graphs(p, k),
    })
}

/// Leading terms `p log p - K log K + (p-2K)(log p - log(p-2K)) - K - K log 2`.
pub fn stirling_leading_terms(p: usize, k: usize) -> f64 {
    let (pf, kf) = (p as f64, k as f64);
    let free = pf - 2.0 * kf;
    let mixing = if free > 0.0 { free * (pf.ln() - free.ln()) } else { 0.0 };
    pf * pf.ln() - kf * kf.ln() + mixing - kf - kf * 2f64.ln()
}

/// Number of 2-cycles of `phi` if all its cycles are 2-cycles.
fn two_cycle_components(phi: &[u8]) -> Option<usize> {
    let p = phi.len();
    let mut cycles = 0;
    for i in 0..p {
        // p steps from any vertex end on its cycle.
        let mut v = i;
        for _ in 0..p {
            v = phi[v] as usize;
        }
        if phi[phi[v] as usize] as usize != v {
            return None;
        }
        if phi[phi[i] as usize] as usize == i {
            cycles += 1;
        }
    }
    Some(cycles / 2)
}

/// Visits every nearest-neighbor graph shape on `p` vertices with its
/// component count.
pub fn visit_nn_graphs<F: FnMut(&[u8], usize)>(p: usize, mut visit: F) -> Result<()> {
    if !(2..=ENUMERATION_LIMIT).contains(&p) {
        return Err(Error::param(format!(
            "enumeration supports 2 <= p <= {ENUMERATION_LIMIT} (got {p})"
        )));
    }
    // Digit c_i ∈ 0..p-1 encodes φ(i) = c_i, skipping i itself.
    let mut digits = vec![0u8; p];
    let mut phi = vec![0u8; p];
    loop {
        for i in 0..p {
            let c = digits[i] as usize;
            phi[i] = if c >= i { c + 1 } else { c } as u8;
        }
        if let Some(k) = two_cycle_components(&phi) {
            visit(&phi, k);
        }
        let mut pos = 0;
        loop {
            if pos == p {
                return Ok(());
            }
            digits[pos] += 1;
            if (digits[pos] as usize) < p - 1 {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

/// All shapes on `p ≤ 8` vertices grouped by component count: entry `K` holds
/// the maps with `K` components (entry 0 is empty).
pub fn enumerate_nn_graphs(p: usize) -> Result<Vec<Vec<Vec<u8>>>> {
    let mut groups = vec![Vec::new(); p / 2 + 1];
    visit_nn_graphs(p, |phi, k| groups[k].push(phi.to_vec()))?;
    Ok(groups)
}

/// Enumerated counts per component count, without storing the maps.
pub fn enumerated_counts(p: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; p / 2 + 1];
    visit_nn_graphs(p, |_, k| counts[k] += 1)?;
    Ok(counts)
}

/// `ln ∫ 1_{Σt<s} Π t_i^{α_i-1} dt = Σα ln s + Σ ln Γ(α_i) - ln Γ(Σα) - ln Σα`.
pub fn dirichlet_integral(alphas: &[f64], s: f64) -> Result<f64> {
    if alphas.is_empty() || alphas.iter().any(|&a| !(a > 0.0)) || !(s > 0.0) {
        return Err(Error::param("Dirichlet integral needs positive exponents and s > 0"));
    }
    let total: f64 = alphas.iter().sum();
    Ok(total * s.ln() + alphas.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(total) - total.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn log_estimate(&self) -> f64 {
        self.estimate.ln()
    }
}

/// Monte Carlo estimate of
/// `∫ 1_{Σt<s} Π (1/t_i)(1 + log(t_i/λ))^δ 1_{t_i ≥ λ} dt`.
///
/// Each coordinate is drawn log-uniformly on `[λ, s]`, which cancels the
/// `1/t` singularity; the unit cube is Latin-hypercube stratified.
pub fn truncated_log_dirichlet_mc(
    p: usize,
    s: f64,
    lambda: f64,
    delta: u32,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if p == 0 || samples < 2 {
        return Err(Error::param("need p >= 1 and at least two samples"));
    }
    if delta > 1 {
        return Err(Error::param(format!("delta must be 0 or 1 (got {delta})")));
    }
    if !(lambda > 0.0 && s > 0.0) || lambda * p as f64 / s > 0.5 {
        return Err(Error::param(format!(
            "requires lambda p / s <= 1/2 (got {})",
            lambda * p as f64 / s
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_range = (s / lambda).ln();
    // Latin hypercube: one stratum per sample in every coordinate.
    let strata: Vec<Vec<usize>> = (0..p)
        .map(|_| {
            let mut perm: Vec<usize> = (0..samples).collect();
            for i in (1..samples).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            perm
        })
        .collect();
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for n in 0..samples {
        let mut total = 0.0;
        let mut weight = 1.0;
        for stratum in &strata {
            let u = (stratum[n] as f64 + rng.random::<f64>()) / samples as f64;
            let log_ratio = u * log_range;
            total += lambda * log_ratio.exp();
            weight *= log_range * if delta == 1 { 1.0 + log_ratio } else { 1.0 };
        }
        let w = if total < s { weight } else { 0.0 };
        sum += w;
        sum2 += w * w;
    }
    let nf = samples as f64;
    let mean = sum / nf;
    let var = (sum2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / nf).sqrt(),
        samples,
    })
}

/// Leading term `p log|log(λp/s)|` of the truncated-log bound.
pub fn truncated_log_bound(p: usize, s: f64, lambda: f64) -> f64 {
    p as f64 * (lambda * p as f64 / s).ln().abs().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact(p: usize, k: usize) -> u64 {
        count_nn_graphs(p, k).unwrap().count.unwrap().try_into().unwrap()
    }

    #[test]
    fn spot_values() {
        assert_eq!(exact(2, 1), 1);
        assert_eq!(exact(3, 1), 6);
        assert_eq!(exact(4, 1), 48);
        assert_eq!(exact(4, 2), 3);
    }

    #[test]
    fn rejects_too_many_components() {
        assert!(count_nn_graphs(4, 3).is_err());
        assert!(count_nn_graphs(4, 0).is_err());
        assert!(enumerate_nn_graphs(9).is_err());
    }

    #[test]
    fn small_enumerations() {
        let g2 = enumerate_nn_graphs(2).unwrap();
        assert_eq!(g2[1], vec![vec![1u8, 0]]);
        let g3 = enumerate_nn_graphs(3).unwrap();
        assert_eq!(g3[1].len(), 6);
        let c4 = enumerated_counts(4).unwrap();
        assert_eq!(c4, vec![0, 48, 3]);
    }

    #[test]
    fn formula_matches_enumeration_up_to_six() {
        for p in 2..=6 {
            let counts = enumerated_counts(p).unwrap();
            for k in 1..=p / 2 {
                assert_eq!(counts[k], exact(p, k), "p={p} K={k}");
            }
        }
    }

    #[test]
    fn log_count_matches_exact() {
        for (p, k) in [(10, 3), (50, 7), (200, 100), (200, 1)] {
            let c = count_nn_graphs(p, k).unwrap();
            let digits = c.count.unwrap().to_string();
            // ln(x) from the leading digits and the digit count.
            let lead: f64 = digits[..15.min(digits.len())].parse().unwrap();
            let ln = lead.ln() + (digits.len() - 15.min(digits.len())) as f64 * 10f64.ln();
            assert!((ln - c.log_count).abs() < 1e-9 * ln.max(1.0), "p={p} K={k}");
        }
    }

    #[test]
    fn stirling_residual_is_small_at_large_p() {
        let p = 10_000;
        for k in [1000, 2500, 3000, 5000] {
            let c = count_nn_graphs(p, k).unwrap();
            let residual = (c.log_count - stirling_leading_terms(p, k)).abs();
            assert!(residual / c.log_count.abs() <= 0.05);
            assert!(residual <= 3.0 * (p as f64).ln(), "K={k} residual={residual}");
        }
    }

    #[test]
    fn dirichlet_examples() {
        assert!((dirichlet_integral(&[1.0], 3.0).unwrap() - 3f64.ln()).abs() < 1e-14);
        assert!((dirichlet_integral(&[1.0, 1.0], 1.0).unwrap() - 0.5f64.ln()).abs() < 1e-14);
        let pi = std::f64::consts::PI;
        assert!((dirichlet_integral(&[0.5, 0.5], 1.0).unwrap() - pi.ln()).abs() < 1e-12);
    }

    #[test]
    fn truncated_log_p1_closed_forms() {
        let (s, lambda) = (10.0, 1e-3);
        let l = (s / lambda as f64).ln();
        let e0 = truncated_log_dirichlet_mc(1, s, lambda, 0, 1000, 1).unwrap();
        assert!((e0.estimate - l).abs() < 1e-12);
        let e1 = truncated_log_dirichlet_mc(1, s, lambda, 1, 100_000, 2).unwrap();
        let closed = l + 0.5 * l * l;
        assert!((e1.estimate - closed).abs() <= 3.0 * e1.std_error.max(1e-9 * closed));
        assert!(truncated_log_dirichlet_mc(2, 1.0, 0.3, 0, 10, 1).is_err());
    }
}
