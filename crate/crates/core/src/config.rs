//! Signed configurations in the box `[0, √N]²` and the energies defined on them.
//!
//! Indices `0..N` carry charge `+1`, indices `N..2N` carry `-1`. The box is a
//! hard wall: a configuration with a point outside it cannot be constructed,
//! and moves that would leave it are refused.

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::io::fmt_f64;
use crate::kernel::{PairPotential, SmearedKernel};
use crate::nngraph::GraphDecomposition;
use crate::stats::KahanSum;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Above this many points the pair sums switch to compensated summation.
pub const KAHAN_THRESHOLD: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedConfiguration {
    n: usize,
    positions: Vec<Point>,
    box_side: f64,
}

/// `F_λ`, `F_λ^nn` and the mutual-dipole part `F̃_λ` of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub nn_part: f64,
    pub tilde_part: f64,
}

impl SignedConfiguration {
    /// `positions` holds the N positive charges followed by the N negative ones.
    pub fn new(n: usize, positions: Vec<Point>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfiguration("N must be at least 1".into()));
        }
        if positions.len() != 2 * n {
            return Err(Error::InvalidConfiguration(format!(
                "expected {} positions for N = {n}, got {}",
                2 * n,
                positions.len()
            )));
        }
        let box_side = (n as f64).sqrt();
        let cfg = Self { n, positions, box_side };
        if let Some(i) = (0..2 * n).find(|&i| !cfg.in_box(cfg.positions[i])) {
            return Err(Error::InvalidConfiguration(format!(
                "point {i} at ({}, {}) lies outside [0, {box_side}]^2",
                cfg.positions[i].x, cfg.positions[i].y
            )));
        }
        Ok(cfg)
    }

    pub fn from_species(positive: &[Point], negative: &[Point]) -> Result<Self> {
        if positive.len() != negative.len() {
            return Err(Error::InvalidConfiguration(format!(
                "{} positive and {} negative charges: configuration is not neutral",
                positive.len(),
                negative.len()
            )));
        }
        let mut all = positive.to_vec();
        all.extend_from_slice(negative);
        Self::new(positive.len(), all)
    }

    /// All `2N` points iid uniform in the box.
    pub fn uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let side = (n as f64).sqrt();
        let positions = (0..2 * n)
            .map(|_| Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side))
            .collect();
        Self::new(n, positions)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of points, `2N`.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn box_side(&self) -> f64 {
        self.box_side
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> Point {
        self.positions[i]
    }

    #[inline]
    pub fn charge(&self, i: usize) -> f64 {
        if i < self.n {
            1.0
        } else {
            -1.0
        }
    }

    pub fn charges(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.charge(i)).collect()
    }

    #[inline]
    pub fn in_box(&self, p: Point) -> bool {
        p.x >= 0.0 && p.x <= self.box_side && p.y >= 0.0 && p.y <= self.box_side
    }

    pub fn set_position(&mut self, i: usize, p: Point) -> Result<()> {
        if !self.in_box(p) {
            return Err(Error::InvalidConfiguration(format!(
                "move of point {i} to ({}, {}) leaves the box",
                p.x, p.y
            )));
        }
        self.positions[i] = p;
        Ok(())
    }

    /// Distance from `p` to the nearest wall of the box.
    pub fn box_distance(&self, p: Point) -> f64 {
        p.x.min(p.y).min(self.box_side - p.x).min(self.box_side - p.y)
    }

    /// `F_λ = ½ Σ_{i≠j} d_i d_j g_λ(z_i - z_j)`.
    pub fn energy(&self, lambda: f64) -> f64 {
        self.energy_with(&SmearedKernel::shared().at(lambda))
    }

    pub fn energy_with(&self, pot: &PairPotential<'_>) -> f64 {
        pairwise_energy(&self.positions, &self.charges(), pot)
    }

    /// Interaction of point `i` placed at `p` with every other point.
    fn point_interaction(&self, pot: &PairPotential<'_>, i: usize, p: Point, skip: usize) -> f64 {
        let di = self.charge(i);
        let mut acc = 0.0;
        for (j, &zj) in self.positions.iter().enumerate() {
            if j != i && j != skip {
                acc += self.charge(j) * pot.g(p, zj);
            }
        }
        di * acc
    }

    /// `F_λ` after moving point `i` to `new_position`, minus `F_λ` now.
    pub fn energy_delta(&self, lambda: f64, i: usize, new_position: Point) -> f64 {
        self.energy_delta_with(&SmearedKernel::shared().at(lambda), i, new_position)
    }

    pub fn energy_delta_with(&self, pot: &PairPotential<'_>, i: usize, new_position: Point) -> f64 {
        let old = self.positions[i];
        if old == new_position {
            return 0.0;
        }
        self.point_interaction(pot, i, new_position, usize::MAX)
            - self.point_interaction(pot, i, old, usize::MAX)
    }

    /// Energy change when points `i` and `j` move simultaneously.
    pub fn pair_energy_delta_with(
        &self,
        pot: &PairPotential<'_>,
        i: usize,
        pi: Point,
        j: usize,
        pj: Point,
    ) -> f64 {
        let (oi, oj) = (self.positions[i], self.positions[j]);
        let cross = self.charge(i) * self.charge(j) * (pot.g(pi, pj) - pot.g(oi, oj));
        self.point_interaction(pot, i, pi, j) - self.point_interaction(pot, i, oi, j)
            + self.point_interaction(pot, j, pj, i)
            - self.point_interaction(pot, j, oj, i)
            + cross
    }

    /// `F_λ^nn = -½ Σ_i g_λ(z_i - z_{φ_1(i)})`.
    pub fn nn_energy(&self, lambda: f64, dec: &GraphDecomposition) -> f64 {
        let pot = SmearedKernel::shared().at(lambda);
        -0.5 * (0..self.len())
            .map(|i| pot.g(self.positions[i], self.positions[dec.phi1[i]]))
            .sum::<f64>()
    }

    /// Nearest-neighbor energy restricted to mutual opposite-sign pairs.
    pub fn tilde_energy(&self, lambda: f64, dec: &GraphDecomposition) -> f64 {
        let pot = SmearedKernel::shared().at(lambda);
        -0.5 * (0..self.len())
            .filter(|&i| {
                let j = dec.phi1[i];
                dec.phi1[j] == i && self.charge(i) * self.charge(j) < 0.0
            })
            .map(|i| pot.g(self.positions[i], self.positions[dec.phi1[i]]))
            .sum::<f64>()
    }

    pub fn breakdown(&self, lambda: f64, dec: &GraphDecomposition) -> EnergyBreakdown {
        EnergyBreakdown {
            total: self.energy(lambda),
            nn_part: self.nn_energy(lambda, dec),
            tilde_part: self.tilde_energy(lambda, dec),
        }
    }

    /// `Σ ξ(x_i) - Σ ξ(y_i)` with `ξ(x) = ξ0(x/√N)`.
    pub fn fluctuation(&self, xi0: &TestFunction) -> f64 {
        let scale = 1.0 / self.box_side;
        (0..self.len())
            .map(|i| self.charge(i) * xi0.value(self.positions[i] * scale))
            .sum()
    }

    /// Snapshot CSV with header `idx,charge,x,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("idx,charge,x,y\n");
        for (i, p) in self.positions.iter().enumerate() {
            let c = if i < self.n { "+1" } else { "-1" };
            out.push_str(&format!("{i},{c},{},{}\n", fmt_f64(p.x), fmt_f64(p.y)));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            context: format!("snapshot line {line}"),
            message: msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "idx,charge,x,y" => {}
            _ => return Err(parse_err(1, "missing header idx,charge,x,y".into())),
        }
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (ln, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(parse_err(ln + 1, format!("expected 4 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(ln + 1, e.to_string()));
            let p = Point::new(num(f[2])?, num(f[3])?);
            match f[1] {
                "+1" | "1" => pos.push(p),
                "-1" => neg.push(p),
                other => return Err(parse_err(ln + 1, format!("charge {other} is not +1 or -1"))),
            }
        }
        Self::from_species(&pos, &neg)
    }
}

/// `½ Σ_{i≠j} d_i d_j g_λ(z_i - z_j)` for arbitrary points, box or not.
pub fn pairwise_energy(points: &[Point], charges: &[f64], pot: &PairPotential<'_>) -> f64 {
    let m = points.len();
    if m >= KAHAN_THRESHOLD {
        let mut acc = KahanSum::new();
        for i in 0..m {
            let mut row = 0.0;
            for j in i + 1..m {
                row += charges[j] * pot.g(points[i], points[j]);
            }
            acc.add(charges[i] * row);
        }
        acc.value()
    } else {
        let mut acc = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                acc += charges[i] * charges[j] * pot.g(points[i], points[j]);
            }
        }
        acc
    }
}

/// Built-in Lipschitz test functions `ξ0` on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant { value: f64 },
    /// First coordinate, `ξ0(u) = u₁`.
    Coordinate,
    /// `(1 - |u-c|²/ρ²)²` inside the disc, zero outside.
    Bump { cx: f64, cy: f64, radius: f64 },
    /// `(u₁ - c₁)(1 - |u-c|/ρ)_+`, a coordinate ramp clipped to a disc.
    Ramp { cx: f64, cy: f64, radius: f64 },
}

impl TestFunction {
    pub fn bump() -> Self {
        TestFunction::Bump { cx: 0.5, cy: 0.5, radius: 0.4 }
    }

    pub fn ramp() -> Self {
        TestFunction::Ramp { cx: 0.5, cy: 0.5, radius: 0.4 }
    }

    /// Looks up a built-in by name: `constant`, `coordinate`, `bump`, `ramp`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "constant" => Ok(TestFunction::Constant { value: 1.0 }),
            "coordinate" => Ok(TestFunction::Coordinate),
            "bump" => Ok(Self::bump()),
            "ramp" => Ok(Self::ramp()),
            other => Err(Error::param(format!(
                "unknown test function {other:?} (expected constant, coordinate, bump or ramp)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Constant { .. } => "constant",
            TestFunction::Coordinate => "coordinate",
            TestFunction::Bump { .. } => "bump",
            TestFunction::Ramp { .. } => "ramp",
        }
    }

    pub fn value(&self, u: Point) -> f64 {
        match *self {
            TestFunction::Constant { value } => value,
            TestFunction::Coordinate => u.x,
            TestFunction::Bump { cx, cy, radius } => {
                let s2 = u.dist2(Point::new(cx, cy)) / (radius * radius);
                if s2 >= 1.0 {
                    0.0
                } else {
                    (1.0 - s2) * (1.0 - s2)
                }
            }
            TestFunction::Ramp { cx, cy, radius } => {
                let s = u.dist(Point::new(cx, cy)) / radius;
                (u.x - cx) * (1.0 - s).max(0.0)
            }
        }
    }

    /// `‖∇ξ0‖_∞`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            TestFunction::Constant { .. } => 0.0,
            TestFunction::Coordinate => 1.0,
            TestFunction::Bump { radius, .. } => 8.0 / (3.0 * 3f64.sqrt() * radius),
            TestFunction::Ramp { .. } => 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nngraph::build_decomposition;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(n: usize, pts: &[(f64, f64)]) -> SignedConfiguration {
        SignedConfiguration::new(n, pts.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    fn exact_log_energy(c: &SignedConfiguration) -> f64 {
        let mut e = 0.0;
        for i in 0..c.len() {
            for j in 0..c.len() {
                if i != j {
                    e += 0.5 * c.charge(i) * c.charge(j) * -(c.position(i).dist(c.position(j)).ln());
                }
            }
        }
        e
    }

    #[test]
    fn single_pair_energy() {
        let c = cfg(1, &[(1.0, 1.0), (0.5, 1.0)]);
        assert!((c.energy(0.1) - 0.5f64.ln()).abs() < 1e-15);
        let coincident = cfg(1, &[(0.5, 0.5), (0.5, 0.5)]);
        assert!((coincident.energy(0.1) + 2.552585).abs() < 1e-6);
    }

    #[test]
    fn two_far_dipoles() {
        // Box side √2 is too small for a 10³ separation, so check the raw sum.
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(1000.0, 0.0),
            Point::new(0.5, 0.0),
            Point::new(1000.5, 0.0),
        ];
        let pot = SmearedKernel::shared().at(0.01);
        let e = pairwise_energy(&pts, &[1.0, 1.0, -1.0, -1.0], &pot);
        assert!((e - 2.0 * 0.5f64.ln()).abs() < 1e-3, "{e}");
    }

    #[test]
    fn rejects_out_of_box_and_non_neutral() {
        assert!(SignedConfiguration::new(1, vec![Point::new(0.5, 0.5), Point::new(1.5, 0.5)]).is_err());
        assert!(SignedConfiguration::from_species(&[Point::new(0.1, 0.1)], &[]).is_err());
    }

    #[test]
    fn fluctuation_examples() {
        let c = cfg(1, &[(1.0, 0.0), (2.0 - 1.0, 0.0)]);
        assert_eq!(c.fluctuation(&TestFunction::Constant { value: 3.0 }), 0.0);
        // N = 1 so ξ(p) = p₁; x=(1,0), y=(2,0) does not fit the unit box, use raw value.
        let xi = TestFunction::Coordinate;
        assert_eq!(xi.value(Point::new(1.0, 0.0)) - xi.value(Point::new(2.0, 0.0)), -1.0);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = SignedConfiguration::uniform(7, &mut rng).unwrap();
        let back = SignedConfiguration::from_csv(&c.to_csv()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn nn_energy_examples() {
        let c = cfg(1, &[(0.2, 0.2), (0.7, 0.2)]);
        let d = build_decomposition(&c, 0.01).unwrap();
        assert!((c.nn_energy(0.01, &d) - 0.5f64.ln()).abs() < 1e-15);
        assert!((c.nn_energy(0.01, &d) - c.energy(0.01)).abs() < 1e-15);
        assert_eq!(c.tilde_energy(0.01, &d), c.nn_energy(0.01, &d));
    }

    #[test]
    fn same_sign_only_has_zero_tilde() {
        // Two positive points together, two negative points together.
        let c = cfg(2, &[(0.1, 0.1), (0.2, 0.1), (1.3, 1.3), (1.35, 1.3)]);
        let d = build_decomposition(&c, 1e-3).unwrap();
        assert_eq!(c.tilde_energy(1e-3, &d), 0.0);
    }

    #[test]
    fn tilde_matches_indicator_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..=10);
            let c = SignedConfiguration::uniform(n, &mut rng).unwrap();
            let lambda = 0.01;
            let d = build_decomposition(&c, lambda).unwrap();
            // Brute-force nearest neighbors, independent of the decomposition.
            let nn: Vec<usize> = (0..c.len())
                .map(|i| {
                    (0..c.len())
                        .filter(|&j| j != i)
                        .min_by(|&a, &b| {
                            c.position(i).dist2(c.position(a)).total_cmp(&c.position(i).dist2(c.position(b)))
                        })
                        .unwrap()
                })
                .collect();
            let mut oracle = 0.0;
            for i in 0..c.len() {
                let j = nn[i];
                if nn[j] == i && c.charge(i) != c.charge(j) {
                    oracle += SmearedKernel::shared().g_lambda(lambda, c.position(i).dist(c.position(j)));
                }
            }
            assert!((c.tilde_energy(lambda, &d) + 0.5 * oracle).abs() <= 1e-14 * (1.0 + oracle.abs()));
        }
    }

    #[test]
    fn delta_matches_full_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(1..=20);
            let lambda = [1e-3, 1e-2, 0.1][rng.random_range(0..3)];
            let c = SignedConfiguration::uniform(n, &mut rng).unwrap();
            let i = rng.random_range(0..c.len());
            let side = c.box_side();
            let p = Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side);
            let mut moved = c.clone();
            moved.set_position(i, p).unwrap();
            let full = moved.energy(lambda) - c.energy(lambda);
            assert!((c.energy_delta(lambda, i, p) - full).abs() <= 1e-9);
            assert_eq!(c.energy_delta(lambda, i, c.position(i)), 0.0);
        }
    }

    #[test]
    fn pair_delta_matches_full_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pot = SmearedKernel::shared().at(0.01);
        for _ in 0..100 {
            let n = rng.random_range(1..=20);
            let c = SignedConfiguration::uniform(n, &mut rng).unwrap();
            let i = rng.random_range(0..n);
            let j = n + rng.random_range(0..n);
            let side = c.box_side();
            let pi = Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side);
            let pj = pi + Point::new(0.003, -0.001);
            if !c.in_box(pj) {
                continue;
            }
            let mut moved = c.clone();
            moved.set_position(i, pi).unwrap();
            moved.set_position(j, pj).unwrap();
            let full = moved.energy_with(&pot) - c.energy_with(&pot);
            assert!((c.pair_energy_delta_with(&pot, i, pi, j, pj) - full).abs() <= 1e-9);
        }
    }

    #[test]
    fn same_species_swap_has_zero_energy_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = SignedConfiguration::uniform(6, &mut rng).unwrap();
        let mut swapped = c.clone();
        let (a, b) = (c.position(1), c.position(4));
        swapped.set_position(1, b).unwrap();
        swapped.set_position(4, a).unwrap();
        assert!((swapped.energy(0.01) - c.energy(0.01)).abs() < 1e-12);
    }

    #[test]
    fn kahan_path_agrees_with_plain_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = SignedConfiguration::uniform(600, &mut rng).unwrap();
        let pot = SmearedKernel::shared().at(1e-3);
        let mut plain = 0.0;
        let q = c.charges();
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                plain += q[i] * q[j] * pot.g(c.position(i), c.position(j));
            }
        }
        assert!((c.energy_with(&pot) - plain).abs() < 1e-8);
    }

    #[test]
    fn test_function_lipschitz_constants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for f in [TestFunction::bump(), TestFunction::ramp(), TestFunction::Coordinate] {
            for _ in 0..20_000 {
                let a = Point::new(rng.random(), rng.random());
                let b = a + Point::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3));
                let ratio = (f.value(a) - f.value(b)).abs() / a.dist(b);
                assert!(ratio <= f.lipschitz() * (1.0 + 1e-3), "{} {ratio}", f.name());
            }
        }
    }

    #[test]
    fn fluctuation_bounded_by_matching_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let n = rng.random_range(1..=20);
            let c = SignedConfiguration::uniform(n, &mut rng).unwrap();
            let xi = TestFunction::bump();
            // Any bijection x_i -> y_σ(i) bounds |Fluct|; use a random one and the identity.
            let mut sigma: Vec<usize> = (0..n).collect();
            sigma.sort_by_key(|_| rng.random::<u32>());
            for perm in [sigma, (0..n).collect()] {
                let cost: f64 = (0..n).map(|i| c.position(i).dist(c.position(n + perm[i]))).sum();
                let bound = xi.lipschitz() / c.box_side() * cost;
                assert!(c.fluctuation(&xi).abs() <= bound + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn separated_energy_equals_exact_logs(seed in 0u64..10_000, n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = SignedConfiguration::uniform(n, &mut rng).unwrap();
            let min_d = (0..c.len())
                .flat_map(|i| (i + 1..c.len()).map(move |j| (i, j)))
                .map(|(i, j)| c.position(i).dist(c.position(j)))
                .fold(f64::INFINITY, f64::min);
            let lambda = (min_d / 2.0).min(0.1);
            prop_assert!((c.energy(lambda) - exact_log_energy(&c)).abs() <= 1e-12 * (1.0 + exact_log_energy(&c).abs()));
        }

        #[test]
        fn charge_conjugation_symmetry(seed in 0u64..10_000, n in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = SignedConfiguration::uniform(n, &mut rng).unwrap();
            let flipped = SignedConfiguration::from_species(&c.positions()[n..], &c.positions()[..n]).unwrap();
            prop_assert!((c.energy(0.01) - flipped.energy(0.01)).abs() < 1e-12);
        }

        #[test]
        fn delta_composition(seed in 0u64..10_000, k in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = SignedConfiguration::uniform(8, &mut rng).unwrap();
            let lambda = 0.01;
            let start = c.energy(lambda);
            let mut acc = start;
            for _ in 0..k {
                let i = rng.random_range(0..c.len());
                let side = c.box_side();
                let p = Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side);
                acc += c.energy_delta(lambda, i, p);
                c.set_position(i, p).unwrap();
            }
            prop_assert!((acc - c.energy(lambda)).abs() <= k as f64 * 1e-9);
        }
    }
}
