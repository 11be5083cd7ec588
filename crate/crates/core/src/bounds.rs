//! Electrostatic identities and energy bounds, evaluated numerically.
//!
//! The electric potential of a configuration with disc radii `α` is
//! `h_α = Σ d_i g * δ_{z_i}^{(α_i)}`, and for a neutral configuration with all
//! radii equal to `λ`
//!
//! ```text
//! F_λ = (1/4π) ∫ |∇h_λ|² - N (g(λ) + κ).
//! ```
//!
//! `∫|∇h|²` is evaluated by a midpoint rule on a padded uniform grid using the
//! closed-form gradient of each disc potential, plus the far-field tail of the
//! configuration's dipole moment outside the window.

use crate::config::{pairwise_energy, SignedConfiguration};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::kernel::{disc_potential, disc_potential_gradient, generalized_disc_interaction_radial, SmearedKernel};
use crate::nngraph::{r_half, GraphDecomposition};
use crate::par;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Per-point disc radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiiVector(pub Vec<f64>);

impl RadiiVector {
    pub fn uniform(radius: f64, len: usize) -> Self {
        RadiiVector(vec![radius; len])
    }

    /// `τ_i = r2(i) ∧ r2(φ1(i))` on 2-cycles, `r2(i)` elsewhere.
    pub fn tau(dec: &GraphDecomposition) -> Self {
        RadiiVector(
            (0..dec.len())
                .map(|i| {
                    if dec.is_in_two_cycle(i) {
                        dec.r2[i].min(dec.r2[dec.phi1[i]])
                    } else {
                        dec.r2[i]
                    }
                })
                .collect(),
        )
    }

    /// `α_i = (τ_i ∧ γ) ∨ r1(i)`.
    pub fn clamped(dec: &GraphDecomposition, gamma: f64) -> Self {
        let tau = Self::tau(dec);
        RadiiVector(
            tau.0
                .iter()
                .zip(&dec.r1)
                .map(|(&t, &r1)| t.min(gamma).max(r1))
                .collect(),
        )
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Outcome of comparing two sides of an inequality or identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs`.
    pub gap: f64,
    pub constant_used: f64,
    pub tolerance: f64,
    pub violated: bool,
}

impl BoundReport {
    /// Inequality `lhs ≥ rhs`: violated when the gap is below `-tolerance`.
    pub fn inequality(lhs: f64, rhs: f64, constant_used: f64, tolerance: f64) -> Self {
        let gap = lhs - rhs;
        Self {
            lhs,
            rhs,
            gap,
            constant_used,
            tolerance,
            violated: gap < -tolerance,
        }
    }

    /// Identity `lhs = rhs`: violated when `|gap|` exceeds `tolerance`.
    pub fn identity(lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let gap = lhs - rhs;
        Self {
            lhs,
            rhs,
            gap,
            constant_used: 0.0,
            tolerance,
            violated: gap.abs() > tolerance,
        }
    }

    pub fn relative_error(&self) -> f64 {
        self.gap.abs() / self.rhs.abs().max(f64::MIN_POSITIVE)
    }
}

/// `h_α(point) = Σ d_i disc_potential(α_i, point - z_i)`.
pub fn electric_potential(points: &[Point], charges: &[f64], radii: &RadiiVector, point: Point) -> f64 {
    points
        .iter()
        .zip(charges)
        .zip(&radii.0)
        .map(|((&z, &d), &a)| d * disc_potential(a, point - z))
        .sum()
}

pub fn electric_field(points: &[Point], charges: &[f64], radii: &RadiiVector, point: Point) -> Point {
    let mut acc = Point::ORIGIN;
    for ((&z, &d), &a) in points.iter().zip(charges).zip(&radii.0) {
        acc = acc + disc_potential_gradient(a, point - z) * d;
    }
    acc
}

/// Grid layout for [`grid_field_energy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Window margin on each side, in units of the configuration diameter.
    pub padding: f64,
    /// Grid cells per smallest disc radius.
    pub cells_per_radius: f64,
    /// Largest accepted number of cells per side.
    pub cap: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            padding: 8.0,
            cells_per_radius: 8.0,
            cap: 4096,
        }
    }
}

impl GridSpec {
    pub fn with_resolution(cells_per_radius: f64) -> Self {
        Self {
            cells_per_radius,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Window {
    lo: Point,
    cells: usize,
    spacing: f64,
    half_width: f64,
}

fn window_for(points: &[Point], radii: &[&RadiiVector], spec: &GridSpec) -> Result<Window> {
    let r_min = radii.iter().map(|r| r.min()).fold(f64::INFINITY, f64::min);
    let r_max = radii
        .iter()
        .flat_map(|r| r.0.iter().copied())
        .fold(0.0, f64::max);
    if !(r_min > 0.0) || !r_max.is_finite() {
        return Err(Error::param("disc radii must be positive and finite"));
    }
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let diameter = (hi.x - lo.x).max(hi.y - lo.y).max(2.0 * r_max);
    let centre = lo.midpoint(hi);
    let half_width = 0.5 * diameter + r_max + spec.padding * diameter;
    let spacing_target = r_min / spec.cells_per_radius;
    let cells = (2.0 * half_width / spacing_target).ceil() as usize;
    if cells > spec.cap {
        return Err(Error::GridTooLarge { cells, cap: spec.cap });
    }
    Ok(Window {
        lo: centre - Point::new(half_width, half_width),
        cells,
        spacing: 2.0 * half_width / cells as f64,
        half_width,
    })
}

/// `|P|² (π/2 + 1) / W²`: the integral of a dipole field `|P|²/r⁴` outside
/// the square `[-W, W]²`.
fn dipole_tail(points: &[Point], charges: &[f64], half_width: f64) -> f64 {
    let mut p = Point::ORIGIN;
    for (&z, &d) in points.iter().zip(charges) {
        p = p + z * d;
    }
    p.norm2() * (PI / 2.0 + 1.0) / (half_width * half_width)
}

fn grid_integral<F>(window: &Window, integrand: F) -> f64
where
    F: Fn(Point) -> f64 + Sync + Send,
{
    let h = window.spacing;
    let rows = par::map_indexed(window.cells, |iy| {
        let y = window.lo.y + (iy as f64 + 0.5) * h;
        let mut acc = 0.0;
        for ix in 0..window.cells {
            let x = window.lo.x + (ix as f64 + 0.5) * h;
            acc += integrand(Point::new(x, y));
        }
        acc
    });
    rows.iter().sum::<f64>() * h * h
}

/// `∫_{ℝ²} |∇h_α|²` for a neutral configuration.
pub fn grid_field_energy(points: &[Point], charges: &[f64], radii: &RadiiVector, spec: &GridSpec) -> Result<f64> {
    check_neutral(charges)?;
    let window = window_for(points, &[radii], spec)?;
    let interior = grid_integral(&window, |x| electric_field(points, charges, radii, x).norm2());
    Ok(interior + dipole_tail(points, charges, window.half_width))
}

fn check_neutral(charges: &[f64]) -> Result<()> {
    let total: f64 = charges.iter().sum();
    if total.abs() > 1e-12 {
        return Err(Error::InvalidConfiguration(format!(
            "field energy needs a neutral configuration (total charge {total})"
        )));
    }
    Ok(())
}

/// `(1/4π) ∫|∇h_λ|² - N(g(λ) + κ)`, the energy recovered from the field.
pub fn electric_energy(config: &SignedConfiguration, lambda: f64, spec: &GridSpec) -> Result<f64> {
    let radii = RadiiVector::uniform(lambda, config.len());
    let field = grid_field_energy(config.positions(), &config.charges(), &radii, spec)?;
    let kernel = SmearedKernel::shared();
    Ok(field / (4.0 * PI) - config.n() as f64 * kernel.self_energy(lambda))
}

/// Ball-growth identity between radii `from` (α) and `to` (τ):
///
/// ```text
/// (1/2π)(∫|∇h_τ|² - ∫|∇h_α|²) = Σ_{i,j} d_i d_j ∫ (g*δ^{τ_i} - g*δ^{α_i}) (δ^{τ_j} + δ^{α_j})
/// ```
///
/// The left side comes from one grid pass over `|∇h_τ|² - |∇h_α|²`, the right
/// side from disc-disc interactions. Pairs whose discs are disjoint both before
/// and after contribute exactly zero and are skipped.
pub fn ball_growth_identity(
    points: &[Point],
    charges: &[f64],
    from: &RadiiVector,
    to: &RadiiVector,
    spec: &GridSpec,
    rel_tolerance: f64,
) -> Result<BoundReport> {
    check_neutral(charges)?;
    let window = window_for(points, &[from, to], spec)?;
    let diff = grid_integral(&window, |x| {
        electric_field(points, charges, to, x).norm2() - electric_field(points, charges, from, x).norm2()
    });
    let lhs = diff / (2.0 * PI);
    let rhs = ball_growth_rhs(points, charges, from, to);
    Ok(BoundReport::identity(lhs, rhs, rel_tolerance * rhs.abs()))
}

/// Right side of the ball-growth identity from exact disc interactions.
pub fn ball_growth_rhs(points: &[Point], charges: &[f64], from: &RadiiVector, to: &RadiiVector) -> f64 {
    let m = points.len();
    let (a, t) = (&from.0, &to.0);
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            let r = points[i].dist(points[j]);
            let reach = a[i].max(t[i]) + a[j].max(t[j]);
            if i != j && r >= reach {
                continue;
            }
            let w = |ri: f64, rj: f64| generalized_disc_interaction_radial(ri, rj, r);
            let term = w(t[i], t[j]) - w(a[i], t[j]) + w(t[i], a[j]) - w(a[i], a[j]);
            acc += charges[i] * charges[j] * term;
        }
    }
    acc
}

fn clamped_log(x: f64) -> f64 {
    -x.ln()
}

/// Cor. lower bound: `F^nn + Σ_{pairs}(log((r2∧r2')/r1) - C) - C Σ_{dipoles}(r1/r2)² - C(N-K)`,
/// both sums over isolated 2-cycle members whose pair's second neighbors are
/// themselves in isolated 2-cycles.
pub fn nn_lower_bound_rhs(config: &SignedConfiguration, lambda: f64, dec: &GraphDecomposition, c: f64) -> f64 {
    let (a, b) = nn_lower_bound_parts(config, lambda, dec);
    a - c * b
}

/// `(A, B)` with right side `A - C·B`.
pub fn nn_lower_bound_parts(config: &SignedConfiguration, lambda: f64, dec: &GraphDecomposition) -> (f64, f64) {
    let mut in_pair = vec![false; dec.len()];
    for &i in &dec.i_pair {
        in_pair[i] = true;
    }
    let mut in_dip = vec![false; dec.len()];
    for &i in &dec.i_dip {
        in_dip[i] = true;
    }
    let qualifies = |i: usize| {
        let j = dec.phi1[i];
        dec.phi2[i].is_some_and(|k| in_pair[k]) && dec.phi2[j].is_some_and(|k| in_pair[k])
    };
    let mut a = config.nn_energy(lambda, dec);
    let mut b = (config.n() - dec.k_components()) as f64;
    for &i in &dec.i_pair {
        if !qualifies(i) {
            continue;
        }
        if in_dip[i] {
            b += (dec.r1[i] / dec.r2[i]).powi(2);
        } else {
            let j = dec.phi1[i];
            a += (dec.r2[i].min(dec.r2[j]) / dec.r1[i]).ln();
            b += 1.0;
        }
    }
    (a, b)
}

/// Prop. lower bound, per component:
/// `½ Σ_k [Σ_{i∈C_k}(d_i d_φ g_λ(z_i - z_φ) - d_i D_i (g(r2∧r2') + κ) - C (r1/r2)²) - Σ_{tree i}(g(r2(i)) + κ)]`.
pub fn prop21_rhs(config: &SignedConfiguration, lambda: f64, dec: &GraphDecomposition, c: f64) -> f64 {
    let (a, b) = prop21_parts(config, lambda, dec);
    a - c * b
}

pub fn prop21_parts(config: &SignedConfiguration, lambda: f64, dec: &GraphDecomposition) -> (f64, f64) {
    let kernel = SmearedKernel::shared();
    let kappa = kernel.kappa();
    let mut a = 0.0;
    let mut b = 0.0;
    for i in 0..dec.len() {
        let j = dec.phi1[i];
        let di = config.charge(i);
        if dec.is_in_two_cycle(i) {
            let dj = config.charge(j);
            a += di * dj * kernel.g_lambda(lambda, config.position(i).dist(config.position(j)));
            if dec.d_sums[i] != 0.0 {
                a -= di * dec.d_sums[i] * (clamped_log(dec.r2[i].min(dec.r2[j])) + kappa);
            }
            b += (dec.r1[i] / dec.r2[i]).powi(2);
        } else {
            a -= clamped_log(dec.r2[i]) + kappa;
        }
    }
    (0.5 * a, 0.5 * b)
}

/// Smallest `C ≥ 0` with `F ≥ A - C·B`; `+∞` if no constant works.
pub fn required_lower_constant(energy: f64, a: f64, b: f64, tolerance: f64) -> f64 {
    let excess = a - energy;
    if excess <= tolerance {
        0.0
    } else if b > 0.0 {
        excess / b
    } else {
        f64::INFINITY
    }
}

/// A pairing instance: x-points and partners `y_i ∈ B(x_i, ½ r(x_i))` with
/// `r(x_i) = ½ min_{j≠i} |x_j - x_i|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingInstance {
    pub x: Vec<Point>,
    pub y: Vec<Point>,
    pub lambda: f64,
}

impl PairingInstance {
    /// Draws each `y_i` uniformly in `B(x_i, ½ r(x_i))`; a lone point uses `max_radius`.
    pub fn sample<R: Rng + ?Sized>(x: Vec<Point>, lambda: f64, max_radius: f64, rng: &mut R) -> Self {
        let r = if x.len() > 1 { r_half(&x) } else { vec![f64::INFINITY] };
        let y = x
            .iter()
            .zip(&r)
            .map(|(&xi, &ri)| {
                let rad = (0.5 * ri).min(max_radius);
                let s = rad * rng.random::<f64>().sqrt();
                xi + Point::from_polar(s, 2.0 * PI * rng.random::<f64>())
            })
            .collect();
        Self { x, y, lambda }
    }

    /// `F_λ` of the combined configuration (raw points; no box constraint).
    pub fn energy(&self) -> f64 {
        let mut pts = self.x.clone();
        pts.extend_from_slice(&self.y);
        let n = self.x.len();
        let charges: Vec<f64> = (0..2 * n).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
        pairwise_energy(&pts, &charges, &SmearedKernel::shared().at(self.lambda))
    }

    /// `(A, B)` of the upper bound `A + C·B`, with `A = -Σ g_λ(x_i - y_i)` and
    /// `B = Σ |x_i - y_i|² / r(x_i)²`.
    pub fn bound_parts(&self) -> (f64, f64) {
        let kernel = SmearedKernel::shared();
        let r = if self.x.len() > 1 { r_half(&self.x) } else { vec![f64::INFINITY] };
        let mut a = 0.0;
        let mut b = 0.0;
        for i in 0..self.x.len() {
            let d = self.x[i].dist(self.y[i]);
            a -= kernel.g_lambda(self.lambda, d);
            if r[i].is_finite() {
                b += d * d / (r[i] * r[i]);
            }
        }
        (a, b)
    }
}

/// Upper bound `F_λ ≤ -Σ g_λ(x_i - y_i) + C Σ |x_i - y_i|²/r(x_i)²` on one
/// freshly sampled pairing.
pub fn pairing_upper_bound_check<R: Rng + ?Sized>(
    x: &[Point],
    lambda: f64,
    c: f64,
    rng: &mut R,
) -> (PairingInstance, BoundReport) {
    let inst = PairingInstance::sample(x.to_vec(), lambda, 1.0, rng);
    let report = pairing_report(&inst, c);
    (inst, report)
}

pub fn pairing_report(inst: &PairingInstance, c: f64) -> BoundReport {
    let f = inst.energy();
    let (a, b) = inst.bound_parts();
    BoundReport::inequality(a + c * b, f, c, 1e-9 * (1.0 + f.abs()))
}

/// Smallest `C ≥ 0` with `F ≤ A + C·B`.
pub fn required_upper_constant(energy: f64, a: f64, b: f64, tolerance: f64) -> f64 {
    required_lower_constant(-energy, -a, b, tolerance)
}

/// Which inequality a calibration targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    NearestNeighbor,
    ComponentWise,
    Pairing,
}

impl BoundKind {
    pub const ALL: [BoundKind; 3] = [BoundKind::NearestNeighbor, BoundKind::ComponentWise, BoundKind::Pairing];

    pub fn name(&self) -> &'static str {
        match self {
            BoundKind::NearestNeighbor => "nn_lower_bound",
            BoundKind::ComponentWise => "componentwise_lower_bound",
            BoundKind::Pairing => "pairing_upper_bound",
        }
    }
}

/// One random instance for calibrating or testing a bound.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundInstance {
    Lower { config: SignedConfiguration, lambda: f64 },
    Pairing(PairingInstance),
}

pub const CALIBRATION_LAMBDAS: [f64; 3] = [1e-3, 1e-2, 5e-2];

/// Random configuration for the lower bounds: `N ∈ 2..=20`, `λ` from
/// [`CALIBRATION_LAMBDAS`], and a mixture of iid uniform points and
/// configurations where a random fraction of the charges sit in tight pairs.
pub fn random_lower_instance<R: Rng + ?Sized>(rng: &mut R) -> (SignedConfiguration, f64) {
    let n = rng.random_range(2..=20);
    let lambda = CALIBRATION_LAMBDAS[rng.random_range(0..CALIBRATION_LAMBDAS.len())];
    let side = (n as f64).sqrt();
    let paired_fraction = if rng.random_bool(0.5) { 0.0 } else { rng.random::<f64>() };
    let mut pos = Vec::with_capacity(n);
    let mut neg = Vec::with_capacity(n);
    let uniform = |rng: &mut R| Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side);
    for _ in 0..n {
        let x = uniform(rng);
        pos.push(x);
        if rng.random::<f64>() < paired_fraction {
            // Separation log-uniform between λ/10 and 10λ... 0.5.
            let hi = (10.0 * lambda).max(0.5f64.min(side / 4.0));
            let s = (lambda / 10.0) * (hi / (lambda / 10.0)).powf(rng.random::<f64>());
            let y = x + Point::from_polar(s, 2.0 * PI * rng.random::<f64>());
            pos_or_fallback(&mut neg, y, side, || uniform(rng));
        } else {
            neg.push(uniform(rng));
        }
    }
    let config = SignedConfiguration::from_species(&pos, &neg).expect("points drawn inside the box");
    (config, lambda)
}

fn pos_or_fallback<F: FnOnce() -> Point>(out: &mut Vec<Point>, p: Point, side: f64, fallback: F) {
    if p.x >= 0.0 && p.x <= side && p.y >= 0.0 && p.y <= side {
        out.push(p);
    } else {
        out.push(fallback());
    }
}

/// Random pairing instance: `N ∈ 1..=20` uniform x-points in the box.
pub fn random_pairing_instance<R: Rng + ?Sized>(rng: &mut R) -> PairingInstance {
    let n = rng.random_range(1..=20);
    let lambda = CALIBRATION_LAMBDAS[rng.random_range(0..CALIBRATION_LAMBDAS.len())];
    let side = (n as f64).sqrt();
    let x = (0..n)
        .map(|_| Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side))
        .collect();
    PairingInstance::sample(x, lambda, 1.0, rng)
}

/// Constant needed by one configuration for a lower bound.
pub fn required_constant(kind: BoundKind, config: &SignedConfiguration, lambda: f64) -> Result<f64> {
    let dec = crate::nngraph::build_decomposition(config, lambda)?;
    let f = config.energy(lambda);
    let tol = 1e-9 * (1.0 + f.abs());
    let (a, b) = match kind {
        BoundKind::NearestNeighbor => nn_lower_bound_parts(config, lambda, &dec),
        BoundKind::ComponentWise => prop21_parts(config, lambda, &dec),
        BoundKind::Pairing => return Err(Error::param("pairing bound takes a pairing instance")),
    };
    Ok(required_lower_constant(f, a, b, tol))
}

pub fn required_pairing_constant(inst: &PairingInstance) -> f64 {
    let f = inst.energy();
    let (a, b) = inst.bound_parts();
    required_upper_constant(f, a, b, 1e-9 * (1.0 + f.abs()))
}

impl PairingInstance {
    /// Every `y_i` lies in `B(x_i, ½ r(x_i))`.
    pub fn is_admissible(&self) -> bool {
        if self.x.len() < 2 {
            return true;
        }
        let r = r_half(&self.x);
        self.x.iter().zip(&self.y).zip(&r).all(|((x, y), &ri)| x.dist(*y) <= 0.5 * ri)
    }
}

impl BoundInstance {
    /// Seeded random instance for `kind`; instance `k` uses stream `k` of `seed`.
    pub fn random(kind: BoundKind, seed: u64, k: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k);
        match kind {
            BoundKind::Pairing => BoundInstance::Pairing(random_pairing_instance(&mut rng)),
            _ => {
                let (config, lambda) = random_lower_instance(&mut rng);
                BoundInstance::Lower { config, lambda }
            }
        }
    }

    /// Smallest constant that makes this instance satisfy the bound.
    pub fn required_constant(&self, kind: BoundKind) -> Result<f64> {
        match (self, kind) {
            (BoundInstance::Pairing(p), BoundKind::Pairing) => Ok(required_pairing_constant(p)),
            (BoundInstance::Lower { config, lambda }, BoundKind::NearestNeighbor | BoundKind::ComponentWise) => {
                required_constant(kind, config, *lambda)
            }
            _ => Err(Error::param(format!("instance does not match bound {}", kind.name()))),
        }
    }

    /// Bound report at constant `c`.
    pub fn report(&self, kind: BoundKind, c: f64) -> Result<BoundReport> {
        match (self, kind) {
            (BoundInstance::Pairing(p), BoundKind::Pairing) => Ok(pairing_report(p, c)),
            (BoundInstance::Lower { config, lambda }, BoundKind::NearestNeighbor | BoundKind::ComponentWise) => {
                let dec = crate::nngraph::build_decomposition(config, *lambda)?;
                let f = config.energy(*lambda);
                let rhs = if kind == BoundKind::NearestNeighbor {
                    nn_lower_bound_rhs(config, *lambda, &dec, c)
                } else {
                    prop21_rhs(config, *lambda, &dec, c)
                };
                Ok(BoundReport::inequality(f, rhs, c, 1e-9 * (1.0 + f.abs())))
            }
            _ => Err(Error::param(format!("instance does not match bound {}", kind.name()))),
        }
    }

    /// Moves one point by a uniform step in `[-σ/2, σ/2]²`; `None` if the
    /// move leaves the box or breaks a pairing constraint.
    fn perturbed<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Option<Self> {
        let step = Point::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * sigma;
        match self {
            BoundInstance::Lower { config, lambda } => {
                let i = rng.random_range(0..config.len());
                let mut moved = config.clone();
                moved.set_position(i, config.position(i) + step).ok()?;
                Some(BoundInstance::Lower { config: moved, lambda: *lambda })
            }
            BoundInstance::Pairing(p) => {
                let mut moved = p.clone();
                let i = rng.random_range(0..2 * p.x.len());
                if i < p.x.len() {
                    moved.x[i] = moved.x[i] + step;
                } else {
                    moved.y[i - p.x.len()] = moved.y[i - p.x.len()] + step;
                }
                moved.is_admissible().then_some(BoundInstance::Pairing(moved))
            }
        }
    }
}

/// Required constants for `count` seeded random instances of `kind`.
pub fn required_constants(kind: BoundKind, count: usize, seed: u64) -> Result<Vec<f64>> {
    par::map_indexed(count, |k| BoundInstance::random(kind, seed, k as u64).required_constant(kind))
        .into_iter()
        .collect()
}

/// Greedy random search that pushes an instance toward a larger required
/// constant. Step size shrinks geometrically over eight stages.
pub fn refine_required_constant(
    kind: BoundKind,
    start: BoundInstance,
    iterations: usize,
    seed: u64,
) -> Result<(f64, BoundInstance)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = start.required_constant(kind)?;
    let mut current = start;
    let mut sigma = 0.05;
    let stage = (iterations / 8).max(1);
    for it in 0..iterations {
        if let Some(next) = current.perturbed(sigma, &mut rng) {
            let c = next.required_constant(kind)?;
            if c > best {
                best = c;
                current = next;
            }
        }
        if (it + 1) % stage == 0 {
            sigma *= 0.6;
        }
    }
    Ok((best, current))
}

/// Empirical constant for one bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub kind: BoundKind,
    pub training_instances: usize,
    pub seed: u64,
    /// Largest constant required by an unmodified training instance.
    pub random_max: f64,
    /// Largest constant after refining the worst training instances.
    pub refined_max: f64,
    pub quantiles: [f64; 3],
    /// Frozen value: `max(random_max, refined_max)`.
    pub constant: f64,
}

/// Calibrates `kind` on `count` training instances: the maximum over the
/// training set of the minimal valid constant, where the `refine_top` worst
/// instances are first pushed further by [`refine_required_constant`].
///
/// Plain maxima are a poor estimate of a supremum (a same-size held-out set
/// beats them about half the time); the refinement step estimates the
/// supremum from above-threshold training instances instead.
pub fn calibrate(kind: BoundKind, count: usize, seed: u64, refine_top: usize, iterations: usize) -> Result<Calibration> {
    let required = required_constants(kind, count, seed)?;
    if let Some(bad) = required.iter().find(|c| !c.is_finite()) {
        return Err(Error::InvalidConfiguration(format!("{}: no finite constant ({bad})", kind.name())));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| required[b].total_cmp(&required[a]));
    let top = &order[..refine_top.min(count)];
    let refined = par::map_slice(top, |&k| {
        let inst = BoundInstance::random(kind, seed, k as u64);
        refine_required_constant(kind, inst, iterations, seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .map(|(c, _)| c)
    });
    let refined_max = refined.into_iter().collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    let mut sorted = required.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted.get(((count.max(1) - 1) as f64 * p) as usize).copied().unwrap_or(0.0);
    let random_max = sorted.last().copied().unwrap_or(0.0);
    Ok(Calibration {
        kind,
        training_instances: count,
        seed,
        random_max,
        refined_max,
        quantiles: [q(0.5), q(0.9), q(0.99)],
        constant: random_max.max(refined_max),
    })
}

/// Outcome of a bound on a held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSuite {
    pub name: String,
    pub instances: usize,
    pub constant: f64,
    pub violations: usize,
    /// Most negative gap (0 if none).
    pub max_violation: f64,
    /// Largest constant any test instance would have needed.
    pub max_required: f64,
}

pub fn test_bound(kind: BoundKind, constant: f64, count: usize, seed: u64) -> Result<BoundSuite> {
    let rows = par::map_indexed(count, |k| {
        let inst = BoundInstance::random(kind, seed, k as u64);
        Ok::<_, Error>((inst.report(kind, constant)?, inst.required_constant(kind)?))
    });
    let mut suite = BoundSuite {
        name: kind.name().to_string(),
        instances: count,
        constant,
        violations: 0,
        max_violation: 0.0,
        max_required: 0.0,
    };
    for row in rows {
        let (rep, req) = row?;
        if rep.violated {
            suite.violations += 1;
            suite.max_violation = suite.max_violation.min(rep.gap);
        }
        suite.max_required = suite.max_required.max(req);
    }
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nngraph::build_decomposition;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn potential_examples() {
        let r = RadiiVector::uniform(1.0, 1);
        let v = electric_potential(&pts(&[(0.0, 0.0)]), &[1.0], &r, Point::new(3.0, 0.0));
        assert!((v + 3f64.ln()).abs() < 1e-15);
        let p = pts(&[(-0.5, 0.0), (0.5, 0.0)]);
        let r2 = RadiiVector::uniform(0.1, 2);
        assert!(electric_potential(&p, &[1.0, -1.0], &r2, Point::new(0.0, 7.0)).abs() < 1e-15);
        // Far field of a dipole of length d at distance R: |h| ≈ d cosθ / R.
        let d = 0.01;
        let p = pts(&[(0.0, 0.0), (d, 0.0)]);
        let big_r = 1e3 * d;
        let h = electric_potential(&p, &[1.0, -1.0], &r2, Point::new(big_r, 0.0));
        assert!(h.abs() <= 2.0 * d / big_r && h.abs() >= 0.5 * d / big_r, "{h}");
    }

    #[test]
    fn single_dipole_field_energy() {
        let p = pts(&[(0.0, 0.0), (0.5, 0.0)]);
        let r = RadiiVector::uniform(0.1, 2);
        let e = grid_field_energy(&p, &[1.0, -1.0], &r, &GridSpec::default()).unwrap();
        let expected = 4.0 * PI * (0.5f64.ln() - 0.1f64.ln() + 0.25);
        assert!(((e - expected) / expected).abs() < 0.01, "{e} vs {expected}");
        assert!((expected - 23.37).abs() < 0.01);
        let fine = grid_field_energy(&p, &[1.0, -1.0], &r, &GridSpec::with_resolution(16.0)).unwrap();
        assert!(((fine - e) / e).abs() < 0.005);
    }

    #[test]
    fn grid_cap_is_enforced() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0)]);
        let r = RadiiVector::uniform(1e-4, 2);
        let err = grid_field_energy(&p, &[1.0, -1.0], &r, &GridSpec::default()).unwrap_err();
        assert!(matches!(err, Error::GridTooLarge { .. }));
        let inf = RadiiVector(vec![0.1, f64::INFINITY]);
        assert!(matches!(
            grid_field_energy(&p, &[1.0, -1.0], &inf, &GridSpec::default()),
            Err(Error::InvalidParameter(_))
        ));
        assert!(grid_field_energy(&p, &[1.0, 1.0], &RadiiVector::uniform(0.1, 2), &GridSpec::default()).is_err());
    }

    #[test]
    fn ball_growth_trivial_and_disjoint() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0)]);
        let q = [1.0, -1.0];
        let a = RadiiVector::uniform(0.1, 2);
        assert_eq!(ball_growth_rhs(&p, &q, &a, &a), 0.0);
        let t = RadiiVector::uniform(0.2, 2);
        let rhs = ball_growth_rhs(&p, &q, &a, &t);
        assert!((rhs - 2.0 * (0.1f64 / 0.2).ln()).abs() < 1e-9, "{rhs}");
        let rep = ball_growth_identity(&p, &q, &a, &t, &GridSpec::default(), 0.02).unwrap();
        assert!(!rep.violated, "{rep:?}");
    }

    #[test]
    fn prop21_same_sign_pair_hand_check() {
        // Two same-sign isolated pairs far apart; members of each pair are mutual NN.
        let c = SignedConfiguration::from_species(
            &pts(&[(0.1, 0.1), (0.3, 0.1)]),
            &pts(&[(1.2, 1.3), (1.2, 1.1)]),
        )
        .unwrap();
        let lambda = 1e-3;
        let d = build_decomposition(&c, lambda).unwrap();
        assert_eq!(d.n_isolated_pairs(), 2);
        let k = SmearedKernel::shared();
        let mut expected = 0.0;
        for (i, j) in [(0usize, 1usize), (2, 3)] {
            let g = k.g_lambda(lambda, c.position(i).dist(c.position(j)));
            let r2 = d.r2[i].min(d.r2[j]);
            // Both members: g - 2(g(r2∧r2') + κ).
            expected += 2.0 * (g - 2.0 * (-r2.ln() + 0.25));
        }
        let (a, b) = prop21_parts(&c, lambda, &d);
        assert!((a - 0.5 * expected).abs() < 1e-12);
        assert!(b > 0.0);
    }

    #[test]
    fn single_isolated_dipole_nn_bound() {
        let c = SignedConfiguration::from_species(&pts(&[(0.3, 0.3), (1.3, 1.3)]), &pts(&[(0.32, 0.3), (1.3, 1.1)]))
            .unwrap();
        let lambda = 1e-3;
        let d = build_decomposition(&c, lambda).unwrap();
        let (a, b) = nn_lower_bound_parts(&c, lambda, &d);
        assert!((a - c.nn_energy(lambda, &d)).abs() < 1e-15);
        let dips: f64 = d.twice_isolated_dips.iter().map(|&i| (d.r1[i] / d.r2[i]).powi(2)).sum();
        assert!((b - dips).abs() < 1e-15);
    }

    #[test]
    fn rhs_nonincreasing_in_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (c, lambda) = random_lower_instance(&mut rng);
            let d = build_decomposition(&c, lambda).unwrap();
            let mut prev = f64::INFINITY;
            for k in 0..10 {
                let v = nn_lower_bound_rhs(&c, lambda, &d, k as f64 * 0.5);
                assert!(v <= prev);
                prev = v;
                let w = prop21_rhs(&c, lambda, &d, k as f64);
                assert!(w.is_finite());
            }
        }
    }

    #[test]
    fn pairing_degenerate_and_far() {
        let inst = PairingInstance {
            x: pts(&[(0.0, 0.0), (5.0, 0.0)]),
            y: pts(&[(0.0, 0.0), (5.0, 0.0)]),
            lambda: 0.01,
        };
        let rep = pairing_report(&inst, 1.0);
        let k = SmearedKernel::shared();
        assert!((inst.energy() + 2.0 * k.self_energy(0.01) - (-(5f64.ln()) * 2.0 - (-(5f64.ln())) * 2.0)).abs() < 1e-12);
        assert!(rep.gap.abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (inst, rep) = pairing_upper_bound_check(&pts(&[(0.0, 0.0), (100.0, 0.0)]), 0.01, 1.0, &mut rng);
        assert!(rep.gap >= 0.0, "{rep:?}");
        assert!(inst.y.iter().zip(&inst.x).all(|(y, x)| y.dist(*x) <= 25.0));
    }

    #[test]
    fn required_constant_formula() {
        assert_eq!(required_lower_constant(1.0, 0.5, 2.0, 0.0), 0.0);
        assert_eq!(required_lower_constant(1.0, 2.0, 2.0, 0.0), 0.5);
        assert_eq!(required_lower_constant(1.0, 2.0, 0.0, 0.0), f64::INFINITY);
        assert_eq!(required_upper_constant(1.0, 0.0, 4.0, 0.0), 0.25);
    }

    #[test]
    fn refinement_never_lowers_the_constant() {
        for kind in BoundKind::ALL {
            let inst = BoundInstance::random(kind, 9, 3);
            let c0 = inst.required_constant(kind).unwrap();
            let (c1, moved) = refine_required_constant(kind, inst, 400, 1).unwrap();
            assert!(c1 >= c0);
            assert!((moved.required_constant(kind).unwrap() - c1).abs() < 1e-12);
            if let BoundInstance::Pairing(p) = &moved {
                assert!(p.is_admissible());
            }
        }
    }

    #[test]
    fn calibrated_constant_clears_its_training_set() {
        for kind in BoundKind::ALL {
            let cal = calibrate(kind, 300, 5, 3, 200).unwrap();
            assert!(cal.constant >= cal.random_max && cal.constant.is_finite());
            let suite = test_bound(kind, cal.constant, 300, 5).unwrap();
            assert_eq!(suite.violations, 0, "{suite:?}");
            assert!(suite.max_required <= cal.constant);
        }
    }

    #[test]
    fn mismatched_instance_is_rejected() {
        let inst = BoundInstance::random(BoundKind::Pairing, 1, 0);
        assert!(inst.required_constant(BoundKind::NearestNeighbor).is_err());
    }
}
