//! Interaction of uniformly smeared unit charges.
//!
//! With `g(x) = -log|x|` and `δ_z^{(a)}` the uniform probability measure on the
//! disc `B(z, a)`:
//!
//! * `disc_potential(a, x) = (g * δ_0^{(a)})(x)`, the potential of one smeared
//!   charge. Outside the disc it equals `g(x)` (Newton's theorem).
//! * `g_1(r)` is the interaction of two unit discs at centre distance `r`, and
//!   `g_λ(z) = -log λ + g_1(|z|/λ)` by scaling. For `r ≥ 2` the discs are
//!   disjoint and `g_1(r) = -log r` exactly.
//! * `κ = g_1(0) = 1/4` is the self-interaction of the unit disc.
//!
//! `g_1` on the overlap range `[0, 2]` has no convenient closed form here; it is
//! reduced to a one-dimensional radial integral and tabulated once, then read
//! through a monotone cubic interpolant in the sampler's inner loop.

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::quadrature::GaussLegendre;
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Expected value of `κ` for the uniform disc profile.
pub const KAPPA_EXPECTED: f64 = 0.25;
/// Startup tolerance on `κ`; a larger mismatch aborts kernel construction.
pub const KAPPA_TOLERANCE: f64 = 1e-6;
/// Default spacing of the `g_1` table on `[0, 2]`.
pub const DEFAULT_TABLE_SPACING: f64 = 1e-3;
/// Number of intervals of the `μ_β` CDF table on `[0, 2]`.
pub const CDF_TABLE_INTERVALS: usize = 4096;

const PANEL_NODES: usize = 64;

fn panel_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(PANEL_NODES))
}

/// Potential of a unit smeared charge of radius `a` at distance `s` from its
/// centre.
#[inline]
pub fn disc_potential_radial(a: f64, s: f64) -> f64 {
    if s >= a {
        -s.ln()
    } else {
        -a.ln() + 0.5 * (1.0 - s * s / (a * a))
    }
}

/// `(g * δ_0^{(a)})(x)`.
pub fn disc_potential(a: f64, x: Point) -> f64 {
    disc_potential_radial(a, x.norm())
}

/// Gradient of [`disc_potential`] with respect to `x`.
#[inline]
pub fn disc_potential_gradient(a: f64, x: Point) -> Point {
    let s2 = x.norm2();
    if s2 >= a * a {
        x * (-1.0 / s2)
    } else {
        x * (-1.0 / (a * a))
    }
}

/// Half-angle of the arc of the circle `|y| = s` lying inside `B(z, b)`, `|z| = r`.
#[inline]
fn arc_half_angle(s: f64, r: f64, b: f64) -> f64 {
    if r == 0.0 {
        return if s < b { PI } else { 0.0 };
    }
    if s + r <= b {
        return PI;
    }
    if s <= r - b || s >= r + b {
        return 0.0;
    }
    let c = (s * s + r * r - b * b) / (2.0 * s * r);
    c.clamp(-1.0, 1.0).acos()
}

/// `∬ g(x-y) δ_0^{(a)}(x) δ_z^{(b)}(y)` with `|z| = r`, always by quadrature.
///
/// Written in polar coordinates about the centre of the first disc, the
/// integral is `(1/πb²) ∫_0^{r+b} U_a(s) 2s θ(s) ds` where `U_a` is the radial
/// disc potential and `2sθ(s)` the arc length of `|y| = s` inside the second
/// disc. Panels break at the kink of `U_a` and at the square-root endpoints of
/// `θ`; each panel is cosine-mapped before Gauss–Legendre.
pub fn overlap_integral(a: f64, b: f64, r: f64) -> f64 {
    let mut breaks = vec![0.0, (b - r).abs(), a, r + b];
    breaks.retain(|&x| x <= r + b);
    breaks.sort_by(|x, y| x.total_cmp(y));
    breaks.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    let rule = panel_rule();
    let integrand = |s: f64| disc_potential_radial(a, s) * 2.0 * s * arc_half_angle(s, r, b);
    let total: f64 = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| rule.integrate_cosine_mapped(w[0], w[1], integrand))
        .sum();
    total / (PI * b * b)
}

/// Interaction of two smeared unit charges of radii `a` and `b` at separation `z`.
///
/// Disjoint discs (`|z| ≥ a + b`) take the exact Newton branch `-log|z|` with no
/// quadrature.
pub fn generalized_disc_interaction(a: f64, b: f64, z: Point) -> f64 {
    generalized_disc_interaction_radial(a, b, z.norm())
}

pub fn generalized_disc_interaction_radial(a: f64, b: f64, r: f64) -> f64 {
    if r >= a + b {
        -r.ln()
    } else {
        overlap_integral(a, b, r)
    }
}

/// `κ = ∬ g(x-y) δ_0^{(1)}(x) δ_0^{(1)}(y)`, evaluated as the average of the
/// unit disc potential over the unit disc.
pub fn compute_kappa() -> f64 {
    let rule = panel_rule();
    // (1/π) ∫_{|y|<1} U_1(|y|) dy = 2 ∫_0^1 U_1(s) s ds
    2.0 * rule.integrate(0.0, 1.0, |s| disc_potential_radial(1.0, s) * s)
}

/// Tabulated overlap kernel `g_1` with the exact logarithm beyond `r = 2`.
#[derive(Debug, Clone)]
pub struct SmearedKernel {
    overlap_table: Vec<f64>,
    slopes: Vec<f64>,
    table_spacing: f64,
    kappa: f64,
}

impl SmearedKernel {
    /// Builds the default table and checks `κ` against its expected value.
    pub fn new() -> Result<Self> {
        Self::with_spacing(DEFAULT_TABLE_SPACING)
    }

    /// Process-wide kernel with the default table.
    pub fn shared() -> &'static SmearedKernel {
        static KERNEL: OnceLock<SmearedKernel> = OnceLock::new();
        KERNEL.get_or_init(|| SmearedKernel::new().expect("default smeared kernel must build"))
    }

    pub fn with_spacing(spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing <= 0.1) {
            return Err(Error::param(format!("table spacing {spacing} outside (0, 0.1]")));
        }
        let kappa = compute_kappa();
        if (kappa - KAPPA_EXPECTED).abs() > KAPPA_TOLERANCE {
            return Err(Error::KappaMismatch {
                computed: kappa,
                expected: KAPPA_EXPECTED,
                tolerance: KAPPA_TOLERANCE,
            });
        }
        let intervals = (2.0 / spacing).round() as usize;
        let h = 2.0 / intervals as f64;
        // The endpoint r = 2 goes through the quadrature too, so continuity with
        // the Newton branch is a genuine check rather than an assignment.
        let values: Vec<f64> = (0..=intervals)
            .map(|k| overlap_integral(1.0, 1.0, k as f64 * h))
            .collect();
        let slopes = monotone_slopes(&values, h, 0.0, -0.5);
        Ok(Self {
            overlap_table: values,
            slopes,
            table_spacing: h,
            kappa,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn table_spacing(&self) -> f64 {
        self.table_spacing
    }

    /// `(r, g_1(r))` pairs of the table on `[0, 2]`.
    pub fn table(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = self.table_spacing;
        self.overlap_table
            .iter()
            .enumerate()
            .map(move |(k, &v)| (k as f64 * h, v))
    }

    /// `g_1(r)` for `r ≥ 0`.
    #[inline]
    pub fn g1(&self, r: f64) -> f64 {
        if r >= 2.0 {
            return -r.ln();
        }
        let h = self.table_spacing;
        let pos = r / h;
        let k = (pos as usize).min(self.overlap_table.len() - 2);
        let t = pos - k as f64;
        let (y0, y1) = (self.overlap_table[k], self.overlap_table[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1
    }

    /// `g_λ(z)` for a separation of length `dist`.
    #[inline]
    pub fn g_lambda(&self, lambda: f64, dist: f64) -> f64 {
        if dist >= 2.0 * lambda {
            -dist.ln()
        } else {
            -lambda.ln() + self.g1(dist / lambda)
        }
    }

    /// Self-energy `g(λ) + κ` of one smeared charge.
    pub fn self_energy(&self, lambda: f64) -> f64 {
        -lambda.ln() + self.kappa
    }

    /// Pair potential bound to one smearing radius, for hot loops.
    pub fn at(&self, lambda: f64) -> PairPotential<'_> {
        PairPotential::new(self, lambda)
    }
}

/// `g_λ` evaluated from squared distances with the logarithm of `λ` cached.
#[derive(Debug, Clone, Copy)]
pub struct PairPotential<'k> {
    kernel: &'k SmearedKernel,
    lambda: f64,
    inv_lambda: f64,
    neg_log_lambda: f64,
    newton_dist2: f64,
}

impl<'k> PairPotential<'k> {
    pub fn new(kernel: &'k SmearedKernel, lambda: f64) -> Self {
        Self {
            kernel,
            lambda,
            inv_lambda: 1.0 / lambda,
            neg_log_lambda: -lambda.ln(),
            newton_dist2: 4.0 * lambda * lambda,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kernel(&self) -> &'k SmearedKernel {
        self.kernel
    }

    /// `g_λ` of a separation with squared length `d2`.
    #[inline]
    pub fn g_sq(&self, d2: f64) -> f64 {
        if d2 >= self.newton_dist2 {
            -0.5 * d2.ln()
        } else {
            self.neg_log_lambda + self.kernel.g1(d2.sqrt() * self.inv_lambda)
        }
    }

    #[inline]
    pub fn g(&self, a: Point, b: Point) -> f64 {
        self.g_sq(a.dist2(b))
    }
}

/// Slopes for a monotone piecewise-cubic Hermite interpolant (Fritsch–Butland),
/// with prescribed end derivatives.
fn monotone_slopes(values: &[f64], h: f64, left: f64, right: f64) -> Vec<f64> {
    let n = values.len();
    let secants: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let mut slopes = vec![0.0; n];
    slopes[0] = left;
    slopes[n - 1] = right;
    for k in 1..n - 1 {
        let (d0, d1) = (secants[k - 1], secants[k]);
        slopes[k] = if d0 * d1 <= 0.0 {
            0.0
        } else {
            // Harmonic mean keeps each cubic piece monotone.
            2.0 * d0 * d1 / (d0 + d1)
        };
    }
    slopes
}

/// `Z_β = 2π ∫_0^∞ e^{β g_1(r)} r dr` for `β > 2`.
///
/// The body on `[0, 2]` is integrated with `g_1` evaluated by quadrature at
/// every node; the Pareto tail beyond `r = 2` is added in closed form.
pub fn z_beta(beta: f64) -> Result<f64> {
    if !(beta > 2.0) || !beta.is_finite() {
        return Err(Error::param(format!(
            "Z_beta requires beta > 2 (got {beta}); beta = 2 is the constant 2π"
        )));
    }
    let rule = GaussLegendre::new(32);
    let breaks: Vec<f64> = (0..=16).map(|k| k as f64 * 0.125).collect();
    let body = rule.integrate_panels(&breaks, |r| {
        (beta * generalized_disc_interaction_radial(1.0, 1.0, r)).exp() * r
    });
    Ok(2.0 * PI * body + z_beta_tail(beta))
}

/// `Z_β` with the `β = 2` convention `Z_2 = 2π`.
pub fn z_beta_or_two_pi(beta: f64) -> Result<f64> {
    if beta == 2.0 {
        Ok(2.0 * PI)
    } else {
        z_beta(beta)
    }
}

/// `2π ∫_2^∞ r^{1-β} dr = 2π 2^{2-β}/(β-2)`.
pub fn z_beta_tail(beta: f64) -> f64 {
    2.0 * PI * 2f64.powf(2.0 - beta) / (beta - 2.0)
}

/// Limit law `μ_β` of the rescaled dipole length.
///
/// Density `(2π/Z_β) e^{β g_1(r)} r` on `r ≥ 0`. The body `[0, 2]` is held as a
/// CDF table; beyond `r = 2` the law is an exact Pareto tail with survival
/// function `(2π/Z_β) r^{2-β}/(β-2)`.
#[derive(Debug, Clone)]
pub struct DipoleLaw {
    beta: f64,
    z_beta: f64,
    cdf_table: Vec<f64>,
    tail_exponent: f64,
    kernel: &'static SmearedKernel,
}

impl DipoleLaw {
    pub fn new(beta: f64) -> Result<Self> {
        Self::with_kernel(SmearedKernel::shared(), beta)
    }

    pub fn with_kernel(kernel: &'static SmearedKernel, beta: f64) -> Result<Self> {
        if !(beta > 2.0) || !beta.is_finite() {
            return Err(Error::param(format!("dipole law requires beta > 2 (got {beta})")));
        }
        let h = 2.0 / CDF_TABLE_INTERVALS as f64;
        let rule = GaussLegendre::new(6);
        let unnormalized = |r: f64| (beta * kernel.g1(r)).exp() * r;
        let mut cumulative = Vec::with_capacity(CDF_TABLE_INTERVALS + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for k in 0..CDF_TABLE_INTERVALS {
            let a = k as f64 * h;
            acc += rule.integrate(a, a + h, unnormalized);
            cumulative.push(acc);
        }
        let z = 2.0 * PI * acc + z_beta_tail(beta);
        let scale = 2.0 * PI / z;
        let cdf_table = cumulative.into_iter().map(|c| c * scale).collect();
        Ok(Self {
            beta,
            z_beta: z,
            cdf_table,
            tail_exponent: beta - 2.0,
            kernel,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Normalizing constant `Z_β` consistent with this table.
    pub fn z_beta(&self) -> f64 {
        self.z_beta
    }

    pub fn tail_exponent(&self) -> f64 {
        self.tail_exponent
    }

    /// `μ_β([0, 2])`.
    pub fn body_mass(&self) -> f64 {
        *self.cdf_table.last().unwrap()
    }

    pub fn density(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        2.0 * PI / self.z_beta * (self.beta * self.kernel.g1(r)).exp() * r
    }

    /// `μ_β([r, ∞))`.
    pub fn sf(&self, r: f64) -> f64 {
        if r >= 2.0 {
            2.0 * PI / self.z_beta * r.powf(-self.tail_exponent) / self.tail_exponent
        } else {
            1.0 - self.cdf(r)
        }
    }

    pub fn cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= 2.0 {
            return 1.0 - self.sf(r);
        }
        let h = 2.0 / CDF_TABLE_INTERVALS as f64;
        let k = ((r / h) as usize).min(CDF_TABLE_INTERVALS - 1);
        let a = k as f64 * h;
        self.cdf_table[k] + self.partial_mass(a, r)
    }

    /// CDF of `μ_β` conditioned on `[0, r_max]`.
    pub fn conditional_cdf(&self, r: f64, r_max: f64) -> f64 {
        (self.cdf(r.min(r_max)) / self.cdf(r_max)).clamp(0.0, 1.0)
    }

    fn partial_mass(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        let rule = RULE.get_or_init(|| GaussLegendre::new(6));
        rule.integrate(a, b, |s| self.density(s))
    }

    /// Inverse CDF: table search and safeguarded Newton on the body, exact
    /// Pareto inversion in the tail.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return f64::INFINITY;
        }
        let body = self.body_mass();
        if u >= body {
            let sf = 1.0 - u;
            let base = sf * self.tail_exponent * self.z_beta / (2.0 * PI);
            return base.powf(-1.0 / self.tail_exponent).max(2.0);
        }
        let k = self.cdf_table.partition_point(|&c| c <= u).saturating_sub(1);
        let k = k.min(CDF_TABLE_INTERVALS - 1);
        let h = 2.0 / CDF_TABLE_INTERVALS as f64;
        let (mut lo, mut hi) = (k as f64 * h, (k + 1) as f64 * h);
        let base = self.cdf_table[k];
        let target = u - base;
        let span = self.cdf_table[k + 1] - base;
        let mut r = if span > 0.0 {
            lo + (hi - lo) * (target / span)
        } else {
            lo
        };
        for _ in 0..50 {
            let f = self.partial_mass(k as f64 * h, r) - target;
            if f.abs() <= 1e-15 {
                break;
            }
            if f > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let d = self.density(r);
            let mut next = if d > 0.0 { r - f / d } else { 0.5 * (lo + hi) };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - r).abs() <= 1e-16 * (1.0 + r) {
                r = next;
                break;
            }
            r = next;
        }
        r
    }

    /// Draws a dipole length from `u ∈ (0, 1)`.
    pub fn sample(&self, u: f64) -> f64 {
        self.quantile(u)
    }
}

/// Free-function form of [`DipoleLaw::sample`].
pub fn mu_beta_sample(law: &DipoleLaw, u: f64) -> f64 {
    law.sample(u)
}
