//! Metropolis–Hastings sampling of `exp(-β F_λ)` on the box.
//!
//! RNG: ChaCha8 (`rand_chacha`). Chain `k` of a multi-chain run with master
//! seed `s` uses `ChaCha8Rng::seed_from_u64(s)` switched to stream `k`; the
//! generator state is serialized verbatim into checkpoints.
//!
//! Dipole moves act on *eligible pairs*: opposite-sign mutual nearest
//! neighbors. Every dipole proposal picks one uniformly, so its acceptance
//! ratio carries `|E(z)| / |E(z')|`, and the proposal is rejected unless the
//! moved pair is still eligible afterwards.

use crate::config::SignedConfiguration;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::io::fmt_f64;
use crate::kernel::{DipoleLaw, PairPotential, SmearedKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Proposal law exponent for dipole resampling when `β ≤ 2` (where `μ_β` is
/// not normalizable).
pub const FALLBACK_PROPOSAL_BETA: f64 = 2.5;

const TUNING_WINDOW: u64 = 100;
const TARGET_ACCEPTANCE: (f64, f64) = (0.25, 0.40);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    SingleDisplace,
    LocalDisplace,
    DipoleTranslate,
    DipoleResample,
    DipoleTeleport,
}

impl MoveKind {
    pub const ALL: [MoveKind; 5] = [
        MoveKind::SingleDisplace,
        MoveKind::LocalDisplace,
        MoveKind::DipoleTranslate,
        MoveKind::DipoleResample,
        MoveKind::DipoleTeleport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::SingleDisplace => "single_displace",
            MoveKind::LocalDisplace => "local_displace",
            MoveKind::DipoleTranslate => "dipole_translate",
            MoveKind::DipoleResample => "dipole_resample",
            MoveKind::DipoleTeleport => "dipole_teleport",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn is_dipole(self) -> bool {
        matches!(
            self,
            MoveKind::DipoleTranslate | MoveKind::DipoleResample | MoveKind::DipoleTeleport
        )
    }
}

/// Move mix and step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveSpec {
    /// Weights in [`MoveKind::ALL`] order; nonnegative, summing to 1.
    pub weights: [f64; 5],
    /// Gaussian step of `single_displace`, absolute.
    pub sigma: f64,
    /// Gaussian step of `local_displace`, in units of `λ`.
    pub sigma_local: f64,
    /// Gaussian step of `dipole_translate`, absolute.
    pub sigma_translate: f64,
}

impl Default for MoveSpec {
    fn default() -> Self {
        Self {
            weights: [0.4, 0.2, 0.2, 0.15, 0.05],
            sigma: 0.2,
            sigma_local: 1.0,
            sigma_translate: 0.2,
        }
    }
}

impl MoveSpec {
    /// Only symmetric single-point moves.
    pub fn single_only() -> Self {
        Self {
            weights: [1.0, 0.0, 0.0, 0.0, 0.0],
            ..Self::default()
        }
    }

    pub fn with_weights(weights: [f64; 5]) -> Result<Self> {
        let spec = Self {
            weights,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses `"0.4,0.2,0.2,0.15,0.05"` or `"single_displace=0.5,dipole_resample=0.5"`
    /// (unnamed kinds get weight 0 in the second form).
    pub fn parse_weights(text: &str) -> Result<[f64; 5]> {
        let parts: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let mut w = [0.0; 5];
        if parts.iter().all(|p| p.contains('=')) {
            for p in parts {
                let (k, v) = p.split_once('=').unwrap();
                let kind = MoveKind::ALL
                    .iter()
                    .find(|m| m.name() == k.trim())
                    .ok_or_else(|| Error::param(format!("unknown move kind '{k}'")))?;
                w[kind.index()] = parse_weight(v)?;
            }
        } else if parts.len() == 5 {
            for (slot, p) in w.iter_mut().zip(parts) {
                *slot = parse_weight(p)?;
            }
        } else {
            return Err(Error::param(format!("expected 5 move weights, got '{text}'")));
        }
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::param("move weights must be nonnegative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("move weights must sum to 1 (got {total})")));
        }
        for (name, s) in [
            ("sigma", self.sigma),
            ("sigma_local", self.sigma_local),
            ("sigma_translate", self.sigma_translate),
        ] {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::param(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for kind in MoveKind::ALL {
            acc += self.weights[kind.index()];
            if u < acc {
                return kind;
            }
        }
        // Rounding left u above the cumulative total: take the last enabled kind.
        *MoveKind::ALL
            .iter()
            .rev()
            .find(|k| self.weights[k.index()] > 0.0)
            .unwrap_or(&MoveKind::SingleDisplace)
    }
}

fn parse_weight(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::param(format!("bad move weight '{s}'")))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounter {
    pub attempts: u64,
    pub accepts: u64,
}

impl MoveCounter {
    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepts as f64 / self.attempts as f64
        }
    }
}

/// `min(1, exp(log_ratio))` with `log_ratio = -βΔF + log q`.
pub fn acceptance_probability(delta_f: f64, beta: f64, log_q_ratio: f64) -> f64 {
    let lr = log_q_ratio - beta * delta_f;
    if lr >= 0.0 {
        1.0
    } else {
        lr.exp()
    }
}

/// First nearest neighbor of every point, kept up to date under moves.
/// Ties go to the lowest index.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestNeighborCache {
    phi: Vec<usize>,
    d2: Vec<f64>,
}

fn closer(d2: f64, j: usize, best_d2: f64, best: usize) -> bool {
    d2 < best_d2 || (d2 == best_d2 && j < best)
}

impl NearestNeighborCache {
    pub fn new(points: &[Point]) -> Self {
        let m = points.len();
        let mut cache = Self {
            phi: vec![usize::MAX; m],
            d2: vec![f64::INFINITY; m],
        };
        for k in 0..m {
            cache.recompute(points, k);
        }
        cache
    }

    fn recompute(&mut self, points: &[Point], k: usize) {
        let (mut best, mut best_d2) = (usize::MAX, f64::INFINITY);
        for (j, p) in points.iter().enumerate() {
            if j != k {
                let d2 = points[k].dist2(*p);
                if closer(d2, j, best_d2, best) {
                    best = j;
                    best_d2 = d2;
                }
            }
        }
        self.phi[k] = best;
        self.d2[k] = best_d2;
    }

    /// Cache for `points`, which differ from the cached state only at `moved`.
    pub fn updated(&self, points: &[Point], moved: &[usize]) -> Self {
        let mut next = self.clone();
        for k in 0..points.len() {
            if moved.contains(&k) || moved.contains(&self.phi[k]) {
                next.recompute(points, k);
            } else {
                for &i in moved {
                    let d2 = points[k].dist2(points[i]);
                    if closer(d2, i, next.d2[k], next.phi[k]) {
                        next.phi[k] = i;
                        next.d2[k] = d2;
                    }
                }
            }
        }
        next
    }

    pub fn phi(&self) -> &[usize] {
        &self.phi
    }

    /// Opposite-sign mutual nearest-neighbor pairs `(positive, negative)`.
    pub fn eligible_pairs(&self, n: usize) -> Vec<(usize, usize)> {
        (0..n)
            .filter_map(|i| {
                let j = self.phi[i];
                (j >= n && self.phi[j] == i).then_some((i, j))
            })
            .collect()
    }

    pub fn is_eligible(&self, n: usize, i: usize, j: usize) -> bool {
        let (p, q) = if i < j { (i, j) } else { (j, i) };
        p < n && q >= n && self.phi[p] == q && self.phi[q] == p
    }
}

/// Full state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    config: SignedConfiguration,
    lambda: f64,
    beta: f64,
    energy: f64,
    step: u64,
    burnin: u64,
    rng: ChaCha8Rng,
    moves: MoveSpec,
    counters: [MoveCounter; 5],
    window: [MoveCounter; 5],
    nn: NearestNeighborCache,
    proposal_law: Option<Arc<DipoleLaw>>,
    /// Target energy is `F̃ + s(F - F̃)`; `s = 1` is the physical chain.
    coupling: f64,
    /// Cached `F̃_λ`, kept only while `coupling < 1`.
    tilde: f64,
}

/// `F̃_λ` read off a nearest-neighbor cache: the self-energies of the
/// opposite-sign mutual nearest-neighbor pairs.
fn tilde_from_cache(config: &SignedConfiguration, nn: &NearestNeighborCache, pot: &PairPotential<'_>) -> f64 {
    -nn.eligible_pairs(config.n())
        .into_iter()
        .map(|(i, j)| pot.g(config.position(i), config.position(j)))
        .sum::<f64>()
}

/// Uniform on `[0, 1)` excluding 0, for quantile draws.
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn gaussian_step<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Point {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    Point::new(x, y) * sigma
}

/// A proposed move before the energy test.
struct Proposal {
    moved: Vec<(usize, Point)>,
    log_q: f64,
    /// Pair that must stay eligible (dipole moves).
    pair: Option<(usize, usize)>,
    /// Dipole move replaced by a single displacement (no eligible pair).
    fallback: bool,
}

pub fn proposal_beta(beta: f64) -> f64 {
    if beta > 2.0 {
        beta
    } else {
        FALLBACK_PROPOSAL_BETA
    }
}

impl ChainState {
    pub fn new(config: SignedConfiguration, lambda: f64, beta: f64, moves: MoveSpec, seed: u64, stream: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self::with_rng(config, lambda, beta, moves, rng)
    }

    pub fn with_rng(config: SignedConfiguration, lambda: f64, beta: f64, moves: MoveSpec, rng: ChaCha8Rng) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::param(format!("lambda must lie in (0, 1) (got {lambda})")));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::param(format!("beta must be nonnegative (got {beta})")));
        }
        moves.validate()?;
        let proposal_law = if moves.weights[MoveKind::DipoleResample.index()] > 0.0 {
            Some(Arc::new(DipoleLaw::new(proposal_beta(beta))?))
        } else {
            None
        };
        let energy = config.energy(lambda);
        let nn = NearestNeighborCache::new(config.positions());
        Ok(Self {
            config,
            lambda,
            beta,
            energy,
            step: 0,
            burnin: 0,
            rng,
            moves,
            counters: [MoveCounter::default(); 5],
            window: [MoveCounter::default(); 5],
            nn,
            proposal_law,
            coupling: 1.0,
            tilde: 0.0,
        })
    }

    /// Changes the target inverse temperature; the cached energy stays valid.
    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::param(format!("beta must be nonnegative (got {beta})")));
        }
        let needs_law = self.moves.weights[MoveKind::DipoleResample.index()] > 0.0;
        let same_law = self.proposal_law.as_ref().map(|l| l.beta()) == Some(proposal_beta(beta));
        if needs_law && !same_law {
            self.proposal_law = Some(Arc::new(DipoleLaw::new(proposal_beta(beta))?));
        }
        self.beta = beta;
        Ok(())
    }

    /// Interpolates the target between the reduced energy `F̃_λ` (`s = 0`)
    /// and `F_λ` (`s = 1`). Not stored in checkpoints.
    pub fn set_coupling(&mut self, s: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::param(format!("coupling must lie in [0, 1] (got {s})")));
        }
        self.coupling = s;
        self.tilde = tilde_from_cache(&self.config, &self.nn, &SmearedKernel::shared().at(self.lambda));
        Ok(())
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    /// `F̃_λ` of the current state.
    pub fn tilde_energy(&self) -> f64 {
        if self.coupling < 1.0 {
            self.tilde
        } else {
            tilde_from_cache(&self.config, &self.nn, &SmearedKernel::shared().at(self.lambda))
        }
    }

    /// Steps below `burnin` tune step sizes; counters reset when it is reached.
    pub fn set_burnin(&mut self, burnin: u64) {
        self.burnin = burnin;
    }

    pub fn config(&self) -> &SignedConfiguration {
        &self.config
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn energy(&self) -> f64 {
        self.energy
    }
    pub fn step_count(&self) -> u64 {
        self.step
    }
    pub fn burnin(&self) -> u64 {
        self.burnin
    }
    pub fn moves(&self) -> &MoveSpec {
        &self.moves
    }
    pub fn counters(&self) -> &[MoveCounter; 5] {
        &self.counters
    }
    pub fn counter(&self, kind: MoveKind) -> MoveCounter {
        self.counters[kind.index()]
    }
    pub fn nearest_neighbors(&self) -> &NearestNeighborCache {
        &self.nn
    }
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Recomputes `F_λ` and fails if the cache drifted beyond `2N·1e-9`;
    /// on success the cache is replaced by the fresh value.
    pub fn check_energy_cache(&mut self) -> Result<()> {
        let fresh = self.config.energy(self.lambda);
        let tolerance = 2.0 * self.config.n() as f64 * 1e-9;
        let drift = (fresh - self.energy).abs();
        if !(drift <= tolerance) {
            return Err(Error::CacheDrift {
                drift,
                tolerance,
                step: self.step,
            });
        }
        self.energy = fresh;
        if self.coupling < 1.0 {
            self.tilde = tilde_from_cache(&self.config, &self.nn, &SmearedKernel::shared().at(self.lambda));
        }
        Ok(())
    }

    /// One Metropolis–Hastings step; returns the move kind and whether it was accepted.
    pub fn step(&mut self) -> (MoveKind, bool) {
        let kind = self.moves.pick(&mut self.rng);
        let accepted = self.attempt(kind);
        let c = &mut self.counters[kind.index()];
        c.attempts += 1;
        c.accepts += accepted as u64;
        self.step += 1;
        if self.step <= self.burnin {
            self.tune(kind, accepted);
            if self.step == self.burnin {
                self.counters = [MoveCounter::default(); 5];
                self.window = [MoveCounter::default(); 5];
            }
        }
        (kind, accepted)
    }

    fn tune(&mut self, kind: MoveKind, accepted: bool) {
        let sigma = match kind {
            MoveKind::SingleDisplace => &mut self.moves.sigma,
            MoveKind::LocalDisplace => &mut self.moves.sigma_local,
            MoveKind::DipoleTranslate => &mut self.moves.sigma_translate,
            _ => return,
        };
        let w = &mut self.window[kind.index()];
        w.attempts += 1;
        w.accepts += accepted as u64;
        if w.attempts < TUNING_WINDOW {
            return;
        }
        let rate = w.rate();
        *w = MoveCounter::default();
        let unit = if kind == MoveKind::LocalDisplace { self.lambda } else { 1.0 };
        let side = self.config.box_side();
        // In the dipole phase most single-point proposals hit bound charges, so
        // the acceptance target would shrink the global step to the λ scale
        // and freeze the free charges; keep it at a fifth of the mean spacing.
        let floor = if kind == MoveKind::SingleDisplace {
            0.2 * side / (self.config.n() as f64).sqrt()
        } else {
            1e-3 * self.lambda / unit
        };
        let (lo, hi) = (floor.min(side / unit), side / unit);
        if rate < TARGET_ACCEPTANCE.0 {
            *sigma = (*sigma * 0.8).max(lo);
        } else if rate > TARGET_ACCEPTANCE.1 {
            *sigma = (*sigma * 1.25).min(hi);
        }
    }

    fn single_proposal(&mut self, sigma: f64) -> Proposal {
        let i = self.rng.random_range(0..self.config.len());
        let p = self.config.position(i) + gaussian_step(&mut self.rng, sigma);
        Proposal {
            moved: vec![(i, p)],
            log_q: 0.0,
            pair: None,
            fallback: false,
        }
    }

    fn propose(&mut self, kind: MoveKind) -> Proposal {
        match kind {
            MoveKind::SingleDisplace => return self.single_proposal(self.moves.sigma),
            MoveKind::LocalDisplace => return self.single_proposal(self.moves.sigma_local * self.lambda),
            _ => {}
        }
        let pairs = self.nn.eligible_pairs(self.config.n());
        if pairs.is_empty() {
            let mut p = self.single_proposal(self.moves.sigma);
            p.fallback = true;
            return p;
        }
        let (i, j) = pairs[self.rng.random_range(0..pairs.len())];
        let (zi, zj) = (self.config.position(i), self.config.position(j));
        let log_count = (pairs.len() as f64).ln();
        let (pi, pj, log_q) = match kind {
            MoveKind::DipoleTranslate => {
                let t = gaussian_step(&mut self.rng, self.moves.sigma_translate);
                (zi + t, zj + t, 0.0)
            }
            MoveKind::DipoleTeleport => {
                let side = self.config.box_side();
                let c = Point::new(self.rng.random::<f64>() * side, self.rng.random::<f64>() * side);
                let half = (zi - zj) * 0.5;
                (c + half, c - half, 0.0)
            }
            MoveKind::DipoleResample => {
                let law = self.proposal_law.clone().expect("law built when resampling is enabled");
                let c = zi.midpoint(zj);
                let r_new = self.lambda * law.sample(open_unit(&mut self.rng));
                let theta = 2.0 * PI * self.rng.random::<f64>();
                let half = Point::from_polar(0.5 * r_new, theta);
                let r_old = zi.dist(zj);
                let kernel = SmearedKernel::shared();
                let beta_p = law.beta();
                // Density of the separation vector u is ∝ exp(β_p g_1(|u|/λ)).
                let log_q = beta_p * (kernel.g1(r_old / self.lambda) - kernel.g1(r_new / self.lambda));
                (c + half, c - half, log_q)
            }
            _ => unreachable!(),
        };
        Proposal {
            moved: vec![(i, pi), (j, pj)],
            log_q: log_q + log_count,
            pair: Some((i, j)),
            fallback: false,
        }
    }

    fn attempt(&mut self, kind: MoveKind) -> bool {
        let mut prop = self.propose(kind);
        if !prop.log_q.is_finite() || prop.moved.iter().any(|&(_, p)| !self.config.in_box(p)) {
            return false;
        }
        let reduced = self.coupling < 1.0;
        let needs_graph = kind.is_dipole() || reduced;
        let mut trial_nn = None;
        if needs_graph {
            let mut trial = self.config.positions().to_vec();
            for &(i, p) in &prop.moved {
                trial[i] = p;
            }
            let idx: Vec<usize> = prop.moved.iter().map(|m| m.0).collect();
            let nn = self.nn.updated(&trial, &idx);
            let n = self.config.n();
            if prop.fallback {
                // Fallback kernel is confined to states with no eligible pair.
                if !nn.eligible_pairs(n).is_empty() {
                    return false;
                }
            } else if let Some((i, j)) = prop.pair {
                if !nn.is_eligible(n, i, j) {
                    return false;
                }
                prop.log_q -= (nn.eligible_pairs(n).len() as f64).ln();
            }
            trial_nn = Some(nn);
        }
        let pot = SmearedKernel::shared().at(self.lambda);
        let delta = match prop.moved.as_slice() {
            [(i, p)] => self.config.energy_delta_with(&pot, *i, *p),
            [(i, pi), (j, pj)] => self.config.pair_energy_delta_with(&pot, *i, *pi, *j, *pj),
            _ => unreachable!(),
        };
        let mut tilde_new = self.tilde;
        let target_delta = if reduced {
            let mut trial = self.config.clone();
            for &(i, p) in &prop.moved {
                trial.set_position(i, p).expect("checked in box");
            }
            tilde_new = tilde_from_cache(&trial, trial_nn.as_ref().expect("built when reduced"), &pot);
            let tilde_delta = tilde_new - self.tilde;
            tilde_delta + self.coupling * (delta - tilde_delta)
        } else {
            delta
        };
        let a = acceptance_probability(target_delta, self.beta, prop.log_q);
        let accept = a >= 1.0 || self.rng.random::<f64>() < a;
        if !accept {
            return false;
        }
        let idx: Vec<usize> = prop.moved.iter().map(|m| m.0).collect();
        for &(i, p) in &prop.moved {
            self.config.set_position(i, p).expect("checked in box");
        }
        self.nn = match trial_nn {
            Some(nn) => nn,
            None => self.nn.updated(self.config.positions(), &idx),
        };
        self.energy += delta;
        self.tilde = tilde_new;
        true
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            n: self.config.n(),
            lambda: fmt_f64(self.lambda),
            beta: fmt_f64(self.beta),
            step: self.step,
            burnin: self.burnin,
            energy: fmt_f64(self.energy),
            positions: self
                .config
                .positions()
                .iter()
                .map(|p| [fmt_f64(p.x), fmt_f64(p.y)])
                .collect(),
            charges: (0..self.config.len()).map(|i| self.config.charge(i) as i8).collect(),
            rng_state: self.rng.clone(),
            acceptance_counters: MoveKind::ALL
                .iter()
                .map(|k| (k.name().to_string(), self.counters[k.index()]))
                .collect(),
            tuning_window: self.window,
            moves: self.moves.clone(),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::param(format!("unsupported checkpoint version {}", cp.version)));
        }
        let num = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                context: "checkpoint".into(),
                message: format!("bad {what} '{s}'"),
            })
        };
        let positions = cp
            .positions
            .iter()
            .map(|[x, y]| Ok(Point::new(num(x, "x")?, num(y, "y")?)))
            .collect::<Result<Vec<_>>>()?;
        let expected: Vec<i8> = (0..2 * cp.n).map(|i| if i < cp.n { 1 } else { -1 }).collect();
        if cp.charges != expected {
            return Err(Error::InvalidConfiguration("checkpoint charges must list N positives then N negatives".into()));
        }
        let config = SignedConfiguration::new(cp.n, positions)?;
        let mut state = Self::with_rng(
            config,
            num(&cp.lambda, "lambda")?,
            num(&cp.beta, "beta")?,
            cp.moves.clone(),
            cp.rng_state.clone(),
        )?;
        state.energy = num(&cp.energy, "energy")?;
        state.step = cp.step;
        state.burnin = cp.burnin;
        for (name, c) in &cp.acceptance_counters {
            let kind = MoveKind::ALL
                .iter()
                .find(|k| k.name() == name)
                .ok_or_else(|| Error::param(format!("unknown move kind '{name}' in checkpoint")))?;
            state.counters[kind.index()] = *c;
        }
        state.window = cp.tuning_window;
        state.check_energy_cache()?;
        state.energy = num(&cp.energy, "energy")?;
        Ok(state)
    }
}

/// Serialized chain state. Reals are written with 17 significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub n: usize,
    pub lambda: String,
    pub beta: String,
    pub step: u64,
    pub burnin: u64,
    pub energy: String,
    pub positions: Vec<[String; 2]>,
    pub charges: Vec<i8>,
    pub rng_state: ChaCha8Rng,
    pub acceptance_counters: Vec<(String, MoveCounter)>,
    pub tuning_window: [MoveCounter; 5],
    pub moves: MoveSpec,
}

/// Burn-in, measurement length and snapshot stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub burnin: u64,
    pub steps: u64,
    pub stride: u64,
}

impl Schedule {
    pub fn new(burnin: u64, steps: u64, stride: u64) -> Result<Self> {
        if stride == 0 {
            return Err(Error::param("snapshot stride must be positive"));
        }
        Ok(Self { burnin, steps, stride })
    }

    pub fn total(&self) -> u64 {
        self.burnin + self.steps
    }

    fn is_snapshot(&self, t: u64) -> bool {
        t >= self.burnin && (t - self.burnin) % self.stride == 0
    }
}

/// Runs the chain to `schedule.total()` steps, calling `observe` at every
/// snapshot: after burn-in and every `stride` steps thereafter. The energy
/// cache is checked before each observation.
///
/// A chain resumed at step `t > burnin` skips the snapshot at `t` itself,
/// which the interrupted run already recorded.
pub fn run<F>(state: &mut ChainState, schedule: &Schedule, mut observe: F) -> Result<()>
where
    F: FnMut(&ChainState) -> Result<()>,
{
    if state.step_count() == 0 || state.step_count() < schedule.burnin {
        state.set_burnin(schedule.burnin);
    }
    let start = state.step_count();
    if start <= schedule.burnin && schedule.is_snapshot(start) {
        state.check_energy_cache()?;
        observe(state)?;
    }
    while state.step_count() < schedule.total() {
        state.step();
        let t = state.step_count();
        if schedule.is_snapshot(t) {
            state.check_energy_cache()?;
            observe(state)?;
        }
    }
    Ok(())
}

/// Paired initial state: `x_i` uniform, `y_i = x_i + s_i e^{iθ_i}` with
/// `s_i = λ·(μ_β draw)` clipped to `½ r(x_i)`, `r(x_i) = ½ min_{j≠i} |x_j - x_i|`.
pub fn init_paired<R: Rng + ?Sized>(rng: &mut R, n: usize, lambda: f64, law: &DipoleLaw) -> Result<SignedConfiguration> {
    if n == 0 {
        return Err(Error::param("need at least one dipole"));
    }
    let side = (n as f64).sqrt();
    let x: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side))
        .collect();
    let clip = if n > 1 {
        crate::nngraph::r_half(&x).into_iter().map(|r| 0.5 * r).collect()
    } else {
        vec![f64::INFINITY]
    };
    let inside = |p: Point| p.x >= 0.0 && p.x <= side && p.y >= 0.0 && p.y <= side;
    let mut y = Vec::with_capacity(n);
    for (xi, c) in x.iter().zip(clip) {
        let mut s = (lambda * law.sample(open_unit(rng))).min(c);
        let yi = 'place: loop {
            for _ in 0..16 {
                let cand = *xi + Point::from_polar(s, 2.0 * PI * rng.random::<f64>());
                if inside(cand) {
                    break 'place cand;
                }
            }
            s *= 0.5;
        };
        y.push(yi);
    }
    SignedConfiguration::from_species(&x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nngraph::neighbors_brute_force;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn chain(n: usize, beta: f64, lambda: f64, moves: MoveSpec, seed: u64) -> ChainState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = SignedConfiguration::uniform(n, &mut rng).unwrap();
        ChainState::new(c, lambda, beta, moves, seed, 0).unwrap()
    }

    #[test]
    fn acceptance_examples() {
        assert_eq!(acceptance_probability(0.0, 3.0, 0.0), 1.0);
        assert_eq!(acceptance_probability(-1.0, 3.0, 0.0), 1.0);
        assert!((acceptance_probability(1.0, 2.0, 0.5) - (-1.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn weights_parse_and_validate() {
        assert_eq!(MoveSpec::parse_weights("0.4,0.2,0.2,0.15,0.05").unwrap(), [0.4, 0.2, 0.2, 0.15, 0.05]);
        assert_eq!(
            MoveSpec::parse_weights("single_displace=0.5, dipole_resample=0.5").unwrap(),
            [0.5, 0.0, 0.0, 0.5, 0.0]
        );
        assert!(MoveSpec::parse_weights("jump=1").is_err());
        assert!(MoveSpec::with_weights([0.5, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(MoveSpec::with_weights([1.5, -0.5, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn cache_stays_coherent_and_in_box() {
        let mut s = chain(10, 3.0, 1e-2, MoveSpec::default(), 3);
        for _ in 0..20_000 {
            s.step();
            assert!(s.config().positions().iter().all(|p| s.config().in_box(*p)));
        }
        let fresh = s.config().energy(1e-2);
        assert!((fresh - s.energy()).abs() <= 2.0 * 10.0 * 1e-9);
        assert_eq!(s.nearest_neighbors(), &NearestNeighborCache::new(s.config().positions()));
    }

    #[test]
    fn reduced_energy_cache_stays_coherent() {
        let lambda = 1e-2;
        let mut s = chain(8, 3.0, lambda, MoveSpec::default(), 4);
        assert!(s.set_coupling(1.5).is_err());
        s.set_coupling(0.3).unwrap();
        for k in 0..20_000 {
            s.step();
            if k % 1000 == 0 {
                let dec = crate::nngraph::build_decomposition(s.config(), lambda).unwrap();
                let fresh = s.config().tilde_energy(lambda, &dec);
                assert!((fresh - s.tilde_energy()).abs() < 1e-9, "step {k}");
            }
        }
        s.check_energy_cache().unwrap();
    }

    #[test]
    fn every_move_kind_gets_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let law = DipoleLaw::new(3.0).unwrap();
        let c = init_paired(&mut rng, 8, 1e-2, &law).unwrap();
        let mut s = ChainState::new(c, 1e-2, 3.0, MoveSpec::default(), 1, 0).unwrap();
        s.set_burnin(5_000);
        for _ in 0..30_000 {
            s.step();
        }
        for k in MoveKind::ALL {
            let c = s.counter(k);
            assert!(c.attempts > 0 && c.accepts > 0, "{k:?} {c:?}");
        }
    }

    #[test]
    fn nearest_neighbor_cache_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pts: Vec<Point> = (0..30).map(|_| Point::new(rng.random(), rng.random())).collect();
        let mut cache = NearestNeighborCache::new(&pts);
        for _ in 0..500 {
            let i = rng.random_range(0..pts.len());
            let j = rng.random_range(0..pts.len());
            pts[i] = Point::new(rng.random(), rng.random());
            // Occasionally create an exact duplicate to exercise ties.
            if rng.random_bool(0.1) && i != j {
                pts[j] = pts[i];
            }
            cache = cache.updated(&pts, &[i, j]);
            let brute: Vec<usize> = neighbors_brute_force(&pts).iter().map(|n| n.first).collect();
            assert_eq!(cache.phi(), brute.as_slice());
        }
    }

    #[test]
    fn resample_ratio_is_antisymmetric() {
        let k = SmearedKernel::shared();
        let (lambda, beta) = (1e-3, 3.0);
        let lq = |a: f64, b: f64| beta * (k.g1(a / lambda) - k.g1(b / lambda));
        for (a, b) in [(5e-4, 3e-3), (1e-4, 1e-1), (2e-3, 2.1e-3)] {
            assert!((lq(a, b) + lq(b, a)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_steps_gives_initial_snapshot_only() {
        let mut s = chain(3, 1.0, 0.1, MoveSpec::default(), 2);
        let mut seen = Vec::new();
        run(&mut s, &Schedule::new(0, 0, 10).unwrap(), |st| {
            seen.push(st.step_count());
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0]);
        let mut seen = Vec::new();
        run(&mut s, &Schedule::new(50, 100, 25).unwrap(), |st| {
            seen.push(st.step_count());
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![50, 75, 100, 125, 150]);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let trace = |seed| {
            let mut s = chain(6, 3.0, 1e-2, MoveSpec::default(), seed);
            let mut out = Vec::new();
            run(&mut s, &Schedule::new(500, 2_000, 100).unwrap(), |st| {
                out.push(st.energy().to_bits());
                Ok(())
            })
            .unwrap();
            out
        };
        assert_eq!(trace(5), trace(5));
        assert_ne!(trace(5), trace(6));
    }

    #[test]
    fn checkpoint_resume_is_bit_exact() {
        let schedule = Schedule::new(300, 3_000, 500).unwrap();
        let mut straight = chain(5, 3.0, 1e-2, MoveSpec::default(), 11);
        let mut a = Vec::new();
        run(&mut straight, &schedule, |st| {
            a.push((st.step_count(), st.energy().to_bits()));
            Ok(())
        })
        .unwrap();

        let mut first = chain(5, 3.0, 1e-2, MoveSpec::default(), 11);
        let mut b = Vec::new();
        let mut saved = None;
        run(&mut first, &Schedule::new(300, 1_500, 500).unwrap(), |st| {
            b.push((st.step_count(), st.energy().to_bits()));
            saved = Some(serde_json::to_string(&st.to_checkpoint()).unwrap());
            Ok(())
        })
        .unwrap();
        let cp: Checkpoint = serde_json::from_str(&saved.unwrap()).unwrap();
        let mut resumed = ChainState::from_checkpoint(&cp).unwrap();
        run(&mut resumed, &schedule, |st| {
            b.push((st.step_count(), st.energy().to_bits()));
            Ok(())
        })
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(straight.config(), resumed.config());
    }

    #[test]
    fn drift_is_detected() {
        let mut s = chain(2, 1.0, 0.1, MoveSpec::default(), 1);
        s.energy += 1e-6;
        assert!(matches!(s.check_energy_cache(), Err(Error::CacheDrift { .. })));
    }

    #[test]
    fn tuning_freezes_after_burnin() {
        let mut s = chain(4, 0.0, 0.1, MoveSpec::single_only(), 4);
        s.set_burnin(2_000);
        for _ in 0..2_000 {
            s.step();
        }
        let tuned = s.moves().clone();
        assert_ne!(tuned.sigma, MoveSpec::default().sigma);
        assert_eq!(s.counter(MoveKind::SingleDisplace), MoveCounter::default());
        for _ in 0..2_000 {
            s.step();
        }
        assert_eq!(s.moves(), &tuned);
        let rate = s.counter(MoveKind::SingleDisplace).rate();
        assert!((0.15..0.5).contains(&rate), "{rate}");
    }

    #[test]
    fn paired_init_is_mutual_nearest_neighbors() {
        let law = DipoleLaw::new(3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let n = rng.random_range(1..30);
            let c = init_paired(&mut rng, n, 1e-3, &law).unwrap();
            let nn = NearestNeighborCache::new(c.positions());
            assert_eq!(nn.eligible_pairs(n).len(), n);
            assert!((0..n).all(|i| nn.phi()[i] == i + n));
        }
    }

    proptest! {
        #[test]
        fn nn_update_is_exact(seed in 0u64..500, moves in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pts: Vec<Point> = (0..12).map(|_| Point::new(rng.random(), rng.random())).collect();
            let cache = NearestNeighborCache::new(&pts);
            let idx: Vec<usize> = (0..moves).map(|_| rng.random_range(0..12)).collect();
            for &i in &idx {
                pts[i] = Point::new(rng.random(), rng.random());
            }
            prop_assert_eq!(cache.updated(&pts, &idx), NearestNeighborCache::new(&pts));
        }
    }
}
