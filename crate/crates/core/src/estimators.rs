//! Observables along a chain and the estimators built on them: dipole
//! statistics, the thermodynamic-integration free energy, the exponential
//! moment of `F_λ - F̃_λ`, fluctuation scaling and the β = 0 component density.

use crate::config::{SignedConfiguration, TestFunction};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::io::{fmt_f64, CsvBuffer};
use crate::kernel::{z_beta_or_two_pi, DipoleLaw};
use crate::nngraph::{build_decomposition, two_nearest_neighbors};
use crate::par;
use crate::quadrature::GaussLegendre;
use crate::sampler::{init_paired, proposal_beta, run, ChainState, MoveSpec, Schedule};
use crate::stats;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Geometric constant in the rate `ω_λ`.
pub const M0: f64 = 36.0;

/// Component density of the nearest-neighbor graph of iid uniform points.
pub fn component_density_limit() -> f64 {
    use std::f64::consts::PI;
    3.0 * PI / (8.0 * PI + 3.0 * 3f64.sqrt())
}

/// Rate `ω_λ(β)`:
/// `|log λ|^{-1/(5+M0)}` at β = 2, `λ^{2(β-2)/(12-β+M0)}` on (2, 4),
/// `(λ |log λ|)^{1/(2+M0)}` at β = 4 and `λ^{1/(2+M0)}` above.
pub fn omega_lambda(beta: f64, lambda: f64) -> Result<f64> {
    if !(beta >= 2.0) || !beta.is_finite() {
        return Err(Error::param(format!("omega_lambda needs beta >= 2 (got {beta})")));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::param(format!("lambda must lie in (0, 1) (got {lambda})")));
    }
    let log_abs = lambda.ln().abs();
    Ok(if beta == 2.0 {
        log_abs.powf(-1.0 / (5.0 + M0))
    } else if beta < 4.0 {
        lambda.powf(2.0 * (beta - 2.0) / (12.0 - beta + M0))
    } else if beta == 4.0 {
        (lambda * log_abs).powf(1.0 / (2.0 + M0))
    } else {
        lambda.powf(1.0 / (2.0 + M0))
    })
}

/// Per-particle free energy predicted by the expansion, without its error term:
/// `(2-β) log λ 1_{β>2} + log|log λ| 1_{β=2} + log Z_β - 1`.
pub fn free_energy_prediction_per_particle(beta: f64, lambda: f64) -> Result<f64> {
    if beta < 2.0 {
        return Err(Error::param("the expansion holds for beta >= 2"));
    }
    let leading = if beta > 2.0 {
        (2.0 - beta) * lambda.ln()
    } else {
        lambda.ln().abs().ln()
    };
    Ok(leading + z_beta_or_two_pi(beta)?.ln() - 1.0)
}

/// Observables of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub energy: f64,
    pub nn_energy: f64,
    pub tilde_energy: f64,
    pub k_components: usize,
    pub n_pairs: usize,
    pub n_dipoles: usize,
    pub n_twice_isolated: usize,
    pub dipole_lengths: Vec<f64>,
    pub fluctuations: Vec<f64>,
}

impl Snapshot {
    pub fn observe(config: &SignedConfiguration, lambda: f64, step: u64, energy: f64, tests: &[TestFunction]) -> Result<Self> {
        let dec = build_decomposition(config, lambda)?;
        Ok(Self {
            step,
            energy,
            nn_energy: config.nn_energy(lambda, &dec),
            tilde_energy: config.tilde_energy(lambda, &dec),
            k_components: dec.k_components(),
            n_pairs: dec.n_isolated_pairs(),
            n_dipoles: dec.n_isolated_dipoles(),
            n_twice_isolated: dec.n_twice_isolated_dipoles(),
            dipole_lengths: dec
                .isolated_dipoles()
                .into_iter()
                .map(|(i, j)| config.position(i).dist(config.position(j)))
                .collect(),
            fluctuations: tests.iter().map(|t| config.fluctuation(t)).collect(),
        })
    }
}

/// Snapshots of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableTrace {
    pub n: usize,
    pub lambda: f64,
    pub beta: f64,
    pub test_functions: Vec<TestFunction>,
    pub records: Vec<Snapshot>,
}

impl ObservableTrace {
    pub fn new(n: usize, lambda: f64, beta: f64, test_functions: Vec<TestFunction>) -> Self {
        Self {
            n,
            lambda,
            beta,
            test_functions,
            records: Vec::new(),
        }
    }

    pub fn push_state(&mut self, state: &ChainState) -> Result<()> {
        let snap = Snapshot::observe(
            state.config(),
            self.lambda,
            state.step_count(),
            state.energy(),
            &self.test_functions,
        )?;
        self.records.push(snap);
        Ok(())
    }

    pub fn dipole_fractions(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.n_dipoles as f64 / self.n as f64).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols: Vec<String> = [
            "step", "F", "Fnn", "Ftilde", "K", "n_pairs", "n_dipoles", "n_twice_isolated",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        cols.extend(self.test_functions.iter().map(|t| format!("fluct_{}", t.name())));
        cols
    }

    pub fn trace_csv(&self) -> CsvBuffer {
        let header = self.header();
        let cols: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut csv = CsvBuffer::with_header(&cols);
        for r in &self.records {
            let mut row = vec![
                r.step.to_string(),
                fmt_f64(r.energy),
                fmt_f64(r.nn_energy),
                fmt_f64(r.tilde_energy),
                r.k_components.to_string(),
                r.n_pairs.to_string(),
                r.n_dipoles.to_string(),
                r.n_twice_isolated.to_string(),
            ];
            row.extend(r.fluctuations.iter().map(|&f| fmt_f64(f)));
            csv.row(row);
        }
        csv
    }

    pub fn dipole_lengths_csv(&self) -> CsvBuffer {
        let mut csv = CsvBuffer::with_header(&["step", "length"]);
        for r in &self.records {
            for &l in &r.dipole_lengths {
                csv.row([r.step.to_string(), fmt_f64(l)]);
            }
        }
        csv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Uniform,
    Paired,
}

impl std::str::FromStr for InitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(InitKind::Uniform),
            "paired" => Ok(InitKind::Paired),
            _ => Err(Error::param(format!("init must be 'uniform' or 'paired' (got '{s}')"))),
        }
    }
}

/// Everything needed to run one family of chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub n: usize,
    pub beta: f64,
    pub lambda: f64,
    pub schedule: Schedule,
    pub init: InitKind,
    pub moves: MoveSpec,
    pub seed: u64,
}

impl ChainParams {
    /// Initial state of chain `stream`: the chain RNG first draws the
    /// configuration, then drives the dynamics.
    pub fn initial_state(&self, stream: u64) -> Result<ChainState> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let config = match self.init {
            InitKind::Uniform => SignedConfiguration::uniform(self.n, &mut rng)?,
            InitKind::Paired => {
                let law = DipoleLaw::new(proposal_beta(self.beta))?;
                init_paired(&mut rng, self.n, self.lambda, &law)?
            }
        };
        ChainState::with_rng(config, self.lambda, self.beta, self.moves.clone(), rng)
    }

    pub fn run_chain(&self, stream: u64, tests: &[TestFunction]) -> Result<ObservableTrace> {
        let mut state = self.initial_state(stream)?;
        let mut trace = ObservableTrace::new(self.n, self.lambda, self.beta, tests.to_vec());
        run(&mut state, &self.schedule, |s| trace.push_state(s))?;
        Ok(trace)
    }

    /// `chains` independent chains on streams `0..chains`, in parallel.
    pub fn run_chains(&self, chains: usize, tests: &[TestFunction]) -> Result<Vec<ObservableTrace>> {
        par::map_indexed(chains, |k| self.run_chain(k as u64, tests))
            .into_iter()
            .collect()
    }
}

/// Mean over chains of per-chain batch means, with the SE of the combination.
pub fn pooled_mean_se(series: &[Vec<f64>], batches: usize) -> (f64, f64) {
    let per: Vec<(f64, f64)> = series
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| stats::batch_means(s, batches))
        .collect();
    if per.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let k = per.len() as f64;
    let mean = per.iter().map(|p| p.0).sum::<f64>() / k;
    let se = per.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt() / k;
    (mean, se)
}

/// Difference between the last-quarter and third-quarter means and its SE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stationarity {
    pub difference: f64,
    pub se: f64,
    pub stationary: bool,
}

pub fn stationarity(xs: &[f64], z: f64) -> Stationarity {
    let q = xs.len() / 4;
    if q < 2 {
        return Stationarity {
            difference: 0.0,
            se: 0.0,
            stationary: true,
        };
    }
    let third = &xs[2 * q..3 * q];
    let last = &xs[3 * q..4 * q];
    let (m3, s3) = stats::batch_means(third, 5);
    let (m4, s4) = stats::batch_means(last, 5);
    let difference = m4 - m3;
    let se = (s3 * s3 + s4 * s4).sqrt();
    Stationarity {
        difference,
        se,
        stationary: difference.abs() <= z * se || difference == 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    /// Threshold in units of `λ`.
    pub threshold: f64,
    pub empirical: f64,
    pub se: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleSummary {
    pub mean_fraction: f64,
    pub fraction_se: f64,
    pub lengths: usize,
    /// Largest possible rescaled length (box diagonal over `λ`).
    pub r_max: f64,
    pub ks_distance: Option<f64>,
    pub tail: Vec<TailRow>,
}

/// Dipole fraction, KS distance of rescaled lengths to `μ_β` conditioned on
/// `[0, r_max]`, and tail exceedances at `thresholds` (in units of `λ`).
pub fn dipole_statistics(traces: &[ObservableTrace], thresholds: &[f64]) -> Result<DipoleSummary> {
    let first = traces
        .first()
        .ok_or_else(|| Error::param("dipole statistics need at least one trace"))?;
    let (lambda, beta, n) = (first.lambda, first.beta, first.n);
    let fractions: Vec<Vec<f64>> = traces.iter().map(|t| t.dipole_fractions()).collect();
    let (mean_fraction, fraction_se) = pooled_mean_se(&fractions, 20);
    let pooled: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.records.iter().flat_map(|r| r.dipole_lengths.iter().map(|l| l / lambda)))
        .collect();
    let r_max = (2.0 * n as f64).sqrt() / lambda;
    let law = if beta > 2.0 { Some(DipoleLaw::new(beta)?) } else { None };
    let ks_distance = match (&law, pooled.is_empty()) {
        (Some(law), false) => Some(stats::ks_statistic(&pooled, |r| law.conditional_cdf(r, r_max))),
        _ => None,
    };
    let mut tail = Vec::new();
    if let Some(law) = &law {
        let mass = law.cdf(r_max);
        for &t in thresholds {
            let per_chain: Vec<Vec<f64>> = traces
                .iter()
                .map(|tr| {
                    tr.records
                        .iter()
                        .filter(|r| !r.dipole_lengths.is_empty())
                        .map(|r| {
                            let hits = r.dipole_lengths.iter().filter(|&&l| l / lambda >= t).count();
                            hits as f64 / r.dipole_lengths.len() as f64
                        })
                        .collect()
                })
                .collect();
            let (empirical, se) = pooled_mean_se(&per_chain, 20);
            tail.push(TailRow {
                threshold: t,
                empirical,
                se,
                predicted: ((law.sf(t) - law.sf(r_max)) / mass).max(0.0),
            });
        }
    }
    Ok(DipoleSummary {
        mean_fraction,
        fraction_se,
        lengths: pooled.len(),
        r_max,
        ks_distance,
        tail,
    })
}

/// `E[K]/p` over `draws` sets of `p` iid uniform points, with its SE.
pub fn component_density(p: usize, draws: usize, seed: u64) -> Result<(f64, f64)> {
    if p < 2 || draws == 0 {
        return Err(Error::param("component density needs p >= 2 and at least one draw"));
    }
    let ratios = par::map_indexed(draws, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let pts: Vec<Point> = (0..p).map(|_| Point::new(rng.random(), rng.random())).collect();
        let nb = two_nearest_neighbors(&pts);
        let cycles = (0..p).filter(|&i| nb[i].first > i && nb[nb[i].first].first == i).count();
        cycles as f64 / p as f64
    });
    Ok((stats::mean(&ratios), stats::standard_error(&ratios)))
}

/// Exponential moment `(1/N) log E[exp(β(F_λ - F̃_λ))]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentGap {
    pub estimate: f64,
    pub se: Option<f64>,
    /// Kish effective number of snapshots carrying the exponential weights.
    pub effective_snapshots: f64,
    /// Fewer than 10 effective snapshots: the moment is tail-dominated.
    pub heavy_tail: bool,
    pub snapshots: usize,
}

pub fn moment_gap(traces: &[ObservableTrace]) -> Result<MomentGap> {
    let first = traces
        .first()
        .ok_or_else(|| Error::param("moment gap needs at least one trace"))?;
    let (beta, n) = (first.beta, first.n as f64);
    let xs: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.records.iter().map(|r| beta * (r.energy - r.tilde_energy)))
        .collect();
    if xs.is_empty() {
        return Err(Error::param("moment gap needs at least one snapshot"));
    }
    let estimate = stats::log_mean_exp(&xs) / n;
    let se = (xs.len() >= 2).then(|| stats::jackknife(&xs, xs.len().min(20), |b| stats::log_mean_exp(b) / n));
    let ess = stats::effective_sample_size(&xs);
    Ok(MomentGap {
        estimate,
        se,
        effective_snapshots: ess,
        heavy_tail: ess < 10.0,
        snapshots: xs.len(),
    })
}

/// `(1/N) log E[exp(β(F_λ - F̃_λ))]` by integration over a coupling.
///
/// With `Z_s = ∫ exp(-β(F̃ + s(F - F̃)))`, the moment equals `log(Z_0/Z_1)`,
/// and `d/ds log Z_s = -E_s[β(F - F̃)]`, so it is `∫_0^1 E_s[β(F - F̃)] ds`.
/// Unlike [`moment_gap`] it never averages the exponential itself, whose
/// weight sits on configurations the physical chain rarely visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledMoment {
    pub n: usize,
    pub beta: f64,
    pub lambda: f64,
    pub couplings: Vec<f64>,
    pub weights: Vec<f64>,
    /// `E_s[β(F - F̃)]` at each coupling.
    pub mean_gap: Vec<f64>,
    pub mean_gap_se: Vec<f64>,
    /// Per particle.
    pub estimate: f64,
    pub se: f64,
}

pub fn moment_gap_coupled(n: usize, beta: f64, lambda: f64, settings: &TiSettings) -> Result<CoupledMoment> {
    if settings.nodes == 0 || settings.chains == 0 {
        return Err(Error::param("coupling integration needs nodes and chains"));
    }
    let schedule = Schedule::new(settings.burnin, settings.steps, settings.stride)?;
    let nodes = GaussLegendre::new(settings.nodes).nodes_weights(0.0, 1.0);
    let per_node = nodes
        .iter()
        .enumerate()
        .map(|(k, &(s, _))| {
            let params = ChainParams {
                n,
                beta,
                lambda,
                schedule,
                init: InitKind::Paired,
                moves: MoveSpec::default(),
                seed: settings.seed.wrapping_add(k as u64),
            };
            let series = par::map_indexed(settings.chains, |c| {
                let mut state = params.initial_state(c as u64)?;
                state.set_coupling(s)?;
                let mut xs = Vec::new();
                run(&mut state, &schedule, |st| {
                    xs.push(beta * (st.energy() - st.tilde_energy()));
                    Ok(())
                })?;
                Ok(xs)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            Ok(pooled_mean_se(&series, 20))
        })
        .collect::<Result<Vec<_>>>()?;
    let nf = n as f64;
    let integral: f64 = nodes.iter().zip(&per_node).map(|(&(_, w), r)| w * r.0).sum();
    let var: f64 = nodes.iter().zip(&per_node).map(|(&(_, w), r)| (w * r.1).powi(2)).sum();
    Ok(CoupledMoment {
        n,
        beta,
        lambda,
        couplings: nodes.iter().map(|x| x.0).collect(),
        weights: nodes.iter().map(|x| x.1).collect(),
        mean_gap: per_node.iter().map(|r| r.0).collect(),
        mean_gap_se: per_node.iter().map(|r| r.1).collect(),
        estimate: integral / nf,
        se: var.sqrt() / nf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationRow {
    pub lambda: f64,
    pub omega: f64,
    pub mean_fluct_sq: f64,
    pub se: f64,
    /// `mean Fluct² / (N ω_λ ‖∇ξ0‖²_∞)`; 0 for a constant test function.
    pub ratio: f64,
    pub ratio_se: f64,
}

/// One row per λ: normalized mean squared fluctuation of test function `index`.
pub fn fluctuation_scaling(runs: &[Vec<ObservableTrace>], index: usize) -> Result<Vec<FluctuationRow>> {
    runs.iter()
        .map(|traces| {
            let first = traces.first().ok_or_else(|| Error::param("empty run"))?;
            let xi = first
                .test_functions
                .get(index)
                .ok_or_else(|| Error::param(format!("no test function {index}")))?;
            let omega = omega_lambda(first.beta, first.lambda)?;
            let sq: Vec<Vec<f64>> = traces
                .iter()
                .map(|t| t.records.iter().map(|r| r.fluctuations[index].powi(2)).collect())
                .collect();
            let (mean, se) = pooled_mean_se(&sq, 20);
            let lip = xi.lipschitz();
            let scale = first.n as f64 * omega * lip * lip;
            let (ratio, ratio_se) = if lip == 0.0 { (0.0, 0.0) } else { (mean / scale, se / scale) };
            Ok(FluctuationRow {
                lambda: first.lambda,
                omega,
                mean_fluct_sq: mean,
                se,
                ratio,
                ratio_se,
            })
        })
        .collect()
}

/// Inverse-temperature nodes and weights for `∫_0^β`: Gauss–Legendre on
/// `[0, β]`, or split at 2 with half the nodes on each side when `β > 2`
/// (Gauss–Legendre nodes cluster at panel ends, so the split packs them
/// around the transition).
pub fn ti_nodes(beta: f64, count: usize) -> Result<Vec<(f64, f64)>> {
    if !(beta >= 0.0) || count == 0 {
        return Err(Error::param("TI needs beta >= 0 and at least one node"));
    }
    if beta == 0.0 {
        return Ok(Vec::new());
    }
    let panels: Vec<(f64, f64, usize)> = if beta > 2.0 && count >= 2 {
        vec![(0.0, 2.0, count - count / 2), (2.0, beta, count / 2)]
    } else {
        vec![(0.0, beta, count)]
    };
    let mut out = Vec::with_capacity(count);
    for (a, b, k) in panels {
        let rule = GaussLegendre::new(k);
        out.extend(rule.nodes_weights(a, b));
    }
    Ok(out)
}

/// Chain settings for each TI node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiSettings {
    pub nodes: usize,
    pub chains: usize,
    pub burnin: u64,
    pub steps: u64,
    pub stride: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub n: usize,
    pub beta: f64,
    pub lambda: f64,
    pub beta_grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub mean_energy_se: Vec<f64>,
    pub log_z: f64,
    pub log_z_se: f64,
    /// `2N log N` plus `N` times the per-particle prediction (β ≥ 2 only).
    pub prediction: Option<f64>,
    pub omega: Option<f64>,
    /// Per node: every chain passed the stationarity diagnostic.
    pub node_stationary: Vec<bool>,
    pub converged: bool,
}

impl FreeEnergyEstimate {
    /// `(log Z - 2N log N)/N`.
    pub fn per_particle(&self) -> f64 {
        let n = self.n as f64;
        (self.log_z - 2.0 * n * n.ln()) / n
    }

    pub fn per_particle_se(&self) -> f64 {
        self.log_z_se / self.n as f64
    }
}

/// `log Z(β) = 2N log N - ∫_0^β E_{β'}[F_λ] dβ'`, one set of chains per node.
/// Nodes above β' = 2 start paired, the rest uniform.
pub fn free_energy_ti(n: usize, beta: f64, lambda: f64, settings: &TiSettings) -> Result<FreeEnergyEstimate> {
    let nodes = ti_nodes(beta, settings.nodes)?;
    let schedule = Schedule::new(settings.burnin, settings.steps, settings.stride)?;
    let per_node = nodes
        .iter()
        .enumerate()
        .map(|(k, &(b, _))| {
            let params = ChainParams {
                n,
                beta: b,
                lambda,
                schedule,
                init: if b > 2.0 { InitKind::Paired } else { InitKind::Uniform },
                moves: MoveSpec::default(),
                seed: settings.seed.wrapping_add(k as u64),
            };
            let traces = params.run_chains(settings.chains, &[])?;
            let series: Vec<Vec<f64>> = traces.iter().map(|t| t.energies()).collect();
            let (m, se) = pooled_mean_se(&series, 20);
            let ok = series.iter().all(|s| stationarity(s, 3.0).stationary);
            Ok((m, se, ok))
        })
        .collect::<Result<Vec<_>>>()?;
    let nf = n as f64;
    let base = 2.0 * nf * nf.ln();
    let integral: f64 = nodes.iter().zip(&per_node).map(|(&(_, w), r)| w * r.0).sum();
    let var: f64 = nodes.iter().zip(&per_node).map(|(&(_, w), r)| (w * r.1).powi(2)).sum();
    let (prediction, omega) = if beta >= 2.0 {
        (
            Some(base + nf * free_energy_prediction_per_particle(beta, lambda)?),
            Some(omega_lambda(beta, lambda)?),
        )
    } else {
        (None, None)
    };
    Ok(FreeEnergyEstimate {
        n,
        beta,
        lambda,
        beta_grid: nodes.iter().map(|x| x.0).collect(),
        weights: nodes.iter().map(|x| x.1).collect(),
        mean_energy: per_node.iter().map(|r| r.0).collect(),
        mean_energy_se: per_node.iter().map(|r| r.1).collect(),
        log_z: base - integral,
        log_z_se: var.sqrt(),
        prediction,
        omega,
        node_stationary: per_node.iter().map(|r| r.2).collect(),
        converged: per_node.iter().all(|r| r.2),
    })
}

/// Annealed importance sampling estimate of `log Z(β)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealedEstimate {
    pub log_z: f64,
    pub se: f64,
    pub effective_runs: f64,
    pub log_weights: Vec<f64>,
}

/// Each run starts from an exact β = 0 sample (iid uniform), then alternates
/// weight updates `-(β_{t+1} - β_t) F` and `sweeps` MH steps per point at
/// `β_{t+1}` along a linear ladder of `temperatures` rungs.
pub fn annealed_log_z(
    n: usize,
    beta: f64,
    lambda: f64,
    runs: usize,
    temperatures: usize,
    sweeps: usize,
    seed: u64,
) -> Result<AnnealedEstimate> {
    if runs < 2 || temperatures == 0 {
        return Err(Error::param("AIS needs at least two runs and one temperature"));
    }
    let moves = MoveSpec::default();
    let log_weights = par::map_indexed(runs, |k| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let config = SignedConfiguration::uniform(n, &mut rng)?;
        let mut state = ChainState::with_rng(config, lambda, 0.0, moves.clone(), rng)?;
        let mut w = 0.0;
        let mut prev = 0.0;
        for t in 1..=temperatures {
            let next = beta * t as f64 / temperatures as f64;
            w -= (next - prev) * state.energy();
            state.set_beta(next)?;
            for _ in 0..sweeps * 2 * n {
                state.step();
            }
            prev = next;
        }
        state.check_energy_cache()?;
        Ok(w)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let nf = n as f64;
    let log_z = 2.0 * nf * nf.ln() + stats::log_mean_exp(&log_weights);
    let se = stats::jackknife(&log_weights, runs.min(32), stats::log_mean_exp);
    Ok(AnnealedEstimate {
        log_z,
        se,
        effective_runs: stats::effective_sample_size(&log_weights),
        log_weights,
    })
}
