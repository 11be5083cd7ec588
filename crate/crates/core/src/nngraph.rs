//! Nearest-neighbor digraph and its decomposition into 2-cycles with trees.
//!
//! Every point `i` sends an edge to its nearest neighbor `φ1(i)`. Ties go to
//! the lowest index, which rules out cycles longer than two, so each weakly
//! connected component holds exactly one 2-cycle with trees hanging off it.
//! A 2-cycle with nothing attached is an isolated pair; if its charges are
//! opposite it is an isolated dipole.

use crate::config::SignedConfiguration;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::io::fmt_f64;
use serde::{Deserialize, Serialize};

/// Below this many points neighbor search is brute force.
pub const BRUTE_FORCE_BELOW: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDecomposition {
    pub lambda: f64,
    pub charges: Vec<f64>,
    /// Nearest neighbor of each point.
    pub phi1: Vec<usize>,
    /// Second nearest neighbor; `None` when there are only two points.
    pub phi2: Vec<Option<usize>>,
    /// Distance to the nearest and second nearest neighbor.
    pub nn_dist: Vec<f64>,
    pub nn2_dist: Vec<f64>,
    /// `(¼ nn_dist) ∨ λ` and `(¼ nn2_dist) ∨ λ`; `r2` is `+∞` for two points.
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    /// Component label of each point; component `k` contains `two_cycles[k]`.
    pub component: Vec<usize>,
    /// 2-cycles as `(m, m')` with `m < m'`.
    pub two_cycles: Vec<(usize, usize)>,
    /// Points belonging to isolated 2-cycles.
    pub i_pair: Vec<usize>,
    /// Points belonging to isolated opposite-sign 2-cycles.
    pub i_dip: Vec<usize>,
    /// Members of isolated dipoles whose pair's second neighbors all lie in `i_pair`.
    pub twice_isolated_dips: Vec<usize>,
    /// `D_i = d_i + d_{φ1(i)}`.
    pub d_sums: Vec<f64>,
    pub in_degree: Vec<usize>,
}

/// Nearest and second-nearest neighbors of one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbors {
    pub first: usize,
    pub first_dist2: f64,
    pub second: Option<usize>,
    pub second_dist2: f64,
}

#[inline]
fn better(d2: f64, j: usize, best_d2: f64, best_j: usize) -> bool {
    d2 < best_d2 || (d2 == best_d2 && j < best_j)
}

struct TwoBest {
    first: (f64, usize),
    second: (f64, usize),
}

impl TwoBest {
    fn new() -> Self {
        Self {
            first: (f64::INFINITY, usize::MAX),
            second: (f64::INFINITY, usize::MAX),
        }
    }

    #[inline]
    fn offer(&mut self, d2: f64, j: usize) {
        if better(d2, j, self.first.0, self.first.1) {
            self.second = self.first;
            self.first = (d2, j);
        } else if better(d2, j, self.second.0, self.second.1) {
            self.second = (d2, j);
        }
    }

    fn finish(self) -> Neighbors {
        Neighbors {
            first: self.first.1,
            first_dist2: self.first.0,
            second: (self.second.1 != usize::MAX).then_some(self.second.1),
            second_dist2: self.second.0,
        }
    }
}

/// Exact two nearest neighbors of every point by exhaustive search.
pub fn neighbors_brute_force(points: &[Point]) -> Vec<Neighbors> {
    (0..points.len())
        .map(|i| {
            let mut best = TwoBest::new();
            for (j, &p) in points.iter().enumerate() {
                if j != i {
                    best.offer(points[i].dist2(p), j);
                }
            }
            best.finish()
        })
        .collect()
}

/// Exact two nearest neighbors through a uniform cell list with ring search.
///
/// Cells have side `extent/√m`, so a cell holds one point on average for
/// uniform data. Rings are widened until the second-best distance is smaller
/// than the distance to any unvisited ring, which keeps the search exact.
pub fn neighbors_cell_list(points: &[Point]) -> Vec<Neighbors> {
    let m = points.len();
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let extent = (hi.x - lo.x).max(hi.y - lo.y).max(f64::MIN_POSITIVE);
    let per_side = ((m as f64).sqrt().ceil() as usize).max(1);
    let h = extent / per_side as f64;
    let cell_of = |p: Point| -> (usize, usize) {
        let cx = (((p.x - lo.x) / h) as usize).min(per_side - 1);
        let cy = (((p.y - lo.y) / h) as usize).min(per_side - 1);
        (cx, cy)
    };
    // Counting sort of point indices by cell.
    let mut starts = vec![0usize; per_side * per_side + 1];
    let cells: Vec<usize> = points
        .iter()
        .map(|&p| {
            let (cx, cy) = cell_of(p);
            cy * per_side + cx
        })
        .collect();
    for &c in &cells {
        starts[c + 1] += 1;
    }
    for k in 0..per_side * per_side {
        starts[k + 1] += starts[k];
    }
    let mut fill = starts.clone();
    let mut order = vec![0usize; m];
    for (i, &c) in cells.iter().enumerate() {
        order[fill[c]] = i;
        fill[c] += 1;
    }

    (0..m)
        .map(|i| {
            let p = points[i];
            let (cx, cy) = cell_of(p);
            let mut best = TwoBest::new();
            let mut ring = 0usize;
            loop {
                let x0 = cx as isize - ring as isize;
                let x1 = cx as isize + ring as isize;
                let y0 = cy as isize - ring as isize;
                let y1 = cy as isize + ring as isize;
                let mut visit = |gx: isize, gy: isize| {
                    if gx < 0 || gy < 0 || gx >= per_side as isize || gy >= per_side as isize {
                        return;
                    }
                    let c = gy as usize * per_side + gx as usize;
                    for &j in &order[starts[c]..starts[c + 1]] {
                        if j != i {
                            best.offer(p.dist2(points[j]), j);
                        }
                    }
                };
                if ring == 0 {
                    visit(cx as isize, cy as isize);
                } else {
                    for gx in x0..=x1 {
                        visit(gx, y0);
                        visit(gx, y1);
                    }
                    for gy in y0 + 1..y1 {
                        visit(x0, gy);
                        visit(x1, gy);
                    }
                }
                // Anything beyond this ring is at least `ring * h` away.
                let reach = ring as f64 * h;
                if best.second.0 < reach * reach || ring >= per_side {
                    break;
                }
                ring += 1;
            }
            best.finish()
        })
        .collect()
}

pub fn two_nearest_neighbors(points: &[Point]) -> Vec<Neighbors> {
    if points.len() < BRUTE_FORCE_BELOW {
        neighbors_brute_force(points)
    } else {
        neighbors_cell_list(points)
    }
}

/// `½ min_{j≠i} |z_j - z_i|`, the pairing radius used by the upper bound.
pub fn r_half(points: &[Point]) -> Vec<f64> {
    two_nearest_neighbors(points)
        .iter()
        .map(|n| 0.5 * n.first_dist2.sqrt())
        .collect()
}

/// `¼ min_{j≠i} |z_j - z_i|` without the `λ` clamp.
pub fn r_quarter(points: &[Point]) -> Vec<f64> {
    two_nearest_neighbors(points)
        .iter()
        .map(|n| 0.25 * n.first_dist2.sqrt())
        .collect()
}

/// Checks that `phi` has no fixed points and only 2-cycles; returns them as
/// `(m, m')` with `m < m'`, ordered by `m`.
pub fn two_cycles_of(phi: &[usize]) -> Result<Vec<(usize, usize)>> {
    let p = phi.len();
    if let Some(i) = (0..p).find(|&i| phi[i] >= p || phi[i] == i) {
        return Err(Error::InvalidGraph(format!("vertex {i} maps to {}", phi[i])));
    }
    // Iterating φ p times from any vertex lands on its cycle.
    let mut state = vec![0u8; p]; // 0 unseen, 1 on current path, 2 done
    let mut cycles = Vec::new();
    for start in 0..p {
        if state[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = phi[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&x| x == v).unwrap();
            let cycle = &path[pos..];
            if cycle.len() != 2 {
                return Err(Error::InvalidGraph(format!(
                    "cycle of length {} through vertex {v}",
                    cycle.len()
                )));
            }
            cycles.push((cycle[0].min(cycle[1]), cycle[0].max(cycle[1])));
        }
        for &x in &path {
            state[x] = 2;
        }
    }
    cycles.sort_unstable();
    Ok(cycles)
}

/// Component label of every vertex, with component `k` holding `cycles[k]`.
pub fn components_of(phi: &[usize], cycles: &[(usize, usize)]) -> Vec<usize> {
    let mut comp = vec![usize::MAX; phi.len()];
    for (k, &(a, b)) in cycles.iter().enumerate() {
        comp[a] = k;
        comp[b] = k;
    }
    let mut path = Vec::new();
    for start in 0..phi.len() {
        let mut v = start;
        while comp[v] == usize::MAX {
            path.push(v);
            v = phi[v];
        }
        let label = comp[v];
        for x in path.drain(..) {
            comp[x] = label;
        }
    }
    comp
}

impl GraphDecomposition {
    /// Builds the decomposition for arbitrary points and charges.
    pub fn from_points(points: &[Point], charges: &[f64], lambda: f64) -> Result<Self> {
        let m = points.len();
        if m < 2 {
            return Err(Error::param("need at least two points"));
        }
        if charges.len() != m {
            return Err(Error::param("one charge per point required"));
        }
        if !(lambda > 0.0) {
            return Err(Error::param(format!("lambda must be positive (got {lambda})")));
        }
        let nb = two_nearest_neighbors(points);
        let phi1: Vec<usize> = nb.iter().map(|n| n.first).collect();
        let phi2: Vec<Option<usize>> = nb.iter().map(|n| n.second).collect();
        let nn_dist: Vec<f64> = nb.iter().map(|n| n.first_dist2.sqrt()).collect();
        let nn2_dist: Vec<f64> = nb.iter().map(|n| n.second_dist2.sqrt()).collect();
        let r1 = nn_dist.iter().map(|d| (0.25 * d).max(lambda)).collect();
        let r2 = nn2_dist.iter().map(|d| (0.25 * d).max(lambda)).collect();

        let two_cycles = two_cycles_of(&phi1)?;
        let component = components_of(&phi1, &two_cycles);
        let mut sizes = vec![0usize; two_cycles.len()];
        for &c in &component {
            sizes[c] += 1;
        }
        let mut in_degree = vec![0usize; m];
        for &j in &phi1 {
            in_degree[j] += 1;
        }

        let mut i_pair = Vec::new();
        let mut i_dip = Vec::new();
        for (k, &(a, b)) in two_cycles.iter().enumerate() {
            if sizes[k] == 2 {
                i_pair.extend([a, b]);
                if charges[a] * charges[b] < 0.0 {
                    i_dip.extend([a, b]);
                }
            }
        }
        i_pair.sort_unstable();
        i_dip.sort_unstable();
        let mut in_pair = vec![false; m];
        for &i in &i_pair {
            in_pair[i] = true;
        }
        let second_in_pair = |i: usize| phi2[i].is_some_and(|j| in_pair[j]);
        let mut twice_isolated_dips: Vec<usize> = i_dip
            .iter()
            .copied()
            .filter(|&i| second_in_pair(i) && second_in_pair(phi1[i]))
            .collect();
        twice_isolated_dips.sort_unstable();
        let d_sums = (0..m).map(|i| charges[i] + charges[phi1[i]]).collect();

        Ok(Self {
            lambda,
            charges: charges.to_vec(),
            phi1,
            phi2,
            nn_dist,
            nn2_dist,
            r1,
            r2,
            component,
            two_cycles,
            i_pair,
            i_dip,
            twice_isolated_dips,
            d_sums,
            in_degree,
        })
    }

    pub fn len(&self) -> usize {
        self.phi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi1.is_empty()
    }

    /// Number of components `K`.
    pub fn k_components(&self) -> usize {
        self.two_cycles.len()
    }

    /// Number of isolated pairs, `|I^pair|/2`.
    pub fn n_isolated_pairs(&self) -> usize {
        self.i_pair.len() / 2
    }

    /// Number of isolated dipoles, `|I^dip|/2`.
    pub fn n_isolated_dipoles(&self) -> usize {
        self.i_dip.len() / 2
    }

    pub fn n_twice_isolated_dipoles(&self) -> usize {
        self.twice_isolated_dips.len() / 2
    }

    #[inline]
    pub fn is_in_two_cycle(&self, i: usize) -> bool {
        self.phi1[self.phi1[i]] == i
    }

    /// `r2(i)`, `+∞` when the point has no second neighbor.
    pub fn r2_of(&self, i: usize) -> f64 {
        self.r2[i]
    }

    pub fn max_in_degree(&self) -> usize {
        self.in_degree.iter().copied().max().unwrap_or(0)
    }

    /// Largest number of points sharing the same second nearest neighbor.
    pub fn max_second_in_degree(&self) -> usize {
        let mut deg = vec![0usize; self.len()];
        for j in self.phi2.iter().flatten() {
            deg[*j] += 1;
        }
        deg.into_iter().max().unwrap_or(0)
    }

    /// Isolated dipoles as `(m, m')` pairs.
    pub fn isolated_dipoles(&self) -> Vec<(usize, usize)> {
        self.i_dip
            .iter()
            .copied()
            .filter(|&i| i < self.phi1[i])
            .map(|i| (i, self.phi1[i]))
            .collect()
    }

    /// Checks the one-2-cycle-per-component structure and the forest shape.
    pub fn validate_structure(&self) -> Result<()> {
        let cycles = two_cycles_of(&self.phi1)?;
        if cycles != self.two_cycles {
            return Err(Error::InvalidGraph("stored 2-cycles do not match φ1".into()));
        }
        for i in 0..self.len() {
            if self.component[i] != self.component[self.phi1[i]] {
                return Err(Error::InvalidGraph(format!("edge from {i} crosses components")));
            }
        }
        Ok(())
    }

    /// Edge list with header `src,dst,is_two_cycle,component_id`.
    pub fn edge_list_csv(&self) -> String {
        let mut out = String::from("src,dst,is_two_cycle,component_id\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{i},{},{},{}\n",
                self.phi1[i],
                u8::from(self.is_in_two_cycle(i)),
                self.component[i]
            ));
        }
        out
    }

    /// Per-point radii as CSV, for inspection.
    pub fn radii_csv(&self) -> String {
        let mut out = String::from("idx,r1,r2\n");
        for i in 0..self.len() {
            out.push_str(&format!("{i},{},{}\n", fmt_f64(self.r1[i]), fmt_f64(self.r2[i])));
        }
        out
    }
}

pub fn build_decomposition(config: &SignedConfiguration, lambda: f64) -> Result<GraphDecomposition> {
    GraphDecomposition::from_points(config.positions(), &config.charges(), lambda)
}

/// Per-point Gunson–Panta coordinates.
///
/// `u_i = z_i - z_{φ1(i)}` except for the larger index `m'` of each 2-cycle,
/// which keeps its absolute position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GunsonPantaImage {
    pub u: Vec<Point>,
}

pub fn gunson_panta_forward(points: &[Point], dec: &GraphDecomposition) -> GunsonPantaImage {
    let mut anchor = vec![false; points.len()];
    for &(_, b) in &dec.two_cycles {
        anchor[b] = true;
    }
    let u = (0..points.len())
        .map(|i| {
            if anchor[i] {
                points[i]
            } else {
                points[i] - points[dec.phi1[i]]
            }
        })
        .collect();
    GunsonPantaImage { u }
}

/// Rebuilds positions from Gunson–Panta coordinates and the digraph `phi1`.
pub fn gunson_panta_inverse(image: &GunsonPantaImage, phi1: &[usize]) -> Result<Vec<Point>> {
    if image.u.len() != phi1.len() {
        return Err(Error::InvalidGraph("image and graph sizes differ".into()));
    }
    let cycles = two_cycles_of(phi1)?;
    let mut z: Vec<Option<Point>> = vec![None; phi1.len()];
    for &(a, b) in &cycles {
        z[b] = Some(image.u[b]);
        z[a] = Some(image.u[a] + image.u[b]);
    }
    let mut path = Vec::new();
    for start in 0..phi1.len() {
        let mut v = start;
        while z[v].is_none() {
            path.push(v);
            v = phi1[v];
        }
        let mut base = z[v].unwrap();
        while let Some(x) = path.pop() {
            base = image.u[x] + base;
            z[x] = Some(base);
        }
    }
    Ok(z.into_iter().map(Option::unwrap).collect())
}
