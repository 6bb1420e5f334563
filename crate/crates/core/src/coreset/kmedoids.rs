//! k-medoids: greedy BUILD followed by eager swap local search.
//!
//! BUILD adds, one at a time, the point that lowers the objective the most;
//! the gains are maintained incrementally, touching only the points whose
//! nearest medoid changed. The swap phase scans candidates in ascending index
//! order; for each candidate the objective change of replacing every medoid is
//! evaluated in one `O(n)` pass using cached nearest/second-nearest distances,
//! and the best strictly improving replacement (lowest position on ties) is
//! applied immediately. The search stops after a full scan without
//! improvement, so the result admits no improving single swap.

use super::{coreset_from_medoids, Coreset, DistMatrix};

/// Relative slack below which an objective change does not count as an
/// improvement.
const SWAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct KMedoidsRun {
    pub coreset: Coreset,
    pub build_objective: f64,
    /// Objective after BUILD and after every applied swap.
    pub trace: Vec<f64>,
}

pub fn kmedoids(dist: &DistMatrix, k: usize) -> Coreset {
    kmedoids_detailed(dist, k).coreset
}

pub fn kmedoids_detailed(dist: &DistMatrix, k: usize) -> KMedoidsRun {
    let n = dist.n();
    assert!(k >= 1 && k <= n, "need 1 <= k <= n (k={k}, n={n})");
    let mut medoids = build(dist, k);
    let build_objective = super::kmedoids_objective(dist, &medoids);
    let mut trace = vec![build_objective];
    if k < n {
        if k == 1 {
            swap_single(dist, &mut medoids, &mut trace);
        } else {
            Swapper::new(dist, &medoids).run(&mut medoids, &mut trace);
        }
    }
    KMedoidsRun {
        coreset: coreset_from_medoids(dist, medoids),
        build_objective,
        trace,
    }
}

fn build(dist: &DistMatrix, k: usize) -> Vec<usize> {
    let n = dist.n();
    if k == n {
        return (0..n).collect();
    }
    let first = (0..n)
        .map(|c| (c, dist.row(c).iter().sum::<f64>()))
        .fold((0, f64::INFINITY), |best, (c, s)| if s < best.1 { (c, s) } else { best })
        .0;
    let mut medoids = vec![first];
    let mut is_medoid = vec![false; n];
    is_medoid[first] = true;
    let mut near: Vec<f64> = dist.row(first).to_vec();
    // gain[c] = sum_j max(0, near[j] - d(c, j))
    let mut gain: Vec<f64> = (0..n)
        .map(|c| {
            dist.row(c)
                .iter()
                .zip(&near)
                .map(|(d, nj)| (nj - d).max(0.0))
                .sum()
        })
        .collect();

    while medoids.len() < k {
        let mut best = usize::MAX;
        for c in 0..n {
            if !is_medoid[c] && (best == usize::MAX || gain[c] > gain[best]) {
                best = c;
            }
        }
        medoids.push(best);
        is_medoid[best] = true;
        let new_row = dist.row(best);
        for j in 0..n {
            let (old, new) = (near[j], new_row[j]);
            if new < old {
                for (g, d) in gain.iter_mut().zip(dist.row(j)) {
                    *g -= (old - d).max(0.0) - (new - d).max(0.0);
                }
                near[j] = new;
            }
        }
    }
    medoids
}

fn swap_single(dist: &DistMatrix, medoids: &mut [usize], trace: &mut Vec<f64>) {
    let n = dist.n();
    let mut cost = *trace.last().unwrap();
    loop {
        let mut improved = false;
        for x in 0..n {
            if x == medoids[0] {
                continue;
            }
            let c: f64 = dist.row(x).iter().sum();
            if c < cost - SWAP_TOL * cost {
                medoids[0] = x;
                cost = c;
                trace.push(c);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}

struct Swapper<'a> {
    dist: &'a DistMatrix,
    is_medoid: Vec<bool>,
    near_pos: Vec<usize>,
    near_d: Vec<f64>,
    second_pos: Vec<usize>,
    second_d: Vec<f64>,
}

impl<'a> Swapper<'a> {
    fn new(dist: &'a DistMatrix, medoids: &[usize]) -> Self {
        let n = dist.n();
        let mut s = Self {
            dist,
            is_medoid: vec![false; n],
            near_pos: vec![0; n],
            near_d: vec![0.0; n],
            second_pos: vec![0; n],
            second_d: vec![0.0; n],
        };
        for &m in medoids {
            s.is_medoid[m] = true;
        }
        for j in 0..n {
            let (np, nd) = s.closest(medoids, j, usize::MAX);
            s.near_pos[j] = np;
            s.near_d[j] = nd;
            let (sp, sd) = s.closest(medoids, j, np);
            s.second_pos[j] = sp;
            s.second_d[j] = sd;
        }
        s
    }

    /// Nearest medoid position to `j`, skipping position `skip`.
    fn closest(&self, medoids: &[usize], j: usize, skip: usize) -> (usize, f64) {
        let row = self.dist.row(j);
        let mut best = (usize::MAX, f64::INFINITY);
        for (p, &m) in medoids.iter().enumerate() {
            if p != skip && row[m] < best.1 {
                best = (p, row[m]);
            }
        }
        best
    }

    fn objective(&self) -> f64 {
        self.near_d.iter().sum()
    }

    fn run(&mut self, medoids: &mut [usize], trace: &mut Vec<f64>) {
        let n = self.dist.n();
        let k = medoids.len();
        let mut removal = vec![0.0; k];
        let mut delta = vec![0.0; k];
        let mut cost = self.objective();
        self.removal_loss(&mut removal);
        loop {
            let mut improved = false;
            for x in 0..n {
                if self.is_medoid[x] {
                    continue;
                }
                delta.copy_from_slice(&removal);
                let mut shared = 0.0;
                for (j, &dxj) in self.dist.row(x).iter().enumerate() {
                    let (nd, sd) = (self.near_d[j], self.second_d[j]);
                    if dxj < nd {
                        shared += dxj - nd;
                        delta[self.near_pos[j]] += nd - sd;
                    } else if dxj < sd {
                        delta[self.near_pos[j]] += dxj - sd;
                    }
                }
                let mut best = 0;
                for p in 1..k {
                    if delta[p] < delta[best] {
                        best = p;
                    }
                }
                let change = delta[best] + shared;
                if change < -SWAP_TOL * cost {
                    self.apply(medoids, best, x);
                    cost = self.objective();
                    trace.push(cost);
                    self.removal_loss(&mut removal);
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
    }

    /// Objective increase from deleting each medoid with nothing added.
    fn removal_loss(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.dist.n() {
            out[self.near_pos[j]] += self.second_d[j] - self.near_d[j];
        }
    }

    fn apply(&mut self, medoids: &mut [usize], pos: usize, x: usize) {
        self.is_medoid[medoids[pos]] = false;
        self.is_medoid[x] = true;
        medoids[pos] = x;
        for j in 0..self.dist.n() {
            let dxj = self.dist.get(x, j);
            if self.near_pos[j] == pos {
                if dxj < self.second_d[j] {
                    self.near_d[j] = dxj;
                } else {
                    self.near_pos[j] = self.second_pos[j];
                    self.near_d[j] = self.second_d[j];
                    let (sp, sd) = self.closest(medoids, j, self.near_pos[j]);
                    self.second_pos[j] = sp;
                    self.second_d[j] = sd;
                }
            } else if dxj < self.near_d[j] {
                self.second_pos[j] = self.near_pos[j];
                self.second_d[j] = self.near_d[j];
                self.near_pos[j] = pos;
                self.near_d[j] = dxj;
            } else if self.second_pos[j] == pos {
                let (sp, sd) = self.closest(medoids, j, self.near_pos[j]);
                self.second_pos[j] = sp;
                self.second_d[j] = sd;
            } else if dxj < self.second_d[j] {
                self.second_pos[j] = pos;
                self.second_d[j] = dxj;
            }
        }
    }
}
