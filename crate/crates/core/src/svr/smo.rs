//! Sequential minimal optimization for the weighted ε-SVR dual.
//!
//! Variables are `β = (α, α*)` of length `2n` with signs `y = (+1.., -1..)`.
//! The solver minimizes `½ βᵀQβ + pᵀβ` subject to `yᵀβ = 0` and
//! `0 ≤ β_t ≤ C_t`, where `Q_st = y_s y_t K(s mod n, t mod n)`,
//! `p = (ε - z, ε + z)`. Working pairs are picked with second-order
//! information; no shrinking, so runs are exactly reproducible.

use std::collections::{HashMap, VecDeque};

const TAU: f64 = 1e-12;

/// Kernel column provider. Columns are cached up to a fixed budget.
pub struct KernelCache<'a> {
    kernel: &'a dyn Fn(usize, usize) -> f64,
    n: usize,
    capacity: usize,
    columns: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    pub diag: Vec<f64>,
}

impl<'a> KernelCache<'a> {
    pub fn new(n: usize, kernel: &'a dyn Fn(usize, usize) -> f64, budget_bytes: usize) -> Self {
        let per_col = n.max(1) * std::mem::size_of::<f64>();
        let capacity = (budget_bytes / per_col).max(2);
        let diag = (0..n).map(|i| kernel(i, i)).collect();
        Self { kernel, n, capacity, columns: HashMap::new(), order: VecDeque::new(), diag }
    }

    pub fn column(&mut self, k: usize) -> &[f64] {
        if !self.columns.contains_key(&k) {
            if self.columns.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.columns.remove(&old);
                }
            }
            let col: Vec<f64> = (0..self.n).map(|s| (self.kernel)(s, k)).collect();
            self.columns.insert(k, col);
            self.order.push_back(k);
        }
        &self.columns[&k]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SmoParams {
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct SmoOutcome {
    /// `(α, α*)`, length `2n`.
    pub beta: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    /// Maximal KKT violation `m(β) - M(β)` at exit.
    pub gap: f64,
    pub converged: bool,
}

fn sign(t: usize, n: usize) -> f64 {
    if t < n {
        1.0
    } else {
        -1.0
    }
}

/// Solve with per-sample upper bounds `bounds` (already `C·w`).
pub fn solve(cache: &mut KernelCache<'_>, targets: &[f64], bounds: &[f64], params: SmoParams) -> SmoOutcome {
    let n = targets.len();
    let m = 2 * n;
    let c = |t: usize| bounds[t % n];
    let mut beta = vec![0.0; m];
    // gradient Qβ + p at β = 0
    let mut grad: Vec<f64> =
        (0..m).map(|t| if t < n { params.epsilon - targets[t] } else { params.epsilon + targets[t - n] }).collect();

    let in_up = |t: usize, b: &[f64]| if t < n { b[t] < c(t) } else { b[t] > 0.0 };
    let in_low = |t: usize, b: &[f64]| if t < n { b[t] > 0.0 } else { b[t] < c(t) };

    let mut iterations = 0;
    let mut gap;
    loop {
        // i: most violating in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..m {
            if in_up(t, &beta) {
                let v = -sign(t, n) * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        for t in 0..m {
            if in_low(t, &beta) {
                gmin = gmin.min(-sign(t, n) * grad[t]);
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || gap < params.tolerance {
            break;
        }
        if iterations >= params.max_iter {
            return SmoOutcome { rho: compute_rho(&beta, &grad, n, bounds), beta, iterations, gap, converged: false };
        }
        iterations += 1;

        let ki = i % n;
        let yi = sign(i, n);
        let col_i = cache.column(ki).to_vec();
        let kii = cache.diag[ki];

        // j: largest second-order decrease among violating partners in I_low
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..m {
            if !in_low(t, &beta) {
                continue;
            }
            let b = gmax + sign(t, n) * grad[t];
            if b <= 0.0 {
                continue;
            }
            let kt = t % n;
            let a = (kii + cache.diag[kt] - 2.0 * col_i[kt]).max(TAU);
            let obj = -(b * b) / a;
            if obj < best {
                best = obj;
                j = t;
            }
        }
        if j == usize::MAX {
            break;
        }

        // move along d (d_i = y_i, d_j = -y_j), which keeps yᵀβ fixed
        let kj = j % n;
        let yj = sign(j, n);
        let a = (kii + cache.diag[kj] - 2.0 * col_i[kj]).max(TAU);
        let b = gmax + yj * grad[j];
        let room_i = if yi > 0.0 { c(i) - beta[i] } else { beta[i] };
        let room_j = if yj > 0.0 { beta[j] } else { c(j) - beta[j] };
        let step = (b / a).min(room_i).min(room_j);
        if step <= 0.0 {
            break;
        }
        let old_i = beta[i];
        let old_j = beta[j];
        beta[i] = if step == room_i {
            if yi > 0.0 {
                c(i)
            } else {
                0.0
            }
        } else {
            old_i + step * yi
        };
        beta[j] = if step == room_j {
            if yj > 0.0 {
                0.0
            } else {
                c(j)
            }
        } else {
            old_j - step * yj
        };
        let di = beta[i] - old_i;
        let dj = beta[j] - old_j;

        let col_j = cache.column(kj).to_vec();
        for t in 0..m {
            let yt = sign(t, n);
            let kt = t % n;
            grad[t] += yt * (yi * col_i[kt] * di + yj * col_j[kt] * dj);
        }
    }
    SmoOutcome { rho: compute_rho(&beta, &grad, n, bounds), beta, iterations, gap, converged: true }
}

/// Offset from free variables, or the middle of the feasible interval.
fn compute_rho(beta: &[f64], grad: &[f64], n: usize, bounds: &[f64]) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for (t, (&b, &g)) in beta.iter().zip(grad).enumerate() {
        let y = sign(t, n);
        let yg = y * g;
        let c = bounds[t % n];
        if b >= c {
            if y < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if b <= 0.0 {
            if y > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// `½ βᵀQβ + pᵀβ` evaluated from scratch.
pub fn dual_objective(kernel: &dyn Fn(usize, usize) -> f64, targets: &[f64], epsilon: f64, beta: &[f64]) -> f64 {
    let n = targets.len();
    let coef: Vec<f64> = (0..n).map(|i| beta[i] - beta[i + n]).collect();
    let mut quad = 0.0;
    for s in 0..n {
        for t in 0..n {
            quad += coef[s] * coef[t] * kernel(s, t);
        }
    }
    let lin: f64 = (0..n).map(|i| epsilon * (beta[i] + beta[i + n]) - targets[i] * coef[i]).sum();
    0.5 * quad + lin
}
