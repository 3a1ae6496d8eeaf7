//! Brute-force reference for the ε-SVR dual: accelerated projected gradient
//! on the full `2n` problem, with the projection onto
//! `{0 ≤ x ≤ u, yᵀx = 0}` found by bisection on the multiplier.

pub struct Qp {
    /// Dense `2n × 2n` Hessian.
    pub q: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Qp {
    /// Weighted ε-SVR dual in `(α, α*)` coordinates.
    pub fn epsilon_svr(kernel: &[Vec<f64>], targets: &[f64], epsilon: f64, bounds: &[f64]) -> Self {
        let n = targets.len();
        let y: Vec<f64> = (0..2 * n).map(|t| if t < n { 1.0 } else { -1.0 }).collect();
        let q = (0..2 * n).map(|s| (0..2 * n).map(|t| y[s] * y[t] * kernel[s % n][t % n]).collect()).collect();
        let p = (0..2 * n).map(|t| if t < n { epsilon - targets[t] } else { epsilon + targets[t - n] }).collect();
        let upper = (0..2 * n).map(|t| bounds[t % n]).collect();
        Self { q, p, y, upper }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (s, row) in self.q.iter().enumerate() {
            let qx: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            total += 0.5 * x[s] * qx + self.p[s] * x[s];
        }
        total
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.q.iter().zip(&self.p).map(|(row, p)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + p).collect()
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let at = |nu: f64| -> Vec<f64> {
            v.iter().zip(&self.y).zip(&self.upper).map(|((vi, yi), ui)| (vi - nu * yi).clamp(0.0, *ui)).collect()
        };
        let balance = |x: &[f64]| x.iter().zip(&self.y).map(|(a, b)| a * b).sum::<f64>();
        let span =
            v.iter().map(|x| x.abs()).fold(0.0, f64::max) + self.upper.iter().fold(0.0, |a: f64, b| a.max(*b)) + 1.0;
        let (mut lo, mut hi) = (-span, span);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if balance(&at(mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    }

    /// FISTA with gradient restarts.
    pub fn solve(&self, iterations: usize) -> Vec<f64> {
        let m = self.p.len();
        let lipschitz = self.q.iter().flatten().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let mut x = vec![0.0; m];
        let mut z = x.clone();
        let mut t = 1.0f64;
        for _ in 0..iterations {
            let g = self.gradient(&z);
            let step: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - gi / lipschitz).collect();
            let next = self.project(&step);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let moved: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
            // restart momentum when it points uphill
            let uphill: f64 = g.iter().zip(next.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if uphill > 0.0 {
                t = 1.0;
                z = next.clone();
            } else {
                let beta = (t - 1.0) / t_next;
                z = next.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
                t = t_next;
            }
            x = next;
            if moved < 1e-12 {
                break;
            }
        }
        x
    }
}
