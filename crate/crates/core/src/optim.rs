//! Box-constrained quasi-Newton minimisation (projected L-BFGS with Armijo backtracking).

use std::collections::VecDeque;

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop once the infinity norm of the projected gradient falls below this.
    pub pg_tol: f64,
    /// Stop once the relative decrease of the objective falls below this.
    pub f_rel_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { max_iter: 200, memory: 7, pg_tol: 1e-6, f_rel_tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, l), u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*l, *u);
    }
}

/// Minimises `f` over the box `[lower, upper]` starting from `x0`.
///
/// `f` returns the value and gradient, or `None` where the objective is
/// undefined; such points are treated as infinitely bad by the line search.
/// Returns `None` only when the starting point itself cannot be evaluated.
pub fn minimize<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &LbfgsOptions) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return None;
    }
    let mut evaluations = 1;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let pg: Vec<f64> = (0..n).map(|i| if free[i] { g[i] } else { 0.0 }).collect();
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.pg_tol {
            break;
        }

        let mut accepted = None;
        for use_memory in [true, false] {
            if !use_memory && memory.is_empty() {
                continue;
            }
            let mut d = if use_memory { two_loop(&pg, &memory) } else { pg.iter().map(|v| -v).collect() };
            for i in 0..n {
                if !free[i] {
                    d[i] = 0.0;
                }
            }
            if dot(&d, &pg) >= 0.0 {
                d = pg.iter().map(|v| -v).collect();
            }
            let mut t = if memory.is_empty() {
                (1.0 / pg.iter().map(|v| v * v).sum::<f64>().sqrt()).min(1.0)
            } else {
                1.0
            };
            for _ in 0..40 {
                let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                project(&mut xn, lower, upper);
                let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                if step.iter().all(|v| *v == 0.0) {
                    break;
                }
                evaluations += 1;
                if let Some((fnew, gnew)) = f(&xn) {
                    if fnew.is_finite() && fnew <= fx + 1e-4 * dot(&g, &step) {
                        accepted = Some((xn, fnew, gnew, step));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            memory.clear();
        }

        let Some((xn, fnew, gnew, s)) = accepted else { break };
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let rel = (fx - fnew) / fx.abs().max(1.0);
        x = xn;
        fx = fnew;
        g = gnew;
        if rel < opts.f_rel_tol {
            break;
        }
    }
    Some(Minimum { x, f: fx, iterations, evaluations })
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}
