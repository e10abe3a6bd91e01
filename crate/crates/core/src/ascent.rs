//! Monotone projected gradient ascent with Barzilai-Borwein steps and
//! Armijo backtracking, plus the two projections the solvers need.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    pub max_iter: usize,
    /// First trial step, as a fraction of `scale / ||grad||_inf`.
    pub initial_step: f64,
    /// Characteristic size of the feasible set (budget, box width).
    pub scale: f64,
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self { max_iter: 500, initial_step: 0.1, scale: 1.0, f_tol: 1e-13, x_tol: 1e-13 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

const ARMIJO: f64 = 1e-4;

/// Maximizes `f` over the set defined by `project`, starting at the feasible
/// `x0`. `f` may return a non-finite value to mark points outside its
/// domain; such trial points are rejected. The returned value never falls
/// below `f(x0)`.
pub fn projected_ascent<F, G, P>(x0: Vec<f64>, f: F, grad: G, project: P, opts: &AscentOptions) -> AscentResult
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&mut [f64]),
{
    let mut x = x0;
    let mut fx = f(&x);
    let mut g = grad(&x);
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut step = if gmax > 0.0 { opts.initial_step * opts.scale / gmax } else { opts.initial_step };
    let mut iterations = 0;
    let mut trial = vec![0.0; x.len()];

    while iterations < opts.max_iter {
        iterations += 1;
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..80 {
            for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                *t = xi + step * gi;
            }
            project(&mut trial);
            let dir_gain: f64 = trial.iter().zip(&x).zip(&g).map(|((t, xi), gi)| (t - xi) * gi).sum();
            if dir_gain <= 0.0 {
                // projected step is stationary
                break;
            }
            f_new = f(&trial);
            if f_new.is_finite() && f_new >= fx + ARMIJO * dir_gain {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        let dx = trial.iter().zip(&x).fold(0.0f64, |m, (t, xi)| m.max((t - xi).abs()));
        let improvement = f_new - fx;
        let g_new = grad(&trial);
        // BB1 step for ascent: s's / -(s'y)
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..x.len() {
            let s = trial[i] - x[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        step = if sy < 0.0 { ss / -sy } else { step * 4.0 };
        std::mem::swap(&mut x, &mut trial);
        fx = f_new;
        g = g_new;
        if dx <= opts.x_tol * opts.scale.max(1e-300) || improvement <= opts.f_tol * (1.0 + fx.abs()) {
            break;
        }
    }
    AscentResult { x, value: fx, iterations }
}

pub fn project_box(x: &mut [f64], lo: f64, hi: f64) {
    for v in x.iter_mut() {
        *v = v.clamp(lo, hi);
    }
}

/// Euclidean projection onto `{x >= 0, sum x <= budget}`.
pub fn project_capped_simplex(x: &mut [f64], budget: f64) {
    let clipped_sum: f64 = x.iter().map(|v| v.max(0.0)).sum();
    if clipped_sum <= budget {
        for v in x.iter_mut() {
            *v = v.max(0.0);
        }
        return;
    }
    // projection onto {x >= 0, sum x = budget}
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - budget) / (i as f64 + 1.0);
        if *v - t > 0.0 {
            tau = t;
        }
    }
    for v in x.iter_mut() {
        *v = (*v - tau).max(0.0);
    }
}
