//! Low-complexity CMP against Krum.
//!
//! Krum's selection test is replaced by a single distance budget: `θ̂₁`
//! plus its `M − 1` colluders must sum to no more than `E`, the best benign
//! Krum score, over a chosen subset `α` of `U − 2M − 1` benign models. The
//! mixed problem splits into
//!
//! - P1: for fixed `α`, minimize `‖θ̂₁ − θ*‖²` subject to
//!   `Σ_j α_j ‖θ̂₁ − θ_j‖ + (M − 1)ε − E ≤ 0`, solved through its KKT system;
//! - P2: choose `α`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::models::ModelSpec;
use crate::numkit::{distance_unchecked, project_box, ParamVector, SimRng};

use crate::aggregation::{krum_argmin, krum_scores, ClientUpdate};

use super::{
    collude, known_krum_m, resolve_target, AttackContext, CmpHyper,
    KnowledgeLevel, KrumAttack,
};

/// Residual tolerance used by the attack pipeline.
const PIPELINE_TOL: f64 = 1e-6;
const MAX_OUTER: usize = 200;
const MAX_INNER: usize = 100;
const LAMBDA_CEILING: f64 = 1e8;
const MAX_EXHAUSTIVE_BENIGN: usize = 12;

/// `min_i Σ` of distances from benign model `i` to its `U − M − 2` nearest
/// benign peers.
pub fn compute_e(benign: &[ParamVector], num_compromised: usize, total_clients: usize) -> Result<f64> {
    let b = benign.len();
    let k = total_clients
        .checked_sub(num_compromised + 2)
        .filter(|&k| b >= 1 && k < b)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "benign Krum score needs U - M - 2 <= B - 1 (U = {total_clients}, M = {num_compromised}, B = {b})"
            ))
        })?;
    let dim = benign[0].dim();
    for p in benign {
        check_dim(dim, p.dim())?;
    }
    let mut dists = Vec::with_capacity(b);
    let mut best = f64::INFINITY;
    for (i, p) in benign.iter().enumerate() {
        dists.clear();
        dists.extend(
            benign
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| distance_unchecked(p.as_slice(), q.as_slice())),
        );
        dists.sort_by(f64::total_cmp);
        best = best.min(dists[..k].iter().sum());
    }
    Ok(best)
}

/// Initial `θ̂₁` from the squared-distance relaxation of the budget
/// constraint,
/// `Σ_j ‖θ_j − θ̂₁‖²/2 + (U − 2M − 2)/2 + (M − 1)ε − E ≤ 0`.
///
/// Its boundary is a sphere centred on the benign mean `c = Ξ/B`, with
/// `r² = ‖Ξ‖²/B² − (1/B)Σ‖θ_j‖² − Λ` and
/// `Λ = (U − 2M − 2 + 2(M − 1)ε − 2E)/B`. The result is the point of that
/// sphere nearest `θ*`, or `c` itself when the sphere is empty (`r² < 0`) or
/// `θ* = c`.
pub fn theorem2_init(
    benign: &[ParamVector],
    target: &ParamVector,
    num_compromised: usize,
    total_clients: usize,
    eps: f64,
    e: f64,
) -> Result<ParamVector> {
    let (center, r_sq) = init_sphere(benign, num_compromised, total_clients, eps, e)?;
    check_dim(center.dim(), target.dim())?;
    if r_sq < 0.0 {
        return Ok(center);
    }
    let offset = target.sub(&center)?;
    let dist = offset.norm();
    if dist == 0.0 {
        return Ok(center);
    }
    let mut init = center;
    init.add_scaled(r_sq.sqrt() / dist, &offset)?;
    Ok(init)
}

/// Centre and squared radius of the relaxed-constraint sphere.
fn init_sphere(
    benign: &[ParamVector],
    num_compromised: usize,
    total_clients: usize,
    eps: f64,
    e: f64,
) -> Result<(ParamVector, f64)> {
    let first = benign.first().ok_or(Error::Empty("benign models"))?;
    let b = benign.len() as f64;
    let mut xi = ParamVector::zeros(first.dim());
    for p in benign {
        xi.add_scaled(1.0, p)?;
    }
    let center = xi.scaled(1.0 / b);
    // ‖Ξ‖²/B² − (1/B)Σ‖θ_j‖² = −(1/B)Σ‖θ_j − c‖², evaluated in the stable form.
    let spread = benign
        .iter()
        .map(|p| distance_unchecked(p.as_slice(), center.as_slice()).powi(2))
        .sum::<f64>()
        / b;
    let lambda = sphere_lambda(num_compromised, total_clients, eps, e, benign.len());
    Ok((center, -spread - lambda))
}

fn sphere_lambda(m: usize, u: usize, eps: f64, e: f64, b: usize) -> f64 {
    let slack = u as f64 - 2.0 * m as f64 - 2.0;
    (slack + 2.0 * (m as f64 - 1.0) * eps - 2.0 * e) / b as f64
}

/// P1 inputs shared by the solver and subset selection.
#[derive(Debug, Clone, Copy)]
pub struct P1Problem<'a> {
    pub benign: &'a [ParamVector],
    pub target: &'a ParamVector,
    pub num_compromised: usize,
    pub eps: f64,
    /// Benign Krum-score minimum from [`compute_e`].
    pub e: f64,
}

impl P1Problem<'_> {
    /// `(M − 1)ε − E`, the constant part of the budget constraint.
    fn offset(&self) -> f64 {
        (self.num_compromised as f64 - 1.0) * self.eps - self.e
    }
}

/// Binary subset selector and the scalars of the relaxed constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedConstraint {
    pub alpha: Vec<bool>,
    pub e: f64,
    pub eps: f64,
    /// `Σ_j θ_j` over all benign models.
    pub xi: ParamVector,
    /// `(U − 2M − 2 + 2(M − 1)ε − 2E)/B`.
    pub lambda: f64,
}

impl SimplifiedConstraint {
    pub fn selected(&self) -> Vec<usize> {
        self.alpha
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktState {
    /// Lagrange multiplier `λ ≥ 0`.
    pub multiplier: f64,
    pub iterate: ParamVector,
    /// `‖2(θ̂₁ − θ*) + λ Σ_j α_j (θ̂₁ − θ_j)/‖θ̂₁ − θ_j‖‖`.
    pub stationarity: f64,
    /// `|Σ_j α_j ‖θ̂₁ − θ_j‖ + (M − 1)ε − E|` when active, else its positive part.
    pub constraint: f64,
    pub outer_iterations: usize,
}

impl KktState {
    pub fn objective(&self, target: &ParamVector) -> f64 {
        distance_unchecked(self.iterate.as_slice(), target.as_slice()).powi(2)
    }

    fn converged(&self, tol: f64) -> bool {
        self.stationarity <= tol && self.constraint <= tol
    }
}

/// Solves the KKT system of P1 for the subset `alpha`:
///
/// ```text
/// 2(θ̂₁ − θ*) + λ Σ_j α_j (θ̂₁ − θ_j)/‖θ̂₁ − θ_j‖ = 0
/// Σ_j α_j ‖θ̂₁ − θ_j‖ + (M − 1)ε − E = 0
/// ```
///
/// If `θ*` already satisfies the budget it is returned with `λ = 0`.
/// Otherwise `λ` is bracketed and refined by bisection (with Newton steps
/// taken whenever they land inside the bracket); for each `λ` the
/// stationarity equation is solved by damped Newton from the previous
/// iterate, starting at `init`.
pub fn solve_p1_kkt(alpha: &[bool], problem: &P1Problem<'_>, init: &ParamVector, tol: f64) -> Result<KktState> {
    let state = kkt_search(alpha, problem, init, tol)?;
    if state.converged(tol) {
        Ok(state)
    } else {
        Err(Error::KktNonConvergence {
            stationarity: state.stationarity,
            constraint: state.constraint,
        })
    }
}

fn validate_alpha(alpha: &[bool], problem: &P1Problem<'_>) -> Result<Vec<usize>> {
    check_dim(problem.benign.len(), alpha.len())?;
    let dim = problem.target.dim();
    for p in problem.benign {
        check_dim(dim, p.dim())?;
    }
    let selected: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i]).collect();
    if selected.is_empty() {
        return Err(Error::InvalidArgument("alpha selects no benign model".into()));
    }
    Ok(selected)
}

/// Best KKT state reachable within the iteration budget, converged or not.
fn kkt_search(alpha: &[bool], problem: &P1Problem<'_>, init: &ParamVector, tol: f64) -> Result<KktState> {
    let selected = validate_alpha(alpha, problem)?;
    check_dim(problem.target.dim(), init.dim())?;
    if !init.is_finite() {
        return Err(Error::InvalidArgument("KKT initial point is not finite".into()));
    }
    let points: Vec<&[f64]> = selected.iter().map(|&i| problem.benign[i].as_slice()).collect();
    let target = problem.target.as_slice();
    let offset = problem.offset();
    let budget = |x: &[f64]| points.iter().map(|p| distance_unchecked(x, p)).sum::<f64>() + offset;

    let at_target = budget(target);
    if at_target <= 0.0 {
        return Ok(KktState {
            multiplier: 0.0,
            iterate: problem.target.clone(),
            stationarity: 0.0,
            constraint: 0.0,
            outer_iterations: 0,
        });
    }

    let inner_tol = tol * 1e-2;
    let solver = Stationary::new(&points, target);
    let mut best: Option<KktState> = None;
    let record = |lambda: f64, x: &[f64], outer: usize, best: &mut Option<KktState>| -> KktState {
        let state = KktState {
            multiplier: lambda,
            iterate: ParamVector::from_raw(x.to_vec()),
            stationarity: solver.residual(x, lambda).1,
            constraint: budget(x).abs(),
            outer_iterations: outer,
        };
        let better = match best {
            None => true,
            Some(b) => state.stationarity.max(state.constraint) < b.stationarity.max(b.constraint),
        };
        if better {
            *best = Some(state.clone());
        }
        state
    };

    // Bracket the multiplier: g(λ) = budget(x(λ)) decreases from g(0) > 0.
    let mut x = init.as_slice().to_vec();
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut outer = 0;
    loop {
        outer += 1;
        solver.solve(&mut x, hi, inner_tol);
        let g = budget(&x);
        let state = record(hi, &x, outer, &mut best);
        if state.converged(tol) {
            return Ok(state);
        }
        if g < 0.0 {
            break;
        }
        lo = hi;
        hi *= 4.0;
        if hi > LAMBDA_CEILING {
            // The budget cannot be met: even the geometric median of the
            // selected models violates it.
            return Ok(best.expect("recorded"));
        }
    }

    let mut lambda = 0.5 * (lo + hi);
    while outer < MAX_OUTER {
        outer += 1;
        solver.solve(&mut x, lambda, inner_tol);
        let g = budget(&x);
        let state = record(lambda, &x, outer, &mut best);
        if state.converged(tol) {
            return Ok(state);
        }
        if g > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
        let slope = solver.budget_slope(&x, lambda);
        let newton = lambda - g / slope;
        lambda = if slope < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(best.expect("recorded"))
}

/// Minimizes `h(x) = ‖x − t‖² + λ Σ_j ‖x − p_j‖` for fixed `λ`.
struct Stationary<'a> {
    points: &'a [&'a [f64]],
    target: &'a [f64],
    /// `p_i · p_j`, row-major.
    gram: Vec<f64>,
}

/// Local quantities of `h` at a point.
struct Local {
    /// `1/‖x − p_j‖`, or 0 when `x` coincides with `p_j`.
    inv_dist: Vec<f64>,
    /// `x · p_j`.
    xp: Vec<f64>,
    xx: f64,
    grad: Vec<f64>,
}

const DIST_FLOOR: f64 = 1e-300;
/// Relative distance below which an iterate counts as sitting on a model.
const KINK_RADIUS: f64 = 1e-9;

enum Kink {
    None,
    /// The model itself minimizes `h`.
    Minimizer(Vec<f64>),
    /// A point off the model with smaller `h`.
    Left(Vec<f64>),
}

impl<'a> Stationary<'a> {
    fn new(points: &'a [&'a [f64]], target: &'a [f64]) -> Self {
        let s = points.len();
        let mut gram = vec![0.0; s * s];
        for i in 0..s {
            for j in i..s {
                let g = dot(points[i], points[j]);
                gram[i * s + j] = g;
                gram[j * s + i] = g;
            }
        }
        Stationary { points, target, gram }
    }

    fn objective(&self, x: &[f64], lambda: f64) -> f64 {
        let quad: f64 = x.iter().zip(self.target).map(|(a, b)| (a - b) * (a - b)).sum();
        quad + lambda * self.points.iter().map(|p| distance_unchecked(x, p)).sum::<f64>()
    }

    fn local(&self, x: &[f64], lambda: f64) -> Local {
        let mut grad: Vec<f64> = x.iter().zip(self.target).map(|(a, b)| 2.0 * (a - b)).collect();
        let mut inv_dist = Vec::with_capacity(self.points.len());
        let mut xp = Vec::with_capacity(self.points.len());
        for p in self.points {
            let d = distance_unchecked(x, p);
            let w = if d > DIST_FLOOR { 1.0 / d } else { 0.0 };
            if w > 0.0 {
                for ((g, xi), pi) in grad.iter_mut().zip(x).zip(p.iter()) {
                    *g += lambda * w * (xi - pi);
                }
            }
            inv_dist.push(w);
            xp.push(dot(x, p));
        }
        Local {
            inv_dist,
            xp,
            xx: dot(x, x),
            grad,
        }
    }

    /// Gradient norm of `h`, i.e. the stationarity residual.
    fn residual(&self, x: &[f64], lambda: f64) -> (Local, f64) {
        let local = self.local(x, lambda);
        let norm = dot(&local.grad, &local.grad).sqrt();
        (local, norm)
    }

    /// Solves `H v = rhs` at `x` with `H = aI − Σ_j c_j u_j u_jᵀ`,
    /// `u_j = (x − p_j)/d_j`, `a = 2 + λ Σ_j 1/d_j`, `c_j = λ/d_j`, via the
    /// Woodbury identity. `u_i · u_j` comes from the point Gram matrix.
    fn hessian_solve(&self, x: &[f64], local: &Local, lambda: f64, rhs: &[f64]) -> Option<Vec<f64>> {
        let a = 2.0 + lambda * local.inv_dist.iter().sum::<f64>();
        let mut out: Vec<f64> = rhs.iter().map(|r| r / a).collect();
        let active: Vec<usize> = (0..self.points.len())
            .filter(|&j| local.inv_dist[j] > 0.0 && lambda > 0.0)
            .collect();
        if active.is_empty() {
            return Some(out);
        }
        let n = self.points.len();
        let s = active.len();
        let x_rhs = dot(x, rhs);
        // K = C⁻¹ − UᵀU / a, y = K⁻¹ Uᵀ rhs, v = rhs/a + U y / a².
        let mut k = vec![0.0; s * s];
        let mut y = vec![0.0; s];
        for (r, &i) in active.iter().enumerate() {
            let wi = local.inv_dist[i];
            y[r] = (x_rhs - dot(self.points[i], rhs)) * wi;
            for (c, &j) in active.iter().enumerate() {
                let wj = local.inv_dist[j];
                let uu = (local.xx - local.xp[i] - local.xp[j] + self.gram[i * n + j]) * wi * wj;
                k[r * s + c] = -uu / a;
            }
            k[r * s + r] += 1.0 / (lambda * wi);
        }
        solve_dense(&mut k, &mut y, s)?;
        // U y = x Σ y_j/d_j − Σ y_j p_j/d_j
        let mut sum_w = 0.0;
        for (r, &i) in active.iter().enumerate() {
            let coeff = y[r] * local.inv_dist[i] / (a * a);
            sum_w += coeff;
            for (o, pi) in out.iter_mut().zip(self.points[i].iter()) {
                *o -= coeff * pi;
            }
        }
        for (o, xi) in out.iter_mut().zip(x) {
            *o += sum_w * xi;
        }
        Some(out)
    }

    /// At (numerically) a model `p_j` neither Newton nor the MM step can
    /// move. `p_j` minimizes `h` iff `‖R‖ ≤ λ`, where `R` is the gradient of
    /// the remaining terms there; otherwise `−R` is a descent direction.
    fn leave_kink(&self, x: &[f64], lambda: f64) -> Kink {
        let Some((j, d)) = self
            .points
            .iter()
            .map(|p| distance_unchecked(x, p))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
        else {
            return Kink::None;
        };
        let pj = self.points[j];
        if d > KINK_RADIUS * (1.0 + dot(pj, pj).sqrt()) {
            return Kink::None;
        }
        let mut r: Vec<f64> = pj.iter().zip(self.target).map(|(a, b)| 2.0 * (a - b)).collect();
        for (i, p) in self.points.iter().enumerate() {
            let di = distance_unchecked(pj, p);
            if i != j && di > DIST_FLOOR {
                for ((ri, a), b) in r.iter_mut().zip(pj.iter()).zip(p.iter()) {
                    *ri += lambda * (a - b) / di;
                }
            }
        }
        let norm = dot(&r, &r).sqrt();
        if norm <= lambda {
            return Kink::Minimizer(pj.to_vec());
        }
        let h0 = self.objective(pj, lambda);
        let mut step = 0.5 * (norm - lambda);
        for _ in 0..60 {
            let trial: Vec<f64> = pj.iter().zip(&r).map(|(a, ri)| a - step * ri / norm).collect();
            if self.objective(&trial, lambda) < h0 {
                return Kink::Left(trial);
            }
            step *= 0.5;
        }
        Kink::None
    }

    /// Damped Newton from `x`, falling back to the majorize-minimize
    /// (Weiszfeld-type) step when Newton fails to decrease `h`.
    fn solve(&self, x: &mut Vec<f64>, lambda: f64, tol: f64) {
        let (mut local, mut res) = self.residual(x, lambda);
        for _ in 0..MAX_INNER {
            if res <= tol.max(self.rounding_floor(x, lambda)) {
                return;
            }
            match self.leave_kink(x, lambda) {
                Kink::Minimizer(p) => {
                    *x = p;
                    return;
                }
                Kink::Left(next) => {
                    *x = next;
                    (local, res) = self.residual(x, lambda);
                    continue;
                }
                Kink::None => {}
            }
            let mut moved = false;
            if let Some(step) = self.hessian_solve(x, &local, lambda, &local.grad) {
                // Near the solution `h` stops resolving the decrease; a full
                // step that halves the residual is taken as is.
                let full: Vec<f64> = x.iter().zip(&step).map(|(xi, si)| xi - si).collect();
                let (full_local, full_res) = self.residual(&full, lambda);
                if full_res <= 0.5 * res {
                    *x = full;
                    local = full_local;
                    res = full_res;
                    continue;
                }
                let h0 = self.objective(x, lambda);
                let slope = -dot(&step, &local.grad);
                let mut t = 0.5;
                for _ in 0..30 {
                    let trial: Vec<f64> = x.iter().zip(&step).map(|(xi, si)| xi - t * si).collect();
                    let h = self.objective(&trial, lambda);
                    if h.is_finite() && h <= h0 + 1e-4 * t * slope {
                        *x = trial;
                        moved = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
            if !moved {
                let next = self.mm_step(x, lambda);
                if self.objective(&next, lambda) >= self.objective(x, lambda) {
                    return;
                }
                *x = next;
            }
            (local, res) = self.residual(x, lambda);
        }
    }

    /// Residual level below which the gradient is dominated by rounding.
    fn rounding_floor(&self, x: &[f64], lambda: f64) -> f64 {
        let pull = 2.0 * distance_unchecked(x, self.target);
        64.0 * f64::EPSILON * (pull + lambda * self.points.len() as f64)
    }

    fn mm_step(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        let mut num: Vec<f64> = self.target.iter().map(|t| 2.0 * t).collect();
        let mut den = 2.0;
        for p in self.points {
            let d = distance_unchecked(x, p);
            if d <= DIST_FLOOR {
                return x.to_vec();
            }
            let w = lambda / d;
            for (n, pi) in num.iter_mut().zip(p.iter()) {
                *n += w * pi;
            }
            den += w;
        }
        num.into_iter().map(|n| n / den).collect()
    }

    /// `d/dλ Σ_j ‖x(λ) − p_j‖ = −sᵀ H⁻¹ s` with `s = Σ_j u_j`.
    fn budget_slope(&self, x: &[f64], lambda: f64) -> f64 {
        let local = self.local(x, lambda);
        let mut sum_u = vec![0.0; x.len()];
        for (p, &w) in self.points.iter().zip(&local.inv_dist) {
            for ((s, xi), pi) in sum_u.iter_mut().zip(x).zip(p.iter()) {
                *s += w * (xi - pi);
            }
        }
        match self.hessian_solve(x, &local, lambda, &sum_u) {
            Some(v) => -dot(&sum_u, &v),
            None => f64::NAN,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting on an `n × n` row-major
/// system; the solution replaces `rhs`.
fn solve_dense(m: &mut [f64], rhs: &mut [f64], n: usize) -> Option<()> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| m[a * n + col].abs().total_cmp(&m[b * n + col].abs()))?;
        if m[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                m.swap(col * n + c, pivot * n + c);
            }
            rhs.swap(col, pivot);
        }
        let diag = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / diag;
            if f != 0.0 {
                for c in col..n {
                    m[r * n + c] -= f * m[col * n + c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= m[r * n + c] * rhs[c];
        }
        rhs[r] = acc / m[r * n + r];
    }
    rhs.iter().all(|v| v.is_finite()).then_some(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlphaMethod {
    /// The `U − 2M − 1` benign models nearest `θ*`.
    #[default]
    Greedy,
    /// Every subset; allowed for at most 12 benign models.
    Exhaustive,
    /// Greedy plus `count` uniformly random subsets, keeping the best.
    Restarts { count: usize },
}

/// Ranking of a subset: feasible solutions first, by `F_A`; infeasible
/// ones by remaining constraint violation.
fn subset_key(state: &KktState, target: &ParamVector, tol: f64) -> (bool, f64) {
    if state.converged(tol) {
        (false, state.objective(target))
    } else {
        (true, state.stationarity.max(state.constraint))
    }
}

fn mask(b: usize, chosen: &[usize]) -> Vec<bool> {
    let mut alpha = vec![false; b];
    for &i in chosen {
        alpha[i] = true;
    }
    alpha
}

/// Chooses the benign subset `α` with `Σ α_j = U − 2M − 1`.
pub fn select_alpha(
    problem: &P1Problem<'_>,
    total_clients: usize,
    method: AlphaMethod,
    tol: f64,
    rng: &mut SimRng,
) -> Result<SimplifiedConstraint> {
    let b = problem.benign.len();
    let m = problem.num_compromised;
    let size = total_clients
        .checked_sub(2 * m + 1)
        .filter(|&s| s >= 1 && s <= b)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "subset size U - 2M - 1 must lie in [1, B] (U = {total_clients}, M = {m}, B = {b})"
            ))
        })?;
    let init = theorem2_init(problem.benign, problem.target, m, total_clients, problem.eps, problem.e)?;

    let target = problem.target.as_slice();
    let mut by_distance: Vec<(f64, usize)> = problem
        .benign
        .iter()
        .enumerate()
        .map(|(i, p)| (distance_unchecked(p.as_slice(), target), i))
        .collect();
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let greedy: Vec<usize> = by_distance[..size].iter().map(|&(_, i)| i).collect();

    let evaluate = |chosen: &[usize]| -> Result<(bool, f64)> {
        let state = kkt_search(&mask(b, chosen), problem, &init, tol)?;
        Ok(subset_key(&state, problem.target, tol))
    };
    let better = |a: (bool, f64), b: (bool, f64)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);

    let chosen = match method {
        _ if size == b => greedy,
        AlphaMethod::Greedy => greedy,
        AlphaMethod::Exhaustive => {
            if b > MAX_EXHAUSTIVE_BENIGN {
                return Err(Error::InvalidArgument(format!(
                    "exhaustive subset search allows at most {MAX_EXHAUSTIVE_BENIGN} benign models, got {b}"
                )));
            }
            let mut best: Option<((bool, f64), Vec<usize>)> = None;
            for combo in Combinations::new(b, size) {
                let key = evaluate(&combo)?;
                if best.as_ref().map_or(true, |(k, _)| better(key, *k)) {
                    best = Some((key, combo));
                }
            }
            best.expect("at least one subset").1
        }
        AlphaMethod::Restarts { count } => {
            let mut best_key = evaluate(&greedy)?;
            let mut best = greedy;
            let mut pool: Vec<usize> = (0..b).collect();
            for _ in 0..count {
                rng.shuffle(&mut pool);
                let mut combo = pool[..size].to_vec();
                combo.sort_unstable();
                let key = evaluate(&combo)?;
                if better(key, best_key) {
                    best_key = key;
                    best = combo;
                }
            }
            best
        }
    };

    let mut xi = ParamVector::zeros(problem.target.dim());
    for p in problem.benign {
        xi.add_scaled(1.0, p)?;
    }
    Ok(SimplifiedConstraint {
        alpha: mask(b, &chosen),
        e: problem.e,
        eps: problem.eps,
        xi,
        lambda: sphere_lambda(m, total_clients, problem.eps, problem.e, b),
    })
}

/// Lexicographic `k`-subsets of `0..n`.
struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

struct RoundView {
    picked: usize,
    best_benign: f64,
}

/// Krum's pick over `crafted ∪ benign` and the smallest benign score.
fn krum_round_view(crafted: &[ClientUpdate], benign: &[ClientUpdate], krum_m: usize) -> Result<RoundView> {
    let mut round: Vec<ClientUpdate> = crafted.iter().chain(benign).cloned().collect();
    round.sort_by_key(|u| u.client_id);
    let scores = krum_scores(&round, krum_m)?;
    let pick = krum_argmin(&round, &scores);
    let best_benign = round
        .iter()
        .zip(&scores)
        .filter(|(u, _)| benign.iter().any(|b| b.client_id == u.client_id))
        .map(|(_, &s)| s)
        .fold(f64::INFINITY, f64::min);
    Ok(RoundView {
        picked: round[pick].client_id,
        best_benign,
    })
}

/// Low-complexity CMP against Krum: `E` → `α` → initializer → KKT solve,
/// then the colluding copies and a final Krum check over the attacker's view.
///
/// `E` is measured on the benign models alone, but the crafted models also
/// shorten benign Krum scores once they join the round. When the final check
/// picks a benign model the pipeline is re-run with the budget set to the
/// smallest benign score seen in that round (or multiplied by `hyper.decay`
/// if that is not smaller). This stops once a crafted model is selected, the
/// budget falls below `hyper.min_step · E`, or `hyper.max_iters` attempts are
/// spent. If the budget cannot be met the least-violating KKT iterate is
/// used.
pub fn cmp_krum_simplified(
    ctx: &AttackContext,
    hyper: &CmpHyper,
    spec: &ModelSpec,
    method: AlphaMethod,
    rng: &mut SimRng,
) -> Result<KrumAttack> {
    ctx.validate()?;
    hyper.validate()?;
    if ctx.level == KnowledgeLevel::None {
        return Err(Error::AttackConfig("Krum attack needs full or partial knowledge".into()));
    }
    let krum_m = known_krum_m(ctx)?;
    let target = resolve_target(ctx, spec, hyper)?;
    let benign_updates = ctx.benign_estimate();
    let benign: Vec<ParamVector> = benign_updates.iter().map(|u| u.params.clone()).collect();
    let m = ctx.num_compromised();
    let u = ctx.total_clients;

    let e = compute_e(&benign, m, u)?;
    let mut budget = e;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let problem = P1Problem {
            benign: &benign,
            target: &target,
            num_compromised: m,
            eps: hyper.eps,
            e: budget,
        };
        let constraint = select_alpha(&problem, u, method, PIPELINE_TOL, rng)?;
        let init = theorem2_init(&benign, &target, m, u, hyper.eps, budget)?;
        let state = kkt_search(&constraint.alpha, &problem, &init, PIPELINE_TOL)?;
        let primary = project_box(&state.iterate, &ctx.domain)?;
        let crafted = collude(&primary, ctx, hyper.sigma, hyper.eps, rng)?;
        let view = krum_round_view(&crafted, &benign_updates, krum_m)?;
        let success = view.picked == crafted[0].client_id;
        let crafted_won = crafted.iter().any(|u| u.client_id == view.picked);
        budget = if view.best_benign < budget { view.best_benign } else { budget * hyper.decay };
        if crafted_won || budget < hyper.min_step * e || attempts >= hyper.max_iters {
            return Ok(KrumAttack {
                updates: crafted,
                success,
                iterations: attempts,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::pv;
    use super::*;

    fn pts(values: &[f64]) -> Vec<ParamVector> {
        values.iter().map(|&v| pv(&[v])).collect()
    }

    #[test]
    fn e_examples() {
        assert_eq!(compute_e(&pts(&[0.4; 5]), 1, 5).unwrap(), 0.0);
        // U - M - 2 = 1 with benign {0, 1, 2}
        assert_eq!(compute_e(&pts(&[0.0, 1.0, 2.0]), 1, 4).unwrap(), 1.0);
        assert!(compute_e(&pts(&[0.0, 1.0]), 0, 5).is_err());
        assert!(compute_e(&pts(&[0.0, 1.0]), 3, 4).is_err());
    }

    #[test]
    fn kkt_starting_on_a_benign_model_reaches_the_ball_boundary() {
        // One selected model: the answer is the point of the ball around p
        // closest to the target.
        let benign = vec![pv(&[2.0, 0.5, 0.0]), pv(&[0.0, 0.0, 1.0])];
        let target = pv(&[1.0, -2.5, -1.5]);
        let problem = P1Problem { benign: &benign, target: &target, num_compromised: 1, eps: 0.0, e: 0.7 };
        let state = solve_p1_kkt(&[true, false], &problem, &benign[0], 1e-9).unwrap();
        let p = benign[0].as_slice();
        let gap = distance_unchecked(target.as_slice(), p);
        for c in 0..3 {
            let expect = p[c] + 0.7 * (target[c] - p[c]) / gap;
            assert!((state.iterate[c] - expect).abs() <= 1e-8, "{:?}", state.iterate);
        }
    }

    #[test]
    fn init_worked_example() {
        let benign = pts(&[0.0, 2.0]);
        let init = theorem2_init(&benign, &pv(&[5.0]), 2, 7, 0.0, 2.5).unwrap();
        assert_eq!(init, pv(&[2.0]));
        let residual: f64 = benign.iter().map(|b| (b[0] - init[0]).powi(2)).sum::<f64>() / 2.0
            + (7.0 - 4.0 - 2.0) / 2.0
            - 2.5;
        assert_eq!(residual, 0.0);
    }

    #[test]
    fn init_fixed_point_and_fallbacks() {
        let benign = pts(&[0.0, 2.0]);
        // r = 1 around c = 1: θ* = 0 is already on the sphere.
        assert_eq!(theorem2_init(&benign, &pv(&[0.0]), 2, 7, 0.0, 2.5).unwrap(), pv(&[0.0]));
        // θ* at the centre.
        assert_eq!(theorem2_init(&benign, &pv(&[1.0]), 2, 7, 0.0, 2.5).unwrap(), pv(&[1.0]));
        // E too small: empty sphere.
        assert_eq!(theorem2_init(&benign, &pv(&[5.0]), 2, 7, 0.0, 0.1).unwrap(), pv(&[1.0]));
    }

    #[test]
    fn kkt_slack_constraint_returns_target() {
        let benign = pts(&[0.0, 1.0]);
        let target = pv(&[0.5]);
        let problem = P1Problem { benign: &benign, target: &target, num_compromised: 1, eps: 0.0, e: 5.0 };
        let s = solve_p1_kkt(&[true, true], &problem, &pv(&[3.0]), 1e-9).unwrap();
        assert_eq!(s.iterate, target);
        assert_eq!(s.multiplier, 0.0);
    }

    #[test]
    fn kkt_one_dimensional_geometry() {
        // ‖θ̂‖ ≤ E − (M − 1)ε = 1 with θ* = 5: closest feasible point is 1.
        let benign = pts(&[0.0]);
        let target = pv(&[5.0]);
        let problem = P1Problem { benign: &benign, target: &target, num_compromised: 2, eps: 0.5, e: 1.5 };
        let s = solve_p1_kkt(&[true], &problem, &pv(&[0.3]), 1e-9).unwrap();
        assert!((s.iterate[0] - 1.0).abs() < 1e-9);
        // λ = 2(θ* − θ̂) = 8
        assert!((s.multiplier - 8.0).abs() < 1e-6);
        assert!(s.stationarity <= 1e-9 && s.constraint <= 1e-9);
    }

    #[test]
    fn kkt_infeasible_budget_errors() {
        let benign = pts(&[0.0, 10.0]);
        let target = pv(&[50.0]);
        let problem = P1Problem { benign: &benign, target: &target, num_compromised: 1, eps: 0.0, e: 1.0 };
        assert!(matches!(
            solve_p1_kkt(&[true, true], &problem, &pv(&[5.0]), 1e-8),
            Err(Error::KktNonConvergence { .. })
        ));
    }

    #[test]
    fn greedy_picks_nearest() {
        let benign = pts(&[0.0, 1.0, 9.0]);
        let target = pv(&[0.0]);
        let problem = P1Problem { benign: &benign, target: &target, num_compromised: 1, eps: 0.0, e: 10.0 };
        // U - 2M - 1 = 2 with U = 5, M = 1
        let c = select_alpha(&problem, 5, AlphaMethod::Greedy, 1e-8, &mut SimRng::seed_from(0)).unwrap();
        assert_eq!(c.alpha, vec![true, true, false]);
        assert_eq!(c.xi, pv(&[10.0]));
    }

    #[test]
    fn forced_subset_is_all_ones() {
        let benign = pts(&[0.0, 1.0, 9.0]);
        let target = pv(&[4.0]);
        let problem = P1Problem { benign: &benign, target: &target, num_compromised: 1, eps: 0.0, e: 10.0 };
        for method in [AlphaMethod::Greedy, AlphaMethod::Exhaustive, AlphaMethod::Restarts { count: 3 }] {
            let c = select_alpha(&problem, 6, method, 1e-8, &mut SimRng::seed_from(0)).unwrap();
            assert_eq!(c.alpha, vec![true; 3]);
        }
        assert!(select_alpha(&problem, 3, AlphaMethod::Greedy, 1e-8, &mut SimRng::seed_from(0)).is_err());
    }

    #[test]
    fn combinations_enumerate_all() {
        let all: Vec<_> = Combinations::new(5, 3).collect();
        assert_eq!(all.len(), 10);
        assert_eq!(all[0], vec![0, 1, 2]);
        assert_eq!(all[9], vec![2, 3, 4]);
        assert_eq!(Combinations::new(3, 3).count(), 1);
    }

    #[test]
    fn dense_solver() {
        let mut m = vec![0.0, 2.0, 1.0, 1.0];
        let mut r = vec![4.0, 3.0];
        solve_dense(&mut m, &mut r, 2).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 2.0).abs() < 1e-15);
    }
}
