//! Minimum-time smooth trajectory optimization over B-spline control
//! points and duration.
//!
//! The trajectory is a clamped uniform cubic spline on a normalized knot
//! vector `U` over `u in [0, 1]`, scaled by the duration: `x(t) = c(t/tf)`.
//! The first two and last two control points are fixed by the boundary
//! positions and velocities, so the decision vector is
//! `[P_2, ..., P_{n-3}, tf]`. Velocity and clearance constraints become
//! squared-hinge penalties at `n_check` uniformly spaced samples; the
//! penalized problem is solved by projected L-BFGS with Armijo
//! backtracking, the penalty weight growing between rounds. For
//! rest-to-rest problems the positions do not depend on `tf`, so `tf` is
//! minimized exactly after every step.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::collision::Obstacle;
use crate::kinematics::{ManipulatorModel, ProximityTerm};
use crate::spline::{basis_functions, clamped_uniform_knots, find_span, BSplineTrajectory};
use crate::JointVec;

pub const DEGREE: usize = 3;
const GL_NODES: usize = 32;
/// Smoothing of the Euclidean norm inside the path-length integral.
const NORM_EPS: f64 = 1e-6;
const STALL_WINDOW: usize = 10;
const LBFGS_MEMORY: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajOptError {
    #[error("infeasible boundary: {0}")]
    InfeasibleBoundary(&'static str),
    #[error("prefix end and suffix start differ by {gap} rad")]
    MismatchedJunction { gap: f64 },
    #[error("invalid problem: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajOptStatus {
    Valid,
    DynamicViolation,
    Collision,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajOptSettings {
    pub w1: f64,
    pub w2: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub num_ctrl: usize,
    pub n_check: usize,
    /// Clearance below which the collision penalty is active (m).
    pub collision_margin: f64,
    pub mu0: f64,
    pub mu_growth: f64,
    pub outer_rounds: usize,
    pub inner_iters: usize,
    /// Velocity penalty targets `(1 - velocity_safety) * vmax`.
    pub velocity_safety: f64,
    /// Inner loop stops once the last `STALL_WINDOW` accepted steps
    /// together lowered the objective by less than `rel_tol * (1 + |f|)`.
    pub rel_tol: f64,
    /// Penalty rounds stop once every hinge ratio is at most this.
    pub constraint_tol: f64,
    pub record_log: bool,
}

impl Default for TrajOptSettings {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 0.1,
            t_min: 0.05,
            t_max: 3.0,
            num_ctrl: 8,
            n_check: 50,
            collision_margin: 0.01,
            mu0: 10.0,
            mu_growth: 10.0,
            outer_rounds: 6,
            inner_iters: 200,
            velocity_safety: 1e-3,
            rel_tol: 1e-6,
            constraint_tol: 1e-4,
            record_log: false,
        }
    }
}

impl TrajOptSettings {
    pub fn validate(&self) -> Result<(), TrajOptError> {
        if !(self.t_min > 0.0 && self.t_min <= self.t_max) {
            return Err(TrajOptError::Invalid("need 0 < t_min <= t_max"));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return Err(TrajOptError::Invalid("weights must be non-negative"));
        }
        if self.num_ctrl < 4 {
            return Err(TrajOptError::Invalid("num_ctrl must be at least 4"));
        }
        if self.n_check < 2 {
            return Err(TrajOptError::Invalid("n_check must be at least 2"));
        }
        if !(self.collision_margin > 0.0 && self.mu0 > 0.0 && self.mu_growth >= 1.0) {
            return Err(TrajOptError::Invalid("penalty parameters must be positive"));
        }
        if !(0.0..0.5).contains(&self.velocity_safety) {
            return Err(TrajOptError::Invalid("velocity_safety must be in [0, 0.5)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrajOptProblem<'a> {
    pub model: &'a ManipulatorModel,
    pub obstacles: &'a [Obstacle],
    pub x0: JointVec,
    pub xf: JointVec,
    pub xdot0: JointVec,
    pub xdotf: JointVec,
    pub settings: TrajOptSettings,
}

impl<'a> TrajOptProblem<'a> {
    pub fn rest_to_rest(
        model: &'a ManipulatorModel,
        obstacles: &'a [Obstacle],
        x0: JointVec,
        xf: JointVec,
        settings: TrajOptSettings,
    ) -> Self {
        let n = x0.len();
        Self {
            model,
            obstacles,
            x0,
            xf,
            xdot0: vec![0.0; n],
            xdotf: vec![0.0; n],
            settings,
        }
    }

    fn check(&self) -> Result<(), TrajOptError> {
        self.settings.validate()?;
        let dof = self.model.dof();
        if [&self.x0, &self.xf, &self.xdot0, &self.xdotf]
            .iter()
            .any(|v| v.len() != dof)
        {
            return Err(TrajOptError::Invalid("boundary dimension mismatch"));
        }
        if !self.model.within_limits(&self.x0) || !self.model.within_limits(&self.xf) {
            return Err(TrajOptError::InfeasibleBoundary(
                "boundary outside joint limits",
            ));
        }
        let vmax = &self.model.velocity_limits;
        let over = |v: &JointVec| v.iter().zip(vmax).any(|(a, m)| !(a.abs() <= *m));
        if over(&self.xdot0) || over(&self.xdotf) {
            return Err(TrajOptError::InfeasibleBoundary(
                "boundary velocity above limit",
            ));
        }
        if self.model.in_collision(&self.x0, self.obstacles)
            || self.model.in_collision(&self.xf, self.obstacles)
        {
            return Err(TrajOptError::InfeasibleBoundary(
                "boundary configuration in collision",
            ));
        }
        Ok(())
    }
}

/// One accepted inner iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub round: usize,
    pub iteration: usize,
    pub mu: f64,
    pub objective: f64,
    pub penalty: f64,
    pub tf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajOptResult {
    pub trajectory: BSplineTrajectory,
    pub status: TrajOptStatus,
    /// Least-cost iterate that satisfied every constraint.
    pub best_feasible: Option<BSplineTrajectory>,
    pub best_feasible_cost: Option<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub log: Vec<IterateRecord>,
}

impl TrajOptResult {
    /// Cheapest valid trajectory seen (the cache includes the final
    /// iterate when it validates).
    pub fn usable(&self) -> Option<(&BSplineTrajectory, f64)> {
        self.best_feasible.as_ref().zip(self.best_feasible_cost)
    }

    /// Line-oriented iterate log.
    pub fn format_log(&self) -> alloc::string::String {
        use core::fmt::Write;
        let mut out = alloc::string::String::new();
        for r in &self.log {
            let _ = writeln!(
                out,
                "round={} iter={} mu={:e} objective={:.12e} penalty={:.6e} tf={:.9}",
                r.round, r.iteration, r.mu, r.objective, r.penalty, r.tf
            );
        }
        out
    }
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = (1.0 - x) / 2.0;
        nodes[n - 1 - i] = (1.0 + x) / 2.0;
        weights[i] = w / 2.0;
        weights[n - 1 - i] = w / 2.0;
    }
    (nodes, weights)
}

/// `w1 * duration + w2 * integral |xdot|_2 dt` (32-node Gauss-Legendre).
pub fn trajectory_cost(traj: &BSplineTrajectory, w1: f64, w2: f64) -> f64 {
    let duration = traj.duration();
    let path = match traj.derivative() {
        Ok(d) => {
            let (nodes, weights) = gauss_legendre_unit(GL_NODES);
            let mut v = vec![0.0; traj.dim()];
            nodes
                .iter()
                .zip(&weights)
                .map(|(&u, &w)| {
                    let _ = d.evaluate_into(traj.t0() + u * duration, &mut v);
                    w * v.iter().map(|x| x * x).sum::<f64>().sqrt()
                })
                .sum::<f64>()
                * duration
        }
        Err(_) => 0.0,
    };
    w1 * duration + w2 * path
}

/// Checks velocity limits and collisions at `n_check` uniform times.
pub fn validate(traj: &BSplineTrajectory, problem: &TrajOptProblem<'_>) -> TrajOptStatus {
    let n = problem.settings.n_check.max(2);
    let model = problem.model;
    let vmax = &model.velocity_limits;
    let times: Vec<f64> = (0..n)
        .map(|k| traj.t0() + traj.duration() * k as f64 / (n - 1) as f64)
        .collect();
    if let Ok(d) = traj.derivative() {
        for &t in &times {
            let v = d.evaluate_clamped(t);
            if v.iter()
                .zip(vmax)
                .any(|(a, m)| !(a.abs() <= m * (1.0 + 1e-9)))
            {
                return TrajOptStatus::DynamicViolation;
            }
        }
    }
    for &t in &times {
        if model.in_collision(&traj.evaluate_clamped(t), problem.obstacles) {
            return TrajOptStatus::Collision;
        }
    }
    TrajOptStatus::Valid
}

/// Result of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub penalty: f64,
    /// Largest hinge ratio among the penalty terms (0 when none is active).
    pub max_violation: f64,
    /// Largest `|xdot_j| / vmax_j` over the check samples.
    pub max_velocity_ratio: f64,
    /// Smallest clearance found below the margin (`+inf` if none).
    pub min_clearance: f64,
    /// Unpenalized cost with the caller's weights.
    pub cost: f64,
}

impl Evaluation {
    pub fn feasible(&self) -> bool {
        self.max_velocity_ratio <= 1.0 && self.min_clearance > 0.0
    }
}

/// Penalized objective and its analytic gradient for one problem.
#[derive(Debug)]
pub struct Evaluator<'p, 'a> {
    problem: &'p TrajOptProblem<'a>,
    n: usize,
    dim: usize,
    knots: Vec<f64>,
    c_start: f64,
    c_end: f64,
    pos_basis: Vec<f64>,
    vel_basis: Vec<f64>,
    gl_basis: Vec<f64>,
    gl_weights: Vec<f64>,
    w1: f64,
    w2: f64,
}

/// Rows of `dC/du` basis coefficients at `us` (one row of `n` per sample).
fn derivative_basis_rows(knots: &[f64], n: usize, us: &[f64]) -> Vec<f64> {
    let p = DEGREE;
    let inner = &knots[1..knots.len() - 1];
    let mut rows = vec![0.0; us.len() * n];
    let mut vals = [0.0f64; 8];
    for (s, &u) in us.iter().enumerate() {
        let span = find_span(n - 1, p - 1, u, inner);
        basis_functions(span, p - 1, u, inner, &mut vals);
        for r in 0..p {
            let k = span + 1 - p + r;
            let c = p as f64 / (knots[k + p + 1] - knots[k + 1]);
            rows[s * n + k + 1] += vals[r] * c;
            rows[s * n + k] -= vals[r] * c;
        }
    }
    rows
}

fn position_basis_rows(knots: &[f64], n: usize, us: &[f64]) -> Vec<f64> {
    let mut rows = vec![0.0; us.len() * n];
    let mut vals = [0.0f64; 8];
    for (s, &u) in us.iter().enumerate() {
        let span = find_span(n, DEGREE, u, knots);
        basis_functions(span, DEGREE, u, knots, &mut vals);
        for r in 0..=DEGREE {
            rows[s * n + span - DEGREE + r] = vals[r];
        }
    }
    rows
}

impl<'p, 'a> Evaluator<'p, 'a> {
    pub fn new(problem: &'p TrajOptProblem<'a>) -> Result<Self, TrajOptError> {
        problem.settings.validate()?;
        let n = problem.settings.num_ctrl;
        let p = DEGREE;
        let knots = clamped_uniform_knots(n, p, 0.0, 1.0)
            .map_err(|_| TrajOptError::Invalid("num_ctrl too small"))?;
        let n_check = problem.settings.n_check;
        let checks: Vec<f64> = (0..n_check)
            .map(|k| k as f64 / (n_check - 1) as f64)
            .collect();
        let (gl_nodes, gl_weights) = gauss_legendre_unit(GL_NODES);
        let scale = problem.settings.w1 + problem.settings.w2;
        let (w1, w2) = if scale > 0.0 {
            (problem.settings.w1 / scale, problem.settings.w2 / scale)
        } else {
            (0.0, 0.0)
        };
        Ok(Self {
            problem,
            n,
            dim: problem.model.dof(),
            c_start: (knots[p + 1] - knots[1]) / p as f64,
            c_end: (knots[n + p - 1] - knots[n - 1]) / p as f64,
            pos_basis: position_basis_rows(&knots, n, &checks),
            vel_basis: derivative_basis_rows(&knots, n, &checks),
            gl_basis: derivative_basis_rows(&knots, n, &gl_nodes),
            gl_weights,
            knots,
            w1,
            w2,
        })
    }

    pub fn num_variables(&self) -> usize {
        (self.n - 4) * self.dim + 1
    }

    /// Full row-major control polygon for decision vector `z`.
    pub fn control(&self, z: &[f64]) -> Vec<f64> {
        let (n, d) = (self.n, self.dim);
        let pr = self.problem;
        let tf = z[z.len() - 1];
        let mut c = vec![0.0; n * d];
        for j in 0..d {
            c[j] = pr.x0[j];
            c[d + j] = pr.x0[j] + pr.xdot0[j] * tf * self.c_start;
            c[(n - 2) * d + j] = pr.xf[j] - pr.xdotf[j] * tf * self.c_end;
            c[(n - 1) * d + j] = pr.xf[j];
        }
        c[2 * d..(n - 2) * d].copy_from_slice(&z[..(n - 4) * d]);
        c
    }

    pub fn trajectory(&self, z: &[f64]) -> BSplineTrajectory {
        let tf = z[z.len() - 1];
        let knots = self.knots.iter().map(|k| k * tf).collect();
        BSplineTrajectory::from_flat(DEGREE, knots, self.dim, self.control(z))
            .expect("decision vector yields a valid spline")
    }

    /// Decision vector that reproduces `traj` as closely as possible:
    /// least-squares fit of the free control points to samples of `traj`
    /// with the boundary rows pinned and `tf` set to its duration.
    pub fn fit(&self, traj: &BSplineTrajectory) -> Vec<f64> {
        let s = &self.problem.settings;
        let tf = traj.duration().clamp(s.t_min, s.t_max);
        let (n, d) = (self.n, self.dim);
        let free = n - 4;
        let mut z = vec![0.0; free * d + 1];
        z[free * d] = tf;
        if free == 0 {
            return z;
        }
        let m = (4 * n).max(40);
        let us: Vec<f64> = (0..m).map(|k| k as f64 / (m - 1) as f64).collect();
        let rows = position_basis_rows(&self.knots, n, &us);
        let pinned = self.control(&z);
        let mut a = DMatrix::<f64>::zeros(m, free);
        for r in 0..m {
            for c in 0..free {
                a[(r, c)] = rows[r * n + c + 2];
            }
        }
        let mut ata = a.transpose() * &a;
        for i in 0..free {
            ata[(i, i)] += 1e-12;
        }
        let Some(chol) = ata.cholesky() else {
            return self.linear_guess();
        };
        for j in 0..d {
            let mut rhs = DVector::<f64>::zeros(m);
            for (r, &u) in us.iter().enumerate() {
                let target = traj.evaluate_clamped(traj.t0() + u * traj.duration())[j];
                let fixed: f64 = [0, 1, n - 2, n - 1]
                    .iter()
                    .map(|&i| rows[r * n + i] * pinned[i * d + j])
                    .sum();
                rhs[r] = target - fixed;
            }
            let sol = chol.solve(&(a.transpose() * rhs));
            for c in 0..free {
                z[c * d + j] = sol[c];
            }
        }
        self.project(&mut z);
        z
    }

    /// Straight line in joint space at the Greville abscissae, duration
    /// 1.5x the per-joint lower bound.
    pub fn linear_guess(&self) -> Vec<f64> {
        let pr = self.problem;
        let s = &pr.settings;
        let (n, d) = (self.n, self.dim);
        let lower = pr
            .x0
            .iter()
            .zip(&pr.xf)
            .zip(&pr.model.velocity_limits)
            .map(|((a, b), v)| (b - a).abs() / v)
            .fold(0.0, f64::max);
        let mut z = vec![0.0; (n - 4) * d + 1];
        for i in 2..n - 2 {
            let g: f64 = self.knots[i + 1..=i + DEGREE].iter().sum::<f64>() / DEGREE as f64;
            for j in 0..d {
                z[(i - 2) * d + j] = pr.x0[j] + (pr.xf[j] - pr.x0[j]) * g;
            }
        }
        z[(n - 4) * d] = (1.5 * lower).clamp(s.t_min, s.t_max);
        self.project(&mut z);
        z
    }

    pub fn project(&self, z: &mut [f64]) {
        let s = &self.problem.settings;
        let d = self.dim;
        let last = z.len() - 1;
        z[last] = z[last].clamp(s.t_min, s.t_max);
        for (k, v) in z[..last].iter_mut().enumerate() {
            let (lo, hi) = self.problem.model.joint_limits[k % d];
            *v = v.clamp(lo, hi);
        }
    }

    pub fn objective(&self, z: &[f64], mu: f64) -> f64 {
        self.evaluate(z, mu, None).objective
    }

    /// Penalized objective at `z`; writes the gradient into `grad` when given.
    pub fn evaluate(&self, z: &[f64], mu: f64, grad: Option<&mut [f64]>) -> Evaluation {
        let pr = self.problem;
        let s = &pr.settings;
        let (n, d) = (self.n, self.dim);
        let tf = z[z.len() - 1];
        let ctrl = self.control(z);
        let want = grad.is_some();
        let mut g_ctrl = if want { vec![0.0; n * d] } else { Vec::new() };
        let mut g_tf = self.w1;
        let mut v = vec![0.0; d];

        // path length
        let mut length = 0.0;
        let mut length_exact = 0.0;
        for (g, &w) in self.gl_weights.iter().enumerate() {
            let row = &self.gl_basis[g * n..(g + 1) * n];
            combine(row, &ctrl, d, &mut v);
            let sq: f64 = v.iter().map(|x| x * x).sum();
            let smooth = (sq + NORM_EPS * NORM_EPS).sqrt();
            length += w * (smooth - NORM_EPS);
            length_exact += w * sq.sqrt();
            if want {
                for (i, &b) in row.iter().enumerate() {
                    if b != 0.0 {
                        for j in 0..d {
                            g_ctrl[i * d + j] += self.w2 * w * b * v[j] / smooth;
                        }
                    }
                }
            }
        }

        // velocity limits
        let mut penalty = 0.0;
        let mut max_violation = 0.0f64;
        let mut max_ratio = 0.0f64;
        let vmax = &pr.model.velocity_limits;
        for sample in 0..s.n_check {
            let row = &self.vel_basis[sample * n..(sample + 1) * n];
            combine(row, &ctrl, d, &mut v);
            for j in 0..d {
                let a = v[j].abs();
                max_ratio = max_ratio.max(a / (tf * vmax[j]));
                let lim = tf * vmax[j] * (1.0 - s.velocity_safety);
                let r = a / lim - 1.0;
                if r > 0.0 {
                    penalty += r * r;
                    max_violation = max_violation.max(r);
                    if want {
                        let dv = mu * 2.0 * r * v[j].signum() / lim;
                        for (i, &b) in row.iter().enumerate() {
                            g_ctrl[i * d + j] += dv * b;
                        }
                        g_tf -= mu * 2.0 * r * a / (lim * tf);
                    }
                }
            }
        }

        // clearance
        let margin = s.collision_margin;
        let mut min_clearance = f64::INFINITY;
        let mut terms: Vec<ProximityTerm> = Vec::new();
        for sample in 0..s.n_check {
            let row = &self.pos_basis[sample * n..(sample + 1) * n];
            combine(row, &ctrl, d, &mut v);
            let fk = pr.model.fk_unchecked(&v);
            terms.clear();
            pr.model
                .proximity_terms(&fk, pr.obstacles, margin, want, &mut terms);
            for t in &terms {
                min_clearance = min_clearance.min(t.distance);
                let r = (margin - t.distance) / margin;
                penalty += r * r;
                max_violation = max_violation.max(r);
                if want {
                    let scale = -mu * 2.0 * r / margin;
                    for (i, &b) in row.iter().enumerate() {
                        if b != 0.0 {
                            for j in 0..d {
                                g_ctrl[i * d + j] += scale * b * t.grad[j];
                            }
                        }
                    }
                }
            }
        }

        if let Some(grad) = grad {
            let free = (n - 4) * d;
            grad[..free].copy_from_slice(&g_ctrl[2 * d..(n - 2) * d]);
            for j in 0..d {
                g_tf += g_ctrl[d + j] * pr.xdot0[j] * self.c_start;
                g_tf -= g_ctrl[(n - 2) * d + j] * pr.xdotf[j] * self.c_end;
            }
            grad[free] = g_tf;
        }
        Evaluation {
            objective: self.w1 * tf + self.w2 * length + mu * penalty,
            penalty,
            max_violation,
            max_velocity_ratio: max_ratio,
            min_clearance,
            cost: s.w1 * tf + s.w2 * length_exact,
        }
    }

    fn rest_to_rest(&self) -> bool {
        let pr = self.problem;
        pr.xdot0.iter().chain(&pr.xdotf).all(|&v| v == 0.0)
    }

    /// Exact minimizer over `tf` of the `tf`-dependent part of the
    /// objective (`w1 tf` plus velocity hinges) with the control points
    /// held fixed. Only meaningful for rest-to-rest problems, where the
    /// control points do not depend on `tf`.
    fn optimal_duration(&self, z: &[f64], mu: f64) -> f64 {
        let pr = self.problem;
        let s = &pr.settings;
        let (n, d) = (self.n, self.dim);
        let ctrl = self.control(z);
        let mut v = vec![0.0; d];
        // c = |x'_j(u)| / limit_j; the hinge is active when tf < c
        let mut cs = Vec::with_capacity(s.n_check * d);
        for sample in 0..s.n_check {
            combine(
                &self.vel_basis[sample * n..(sample + 1) * n],
                &ctrl,
                d,
                &mut v,
            );
            for j in 0..d {
                let c = v[j].abs() / (pr.model.velocity_limits[j] * (1.0 - s.velocity_safety));
                if c > 0.0 {
                    cs.push(c);
                }
            }
        }
        let slope = |tf: f64| -> f64 {
            let mut g = self.w1;
            for &c in &cs {
                let r = c / tf - 1.0;
                if r > 0.0 {
                    g -= mu * 2.0 * r * c / (tf * tf);
                }
            }
            g
        };
        let (mut lo, mut hi) = (s.t_min, s.t_max);
        if slope(lo) >= 0.0 {
            return lo;
        }
        if slope(hi) <= 0.0 {
            return hi;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Moves `tf` onto the sampled velocity limits: exactly for
    /// rest-to-rest problems, otherwise by raising it until they hold.
    fn polish_duration(&self, z: &mut [f64]) {
        let (t_min, t_max) = (self.problem.settings.t_min, self.problem.settings.t_max);
        let last = z.len() - 1;
        if self.rest_to_rest() {
            // velocities scale exactly with 1 / tf and positions do not move
            let ratio = self.velocity_ratio(z);
            z[last] = (z[last] * ratio * (1.0 + 1e-12)).clamp(t_min, t_max);
            return;
        }
        for _ in 0..50 {
            let ratio = self.velocity_ratio(z);
            if ratio <= 1.0 || z[last] >= t_max {
                break;
            }
            z[last] = (z[last] * ratio * (1.0 + 1e-12)).min(t_max);
        }
    }

    fn velocity_ratio(&self, z: &[f64]) -> f64 {
        let (n, d) = (self.n, self.dim);
        let tf = z[z.len() - 1];
        let ctrl = self.control(z);
        let vmax = &self.problem.model.velocity_limits;
        let mut v = vec![0.0; d];
        let mut ratio = 0.0f64;
        for sample in 0..self.problem.settings.n_check {
            combine(
                &self.vel_basis[sample * n..(sample + 1) * n],
                &ctrl,
                d,
                &mut v,
            );
            for j in 0..d {
                ratio = ratio.max(v[j].abs() / (tf * vmax[j]));
            }
        }
        ratio
    }
}

fn combine(row: &[f64], ctrl: &[f64], d: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &b) in row.iter().enumerate() {
        if b != 0.0 {
            for j in 0..d {
                out[j] += b * ctrl[i * d + j];
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: returns `-H g` for the limited-memory inverse
/// Hessian built from `(s, y, 1 / s.y)` pairs, oldest first.
fn lbfgs_direction(grad: &[f64], memory: &[(Vec<f64>, Vec<f64>, f64)]) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = vec![0.0; memory.len()];
    for (k, (sv, yv, rho)) in memory.iter().enumerate().rev() {
        let a = rho * dot(sv, &q);
        alphas[k] = a;
        q.iter_mut().zip(yv).for_each(|(qi, y)| *qi -= a * y);
    }
    if let Some((sv, yv, _)) = memory.last() {
        let gamma = dot(sv, yv) / dot(yv, yv);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (k, (sv, yv, rho)) in memory.iter().enumerate() {
        let b = rho * dot(yv, &q);
        q.iter_mut()
            .zip(sv)
            .for_each(|(qi, s)| *qi += (alphas[k] - b) * s);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

pub fn optimize(
    problem: &TrajOptProblem<'_>,
    init: Option<&BSplineTrajectory>,
) -> Result<TrajOptResult, TrajOptError> {
    problem.check()?;
    let ev = Evaluator::new(problem)?;
    let z0 = match init {
        Some(t) if t.dim() == problem.model.dof() => ev.fit(t),
        Some(_) => {
            return Err(TrajOptError::Invalid(
                "initial trajectory dimension mismatch",
            ))
        }
        None => ev.linear_guess(),
    };
    Ok(solve(&ev, z0))
}

/// Optimizes from the time-concatenation of `prefix` and `suffix`.
pub fn optimize_with_warm_start(
    prefix: &BSplineTrajectory,
    suffix: &BSplineTrajectory,
    problem: &TrajOptProblem<'_>,
) -> Result<TrajOptResult, TrajOptError> {
    let gap = prefix
        .end()
        .iter()
        .zip(suffix.start())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if prefix.dim() != suffix.dim() || gap > 1e-6 {
        return Err(TrajOptError::MismatchedJunction { gap });
    }
    problem.check()?;
    let ev = Evaluator::new(problem)?;
    let joined = Concatenation { prefix, suffix };
    let z0 = ev.fit_with(&joined);
    Ok(solve(&ev, z0))
}

/// A path sampled by normalized time.
trait PathSamples {
    fn duration(&self) -> f64;
    fn at_fraction(&self, u: f64) -> Vec<f64>;
}

impl PathSamples for BSplineTrajectory {
    fn duration(&self) -> f64 {
        BSplineTrajectory::duration(self)
    }
    fn at_fraction(&self, u: f64) -> Vec<f64> {
        self.evaluate_clamped(self.t0() + u * BSplineTrajectory::duration(self))
    }
}

struct Concatenation<'t> {
    prefix: &'t BSplineTrajectory,
    suffix: &'t BSplineTrajectory,
}

impl PathSamples for Concatenation<'_> {
    fn duration(&self) -> f64 {
        self.prefix.duration() + self.suffix.duration()
    }
    fn at_fraction(&self, u: f64) -> Vec<f64> {
        let t = u * self.duration();
        let t1 = self.prefix.duration();
        if t <= t1 {
            self.prefix.evaluate_clamped(self.prefix.t0() + t)
        } else {
            self.suffix.evaluate_clamped(self.suffix.t0() + (t - t1))
        }
    }
}

impl Evaluator<'_, '_> {
    fn fit_with(&self, path: &dyn PathSamples) -> Vec<f64> {
        let s = &self.problem.settings;
        let tf = path.duration().clamp(s.t_min, s.t_max);
        // resample into a dense piecewise-linear spline, then fit
        let m = (8 * self.n).max(64);
        let pts: Vec<Vec<f64>> = (0..m)
            .map(|k| path.at_fraction(k as f64 / (m - 1) as f64))
            .collect();
        let dense = clamped_uniform_knots(m, 1, 0.0, tf)
            .ok()
            .and_then(|k| BSplineTrajectory::new(1, k, &pts).ok());
        match dense {
            Some(t) => self.fit(&t),
            None => self.linear_guess(),
        }
    }
}

fn solve(ev: &Evaluator<'_, '_>, mut z: Vec<f64>) -> TrajOptResult {
    let problem = ev.problem;
    let s = problem.settings;
    let nv = ev.num_variables();
    let mut grad = vec![0.0; nv];
    let mut trial_grad = vec![0.0; nv];
    let mut log = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut iterations = 0usize;
    let mut diverged = false;
    let mut mu = s.mu0;
    let exact_duration = ev.rest_to_rest();

    let consider = |eval: &Evaluation, z: &[f64], best: &mut Option<(f64, Vec<f64>)>| {
        if eval.feasible() && best.as_ref().is_none_or(|(c, _)| eval.cost < *c) {
            *best = Some((eval.cost, z.to_vec()));
        }
    };

    'rounds: for round in 0..s.outer_rounds {
        let mut cur = ev.evaluate(&z, mu, Some(&mut grad));
        if !cur.objective.is_finite() {
            diverged = true;
            break;
        }
        consider(&cur, &z, &mut best);
        if exact_duration {
            grad[nv - 1] = 0.0;
        }
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let first_step = if gmax > 0.0 {
            (0.1 / gmax).min(1.0)
        } else {
            1.0
        };
        let mut memory: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(LBFGS_MEMORY);
        let mut history = [f64::INFINITY; STALL_WINDOW];
        for it in 0..s.inner_iters {
            let mut dir = lbfgs_direction(&grad, &memory);
            if memory.is_empty() {
                dir.iter_mut().for_each(|d| *d *= first_step);
            }
            if dot(&dir, &grad) >= 0.0 {
                memory.clear();
                dir = grad.iter().map(|g| -first_step * g).collect();
            }
            let mut accepted = None;
            let mut step = 1.0;
            for _ in 0..40 {
                let mut trial: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                ev.project(&mut trial);
                let descent: f64 = trial
                    .iter()
                    .zip(&z)
                    .zip(&grad)
                    .map(|((a, b), g)| (a - b) * g)
                    .sum();
                let dmax = trial
                    .iter()
                    .zip(&z)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if dmax < 1e-13 {
                    break;
                }
                if exact_duration {
                    trial[nv - 1] = ev.optimal_duration(&trial, mu);
                }
                let e = ev.evaluate(&trial, mu, Some(&mut trial_grad));
                if e.objective.is_finite() && e.objective <= cur.objective + 1e-4 * descent {
                    accepted = Some((trial, e));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, e)) = accepted else {
                break;
            };
            iterations += 1;
            if exact_duration {
                trial_grad[nv - 1] = 0.0;
            }
            let sv: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = dot(&sv, &yv);
            if sy > 1e-12 * dot(&yv, &yv).sqrt() * dot(&sv, &sv).sqrt() && sy > 0.0 {
                if memory.len() == LBFGS_MEMORY {
                    memory.remove(0);
                }
                memory.push((sv, yv, 1.0 / sy));
            }
            let slot = it % STALL_WINDOW;
            let decrease = history[slot] - e.objective;
            history[slot] = e.objective;
            z = trial;
            core::mem::swap(&mut grad, &mut trial_grad);
            cur = e;
            consider(&cur, &z, &mut best);
            if s.record_log {
                log.push(IterateRecord {
                    round,
                    iteration: it,
                    mu,
                    objective: cur.objective,
                    penalty: cur.penalty,
                    tf: z[nv - 1],
                });
            }
            if decrease <= s.rel_tol * (1.0 + cur.objective.abs()) {
                break;
            }
        }
        if cur.max_violation <= s.constraint_tol {
            break 'rounds;
        }
        mu *= s.mu_growth;
    }

    ev.polish_duration(&mut z);
    let trajectory = ev.trajectory(&z);
    let status = if diverged || z.iter().any(|v| !v.is_finite()) {
        TrajOptStatus::Diverged
    } else {
        validate(&trajectory, problem)
    };
    let cost = trajectory_cost(&trajectory, s.w1, s.w2);
    if status == TrajOptStatus::Valid && best.as_ref().is_none_or(|(c, _)| cost <= *c) {
        best = Some((cost, z.clone()));
    }
    let (best_feasible, best_feasible_cost) = match best {
        Some((_, bz)) => {
            let t = ev.trajectory(&bz);
            if validate(&t, problem) == TrajOptStatus::Valid {
                let c = trajectory_cost(&t, s.w1, s.w2);
                (Some(t), Some(c))
            } else {
                (None, None)
            }
        }
        None => (None, None),
    };
    TrajOptResult {
        trajectory,
        status,
        best_feasible,
        best_feasible_cost,
        cost,
        iterations,
        log,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_dof(vmax: f64) -> ManipulatorModel {
        ManipulatorModel::planar(&[0.5], vmax)
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_unit(32);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for k in 0..40 {
            let exact = 1.0 / (k as f64 + 1.0);
            let got: f64 = x.iter().zip(&w).map(|(u, w)| w * u.powi(k)).sum();
            assert!((got - exact).abs() < 1e-13, "degree {k}");
        }
    }

    #[test]
    fn stationary_problem_collapses_to_t_min() {
        let m = ManipulatorModel::default_arm();
        let q = m.home_config.clone();
        let p =
            TrajOptProblem::rest_to_rest(&m, &[], q.clone(), q.clone(), TrajOptSettings::default());
        let r = optimize(&p, None).unwrap();
        assert_eq!(r.status, TrajOptStatus::Valid);
        assert_eq!(r.trajectory.duration(), p.settings.t_min);
        let path = trajectory_cost(&r.trajectory, 0.0, 1.0);
        assert!(path < 1e-6, "{path}");
    }

    #[test]
    fn one_dof_respects_physics_lower_bound() {
        let m = one_dof(2.0);
        let p =
            TrajOptProblem::rest_to_rest(&m, &[], vec![0.0], vec![1.0], TrajOptSettings::default());
        let r = optimize(&p, None).unwrap();
        assert_eq!(r.status, TrajOptStatus::Valid);
        assert!(r.trajectory.duration() >= 0.5);
        // cubic rest-to-rest needs noticeably more than distance / vmax
        assert!(r.trajectory.duration() < 1.2, "{}", r.trajectory.duration());
    }

    #[test]
    fn endpoints_and_boundary_velocities_hold() {
        let m = ManipulatorModel::planar(&[0.5, 0.4], 3.0);
        let mut p = TrajOptProblem::rest_to_rest(
            &m,
            &[],
            vec![0.0, 0.2],
            vec![1.0, -0.5],
            TrajOptSettings::default(),
        );
        p.xdot0 = vec![0.5, -0.3];
        p.xdotf = vec![0.2, 0.1];
        let r = optimize(&p, None).unwrap();
        let t = &r.trajectory;
        assert_eq!(t.start(), &p.x0[..]);
        assert_eq!(t.end(), &p.xf[..]);
        let d = t.derivative().unwrap();
        let v0 = d.evaluate(t.t0()).unwrap();
        let vf = d.evaluate(t.tf()).unwrap();
        for j in 0..2 {
            assert!((v0[j] - p.xdot0[j]).abs() < 1e-6);
            assert!((vf[j] - p.xdotf[j]).abs() < 1e-6);
        }
    }

    fn random_problem<'a>(
        rng: &mut ChaCha8Rng,
        model: &'a ManipulatorModel,
        obstacles: &'a [Obstacle],
    ) -> TrajOptProblem<'a> {
        loop {
            let mut q = || -> JointVec {
                model
                    .joint_limits
                    .iter()
                    .map(|&(lo, hi)| rng.gen_range(lo * 0.6..hi * 0.6))
                    .collect()
            };
            let (x0, xf) = (q(), q());
            let mut p =
                TrajOptProblem::rest_to_rest(model, obstacles, x0, xf, TrajOptSettings::default());
            p.xdot0 = model
                .velocity_limits
                .iter()
                .map(|v| rng.gen_range(-0.2..0.2) * v)
                .collect();
            if p.check().is_ok() {
                return p;
            }
        }
    }

    fn rel_error(a: &[f64], f: &[f64]) -> f64 {
        let num = a
            .iter()
            .zip(f)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let den = f.iter().map(|v| v.abs()).fold(0.0, f64::max);
        num / den.max(1e-12)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let m = ManipulatorModel::default_arm();
        let obstacles = [
            Obstacle::pole(Vec3::new(0.55, 0.1, 0.0), 0.06, 1.6),
            Obstacle::Cuboid {
                center: Vec3::new(0.3, -0.5, 0.6),
                half_extents: Vec3::new(0.15, 0.1, 0.2),
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let p = random_problem(&mut rng, &m, &obstacles);
            let ev = Evaluator::new(&p).unwrap();
            let mut z = ev.linear_guess();
            for v in z.iter_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
            let last = z.len() - 1;
            z[last] = rng.gen_range(0.2..0.8);
            let mu = 100.0;
            let mut g = vec![0.0; z.len()];
            ev.evaluate(&z, mu, Some(&mut g));
            let h = 1e-6;
            let fd: Vec<f64> = (0..z.len())
                .map(|k| {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[k] += h;
                    zm[k] -= h;
                    (ev.objective(&zp, mu) - ev.objective(&zm, mu)) / (2.0 * h)
                })
                .collect();
            let err = rel_error(&g, &fd);
            assert!(err < 1e-4, "relative gradient error {err}");
        }
    }

    #[test]
    fn outer_rounds_are_monotone_and_cache_feasible() {
        let m = ManipulatorModel::default_arm();
        // pole in the middle of a base rotation sweep
        let obstacles = [Obstacle::pole(Vec3::new(0.495, 0.339, 0.0), 0.05, 1.6)];
        let mut settings = TrajOptSettings {
            record_log: true,
            ..Default::default()
        };
        settings.n_check = 50;
        let x0 = m.home_config.clone();
        let mut xf = x0.clone();
        xf[0] = 1.2;
        let p = TrajOptProblem::rest_to_rest(&m, &obstacles, x0, xf, settings);
        let r = optimize(&p, None).unwrap();
        assert!(!r.log.is_empty());
        for w in r.log.windows(2) {
            if w[0].round == w[1].round {
                assert!(w[1].objective <= w[0].objective);
            }
        }
        if r.status == TrajOptStatus::Valid {
            assert!(r.best_feasible.is_some());
        }
        assert!(r.format_log().lines().count() == r.log.len());
    }

    #[test]
    fn weight_scaling_leaves_argmin_unchanged() {
        let m = ManipulatorModel::planar(&[0.5, 0.4], 3.0);
        let base = TrajOptProblem::rest_to_rest(
            &m,
            &[],
            vec![0.0, 0.2],
            vec![1.0, -0.5],
            TrajOptSettings::default(),
        );
        let mut scaled = base.clone();
        scaled.settings.w1 *= 7.0;
        scaled.settings.w2 *= 7.0;
        let a = optimize(&base, None).unwrap();
        let b = optimize(&scaled, None).unwrap();
        assert!((a.trajectory.duration() - b.trajectory.duration()).abs() < 1e-4);
        for (x, y) in a
            .trajectory
            .control_flat()
            .iter()
            .zip(b.trajectory.control_flat())
        {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn validate_cases() {
        let m = one_dof(2.0);
        let p =
            TrajOptProblem::rest_to_rest(&m, &[], vec![0.0], vec![0.0], TrajOptSettings::default());
        let c = BSplineTrajectory::constant(&[0.3], 3, 0.0, 1.0).unwrap();
        assert_eq!(validate(&c, &p), TrajOptStatus::Valid);
        let ramp =
            BSplineTrajectory::new(1, vec![0.0, 0.0, 0.5, 0.5], &[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(validate(&ramp, &p), TrajOptStatus::DynamicViolation);
    }

    #[test]
    fn validate_detects_pass_through_pole() {
        let m = ManipulatorModel::planar(&[1.0, 1.0], 3.0);
        // the outer link sweeps through (1.9, 0) as joint 0 goes from -0.6
        // to 0.6 rad
        let pole = [Obstacle::pole(Vec3::new(1.9, 0.0, -0.5), 0.05, 1.0)];
        let p = TrajOptProblem::rest_to_rest(
            &m,
            &pole,
            vec![-0.6, 0.0],
            vec![0.6, 0.0],
            TrajOptSettings::default(),
        );
        let straight = BSplineTrajectory::new(
            1,
            vec![0.0, 0.0, 2.0, 2.0],
            &[vec![-0.6, 0.0], vec![0.6, 0.0]],
        )
        .unwrap();
        // dense oracle
        let hit = (0..=1000).any(|k| {
            let q = straight.evaluate(2.0 * k as f64 / 1000.0).unwrap();
            m.in_collision(&q, &pole)
        });
        assert!(hit);
        assert_eq!(validate(&straight, &p), TrajOptStatus::Collision);
    }

    #[test]
    fn warm_start_cases() {
        let m = ManipulatorModel::planar(&[0.5, 0.4], 3.0);
        let q = vec![0.3, -0.2];
        let c = BSplineTrajectory::constant(&q, 3, 0.0, 0.5).unwrap();
        let p =
            TrajOptProblem::rest_to_rest(&m, &[], q.clone(), q.clone(), TrajOptSettings::default());
        let r = optimize_with_warm_start(&c, &c, &p).unwrap();
        assert_eq!(r.trajectory.duration(), p.settings.t_min);
        for k in 0..r.trajectory.num_control() {
            for (a, b) in r.trajectory.control_point(k).iter().zip(&q) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let other = BSplineTrajectory::constant(&[0.4, -0.2], 3, 0.0, 0.5).unwrap();
        assert!(matches!(
            optimize_with_warm_start(&c, &other, &p),
            Err(TrajOptError::MismatchedJunction { .. })
        ));
    }

    #[test]
    fn warm_start_no_worse_than_cold_start() {
        let m = ManipulatorModel::default_arm();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut q = || -> JointVec {
            m.joint_limits
                .iter()
                .map(|&(lo, hi)| rng.gen_range(lo * 0.5..hi * 0.5))
                .collect()
        };
        // run both to convergence; default tolerances stop within ~1e-4
        let settings = TrajOptSettings {
            rel_tol: 1e-13,
            inner_iters: 2000,
            constraint_tol: 1e-9,
            ..Default::default()
        };
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..20 {
            let (a, b, c) = (q(), q(), q());
            let leg = |x: &JointVec, y: &JointVec| {
                let p = TrajOptProblem::rest_to_rest(&m, &[], x.clone(), y.clone(), settings);
                optimize(&p, None).unwrap().usable().unwrap().0.clone()
            };
            let (prefix, suffix) = (leg(&a, &b), leg(&b, &c));
            let p = TrajOptProblem::rest_to_rest(&m, &[], a, c, settings);
            let warm = optimize_with_warm_start(&prefix, &suffix, &p).unwrap();
            let cold = optimize(&p, None).unwrap();
            let (wc, cc) = (warm.usable().unwrap().1, cold.usable().unwrap().1);
            worst = worst.max(wc - cc);
        }
        assert!(worst <= 1e-9, "warm start exceeded cold start by {worst}");
    }

    #[test]
    fn boundary_in_collision_rejected() {
        let m = ManipulatorModel::planar(&[1.0, 1.0], 3.0);
        let pole = [Obstacle::pole(Vec3::new(2.0, 0.0, -0.5), 0.1, 1.0)];
        let p = TrajOptProblem::rest_to_rest(
            &m,
            &pole,
            vec![0.0, 0.0],
            vec![0.5, 0.0],
            TrajOptSettings::default(),
        );
        assert!(matches!(
            optimize(&p, None),
            Err(TrajOptError::InfeasibleBoundary(_))
        ));
    }
}
