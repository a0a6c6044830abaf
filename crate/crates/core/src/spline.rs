//! Clamped B-spline trajectories in joint space.
//!
//! Degree convention: a degree-`p` basis function `N_{i,p}` is built from
//! degree-`p-1` functions with denominators `T[i+p] - T[i]` and
//! `T[i+p+1] - T[i+1]`. Any term whose denominator is zero contributes 0.
//! The last knot span is closed, so a clamped curve interpolates its last
//! control point exactly at `tf`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

/// Errors raised by spline construction and evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplineError {
    #[error("time {t} outside trajectory domain [{t0}, {tf}]")]
    Domain { t: f64, t0: f64, tf: f64 },
    #[error("cannot differentiate a degree-0 spline")]
    Degree,
    #[error("degree {degree} needs at least {needed} control points, got {got}")]
    Arity {
        degree: usize,
        needed: usize,
        got: usize,
    },
    #[error("invalid spline: {0}")]
    Invalid(&'static str),
}

/// Cox-de Boor recursion for `N_{i,p}(t)` over `knots`.
///
/// Exponential in `p`; used as the reference definition. Trajectory
/// evaluation goes through [`basis_functions`] instead.
pub fn basis(i: usize, p: usize, t: f64, knots: &[f64]) -> f64 {
    if i + p + 1 >= knots.len() {
        return 0.0;
    }
    if p == 0 {
        let (lo, hi) = (knots[i], knots[i + 1]);
        let last = knots[knots.len() - 1];
        if lo <= t && t < hi {
            return 1.0;
        }
        // closed last span
        if t == last && lo < hi && hi == last {
            return 1.0;
        }
        return 0.0;
    }
    let mut value = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 != 0.0 {
        value += (t - knots[i]) / d1 * basis(i, p - 1, t, knots);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 != 0.0 {
        value += (knots[i + p + 1] - t) / d2 * basis(i + 1, p - 1, t, knots);
    }
    value
}

/// Index `k` of the knot span containing `t`, with `p <= k < num_ctrl`.
///
/// `t == knots[num_ctrl]` maps to the last non-empty span.
pub fn find_span(num_ctrl: usize, p: usize, t: f64, knots: &[f64]) -> usize {
    if t >= knots[num_ctrl] {
        let mut k = num_ctrl - 1;
        while k > p && knots[k] >= knots[k + 1] {
            k -= 1;
        }
        return k;
    }
    if t <= knots[p] {
        let mut k = p;
        while k + 1 < num_ctrl && knots[k + 1] <= t {
            k += 1;
        }
        return k;
    }
    let (mut lo, mut hi) = (p, num_ctrl);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The `p + 1` non-zero basis values `N_{span-p..=span, p}(t)` written into `out`.
pub fn basis_functions(span: usize, p: usize, t: f64, knots: &[f64], out: &mut [f64]) {
    debug_assert!(out.len() > p);
    let mut left = [0.0f64; 8];
    let mut right = [0.0f64; 8];
    assert!(p < 8, "degree above 7 is not supported");
    out[0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { out[r] / denom } else { 0.0 };
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

/// Clamped knot vector with uniformly spaced interior knots on `[t0, tf]`.
pub fn clamped_uniform_knots(
    num_ctrl: usize,
    p: usize,
    t0: f64,
    tf: f64,
) -> Result<Vec<f64>, SplineError> {
    if num_ctrl < p + 1 {
        return Err(SplineError::Arity {
            degree: p,
            needed: p + 1,
            got: num_ctrl,
        });
    }
    let spans = num_ctrl - p;
    let mut knots = Vec::with_capacity(num_ctrl + p + 1);
    knots.extend(core::iter::repeat(t0).take(p + 1));
    for k in 1..spans {
        knots.push(t0 + (tf - t0) * k as f64 / spans as f64);
    }
    knots.extend(core::iter::repeat(tf).take(p + 1));
    Ok(knots)
}

/// A clamped B-spline `q(t) = sum_i P_i N_{i,p}(t)` over `[t0, tf]`.
///
/// Control points are stored row-major, `dim` values per point.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineTrajectory {
    degree: usize,
    knots: Vec<f64>,
    control: Vec<f64>,
    dim: usize,
}

impl BSplineTrajectory {
    pub fn new(
        degree: usize,
        knots: Vec<f64>,
        control_points: &[Vec<f64>],
    ) -> Result<Self, SplineError> {
        let dim = control_points.first().map(Vec::len).unwrap_or(0);
        if control_points.iter().any(|c| c.len() != dim) {
            return Err(SplineError::Invalid("control points differ in dimension"));
        }
        let control = control_points.iter().flatten().copied().collect();
        Self::from_flat(degree, knots, dim, control)
    }

    pub fn from_flat(
        degree: usize,
        knots: Vec<f64>,
        dim: usize,
        control: Vec<f64>,
    ) -> Result<Self, SplineError> {
        if dim == 0 || control.len() % dim != 0 {
            return Err(SplineError::Invalid(
                "control buffer does not match dimension",
            ));
        }
        let n = control.len() / dim;
        if n < degree + 1 {
            return Err(SplineError::Arity {
                degree,
                needed: degree + 1,
                got: n,
            });
        }
        if knots.len() != n + degree + 1 {
            return Err(SplineError::Invalid(
                "knot count must equal control count + degree + 1",
            ));
        }
        if knots.iter().any(|k| !k.is_finite()) || control.iter().any(|c| !c.is_finite()) {
            return Err(SplineError::Invalid("non-finite knot or control value"));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(SplineError::Invalid("knots must be non-decreasing"));
        }
        let (t0, tf) = (knots[0], knots[knots.len() - 1]);
        if tf <= t0 {
            return Err(SplineError::Invalid("tf must exceed t0"));
        }
        let clamped_front = knots[..=degree].iter().all(|&k| k == t0);
        let clamped_back = knots[knots.len() - degree - 1..].iter().all(|&k| k == tf);
        if !clamped_front || !clamped_back {
            return Err(SplineError::Invalid("knot vector is not clamped"));
        }
        Ok(Self {
            degree,
            knots,
            control,
            dim,
        })
    }

    /// Constant trajectory holding `q` over `[t0, tf]`.
    pub fn constant(q: &[f64], degree: usize, t0: f64, tf: f64) -> Result<Self, SplineError> {
        let n = degree + 1;
        let knots = clamped_uniform_knots(n, degree, t0, tf)?;
        let control = q.iter().copied().cycle().take(n * q.len()).collect();
        Self::from_flat(degree, knots, q.len(), control)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_control(&self) -> usize {
        self.control.len() / self.dim
    }

    pub fn control_point(&self, i: usize) -> &[f64] {
        &self.control[i * self.dim..(i + 1) * self.dim]
    }

    pub fn control_flat(&self) -> &[f64] {
        &self.control
    }

    pub fn t0(&self) -> f64 {
        self.knots[0]
    }

    pub fn tf(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    pub fn duration(&self) -> f64 {
        self.tf() - self.t0()
    }

    pub fn start(&self) -> &[f64] {
        self.control_point(0)
    }

    pub fn end(&self) -> &[f64] {
        self.control_point(self.num_control() - 1)
    }

    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>, SplineError> {
        let mut out = vec![0.0; self.dim];
        self.evaluate_into(t, &mut out)?;
        Ok(out)
    }

    pub fn evaluate_into(&self, t: f64, out: &mut [f64]) -> Result<(), SplineError> {
        let (t0, tf) = (self.t0(), self.tf());
        if !(t >= t0 && t <= tf) {
            return Err(SplineError::Domain { t, t0, tf });
        }
        self.eval_unchecked(t, out);
        Ok(())
    }

    /// Evaluates at `t` clamped into the domain.
    pub fn evaluate_clamped(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_unchecked(t.clamp(self.t0(), self.tf()), &mut out);
        out
    }

    fn eval_unchecked(&self, t: f64, out: &mut [f64]) {
        let p = self.degree;
        let n = self.num_control();
        // clamped ends interpolate exactly; the recursion can be 1 ulp off
        if t <= self.t0() || t >= self.tf() {
            let i = if t <= self.t0() { 0 } else { n - 1 };
            out.copy_from_slice(self.control_point(i));
            return;
        }
        let span = find_span(n, p, t, &self.knots);
        let mut values = [0.0f64; 8];
        basis_functions(span, p, t, &self.knots, &mut values);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &b) in values[..=p].iter().enumerate() {
            let cp = self.control_point(span - p + r);
            for (o, &c) in out.iter_mut().zip(cp) {
                *o += b * c;
            }
        }
    }

    /// Derivative spline of degree `p - 1` over the inner knot vector.
    pub fn derivative(&self) -> Result<Self, SplineError> {
        let p = self.degree;
        if p == 0 {
            return Err(SplineError::Degree);
        }
        let n = self.num_control();
        let dim = self.dim;
        let mut control = Vec::with_capacity((n - 1) * dim);
        for i in 0..n - 1 {
            let denom = self.knots[i + p + 1] - self.knots[i + 1];
            let (a, b) = (self.control_point(i), self.control_point(i + 1));
            for d in 0..dim {
                control.push(if denom != 0.0 {
                    p as f64 * (b[d] - a[d]) / denom
                } else {
                    0.0
                });
            }
        }
        let knots = self.knots[1..self.knots.len() - 1].to_vec();
        Self::from_flat(p - 1, knots, dim, control)
    }

    /// Same curve shifted to start at `t0`.
    pub fn shifted_to(&self, t0: f64) -> Self {
        let dt = t0 - self.t0();
        let mut out = self.clone();
        out.knots.iter_mut().for_each(|k| *k += dt);
        out
    }

    /// Per-axis min/max over the control polygon.
    pub fn control_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for i in 0..self.num_control() {
            for (d, &c) in self.control_point(i).iter().enumerate() {
                lo[d] = lo[d].min(c);
                hi[d] = hi[d].max(c);
            }
        }
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clamped(rng: &mut ChaCha8Rng, p: usize, n: usize) -> Vec<f64> {
        let mut interior: Vec<f64> = (0..n - p - 1).map(|_| rng.gen_range(0.0..1.0)).collect();
        interior.sort_by(f64::total_cmp);
        let mut knots = vec![0.0; p + 1];
        knots.extend(interior);
        knots.extend(core::iter::repeat(1.0).take(p + 1));
        knots
    }

    #[test]
    fn degree_zero_is_indicator() {
        let knots = [0.0, 0.5, 1.0];
        assert_eq!(basis(0, 0, 0.25, &knots), 1.0);
        assert_eq!(basis(0, 0, 0.5, &knots), 0.0);
        assert_eq!(basis(1, 0, 0.5, &knots), 1.0);
        // last span is closed
        assert_eq!(basis(1, 0, 1.0, &knots), 1.0);
        assert_eq!(basis(0, 0, 1.0, &knots), 0.0);
    }

    #[test]
    fn single_span_cubic_is_bernstein() {
        let knots = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        assert!((basis(0, 3, 0.5, &knots) - 0.125).abs() < 1e-15);
        assert!((basis(1, 3, 0.5, &knots) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn partition_of_unity_random_knots() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = rng.gen_range(0..=5);
            let n = rng.gen_range(p + 1..=12);
            let knots = random_clamped(&mut rng, p, n);
            for _ in 0..20 {
                let t: f64 = rng.gen_range(0.0..=1.0);
                let s: f64 = (0..n).map(|i| basis(i, p, t, &knots)).sum();
                assert!((s - 1.0).abs() < 1e-9, "p={p} n={n} t={t} sum={s}");
            }
        }
    }

    #[test]
    fn fast_basis_matches_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = rng.gen_range(0..=5);
            let n = rng.gen_range(p + 1..=12);
            let knots = random_clamped(&mut rng, p, n);
            let t: f64 = rng.gen_range(0.0..=1.0);
            let span = find_span(n, p, t, &knots);
            let mut vals = [0.0; 8];
            basis_functions(span, p, t, &knots, &mut vals);
            for i in 0..n {
                let expect = basis(i, p, t, &knots);
                let got = if i + p >= span && i <= span {
                    vals[i + p - span]
                } else {
                    0.0
                };
                assert!((expect - got).abs() < 1e-12, "i={i} p={p} t={t}");
            }
        }
    }

    #[test]
    fn local_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let knots = random_clamped(&mut rng, 3, 9);
        for i in 0..9 {
            for k in 0..=100 {
                let t = k as f64 / 100.0;
                if t < knots[i] || t > knots[i + 4] {
                    assert_eq!(basis(i, 3, t, &knots), 0.0);
                }
            }
        }
    }

    #[test]
    fn knot_vectors() {
        assert_eq!(
            clamped_uniform_knots(4, 3, 0.0, 1.0).unwrap(),
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(
            clamped_uniform_knots(5, 3, 0.0, 2.0).unwrap(),
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 2.0, 2.0]
        );
        assert!(matches!(
            clamped_uniform_knots(3, 3, 0.0, 1.0),
            Err(SplineError::Arity { .. })
        ));
    }

    #[test]
    fn constant_and_endpoints() {
        let c = [0.3, -1.2];
        let traj = BSplineTrajectory::new(
            3,
            clamped_uniform_knots(6, 3, 0.0, 2.0).unwrap(),
            &vec![c.to_vec(); 6],
        )
        .unwrap();
        for k in 0..=20 {
            let q = traj.evaluate(k as f64 * 0.1).unwrap();
            assert!((q[0] - c[0]).abs() < 1e-14 && (q[1] - c[1]).abs() < 1e-14);
        }
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let traj = BSplineTrajectory::new(3, clamped_uniform_knots(6, 3, 1.0, 3.0).unwrap(), &pts)
            .unwrap();
        assert_eq!(traj.evaluate(1.0).unwrap(), pts[0]);
        assert_eq!(traj.evaluate(3.0).unwrap(), pts[5]);
        assert!(matches!(
            traj.evaluate(3.0001),
            Err(SplineError::Domain { .. })
        ));
        assert!(matches!(
            traj.evaluate(0.9),
            Err(SplineError::Domain { .. })
        ));
    }

    #[test]
    fn bernstein_cubic_oracle() {
        // direct Bernstein evaluation: sum_i P_i C(3,i) t^i (1-t)^(3-i)
        let p = [0.0, 0.0, 1.0, 1.0];
        let t: f64 = 0.5;
        let coeff = [1.0, 3.0, 3.0, 1.0];
        let oracle: f64 = (0..4)
            .map(|i| p[i] * coeff[i] * t.powi(i as i32) * (1.0 - t).powi(3 - i as i32))
            .sum();
        let pts: Vec<Vec<f64>> = p.iter().map(|&v| vec![v]).collect();
        let traj = BSplineTrajectory::new(3, clamped_uniform_knots(4, 3, 0.0, 1.0).unwrap(), &pts)
            .unwrap();
        let got = traj.evaluate(0.5).unwrap()[0];
        assert!((oracle - 0.5).abs() < 1e-15);
        assert!((got - oracle).abs() < 1e-15);
    }

    #[test]
    fn derivative_cases() {
        let constant = BSplineTrajectory::constant(&[0.7, 0.1], 3, 0.0, 1.0).unwrap();
        let d = constant.derivative().unwrap();
        assert_eq!(d.degree(), 2);
        for k in 0..=10 {
            assert!(d
                .evaluate(k as f64 / 10.0)
                .unwrap()
                .iter()
                .all(|v| v.abs() < 1e-15));
        }
        let ramp = BSplineTrajectory::new(
            1,
            clamped_uniform_knots(2, 1, 0.0, 1.0).unwrap(),
            &[vec![0.0], vec![1.0]],
        )
        .unwrap();
        let d = ramp.derivative().unwrap();
        for k in 0..=10 {
            assert!((d.evaluate(k as f64 / 10.0).unwrap()[0] - 1.0).abs() < 1e-15);
        }
        let deg0 = d.derivative();
        assert_eq!(deg0, Err(SplineError::Degree));
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.gen_range(4..=10);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let tf = rng.gen_range(0.2..3.0);
            let traj =
                BSplineTrajectory::new(3, clamped_uniform_knots(n, 3, 0.0, tf).unwrap(), &pts)
                    .unwrap();
            let d = traj.derivative().unwrap();
            let h = 1e-5;
            for k in 0..100 {
                let t = 2.0 * h + (tf - 4.0 * h) * k as f64 / 99.0;
                let a = d.evaluate(t).unwrap();
                let plus = traj.evaluate(t + h).unwrap();
                let minus = traj.evaluate(t - h).unwrap();
                for j in 0..3 {
                    let fd = (plus[j] - minus[j]) / (2.0 * h);
                    assert!((a[j] - fd).abs() < 1e-5 * (1.0 + a[j].abs()));
                }
            }
        }
    }

    #[test]
    fn rejects_unclamped_and_bad_lengths() {
        let pts = vec![vec![0.0]; 4];
        assert!(
            BSplineTrajectory::new(3, vec![0.0, 0.0, 0.0, 0.1, 1.0, 1.0, 1.0, 1.0], &pts).is_err()
        );
        assert!(BSplineTrajectory::new(3, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0], &pts).is_err());
        assert!(BSplineTrajectory::new(3, vec![0.0; 8], &pts).is_err());
    }

    proptest::proptest! {
        #[test]
        fn convex_hull_holds(seed in 0u64..5000, t in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.gen_range(1..=5);
            let n = rng.gen_range(p + 1..=12);
            let knots = random_clamped(&mut rng, p, n);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
            let traj = BSplineTrajectory::new(p, knots, &pts).unwrap();
            let q = traj.evaluate(t).unwrap();
            let (lo, hi) = traj.control_bounds();
            for d in 0..2 {
                proptest::prop_assert!(q[d] >= lo[d] - 1e-12 && q[d] <= hi[d] + 1e-12);
            }
        }

        #[test]
        fn clamped_ends_are_exact(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.gen_range(1..=5);
            let n = rng.gen_range(p + 1..=12);
            let knots = random_clamped(&mut rng, p, n);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
            let traj = BSplineTrajectory::new(p, knots, &pts).unwrap();
            proptest::prop_assert_eq!(traj.evaluate(traj.t0()).unwrap(), pts[0].clone());
            proptest::prop_assert_eq!(traj.evaluate(traj.tf()).unwrap(), pts[n - 1].clone());
        }
    }
}
