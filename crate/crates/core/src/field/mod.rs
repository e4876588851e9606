//! Guidance vector field around a parametric path with projected obstacle repulsion.

mod path;
mod registry;

pub use path::ParametricPath;
pub use registry::{ObstacleRegistry, RegisteredObstacle, MERGE_RADIUS};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::control::PositionReference;
use crate::error::{Result, SimError};
use crate::math::{try_unit, wrap_angle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub kappa_p: f64,
    pub kappa_v: f64,
    pub kappa_c: f64,
    /// Field speed (m/s).
    #[serde(rename = "v_gf_mps")]
    pub v_gf: f64,
    /// Coarse samples for the nearest-point search.
    pub samples: usize,
    pub newton_iterations: usize,
    /// Distance floor (m) for the singular terms.
    #[serde(rename = "eps_reg_m")]
    pub eps_reg: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { kappa_p: 10.0, kappa_v: 0.1, kappa_c: 2.5, v_gf: 1.0, samples: 10, newton_iterations: 3, eps_reg: 1e-3 }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.kappa_p, self.kappa_v, self.kappa_c, self.v_gf, self.eps_reg];
        if pos.iter().all(|x| x.is_finite() && *x > 0.0) && self.samples >= 2 {
            Ok(())
        } else {
            Err(SimError::InvalidParameter("field gains must be > 0 and samples >= 2".into()))
        }
    }
}

/// One damped Newton iterate on `|h(tau) - x|^2`, step clamped to `max_step`.
pub fn newton_step(path: &ParametricPath, x: &Vector3<f64>, tau: f64, max_step: f64) -> f64 {
    let diff = path.h(tau) - x;
    let d1 = path.dh(tau);
    let num = diff.dot(&d1);
    let den = d1.norm_squared() + diff.dot(&path.ddh(tau));
    if den.abs() <= 1e-12 {
        return tau;
    }
    let step = (num / den).clamp(-max_step, max_step);
    path.normalize_tau(tau - step)
}

fn coarse_taus(path: &ParametricPath, n: usize) -> impl Iterator<Item = f64> {
    let denom = if path.is_closed() { n } else { n - 1 } as f64;
    (0..n).map(move |k| k as f64 / denom)
}

/// Parameter of the nearest path point: brute force over `samples` uniform
/// parameters, refined by `newton_iterations` damped Newton steps. The best
/// candidate seen is returned.
pub fn nearest_point(path: &ParametricPath, x: &Vector3<f64>, cfg: &FieldConfig) -> f64 {
    let n = cfg.samples.max(2);
    let dist2 = |t: f64| (path.h(t) - x).norm_squared();
    let (mut best, mut best_d) = coarse_taus(path, n)
        .map(|t| (t, dist2(t)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("n >= 2");
    let mut tau = best;
    for _ in 0..cfg.newton_iterations {
        tau = newton_step(path, x, tau, 1.0 / n as f64);
        let d = dist2(tau);
        // Near convergence the distances tie to rounding; prefer the Newton iterate.
        if d <= best_d + 1e-13 * (1.0 + best_d) {
            best = tau;
            best_d = d;
        }
    }
    best
}

/// Orthonormal pair spanning the plane with the given normal. Falls back to
/// `fallback` as the normal when `normal` is degenerate.
pub fn tangent_basis(normal: &Vector3<f64>, fallback: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = try_unit(normal, 1e-12)
        .or_else(|| try_unit(fallback, 1e-12))
        .unwrap_or_else(Vector3::z);
    let k = n.iamin();
    let e = Vector3::from_fn(|i, _| if i == k { 1.0 } else { 0.0 });
    let t1 = (e - n * n.dot(&e)).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Inverse-square repulsion from `c`, projected onto the plane of `basis`.
pub fn collision_contribution(
    x: &Vector3<f64>,
    c: &Vector3<f64>,
    basis: &(Vector3<f64>, Vector3<f64>),
    kappa_c: f64,
    eps_reg: f64,
) -> Vector3<f64> {
    let d = x - c;
    let r = d.norm();
    if r == 0.0 {
        return Vector3::zeros();
    }
    let rep = d * (kappa_c / (r * r.max(eps_reg).powi(2)));
    let (t1, t2) = basis;
    t1 * rep.dot(t1) + t2 * rep.dot(t2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldEval {
    pub g: Vector3<f64>,
    pub tau: f64,
    /// Field direction without obstacle terms (unit, or zero).
    pub attraction: Vector3<f64>,
    pub repulsion: Vector3<f64>,
}

/// Two-pass evaluation: path terms first, then obstacle terms projected
/// orthogonal to the path-term direction, then normalisation to `v_gf`.
pub fn evaluate_field(
    x: &Vector3<f64>,
    path: &ParametricPath,
    cfg: &FieldConfig,
    registry: &ObstacleRegistry,
) -> FieldEval {
    let tau = nearest_point(path, x, cfg);
    let diff = path.h(tau) - x;
    let d1 = path.dh(tau);
    let base = diff * cfg.kappa_p + d1 * (cfg.kappa_v / diff.norm().max(cfg.eps_reg));
    let attraction = try_unit(&base, 1e-12).unwrap_or_else(Vector3::zeros);
    let basis = tangent_basis(&attraction, &d1);
    let repulsion = registry
        .positions()
        .map(|c| collision_contribution(x, c, &basis, cfg.kappa_c, cfg.eps_reg))
        .fold(Vector3::zeros(), |a, b| a + b);
    let sum = base + repulsion;
    let g = try_unit(&sum, 1e-12).map_or_else(Vector3::zeros, |u| u * cfg.v_gf);
    FieldEval { g, tau, attraction, repulsion }
}

pub fn field(x: &Vector3<f64>, path: &ParametricPath, cfg: &FieldConfig, registry: &ObstacleRegistry) -> Vector3<f64> {
    evaluate_field(x, path, cfg, registry).g
}

/// Moves the reference point along the field: `p += dt g(p)`, `v = g(p)`, heading along `v`.
pub fn advance_reference(
    reference: &PositionReference,
    path: &ParametricPath,
    cfg: &FieldConfig,
    registry: &ObstacleRegistry,
    dt: f64,
) -> Result<PositionReference> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SimError::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let g = field(&reference.p_des, path, cfg, registry);
    let psi_des = if g.x.hypot(g.y) > 1e-9 { wrap_angle(g.y.atan2(g.x)) } else { reference.psi_des };
    Ok(PositionReference { p_des: reference.p_des + g * dt, v_des: g, a_des: Vector3::zeros(), psi_des })
}

/// `V = |x - h(tau_min)|^2 / 2`.
pub fn lyapunov_value(x: &Vector3<f64>, path: &ParametricPath, cfg: &FieldConfig) -> f64 {
    let tau = nearest_point(path, x, cfg);
    0.5 * (x - path.h(tau)).norm_squared()
}

/// Samples of an integral curve of the field: `(t, x, V)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample {
    pub t: f64,
    pub x: Vector3<f64>,
    pub v: f64,
}

/// Integrates `x' = g(x)` with classical RK4.
pub fn integral_curve(
    x0: Vector3<f64>,
    path: &ParametricPath,
    cfg: &FieldConfig,
    registry: &ObstacleRegistry,
    dt: f64,
    duration: f64,
) -> Vec<CurveSample> {
    let steps = (duration / dt).round() as usize;
    let g = |x: &Vector3<f64>| field(x, path, cfg, registry);
    let mut x = x0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(CurveSample { t: 0.0, x, v: lyapunov_value(&x, path, cfg) });
    for k in 1..=steps {
        let k1 = g(&x);
        let k2 = g(&(x + k1 * (dt / 2.0)));
        let k3 = g(&(x + k2 * (dt / 2.0)));
        let k4 = g(&(x + k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        out.push(CurveSample { t: k as f64 * dt, x, v: lyapunov_value(&x, path, cfg) });
    }
    out
}

/// Least-squares slope of `-ln V` against time over samples with `V > floor`.
pub fn decay_rate(curve: &[CurveSample], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = curve.iter().filter(|s| s.v > floor).map(|s| (s.t, s.v.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (sty, stt) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt).powi(2)));
    (stt > 0.0).then(|| -sty / stt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn circle() -> ParametricPath {
        ParametricPath::horizontal_ellipse(Vector3::zeros(), 1.0, 1.0)
    }

    fn ellipse() -> ParametricPath {
        ParametricPath::horizontal_ellipse(Vector3::new(0.0, 0.0, 1.2), 4.0, 2.5)
    }

    fn circular_gap(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(1.0);
        d.min(1.0 - d)
    }

    #[test]
    fn circle_symmetry_cases() {
        let cfg = FieldConfig::default();
        assert!(circular_gap(nearest_point(&circle(), &Vector3::new(2.0, 0.0, 0.0), &cfg), 0.0) < 1e-12);
        assert!((nearest_point(&circle(), &Vector3::new(0.0, 2.0, 0.0), &cfg) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn newton_fixed_point_and_line_exactness() {
        let e = ellipse();
        let x = e.h(0.3);
        assert_eq!(newton_step(&e, &x, 0.3, 0.1), 0.3);
        let line = ParametricPath::Line { start: Vector3::zeros(), end: Vector3::new(2.0, 1.0, 0.0) };
        let q = Vector3::new(1.0, 2.0, 3.0);
        let exact = q.dot(&Vector3::new(2.0, 1.0, 0.0)) / 5.0;
        for start in [0.0, 0.3, 0.9] {
            assert_relative_eq!(newton_step(&line, &q, start, 1.0), exact, epsilon = 1e-14);
        }
    }

    /// Queries within a band around the ellipse, away from the focal
    /// region where two distant parameters are nearly equidistant.
    fn queries(path: &ParametricPath, n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let t: f64 = rng.random();
                let off = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                path.h(t) + off
            })
            .collect()
    }

    #[test]
    fn nearest_point_matches_dense_oracle() {
        let e = ellipse();
        let cfg = FieldConfig::default();
        for x in queries(&e, 200, 5) {
            let tau = nearest_point(&e, &x, &cfg);
            let oracle = (0..100_000)
                .map(|k| k as f64 / 1e5)
                .min_by(|a, b| (e.h(*a) - x).norm_squared().total_cmp(&(e.h(*b) - x).norm_squared()))
                .unwrap();
            assert!(circular_gap(tau, oracle) <= 1e-4, "x={x:?} tau={tau} oracle={oracle}");
        }
    }

    #[test]
    fn first_order_residual_with_five_iterations() {
        let e = ellipse();
        let cfg = FieldConfig { newton_iterations: 5, ..FieldConfig::default() };
        for x in queries(&e, 200, 7) {
            let tau = nearest_point(&e, &x, &cfg);
            let diff = e.h(tau) - x;
            let resid = diff.dot(&e.dh(tau)).abs();
            assert!(resid <= 1e-8 * diff.norm() * e.dh(tau).norm(), "residual {resid}");
        }
    }

    #[test]
    fn refinement_never_worse_than_coarse() {
        let e = ellipse();
        let cfg = FieldConfig::default();
        let coarse = FieldConfig { newton_iterations: 0, ..cfg };
        for x in queries(&e, 200, 6) {
            assert!(lyapunov_value(&x, &e, &cfg) <= lyapunov_value(&x, &e, &coarse));
        }
    }

    #[test]
    fn lyapunov_cases() {
        let e = ellipse();
        let cfg = FieldConfig::default();
        assert!(lyapunov_value(&e.h(0.3), &e, &cfg) < 1e-24);
        // Outward normal at tau = 0 is +x; a point 2 m out has V = 2.
        assert_relative_eq!(lyapunov_value(&(e.h(0.0) + Vector3::new(2.0, 0.0, 0.0)), &e, &cfg), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn tangent_basis_horizontal_case() {
        let (t1, t2) = tangent_basis(&Vector3::z(), &Vector3::x());
        assert!(t1.z.abs() < 1e-15 && t2.z.abs() < 1e-15);
        assert_relative_eq!(t1.dot(&t2), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn tangent_basis_degenerate_falls_back() {
        let (t1, t2) = tangent_basis(&Vector3::zeros(), &Vector3::new(0.0, 3.0, 0.0));
        assert!(t1.y.abs() < 1e-15 && t2.y.abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn tangent_basis_is_orthonormal(n in prop::array::uniform3(-1.0f64..1.0)) {
            let n = Vector3::from(n);
            prop_assume!(n.norm() > 1e-3);
            let u = n.normalize();
            let (t1, t2) = tangent_basis(&n, &Vector3::x());
            prop_assert!((t1.norm() - 1.0).abs() <= 1e-12 && (t2.norm() - 1.0).abs() <= 1e-12);
            prop_assert!(t1.dot(&t2).abs() <= 1e-12 && t1.dot(&u).abs() <= 1e-12 && t2.dot(&u).abs() <= 1e-12);
        }

        #[test]
        fn field_has_constant_speed(x in prop::array::uniform3(-6.0f64..6.0)) {
            let e = ellipse();
            let cfg = FieldConfig::default();
            let mut reg = ObstacleRegistry::new();
            reg.register(Vector3::new(4.0, 0.0, 1.2), 0.0);
            reg.register(Vector3::new(0.0, 2.5, 1.0), 0.0);
            let ev = evaluate_field(&Vector3::from(x), &e, &cfg, &reg);
            prop_assert!((ev.g.norm() - cfg.v_gf).abs() <= 1e-12);
            prop_assert!(ev.repulsion.dot(&ev.attraction).abs() <= 1e-10 * (1.0 + ev.repulsion.norm()));
        }
    }

    #[test]
    fn projector_is_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let proj = |n: &Vector3<f64>| {
            let (t1, t2) = tangent_basis(n, &Vector3::x());
            t1 * t1.transpose() + t2 * t2.transpose()
        };
        for _ in 0..1000 {
            let n = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let dn = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-6;
            if n.norm() < 0.1 {
                continue;
            }
            assert!((proj(&n) - proj(&(n + dn))).abs().max() <= 1e-4);
        }
    }

    #[test]
    fn collision_contribution_cases() {
        let basis = (Vector3::x(), Vector3::y());
        let c = Vector3::zeros();
        let inplane = collision_contribution(&Vector3::new(1.0, 0.0, 0.0), &c, &basis, 2.5, 1e-3);
        assert_relative_eq!(inplane.norm(), 2.5, epsilon = 1e-15);
        assert_eq!(collision_contribution(&Vector3::new(0.0, 0.0, 3.0), &c, &basis, 2.5, 1e-3), Vector3::zeros());
        let near = collision_contribution(&Vector3::new(10.0, 0.0, 0.0), &c, &basis, 2.5, 1e-3).norm();
        let far = collision_contribution(&Vector3::new(20.0, 0.0, 0.0), &c, &basis, 2.5, 1e-3).norm();
        assert_relative_eq!(near / far, 4.0, epsilon = 1e-12);
        // Inside the floor the magnitude is capped.
        let tiny = collision_contribution(&Vector3::new(1e-6, 0.0, 0.0), &c, &basis, 2.5, 1e-3).norm();
        assert_relative_eq!(tiny, 2.5 / 1e-6, max_relative = 1e-12);
    }

    #[test]
    fn field_far_and_on_path() {
        let e = ellipse();
        let cfg = FieldConfig::default();
        let reg = ObstacleRegistry::new();
        let x = Vector3::new(600.0, -400.0, 300.0);
        let ev = evaluate_field(&x, &e, &cfg, &reg);
        let attract = (e.h(ev.tau) - x).normalize();
        assert!((ev.g - attract).norm() < 1e-6);
        let on = e.h(0.37);
        let ev = evaluate_field(&on, &e, &cfg, &reg);
        assert!((ev.tau - 0.37).abs() < 1e-4);
        assert_relative_eq!(ev.g, e.dh(ev.tau).normalize() * cfg.v_gf, epsilon = 1e-6);
    }

    #[test]
    fn reference_update_cases() {
        let e = ellipse();
        let cfg = FieldConfig::default();
        let reg = ObstacleRegistry::new();
        let r0 = PositionReference::hold(e.h(0.0), 0.0);
        let r1 = advance_reference(&r0, &e, &cfg, &reg, 0.002).unwrap();
        // At tau = 0 the tangent is +y.
        assert_relative_eq!(r1.p_des, r0.p_des + Vector3::new(0.0, 0.002, 0.0), epsilon = 1e-9);
        assert_relative_eq!(r1.psi_des, std::f64::consts::FRAC_PI_2, epsilon = 1e-9);
        let line = ParametricPath::Line { start: Vector3::zeros(), end: Vector3::new(10.0, 10.0, 0.0) };
        let r = advance_reference(&PositionReference::hold(Vector3::new(1.0, 1.0, 0.0), 0.0), &line, &cfg, &reg, 0.01).unwrap();
        assert_relative_eq!(r.psi_des, std::f64::consts::FRAC_PI_4, epsilon = 1e-9);
        let xline = ParametricPath::Line { start: Vector3::zeros(), end: Vector3::new(10.0, 0.0, 0.0) };
        let r = advance_reference(&PositionReference::hold(Vector3::new(1.0, 0.0, 0.0), 1.0), &xline, &cfg, &reg, 0.01).unwrap();
        assert_eq!(r.psi_des, 0.0);
        assert!(advance_reference(&r, &xline, &cfg, &reg, 0.0).is_err());
    }

    #[test]
    fn lyapunov_decreases_along_curves() {
        let e = ParametricPath::horizontal_ellipse(Vector3::new(0.0, 0.0, 1.2), 2.0, 1.25);
        let cfg = FieldConfig::default();
        let curve = integral_curve(Vector3::new(2.0, -2.0, 3.0), &e, &cfg, &ObstacleRegistry::new(), 0.002, 10.0);
        for w in curve.windows(2) {
            assert!(w[1].v <= w[0].v);
        }
        assert!(curve.last().unwrap().v < 1e-4);
        assert!(decay_rate(&curve, 1e-12).unwrap() > 0.0);
    }
}
