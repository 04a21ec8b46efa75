//! Interfered fluid dynamical system (IFDS) flow fields.
//!
//! A goal-converging initial flow is deformed around convex obstacles by a
//! weighted sum of per-obstacle disturbance matrices. Integrating the
//! deformed flow with explicit Euler steps yields a smooth trajectory that
//! slides along obstacle surfaces instead of penetrating them.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Distance below which a point counts as sitting on the goal.
pub const GOAL_TOLERANCE: f64 = 1e-9;
/// Points with `gamma >= 1 - SURFACE_TOLERANCE` are treated as on or outside the surface.
pub const SURFACE_TOLERANCE: f64 = 1e-9;
/// Value substituted for `gamma` when a flow query lands inside an obstacle.
pub const INSIDE_GAMMA: f64 = 1.0 + 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("invalid obstacle shape: {0}")]
    InvalidShape(String),
    #[error("radial normal vanishes at {0:?}")]
    DegenerateNormal([f64; 3]),
    #[error("IFDS parameter `{0}` must be positive and finite")]
    InvalidParam(&'static str),
}

/// Superquadric obstacle `sum_i ((x_i - c_i) / a_i)^(2 e_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleShape {
    pub center: Vec3,
    pub semi_axes: Vec3,
    pub exponents: Vec3,
}

impl ObstacleShape {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Self {
            center,
            semi_axes: Vec3::repeat(radius),
            exponents: Vec3::repeat(1.0),
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(FlowError::InvalidShape("center must be finite".into()));
        }
        if !self.semi_axes.iter().all(|&a| a.is_finite() && a > 0.0) {
            return Err(FlowError::InvalidShape("semi-axes must be positive".into()));
        }
        if !self.exponents.iter().all(|&e| e.is_finite() && e >= 0.5) {
            return Err(FlowError::InvalidShape("exponents must be >= 0.5".into()));
        }
        Ok(())
    }

    /// Radius of the smallest center-anchored sphere containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        self.semi_axes.max()
    }

    /// Same shape with every semi-axis grown by `margin`.
    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            semi_axes: self.semi_axes.add_scalar(margin),
            ..*self
        }
    }

    pub fn with_center(&self, center: Vec3) -> Self {
        Self { center, ..*self }
    }
}

/// Response coefficients, tangential direction and integration constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IfdsParams {
    /// Repulsive response coefficient.
    pub rho0: f64,
    /// Tangential response coefficient.
    pub sigma0: f64,
    /// Tangential direction angle, applied to every obstacle.
    pub theta: f64,
    /// Decay constant of the obstacle speed threat.
    pub upsilon: f64,
    /// Speed of the initial flow.
    pub convergence_speed: f64,
    pub dt: f64,
}

impl IfdsParams {
    pub fn validate(&self) -> Result<(), FlowError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.rho0) {
            return Err(FlowError::InvalidParam("rho0"));
        }
        if !positive(self.sigma0) {
            return Err(FlowError::InvalidParam("sigma0"));
        }
        if !self.theta.is_finite() {
            return Err(FlowError::InvalidParam("theta"));
        }
        if !positive(self.upsilon) {
            return Err(FlowError::InvalidParam("upsilon"));
        }
        if !positive(self.convergence_speed) {
            return Err(FlowError::InvalidParam("convergence_speed"));
        }
        if !positive(self.dt) {
            return Err(FlowError::InvalidParam("dt"));
        }
        Ok(())
    }
}

/// Obstacle shape at the current instant together with its velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleKinematics {
    pub shape: ObstacleShape,
    pub velocity: Vec3,
}

/// Shape function: `< 1` inside, `1` on the surface, `> 1` outside.
pub fn gamma(p: &Vec3, shape: &ObstacleShape) -> f64 {
    (0..3)
        .map(|i| {
            let u = (p[i] - shape.center[i]) / shape.semi_axes[i];
            u.abs().powf(2.0 * shape.exponents[i])
        })
        .sum()
}

/// Goal-converging flow of constant speed `c`. Zero on the goal itself.
pub fn initial_flow(p: &Vec3, goal: &Vec3, c: f64) -> Vec3 {
    let diff = p - goal;
    let dist = diff.norm();
    if dist <= GOAL_TOLERANCE {
        return Vec3::zeros();
    }
    -diff * (c / dist)
}

fn gamma_gradient(p: &Vec3, shape: &ObstacleShape) -> Vec3 {
    Vec3::from_fn(|i, _| {
        let a = shape.semi_axes[i];
        let k = 2.0 * shape.exponents[i];
        let u = (p[i] - shape.center[i]) / a;
        if u == 0.0 {
            return 0.0;
        }
        k * u.abs().powf(k - 1.0) * u.signum() / a
    })
}

/// Analytic gradient of [`gamma`], the outward radial normal.
pub fn radial_normal(p: &Vec3, shape: &ObstacleShape) -> Result<Vec3, FlowError> {
    let t = gamma_gradient(p, shape);
    if t.norm() == 0.0 || !t.iter().all(|v| v.is_finite()) {
        return Err(FlowError::DegenerateNormal([p.x, p.y, p.z]));
    }
    Ok(t)
}

/// Orthonormal tangent basis `(h1, h2)` of the plane perpendicular to `t`.
fn tangent_basis(t: &Vec3) -> (Vec3, Vec3) {
    let h1 = Vec3::new(t.y, -t.x, 0.0);
    // At the poles dG/dx = dG/dy = 0 and h1 collapses; use (dG/dz, 0, -dG/dx).
    let h1 = if h1.norm() <= 1e-12 * t.norm() {
        Vec3::new(t.z, 0.0, -t.x)
    } else {
        h1
    };
    // t x h1 = (gx gz, gy gz, -(gx^2 + gy^2)) for the regular branch.
    let h2 = t.cross(&h1);
    (h1.normalize(), h2.normalize())
}

/// Unit tangential direction `cos(theta) h1 + sin(theta) h2`.
pub fn tangential_frame(p: &Vec3, shape: &ObstacleShape, theta: f64) -> Result<Vec3, FlowError> {
    let t = radial_normal(p, shape)?;
    let (h1, h2) = tangent_basis(&t);
    Ok(h1 * theta.cos() + h2 * theta.sin())
}

/// Weights from precomputed shape values, as the product formula is written.
///
/// The weights of two obstacles partition unity, but for three or more the
/// product formula does not: three equal `gamma`s give `0.25` each.
pub fn disturbance_weights_from_gammas(gammas: &[f64]) -> Vec<f64> {
    if gammas.len() == 1 {
        return vec![1.0];
    }
    (0..gammas.len())
        .map(|n| {
            gammas
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != n)
                .map(|(_, &gi)| {
                    let num = gi - 1.0;
                    let den = num + (gammas[n] - 1.0);
                    if den == 0.0 {
                        0.5
                    } else {
                        num / den
                    }
                })
                .product()
        })
        .collect()
}

/// Disturbance weight of obstacle `n` among `shapes` at `p`.
pub fn disturbance_weight(p: &Vec3, shapes: &[ObstacleShape], n: usize) -> f64 {
    let gammas: Vec<f64> = shapes.iter().map(|s| gamma(p, s)).collect();
    disturbance_weights_from_gammas(&gammas)[n]
}

fn response_coefficients(p: &Vec3, shape: &ObstacleShape, params: &IfdsParams, goal: &Vec3) -> (f64, f64) {
    // Distance to the obstacle is measured to its center.
    let prod = (p - goal).norm() * (p - shape.center).norm();
    let factor = if prod > 0.0 { (1.0 - 1.0 / prod).exp() } else { 0.0 };
    (params.rho0 * factor, params.sigma0 * factor)
}

fn matrix_at_gamma(
    p: &Vec3,
    shape: &ObstacleShape,
    params: &IfdsParams,
    goal: &Vec3,
    g: f64,
) -> Result<Mat3, FlowError> {
    let t = radial_normal(p, shape)?;
    let (h1, h2) = tangent_basis(&t);
    let h = h1 * params.theta.cos() + h2 * params.theta.sin();
    let (rho_n, sigma_n) = response_coefficients(p, shape, params, goal);
    let g = g.abs();
    let radial = (t * t.transpose()) / (g.powf(1.0 / rho_n) * t.dot(&t));
    // h^T t vanishes by construction, so the tangential term is normalized by |h||t|.
    let tangential = (h * t.transpose()) / (g.powf(1.0 / sigma_n) * h.norm() * t.norm());
    Ok(Mat3::identity() - radial + tangential)
}

/// Disturbance matrix of a single obstacle.
pub fn single_obstacle_matrix(
    p: &Vec3,
    shape: &ObstacleShape,
    params: &IfdsParams,
    goal: &Vec3,
) -> Result<Mat3, FlowError> {
    matrix_at_gamma(p, shape, params, goal, gamma(p, shape))
}

fn effective_gamma(g: f64) -> f64 {
    if g >= 1.0 - SURFACE_TOLERANCE {
        g.max(1.0)
    } else {
        INSIDE_GAMMA
    }
}

/// Clamped shape values and their weights normalized to sum to one.
fn blend_weights(p: &Vec3, obstacles: &[ObstacleKinematics]) -> (Vec<f64>, Vec<f64>) {
    let gammas: Vec<f64> = obstacles
        .iter()
        .map(|o| effective_gamma(gamma(p, &o.shape)))
        .collect();
    let mut weights = disturbance_weights_from_gammas(&gammas);
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    (gammas, weights)
}

/// Weighted obstacle velocity felt at `p`.
pub fn obstacle_speed_field(p: &Vec3, obstacles: &[ObstacleKinematics], params: &IfdsParams) -> Vec3 {
    if obstacles.is_empty() {
        return Vec3::zeros();
    }
    let (gammas, weights) = blend_weights(p, obstacles);
    obstacles
        .iter()
        .zip(gammas.iter().zip(&weights))
        .map(|(o, (&g, &w))| o.velocity * (w * (-g / params.upsilon).exp()))
        .sum()
}

/// The disturbed flow `M (u - v) + v`.
pub fn disturbed_flow(
    p: &Vec3,
    goal: &Vec3,
    obstacles: &[ObstacleKinematics],
    params: &IfdsParams,
) -> Result<Vec3, FlowError> {
    let u = initial_flow(p, goal, params.convergence_speed);
    if obstacles.is_empty() {
        return Ok(u);
    }
    let (gammas, weights) = blend_weights(p, obstacles);
    let mut m_bar = Mat3::zeros();
    let mut v_obs = Vec3::zeros();
    for ((o, &g), &w) in obstacles.iter().zip(&gammas).zip(&weights) {
        if w == 0.0 {
            continue;
        }
        m_bar += matrix_at_gamma(p, &o.shape, params, goal, g)? * w;
        v_obs += o.velocity * (w * (-g / params.upsilon).exp());
    }
    Ok(m_bar * (u - v_obs) + v_obs)
}

/// One explicit Euler step.
pub fn step_position(p: &Vec3, flow: &Vec3, dt: f64) -> Vec3 {
    p + flow * dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn unit_sphere() -> ObstacleShape {
        ObstacleShape::sphere(Vec3::zeros(), 1.0)
    }

    fn params() -> IfdsParams {
        IfdsParams {
            rho0: 0.5,
            sigma0: 0.5,
            theta: 0.3,
            upsilon: 1.0,
            convergence_speed: 1.0,
            dt: 0.2,
        }
    }

    #[test]
    fn gamma_examples() {
        let s = unit_sphere();
        assert_eq!(gamma(&Vec3::zeros(), &s), 0.0);
        assert_eq!(gamma(&Vec3::new(1.0, 0.0, 0.0), &s), 1.0);
        assert_eq!(gamma(&Vec3::new(2.0, 0.0, 0.0), &s), 4.0);
    }

    #[test]
    fn initial_flow_examples() {
        let u = initial_flow(&Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), 1.0);
        assert_eq!(u, Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(initial_flow(&Vec3::new(3.0, 1.0, 2.0), &Vec3::new(3.0, 1.0, 2.0), 1.0), Vec3::zeros());
        let u = initial_flow(&Vec3::new(3.0, -1.0, 7.0), &Vec3::new(0.5, 2.0, 1.0), 2.5);
        assert_relative_eq!(u.norm(), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn radial_normal_examples() {
        let s = unit_sphere();
        assert_eq!(radial_normal(&Vec3::new(1.0, 0.0, 0.0), &s).unwrap(), Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(radial_normal(&Vec3::new(0.0, 1.0, 0.0), &s).unwrap(), Vec3::new(0.0, 2.0, 0.0));
        assert!(matches!(
            radial_normal(&Vec3::zeros(), &s),
            Err(FlowError::DegenerateNormal(_))
        ));
    }

    #[test]
    fn tangential_frame_examples() {
        let s = unit_sphere();
        let p = Vec3::new(1.0, 0.0, 0.0);
        let h = tangential_frame(&p, &s, 0.0).unwrap();
        assert_relative_eq!(h, Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
        let h = tangential_frame(&p, &s, FRAC_PI_2).unwrap();
        assert_relative_eq!(h.z.abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(h.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(h.y, 0.0, epsilon = 1e-12);

        let q = Vec3::new(0.3, -0.7, 0.4);
        let t = radial_normal(&q, &s).unwrap();
        let h = tangential_frame(&q, &s, 1.1).unwrap();
        assert_relative_eq!(h.dot(&t), 0.0, epsilon = 1e-12);
        assert_relative_eq!(h.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tangential_frame_uses_fallback_at_pole() {
        let s = unit_sphere();
        let pole = Vec3::new(0.0, 0.0, 1.0);
        for theta in [0.0, 0.7, 2.0] {
            let h = tangential_frame(&pole, &s, theta).unwrap();
            assert_relative_eq!(h.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(h.z, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn disturbance_weight_examples() {
        let s = unit_sphere();
        assert_eq!(disturbance_weight(&Vec3::new(5.0, 1.0, 2.0), &[s], 0), 1.0);
        assert_eq!(disturbance_weights_from_gammas(&[3.0, 3.0]), vec![0.5, 0.5]);
        let w = disturbance_weights_from_gammas(&[2.0, 5.0]);
        assert_relative_eq!(w[0], 0.8, epsilon = 1e-15);
        assert_relative_eq!(w[1], 0.2, epsilon = 1e-15);
        // A surface point of obstacle 1 hands it the full weight.
        assert_eq!(disturbance_weights_from_gammas(&[4.0, 1.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn product_weights_do_not_partition_unity_for_three_obstacles() {
        let w = disturbance_weights_from_gammas(&[3.0, 3.0, 3.0]);
        assert_eq!(w, vec![0.25, 0.25, 0.25]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() > 0.2);
    }

    #[test]
    fn far_field_matrix_is_near_identity() {
        let s = unit_sphere();
        // gamma = 1e6 on the x axis.
        let p = Vec3::new(1000.0, 0.0, 0.0);
        let m = single_obstacle_matrix(&p, &s, &params(), &Vec3::new(-5.0, 3.0, 0.0)).unwrap();
        assert!((m - Mat3::identity()).norm() < 1e-2);
    }

    #[test]
    fn far_field_fails_for_large_response_coefficients() {
        // Correction terms decay like gamma^(-1/rho_n) with rho_n up to e * rho0.
        let s = unit_sphere();
        let p = Vec3::new(1000.0, 0.0, 0.0);
        let strong = IfdsParams { rho0: 3.0, sigma0: 3.0, ..params() };
        let m = single_obstacle_matrix(&p, &s, &strong, &Vec3::new(-5.0, 3.0, 0.0)).unwrap();
        assert!((m - Mat3::identity()).norm() > 1e-2);
    }

    #[test]
    fn surface_matrix_removes_radial_component() {
        let s = unit_sphere();
        let p = Vec3::new(0.6, 0.0, 0.8);
        let goal = Vec3::new(-4.0, 1.0, 0.0);
        let prm = params();
        let m = single_obstacle_matrix(&p, &s, &prm, &goal).unwrap();
        let u = initial_flow(&p, &goal, 1.0);
        let t = radial_normal(&p, &s).unwrap();
        let h = tangential_frame(&p, &s, prm.theta).unwrap();
        let mu = m * u;
        // Radial part of M u equals the radial part of the injected tangential term, which is zero.
        let injected = h * (t.dot(&u) / t.norm());
        assert_relative_eq!(t.dot(&mu), t.dot(&injected), epsilon = 1e-12);
        assert_relative_eq!(t.normalize().dot(&mu), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn speed_field_examples() {
        let s = unit_sphere();
        let prm = params();
        let still = ObstacleKinematics { shape: s, velocity: Vec3::zeros() };
        assert_eq!(obstacle_speed_field(&Vec3::new(2.0, 0.0, 0.0), &[still], &prm), Vec3::zeros());

        let moving = ObstacleKinematics { shape: s, velocity: Vec3::new(1.0, 0.0, 0.0) };
        // gamma = upsilon = 1 on the surface.
        let v = obstacle_speed_field(&Vec3::new(1.0, 0.0, 0.0), &[moving], &prm);
        assert_relative_eq!(v, Vec3::new((-1.0f64).exp(), 0.0, 0.0), epsilon = 1e-15);
        let far = obstacle_speed_field(&Vec3::new(100.0, 0.0, 0.0), &[moving], &prm);
        assert!(far.norm() < 1e-300);
    }

    #[test]
    fn disturbed_flow_examples() {
        let prm = params();
        let goal = Vec3::new(10.0, 10.0, 5.5);
        let p = Vec3::new(0.0, 2.0, 5.0);
        let u = initial_flow(&p, &goal, prm.convergence_speed);
        assert_eq!(disturbed_flow(&p, &goal, &[], &prm).unwrap(), u);

        let far: Vec<_> = [Vec3::new(500.0, 0.0, 0.0), Vec3::new(-400.0, 300.0, 0.0)]
            .iter()
            .map(|&c| ObstacleKinematics { shape: ObstacleShape::sphere(c, 0.5), velocity: Vec3::zeros() })
            .collect();
        let ub = disturbed_flow(&p, &goal, &far, &prm).unwrap();
        assert!((ub - u).norm() < 1e-3);

        let near = ObstacleShape::sphere(Vec3::new(1.5, 3.0, 5.0), 1.0);
        let ub = disturbed_flow(&p, &goal, &[ObstacleKinematics { shape: near, velocity: Vec3::zeros() }], &prm).unwrap();
        let m = single_obstacle_matrix(&p, &near, &prm, &goal).unwrap();
        assert_relative_eq!(ub, m * u, epsilon = 1e-14);
    }

    #[test]
    fn inside_queries_are_clamped() {
        let prm = params();
        let shape = ObstacleShape::sphere(Vec3::new(1.0, 0.0, 0.0), 1.0);
        let ob = ObstacleKinematics { shape, velocity: Vec3::zeros() };
        let f = disturbed_flow(&Vec3::new(1.2, 0.1, 0.0), &Vec3::new(9.0, 0.0, 0.0), &[ob], &prm).unwrap();
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn euler_step_examples() {
        let p = step_position(&Vec3::zeros(), &Vec3::new(1.0, 2.0, 3.0), 0.1);
        assert_relative_eq!(p, Vec3::new(0.1, 0.2, 0.3), epsilon = 1e-15);
        let q = Vec3::new(4.0, -1.0, 2.0);
        assert_eq!(step_position(&q, &Vec3::zeros(), 0.5), q);
        let f = Vec3::new(0.25, -0.5, 1.0);
        let two = step_position(&step_position(&q, &f, 0.5), &f, 0.5);
        assert_relative_eq!(two, step_position(&q, &f, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        let mut s = unit_sphere();
        s.exponents.x = 0.25;
        assert!(s.validate().is_err());
        let mut s = unit_sphere();
        s.semi_axes.y = 0.0;
        assert!(s.validate().is_err());
        assert!(unit_sphere().validate().is_ok());
    }
}
