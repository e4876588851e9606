use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// A twice-differentiable path `h(tau)`, `tau` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParametricPath {
    /// `h = center + axis_a cos(2 pi tau) + axis_b sin(2 pi tau)`; closed.
    Ellipse {
        #[serde(rename = "center_m")]
        center: Vector3<f64>,
        #[serde(rename = "axis_a_m")]
        axis_a: Vector3<f64>,
        #[serde(rename = "axis_b_m")]
        axis_b: Vector3<f64>,
    },
    /// `h = start + tau (end - start)`.
    Line {
        #[serde(rename = "start_m")]
        start: Vector3<f64>,
        #[serde(rename = "end_m")]
        end: Vector3<f64>,
    },
    /// `h = c0 + c1 tau + c2 tau^2 + c3 tau^3`.
    Cubic {
        #[serde(rename = "coefficients_m")]
        coefficients: [Vector3<f64>; 4],
    },
}

impl ParametricPath {
    /// Horizontal ellipse centred at `center` with semi-axes along x and y.
    pub fn horizontal_ellipse(center: Vector3<f64>, semi_x: f64, semi_y: f64) -> Self {
        ParametricPath::Ellipse {
            center,
            axis_a: Vector3::new(semi_x, 0.0, 0.0),
            axis_b: Vector3::new(0.0, semi_y, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        let ok = match self {
            ParametricPath::Ellipse { center, axis_a, axis_b } => {
                finite(center) && finite(axis_a) && finite(axis_b) && axis_a.cross(axis_b).norm() > 1e-12
            }
            ParametricPath::Line { start, end } => finite(start) && finite(end) && (end - start).norm() > 1e-12,
            ParametricPath::Cubic { coefficients } => {
                coefficients.iter().all(finite) && coefficients[1..].iter().any(|c| c.norm() > 1e-12)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidParameter(format!("degenerate path {self:?}")))
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, ParametricPath::Ellipse { .. })
    }

    /// Maps `tau` onto the domain: wrapped for closed paths, clamped otherwise.
    pub fn normalize_tau(&self, tau: f64) -> f64 {
        if self.is_closed() {
            tau.rem_euclid(1.0)
        } else {
            tau.clamp(0.0, 1.0)
        }
    }

    pub fn h(&self, tau: f64) -> Vector3<f64> {
        match self {
            ParametricPath::Ellipse { center, axis_a, axis_b } => {
                let th = std::f64::consts::TAU * tau;
                center + axis_a * th.cos() + axis_b * th.sin()
            }
            ParametricPath::Line { start, end } => start + (end - start) * tau,
            ParametricPath::Cubic { coefficients: c } => c[0] + (c[1] + (c[2] + c[3] * tau) * tau) * tau,
        }
    }

    pub fn dh(&self, tau: f64) -> Vector3<f64> {
        match self {
            ParametricPath::Ellipse { axis_a, axis_b, .. } => {
                let w = std::f64::consts::TAU;
                let th = w * tau;
                (-axis_a * th.sin() + axis_b * th.cos()) * w
            }
            ParametricPath::Line { start, end } => end - start,
            ParametricPath::Cubic { coefficients: c } => c[1] + (c[2] * 2.0 + c[3] * (3.0 * tau)) * tau,
        }
    }

    pub fn ddh(&self, tau: f64) -> Vector3<f64> {
        match self {
            ParametricPath::Ellipse { axis_a, axis_b, .. } => {
                let w = std::f64::consts::TAU;
                let th = w * tau;
                -(axis_a * th.cos() + axis_b * th.sin()) * (w * w)
            }
            ParametricPath::Line { .. } => Vector3::zeros(),
            ParametricPath::Cubic { coefficients: c } => c[2] * 2.0 + c[3] * (6.0 * tau),
        }
    }

    /// Upper bound on `|h'|` over the domain.
    pub fn dh_max(&self) -> f64 {
        match self {
            ParametricPath::Ellipse { axis_a, axis_b, .. } => {
                // Extremes of |a sin + b cos| are the singular values of [a b].
                let (aa, bb, ab) = (axis_a.norm_squared(), axis_b.norm_squared(), axis_a.dot(axis_b));
                let mean = 0.5 * (aa + bb);
                let dev = (0.25 * (aa - bb).powi(2) + ab * ab).sqrt();
                std::f64::consts::TAU * (mean + dev).sqrt()
            }
            ParametricPath::Line { start, end } => (end - start).norm(),
            ParametricPath::Cubic { .. } => {
                // |h'| is a square root of a quartic; its maximum on [0,1] is at an
                // endpoint or a critical point, which a fine scan brackets closely.
                (0..=2000).map(|k| self.dh(k as f64 / 2000.0).norm()).fold(0.0, f64::max) * 1.001
            }
        }
    }
}
