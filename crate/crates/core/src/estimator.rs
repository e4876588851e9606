//! Collision-inclusive error-state Kalman filter.
//!
//! The mean is `(p, v, R, w)`; the covariance lives on the 12-dim error state
//! `[dp, dv, dtheta, dw]` with the attitude error applied on the right,
//! `R_true = R exp(dtheta)`. Prediction switches between free flight driven by the
//! commanded acceleration and an impulsive jump from the collision model.

use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::contact::ContactVector;
use crate::dynamics::{IcosahedronFrame, InertialParams, MavState};
use crate::error::{Result, SimError};
use crate::impulse::{collision_delta, RestitutionParams};
use crate::math::{exp_so3, log_so3, orthonormalize};

pub type Cov12 = SMatrix<f64, 12, 12>;
type Mat6x12 = SMatrix<f64, 6, 12>;

const P: usize = 0;
const V: usize = 3;
const TH: usize = 6;
const W: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Process noise densities per block: m^2/s, m^2/s^3, rad^2/s, rad^2/s^3.
    #[serde(rename = "q_position_m2_per_s")]
    pub q_position: f64,
    #[serde(rename = "q_velocity_m2_per_s3")]
    pub q_velocity: f64,
    #[serde(rename = "q_attitude_rad2_per_s")]
    pub q_attitude: f64,
    #[serde(rename = "q_rate_rad2_per_s3")]
    pub q_rate: f64,
    /// Pose measurement standard deviations (m, rad).
    #[serde(rename = "sigma_position_m")]
    pub sigma_position: f64,
    #[serde(rename = "sigma_attitude_rad")]
    pub sigma_attitude: f64,
    /// Rate decay time constant towards the commanded rate (s).
    #[serde(rename = "tau_omega_s")]
    pub tau_omega: f64,
    /// Velocity and rate covariance multiplier, applied on the first step of a
    /// contact episode that injects an impulse.
    pub contact_inflation: f64,
    /// Squared Mahalanobis distance above which a pose measurement is rejected.
    #[serde(rename = "gate_mahalanobis_sq")]
    pub gate: Option<f64>,
    /// Initial standard deviations (m, m/s, rad, rad/s).
    #[serde(rename = "init_sigma_p_v_att_rate")]
    pub init_sigma: [f64; 4],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            q_position: 1e-6,
            q_velocity: 0.5,
            q_attitude: 1e-6,
            q_rate: 20.0,
            sigma_position: 1e-3,
            sigma_attitude: 0.2f64.to_radians(),
            tau_omega: 0.05,
            contact_inflation: 10.0,
            gate: None,
            init_sigma: [0.01, 0.05, 0.01, 0.05],
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.q_position,
            self.q_velocity,
            self.q_attitude,
            self.q_rate,
            self.sigma_position,
            self.sigma_attitude,
            self.tau_omega,
        ];
        if positive.iter().chain(&self.init_sigma).any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(SimError::InvalidParameter("noise parameters must be finite and > 0".into()));
        }
        if !(self.contact_inflation >= 1.0) {
            return Err(SimError::InvalidParameter("contact_inflation must be >= 1".into()));
        }
        if matches!(self.gate, Some(g) if !(g > 0.0)) {
            return Err(SimError::InvalidParameter("gate must be > 0".into()));
        }
        Ok(())
    }
}

/// Commanded kinematic acceleration (world) and body rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandInput {
    pub a_cmd: Vector3<f64>,
    pub w_cmd: Vector3<f64>,
}

impl CommandInput {
    pub fn new(a_cmd: Vector3<f64>, w_cmd: Vector3<f64>) -> Result<Self> {
        if !(a_cmd.iter().chain(w_cmd.iter()).all(|x| x.is_finite())) {
            return Err(SimError::NonFinite("command input"));
        }
        Ok(Self { a_cmd, w_cmd })
    }
}

/// Whether the collision switch is honoured or forced off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SwitchMode {
    #[default]
    CollisionInclusive,
    /// The switch is forced to zero: a conventional free-flight filter.
    ForcedOff,
}

/// What the collision model needs to evaluate impulses.
#[derive(Debug, Clone, Copy)]
pub struct ImpulseDeps<'a> {
    pub frame: &'a IcosahedronFrame,
    pub inertial: &'a InertialParams,
    pub restitution: &'a RestitutionParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub mean: MavState,
    pub covariance: Cov12,
    pub kappa: bool,
    pub switch_mode: SwitchMode,
    /// Set once the covariance has been inflated during the current contact
    /// episode; cleared when contact ends.
    pub inflated: bool,
    pub rejected_measurements: usize,
}

pub fn kappa_from_contacts(c: &ContactVector) -> bool {
    c.any()
}

fn block_diag(d: [f64; 4]) -> Cov12 {
    let mut m = Cov12::zeros();
    for (b, v) in d.iter().enumerate() {
        for k in 0..3 {
            m[(3 * b + k, 3 * b + k)] = *v;
        }
    }
    m
}

fn symmetrize(p: &Cov12) -> Cov12 {
    (p + p.transpose()) * 0.5
}

impl EstimatorState {
    pub fn new(mean: MavState, noise: &NoiseConfig, switch_mode: SwitchMode) -> Result<Self> {
        noise.validate()?;
        if !mean.is_finite() {
            return Err(SimError::NonFinite("initial estimate"));
        }
        let s = noise.init_sigma;
        Ok(Self {
            mean,
            covariance: block_diag([s[0] * s[0], s[1] * s[1], s[2] * s[2], s[3] * s[3]]),
            kappa: false,
            switch_mode,
            inflated: false,
            rejected_measurements: 0,
        })
    }

    /// Switching prediction over `dt`. The switch for this step is taken from
    /// `contacts`; it is stored as the new `kappa`.
    pub fn predict(
        &self,
        cmd: &CommandInput,
        contacts: &ContactVector,
        dt: f64,
        noise: &NoiseConfig,
        deps: &ImpulseDeps<'_>,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SimError::InvalidParameter(format!("dt must be > 0, got {dt}")));
        }
        let kappa = match self.switch_mode {
            SwitchMode::CollisionInclusive => kappa_from_contacts(contacts),
            SwitchMode::ForcedOff => false,
        };
        let m = &self.mean;
        let decay = (-dt / noise.tau_omega).exp();
        let position = m.position + m.velocity * dt + cmd.a_cmd * (0.5 * dt * dt);
        let rotation = m.rotation * exp_so3(&(m.angular_velocity * dt));
        let (velocity, angular_velocity, injected) = if kappa {
            let delta = collision_delta(m, deps.frame, contacts, deps.restitution, deps.inertial)
                .map_err(|e| SimError::EstimatorFault(format!("collision model: {e}")))?;
            let injected = delta.impulses.iter().any(|(_, j)| j.norm() > 0.0);
            (m.velocity + delta.dv, m.angular_velocity + delta.dw, injected)
        } else {
            (
                m.velocity + cmd.a_cmd * dt,
                m.angular_velocity * decay + cmd.w_cmd * (1.0 - decay),
                false,
            )
        };

        let mut f = Cov12::identity();
        f.fixed_view_mut::<3, 3>(P, V).copy_from(&(Matrix3::identity() * dt));
        f.fixed_view_mut::<3, 3>(TH, TH).copy_from(exp_so3(&(-m.angular_velocity * dt)).matrix());
        f.fixed_view_mut::<3, 3>(TH, W).copy_from(&(Matrix3::identity() * dt));
        if !kappa {
            f.fixed_view_mut::<3, 3>(W, W).copy_from(&(Matrix3::identity() * decay));
        }
        let q = block_diag([noise.q_position, noise.q_velocity, noise.q_attitude, noise.q_rate]) * dt;
        let mut cov = f * self.covariance * f.transpose() + q;
        let inflate = injected && !self.inflated;
        if inflate {
            for blk in [V, W] {
                for r in 0..3 {
                    for c in 0..12 {
                        cov[(blk + r, c)] *= noise.contact_inflation.sqrt();
                        cov[(c, blk + r)] *= noise.contact_inflation.sqrt();
                    }
                }
            }
        }
        let next = Self {
            mean: MavState { position, rotation, velocity, angular_velocity },
            covariance: symmetrize(&cov),
            kappa,
            switch_mode: self.switch_mode,
            inflated: kappa && (self.inflated || inflate),
            rejected_measurements: self.rejected_measurements,
        };
        if !next.mean.is_finite() || next.covariance.iter().any(|x| !x.is_finite()) {
            return Err(SimError::EstimatorFault("non-finite prediction".into()));
        }
        Ok(next)
    }

    /// Kalman update with a pose measurement. Returns the updated filter and
    /// whether the measurement was accepted by the innovation gate.
    pub fn update_pose(
        &self,
        p_meas: &Vector3<f64>,
        r_meas: &Rotation3<f64>,
        noise: &NoiseConfig,
    ) -> Result<(Self, bool)> {
        let m = &self.mean;
        let mut y = SVector::<f64, 6>::zeros();
        y.fixed_rows_mut::<3>(0).copy_from(&(p_meas - m.position));
        y.fixed_rows_mut::<3>(3).copy_from(&log_so3(&(m.rotation.inverse() * r_meas)));
        let mut h = Mat6x12::zeros();
        h.fixed_view_mut::<3, 3>(0, P).copy_from(&Matrix3::identity());
        h.fixed_view_mut::<3, 3>(3, TH).copy_from(&Matrix3::identity());
        let mut r = SMatrix::<f64, 6, 6>::zeros();
        for k in 0..3 {
            r[(k, k)] = noise.sigma_position.powi(2);
            r[(3 + k, 3 + k)] = noise.sigma_attitude.powi(2);
        }
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| SimError::EstimatorFault("singular innovation covariance".into()))?;
        if let Some(gate) = noise.gate {
            let d2 = (y.transpose() * s_inv * y)[(0, 0)];
            if d2 > gate {
                let mut rejected = self.clone();
                rejected.rejected_measurements += 1;
                return Ok((rejected, false));
            }
        }
        let k = self.covariance * h.transpose() * s_inv;
        let dx = k * y;
        let ikh = Cov12::identity() - k * h;
        let cov = ikh * self.covariance * ikh.transpose() + k * r * k.transpose();
        let mean = MavState {
            position: m.position + dx.fixed_rows::<3>(P),
            velocity: m.velocity + dx.fixed_rows::<3>(V),
            rotation: orthonormalize((m.rotation * exp_so3(&dx.fixed_rows::<3>(TH).into_owned())).matrix()),
            angular_velocity: m.angular_velocity + dx.fixed_rows::<3>(W),
        };
        Ok((
            Self {
                mean,
                covariance: symmetrize(&cov),
                kappa: self.kappa,
                switch_mode: self.switch_mode,
                inflated: self.inflated,
                rejected_measurements: self.rejected_measurements,
            },
            true,
        ))
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(p: &Cov12) -> f64 {
    p.symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::NUM_VERTICES;
    use crate::impulse::beam_normal;
    use approx::assert_relative_eq;

    struct Fixture {
        frame: IcosahedronFrame,
        inertial: InertialParams,
        restitution: RestitutionParams,
    }

    impl Fixture {
        fn new() -> Self {
            Self {
                frame: IcosahedronFrame::default(),
                inertial: InertialParams::default(),
                restitution: RestitutionParams::default(),
            }
        }
        fn deps(&self) -> ImpulseDeps<'_> {
            ImpulseDeps { frame: &self.frame, inertial: &self.inertial, restitution: &self.restitution }
        }
    }

    fn moving_estimate() -> EstimatorState {
        let mut s = MavState::at_rest(Vector3::new(1.0, 2.0, 3.0));
        s.velocity = Vector3::new(0.5, -0.2, 0.1);
        s.angular_velocity = Vector3::new(0.3, 0.0, -0.4);
        EstimatorState::new(s, &NoiseConfig::default(), SwitchMode::CollisionInclusive).unwrap()
    }

    #[test]
    fn kappa_cases() {
        assert!(!kappa_from_contacts(&ContactVector::default()));
        let mut one = [false; NUM_VERTICES];
        one[5] = true;
        assert!(kappa_from_contacts(&ContactVector::from_flags(one)));
        assert!(kappa_from_contacts(&ContactVector::from_flags([true; NUM_VERTICES])));
    }

    #[test]
    fn ballistic_prediction() {
        let fx = Fixture::new();
        let est = moving_estimate();
        let cmd = CommandInput::new(Vector3::zeros(), est.mean.angular_velocity).unwrap();
        let dt = 0.01;
        let next = est.predict(&cmd, &ContactVector::default(), dt, &NoiseConfig::default(), &fx.deps()).unwrap();
        assert_relative_eq!(next.mean.position, est.mean.position + est.mean.velocity * dt, epsilon = 1e-15);
        assert_relative_eq!(next.mean.velocity, est.mean.velocity, epsilon = 1e-15);
        assert_relative_eq!(next.mean.angular_velocity, est.mean.angular_velocity, epsilon = 1e-15);
        assert!(!next.kappa);
    }

    #[test]
    fn rate_decays_by_one_time_constant() {
        let fx = Fixture::new();
        let noise = NoiseConfig::default();
        let mut s = MavState::at_rest(Vector3::zeros());
        s.angular_velocity = Vector3::new(1.0, 0.0, 0.0);
        let est = EstimatorState::new(s, &noise, SwitchMode::CollisionInclusive).unwrap();
        let cmd = CommandInput::new(Vector3::zeros(), Vector3::zeros()).unwrap();
        let next = est.predict(&cmd, &ContactVector::default(), noise.tau_omega, &noise, &fx.deps()).unwrap();
        assert_relative_eq!(next.mean.angular_velocity.x, (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(next.mean.angular_velocity.x, 0.36787944117144233, epsilon = 1e-15);
    }

    fn head_on_contact(fx: &Fixture) -> (EstimatorState, ContactVector, Vector3<f64>) {
        // Vertex 8 moving along -n at 1 m/s, e = 1: the impulse model gives dv = 2 n.
        let n = beam_normal(&fx.frame, &Rotation3::identity(), 8).unwrap();
        let mut s = MavState::at_rest(Vector3::zeros());
        s.velocity = -n;
        let est = EstimatorState::new(s, &NoiseConfig::default(), SwitchMode::CollisionInclusive).unwrap();
        let mut flags = [false; NUM_VERTICES];
        flags[8] = true;
        (est, ContactVector::from_flags(flags), n)
    }

    #[test]
    fn contact_step_injects_impulse_and_ignores_command() {
        let mut fx = Fixture::new();
        fx.restitution = RestitutionParams::new(1.0, 0.0).unwrap();
        let (est, contacts, n) = head_on_contact(&fx);
        let noise = NoiseConfig::default();
        let a = CommandInput::new(Vector3::new(50.0, -30.0, 7.0), Vector3::new(9.0, 9.0, -9.0)).unwrap();
        let b = CommandInput::new(Vector3::new(-1e3, 1e3, 0.0), Vector3::new(-40.0, 2.0, 1.0)).unwrap();
        let na = est.predict(&a, &contacts, 0.002, &noise, &fx.deps()).unwrap();
        let nb = est.predict(&b, &contacts, 0.002, &noise, &fx.deps()).unwrap();
        assert!(na.kappa);
        assert_relative_eq!(na.mean.velocity, est.mean.velocity + 2.0 * n, epsilon = 1e-12);
        assert_eq!(na.mean.velocity, nb.mean.velocity);
        assert_eq!(na.mean.angular_velocity, nb.mean.angular_velocity);
    }

    #[test]
    fn forced_off_ignores_contacts() {
        let fx = Fixture::new();
        let (mut est, contacts, _) = head_on_contact(&fx);
        est.switch_mode = SwitchMode::ForcedOff;
        let cmd = CommandInput::new(Vector3::zeros(), Vector3::zeros()).unwrap();
        let next = est.predict(&cmd, &contacts, 0.002, &NoiseConfig::default(), &fx.deps()).unwrap();
        assert!(!next.kappa);
        assert_eq!(next.mean.velocity, est.mean.velocity);
    }

    #[test]
    fn inflation_only_when_impulse_is_injected() {
        let fx = Fixture::new();
        let noise = NoiseConfig::default();
        let (est, contacts, n) = head_on_contact(&fx);
        let cmd = CommandInput::new(Vector3::zeros(), Vector3::zeros()).unwrap();
        let hit = est.predict(&cmd, &contacts, 0.002, &noise, &fx.deps()).unwrap();
        let free = est.predict(&cmd, &ContactVector::default(), 0.002, &noise, &fx.deps()).unwrap();
        assert!(hit.covariance[(V, V)] > 5.0 * free.covariance[(V, V)]);
        // Separating vertex: the switch is on but no impulse, so no inflation.
        let mut sep = est.clone();
        sep.mean.velocity = n;
        let again = sep.predict(&cmd, &contacts, 0.002, &noise, &fx.deps()).unwrap();
        assert!(again.kappa);
        assert_eq!(again.mean.velocity, n);
        assert!(again.covariance[(V, V)] < 2.0 * free.covariance[(V, V)]);
        // Sustained contact inflates once per episode.
        assert!(hit.inflated);
        let mut pressing = est.clone();
        pressing.kappa = true;
        pressing.inflated = true;
        let second = pressing.predict(&cmd, &contacts, 0.002, &noise, &fx.deps()).unwrap();
        assert_ne!(second.mean.velocity, est.mean.velocity);
        assert!(second.covariance[(V, V)] < 2.0 * free.covariance[(V, V)]);
        let after = hit.predict(&cmd, &ContactVector::default(), 0.002, &noise, &fx.deps()).unwrap();
        assert!(!after.inflated);
    }

    #[test]
    fn contact_predict_reports_estimator_fault_on_bad_input() {
        let fx = Fixture::new();
        let (est, _, _) = head_on_contact(&fx);
        let cmd = CommandInput::new(Vector3::zeros(), Vector3::zeros()).unwrap();
        assert!(est.predict(&cmd, &ContactVector::default(), 0.0, &NoiseConfig::default(), &fx.deps()).is_err());
        assert!(CommandInput::new(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros()).is_err());
    }

    #[test]
    fn matching_measurement_keeps_mean_and_contracts() {
        let noise = NoiseConfig::default();
        let est = moving_estimate();
        let (up, ok) = est.update_pose(&est.mean.position, &est.mean.rotation, &noise).unwrap();
        assert!(ok);
        assert_relative_eq!(up.mean.position, est.mean.position, epsilon = 1e-15);
        assert_relative_eq!(up.mean.velocity, est.mean.velocity, epsilon = 1e-15);
        assert!(up.covariance.trace() < est.covariance.trace());
        assert!(min_eigenvalue(&up.covariance) >= 0.0);
    }

    #[test]
    fn huge_measurement_noise_is_a_noop() {
        let mut noise = NoiseConfig::default();
        noise.sigma_position = 1e12;
        noise.sigma_attitude = 1e12;
        let est = moving_estimate();
        let (up, _) = est
            .update_pose(&(est.mean.position + Vector3::new(0.3, 0.0, 0.0)), &exp_so3(&Vector3::new(0.0, 0.2, 0.0)), &noise)
            .unwrap();
        assert!((up.mean.position - est.mean.position).norm() < 1e-9);
        assert!((up.mean.velocity - est.mean.velocity).norm() < 1e-9);
        assert!((up.covariance - est.covariance).abs().max() < 1e-9);
    }

    #[test]
    fn gate_rejects_outliers_and_counts() {
        let noise = NoiseConfig { gate: Some(25.0), ..NoiseConfig::default() };
        let est = moving_estimate();
        let (up, ok) = est.update_pose(&(est.mean.position + Vector3::new(5.0, 0.0, 0.0)), &est.mean.rotation, &noise).unwrap();
        assert!(!ok);
        assert_eq!(up.rejected_measurements, 1);
        assert_eq!(up.mean, est.mean);
    }

    #[test]
    fn converges_to_fixed_pose_and_riccati_fixed_point() {
        let fx = Fixture::new();
        let noise = NoiseConfig::default();
        let truth_p = Vector3::new(0.2, -0.1, 1.0);
        let truth_r = exp_so3(&Vector3::new(0.05, -0.03, 0.2));
        let mut est = EstimatorState::new(MavState::at_rest(Vector3::zeros()), &noise, SwitchMode::CollisionInclusive).unwrap();
        let cmd = CommandInput::new(Vector3::zeros(), Vector3::zeros()).unwrap();
        let dt = 0.005;
        for _ in 0..4000 {
            est = est.predict(&cmd, &ContactVector::default(), dt, &noise, &fx.deps()).unwrap();
            est = est.update_pose(&truth_p, &truth_r, &noise).unwrap().0;
            assert!(min_eigenvalue(&est.covariance) > -1e-15);
        }
        assert!((est.mean.position - truth_p).norm() < 1e-9);
        assert!(log_so3(&(est.mean.rotation.inverse() * truth_r)).norm() < 1e-9);

        // Oracle: the a-priori discrete Riccati recursion with the linearisation at w = 0.
        let decay = (-dt / noise.tau_omega).exp();
        let mut f = Cov12::identity();
        for k in 0..3 {
            f[(P + k, V + k)] = dt;
            f[(TH + k, W + k)] = dt;
            f[(W + k, W + k)] = decay;
        }
        let q = block_diag([noise.q_position, noise.q_velocity, noise.q_attitude, noise.q_rate]) * dt;
        let mut h = Mat6x12::zeros();
        let mut r = SMatrix::<f64, 6, 6>::zeros();
        for k in 0..3 {
            h[(k, P + k)] = 1.0;
            h[(3 + k, TH + k)] = 1.0;
            r[(k, k)] = noise.sigma_position.powi(2);
            r[(3 + k, 3 + k)] = noise.sigma_attitude.powi(2);
        }
        let mut prior = Cov12::identity();
        for _ in 0..20000 {
            let s = h * prior * h.transpose() + r;
            let post = prior - prior * h.transpose() * s.try_inverse().unwrap() * h * prior;
            prior = f * post * f.transpose() + q;
        }
        let s = h * prior * h.transpose() + r;
        let posterior = prior - prior * h.transpose() * s.try_inverse().unwrap() * h * prior;
        let rel = (est.covariance - posterior).abs().max() / posterior.abs().max();
        assert!(rel < 1e-6, "relative deviation {rel}");
    }
}
