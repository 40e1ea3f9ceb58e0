//! Analytic air-to-ground loss model and the geometric ground-truth channel
//! used to synthesize training data.
//!
//! All powers and losses are carried in dB/dBm; conversion to the linear
//! domain happens only inside [`rate_bps`].

use crate::geometry::{elevation_angle_deg, segment_blocked, Environment, Position};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Free-space loss is clamped below this distance to avoid the log
/// singularity at zero range.
pub const DISTANCE_FLOOR_M: f64 = 1.0;

/// Parameters of the sigmoid-blended LoS/NLoS loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Carrier frequency, Hz.
    pub f_c: f64,
    /// Speed of light, m/s.
    pub light_speed: f64,
    /// Sigmoid scale; doubles as the midpoint elevation angle in degrees.
    pub sigmoid_a: f64,
    /// Sigmoid slope per degree of elevation.
    pub sigmoid_b: f64,
    /// Mean excess loss under line of sight, dB.
    pub eps_los: f64,
    /// Mean excess loss without line of sight, dB.
    pub eps_nlos: f64,
    /// Shadowing spread around the LoS mean, dB.
    pub shadow_sigma_los: f64,
    /// Shadowing spread around the NLoS mean, dB.
    pub shadow_sigma_nlos: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        // Standard urban A2G values; the carrier is 2 GHz.
        Self {
            f_c: 2.0e9,
            light_speed: 3.0e8,
            sigmoid_a: 9.61,
            sigmoid_b: 0.16,
            eps_los: 1.0,
            eps_nlos: 20.0,
            shadow_sigma_los: 2.0,
            shadow_sigma_nlos: 5.0,
        }
    }
}

impl ChannelParams {
    /// `A` of the four-parameter form `A / (1 + a e^{-b(theta - a)}) +
    /// 20 log10(d) + B`.
    pub fn path_loss_a(&self) -> f64 {
        self.eps_los - self.eps_nlos
    }

    /// `B` of the same form: the distance-independent part of the NLoS floor.
    pub fn path_loss_b(&self) -> f64 {
        20.0 * (4.0 * std::f64::consts::PI * self.f_c / self.light_speed).log10() + self.eps_nlos
    }
}

/// Transmit-power and receiver-side budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Maximum transmit power, dBm.
    pub p_max_dbm: f64,
    /// Association threshold on received power, dBm.
    pub p_min_dbm: f64,
    /// Total bandwidth, Hz.
    pub bandwidth_hz: f64,
    /// Noise power, dBm.
    pub noise_dbm: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            p_max_dbm: 33.0,
            p_min_dbm: -70.0,
            bandwidth_hz: 1.0e6,
            noise_dbm: -100.0,
        }
    }
}

/// Free-space path loss in dB at distance `d` meters, clamped at
/// [`DISTANCE_FLOOR_M`].
pub fn fspl_db(d: f64, params: &ChannelParams) -> f64 {
    let d = d.max(DISTANCE_FLOOR_M);
    20.0 * (4.0 * std::f64::consts::PI * params.f_c * d / params.light_speed).log10()
}

/// Expected channel loss in dB: free-space loss plus the elevation-angle
/// sigmoid blend of the LoS and NLoS excess terms.
pub fn expected_loss_db(q: &Position, q_n: &Position, params: &ChannelParams) -> f64 {
    let theta = elevation_angle_deg(q, q_n);
    expected_loss_for_geometry(q.distance(q_n), theta, params)
}

/// Same blend expressed on (distance, elevation) directly; shared with the
/// planners, which differentiate through it numerically.
pub fn expected_loss_for_geometry(d: f64, theta_deg: f64, params: &ChannelParams) -> f64 {
    let blend = (params.eps_los - params.eps_nlos)
        / (1.0 + params.sigmoid_a * (-params.sigmoid_b * (theta_deg - params.sigmoid_a)).exp());
    fspl_db(d, params) + blend + params.eps_nlos
}

/// Ground-truth loss: geometric blockage decides the branch, then mean excess
/// loss plus Gaussian shadowing for that branch.
pub fn ground_truth_loss_db<R: Rng>(
    q: &Position,
    q_n: &Position,
    env: &Environment,
    params: &ChannelParams,
    rng: &mut R,
) -> f64 {
    let base = fspl_db(q.distance(q_n), params);
    let (mean, sigma) = if segment_blocked(q, q_n, env) {
        (params.eps_nlos, params.shadow_sigma_nlos)
    } else {
        (params.eps_los, params.shadow_sigma_los)
    };
    let shadow = if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma >= 0").sample(rng)
    } else {
        0.0
    };
    base + mean + shadow
}

/// Deterministic branch mean of the ground-truth channel (no shadowing draw).
pub fn ground_truth_mean_loss_db(
    q: &Position,
    q_n: &Position,
    env: &Environment,
    params: &ChannelParams,
) -> f64 {
    let base = fspl_db(q.distance(q_n), params);
    if segment_blocked(q, q_n, env) {
        base + params.eps_nlos
    } else {
        base + params.eps_los
    }
}

/// Received power in dBm for a transmit power and a channel loss.
pub fn received_power_dbm(p_t_dbm: f64, loss_db: f64) -> f64 {
    p_t_dbm - loss_db
}

/// Shannon rate in bits/s for a received power against the budget's noise
/// floor and bandwidth.
pub fn rate_bps(p_r_dbm: f64, bandwidth_hz: f64, budget: &LinkBudget) -> f64 {
    let snr_linear = 10f64.powf((p_r_dbm - budget.noise_dbm) / 10.0);
    bandwidth_hz * (1.0 + snr_linear).log2()
}
