//! Episodic UAV communication environment: DCM kinematics under speed,
//! acceleration, attitude, and power constraints; threshold association;
//! payload accounting; and the weighted mission reward.
//!
//! The channel is queried through a pluggable oracle so the same dynamics run
//! against the analytic model, the geometric ground truth, or a trained CKM.

use crate::channel::{rate_bps, received_power_dbm, ChannelParams, LinkBudget};
use crate::ckm::CkmModel;
use crate::error::{Error, Result};
use crate::geometry::{elevation_angle_deg, Environment, HeightGrid, Position};
use serde::{Deserialize, Serialize};

pub const ACTION_DIM: usize = 5;

/// Channel loss in dB for a UAV/GU pair. Implementations must be
/// deterministic so that rollouts and evaluations reproduce.
pub trait ChannelOracle {
    fn loss_db(&self, uav: &Position, gu: &Position) -> f64;
}

/// The analytic sigmoid-blend loss model ("los" planners).
#[derive(Debug, Clone)]
pub struct LosModelOracle {
    pub params: ChannelParams,
}

impl ChannelOracle for LosModelOracle {
    fn loss_db(&self, uav: &Position, gu: &Position) -> f64 {
        crate::channel::expected_loss_db(uav, gu, &self.params)
    }
}

/// Geometric blockage decides LoS/NLoS; the branch mean is returned without a
/// shadowing draw, keeping the oracle deterministic.
#[derive(Debug, Clone)]
pub struct GroundTruthOracle {
    pub env: Environment,
    pub params: ChannelParams,
}

impl ChannelOracle for GroundTruthOracle {
    fn loss_db(&self, uav: &Position, gu: &Position) -> f64 {
        crate::channel::ground_truth_mean_loss_db(uav, gu, &self.env, &self.params)
    }
}

/// A trained CKM with its environment encoding cached.
#[derive(Debug, Clone)]
pub struct CkmOracle {
    model: CkmModel,
    encoding: Vec<f64>,
}

impl CkmOracle {
    pub fn new(model: CkmModel, grid: &HeightGrid) -> Result<Self> {
        if model.stats.is_none() {
            return Err(Error::Config("CKM oracle needs a trained model".into()));
        }
        let encoding = model.encode(grid);
        Ok(Self { model, encoding })
    }
}

impl ChannelOracle for CkmOracle {
    fn loss_db(&self, uav: &Position, gu: &Position) -> f64 {
        self.model
            .predict_loss_db(uav, gu, &self.encoding)
            .expect("oracle model was validated at construction")
    }
}

/// Closed set of oracle choices, for configuration-driven callers.
#[derive(Debug, Clone)]
pub enum AnyOracle {
    Los(LosModelOracle),
    Truth(GroundTruthOracle),
    Ckm(Box<CkmOracle>),
}

impl ChannelOracle for AnyOracle {
    fn loss_db(&self, uav: &Position, gu: &Position) -> f64 {
        match self {
            AnyOracle::Los(o) => o.loss_db(uav, gu),
            AnyOracle::Truth(o) => o.loss_db(uav, gu),
            AnyOracle::Ckm(o) => o.loss_db(uav, gu),
        }
    }
}

/// UAV pose: position, scalar speed along the nose, attitude angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub position: Position,
    pub speed: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Per-user communication status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuState {
    pub position: Position,
    pub remaining_bits: f64,
    pub associated: bool,
    pub delivered_bits: f64,
}

impl GuState {
    pub fn satisfied(&self) -> bool {
        self.remaining_bits <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpState {
    pub uav: UavState,
    pub gus: Vec<GuState>,
    pub step: usize,
}

impl MdpState {
    pub fn all_satisfied(&self) -> bool {
        self.gus.iter().all(GuState::satisfied)
    }
}

/// Continuous control input: target acceleration, attitude angles, transmit
/// power. Values are clamped into the constraint box inside [`UavMdp::step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub accel_mps2: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub tx_power_dbm: f64,
}

impl Action {
    pub fn from_vec(v: &[f64]) -> Self {
        assert_eq!(v.len(), ACTION_DIM);
        Self {
            accel_mps2: v[0],
            roll: v[1],
            pitch: v[2],
            yaw: v[3],
            tx_power_dbm: v[4],
        }
    }

    pub fn to_vec(self) -> [f64; ACTION_DIM] {
        [
            self.accel_mps2,
            self.roll,
            self.pitch,
            self.yaw,
            self.tx_power_dbm,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// Per-dimension action box: [accel, roll, pitch, yaw, power].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub lo: [f64; ACTION_DIM],
    pub hi: [f64; ACTION_DIM],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
            w5: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Integration step, seconds.
    pub dt: f64,
    pub max_steps: usize,
    pub a_max: f64,
    pub v_max: f64,
    pub budget: LinkBudget,
    pub weights: RewardWeights,
    /// Payload owed to every ground user, bits.
    pub eta_min_bits: f64,
    /// Mission start (and return) point; `(0, 0, h_min)` of the scene.
    pub start: Position,
    /// Return-home tolerance, meters.
    pub home_tolerance: f64,
    /// Elevation angle below which the low-elevation penalty applies, deg.
    pub elevation_floor_deg: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            max_steps: 200,
            a_max: 20.0,
            v_max: 50.0,
            budget: LinkBudget::default(),
            weights: RewardWeights::default(),
            eta_min_bits: 2.0e7,
            start: Position::new(0.0, 0.0, 250.0),
            home_tolerance: 20.0,
            elevation_floor_deg: 15.0,
        }
    }
}

impl EpisodeConfig {
    /// Default episode on a given scene: start pinned to `(0,0,h_min)`.
    pub fn for_env(env: &Environment) -> Self {
        Self {
            start: Position::new(0.0, 0.0, env.h_min),
            ..Self::default()
        }
    }

    pub fn action_bounds(&self) -> ActionBounds {
        use std::f64::consts::{FRAC_PI_2, PI};
        ActionBounds {
            lo: [-self.a_max, -PI, -FRAC_PI_2, -PI, 0.0],
            hi: [self.a_max, PI, FRAC_PI_2, PI, self.budget.p_max_dbm],
        }
    }
}

/// Body-to-inertial direction cosine matrix, `Rz(yaw) * Ry(pitch) *
/// Rx(roll)`.
pub fn dcm(roll: f64, pitch: f64, yaw: f64) -> [[f64; 3]; 3] {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeEnd {
    /// All payloads delivered and the UAV returned home in time.
    Success,
    /// The step budget ran out first.
    Timeout,
}

/// Everything the reward needs to know about one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    /// Meters moved this step.
    pub moved_m: f64,
    /// Distance-to-objective reduction this step (objective: nearest pending
    /// user's hover point, or home once all are served).
    pub progress_m: f64,
    /// Distance to the current objective after the move, meters.
    pub objective_distance_m: f64,
    /// Useful payload bits delivered this step, in megabits.
    pub delivered_megabits: f64,
    /// Users whose payload completed this step.
    pub newly_satisfied: usize,
    /// True when every pending user sits below the elevation floor.
    pub low_elevation: bool,
    pub ended: Option<EpisodeEnd>,
    /// Steps taken including this one.
    pub steps_taken: usize,
    pub max_steps: usize,
}

/// Weighted mission reward.
///
/// r1: per-step time pressure plus movement-efficiency shaping: excess
///     motion (beyond the straight-line progress toward the objective) and
///     lingering far from the objective are both penalized, signed progress
///     pays. Without the distance terms the field is flat between hovering
///     and approaching and the policy cannot bootstrap.
/// r2: delivered payload (Mbit) plus a completion bounty per user.
/// r3: early-completion bonus, scaled by the time left.
/// r4: flat penalty for running out the clock.
/// r5: flat penalty while no pending user is above the elevation floor.
pub fn reward(inputs: &RewardInputs, w: &RewardWeights) -> f64 {
    let excess = (inputs.moved_m - inputs.progress_m).max(0.0);
    let r1 = -1.0 - 0.01 * excess + 0.05 * inputs.progress_m
        - 0.02 * inputs.objective_distance_m;
    let r2 = inputs.delivered_megabits + 5.0 * inputs.newly_satisfied as f64;
    let r3 = match inputs.ended {
        Some(EpisodeEnd::Success) => {
            50.0 * (inputs.max_steps - inputs.steps_taken) as f64 / inputs.max_steps as f64
        }
        _ => 0.0,
    };
    let r4 = match inputs.ended {
        Some(EpisodeEnd::Timeout) => -50.0,
        _ => 0.0,
    };
    let r5 = if inputs.low_elevation { -1.0 } else { 0.0 };
    w.w1 * r1 + w.w2 * r2 + w.w3 * r3 + w.w4 * r4 + w.w5 * r5
}

/// Per-step byproducts of [`UavMdp::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub rx_dbm: Vec<f64>,
    pub alphas: Vec<bool>,
    pub rates_bps: Vec<f64>,
    pub delivered_bits: f64,
    pub newly_satisfied: usize,
    pub ended: Option<EpisodeEnd>,
    /// The clamped action actually applied.
    pub applied: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: MdpState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// The environment: immutable scene + episode configuration + channel oracle.
#[derive(Debug, Clone)]
pub struct UavMdp<O: ChannelOracle> {
    pub env: Environment,
    pub cfg: EpisodeConfig,
    pub oracle: O,
}

impl<O: ChannelOracle> UavMdp<O> {
    pub fn new(env: Environment, cfg: EpisodeConfig, oracle: O) -> Self {
        Self { env, cfg, oracle }
    }

    /// Initial state: UAV parked at the start point, zero speed and attitude,
    /// full payload owed to every user.
    pub fn reset(&self) -> MdpState {
        MdpState {
            uav: UavState {
                position: self.cfg.start,
                speed: 0.0,
                roll: 0.0,
                pitch: 0.0,
                yaw: 0.0,
            },
            gus: self
                .env
                .gu_positions
                .iter()
                .map(|&position| GuState {
                    position,
                    remaining_bits: self.cfg.eta_min_bits,
                    associated: false,
                    delivered_bits: 0.0,
                })
                .collect(),
            step: 0,
        }
    }

    /// Objective point for the progress shaping: hover point above the
    /// nearest pending user, or home when everyone is served.
    fn objective(&self, state: &MdpState) -> Position {
        let pending = state
            .gus
            .iter()
            .filter(|g| !g.satisfied())
            .min_by(|a, b| {
                let da = state.uav.position.distance(&a.position);
                let db = state.uav.position.distance(&b.position);
                da.partial_cmp(&db).expect("finite distances")
            });
        match pending {
            Some(gu) => Position::new(gu.position.x, gu.position.y, self.env.h_min),
            None => self.cfg.start,
        }
    }

    /// Applies one control step. The action is clamped into the constraint
    /// box, the pose integrates through the DCM, users associate by the
    /// received-power threshold, and associated users split the bandwidth
    /// evenly.
    pub fn step(&self, state: &MdpState, action: &Action) -> Result<StepOutcome> {
        if !action.is_finite() {
            return Err(Error::NonFinite("mdp action".into()));
        }
        let cfg = &self.cfg;
        let dt = cfg.dt;

        // Kinematics under the constraint box.
        let dv = action.accel_mps2.clamp(-cfg.a_max, cfg.a_max) * dt;
        let speed = (state.uav.speed + dv).clamp(0.0, cfg.v_max);
        let roll = action
            .roll
            .clamp(-std::f64::consts::PI, std::f64::consts::PI);
        let pitch = action
            .pitch
            .clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
        let yaw = action
            .yaw
            .clamp(-std::f64::consts::PI, std::f64::consts::PI);
        let tx_power = action.tx_power_dbm.clamp(0.0, cfg.budget.p_max_dbm);

        let rotation = dcm(roll, pitch, yaw);
        let velocity = mat_vec(&rotation, [speed, 0.0, 0.0]);
        let old_pos = state.uav.position;
        let position = Position::new(
            (old_pos.x + velocity[0] * dt).clamp(0.0, self.env.side_x),
            (old_pos.y + velocity[1] * dt).clamp(0.0, self.env.side_x),
            (old_pos.z + velocity[2] * dt).clamp(self.env.h_min, self.env.h_max),
        );
        let moved = position.distance(&old_pos);
        let objective = self.objective(state);
        let objective_distance = position.distance(&objective);
        let progress = old_pos.distance(&objective) - objective_distance;

        // Channel: threshold association, even bandwidth split, payload
        // decrement by the useful delivered bits.
        let mut rx_dbm = Vec::with_capacity(state.gus.len());
        let mut alphas = Vec::with_capacity(state.gus.len());
        for gu in &state.gus {
            let loss = self.oracle.loss_db(&position, &gu.position);
            let rx = received_power_dbm(tx_power, loss);
            rx_dbm.push(rx);
            alphas.push(rx >= cfg.budget.p_min_dbm && !gu.satisfied());
        }
        let n_assoc = alphas.iter().filter(|&&a| a).count();
        let share = if n_assoc > 0 {
            cfg.budget.bandwidth_hz / n_assoc as f64
        } else {
            0.0
        };

        let mut gus = state.gus.clone();
        let mut rates = vec![0.0; gus.len()];
        let mut delivered_total = 0.0;
        let mut newly_satisfied = 0;
        for (i, gu) in gus.iter_mut().enumerate() {
            gu.associated = alphas[i];
            if alphas[i] {
                let rate = rate_bps(rx_dbm[i], share, &cfg.budget);
                rates[i] = rate;
                let useful = (rate * dt).min(gu.remaining_bits);
                gu.remaining_bits -= useful;
                gu.delivered_bits += useful;
                delivered_total += useful;
                if useful > 0.0 && gu.satisfied() {
                    newly_satisfied += 1;
                }
            }
        }

        let step_count = state.step + 1;
        let all_served = gus.iter().all(GuState::satisfied);
        let at_home = position.distance(&cfg.start) <= cfg.home_tolerance;
        let ended = if all_served && at_home {
            Some(EpisodeEnd::Success)
        } else if step_count >= cfg.max_steps {
            Some(EpisodeEnd::Timeout)
        } else {
            None
        };

        // Low-elevation flag: no pending user is seen above the floor angle.
        let low_elevation = {
            let mut best = f64::NEG_INFINITY;
            let mut any_pending = false;
            for gu in &gus {
                if !gu.satisfied() {
                    any_pending = true;
                    best = best.max(elevation_angle_deg(&position, &gu.position));
                }
            }
            any_pending && best < cfg.elevation_floor_deg
        };

        let inputs = RewardInputs {
            moved_m: moved,
            progress_m: progress,
            objective_distance_m: objective_distance,
            delivered_megabits: delivered_total / 1.0e6,
            newly_satisfied,
            low_elevation,
            ended,
            steps_taken: step_count,
            max_steps: cfg.max_steps,
        };
        let reward_value = reward(&inputs, &cfg.weights);

        let applied = Action {
            accel_mps2: dv / dt,
            roll,
            pitch,
            yaw,
            tx_power_dbm: tx_power,
        };
        Ok(StepOutcome {
            state: MdpState {
                uav: UavState {
                    position,
                    speed,
                    roll,
                    pitch,
                    yaw,
                },
                gus,
                step: step_count,
            },
            reward: reward_value,
            done: ended.is_some(),
            info: StepInfo {
                rx_dbm,
                alphas,
                rates_bps: rates,
                delivered_bits: delivered_total,
                newly_satisfied,
                ended,
                applied,
            },
        })
    }

    /// Observation vector for learning: normalized pose, time left, and per
    /// user the offset, observed loss, pending fraction, and association.
    pub fn observe(&self, state: &MdpState) -> Vec<f64> {
        let cfg = &self.cfg;
        let side = self.env.side_x;
        let band = (self.env.h_max - self.env.h_min).max(1.0);
        let uav = &state.uav;
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.push(uav.position.x / side);
        obs.push(uav.position.y / side);
        obs.push((uav.position.z - self.env.h_min) / band);
        obs.push(uav.speed / cfg.v_max);
        obs.push(uav.roll / std::f64::consts::PI);
        obs.push(uav.pitch / std::f64::consts::FRAC_PI_2);
        obs.push(uav.yaw / std::f64::consts::PI);
        obs.push((cfg.max_steps - state.step) as f64 / cfg.max_steps as f64);
        for gu in &state.gus {
            obs.push((gu.position.x - uav.position.x) / side);
            obs.push((gu.position.y - uav.position.y) / side);
            obs.push((gu.position.z - uav.position.z) / self.env.h_max.max(1.0));
            let loss = self.oracle.loss_db(&uav.position, &gu.position);
            obs.push(loss / 100.0 - 1.0);
            obs.push((gu.remaining_bits / cfg.eta_min_bits.max(1.0)).min(1.0));
            obs.push(if gu.associated { 1.0 } else { 0.0 });
        }
        obs
    }

    pub fn obs_dim(&self) -> usize {
        8 + 6 * self.env.gu_positions.len()
    }

    /// Runs a full episode under a state-feedback controller and records the
    /// trajectory.
    pub fn rollout_with(
        &self,
        mut controller: impl FnMut(&MdpState) -> Action,
    ) -> Result<TrajectoryResult> {
        let mut state = self.reset();
        let mut steps = Vec::new();
        let mut success = false;
        while state.step < self.cfg.max_steps {
            let action = controller(&state);
            let out = self.step(&state, &action)?;
            steps.push(TrajectoryStep::from_outcome(&out));
            success = matches!(out.info.ended, Some(EpisodeEnd::Success));
            state = out.state;
            if out.done {
                break;
            }
        }
        Ok(TrajectoryResult::collect(
            self.cfg.start,
            steps,
            success,
            self.cfg.dt,
        ))
    }

    /// Replays a fixed action sequence (a planner output). When the plan is
    /// shorter than the episode, the UAV brakes and holds until termination.
    pub fn replay(&self, actions: &[Action]) -> Result<TrajectoryResult> {
        let mut idx = 0;
        self.rollout_with(|_state| {
            let action = if idx < actions.len() {
                actions[idx]
            } else {
                Action {
                    accel_mps2: -self.cfg.a_max,
                    roll: 0.0,
                    pitch: 0.0,
                    yaw: 0.0,
                    tx_power_dbm: 0.0,
                }
            };
            idx += 1;
            action
        })
    }
}

/// One recorded step of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    pub position: Position,
    pub speed: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub tx_power_dbm: f64,
    pub reward: f64,
    pub alphas: Vec<u8>,
    pub rates_bps: Vec<f64>,
    pub rx_dbm: Vec<f64>,
}

impl TrajectoryStep {
    fn from_outcome(out: &StepOutcome) -> Self {
        Self {
            step: out.state.step,
            position: out.state.uav.position,
            speed: out.state.uav.speed,
            roll: out.state.uav.roll,
            pitch: out.state.uav.pitch,
            yaw: out.state.uav.yaw,
            tx_power_dbm: out.info.applied.tx_power_dbm,
            reward: out.reward,
            alphas: out.info.alphas.iter().map(|&a| a as u8).collect(),
            rates_bps: out.info.rates_bps.clone(),
            rx_dbm: out.info.rx_dbm.clone(),
        }
    }
}

/// A completed episode with its mission score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub start: Position,
    pub steps: Vec<TrajectoryStep>,
    pub t_end_s: f64,
    pub success: bool,
    pub delivered_bits: f64,
    /// Useful delivered bits per second of flight.
    pub throughput_bps: f64,
    pub total_reward: f64,
}

impl TrajectoryResult {
    fn collect(start: Position, steps: Vec<TrajectoryStep>, success: bool, dt: f64) -> Self {
        let t_end_s = steps.len() as f64 * dt;
        let delivered: f64 = steps
            .iter()
            .map(|s| {
                s.rates_bps
                    .iter()
                    .zip(&s.alphas)
                    .map(|(r, &a)| if a == 1 { r * dt } else { 0.0 })
                    .sum::<f64>()
            })
            .sum();
        let total_reward = steps.iter().map(|s| s.reward).sum();
        Self {
            start,
            steps,
            t_end_s,
            success,
            delivered_bits: delivered,
            throughput_bps: if t_end_s > 0.0 {
                delivered / t_end_s
            } else {
                0.0
            },
            total_reward,
        }
    }

    pub fn final_position(&self) -> Position {
        self.steps.last().map(|s| s.position).unwrap_or(self.start)
    }
}

/// A named constraint violation found by [`check_feasibility`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Constraint tag: "19a" through "19k".
    pub constraint: &'static str,
    pub step: usize,
    pub magnitude: f64,
    pub detail: String,
}

const FEAS_TOL: f64 = 1e-9;

/// Checks a recorded trajectory against the full constraint set. An empty
/// list means every constraint holds at every step; a timed-out mission
/// reports its payload (and return) shortfalls.
pub fn check_feasibility(traj: &TrajectoryResult, cfg: &EpisodeConfig) -> Vec<Violation> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut violations = Vec::new();
    let mut push = |constraint: &'static str, step: usize, magnitude: f64, detail: String| {
        violations.push(Violation {
            constraint,
            step,
            magnitude,
            detail,
        });
    };

    if traj.steps.len() > cfg.max_steps {
        push(
            "19a",
            traj.steps.len(),
            (traj.steps.len() - cfg.max_steps) as f64,
            "episode exceeds the step budget".into(),
        );
    }

    let mut prev_speed = 0.0;
    for s in &traj.steps {
        if s.pitch.abs() > FRAC_PI_2 + FEAS_TOL {
            push("19c", s.step, s.pitch.abs() - FRAC_PI_2, format!("pitch {}", s.pitch));
        }
        if s.roll.abs() > PI + FEAS_TOL {
            push("19d", s.step, s.roll.abs() - PI, format!("roll {}", s.roll));
        }
        if s.yaw.abs() > PI + FEAS_TOL {
            push("19e", s.step, s.yaw.abs() - PI, format!("yaw {}", s.yaw));
        }
        if s.speed < -FEAS_TOL || s.speed > cfg.v_max + FEAS_TOL {
            push("19f", s.step, s.speed - cfg.v_max, format!("speed {}", s.speed));
        }
        let accel = (s.speed - prev_speed) / cfg.dt;
        if accel.abs() > cfg.a_max + FEAS_TOL {
            push(
                "19g",
                s.step,
                accel.abs() - cfg.a_max,
                format!("acceleration {accel}"),
            );
        }
        prev_speed = s.speed;
        if s.tx_power_dbm < -FEAS_TOL || s.tx_power_dbm > cfg.budget.p_max_dbm + FEAS_TOL {
            push("19h", s.step, s.tx_power_dbm, format!("power {}", s.tx_power_dbm));
        }
        for (i, (&alpha, &rx)) in s.alphas.iter().zip(&s.rx_dbm).enumerate() {
            if alpha == 1 && rx < cfg.budget.p_min_dbm - FEAS_TOL {
                push(
                    "19i",
                    s.step,
                    cfg.budget.p_min_dbm - rx,
                    format!("user {i} associated at {rx} dBm"),
                );
            }
        }
    }

    // Payload accounting (19k): delivered = sum of alpha * rate * dt per user.
    if let Some(first) = traj.steps.first() {
        let n = first.alphas.len();
        for i in 0..n {
            let delivered: f64 = traj
                .steps
                .iter()
                .map(|s| {
                    if s.alphas[i] == 1 {
                        s.rates_bps[i] * cfg.dt
                    } else {
                        0.0
                    }
                })
                .sum();
            if delivered + FEAS_TOL < cfg.eta_min_bits {
                push(
                    "19k",
                    traj.steps.len(),
                    cfg.eta_min_bits - delivered,
                    format!("user {i} short {} bits", cfg.eta_min_bits - delivered),
                );
            }
        }
    }

    // Boundary conditions (19b): launch from the start point and, for a
    // successful mission, return within the home tolerance.
    if traj.start.distance(&cfg.start) > FEAS_TOL {
        push(
            "19b",
            0,
            traj.start.distance(&cfg.start),
            "trajectory does not begin at the start point".into(),
        );
    }
    if traj.success {
        let home_gap = traj.final_position().distance(&cfg.start);
        if home_gap > cfg.home_tolerance + FEAS_TOL {
            push("19b", traj.steps.len(), home_gap, "did not return home".into());
        }
    } else {
        push(
            "19b",
            traj.steps.len(),
            traj.final_position().distance(&cfg.start),
            "mission did not complete".into(),
        );
    }

    violations
}
