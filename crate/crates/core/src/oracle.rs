//! Scripted stand-in for the human operator.
//!
//! Three pieces: an expert waypoint controller, a monitor that raises an
//! alarm when the robot is (or is about to be) doing badly, and the
//! human-gated arbiter that turns alarms into takeovers after a fixed
//! reaction delay.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::{ClassLabel, Sample, Source, Trajectory};
use crate::env::{dist, EnvAction, EnvState, Episode, TaskConfig};
use crate::error::{Error, Result};

/// Distance of the staging waypoint in front of the channel mouth.
pub const ENTRANCE_OFFSET: f64 = 0.04;
/// Lateral slack for heading straight into the channel from the staging area.
const ALIGN_TOL: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionModel {
    pub reaction_delay_steps: u32,
    /// Stall predicate: agent displacement over this many steps...
    pub stall_window: usize,
    /// ...below this distance.
    pub stall_displacement: f64,
    /// Corridor predicate: distance from the expert's route.
    pub corridor_tolerance: f64,
    /// Deadline predicate: fire when the remaining horizon drops below the
    /// expert's estimated time to finish plus twice the reaction delay plus
    /// this many steps.
    pub deadline_margin_steps: u32,
    pub release_hold_steps: u32,
    /// Reserved for stochastic operator models; the scripted operator is deterministic.
    pub rng_seed: u64,
}

impl Default for InterventionModel {
    fn default() -> Self {
        InterventionModel {
            reaction_delay_steps: 15,
            stall_window: 20,
            stall_displacement: 0.01,
            corridor_tolerance: 0.08,
            deadline_margin_steps: 10,
            release_hold_steps: 10,
            rng_seed: 0,
        }
    }
}

impl InterventionModel {
    pub fn validate(&self) -> Result<()> {
        if self.release_hold_steps < 1 || self.stall_window < 2 {
            return Err(Error::Config(
                "oracle: release_hold_steps >= 1 and stall_window >= 2 required".into(),
            ));
        }
        if !(self.stall_displacement > 0.0 && self.corridor_tolerance > 0.0) {
            return Err(Error::Config("oracle: thresholds must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Expert controller
// ---------------------------------------------------------------------------

pub fn entrance_waypoint(config: &TaskConfig) -> [f64; 2] {
    [config.channel.min[0] - ENTRANCE_OFFSET, config.channel_center_y()]
}

fn in_channel_span(p: [f64; 2], config: &TaskConfig) -> bool {
    p[0] >= config.channel.min[0]
}

fn aligned_with_mouth(p: [f64; 2], config: &TaskConfig) -> bool {
    (p[1] - config.channel_center_y()).abs() <= ALIGN_TOL && p[0] >= entrance_waypoint(config)[0] - 1e-9
}

/// Next point to head for when travelling from `from` to `to` without
/// touching the channel walls.
fn next_waypoint(from: [f64; 2], to: [f64; 2], config: &TaskConfig) -> [f64; 2] {
    match (in_channel_span(from, config), in_channel_span(to, config)) {
        (false, true) if !aligned_with_mouth(from, config) => entrance_waypoint(config),
        (true, false) => entrance_waypoint(config),
        _ => to,
    }
}

/// Waypoints visited from `from` to `to`, endpoints included.
fn route(from: [f64; 2], to: [f64; 2], config: &TaskConfig) -> Vec<[f64; 2]> {
    let mut pts = vec![from];
    let w = next_waypoint(from, to, config);
    if w != to {
        pts.push(w);
    }
    pts.push(to);
    pts
}

fn polyline_length(pts: &[[f64; 2]]) -> f64 {
    pts.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Saturating proportional command toward `target`.
fn drive_toward(agent: [f64; 2], target: [f64; 2], max_step: f64) -> [f64; 2] {
    let v = [(target[0] - agent[0]) / max_step, (target[1] - agent[1]) / max_step];
    let n = v[0].hypot(v[1]);
    if n > 1.0 {
        [v[0] / n, v[1] / n]
    } else {
        v
    }
}

/// Scripted expert: approach, grasp, stage at the channel mouth, traverse, release.
pub fn expert_action(state: &EnvState, config: &TaskConfig) -> EnvAction {
    let agent = state.agent_xy;
    if state.carried {
        // Past the mouth, push through the goal into the closed end: the
        // contact knocks the object loose inside the slot.
        let mut target = next_waypoint(agent, config.goal_xy, config);
        if target == config.goal_xy {
            target = [config.channel.max[0] + config.max_step, config.goal_xy[1]];
        }
        let dxdy = drive_toward(agent, target, config.max_step);
        EnvAction::new(dxdy[0], dxdy[1], 1.0)
    } else {
        // Closing early is harmless: the grasp only latches inside the radius.
        let target = next_waypoint(agent, state.object_xy, config);
        let dxdy = drive_toward(agent, target, config.max_step);
        EnvAction::new(dxdy[0], dxdy[1], 1.0)
    }
}

/// Upper estimate of the steps the expert needs to finish from `state`.
pub fn expert_steps_to_go(state: &EnvState, config: &TaskConfig) -> u32 {
    let (len, extra) = if state.carried {
        (polyline_length(&route(state.agent_xy, config.goal_xy, config)), 1)
    } else {
        (
            polyline_length(&route(state.agent_xy, state.object_xy, config))
                + polyline_length(&route(state.object_xy, config.goal_xy, config)),
            3,
        )
    };
    (len / config.max_step).ceil() as u32 + extra
}

// ---------------------------------------------------------------------------
// Monitor
// ---------------------------------------------------------------------------

/// Which takeover predicates fired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alarm {
    pub stall: bool,
    pub off_corridor: bool,
    pub dropped: bool,
    pub deadline: bool,
}

impl Alarm {
    pub fn any(&self) -> bool {
        self.stall || self.off_corridor || self.dropped || self.deadline
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let u = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + u * ab[0], a[1] + u * ab[1]])
}

fn polyline_distance(p: [f64; 2], pts: &[[f64; 2]]) -> f64 {
    if pts.len() == 1 {
        return dist(p, pts[0]);
    }
    pts.windows(2)
        .map(|w| point_segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull (monotone chain).
fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn convex_polygon_distance(p: [f64; 2], hull: &[[f64; 2]]) -> f64 {
    if hull.len() < 3 {
        return polyline_distance(p, hull);
    }
    let n = hull.len();
    let inside = (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0.0);
    if inside {
        return 0.0;
    }
    (0..n)
        .map(|i| point_segment_distance(p, hull[i], hull[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Distance of the agent from where the expert could plausibly be.
///
/// Empty-handed: the route from the start to the object. Carrying: the hull
/// of the object region and the staging waypoint, plus the channel run.
pub fn corridor_distance(state: &EnvState, config: &TaskConfig) -> f64 {
    let agent = state.agent_xy;
    if state.carried {
        let entrance = entrance_waypoint(config);
        let mut pts = config.object_init_region.corners().to_vec();
        pts.push(entrance);
        let hull = convex_hull(pts);
        convex_polygon_distance(agent, &hull).min(point_segment_distance(agent, entrance, config.goal_xy))
    } else {
        polyline_distance(agent, &route(config.agent_start, state.object_xy, config))
    }
}

/// Evaluates every takeover predicate on the newest state of `history`.
///
/// `history` is oldest-first and should hold at least `stall_window` states
/// (pad by repeating the first state); the stall check only counts a window
/// that spans that many real steps.
pub fn alarms(history: &[EnvState], model: &InterventionModel, config: &TaskConfig) -> Alarm {
    let Some(newest) = history.last() else {
        return Alarm::default();
    };
    let w = model.stall_window;
    let stall = history.len() >= w && {
        let oldest = &history[history.len() - w];
        newest.t.saturating_sub(oldest.t) as usize >= w - 1
            && dist(newest.agent_xy, oldest.agent_xy) < model.stall_displacement
    };
    let off_corridor = corridor_distance(newest, config) > model.corridor_tolerance;
    let dropped = !newest.carried
        && !config.channel.contains(newest.object_xy)
        && !config.object_init_region.contains(newest.object_xy);
    let remaining = config.horizon.saturating_sub(newest.t);
    let deadline =
        remaining < expert_steps_to_go(newest, config) + 2 * model.reaction_delay_steps + model.deadline_margin_steps;
    Alarm {
        stall,
        off_corridor,
        dropped,
        deadline,
    }
}

/// Sliding window of recent states feeding the takeover predicates. The
/// first state of an episode fills the whole window.
#[derive(Debug, Clone)]
pub struct Monitor {
    model: InterventionModel,
    history: VecDeque<EnvState>,
}

impl Monitor {
    pub fn new(model: InterventionModel) -> Self {
        Monitor {
            history: VecDeque::with_capacity(model.stall_window + 1),
            model,
        }
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    pub fn observe(&mut self, state: &EnvState, config: &TaskConfig) -> Alarm {
        let w = self.model.stall_window;
        if self.history.is_empty() {
            self.history.extend(std::iter::repeat_n(*state, w));
        } else {
            self.history.push_back(*state);
            while self.history.len() > w {
                self.history.pop_front();
            }
        }
        alarms(self.history.make_contiguous(), &self.model, config)
    }
}

pub fn monitor(history: &[EnvState], model: &InterventionModel, config: &TaskConfig) -> bool {
    alarms(history, model, config).any()
}

// ---------------------------------------------------------------------------
// Arbitration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Owner {
    Robot,
    Human,
}

/// Who holds control, plus the timers that gate switching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlOwner {
    pub owner: Owner,
    /// Steps since the alarm fired; only set while the robot holds control.
    pub pending_alarm_age: Option<u32>,
    /// Consecutive alarm-free steps under human control.
    pub clear_steps: u32,
}

impl Default for ControlOwner {
    fn default() -> Self {
        ControlOwner {
            owner: Owner::Robot,
            pending_alarm_age: None,
            clear_steps: 0,
        }
    }
}

/// Human-gated team policy for one step.
pub fn arbitrate(
    owner: ControlOwner,
    alarm: bool,
    state: &EnvState,
    robot_action: EnvAction,
    model: &InterventionModel,
    config: &TaskConfig,
) -> (ControlOwner, EnvAction, ClassLabel) {
    let human = |clear_steps| {
        (
            ControlOwner {
                owner: Owner::Human,
                pending_alarm_age: None,
                clear_steps,
            },
            expert_action(state, config),
            ClassLabel::Intv,
        )
    };
    let robot = |pending_alarm_age| {
        (
            ControlOwner {
                owner: Owner::Robot,
                pending_alarm_age,
                clear_steps: 0,
            },
            robot_action.clamped(),
            ClassLabel::Robot,
        )
    };
    match owner.owner {
        Owner::Robot if alarm => {
            let age = owner.pending_alarm_age.map_or(0, |a| a + 1);
            if age >= model.reaction_delay_steps {
                human(0)
            } else {
                robot(Some(age))
            }
        }
        Owner::Robot => robot(None),
        Owner::Human => {
            let clear = if alarm { 0 } else { owner.clear_steps + 1 };
            if clear > model.release_hold_steps {
                robot(None)
            } else {
                human(clear)
            }
        }
    }
}

/// Monitor + arbiter state for one episode.
#[derive(Debug, Clone)]
pub struct ScriptedOperator {
    model: InterventionModel,
    monitor: Monitor,
    owner: ControlOwner,
    last_alarm: Alarm,
}

impl ScriptedOperator {
    pub fn new(model: InterventionModel) -> Self {
        ScriptedOperator {
            monitor: Monitor::new(model.clone()),
            model,
            owner: ControlOwner::default(),
            last_alarm: Alarm::default(),
        }
    }

    pub fn reset(&mut self) {
        self.monitor.reset();
        self.owner = ControlOwner::default();
        self.last_alarm = Alarm::default();
    }

    pub fn owner(&self) -> ControlOwner {
        self.owner
    }

    pub fn last_alarm(&self) -> Alarm {
        self.last_alarm
    }

    /// Records `state`, evaluates the monitor and arbitrates one step.
    pub fn step(&mut self, state: &EnvState, robot_action: EnvAction, config: &TaskConfig) -> (EnvAction, ClassLabel) {
        self.last_alarm = self.monitor.observe(state, config);
        let (owner, action, label) = arbitrate(
            self.owner,
            self.last_alarm.any(),
            state,
            robot_action,
            &self.model,
            config,
        );
        self.owner = owner;
        (action, label)
    }
}

/// Full expert rollout labeled `demo`.
pub fn generate_demo(config: &TaskConfig, episode_seed: u64) -> Result<Trajectory> {
    let mut ep = Episode::new(config, episode_seed);
    let mut samples = Vec::with_capacity(config.horizon as usize);
    let mut success = false;
    while !ep.is_done() {
        let state = *ep.state();
        let action = expert_action(&state, config);
        let out = ep.step(&action)?;
        samples.push(Sample {
            t: state.t,
            state: state.observation().to_vec(),
            action: action.to_array().to_vec(),
            reward: out.reward,
            label: ClassLabel::Demo,
        });
        success = out.success;
    }
    if !success {
        return Err(Error::DemoFailed { episode_seed });
    }
    Trajectory::new(samples, 0, episode_seed, true, Source::ScriptedOracle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reset, transition};

    fn cfg() -> TaskConfig {
        TaskConfig::default()
    }

    #[test]
    fn saturated_heading_toward_object() {
        let c = cfg();
        let mut s = reset(&c, 4);
        s.agent_xy = [0.0, s.object_xy[1] + 0.1];
        s.object_xy[0] = 0.3;
        let a = expert_action(&s, &c);
        let d = [s.object_xy[0] - s.agent_xy[0], s.object_xy[1] - s.agent_xy[1]];
        let n = d[0].hypot(d[1]);
        assert!((a.dxdy[0] - d[0] / n).abs() < 1e-9);
        assert!((a.dxdy[1] - d[1] / n).abs() < 1e-9);
        assert_eq!(a.grip, 1.0);
    }

    #[test]
    fn expert_seats_object_by_pushing_into_slot_end() {
        let c = cfg();
        let p = [c.goal_xy[0] - 0.005, c.goal_xy[1]];
        let s = EnvState {
            agent_xy: p,
            object_xy: p,
            carried: true,
            goal_xy: c.goal_xy,
            t: 50,
        };
        let a = expert_action(&s, &c);
        assert!(a.grip > 0.0 && a.dxdy[0] > 0.9);
        let out = transition(&c, &s, &a, [0.0, 0.0]).unwrap();
        assert!(out.success);
    }

    #[test]
    fn demos_succeed_on_many_seeds() {
        let c = cfg();
        for seed in 0..100 {
            let d = generate_demo(&c, seed).unwrap();
            assert!(d.success());
            assert!(d.is_demo());
            assert!(d.len() < c.horizon as usize);
        }
        assert_eq!(generate_demo(&c, 3).unwrap(), generate_demo(&c, 3).unwrap());
    }

    #[test]
    fn demos_succeed_with_noise() {
        let c = cfg().noisy();
        for seed in 0..50 {
            assert!(generate_demo(&c, seed).unwrap().success());
        }
    }

    #[test]
    fn horizon_one_demo_fails() {
        let mut c = cfg();
        c.horizon = 1;
        assert!(matches!(generate_demo(&c, 0), Err(Error::DemoFailed { .. })));
    }

    #[test]
    fn monitor_quiet_on_expert_rollouts() {
        let c = cfg();
        let model = InterventionModel::default();
        for seed in 0..50 {
            let mut ep = Episode::new(&c, seed);
            let mut op = ScriptedOperator::new(model.clone());
            while !ep.is_done() {
                let s = *ep.state();
                let (a, label) = op.step(&s, expert_action(&s, &c), &c);
                assert_eq!(label, ClassLabel::Robot, "seed {seed} t {}: {:?}", s.t, op.last_alarm());
                ep.step(&a).unwrap();
            }
        }
    }

    #[test]
    fn stall_fires_when_oscillating() {
        let c = cfg();
        let model = InterventionModel::default();
        let base = reset(&c, 0);
        let history: Vec<_> = (0..20)
            .map(|t| EnvState {
                agent_xy: [c.agent_start[0] + 0.002 * (t % 2) as f64, c.agent_start[1]],
                t,
                ..base
            })
            .collect();
        assert!(alarms(&history, &model, &c).stall);
        // Padded history at episode start does not count as a stall.
        let padded = vec![base; 20];
        assert!(!alarms(&padded, &model, &c).stall);
    }

    #[test]
    fn off_corridor_fires() {
        let c = cfg();
        let model = InterventionModel::default();
        let mut s = reset(&c, 0);
        // Perpendicular offset of 0.2 from the start-to-object segment.
        let d = [s.object_xy[0] - c.agent_start[0], s.object_xy[1] - c.agent_start[1]];
        let n = d[0].hypot(d[1]);
        let mid = [c.agent_start[0] + 0.5 * d[0], c.agent_start[1] + 0.5 * d[1]];
        s.agent_xy = [mid[0] - 0.2 * d[1] / n, mid[1] + 0.2 * d[0] / n];
        assert!((corridor_distance(&s, &c) - 0.2).abs() < 1e-12);
        assert!(monitor(&[s], &model, &c));
    }

    #[test]
    fn hull_is_ccw_and_contains_region() {
        let h = convex_hull(vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [1.0, 1.0],
            [0.0, 1.0],
            [0.5, 0.5],
            [2.0, 0.5],
        ]);
        assert_eq!(h.len(), 5);
        assert_eq!(convex_polygon_distance([0.5, 0.5], &h), 0.0);
        assert!((convex_polygon_distance([0.5, -1.0], &h) - 1.0).abs() < 1e-12);
    }

    fn model(delay: u32) -> InterventionModel {
        InterventionModel {
            reaction_delay_steps: delay,
            ..Default::default()
        }
    }

    #[test]
    fn takeover_after_reaction_delay() {
        let c = cfg();
        let s = reset(&c, 0);
        let m = model(15);
        let mut owner = ControlOwner::default();
        let mut first_intv = None;
        for t in 0..40u32 {
            let (o, _, label) = arbitrate(owner, t >= 5, &s, EnvAction::ZERO, &m, &c);
            owner = o;
            if label == ClassLabel::Intv && first_intv.is_none() {
                first_intv = Some(t);
            }
        }
        assert_eq!(first_intv, Some(20));
    }

    #[test]
    fn zero_delay_takes_over_immediately() {
        let c = cfg();
        let s = reset(&c, 0);
        let (o, a, label) = arbitrate(ControlOwner::default(), true, &s, EnvAction::ZERO, &model(0), &c);
        assert_eq!(o.owner, Owner::Human);
        assert_eq!(label, ClassLabel::Intv);
        assert_eq!(a, expert_action(&s, &c));
    }

    #[test]
    fn cleared_alarm_resets_pending() {
        let c = cfg();
        let s = reset(&c, 0);
        let m = model(3);
        let mut owner = ControlOwner::default();
        for alarm in [true, true, false, true, true] {
            let (o, _, label) = arbitrate(owner, alarm, &s, EnvAction::ZERO, &m, &c);
            assert_eq!(label, ClassLabel::Robot);
            owner = o;
        }
        assert_eq!(owner.pending_alarm_age, Some(1));
    }

    #[test]
    fn release_after_hold() {
        let c = cfg();
        let s = reset(&c, 0);
        let m = model(0);
        let (mut owner, _, _) = arbitrate(ControlOwner::default(), true, &s, EnvAction::ZERO, &m, &c);
        let mut labels = Vec::new();
        for _ in 0..12 {
            let (o, _, l) = arbitrate(owner, false, &s, EnvAction::ZERO, &m, &c);
            owner = o;
            labels.push(l);
        }
        assert!(labels[..10].iter().all(|&l| l == ClassLabel::Intv));
        assert_eq!(labels[10], ClassLabel::Robot);
        assert_eq!(owner.owner, Owner::Robot);
    }
}
