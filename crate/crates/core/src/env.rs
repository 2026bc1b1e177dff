//! Deterministic 2D pick-and-insert task.
//!
//! The agent picks an object from a randomized region and carries it through
//! a narrow channel into a slot at its closed end. The channel walls block
//! motion; bumping a wall while carrying knocks the object loose, which is
//! also how the object is seated against the end of the slot.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::mix;

pub const OBS_DIM: usize = 7;
pub const ACTION_DIM: usize = 3;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1])]
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            self.min,
            [self.max[0], self.min[1]],
            self.max,
            [self.min[0], self.max[1]],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default = "default_task_id")]
    pub task_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
    pub agent_start: [f64; 2],
    pub object_init_region: Rect,
    pub goal_xy: [f64; 2],
    /// Bottleneck corridor; its walls span the full workspace height outside the band.
    pub channel: Rect,
    #[serde(default = "default_grasp_radius")]
    pub grasp_radius: f64,
    #[serde(default = "default_insert_tolerance")]
    pub insert_tolerance: f64,
    /// Std of Gaussian position noise per step, in workspace units.
    #[serde(default)]
    pub action_noise_std: f64,
}

fn default_task_id() -> String {
    "pick_insert".into()
}
fn default_horizon() -> u32 {
    200
}
fn default_max_step() -> f64 {
    0.02
}
fn default_grasp_radius() -> f64 {
    0.03
}
fn default_insert_tolerance() -> f64 {
    0.015
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            task_id: default_task_id(),
            seed: 0,
            horizon: default_horizon(),
            max_step: default_max_step(),
            agent_start: [0.45, 0.9],
            object_init_region: Rect {
                min: [0.1, 0.15],
                max: [0.35, 0.85],
            },
            goal_xy: [0.97, 0.5],
            channel: Rect {
                min: [0.62, 0.47],
                max: [0.98, 0.53],
            },
            grasp_radius: default_grasp_radius(),
            insert_tolerance: default_insert_tolerance(),
            action_noise_std: 0.0,
        }
    }
}

impl TaskConfig {
    /// The noisy profile used for experiments: position noise of 0.1 x max_step.
    pub fn noisy(mut self) -> Self {
        self.action_noise_std = 0.1 * self.max_step;
        self
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: TaskConfig = crate::data::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("task: {m}")));
        let unit = Rect {
            min: [0.0, 0.0],
            max: [1.0, 1.0],
        };
        if self.horizon == 0 {
            return bad("horizon must be positive");
        }
        if !(self.max_step > 0.0 && self.grasp_radius > 0.0 && self.insert_tolerance > 0.0) {
            return bad("max_step and tolerances must be positive");
        }
        if self.action_noise_std.is_nan() || self.action_noise_std < 0.0 {
            return bad("action_noise_std must be non-negative");
        }
        let r = &self.object_init_region;
        let c = &self.channel;
        if r.min[0] > r.max[0] || r.min[1] > r.max[1] || c.min[0] >= c.max[0] || c.min[1] >= c.max[1] {
            return bad("boxes must have min <= max");
        }
        if !(unit.contains(r.min) && unit.contains(r.max) && unit.contains(c.min) && unit.contains(c.max)) {
            return bad("boxes must lie inside the unit workspace");
        }
        if !unit.contains(self.agent_start) || self.in_wall(self.agent_start) {
            return bad("agent_start must be in free space");
        }
        if r.max[0] >= c.min[0] {
            return bad("object region must lie on the entry side of the channel");
        }
        if !c.contains(self.goal_xy) {
            return bad("goal must lie inside the channel");
        }
        Ok(())
    }

    pub fn channel_center_y(&self) -> f64 {
        0.5 * (self.channel.min[1] + self.channel.max[1])
    }

    /// Wall cells: the channel's x-span outside its y-band, and everything
    /// past the channel's closed end.
    pub fn in_wall(&self, p: [f64; 2]) -> bool {
        let c = &self.channel;
        p[0] > c.max[0] || (p[0] >= c.min[0] && (p[1] < c.min[1] || p[1] > c.max[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub agent_xy: [f64; 2],
    pub object_xy: [f64; 2],
    pub carried: bool,
    pub goal_xy: [f64; 2],
    pub t: u32,
}

impl EnvState {
    /// Policy input: `[agent_xy, object_xy, carried, goal_xy - object_xy]`.
    pub fn observation(&self) -> [f64; OBS_DIM] {
        [
            self.agent_xy[0],
            self.agent_xy[1],
            self.object_xy[0],
            self.object_xy[1],
            if self.carried { 1.0 } else { 0.0 },
            self.goal_xy[0] - self.object_xy[0],
            self.goal_xy[1] - self.object_xy[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvAction {
    pub dxdy: [f64; 2],
    pub grip: f64,
}

impl EnvAction {
    pub const ZERO: EnvAction = EnvAction {
        dxdy: [0.0, 0.0],
        grip: 0.0,
    };

    /// Clamps each component to `[-1, 1]`; NaN becomes 0.
    pub fn new(dx: f64, dy: f64, grip: f64) -> Self {
        let c = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
        EnvAction {
            dxdy: [c(dx), c(dy)],
            grip: c(grip),
        }
    }

    pub fn from_slice(a: &[f64]) -> Self {
        EnvAction::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [self.dxdy[0], self.dxdy[1], self.grip]
    }

    pub fn clamped(self) -> Self {
        EnvAction::new(self.dxdy[0], self.dxdy[1], self.grip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Initial state: agent at the fixed start, object uniform in the init region.
pub fn reset(config: &TaskConfig, episode_seed: u64) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, episode_seed));
    let r = &config.object_init_region;
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    EnvState {
        agent_xy: config.agent_start,
        object_xy: [
            r.min[0] + u * (r.max[0] - r.min[0]),
            r.min[1] + v * (r.max[1] - r.min[1]),
        ],
        carried: false,
        goal_xy: config.goal_xy,
        t: 0,
    }
}

pub fn success_predicate(state: &EnvState, config: &TaskConfig) -> bool {
    !state.carried
        && dist(state.object_xy, config.goal_xy) <= config.insert_tolerance
        && config.channel.contains(state.object_xy)
}

/// Pure transition. `noise` is added to the agent displacement before clamping.
pub fn transition(config: &TaskConfig, state: &EnvState, action: &EnvAction, noise: [f64; 2]) -> Result<StepOutcome> {
    if state.t >= config.horizon || success_predicate(state, config) {
        return Err(Error::EpisodeOver { t: state.t });
    }
    let a = action.clamped();
    let mut next = *state;
    let proposed = [
        (state.agent_xy[0] + config.max_step * a.dxdy[0] + noise[0]).clamp(0.0, 1.0),
        (state.agent_xy[1] + config.max_step * a.dxdy[1] + noise[1]).clamp(0.0, 1.0),
    ];
    let blocked = config.in_wall(proposed);
    if !blocked {
        next.agent_xy = proposed;
    }
    if state.carried {
        if blocked || a.grip < 0.0 {
            next.carried = false;
        }
        next.object_xy = next.agent_xy;
    } else if a.grip >= 0.0 && dist(next.agent_xy, state.object_xy) <= config.grasp_radius {
        next.carried = true;
        next.object_xy = next.agent_xy;
    }
    next.t = state.t + 1;
    let success = success_predicate(&next, config);
    Ok(StepOutcome {
        state: next,
        reward: if success { 1.0 } else { 0.0 },
        done: success || next.t >= config.horizon,
        success,
    })
}

/// A running episode: owns the state and the per-episode noise stream.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    config: &'a TaskConfig,
    state: EnvState,
    noise: Option<(ChaCha8Rng, Normal<f64>)>,
    done: bool,
}

impl<'a> Episode<'a> {
    pub fn new(config: &'a TaskConfig, episode_seed: u64) -> Self {
        let noise = (config.action_noise_std > 0.0).then(|| {
            (
                ChaCha8Rng::seed_from_u64(mix(mix(config.seed, episode_seed), 0x6e6f697365)),
                Normal::new(0.0, config.action_noise_std).expect("validated noise std"),
            )
        });
        Episode {
            config,
            state: reset(config, episode_seed),
            noise,
            done: false,
        }
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn config(&self) -> &TaskConfig {
        self.config
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: &EnvAction) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeOver { t: self.state.t });
        }
        let noise = match &mut self.noise {
            Some((rng, normal)) => [normal.sample(rng), normal.sample(rng)],
            None => [0.0, 0.0],
        };
        let out = transition(self.config, &self.state, action, noise)?;
        self.state = out.state;
        self.done = out.done;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TaskConfig {
        TaskConfig::default()
    }

    #[test]
    fn reset_is_deterministic() {
        let c = cfg();
        assert_eq!(reset(&c, 11), reset(&c, 11));
        assert_ne!(reset(&c, 11), reset(&c, 12));
        let s = reset(&c, 3);
        assert!(c.object_init_region.contains(s.object_xy));
        assert!(!s.carried);
        assert_eq!(s.t, 0);
        assert_eq!(s.agent_xy, c.agent_start);
    }

    #[test]
    fn degenerate_region_puts_object_at_corner() {
        let mut c = cfg();
        c.object_init_region = Rect {
            min: [0.2, 0.3],
            max: [0.2, 0.3],
        };
        assert_eq!(reset(&c, 99).object_xy, [0.2, 0.3]);
    }

    #[test]
    fn zero_action_keeps_position() {
        let c = cfg();
        let s = reset(&c, 1);
        let out = transition(&c, &s, &EnvAction::ZERO, [0.0, 0.0]).unwrap();
        assert_eq!(out.state.agent_xy, s.agent_xy);
        assert_eq!(out.state.object_xy, s.object_xy);
        assert_eq!(out.state.t, 1);
        assert!(!out.done);
    }

    #[test]
    fn grasp_when_at_object() {
        let c = cfg();
        let mut s = reset(&c, 1);
        s.agent_xy = s.object_xy;
        let out = transition(&c, &s, &EnvAction::new(0.0, 0.0, 1.0), [0.0, 0.0]).unwrap();
        assert!(out.state.carried);
        let moved = transition(&c, &out.state, &EnvAction::new(1.0, 0.0, 1.0), [0.0, 0.0]).unwrap();
        assert_eq!(moved.state.object_xy, moved.state.agent_xy);
        let released = transition(&c, &moved.state, &EnvAction::new(0.0, 0.0, -1.0), [0.0, 0.0]).unwrap();
        assert!(!released.state.carried);
        assert_eq!(released.state.object_xy, moved.state.agent_xy);
    }

    #[test]
    fn wall_blocks_and_knocks_object_loose() {
        let c = cfg();
        let s = EnvState {
            agent_xy: [0.61, 0.6],
            object_xy: [0.61, 0.6],
            carried: true,
            goal_xy: c.goal_xy,
            t: 5,
        };
        let out = transition(&c, &s, &EnvAction::new(1.0, 0.0, 1.0), [0.0, 0.0]).unwrap();
        assert_eq!(out.state.agent_xy, s.agent_xy);
        assert!(!out.state.carried);
    }

    #[test]
    fn success_predicate_boundaries() {
        let c = cfg();
        let mut s = reset(&c, 0);
        s.object_xy = c.goal_xy;
        s.agent_xy = c.goal_xy;
        assert!(success_predicate(&s, &c));
        s.carried = true;
        assert!(!success_predicate(&s, &c));
        s.carried = false;
        s.object_xy = [c.goal_xy[0] - (c.insert_tolerance + 1e-9), c.goal_xy[1]];
        assert!(!success_predicate(&s, &c));
    }

    #[test]
    fn release_at_goal_succeeds_with_reward() {
        let c = cfg();
        let s = EnvState {
            agent_xy: c.goal_xy,
            object_xy: c.goal_xy,
            carried: true,
            goal_xy: c.goal_xy,
            t: 10,
        };
        let out = transition(&c, &s, &EnvAction::new(0.0, 0.0, -1.0), [0.0, 0.0]).unwrap();
        assert!(out.success && out.done);
        assert_eq!(out.reward, 1.0);
        assert!(matches!(
            transition(&c, &out.state, &EnvAction::ZERO, [0.0, 0.0]),
            Err(Error::EpisodeOver { .. })
        ));
    }

    #[test]
    fn horizon_ends_episode() {
        let mut c = cfg();
        c.horizon = 3;
        let mut ep = Episode::new(&c, 0);
        for _ in 0..2 {
            assert!(!ep.step(&EnvAction::ZERO).unwrap().done);
        }
        assert!(ep.step(&EnvAction::ZERO).unwrap().done);
        assert!(ep.step(&EnvAction::ZERO).is_err());
    }

    #[test]
    fn default_task_validates() {
        cfg().validate().unwrap();
        cfg().noisy().validate().unwrap();
        let mut bad = cfg();
        bad.goal_xy = [0.5, 0.5];
        assert!(bad.validate().is_err());
    }
}
