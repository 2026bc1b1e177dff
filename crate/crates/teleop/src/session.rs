//! Shared session state between the network side and the deployment loop.
//!
//! The loop thread owns the environment clock: every `decide` waits for the
//! next tick (and for resume while paused), reads the latest command and
//! broadcasts a frame. Network tasks only update the mailbox.

use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use hitl_core::data::{ClassLabel, Source, Trajectory};
use hitl_core::deploy::{Decision, Intervenor};
use hitl_core::oracle::Owner;
use hitl_core::{EnvAction, EnvState, Error, InterventionModel, Monitor, TaskConfig};
use tokio::sync::broadcast;

use crate::protocol::{encode_frame, Command, Frame};

pub type ClientId = u64;

#[derive(Debug)]
struct Shared {
    connected: Vec<ClientId>,
    next_id: ClientId,
    /// The one client whose commands are obeyed; claimed by the first
    /// command sent while nobody holds it.
    controller: Option<ClientId>,
    owner: Owner,
    /// Zero-order hold: the action applied on every tick of human control.
    held: EnvAction,
    paused: bool,
    closed: bool,
}

#[derive(Debug)]
pub struct Session {
    state: Mutex<Shared>,
    wake: Condvar,
    frames: broadcast::Sender<String>,
    tick: Duration,
    monitor: InterventionModel,
}

/// What happened to a command sent by a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Yes,
    /// Another client holds control.
    NotController,
    /// An action arrived while the robot is in control.
    NotIntervening,
}

impl Session {
    pub fn new(tick_hz: f64, monitor: InterventionModel) -> Arc<Self> {
        assert!(tick_hz > 0.0 && tick_hz.is_finite(), "tick_hz must be positive");
        let (frames, _) = broadcast::channel(256);
        Arc::new(Session {
            state: Mutex::new(Shared {
                connected: Vec::new(),
                next_id: 1,
                controller: None,
                owner: Owner::Robot,
                held: EnvAction::ZERO,
                paused: false,
                closed: false,
            }),
            wake: Condvar::new(),
            frames,
            tick: Duration::from_secs_f64(1.0 / tick_hz),
            monitor,
        })
    }

    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn connect(&self) -> (ClientId, broadcast::Receiver<String>) {
        let mut s = self.lock();
        let id = s.next_id;
        s.next_id += 1;
        s.connected.push(id);
        self.wake.notify_all();
        (id, self.frames.subscribe())
    }

    /// Drops a client. Losing the controller mid-intervention hands control
    /// back to the robot and pauses the clock.
    pub fn disconnect(&self, id: ClientId) {
        let mut s = self.lock();
        s.connected.retain(|&c| c != id);
        if s.controller == Some(id) {
            s.controller = None;
            if s.owner == Owner::Human {
                log::warn!("controller {id} disconnected during an intervention; pausing");
                s.owner = Owner::Robot;
                s.paused = true;
            }
        }
        self.wake.notify_all();
    }

    pub fn apply(&self, id: ClientId, cmd: Command) -> Applied {
        let mut s = self.lock();
        match s.controller {
            Some(c) if c != id => return Applied::NotController,
            Some(_) => {}
            None => s.controller = Some(id),
        }
        match cmd {
            Command::InterveneStart => {
                s.owner = Owner::Human;
                s.held = EnvAction::ZERO;
            }
            Command::Action { dxdy, grip } => {
                if s.owner != Owner::Human {
                    return Applied::NotIntervening;
                }
                s.held = EnvAction::new(dxdy[0], dxdy[1], grip);
            }
            Command::InterveneEnd => s.owner = Owner::Robot,
            Command::Pause => s.paused = true,
            Command::Resume => s.paused = false,
        }
        self.wake.notify_all();
        Applied::Yes
    }

    pub fn clients(&self) -> usize {
        self.lock().connected.len()
    }

    pub fn owner(&self) -> Owner {
        self.lock().owner
    }

    pub fn is_paused(&self) -> bool {
        self.lock().paused
    }

    /// Blocks until at least one client is connected or `timeout` passes.
    pub fn wait_for_client(&self, timeout: Duration) -> bool {
        let s = self.lock();
        let (s, _) = self
            .wake
            .wait_timeout_while(s, timeout, |s| s.connected.is_empty() && !s.closed)
            .unwrap_or_else(|e| e.into_inner());
        !s.connected.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    /// Wakes a loop blocked on pause; further decisions fail.
    pub fn close(&self) {
        self.lock().closed = true;
        self.wake.notify_all();
    }

    fn broadcast(&self, frame: &Frame) {
        // No receivers is fine: frames are advisory for observers.
        let _ = self.frames.send(encode_frame(frame));
    }
}

/// The live operator as seen by the deployment loop.
pub struct LiveIntervenor {
    session: Arc<Session>,
    monitor: Monitor,
    episode: u64,
    next_tick: Option<Instant>,
}

impl LiveIntervenor {
    pub fn new(session: Arc<Session>) -> Self {
        LiveIntervenor {
            monitor: Monitor::new(session.monitor.clone()),
            session,
            episode: 0,
            next_tick: None,
        }
    }

    /// Episodes started so far.
    pub fn episodes(&self) -> u64 {
        self.episode
    }
}

impl Intervenor for LiveIntervenor {
    fn source(&self) -> Source {
        Source::LiveHuman
    }

    fn begin_episode(&mut self, _episode_seed: u64, _initial: &EnvState) -> hitl_core::Result<()> {
        let mut s = self.session.lock();
        if s.closed {
            return Err(Error::Intervenor("session closed".into()));
        }
        if s.connected.is_empty() {
            return Err(Error::Intervenor(
                "no client connected; live deployment refuses to start".into(),
            ));
        }
        // Every episode starts under robot control.
        s.owner = Owner::Robot;
        drop(s);
        self.monitor.reset();
        self.episode += 1;
        self.next_tick = None;
        Ok(())
    }

    fn decide(&mut self, state: &EnvState, robot_action: EnvAction, task: &TaskConfig) -> hitl_core::Result<Decision> {
        let advisory = self.monitor.observe(state, task).any();
        let tick = self.session.tick;
        let deadline = self.next_tick.unwrap_or_else(Instant::now);
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
        let s = self.session.lock();
        let s = self
            .session
            .wake
            .wait_while(s, |s| s.paused && !s.closed)
            .unwrap_or_else(|e| e.into_inner());
        if s.closed {
            return Err(Error::Intervenor("session closed".into()));
        }
        let (action, label) = match s.owner {
            Owner::Human => (s.held, ClassLabel::Intv),
            Owner::Robot => (robot_action, ClassLabel::Robot),
        };
        let owner = s.owner;
        drop(s);
        // A pause shifts the schedule instead of bursting to catch up.
        self.next_tick = Some(Instant::now().max(deadline) + tick);
        self.session
            .broadcast(&Frame::new(self.episode, state, owner, advisory));
        Ok(Decision { action, label })
    }

    fn end_episode(&mut self, traj: &Trajectory) -> hitl_core::Result<()> {
        log::info!(
            "live episode {} finished: success {}, {} intervention samples",
            self.episode,
            traj.success(),
            traj.count(ClassLabel::Intv)
        );
        Ok(())
    }
}
