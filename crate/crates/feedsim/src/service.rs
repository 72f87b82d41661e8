//! The control-loop thread and the handle request handlers talk to.
//!
//! One thread owns the [`Robot`]. Requests reach it through a single command
//! queue drained at the start of every tick. The e-stop bypasses the queue:
//! it is an atomic flag checked at the start of every tick and again just
//! before the world step.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use feedsim_core::bt::{build_tree, TreeArgs, TreeName};
use feedsim_core::params::{ParamPatch, ParamSet};
use feedsim_core::runtime::{
    ActionRecord, ActionState, PreemptError, Robot, StartError, TelemetryFrame,
};
use feedsim_core::safety::{EStopSource, EStopState, GuardState};
use feedsim_core::transfer::TransferMode;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, oneshot};

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ApiError {
    #[error("an action is already in flight (id {id})")]
    Busy { id: u64 },
    #[error("safety lockout: {reason}")]
    SafetyLockout { reason: String },
    #[error("validation failed: {message}")]
    ValidationFailed {
        field: Option<String>,
        message: String,
    },
    #[error("unknown action id {id}")]
    UnknownId { id: u64 },
    #[error("action {id} is already terminal")]
    AlreadyTerminal { id: u64 },
    #[error("control loop is not running")]
    Unavailable,
}

impl ApiError {
    fn validation(message: impl Into<String>) -> Self {
        ApiError::ValidationFailed {
            field: None,
            message: message.into(),
        }
    }
}

impl From<StartError> for ApiError {
    fn from(e: StartError) -> Self {
        match e {
            StartError::Busy(id) => ApiError::Busy { id },
            StartError::SafetyLockout(r) => ApiError::SafetyLockout { reason: r.into() },
            StartError::Validation(v) => ApiError::validation(v.to_string()),
        }
    }
}

impl From<PreemptError> for ApiError {
    fn from(e: PreemptError) -> Self {
        match e {
            PreemptError::UnknownId(id) => ApiError::UnknownId { id },
            PreemptError::AlreadyTerminal(id) => ApiError::AlreadyTerminal { id },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionArgs {
    pub food_id: Option<String>,
    pub action_index: Option<usize>,
    /// Transfer overrides; applied to the parameter store before the action starts.
    pub transfer_mode: Option<TransferMode>,
    pub outside_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRequest {
    pub tree: String,
    #[serde(default)]
    pub args: ActionArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub q: [f64; 6],
    pub tip_position: [f64; 3],
    pub plate: Vec<String>,
    pub food_on_fork: Option<String>,
    pub consumed: Vec<String>,
    pub utensil_intact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub t: f64,
    pub tick: u64,
    pub guard: GuardState,
    pub estop: EStopState,
    pub current_action: Option<ActionRecord>,
    pub params_revision: u64,
    pub world: WorldSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeInfo {
    pub name: String,
    pub args: Vec<String>,
}

pub fn tree_catalog() -> Vec<TreeInfo> {
    TreeName::ALL
        .into_iter()
        .map(|t| TreeInfo {
            name: t.as_str().into(),
            args: match t {
                TreeName::AcquireFood => vec!["food_id".into(), "action_index".into()],
                _ => Vec::new(),
            },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstopAck {
    pub latched: bool,
    pub engage_time: Option<f64>,
}

type Reply<T> = oneshot::Sender<T>;

enum Command {
    Start(ActionRequest, Reply<Result<ActionRecord, ApiError>>),
    Preempt(u64, Reply<Result<ActionRecord, ApiError>>),
    GetAction(u64, Reply<Result<ActionRecord, ApiError>>),
    State(Reply<StateSnapshot>),
    GetParams(Reply<ParamSet>),
    PatchParams(ParamPatch, Reply<Result<ParamSet, ApiError>>),
    ResetEstop(Reply<Result<EStopState, ApiError>>),
    Shutdown,
}

#[derive(Default)]
struct EstopSignal {
    requested: AtomicBool,
    latched: AtomicBool,
}

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    /// Simulated seconds per wall second.
    pub speedup: f64,
    pub violation_log: Option<PathBuf>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            speedup: 1.0,
            violation_log: None,
        }
    }
}

/// Cheap to clone; every clone talks to the same control loop.
#[derive(Clone)]
pub struct ServiceHandle {
    tx: mpsc::Sender<Command>,
    estop: Arc<EstopSignal>,
    telemetry: broadcast::Sender<TelemetryFrame>,
}

pub struct Service {
    pub handle: ServiceHandle,
    thread: Option<JoinHandle<()>>,
}

impl Service {
    pub fn spawn(robot: Robot, opts: ServiceOptions) -> anyhow::Result<Self> {
        let (tx, rx) = mpsc::channel();
        let estop = Arc::new(EstopSignal::default());
        let (telemetry, _) = broadcast::channel(64);
        let log = match &opts.violation_log {
            Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
            None => None,
        };
        let mut control = ControlLoop {
            robot,
            rx,
            estop: estop.clone(),
            telemetry: telemetry.clone(),
            period: Duration::from_secs_f64(CONTROL_PERIOD / opts.speedup),
            log,
            logged: 0,
            pending_preempts: Vec::new(),
        };
        let thread = std::thread::Builder::new()
            .name("feedsim-control".into())
            .spawn(move || control.run())?;
        Ok(Self {
            handle: ServiceHandle {
                tx,
                estop,
                telemetry,
            },
            thread: Some(thread),
        })
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let _ = self.handle.tx.send(Command::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop();
    }
}

const CONTROL_PERIOD: f64 = feedsim_core::world::CONTROL_DT;

impl ServiceHandle {
    async fn ask<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(make(tx)).map_err(|_| ApiError::Unavailable)?;
        rx.await.map_err(|_| ApiError::Unavailable)
    }

    pub async fn start_action(&self, req: ActionRequest) -> Result<ActionRecord, ApiError> {
        self.ask(|r| Command::Start(req, r)).await?
    }

    /// Resolves once the action is terminal, normally one tick later.
    pub async fn preempt(&self, id: u64) -> Result<ActionRecord, ApiError> {
        self.ask(|r| Command::Preempt(id, r)).await?
    }

    pub async fn action(&self, id: u64) -> Result<ActionRecord, ApiError> {
        self.ask(|r| Command::GetAction(id, r)).await?
    }

    pub async fn state(&self) -> Result<StateSnapshot, ApiError> {
        self.ask(Command::State).await
    }

    pub async fn params(&self) -> Result<ParamSet, ApiError> {
        self.ask(Command::GetParams).await
    }

    pub async fn patch_params(&self, patch: ParamPatch) -> Result<ParamSet, ApiError> {
        self.ask(|r| Command::PatchParams(patch, r)).await?
    }

    pub async fn reset_estop(&self) -> Result<EStopState, ApiError> {
        self.ask(Command::ResetEstop).await?
    }

    /// Never fails. Returns once the control loop has latched the stop, or
    /// after `wait` with `latched` reporting what was observed.
    pub async fn estop(&self, wait: Duration) -> EstopAck {
        self.estop.requested.store(true, Ordering::SeqCst);
        let deadline = Instant::now() + wait;
        while !self.estop.latched.load(Ordering::SeqCst) && Instant::now() < deadline {
            tokio::time::sleep(Duration::from_millis(1)).await;
        }
        let latched = self.estop.latched.load(Ordering::SeqCst);
        let engage_time = if latched {
            self.state().await.ok().and_then(|s| s.estop.engage_time)
        } else {
            None
        };
        EstopAck {
            latched,
            engage_time,
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<TelemetryFrame> {
        self.telemetry.subscribe()
    }
}

struct ControlLoop {
    robot: Robot,
    rx: mpsc::Receiver<Command>,
    estop: Arc<EstopSignal>,
    telemetry: broadcast::Sender<TelemetryFrame>,
    period: Duration,
    log: Option<File>,
    logged: usize,
    pending_preempts: Vec<(u64, Reply<Result<ActionRecord, ApiError>>)>,
}

fn arr<const N: usize>(v: &[f64]) -> [f64; N] {
    std::array::from_fn(|i| v[i])
}

impl ControlLoop {
    fn run(&mut self) {
        let mut next = Instant::now();
        loop {
            self.observe_estop();
            loop {
                match self.rx.try_recv() {
                    Ok(Command::Shutdown) | Err(mpsc::TryRecvError::Disconnected) => return,
                    Ok(cmd) => self.handle(cmd),
                    Err(mpsc::TryRecvError::Empty) => break,
                }
            }
            self.observe_estop();
            let report = match self.robot.step() {
                Ok(r) => r,
                Err(e) => {
                    log::error!("world step failed, stopping control loop: {e}");
                    return;
                }
            };
            self.estop
                .latched
                .store(self.robot.estop().engaged, Ordering::SeqCst);
            if let Some(frame) = report.telemetry {
                let _ = self.telemetry.send(frame);
            }
            self.flush_violations();
            self.resolve_preempts();
            next += self.period;
            let now = Instant::now();
            if next > now {
                std::thread::sleep(next - now);
            } else {
                next = now;
            }
        }
    }

    fn observe_estop(&mut self) {
        if self.estop.requested.swap(false, Ordering::SeqCst) {
            self.robot.engage_estop(EStopSource::Software);
            self.estop.latched.store(true, Ordering::SeqCst);
        }
    }

    fn flush_violations(&mut self) {
        let records = self.robot.violation_log();
        if records.len() == self.logged {
            return;
        }
        if let Some(f) = self.log.as_mut() {
            for r in &records[self.logged..] {
                if let Err(e) = writeln!(f, "{}", r.to_json_line()) {
                    log::error!("violation log write failed: {e}");
                }
            }
        }
        self.logged = records.len();
    }

    fn resolve_preempts(&mut self) {
        let pending = std::mem::take(&mut self.pending_preempts);
        for (id, reply) in pending {
            match self.robot.action(id) {
                Some(r) if r.state.is_terminal() => {
                    let _ = reply.send(Ok(r.clone()));
                }
                Some(_) => self.pending_preempts.push((id, reply)),
                None => {
                    let _ = reply.send(Err(ApiError::UnknownId { id }));
                }
            }
        }
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Start(req, reply) => {
                let _ = reply.send(self.start(req));
            }
            Command::Preempt(id, reply) => match self.robot.preempt(id) {
                Ok(r) if r.state == ActionState::Preempted => {
                    let _ = reply.send(Ok(r));
                }
                Ok(_) => self.pending_preempts.push((id, reply)),
                Err(e) => {
                    let _ = reply.send(Err(e.into()));
                }
            },
            Command::GetAction(id, reply) => {
                let r = self
                    .robot
                    .action(id)
                    .cloned()
                    .ok_or(ApiError::UnknownId { id });
                let _ = reply.send(r);
            }
            Command::State(reply) => {
                let _ = reply.send(self.snapshot());
            }
            Command::GetParams(reply) => {
                let _ = reply.send(self.robot.params().clone());
            }
            Command::PatchParams(patch, reply) => {
                let r = self
                    .robot
                    .set_params(&patch)
                    .map_err(|e| ApiError::ValidationFailed {
                        field: Some(e.field.clone()),
                        message: e.to_string(),
                    });
                let _ = reply.send(r);
            }
            Command::ResetEstop(reply) => {
                let r = self
                    .robot
                    .reset_estop()
                    .map(|_| *self.robot.estop())
                    .map_err(|e| ApiError::SafetyLockout {
                        reason: e.to_string(),
                    });
                if r.is_ok() {
                    self.estop.latched.store(false, Ordering::SeqCst);
                }
                let _ = reply.send(r);
            }
            Command::Shutdown => unreachable!("handled by the loop"),
        }
    }

    fn start(&mut self, req: ActionRequest) -> Result<ActionRecord, ApiError> {
        if let Some(cur) = self.robot.current_action() {
            return Err(ApiError::Busy { id: cur.id });
        }
        if self.robot.estop().engaged {
            return Err(ApiError::SafetyLockout {
                reason: "e-stop latched".into(),
            });
        }
        if self.robot.guard_state() == GuardState::Shutdown {
            return Err(ApiError::SafetyLockout {
                reason: "watchdog shutdown".into(),
            });
        }
        let name = TreeName::parse(&req.tree).map_err(|e| ApiError::ValidationFailed {
            field: Some("tree".into()),
            message: e.to_string(),
        })?;
        let a = req.args;
        let args = TreeArgs {
            food_id: a.food_id,
            action_index: a.action_index,
        };
        let def = build_tree(name, &args, &self.robot.world.plate)
            .map_err(|e| ApiError::validation(e.to_string()))?;
        if a.transfer_mode.is_some() || a.outside_distance.is_some() {
            let patch = ParamPatch {
                transfer_mode: a.transfer_mode,
                outside_distance: a.outside_distance,
                ..Default::default()
            };
            self.robot
                .set_params(&patch)
                .map_err(|e| ApiError::ValidationFailed {
                    field: Some(e.field.clone()),
                    message: e.to_string(),
                })?;
        }
        let id = self.robot.start_action(&def)?;
        Ok(self.robot.action(id).cloned().expect("just started"))
    }

    fn snapshot(&self) -> StateSnapshot {
        let w = &self.robot.world;
        StateSnapshot {
            t: w.time,
            tick: w.tick,
            guard: self.robot.guard_state(),
            estop: *self.robot.estop(),
            current_action: self.robot.current_action().cloned(),
            params_revision: self.robot.params().revision,
            world: WorldSummary {
                q: arr(w.arm.angles.as_slice()),
                tip_position: arr(w.tip_pose().position.as_slice()),
                plate: w.plate.iter().map(|f| f.id.clone()).collect(),
                food_on_fork: w.food_on_fork.as_ref().map(|f| f.id.clone()),
                consumed: w.user.consumed.clone(),
                utensil_intact: w.utensil.intact,
            },
        }
    }
}
