//! Live steering: commands queued from outside and applied between steps.

use std::collections::VecDeque;
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteeringKind {
    SetLambdas,
    SnapshotNow,
    Stop,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SteeringPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_cls: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_disc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringCommand {
    pub kind: SteeringKind,
    #[serde(default)]
    pub payload: SteeringPayload,
    #[serde(default)]
    pub issued_at_iteration: u64,
}

impl SteeringCommand {
    pub fn set_lambdas(lambda_cls: f64, lambda_disc: f64, at: u64) -> Self {
        Self {
            kind: SteeringKind::SetLambdas,
            payload: SteeringPayload {
                lambda_cls: Some(lambda_cls),
                lambda_disc: Some(lambda_disc),
            },
            issued_at_iteration: at,
        }
    }

    pub fn snapshot_now(at: u64) -> Self {
        Self {
            kind: SteeringKind::SnapshotNow,
            payload: SteeringPayload::default(),
            issued_at_iteration: at,
        }
    }

    pub fn stop(at: u64) -> Self {
        Self {
            kind: SteeringKind::Stop,
            payload: SteeringPayload::default(),
            issued_at_iteration: at,
        }
    }

    /// Lambdas this command would put in effect, given the current ones.
    pub fn resolve_lambdas(&self, current: (f64, f64)) -> Result<(f64, f64)> {
        let lc = self.payload.lambda_cls.unwrap_or(current.0);
        let ld = self.payload.lambda_disc.unwrap_or(current.1);
        if self.payload.lambda_cls.is_none() && self.payload.lambda_disc.is_none() {
            return Err(Error::SteeringRejected("set_lambdas without any lambda".into()));
        }
        for v in [lc, ld] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::SteeringRejected(format!("lambda {v} must be finite and >= 0")));
            }
        }
        if lc == 0.0 && ld == 0.0 {
            return Err(Error::SteeringRejected("both lambdas zero".into()));
        }
        Ok((lc, ld))
    }
}

/// Record of a steering command as applied, carried in the next metrics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringEvent {
    pub kind: SteeringKind,
    pub issued_at_iteration: u64,
    pub applied_at_iteration: u64,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// Where a run loop pulls commands from at each iteration boundary.
pub trait SteeringSource {
    fn poll(&mut self, iteration: u64) -> Vec<SteeringCommand>;
}

pub struct NoSteering;

impl SteeringSource for NoSteering {
    fn poll(&mut self, _iteration: u64) -> Vec<SteeringCommand> {
        Vec::new()
    }
}

/// Releases each command once the run reaches its `issued_at_iteration`.
#[derive(Debug, Default)]
pub struct ScriptedSteering {
    commands: VecDeque<SteeringCommand>,
}

impl ScriptedSteering {
    pub fn new(mut commands: Vec<SteeringCommand>) -> Self {
        commands.sort_by_key(|c| c.issued_at_iteration);
        Self {
            commands: commands.into(),
        }
    }
}

impl SteeringSource for ScriptedSteering {
    fn poll(&mut self, iteration: u64) -> Vec<SteeringCommand> {
        let mut out = Vec::new();
        while self
            .commands
            .front()
            .is_some_and(|c| c.issued_at_iteration <= iteration)
        {
            out.extend(self.commands.pop_front());
        }
        out
    }
}

impl SteeringSource for mpsc::Receiver<SteeringCommand> {
    fn poll(&mut self, _iteration: u64) -> Vec<SteeringCommand> {
        self.try_iter().collect()
    }
}
