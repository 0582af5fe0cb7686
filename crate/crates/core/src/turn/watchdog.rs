//! Liveness guard: if no end-of-turn decision arrives, silence after the
//! last voiced frame ends the turn.

use super::{ControllerEvent, EventKind, TurnState, TIME_EPS};

/// Single-shot silence timer. Fires at most once per episode of the
/// watched condition; the episode ends when the condition goes false.
#[derive(Debug, Clone)]
pub struct SilenceWatchdog {
    timeout: f64,
    fired: bool,
}

impl SilenceWatchdog {
    /// `timeout` must be positive.
    pub fn new(timeout: f64) -> Self {
        assert!(timeout > 0.0, "silence timeout must be positive");
        Self { timeout, fired: false }
    }

    pub fn timeout(&self) -> f64 {
        self.timeout
    }

    /// Checks the watchdog for a controller in `state`.
    pub fn check(&mut self, state: TurnState, last_voice_time: f64, now: f64) -> Option<ControllerEvent> {
        self.check_when(state == TurnState::AwaitingEot, last_voice_time, now)
    }

    /// Checks the watchdog while `active` holds.
    pub fn check_when(&mut self, active: bool, last_voice_time: f64, now: f64) -> Option<ControllerEvent> {
        if !active {
            self.fired = false;
            return None;
        }
        if self.fired || now - last_voice_time + TIME_EPS < self.timeout {
            return None;
        }
        self.fired = true;
        Some(ControllerEvent::new(now, EventKind::SilenceTimeout))
    }

    pub fn reset(&mut self) {
        self.fired = false;
    }
}

/// Stateless form of [`SilenceWatchdog::check`]; `fired` carries the
/// single-shot flag between calls.
pub fn silence_watchdog(
    state: TurnState,
    last_voice_time: f64,
    now: f64,
    timeout: f64,
    fired: &mut bool,
) -> Option<ControllerEvent> {
    let mut w = SilenceWatchdog { timeout, fired: *fired };
    let out = w.check(state, last_voice_time, now);
    *fired = w.fired;
    out
}
