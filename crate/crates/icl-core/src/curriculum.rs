//! The validation-driven difficulty scheduler: a prefix fraction p starts
//! at p_start and loses a stride on every validation that fails to improve,
//! until full-sequence training (p = 0) plateaus for `patience_limit`
//! consecutive validations. Increase and Random are ablation mirrors, and
//! the fixed-length token-wise schedule lives here too.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IclError, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Decrease,
    Increase,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Terminated,
}

/// Outcome of one validation event.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationVerdict {
    pub improved: bool,
    pub value: f64,
    pub metric: String,
}

/// What the automaton decided at a validation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    /// Improvement: checkpoint the model, patience resets.
    KeepBest,
    /// No improvement with a harder phase available.
    AdvancePhase { old_p: f64, new_p: f64 },
    /// No improvement at the final phase; k strikes so far.
    CountPatience(u32),
    /// Patience exhausted at the final phase.
    Terminate,
    /// No improvement but the schedule cannot move (stride 0); train on.
    Hold,
}

fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

fn check_fraction(name: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(IclError::InvalidArgument(format!(
            "{} must be in [0, 1], got {}",
            name, x
        )));
    }
    Ok(())
}

/// The scheduler automaton.
#[derive(Debug, Clone)]
pub struct CurriculumState {
    pub p_start: f64,
    pub stride: f64,
    pub strategy: Strategy,
    pub patience_limit: u32,
    /// Phase values in visit order (decrease: p_start down to 0).
    phase_order: Vec<f64>,
    phase_idx: usize,
    patience: u32,
    status: Status,
    rng: ChaCha8Rng,
    random_p: f64,
    /// (step, p) at creation and at every phase change or random draw.
    phase_history: Vec<(u64, f64)>,
}

/// Build a schedule. Decrease starts at p_start, Increase at 0 (mirrored
/// visit order), Random draws its first p from the phase set.
pub fn new_schedule(
    p_start: f64,
    stride: f64,
    strategy: Strategy,
    patience_limit: u32,
    seed: u64,
) -> Result<CurriculumState> {
    check_fraction("p_start", p_start)?;
    check_fraction("stride", stride)?;

    // {p_start, p_start - s, ..., 0}; exactly one 0 at the end. A zero
    // stride leaves a single immovable phase.
    let mut descending = vec![snap(p_start)];
    if stride > 0.0 {
        let mut k = 1u32;
        loop {
            let v = snap(p_start - k as f64 * stride);
            if v <= 0.0 {
                if *descending.last().unwrap() != 0.0 {
                    descending.push(0.0);
                }
                break;
            }
            descending.push(v);
            k += 1;
        }
    }

    let phase_order = match strategy {
        Strategy::Decrease | Strategy::Random => descending,
        Strategy::Increase => {
            let mut asc = descending;
            asc.reverse();
            asc
        }
    };

    let mut rng = seeding::rng(seed);
    let random_p = if matches!(strategy, Strategy::Random) {
        phase_order[rng.gen_range(0..phase_order.len())]
    } else {
        0.0
    };
    let initial_p = match strategy {
        Strategy::Random => random_p,
        _ => phase_order[0],
    };

    Ok(CurriculumState {
        p_start,
        stride,
        strategy,
        patience_limit,
        phase_order,
        phase_idx: 0,
        patience: 0,
        status: Status::Running,
        rng,
        random_p,
        phase_history: vec![(0, initial_p)],
    })
}

impl CurriculumState {
    /// Prefix fraction currently in effect.
    pub fn p(&self) -> f64 {
        match self.strategy {
            Strategy::Random => self.random_p,
            _ => self.phase_order[self.phase_idx],
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn is_running(&self) -> bool {
        self.status == Status::Running
    }

    pub fn patience(&self) -> u32 {
        self.patience
    }

    pub fn phase_set(&self) -> &[f64] {
        &self.phase_order
    }

    pub fn phase_history(&self) -> &[(u64, f64)] {
        &self.phase_history
    }

    /// For the Random strategy: draw the p used for the next epoch (or
    /// batch, per the trainer's granularity). No-op for ordered strategies.
    pub fn redraw_random(&mut self, step: u64) {
        if matches!(self.strategy, Strategy::Random) && self.is_running() {
            self.random_p = self.phase_order[self.rng.gen_range(0..self.phase_order.len())];
            self.phase_history.push((step, self.random_p));
        }
    }

    fn at_final_phase(&self) -> bool {
        match self.strategy {
            Strategy::Random => true,
            _ => self.phase_idx + 1 == self.phase_order.len(),
        }
    }

    /// Feed one validation verdict into the automaton.
    ///
    /// Improvements keep the best model and reset patience. A miss advances
    /// to the next phase when one exists; patience only accumulates once
    /// the schedule has nowhere left to go (p = 0 for decrease), so every
    /// phase is trained to its own plateau.
    pub fn on_validation(&mut self, verdict: &ValidationVerdict, step: u64) -> Result<Action> {
        if !self.is_running() {
            return Err(IclError::InvalidArgument(
                "schedule already terminated".to_string(),
            ));
        }
        if verdict.improved {
            self.patience = 0;
            return Ok(Action::KeepBest);
        }
        if !self.at_final_phase() {
            let old_p = self.phase_order[self.phase_idx];
            self.phase_idx += 1;
            let new_p = self.phase_order[self.phase_idx];
            self.phase_history.push((step, new_p));
            return Ok(Action::AdvancePhase { old_p, new_p });
        }
        // Decrease with a zero stride can never reach p = 0; the run ends
        // on the epoch cap instead of patience.
        if matches!(self.strategy, Strategy::Decrease) && self.p() != 0.0 {
            return Ok(Action::Hold);
        }
        self.patience += 1;
        if self.patience >= self.patience_limit {
            self.status = Status::Terminated;
            Ok(Action::Terminate)
        } else {
            Ok(Action::CountPatience(self.patience))
        }
    }

    /// Cutting point for a sample of output length n at the current p.
    pub fn current_cut(&self, n: usize) -> Result<usize> {
        crate::loss::cutting_point(n, self.p())
    }
}

/// Loss-bearing fraction of the fixed-length token-wise schedule:
/// min(1, f0 + (1 - f0) * step / curriculum_steps); ordinary training
/// (fraction 1) after the curriculum window.
pub fn tcl_fraction(step: u64, curriculum_steps: u64, f0: f64) -> Result<f64> {
    if curriculum_steps < 1 {
        return Err(IclError::InvalidArgument(
            "curriculum_steps must be >= 1".to_string(),
        ));
    }
    if !(f0 > 0.0 && f0 <= 1.0) {
        return Err(IclError::InvalidArgument(format!(
            "f0 must be in (0, 1], got {}",
            f0
        )));
    }
    Ok((f0 + (1.0 - f0) * step as f64 / curriculum_steps as f64).min(1.0))
}

/// Smallest step whose metric value reaches `ratio` of the final value.
pub fn estimate_curriculum_steps(curve: &[(u64, f64)], ratio: f64) -> Result<u64> {
    if curve.is_empty() {
        return Err(IclError::InvalidArgument("empty metric curve".to_string()));
    }
    let final_value = curve.last().unwrap().1;
    let threshold = ratio * final_value;
    for &(step, value) in curve {
        if value >= threshold {
            return Ok(step);
        }
    }
    Ok(curve.last().unwrap().0)
}
