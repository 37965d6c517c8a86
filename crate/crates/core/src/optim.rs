//! AdamW and the two learning-rate schedules used for patch and detector
//! training.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// AdamW hyper-parameters (everything except the learning rate, which is
/// scheduled per epoch).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected AdamW update with decoupled weight decay.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    opt: &AdamW,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adamw: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let step = state.t + 1;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {i} is {} at optimizer step {step}",
            grads[i]
        )));
    }
    state.t = step;
    let bc1 = 1.0 - opt.beta1.powi(step as i32);
    let bc2 = 1.0 - opt.beta2.powi(step as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
        *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
        *p -= lr * opt.weight_decay * *p;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + opt.eps);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scheduler {
    /// `lr0 * gamma^floor(epoch / step_size)`; a zero step size means
    /// `max(1, floor(epochs / 3))`.
    Step { gamma: f64, step_size: usize },
    /// `lr0 * (1 + cos(pi * epoch / epochs)) / 2`.
    Cosine,
}

impl Scheduler {
    pub const STEP_DEFAULT: Scheduler = Scheduler::Step {
        gamma: 0.1,
        step_size: 0,
    };

    pub fn step_size(&self, epochs: usize) -> Option<usize> {
        match *self {
            Scheduler::Step { step_size: 0, .. } => Some((epochs / 3).max(1)),
            Scheduler::Step { step_size, .. } => Some(step_size),
            Scheduler::Cosine => None,
        }
    }

    pub fn lr(&self, lr0: f64, epoch: usize, epochs: usize) -> Result<f64> {
        if epochs == 0 || epoch > epochs {
            return Err(Error::invalid(format!(
                "epoch {epoch} outside a schedule of {epochs} epochs"
            )));
        }
        Ok(match *self {
            Scheduler::Step { gamma, .. } => {
                let k = epoch / self.step_size(epochs).unwrap_or(1);
                lr0 * gamma.powi(k as i32)
            }
            Scheduler::Cosine => lr0 * (1.0 + (PI * epoch as f64 / epochs as f64).cos()) / 2.0,
        })
    }
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheduler::Step { .. } => f.write_str("step"),
            Scheduler::Cosine => f.write_str("cosine"),
        }
    }
}

impl FromStr for Scheduler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "step" | "steplr" => Ok(Scheduler::STEP_DEFAULT),
            "cosine" | "cosineannealinglr" => Ok(Scheduler::Cosine),
            other => Err(Error::invalid(format!(
                "unknown scheduler {other:?} (expected step or cosine)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params() {
        let mut p = vec![0.3, -1.2];
        let mut s = AdamState::new(2);
        adamw_step(&mut p, &[0.0, 0.0], &mut s, 0.01, &AdamW::default()).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn first_step_closed_form() {
        let g = [0.5, -2.0, 1e-3];
        let mut p = vec![1.0, 1.0, 1.0];
        let mut s = AdamState::new(3);
        let lr = 0.01;
        adamw_step(&mut p, &g, &mut s, lr, &AdamW::default()).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expect = 1.0 - lr * gi / ((gi * gi).sqrt() + 1e-8);
            assert!((pi - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn decay_only() {
        let opt = AdamW {
            weight_decay: 0.1,
            ..AdamW::default()
        };
        let mut p = vec![2.0, -4.0];
        let mut s = AdamState::new(2);
        adamw_step(&mut p, &[0.0, 0.0], &mut s, 0.5, &opt).unwrap();
        assert_eq!(p, vec![2.0 * 0.95, -4.0 * 0.95]);
    }

    #[test]
    fn non_finite_grad_names_step() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adamw_step(&mut p, &[1.0], &mut s, 0.1, &AdamW::default()).unwrap();
        let err = adamw_step(&mut p, &[f64::NAN], &mut s, 0.1, &AdamW::default()).unwrap_err();
        assert!(err.to_string().contains("step 2"), "{err}");
    }

    #[test]
    fn schedules() {
        let c = Scheduler::Cosine;
        assert_eq!(c.lr(0.01, 0, 30).unwrap(), 0.01);
        assert!(c.lr(0.01, 30, 30).unwrap().abs() < 1e-18);
        let s = Scheduler::STEP_DEFAULT;
        assert_eq!(s.step_size(100), Some(33));
        assert!((s.lr(0.01, 40, 100).unwrap() - 0.001).abs() < 1e-18);
        assert!((s.lr(0.01, 70, 100).unwrap() - 0.0001).abs() < 1e-18);
        assert_eq!(s.lr(0.01, 32, 100).unwrap(), 0.01);
        assert!("linear".parse::<Scheduler>().is_err());
        assert_eq!("StepLR".parse::<Scheduler>().unwrap(), s);
    }
}
