//! Settings and bookkeeping shared by every ADMM loop in the crate:
//! residual-based stopping, over-relaxation and residual-balancing penalty
//! updates.

use crate::error::{Error, Result};

/// Residual-balancing penalty schedule: `rho <- tau * rho` when the primal
/// residual exceeds `mu` times the dual residual, `rho <- rho / tau` in the
/// opposite case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaryPenalty {
    pub enabled: bool,
    pub mu: f64,
    pub tau: f64,
}

impl Default for VaryPenalty {
    fn default() -> Self {
        Self {
            enabled: true,
            mu: 10.0,
            tau: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmmSettings {
    /// Initial penalty parameter.
    pub rho0: f64,
    pub max_iter: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Over-relaxation factor in `[1, 2)`; `1` disables relaxation.
    pub relax: f64,
    pub vary_penalty: VaryPenalty,
    /// Upper bound on the number of penalty changes within one solve.
    pub max_penalty_changes: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho0: 10.0,
            max_iter: 300,
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            relax: 1.8,
            vary_penalty: VaryPenalty::default(),
            max_penalty_changes: 30,
        }
    }
}

impl AdmmSettings {
    /// Plain ADMM: fixed penalty, no relaxation.
    pub fn plain(rho0: f64, max_iter: usize) -> Self {
        Self {
            rho0,
            max_iter,
            relax: 1.0,
            vary_penalty: VaryPenalty {
                enabled: false,
                ..VaryPenalty::default()
            },
            ..Self::default()
        }
    }

    pub fn with_tolerance(mut self, eps: f64) -> Self {
        self.eps_abs = eps;
        self.eps_rel = eps;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return bad("rho0 must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(1.0..2.0).contains(&self.relax) {
            return bad("relax must lie in [1, 2)");
        }
        let vp = &self.vary_penalty;
        if vp.enabled && !(vp.mu > 0.0 && vp.tau > 0.0) {
            return bad("penalty schedule mu and tau must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AdmmStatus {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    pub final_rho: f64,
}

/// Primal/dual residual norms and their tolerances for one iteration.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
}

impl Residuals {
    /// `n` is the dimension of the constrained variable; `primal_scale` is
    /// `max(|x|, |z|)` and `dual_scale` is `|rho u|`.
    pub fn new(
        settings: &AdmmSettings,
        n: usize,
        primal: f64,
        dual: f64,
        primal_scale: f64,
        dual_scale: f64,
    ) -> Self {
        let root_n = (n as f64).sqrt();
        Self {
            primal,
            dual,
            eps_primal: root_n * settings.eps_abs + settings.eps_rel * primal_scale,
            eps_dual: root_n * settings.eps_abs + settings.eps_rel * dual_scale,
        }
    }

    pub fn converged(&self) -> bool {
        self.primal <= self.eps_primal && self.dual <= self.eps_dual
    }
}

/// Tracks the live penalty and the number of changes made so far.
#[derive(Clone, Debug)]
pub(crate) struct Penalty {
    pub rho: f64,
    changes: usize,
    schedule: VaryPenalty,
    max_changes: usize,
}

impl Penalty {
    pub fn new(settings: &AdmmSettings) -> Self {
        Self {
            rho: settings.rho0,
            changes: 0,
            schedule: settings.vary_penalty,
            max_changes: settings.max_penalty_changes,
        }
    }

    /// Applies the balancing rule. Returns the factor the scaled duals must
    /// be multiplied by, or `None` if the penalty is unchanged.
    pub fn adapt(&mut self, res: &Residuals) -> Option<f64> {
        if !self.schedule.enabled || self.changes >= self.max_changes {
            return None;
        }
        let VaryPenalty { mu, tau, .. } = self.schedule;
        if res.primal > mu * res.dual {
            self.rho *= tau;
            self.changes += 1;
            Some(1.0 / tau)
        } else if res.dual > mu * res.primal {
            self.rho /= tau;
            self.changes += 1;
            Some(tau)
        } else {
            None
        }
    }
}

pub(crate) fn norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
