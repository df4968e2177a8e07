//! Two-user block coordinate ascent on the sum throughput.
//!
//! Each half-sweep fixes one user's powers and solves the other user's
//! single-user problem with the sum-rate restriction as slot utility. The
//! restriction keeps the terms that depend only on the fixed user, so the
//! subproblem objective equals the joint objective.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_scenario, PowerPolicy, Scenario};
use crate::rates::RateModel;
use crate::single_user::{self, LogUtility, Proximal, SlotUtility, Utility};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialPolicy {
    Zeros,
    SpendEvenly,
    Supplied(PowerPolicy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeOptions {
    pub max_sweeps: usize,
    /// Relative objective improvement per sweep below which the run may stop.
    pub objective_tol: f64,
    /// Max-norm change of the policy per sweep below which the run may stop.
    pub displacement_tol: f64,
    /// Weight of the proximal term `-eps * |p - p_prev|^2`.
    pub proximal_epsilon: f64,
    pub initial: InitialPolicy,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        IterativeOptions { max_sweeps: 200, objective_tol: 1e-9, displacement_tol: 1e-7, proximal_epsilon: 0.0, initial: InitialPolicy::Zeros }
    }
}

impl IterativeOptions {
    pub(crate) fn check(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::invalid("max_sweeps must be at least 1"));
        }
        if !(self.objective_tol > 0.0) || !(self.displacement_tol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if !(self.proximal_epsilon >= 0.0) {
            return Err(Error::invalid("proximal epsilon must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRound {
    pub epsilon: f64,
    pub sweeps: usize,
    pub objective: f64,
    pub penalized_objective: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SolveReport {
    /// Sum throughput after every half-sweep, starting with the initial policy.
    pub objective_trace: Vec<f64>,
    /// Max-norm policy change of every full sweep.
    pub displacement_trace: Vec<f64>,
    pub sweeps_used: usize,
    pub converged: bool,
    pub final_displacement: f64,
    /// Optimality residual of each user's last subproblem.
    pub kkt_residual: [f64; 2],
    pub penalty_rounds: Vec<PenaltyRound>,
    /// Energy removed from each user's arrivals as provably unusable.
    pub removed_energy: [f64; 2],
    /// Arrivals after unusable energy was removed, when any was.
    pub resolved_arrivals: Option<[Vec<f64>; 2]>,
}

impl SolveReport {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

/// The sum rate seen by `user` when the other transmitter's power is fixed.
#[derive(Debug, Clone)]
pub struct RateRestriction {
    pub rates: RateModel,
    pub user: usize,
    pub other: f64,
}

impl RateRestriction {
    fn pair(&self, p: f64) -> (f64, f64) {
        if self.user == 0 {
            (p, self.other)
        } else {
            (self.other, p)
        }
    }
}

impl SlotUtility for RateRestriction {
    fn value(&self, p: f64) -> f64 {
        let (p1, p2) = self.pair(p.max(0.0));
        let r = self.rates.rates(p1, p2);
        r[0] + r[1]
    }

    fn derivative(&self, p: f64) -> f64 {
        let (p1, p2) = self.pair(p.max(0.0));
        let j = self.rates.jac(p1, p2);
        j[0][self.user] + j[1][self.user]
    }

    fn curvature(&self, p: f64) -> f64 {
        let (p1, p2) = self.pair(p.max(0.0));
        self.rates.sum_curvature(self.user, p1, p2)
    }
}

/// Slot utilities of `user` given the other user's powers. Where the
/// restriction is a single fading link the closed-form log utility is used.
pub fn build_subproblem(scenario: &Scenario, rates: &RateModel, user: usize, other: &[f64]) -> Result<Vec<Utility>> {
    if user > 1 {
        return Err(Error::invalid(format!("user index {user} out of range")));
    }
    if other.len() != scenario.grid.slots {
        return Err(Error::shape(format!("other user has {} slots, scenario has {}", other.len(), scenario.grid.slots)));
    }
    other
        .iter()
        .map(|&q| {
            if !(q >= 0.0) {
                return Err(Error::Domain { value: q });
            }
            let u: Utility = match rates.fading_base_level(user, q) {
                Some(base) => {
                    let offset = if user == 0 { rates.sum_rate(0.0, q)? } else { rates.sum_rate(q, 0.0)? };
                    Arc::new(LogUtility { base, weight: 1.0, offset })
                }
                None => Arc::new(RateRestriction { rates: rates.clone(), user, other: q }),
            };
            Ok(u)
        })
        .collect()
}

pub(crate) fn sum_throughput(rates: &RateModel, p: &[Vec<f64>; 2], tau: f64) -> f64 {
    p[0].iter().zip(&p[1]).map(|(&x, &y)| {
        let r = rates.rates(x, y);
        tau * (r[0] + r[1])
    }).sum()
}

pub(crate) fn initial_rows(scenario: &Scenario, initial: &InitialPolicy) -> Result<[Vec<f64>; 2]> {
    let n = scenario.grid.slots;
    let tau = scenario.grid.tau;
    let raw: [Vec<f64>; 2] = match initial {
        InitialPolicy::Zeros => [vec![0.0; n], vec![0.0; n]],
        InitialPolicy::SpendEvenly => {
            let even = |j: usize| vec![scenario.users[j].harvest.total() / (n as f64 * tau); n];
            [even(0), even(1)]
        }
        InitialPolicy::Supplied(p) => {
            if p.users() != 2 || p.slots() != n {
                return Err(Error::shape(format!("initial policy is {}x{}, expected 2x{n}", p.users(), p.slots())));
            }
            [p.user(0).to_vec(), p.user(1).to_vec()]
        }
    };
    let project = |j: usize| {
        let h = &scenario.users[j].harvest;
        single_user::project_row(&raw[j], &h.arrivals, h.e_max, tau)
    };
    Ok([project(0), project(1)])
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One best response of `user` to the other row, optionally pulled toward
/// `center` by the proximal weight.
pub(crate) fn best_response(scenario: &Scenario, rates: &RateModel, user: usize, rows: &[Vec<f64>; 2], eps: f64) -> Result<Vec<f64>> {
    let tau = scenario.grid.tau;
    let mut utils = build_subproblem(scenario, rates, user, &rows[1 - user])?;
    if eps > 0.0 {
        utils = utils
            .into_iter()
            .zip(&rows[user])
            .map(|(u, &c)| Arc::new(Proximal { inner: u, weight: eps / tau, center: c }) as Utility)
            .collect();
    }
    let h = &scenario.users[user].harvest;
    Ok(single_user::solve_row(&utils, &h.arrivals, h.e_max, tau))
}

fn kkt_residuals(scenario: &Scenario, rates: &RateModel, rows: &[Vec<f64>; 2]) -> Result<[f64; 2]> {
    let mut out = [0.0; 2];
    for (j, slot) in out.iter_mut().enumerate() {
        let utils = build_subproblem(scenario, rates, j, &rows[1 - j])?;
        let policy = PowerPolicy::single(rows[j].clone())?;
        let cert = single_user::verify_kkt(&policy, &utils, &scenario.users[j].harvest, &scenario.grid)?;
        *slot = cert.stationarity_residual.max(cert.complementarity_residual);
    }
    Ok(out)
}

/// Alternating best responses, user 1 first. Data profiles are ignored here.
pub fn iterate_offline(scenario: &Scenario, rates: &RateModel, opts: &IterativeOptions) -> Result<(PowerPolicy, SolveReport)> {
    opts.check()?;
    let scenario = validate_scenario(scenario)?;
    let tau = scenario.grid.tau;
    let mut rows = initial_rows(&scenario, &opts.initial)?;
    let mut report = SolveReport { objective_trace: vec![sum_throughput(rates, &rows, tau)], ..Default::default() };

    for sweep in 1..=opts.max_sweeps {
        let before = rows.clone();
        let start = *report.objective_trace.last().unwrap();
        for user in 0..2 {
            let row = best_response(&scenario, rates, user, &rows, opts.proximal_epsilon).map_err(|e| match e {
                Error::Convergence { context, residual } => {
                    Error::Convergence { context: format!("sweep {sweep}, user {}: {context}", user + 1), residual }
                }
                other => other,
            })?;
            rows[user] = row;
            report.objective_trace.push(sum_throughput(rates, &rows, tau));
        }
        let disp = max_diff(&rows[0], &before[0]).max(max_diff(&rows[1], &before[1]));
        report.displacement_trace.push(disp);
        report.sweeps_used = sweep;
        report.final_displacement = disp;
        let end = *report.objective_trace.last().unwrap();
        let gain = (end - start) / end.abs().max(f64::MIN_POSITIVE);
        if gain <= opts.objective_tol && disp <= opts.displacement_tol {
            report.converged = true;
            break;
        }
    }
    report.kkt_residual = kkt_residuals(&scenario, rates, &rows)?;
    let [p1, p2] = rows;
    Ok((PowerPolicy::pair(p1, p2)?, report))
}

/// Generalized water level `d r / d p_j` of both users in every slot.
pub fn water_levels(policy: &PowerPolicy, rates: &RateModel) -> Result<[Vec<f64>; 2]> {
    let mut out = [Vec::with_capacity(policy.slots()), Vec::with_capacity(policy.slots())];
    for i in 0..policy.slots() {
        let (p1, p2) = policy.slot(i);
        let (g1, g2) = rates.grad(p1, p2)?;
        out[0].push(g1);
        out[1].push(g2);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{feasibility_report, TimeGrid, UserProfile};
    use crate::rates::{ChannelParams, Region};

    fn scenario(e1: Vec<f64>, e2: Vec<f64>, e_max: f64, a: f64, b: f64) -> Scenario {
        let n = e1.len();
        Scenario::new(
            TimeGrid::new(n, 1.0).unwrap(),
            [UserProfile::backlogged(e1, e_max), UserProfile::backlogged(e2, e_max)],
            ChannelParams { a, b },
        )
    }

    #[test]
    fn fading_base_levels() {
        let s = scenario(vec![1.0; 2], vec![1.0; 2], 10.0, 0.9, 2.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        let u = build_subproblem(&s, &rates, 0, &[0.0, 2.0]).unwrap();
        // 1/(2 base) at zero power
        assert!((u[0].derivative(0.0) - 0.5).abs() < 1e-15);
        assert!((0.5 / u[1].derivative(0.0) - 2.8).abs() < 1e-12);
        assert!((u[1].value(1.0) - rates.sum_rate(1.0, 2.0).unwrap()).abs() < 1e-14);

        let s = scenario(vec![1.0; 1], vec![1.0; 1], 10.0, 0.5, 1.5);
        let rates = RateModel::for_scenario(&s).unwrap();
        let u = build_subproblem(&s, &rates, 0, &[4.0]).unwrap();
        assert!((0.5 / u[0].derivative(0.0) - 10.0 / 3.0).abs() < 1e-12);
        assert!((u[0].value(0.7) - rates.sum_rate(0.7, 4.0).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn second_user_restriction_matches_sum_rate() {
        let s = scenario(vec![1.0; 2], vec![1.0; 2], 10.0, 0.9, 2.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        let u = build_subproblem(&s, &rates, 1, &[1.5, 0.0]).unwrap();
        for &p in &[0.0, 0.3, 2.0] {
            assert!((u[0].value(p) - rates.sum_rate(1.5, p).unwrap()).abs() < 1e-14);
            assert!((u[0].derivative(p) - rates.grad(1.5, p).unwrap().1).abs() < 1e-14);
        }
    }

    #[test]
    fn decoupled_links_converge_in_one_sweep() {
        let s = scenario(vec![2.0, 0.0, 1.0], vec![0.0, 3.0, 0.0], 3.0, 0.0, 0.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        assert_eq!(rates.region(), Region::GenericConcave);
        let (p, rep) = iterate_offline(&s, &rates, &IterativeOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.displacement_trace[1] <= 1e-12);
        assert!((p.user(0)[0] - 1.0).abs() < 1e-9 && (p.user(0)[2] - 1.0).abs() < 1e-9);
        assert!((p.user(1)[1] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn very_strong_needs_one_sweep() {
        let s = scenario(vec![1.0, 0.5, 0.2], vec![0.3, 0.0, 1.0], 1.0, 5.0, 6.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        assert_eq!(rates.region(), Region::VeryStrong);
        let (_, rep) = iterate_offline(&s, &rates, &IterativeOptions::default()).unwrap();
        assert!(rep.displacement_trace[1] <= 1e-9);
    }

    #[test]
    fn ascent_is_monotone_and_feasible() {
        let s = scenario(vec![3.0, 0.0, 1.0, 2.0], vec![0.5, 2.5, 0.0, 1.0], 3.0, 0.9, 2.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        let (p, rep) = iterate_offline(&s, &rates, &IterativeOptions::default()).unwrap();
        assert!(rep.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        let f = feasibility_report(&p, &s, &rates, 3e-9).unwrap();
        assert!(f.feasible_energy());
        assert!(rep.kkt_residual[0] <= 1e-6 && rep.kkt_residual[1] <= 1e-6);
    }

    #[test]
    fn proximal_term_reaches_same_value() {
        let s = scenario(vec![2.0, 1.0, 0.0], vec![0.0, 1.0, 2.0], 2.0, 0.6, 1.4);
        let rates = RateModel::for_scenario(&s).unwrap();
        let (_, plain) = iterate_offline(&s, &rates, &IterativeOptions::default()).unwrap();
        let opts = IterativeOptions { proximal_epsilon: 1e-6, ..Default::default() };
        let (_, prox) = iterate_offline(&s, &rates, &opts).unwrap();
        assert!((plain.objective() - prox.objective()).abs() <= 1e-7 * plain.objective());
    }

    #[test]
    fn start_point_does_not_matter() {
        let s = scenario(vec![1.0, 0.0, 2.0, 0.5], vec![0.0, 2.0, 0.0, 1.5], 2.0, 3.0, 0.5);
        let rates = RateModel::for_scenario(&s).unwrap();
        assert!(rates.tag().mirrored);
        let (_, zero) = iterate_offline(&s, &rates, &IterativeOptions::default()).unwrap();
        let opts = IterativeOptions { initial: InitialPolicy::SpendEvenly, ..Default::default() };
        let (_, even) = iterate_offline(&s, &rates, &opts).unwrap();
        assert!((zero.objective() - even.objective()).abs() <= 1e-6 * zero.objective());
    }
}
