//! Data-arrival constraints through a quadratic penalty.
//!
//! The penalized objective is
//! `sum_i tau * r(p_1i, p_2i) - eps * sum_j sum_n C_jn^2` with
//! `C_jn = max(0, sum_{i<=n} (tau * r_j - B_ji))`. Each block is solved by
//! sequential quadratic steps: a Gauss-Newton model of the penalty plus the
//! exact rate curvature, maximized over the user's energy constraints.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iterative::{iterate_offline, sum_throughput, IterativeOptions, PenaltyRound, SolveReport};
use crate::model::{cumulative_user_departures, validate_scenario, PowerPolicy, Scenario};
use crate::rates::RateModel;
use crate::single_user::project_row;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    /// Coefficient of the first penalized round; round 0 is unpenalized.
    pub initial: f64,
    pub growth_factor: f64,
    pub max_rounds: usize,
    /// Largest acceptable violation, in the scenario's data units.
    pub violation_tol: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        // 1e-4 bits expressed in nats
        PenaltySchedule { initial: 1.0, growth_factor: 4.0, max_rounds: 40, violation_tol: 1e-4 * std::f64::consts::LN_2 }
    }
}

impl PenaltySchedule {
    fn check(&self) -> Result<()> {
        if !(self.growth_factor > 1.0) {
            return Err(Error::invalid("penalty growth factor must exceed 1"));
        }
        if !(self.initial > 0.0) || !(self.violation_tol > 0.0) || self.max_rounds == 0 {
            return Err(Error::invalid("penalty coefficient, tolerance and round count must be positive"));
        }
        Ok(())
    }

    /// Coefficient of round `k`; round 0 is unpenalized.
    pub fn epsilon(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.initial * self.growth_factor.powi(k as i32 - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationProfile {
    pub c: [Vec<f64>; 2],
}

impl ViolationProfile {
    pub fn max(&self) -> f64 {
        self.c.iter().flatten().fold(0.0, |m, &v| m.max(v))
    }

    pub fn user_max(&self, j: usize) -> f64 {
        self.c[j].iter().fold(0.0, |m, &v| m.max(v))
    }
}

fn cumulative(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// Per-user, per-slot excess of cumulative departures over cumulative data.
pub fn violation(policy: &PowerPolicy, scenario: &Scenario, rates: &RateModel) -> Result<ViolationProfile> {
    let n = scenario.grid.slots;
    if policy.slots() != n {
        return Err(Error::shape(format!("policy has {} slots, scenario has {n}", policy.slots())));
    }
    let dep = cumulative_user_departures(policy, rates, scenario.grid.tau)?;
    let mut c = [vec![0.0; n], vec![0.0; n]];
    for j in 0..2 {
        if let Some(b) = scenario.users[j].data.arrivals() {
            for (i, d) in cumulative(b).into_iter().enumerate() {
                c[j][i] = (dep[j][i] - d).max(0.0);
            }
        }
    }
    Ok(ViolationProfile { c })
}

/// Water-level offsets the penalty adds to `user`'s slots: `forward` from
/// the user's own data constraints, `backward` from the other user's.
#[derive(Debug, Clone, PartialEq)]
pub struct PumpOffsets {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
}

pub fn pump_offsets(policy: &PowerPolicy, scenario: &Scenario, rates: &RateModel, user: usize, eps: f64) -> Result<PumpOffsets> {
    let v = violation(policy, scenario, rates)?;
    let n = scenario.grid.slots;
    let mut out = [vec![0.0; n], vec![0.0; n]];
    for (k, row) in out.iter_mut().enumerate() {
        let mut tail = 0.0;
        for i in (0..n).rev() {
            tail += v.c[k][i];
            let (p1, p2) = policy.slot(i);
            let jac = rates.user_rate_jacobian(p1, p2)?;
            row[i] = 2.0 * eps * tail * jac[k][user];
        }
    }
    let [own, other] = if user == 0 { out } else { [out[1].clone(), out[0].clone()] };
    Ok(PumpOffsets { forward: own, backward: other })
}

struct Block<'a> {
    scenario: &'a Scenario,
    rates: &'a RateModel,
    user: usize,
    data: [Option<Vec<f64>>; 2],
    eps: f64,
}

struct Model {
    value: f64,
    grad: Vec<f64>,
    // negative semidefinite, row-major
    hess: Vec<f64>,
}

impl<'a> Block<'a> {
    fn pair<'b>(&self, x: &'b [f64], other: &'b [f64], i: usize) -> (f64, f64) {
        if self.user == 0 {
            (x[i], other[i])
        } else {
            (other[i], x[i])
        }
    }

    fn value(&self, x: &[f64], other: &[f64]) -> f64 {
        let tau = self.scenario.grid.tau;
        let n = x.len();
        let mut total = 0.0;
        let mut dep = [0.0; 2];
        let mut penalty = 0.0;
        for i in 0..n {
            let (p1, p2) = self.pair(x, other, i);
            let r = self.rates.rates(p1, p2);
            total += tau * (r[0] + r[1]);
            for k in 0..2 {
                dep[k] += tau * r[k];
                if let Some(d) = &self.data[k] {
                    let c = (dep[k] - d[i]).max(0.0);
                    penalty += c * c;
                }
            }
        }
        total - self.eps * penalty
    }

    fn model(&self, x: &[f64], other: &[f64]) -> Model {
        let tau = self.scenario.grid.tau;
        let n = x.len();
        let j = self.user;
        let mut jac = Vec::with_capacity(n);
        let mut c = [vec![0.0; n], vec![0.0; n]];
        let mut dep = [0.0; 2];
        let mut total = 0.0;
        let mut penalty = 0.0;
        for i in 0..n {
            let (p1, p2) = self.pair(x, other, i);
            let r = self.rates.rates(p1, p2);
            total += tau * (r[0] + r[1]);
            jac.push(self.rates.jac(p1, p2));
            for k in 0..2 {
                dep[k] += tau * r[k];
                if let Some(d) = &self.data[k] {
                    c[k][i] = (dep[k] - d[i]).max(0.0);
                    penalty += c[k][i] * c[k][i];
                }
            }
        }
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        for k in 0..2 {
            let mut tail = 0.0;
            let mut active = 0.0;
            let mut active_from = vec![0.0; n];
            for i in (0..n).rev() {
                tail += c[k][i];
                if c[k][i] > 0.0 {
                    active += 1.0;
                }
                active_from[i] = active;
                grad[i] -= 2.0 * self.eps * tau * jac[i][k][j] * tail;
            }
            if active > 0.0 {
                for i in 0..n {
                    for l in 0..n {
                        let count = active_from[i.max(l)];
                        hess[i * n + l] -= 2.0 * self.eps * tau * tau * jac[i][k][j] * jac[l][k][j] * count;
                    }
                }
            }
        }
        for i in 0..n {
            let (p1, p2) = self.pair(x, other, i);
            grad[i] += tau * (jac[i][0][j] + jac[i][1][j]);
            hess[i * n + i] += tau * self.rates.sum_curvature(j, p1, p2).min(0.0);
        }
        let diag = (0..n).map(|i| hess[i * n + i].abs()).fold(0.0, f64::max);
        let ridge = 1e-9 * (1.0 + diag);
        for i in 0..n {
            hess[i * n + i] -= ridge;
        }
        Model { value: total - self.eps * penalty, grad, hess }
    }

    /// Maximizer of the quadratic model over the user's energy constraints,
    /// as a step from `x`.
    fn step(&self, x: &[f64], m: &Model) -> Option<Vec<f64>> {
        let n = x.len();
        let tau = self.scenario.grid.tau;
        let h = &self.scenario.users[self.user].harvest;
        let upper = cumulative(&h.arrivals);
        let spend = cumulative(&x.iter().map(|p| p * tau).collect::<Vec<_>>());

        let mut colptr = vec![0usize];
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        for col in 0..n {
            for row in 0..=col {
                let v = -m.hess[row * n + col];
                if v != 0.0 {
                    rowval.push(row);
                    nzval.push(v);
                }
            }
            colptr.push(rowval.len());
        }
        let p = CscMatrix::new(n, n, colptr, rowval, nzval);
        let q: Vec<f64> = m.grad.iter().map(|g| -g).collect();

        // rows: n causality, n-1 battery, n nonnegativity
        let rows = 3 * n - 1;
        let mut colptr = vec![0usize];
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        for col in 0..n {
            for r in col..n {
                rowval.push(r);
                nzval.push(tau);
            }
            for r in col..n - 1 {
                rowval.push(n + r);
                nzval.push(-tau);
            }
            rowval.push(2 * n - 1 + col);
            nzval.push(-1.0);
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(rows, n, colptr, rowval, nzval);
        let mut b = Vec::with_capacity(rows);
        for i in 0..n {
            b.push((upper[i] - spend[i]).max(0.0));
        }
        for i in 0..n - 1 {
            b.push((spend[i] - (upper[i + 1] - h.e_max)).max(0.0));
        }
        b.extend(x.iter().map(|v| v.max(0.0)));

        let settings = DefaultSettingsBuilder::default().verbose(false).build().ok()?;
        let cones = [NonnegativeConeT(rows)];
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).ok()?;
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Some(solver.solution.x.clone()),
            _ => None,
        }
    }

    fn project(&self, y: &[f64]) -> Vec<f64> {
        let h = &self.scenario.users[self.user].harvest;
        project_row(y, &h.arrivals, h.e_max, self.scenario.grid.tau)
    }

    /// Improves `x` until the sequential quadratic steps stall.
    fn ascend(&self, x: &mut Vec<f64>, other: &[f64]) {
        for _ in 0..60 {
            let m = self.model(x, other);
            let d = match self.step(x, &m) {
                Some(d) => d,
                None => {
                    // projected gradient fallback
                    let scale = 1.0 / m.hess.iter().map(|v| v.abs()).fold(1e-12, f64::max);
                    let y: Vec<f64> = x.iter().zip(&m.grad).map(|(v, g)| v + scale * g).collect();
                    self.project(&y).iter().zip(x.iter()).map(|(a, b)| a - b).collect()
                }
            };
            let slope: f64 = m.grad.iter().zip(&d).map(|(g, s)| g * s).sum();
            let size = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !(slope > 0.0) || size <= 1e-13 * (1.0 + x.iter().fold(0.0f64, |a, v| a.max(*v))) {
                break;
            }
            let mut t = 1.0;
            let mut accepted = None;
            while t > 1e-12 {
                let y: Vec<f64> = x.iter().zip(&d).map(|(v, s)| v + t * s).collect();
                let y = self.project(&y);
                let fy = self.value(&y, other);
                if fy >= m.value + 1e-4 * t * slope {
                    accepted = Some((y, fy));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((y, fy)) => {
                    let gain = fy - m.value;
                    *x = y;
                    if gain <= 1e-14 * (1.0 + m.value.abs()) {
                        break;
                    }
                }
                None => break,
            }
        }
    }
}

struct Penalized<'a> {
    scenario: &'a Scenario,
    rates: &'a RateModel,
    data: [Option<Vec<f64>>; 2],
}

impl<'a> Penalized<'a> {
    fn new(scenario: &'a Scenario, rates: &'a RateModel) -> Self {
        let data = [0, 1].map(|j| scenario.users[j].data.arrivals().map(cumulative));
        Penalized { scenario, rates, data }
    }

    fn block(&self, user: usize, eps: f64) -> Block<'_> {
        Block { scenario: self.scenario, rates: self.rates, user, data: self.data.clone(), eps }
    }

    fn value(&self, rows: &[Vec<f64>; 2], eps: f64) -> f64 {
        self.block(0, eps).value(&rows[0], &rows[1])
    }

    /// Coordinate ascent on the penalized objective for a fixed coefficient.
    fn run(&self, rows: &mut [Vec<f64>; 2], eps: f64, opts: &IterativeOptions, report: &mut SolveReport) -> usize {
        let tau = self.scenario.grid.tau;
        let mut sweeps = 0;
        for _ in 0..opts.max_sweeps {
            sweeps += 1;
            let before = rows.clone();
            let start = self.value(rows, eps);
            for user in 0..2 {
                let mut x = rows[user].clone();
                let other = rows[1 - user].clone();
                self.block(user, eps).ascend(&mut x, &other);
                rows[user] = x;
                report.objective_trace.push(sum_throughput(self.rates, rows, tau));
            }
            let end = self.value(rows, eps);
            let disp = rows[0]
                .iter()
                .zip(&before[0])
                .chain(rows[1].iter().zip(&before[1]))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            report.displacement_trace.push(disp);
            report.final_displacement = disp;
            if (end - start).abs() <= opts.objective_tol * end.abs().max(1e-300) && disp <= opts.displacement_tol {
                break;
            }
        }
        sweeps
    }
}

/// Extra removal rounds after the penalty stalls.
const TIGHTEN_PASSES: usize = 3;

fn max_violation(rows: &[Vec<f64>; 2], scenario: &Scenario, rates: &RateModel) -> Result<f64> {
    let policy = PowerPolicy::pair(rows[0].clone(), rows[1].clone())?;
    Ok(violation(&policy, scenario, rates)?.max())
}

/// Maximizes throughput under energy, battery and data constraints.
///
/// Arrivals that provably cannot be used are removed first (see
/// [`resolve_contradictions`]). If the penalty rounds still end with a
/// violation, [`tighten_contradictions`] removes more against the stalled
/// schedule and the rounds restart, at most `TIGHTEN_PASSES` times. The
/// returned policy is feasible for the reduced scenario, which the report
/// records.
pub fn solve_with_data(
    scenario: &Scenario,
    rates: &RateModel,
    opts: &IterativeOptions,
    schedule: &PenaltySchedule,
) -> Result<(PowerPolicy, SolveReport)> {
    schedule.check()?;
    opts.check()?;
    let original = validate_scenario(scenario)?;
    if !original.has_data_constraints() {
        return iterate_offline(&original, rates, opts);
    }

    let (mut policy, mut report) = iterate_offline(&original, rates, opts)?;
    let mut scenario = original.clone();
    let first = violation(&policy, &scenario, rates)?;
    let mut rows = [policy.user(0).to_vec(), policy.user(1).to_vec()];
    let mut viol = first.max();
    if viol > schedule.violation_tol {
        let resolved = resolve_contradictions(&scenario, &policy, &first)?;
        if resolved != scenario {
            scenario = resolved;
            let (p, r) = iterate_offline(&scenario, rates, opts)?;
            policy = p;
            report.objective_trace.extend(r.objective_trace);
            report.displacement_trace.extend(r.displacement_trace);
            report.sweeps_used += r.sweeps_used;
            rows = [policy.user(0).to_vec(), policy.user(1).to_vec()];
        }
    }
    let tau = scenario.grid.tau;

    for pass in 0..=TIGHTEN_PASSES {
        viol = max_violation(&rows, &scenario, rates)?;
        report.penalty_rounds.push(PenaltyRound {
            epsilon: 0.0,
            sweeps: report.sweeps_used,
            objective: sum_throughput(rates, &rows, tau),
            penalized_objective: sum_throughput(rates, &rows, tau),
            max_violation: viol,
        });
        let problem = Penalized::new(&scenario, rates);
        let mut round = 0;
        while viol > schedule.violation_tol && round < schedule.max_rounds {
            round += 1;
            let eps = schedule.epsilon(round);
            let sweeps = problem.run(&mut rows, eps, opts, &mut report);
            report.sweeps_used += sweeps;
            viol = max_violation(&rows, &scenario, rates)?;
            report.penalty_rounds.push(PenaltyRound {
                epsilon: eps,
                sweeps,
                objective: sum_throughput(rates, &rows, tau),
                penalized_objective: problem.value(&rows, eps),
                max_violation: viol,
            });
        }
        if viol <= schedule.violation_tol || pass == TIGHTEN_PASSES {
            break;
        }
        // the stalled schedule shows how much interference is really available
        let stalled = PowerPolicy::pair(rows[0].clone(), rows[1].clone())?;
        let tightened = tighten_contradictions(&scenario, &stalled, &violation(&stalled, &scenario, rates)?, schedule.violation_tol)?;
        if tightened == scenario {
            break;
        }
        scenario = tightened;
        let (p, r) = iterate_offline(&scenario, rates, opts)?;
        report.objective_trace.extend(r.objective_trace);
        report.displacement_trace.extend(r.displacement_trace);
        report.sweeps_used += r.sweeps_used;
        rows = [p.user(0).to_vec(), p.user(1).to_vec()];
    }

    let [p1, p2] = rows;
    let policy = PowerPolicy::pair(p1, p2)?;
    if scenario != original {
        for j in 0..2 {
            report.removed_energy[j] = original.users[j].harvest.total() - scenario.users[j].harvest.total();
        }
        report.resolved_arrivals = Some([scenario.users[0].harvest.arrivals.clone(), scenario.users[1].harvest.arrivals.clone()]);
    }
    if viol > schedule.violation_tol {
        return Err(Error::DataCausality { violation: viol, best: Box::new(policy) });
    }
    report.converged = true;
    Ok((policy, report))
}

/// Largest energy user `j` can spend in one slot while sending at most
/// `data`, whichever interference level in `qs` the other user produces.
/// Concave rates are subadditive, so no schedule spreading the same energy
/// over several slots sends less.
fn energy_bound(rates: &RateModel, j: usize, data: f64, p_max: f64, qs: &[f64], tau: f64) -> f64 {
    let rate = |p: f64| {
        qs.iter()
            .map(|&q| {
                let r = if j == 0 { rates.rates(p, q) } else { rates.rates(q, p) };
                r[j]
            })
            .fold(f64::INFINITY, f64::min)
    };
    if tau * rate(p_max) <= data {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, p_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tau * rate(mid) <= data {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * p_max {
            break;
        }
    }
    tau * lo
}

/// Takes `forced_n - bound[n]` off the earliest arrivals wherever the
/// battery forces more spending by slot `n` than `bound[n]` allows.
fn trim(arrivals: &mut [f64], e_max: f64, bound: impl Fn(usize) -> f64) {
    for i in 0..arrivals.len().saturating_sub(1) {
        let forced: f64 = arrivals[..=i + 1].iter().sum::<f64>() - e_max;
        if forced <= 0.0 {
            continue;
        }
        let mut excess = forced - bound(i);
        if excess <= 1e-12 * e_max {
            continue;
        }
        for e in arrivals.iter_mut().take(i + 2) {
            let cut = e.min(excess);
            *e -= cut;
            excess -= cut;
            if excess <= 0.0 {
                break;
            }
        }
    }
}

/// Removes harvested energy that cannot be consumed without either
/// overflowing the battery or sending data that has not arrived.
///
/// Runs for users whose data constraint `policy` violates. By slot `n` a user can spend at most
/// `tau * r_j^-1(D_n / tau)` at the strongest interference, yet the battery
/// requires at least `sum_{i<=n+1} E_i - E_max`; the excess is taken from
/// the earliest arrivals.
pub fn resolve_contradictions(scenario: &Scenario, policy: &PowerPolicy, violations: &ViolationProfile) -> Result<Scenario> {
    let mut out = validate_scenario(scenario)?;
    let n = out.grid.slots;
    let tau = out.grid.tau;
    if policy.slots() != n {
        return Err(Error::shape(format!("policy has {} slots, scenario has {n}", policy.slots())));
    }
    let rates = RateModel::for_scenario(&out)?;
    let bounds = out.power_bounds();
    for j in 0..2 {
        let Some(b) = out.users[j].data.arrivals().map(cumulative) else { continue };
        let h = &out.users[j].harvest;
        let scale = h.e_max;
        if violations.user_max(j) <= 1e-9 * scale {
            continue;
        }
        let p_max = (h.total() / tau).max(bounds[j]);
        let qs: Vec<f64> = (0..=8).map(|s| bounds[1 - j] * s as f64 / 8.0).collect();
        let e_max = h.e_max;
        let mut arrivals = h.arrivals.clone();
        trim(&mut arrivals, e_max, |i| energy_bound(&rates, j, b[i], p_max, &qs, tau));
        out.users[j].harvest.arrivals = arrivals;
    }
    Ok(out)
}

/// Second-stage removal for schedules the penalty cannot repair: the
/// bound of [`resolve_contradictions`] is recomputed with the other user's
/// powers in `policy` instead of the strongest interference, so by slot `n`
/// user `j` may spend no more than the best single slot `k <= n` allows.
pub fn tighten_contradictions(scenario: &Scenario, policy: &PowerPolicy, violations: &ViolationProfile, tol: f64) -> Result<Scenario> {
    let mut out = validate_scenario(scenario)?;
    let n = out.grid.slots;
    let tau = out.grid.tau;
    if policy.slots() != n {
        return Err(Error::shape(format!("policy has {} slots, scenario has {n}", policy.slots())));
    }
    let rates = RateModel::for_scenario(&out)?;
    let bounds = out.power_bounds();
    for j in 0..2 {
        let Some(b) = out.users[j].data.arrivals().map(cumulative) else { continue };
        if violations.user_max(j) <= tol {
            continue;
        }
        let h = &out.users[j].harvest;
        let p_max = (h.total() / tau).max(bounds[j]);
        let other = policy.user(1 - j);
        let mut arrivals = h.arrivals.clone();
        trim(&mut arrivals, h.e_max, |i| {
            (0..=i).map(|k| energy_bound(&rates, j, b[i], p_max, &other[k..=k], tau)).fold(0.0, f64::max)
        });
        out.users[j].harvest.arrivals = arrivals;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{feasibility_report, DataProfile, TimeGrid, UserProfile};
    use crate::rates::{ChannelParams, LinearRate};
    use std::sync::Arc;

    fn single(e: Vec<f64>, e_max: f64, b: Vec<f64>) -> Scenario {
        let n = e.len();
        Scenario::new(
            TimeGrid::new(n, 1.0).unwrap(),
            [UserProfile::with_data(e, e_max, b), UserProfile::silent(n)],
            ChannelParams { a: 0.9, b: 2.0 },
        )
    }

    #[test]
    fn backlogged_users_have_no_violation() {
        let mut s = single(vec![1.0, 1.0], 2.0, vec![0.0, 0.0]);
        s.users[0].data = DataProfile::Infinite;
        let rates = RateModel::for_scenario(&s).unwrap();
        let p = PowerPolicy::pair(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(violation(&p, &s, &rates).unwrap().max(), 0.0);
    }

    #[test]
    fn departures_before_arrival_violate() {
        let s = single(vec![2.0, 0.0], 2.0, vec![0.0, 10.0]);
        let rates = RateModel::for_scenario(&s).unwrap();
        // tau * r_1 = 0.3 in the first slot
        let p0 = (0.6f64).exp_m1();
        let p = PowerPolicy::pair(vec![p0, 0.0], vec![0.0, 0.0]).unwrap();
        let v = violation(&p, &s, &rates).unwrap();
        assert!((v.c[0][0] - 0.3).abs() < 1e-12);
        assert_eq!(v.c[0][1], 0.0);
    }

    #[test]
    fn spends_nothing_before_data_arrives() {
        let s = single(vec![1.0, 1.0], 1.0, vec![0.0, 100.0]);
        let rates = RateModel::for_scenario(&s).unwrap();
        let (p, rep) = solve_with_data(&s, &rates, &IterativeOptions::default(), &PenaltySchedule::default()).unwrap();
        assert_eq!(p.user(0), &[0.0, 1.0]);
        assert!((rep.removed_energy[0] - 1.0).abs() < 1e-15);
        assert_eq!(rep.resolved_arrivals.as_ref().unwrap()[0], vec![0.0, 1.0]);
    }

    #[test]
    fn resolution_removes_earliest_arrivals() {
        let s = single(vec![1.0, 1.0, 1.0], 1.0, vec![0.0, 0.0, 100.0]);
        let rates = RateModel::for_scenario(&s).unwrap();
        let p = PowerPolicy::pair(vec![1.0; 3], vec![0.0; 3]).unwrap();
        let v = violation(&p, &s, &rates).unwrap();
        let r = resolve_contradictions(&s, &p, &v).unwrap();
        assert_eq!(r.users[0].harvest.arrivals, vec![0.0, 0.0, 1.0]);
        let again = resolve_contradictions(&r, &p, &violation(&p, &r, &rates).unwrap()).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn tightening_uses_actual_interference() {
        let mut s = single(vec![1.0, 1.0], 1.0, vec![0.1, 10.0]);
        s.users[1] = UserProfile::backlogged(vec![1.0, 0.0], 1.0);
        // user 2 stays silent in the first slot
        let p = PowerPolicy::pair(vec![1.0, 1.0], vec![0.0, 1.0]).unwrap();
        let v = ViolationProfile { c: [vec![1.0, 0.0], vec![0.0; 2]] };
        let worst = resolve_contradictions(&s, &p, &v).unwrap();
        let tight = tighten_contradictions(&s, &p, &v, 1e-9).unwrap();
        let kept = tight.users[0].harvest.arrivals[0];
        assert!((kept - 0.2f64.exp_m1()).abs() < 1e-12, "{kept}");
        assert!(kept < worst.users[0].harvest.arrivals[0]);
        assert_eq!(tight.users[1], s.users[1]);
    }

    #[test]
    fn resolution_ignores_backlogged_users() {
        let mut s = single(vec![1.0, 1.0], 1.0, vec![0.0, 0.0]);
        s.users[0].data = DataProfile::Infinite;
        let p = PowerPolicy::pair(vec![1.0; 2], vec![0.0; 2]).unwrap();
        let v = ViolationProfile { c: [vec![0.0; 2], vec![0.0; 2]] };
        assert_eq!(resolve_contradictions(&s, &p, &v).unwrap(), s);
    }

    #[test]
    fn backlog_matches_offline_solver() {
        let mut s = single(vec![1.0, 0.0, 2.0], 2.0, vec![0.0; 3]);
        s.users[0].data = DataProfile::Infinite;
        s.users[1] = UserProfile::backlogged(vec![0.5, 1.0, 0.0], 2.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        let opts = IterativeOptions::default();
        let (a, _) = solve_with_data(&s, &rates, &opts, &PenaltySchedule::default()).unwrap();
        let (b, _) = iterate_offline(&s, &rates, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_rate_instance_becomes_feasible() {
        let s = single(vec![1.0, 0.0, 1.0, 0.5, 0.0], 1.0, vec![0.0, 1.5, 0.0, 0.2, 1.0]);
        let rates = RateModel::with_kernel(s.channel, Arc::new(LinearRate::unit()), s.power_bounds()).unwrap();
        let (p, rep) = solve_with_data(&s, &rates, &IterativeOptions::default(), &PenaltySchedule::default()).unwrap();
        let f = feasibility_report(&p, &s, &rates, 1e-4).unwrap();
        assert!(f.feasible, "{f:?}");
        // all 2.5 units of energy fit under the 2.7 units of data
        assert!((rep.objective() - 2.5).abs() < 1e-3, "{}", rep.objective());
        let v: Vec<f64> = rep.penalty_rounds.iter().map(|r| r.max_violation).collect();
        assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{v:?}");
    }

    #[test]
    fn weak_user_exerts_no_backward_pump() {
        // r_2 does not depend on p_1 here, so user 2's data has no pull on user 1
        let n = 3;
        let s = Scenario::new(
            TimeGrid::new(n, 1.0).unwrap(),
            [UserProfile::with_data(vec![1.0; n], 2.0, vec![0.1; n]), UserProfile::with_data(vec![1.0; n], 2.0, vec![0.0; n])],
            ChannelParams { a: 0.9, b: 2.0 },
        );
        let rates = RateModel::for_scenario(&s).unwrap();
        let p = PowerPolicy::pair(vec![1.0; n], vec![1.0; n]).unwrap();
        let pumps = pump_offsets(&p, &s, &rates, 0, 10.0).unwrap();
        assert!(pumps.backward.iter().all(|&v| v == 0.0));
        assert!(pumps.forward.iter().all(|&v| v > 0.0));
        let pumps = pump_offsets(&p, &s, &rates, 1, 10.0).unwrap();
        assert!(pumps.backward.iter().all(|&v| v < 0.0));
    }

    #[test]
    fn schedule_coefficients() {
        let s = PenaltySchedule::default();
        assert_eq!(s.epsilon(0), 0.0);
        assert_eq!(s.epsilon(1), 1.0);
        assert_eq!(s.epsilon(3), 16.0);
        assert!(PenaltySchedule { growth_factor: 1.0, ..s }.check().is_err());
    }
}
