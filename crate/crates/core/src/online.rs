//! Causal policies: dynamic programming over discretized battery (and data
//! queue) states, the constant-power baseline, and independent per-user
//! water-filling against an assumed mean interference.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iterative::build_subproblem;
use crate::model::{PowerPolicy, Scenario};
use crate::rates::RateModel;
use crate::single_user::solve_single_user;

/// A finite-support distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Support {
    pub fn point(v: f64) -> Self {
        Support { values: vec![v], probs: vec![1.0] }
    }

    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let s = Support { values, probs };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.values.is_empty() || self.values.len() != self.probs.len() {
            return Err(Error::invalid("a distribution needs matching, nonempty value and probability lists"));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.probs.iter().any(|p| *p < 0.0) || self.values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid(format!("probabilities must be nonnegative and sum to 1 (got {total}), values nonnegative")));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().zip(&self.probs).map(|(v, p)| p * (v - m) * (v - m)).sum()
    }
}

/// Per-slot arrival distributions, independent across slots and users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalDistribution {
    pub energy: [Vec<Support>; 2],
    /// `None` for backlogged users.
    pub data: [Option<Vec<Support>>; 2],
}

impl ArrivalDistribution {
    /// Point masses at the scenario's own arrivals.
    pub fn deterministic(s: &Scenario) -> Self {
        let energy = [0, 1].map(|j| s.users[j].harvest.arrivals.iter().map(|&e| Support::point(e)).collect());
        let data = [0, 1].map(|j| s.users[j].data.arrivals().map(|b| b.iter().map(|&x| Support::point(x)).collect()));
        ArrivalDistribution { energy, data }
    }

    fn check(&self, slots: usize) -> Result<()> {
        for j in 0..2 {
            if self.energy[j].len() != slots || self.data[j].as_ref().is_some_and(|d| d.len() != slots) {
                return Err(Error::shape(format!("user {}: arrival distributions do not cover {slots} slots", j + 1)));
            }
            for s in self.energy[j].iter().chain(self.data[j].iter().flatten()) {
                s.check()?;
            }
        }
        Ok(())
    }

    /// Mean total data plus three standard deviations; the plain total when
    /// arrivals are deterministic.
    pub fn queue_cap(&self, j: usize) -> Option<f64> {
        self.data[j].as_ref().map(|d| {
            let mean: f64 = d.iter().map(Support::mean).sum();
            let var: f64 = d.iter().map(Support::variance).sum();
            mean + 3.0 * var.sqrt()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    pub slots: usize,
    pub tau: f64,
    pub e_max: [f64; 2],
    /// Points per battery axis, including 0 and `e_max`.
    pub e_points: [usize; 2],
    /// Queue cap per user; `None` drops the axis.
    pub b_cap: [Option<f64>; 2],
    pub b_points: [usize; 2],
}

impl StateGrid {
    /// Battery axes with spacing at most `e_step`; queue axes with
    /// `b_points` levels for users that have a data distribution.
    pub fn new(slots: usize, tau: f64, e_max: [f64; 2], e_step: f64, dist: &ArrivalDistribution, b_points: usize) -> Result<Self> {
        if slots == 0 || !(tau > 0.0) || !(e_step > 0.0) || e_max.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::invalid("state grid needs slots, tau, battery sizes and spacing all positive"));
        }
        let e_points = e_max.map(|e| ((e / e_step - 1e-9).ceil().max(1.0) as usize) + 1);
        let b_cap = [dist.queue_cap(0), dist.queue_cap(1)];
        if b_cap.iter().flatten().count() > 0 && b_points < 2 {
            return Err(Error::invalid("queue axes need at least two points"));
        }
        Ok(StateGrid { slots, tau, e_max, e_points, b_cap, b_points: [b_points; 2] })
    }

    pub fn e_step(&self, j: usize) -> f64 {
        self.e_max[j] / (self.e_points[j] - 1) as f64
    }

    fn b_step(&self, j: usize) -> f64 {
        self.b_cap[j].map_or(0.0, |c| c / (self.b_points[j] - 1) as f64)
    }

    fn axes(&self) -> Vec<(usize, f64)> {
        let mut axes = vec![(self.e_points[0], self.e_step(0)), (self.e_points[1], self.e_step(1))];
        for j in 0..2 {
            if self.b_cap[j].is_some() {
                axes.push((self.b_points[j], self.b_step(j)));
            }
        }
        axes
    }

    fn state_count(&self) -> usize {
        self.axes().iter().map(|a| a.0).product()
    }
}

/// A point in the state space: batteries, then queues of users with data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub e: [f64; 2],
    pub b: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpTables {
    pub grid: StateGrid,
    /// `values[i][s]`: optimal expected throughput from slot `i` on.
    pub values: Vec<Vec<f64>>,
    /// `actions[i][s]`: powers `(p1, p2)` attaining it.
    pub actions: Vec<Vec<[f64; 2]>>,
    pub warnings: Vec<String>,
    dist: ArrivalDistribution,
}

fn interpolate(axes: &[(usize, f64)], table: &[f64], x: &[f64]) -> f64 {
    let d = axes.len();
    let mut base = 0usize;
    let mut stride = vec![0usize; d];
    let mut s = 1;
    for k in (0..d).rev() {
        stride[k] = s;
        s *= axes[k].0;
    }
    let mut frac = vec![0.0; d];
    let mut has_upper = vec![false; d];
    for k in 0..d {
        let (n, h) = axes[k];
        if n < 2 || h <= 0.0 {
            continue;
        }
        let t = (x[k] / h).clamp(0.0, (n - 1) as f64);
        let i0 = (t.floor() as usize).min(n - 2);
        frac[k] = t - i0 as f64;
        has_upper[k] = true;
        base += i0 * stride[k];
    }
    let mut total = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut at = base;
        for k in 0..d {
            if corner >> k & 1 == 1 {
                if !has_upper[k] {
                    w = 0.0;
                    break;
                }
                w *= frac[k];
                at += stride[k];
            } else {
                w *= 1.0 - frac[k];
            }
        }
        if w != 0.0 {
            total += w * table[at];
        }
    }
    total
}

struct Stage<'a> {
    grid: &'a StateGrid,
    dist: &'a ArrivalDistribution,
    rates: &'a RateModel,
    axes: Vec<(usize, f64)>,
}

impl<'a> Stage<'a> {
    fn decode(&self, mut s: usize) -> State {
        let mut coords = vec![0.0; self.axes.len()];
        for k in (0..self.axes.len()).rev() {
            let (n, h) = self.axes[k];
            coords[k] = (s % n) as f64 * h;
            s /= n;
        }
        let mut b = [0.0; 2];
        let mut k = 2;
        for j in 0..2 {
            if self.grid.b_cap[j].is_some() {
                b[j] = coords[k];
                k += 1;
            }
        }
        State { e: [coords[0], coords[1]], b }
    }

    /// Expected value of `next` after spending `spend` and sending `sent`.
    fn expected(&self, i: usize, next: &[f64], st: &State, spend: [f64; 2], sent: [f64; 2]) -> f64 {
        let mut factors: Vec<(&Support, usize, f64, f64)> = Vec::with_capacity(4);
        for j in 0..2 {
            factors.push((&self.dist.energy[j][i + 1], j, st.e[j] - spend[j], self.grid.e_max[j]));
        }
        let mut dims = 2;
        for j in 0..2 {
            if let (Some(d), Some(cap)) = (&self.dist.data[j], self.grid.b_cap[j]) {
                factors.push((&d[i + 1], dims, st.b[j] - sent[j], cap));
                dims += 1;
            }
        }
        let mut x = vec![0.0; dims];
        let mut total = 0.0;
        let mut idx = vec![0usize; factors.len()];
        loop {
            let mut prob = 1.0;
            for (f, &k) in factors.iter().zip(&idx) {
                prob *= f.0.probs[k];
                x[f.1] = (f.2 + f.0.values[k]).clamp(0.0, f.3);
            }
            if prob > 0.0 {
                total += prob * interpolate(&self.axes, next, &x);
            }
            let mut k = 0;
            loop {
                if k == factors.len() {
                    return total;
                }
                idx[k] += 1;
                if idx[k] < factors[k].0.values.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    fn candidates(&self, j: usize, e: f64) -> Vec<f64> {
        let h = self.grid.e_step(j);
        let k = (e / h + 1e-9).floor() as usize;
        let mut out: Vec<f64> = (0..=k).map(|m| (m as f64 * h).min(e)).collect();
        if e - out[k] > 1e-12 * h {
            out.push(e);
        }
        out
    }

    /// Best action and value at an arbitrary state of slot `i`.
    fn best(&self, i: usize, next: Option<&[f64]>, st: &State) -> ([f64; 2], f64) {
        let tau = self.grid.tau;
        let c1 = self.candidates(0, st.e[0]);
        let c2 = self.candidates(1, st.e[1]);
        let mut best = f64::NEG_INFINITY;
        let mut arg = [0.0, 0.0];
        for &x1 in &c1 {
            for &x2 in &c2 {
                let (p1, p2) = (x1 / tau, x2 / tau);
                let r = self.rates.rates(p1, p2);
                let sent = [tau * r[0], tau * r[1]];
                if (0..2).any(|j| self.grid.b_cap[j].is_some() && sent[j] > st.b[j] + 1e-12) {
                    continue;
                }
                let mut v = sent[0] + sent[1];
                if let Some(next) = next {
                    v += self.expected(i, next, st, [x1, x2], sent);
                }
                if v > best {
                    best = v;
                    arg = [p1, p2];
                }
            }
        }
        (arg, best)
    }
}

/// Backward induction over the state grid.
pub fn value_iteration(dist: &ArrivalDistribution, rates: &RateModel, grid: &StateGrid) -> Result<DpTables> {
    dist.check(grid.slots)?;
    for j in 0..2 {
        if dist.data[j].is_some() != grid.b_cap[j].is_some() {
            return Err(Error::invalid(format!("user {}: queue axis and data distribution disagree", j + 1)));
        }
    }
    let stage = Stage { grid, dist, rates, axes: grid.axes() };
    let count = grid.state_count();
    if count == 0 {
        return Err(Error::invalid("empty state grid"));
    }
    let mut warnings = Vec::new();
    for j in 0..2 {
        if grid.b_cap[j].is_some() {
            let h = grid.e_step(j) / grid.tau;
            let r = if j == 0 { rates.rates(h, 0.0)[0] } else { rates.rates(0.0, h)[1] };
            if grid.b_step(j) > grid.tau * r {
                warnings.push(format!(
                    "user {}: queue spacing {:.3e} is coarser than the smallest departure {:.3e}",
                    j + 1,
                    grid.b_step(j),
                    grid.tau * r
                ));
            }
        }
    }
    let n = grid.slots;
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut actions: Vec<Vec<[f64; 2]>> = vec![Vec::new(); n];
    for i in (0..n).rev() {
        let next = if i + 1 < n { Some(values[i + 1].as_slice()) } else { None };
        let out: Vec<([f64; 2], f64)> = (0..count).into_par_iter().map(|s| stage.best(i, next, &stage.decode(s))).collect();
        actions[i] = out.iter().map(|o| o.0).collect();
        values[i] = out.iter().map(|o| o.1).collect();
    }
    Ok(DpTables { grid: grid.clone(), values, actions, warnings, dist: dist.clone() })
}

impl DpTables {
    fn stage<'a>(&'a self, rates: &'a RateModel) -> Stage<'a> {
        Stage { grid: &self.grid, dist: &self.dist, rates, axes: self.grid.axes() }
    }

    fn coords(&self, st: &State) -> Vec<f64> {
        let mut x = vec![st.e[0], st.e[1]];
        for j in 0..2 {
            if self.grid.b_cap[j].is_some() {
                x.push(st.b[j]);
            }
        }
        x
    }

    /// Interpolated value of slot `i` at `state`.
    pub fn value(&self, i: usize, state: &State) -> f64 {
        interpolate(&self.grid.axes(), &self.values[i], &self.coords(state))
    }

    /// Best action at an arbitrary (off-grid) state of slot `i`.
    pub fn act(&self, rates: &RateModel, i: usize, state: &State) -> [f64; 2] {
        let next = self.values.get(i + 1).map(|v| v.as_slice());
        self.stage(rates).best(i, next, state).0
    }

    /// Expected throughput from the first slot, averaged over its arrivals.
    pub fn expected_value(&self) -> f64 {
        let mut total = 0.0;
        let e = &self.dist.energy;
        for (v1, p1) in e[0][0].values.iter().zip(&e[0][0].probs) {
            for (v2, p2) in e[1][0].values.iter().zip(&e[1][0].probs) {
                let b = [0, 1].map(|j| self.dist.data[j].as_ref().map_or(0.0, |d| d[0].mean()));
                let st = State { e: [v1.min(self.grid.e_max[0]), v2.min(self.grid.e_max[1])], b };
                total += p1 * p2 * self.value(0, &st);
            }
        }
        total
    }

    /// Runs the table policy on the realized arrivals of `scenario`.
    pub fn simulate(&self, rates: &RateModel, scenario: &Scenario) -> Result<PowerPolicy> {
        let n = self.grid.slots;
        if scenario.grid.slots != n {
            return Err(Error::shape("scenario and tables cover different horizons"));
        }
        let tau = scenario.grid.tau;
        let mut rows = [vec![0.0; n], vec![0.0; n]];
        let mut battery = [0.0; 2];
        let mut queue = [0.0; 2];
        for i in 0..n {
            for j in 0..2 {
                let h = &scenario.users[j].harvest;
                battery[j] = (battery[j] + h.arrivals[i]).min(h.e_max);
                if let Some(b) = scenario.users[j].data.arrivals() {
                    queue[j] += b[i];
                }
            }
            let mut st = State { e: battery, b: queue };
            for j in 0..2 {
                if self.grid.b_cap[j].is_none() {
                    st.b[j] = 0.0;
                }
            }
            let p = self.act(rates, i, &st);
            let r = rates.user_rates(p[0], p[1])?;
            let sent = [tau * r.0, tau * r.1];
            for j in 0..2 {
                rows[j][i] = p[j];
                battery[j] = (battery[j] - p[j] * tau).max(0.0);
                queue[j] = (queue[j] - sent[j]).max(0.0);
            }
        }
        let [a, b] = rows;
        PowerPolicy::pair(a, b)
    }

    /// One row per stage and state: coordinates, action, value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["slot", "e1", "e2"];
        if self.grid.b_cap[0].is_some() {
            header.push("b1");
        }
        if self.grid.b_cap[1].is_some() {
            header.push("b2");
        }
        header.extend(["p1", "p2", "value"]);
        let io = |e: csv::Error| Error::invalid(format!("writing table: {e}"));
        w.write_record(&header).map_err(io)?;
        let dummy = RateModel::from_channel(crate::rates::ChannelParams { a: 0.0, b: 0.0 }, [1.0, 1.0])?;
        let stage = self.stage(&dummy);
        for i in 0..self.grid.slots {
            for s in 0..self.values[i].len() {
                let st = stage.decode(s);
                let mut rec = vec![(i + 1).to_string(), st.e[0].to_string(), st.e[1].to_string()];
                for j in 0..2 {
                    if self.grid.b_cap[j].is_some() {
                        rec.push(st.b[j].to_string());
                    }
                }
                let a = self.actions[i][s];
                rec.extend([a[0].to_string(), a[1].to_string(), self.values[i][s].to_string()]);
                w.write_record(&rec).map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::invalid(format!("writing table: {e}")))?;
        Ok(())
    }
}

/// Largest throughput lost by restricting powers to the grid:
/// `N * (g1 + g2) * delta_e`, with `g_j` the steepest slope of the sum
/// rate in `p_j` over the admissible powers.
pub fn grid_error_bound(rates: &RateModel, grid: &StateGrid) -> f64 {
    let bounds = [grid.e_max[0] / grid.tau, grid.e_max[1] / grid.tau];
    let mut g = [0.0f64; 2];
    let k = 20;
    for s in 0..=k {
        for t in 0..=k {
            let p1 = bounds[0] * s as f64 / k as f64;
            let p2 = bounds[1] * t as f64 / k as f64;
            let j = rates.jac(p1, p2);
            g[0] = g[0].max((j[0][0] + j[1][0]).abs());
            g[1] = g[1].max((j[0][1] + j[1][1]).abs());
        }
    }
    let step = grid.e_step(0).max(grid.e_step(1));
    grid.slots as f64 * (g[0] + g[1]) * step
}

/// Constant power at the mean harvest rate, falling back to whatever the
/// battery holds. Overflow beyond the capacity is lost.
pub fn naive_policy(scenario: &Scenario) -> PowerPolicy {
    let n = scenario.grid.slots;
    let tau = scenario.grid.tau;
    let rows = [0, 1].map(|j| {
        let h = &scenario.users[j].harvest;
        let target = h.total() / n as f64 / tau;
        let mut battery = 0.0;
        h.arrivals
            .iter()
            .map(|&e| {
                battery = (battery + e).min(h.e_max);
                let spend = if battery >= target * tau { target * tau } else { battery };
                battery -= spend;
                spend / tau
            })
            .collect::<Vec<f64>>()
    });
    let [a, b] = rows;
    PowerPolicy::pair(a, b).expect("naive powers are nonnegative")
}

/// Mean harvest power of `user`: total arrivals over the horizon.
pub fn mean_harvest_power(scenario: &Scenario, user: usize) -> f64 {
    scenario.users[user].harvest.total() / scenario.grid.deadline()
}

/// Single-link water-filling for `user` with the other transmitter assumed
/// to hold `other_mean_power` in every slot.
pub fn distributed_policy(scenario: &Scenario, rates: &RateModel, user: usize, other_mean_power: f64) -> Result<Vec<f64>> {
    if !(other_mean_power >= 0.0) {
        return Err(Error::invalid(format!("assumed interference power must be nonnegative, got {other_mean_power}")));
    }
    let other = vec![other_mean_power; scenario.grid.slots];
    let utils = build_subproblem(scenario, rates, user, &other)?;
    let (p, _) = solve_single_user(&utils, &scenario.users[user].harvest, &scenario.grid, 1e-7)?;
    Ok(p.user(0).to_vec())
}

/// Both users running [`distributed_policy`] against the given assumed powers.
pub fn distributed_pair(scenario: &Scenario, rates: &RateModel, assumed: [f64; 2]) -> Result<PowerPolicy> {
    // assumed[j] is the power user j attributes to the other user
    let p1 = distributed_policy(scenario, rates, 0, assumed[0])?;
    let p2 = distributed_policy(scenario, rates, 1, assumed[1])?;
    PowerPolicy::pair(p1, p2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iterative::{iterate_offline, IterativeOptions};
    use crate::model::{feasibility_report, throughput, validate_scenario, TimeGrid, UserProfile};
    use crate::rates::ChannelParams;
    use crate::single_user::{LogUtility, Utility};
    use std::sync::Arc;

    fn two(e1: Vec<f64>, e2: Vec<f64>, e_max: f64) -> Scenario {
        let n = e1.len();
        Scenario::new(
            TimeGrid::new(n, 1.0).unwrap(),
            [UserProfile::backlogged(e1, e_max), UserProfile::backlogged(e2, e_max)],
            ChannelParams { a: 0.9, b: 2.0 },
        )
    }

    #[test]
    fn naive_examples() {
        let s = two(vec![2.0, 0.0, 2.0, 0.0], vec![0.0; 4], 4.0);
        assert_eq!(naive_policy(&s).user(0), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(naive_policy(&s).user(1), &[0.0; 4]);
        let s = two(vec![1.0, 0.0], vec![0.0; 2], 4.0);
        assert_eq!(naive_policy(&s).user(0), &[0.5, 0.5]);
        let s = two(vec![0.2, 3.0, 0.0, 0.0], vec![0.0; 4], 4.0);
        let p = naive_policy(&s);
        let rates = RateModel::for_scenario(&s).unwrap();
        assert_eq!(feasibility_report(&p, &s, &rates, 1e-12).unwrap().energy_causality.magnitude, 0.0);
        assert_eq!(p.user(0)[0], 0.2);
    }

    #[test]
    fn last_slot_spends_everything() {
        let s = two(vec![1.0], vec![2.0], 2.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        let dist = ArrivalDistribution::deterministic(&s);
        let grid = StateGrid::new(1, 1.0, [2.0, 2.0], 0.1, &dist, 2).unwrap();
        let t = value_iteration(&dist, &rates, &grid).unwrap();
        let a = t.act(&rates, 0, &State { e: [1.0, 2.0], b: [0.0; 2] });
        assert!((a[0] - 1.0).abs() < 1e-12 && (a[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_energy_no_value() {
        let s = two(vec![0.0; 3], vec![0.0; 3], 1.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        let dist = ArrivalDistribution::deterministic(&s);
        let grid = StateGrid::new(3, 1.0, [1.0, 1.0], 0.25, &dist, 2).unwrap();
        let t = value_iteration(&dist, &rates, &grid).unwrap();
        assert_eq!(t.expected_value(), 0.0);
    }

    #[test]
    fn values_grow_with_energy_and_time() {
        let s = two(vec![0.5, 0.25, 0.5], vec![0.25, 0.5, 0.0], 1.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        let mut dist = ArrivalDistribution::deterministic(&s);
        dist.energy[0][1] = Support::new(vec![0.0, 0.5], vec![0.5, 0.5]).unwrap();
        let grid = StateGrid::new(3, 1.0, [1.0, 1.0], 0.125, &dist, 2).unwrap();
        let t = value_iteration(&dist, &rates, &grid).unwrap();
        let n1 = grid.e_points[1];
        for i in 0..2 {
            for s in 0..t.values[i].len() {
                assert!(t.values[i][s] >= t.values[i + 1][s] - 1e-12);
                if s % n1 + 1 < n1 {
                    assert!(t.values[i][s + 1] >= t.values[i][s] - 1e-12);
                }
                if s + n1 < t.values[i].len() {
                    assert!(t.values[i][s + n1] >= t.values[i][s] - 1e-12);
                }
            }
        }
        let st = grid.e_step(0);
        for i in 0..3 {
            for (s, a) in t.actions[i].iter().enumerate() {
                let e = [(s / n1) as f64 * st, (s % n1) as f64 * st];
                assert!(a[0] <= e[0] + 1e-12 && a[1] <= e[1] + 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_dp_tracks_offline() {
        let s = two(vec![0.5, 0.0, 1.0], vec![1.0, 0.25, 0.0], 1.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        let dist = ArrivalDistribution::deterministic(&s);
        let grid = StateGrid::new(3, 1.0, [1.0, 1.0], 1.0 / 40.0, &dist, 2).unwrap();
        let t = value_iteration(&dist, &rates, &grid).unwrap();
        let (p, _) = iterate_offline(&s, &rates, &IterativeOptions::default()).unwrap();
        let offline = throughput(&p, &rates, 1.0).unwrap();
        let dp = t.expected_value();
        assert!(dp <= offline + 1e-9 && offline - dp <= grid_error_bound(&rates, &grid), "{dp} {offline}");
        let rolled = t.simulate(&rates, &s).unwrap();
        assert!((throughput(&rolled, &rates, 1.0).unwrap() - dp).abs() < 1e-9);
    }

    #[test]
    fn data_queue_blocks_early_transmission() {
        let s = validate_scenario(&Scenario::new(
            TimeGrid::new(2, 1.0).unwrap(),
            [UserProfile::with_data(vec![1.0, 0.0], 1.0, vec![0.0, 2.0]), UserProfile::silent(2)],
            ChannelParams { a: 0.9, b: 2.0 },
        ))
        .unwrap();
        let rates = RateModel::for_scenario(&s).unwrap();
        let mut dist = ArrivalDistribution::deterministic(&s);
        dist.data[1] = None;
        let grid = StateGrid::new(2, 1.0, [1.0, 1.0], 0.1, &dist, 11).unwrap();
        let t = value_iteration(&dist, &rates, &grid).unwrap();
        let p = t.simulate(&rates, &s).unwrap();
        assert_eq!(p.user(0)[0], 0.0);
        assert!((p.user(0)[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_export_has_every_state() {
        let s = two(vec![1.0, 0.0], vec![0.0, 1.0], 1.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        let dist = ArrivalDistribution::deterministic(&s);
        let grid = StateGrid::new(2, 1.0, [1.0, 1.0], 0.5, &dist, 2).unwrap();
        let t = value_iteration(&dist, &rates, &grid).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 9);
        assert!(text.starts_with("slot,e1,e2,p1,p2,value"));
    }

    #[test]
    fn distributed_with_silent_assumption_is_single_link() {
        let s = two(vec![2.0, 0.0, 1.0], vec![0.0, 1.0, 1.0], 2.0);
        let rates = RateModel::for_scenario(&s).unwrap();
        let p = distributed_policy(&s, &rates, 0, 0.0).unwrap();
        let utils: Vec<Utility> = (0..3).map(|_| Arc::new(LogUtility::new(1.0)) as Utility).collect();
        let (q, _) = solve_single_user(&utils, &s.users[0].harvest, &s.grid, 1e-9).unwrap();
        assert!(p.iter().zip(q.user(0)).all(|(a, b)| (a - b).abs() < 1e-12));
        // static fading link with 1/h = 1 + a * mean
        let p = distributed_policy(&s, &rates, 0, 0.5).unwrap();
        let utils: Vec<Utility> = (0..3).map(|_| Arc::new(LogUtility::new(1.45)) as Utility).collect();
        let (q, _) = solve_single_user(&utils, &s.users[0].harvest, &s.grid, 1e-9).unwrap();
        assert!(p.iter().zip(q.user(0)).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
