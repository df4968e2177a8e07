//! Problem instances and the three constraint families.
//!
//! Energies and powers are in normalized units: unit direct gain and unit
//! noise variance. Energy `E[i]` arrives at the start of slot `i` and can be
//! spent in that slot; a slot held at power `p` for `tau` seconds consumes
//! `tau * p`. With cumulative consumption `S_n = tau * sum_{i<=n} p_i` a
//! policy must satisfy, for every user,
//!
//! ```text
//! energy causality   S_n <= sum_{i<=n} E_i                     n = 1..N
//! battery capacity   S_n >= sum_{i<=n+1} E_i - E_max           n = 1..N-1
//! data causality     tau * sum_{i<=n} r_j(p_1i, p_2i) <= sum_{i<=n} B_i
//! ```
//!
//! Data is measured in the same unit as `tau * r`, i.e. nats when the rate
//! kernel returns nats per channel use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::{ChannelParams, RateModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub slots: usize,
    pub tau: f64,
}

impl TimeGrid {
    pub fn new(slots: usize, tau: f64) -> Result<Self> {
        let grid = TimeGrid { slots, tau };
        grid.check()?;
        Ok(grid)
    }

    fn check(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::invalid("slot count must be at least 1"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!("slot duration must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn deadline(&self) -> f64 {
        self.slots as f64 * self.tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestProfile {
    pub arrivals: Vec<f64>,
    pub e_max: f64,
}

impl HarvestProfile {
    pub fn new(arrivals: Vec<f64>, e_max: f64) -> Self {
        HarvestProfile { arrivals, e_max }
    }

    pub fn total(&self) -> f64 {
        self.arrivals.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataProfile {
    Infinite,
    Arrivals(Vec<f64>),
}

impl DataProfile {
    pub fn is_infinite(&self) -> bool {
        matches!(self, DataProfile::Infinite)
    }

    pub fn arrivals(&self) -> Option<&[f64]> {
        match self {
            DataProfile::Infinite => None,
            DataProfile::Arrivals(b) => Some(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub harvest: HarvestProfile,
    pub data: DataProfile,
}

impl UserProfile {
    pub fn backlogged(arrivals: Vec<f64>, e_max: f64) -> Self {
        UserProfile { harvest: HarvestProfile::new(arrivals, e_max), data: DataProfile::Infinite }
    }

    pub fn with_data(arrivals: Vec<f64>, e_max: f64, data: Vec<f64>) -> Self {
        UserProfile { harvest: HarvestProfile::new(arrivals, e_max), data: DataProfile::Arrivals(data) }
    }

    /// A user that never harvests anything; used to embed single-link
    /// problems in the two-user model.
    pub fn silent(slots: usize) -> Self {
        UserProfile::backlogged(vec![0.0; slots], 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: TimeGrid,
    pub users: [UserProfile; 2],
    pub channel: ChannelParams,
}

impl Scenario {
    pub fn new(grid: TimeGrid, users: [UserProfile; 2], channel: ChannelParams) -> Self {
        Scenario { grid, users, channel }
    }

    pub fn has_data_constraints(&self) -> bool {
        self.users.iter().any(|u| !u.data.is_infinite())
    }

    /// Largest single-slot power each user can ever apply.
    pub fn power_bounds(&self) -> [f64; 2] {
        [self.users[0].harvest.e_max / self.grid.tau, self.users[1].harvest.e_max / self.grid.tau]
    }
}

/// Checks signs and shapes and truncates each energy arrival at the battery
/// capacity. Idempotent.
pub fn validate_scenario(raw: &Scenario) -> Result<Scenario> {
    raw.grid.check()?;
    let n = raw.grid.slots;
    let mut out = raw.clone();
    for (j, user) in out.users.iter_mut().enumerate() {
        let h = &mut user.harvest;
        if !(h.e_max > 0.0) || !h.e_max.is_finite() {
            return Err(Error::invalid(format!("user {}: battery capacity must be positive, got {}", j + 1, h.e_max)));
        }
        if h.arrivals.len() != n {
            return Err(Error::shape(format!("user {}: {} energy arrivals for {} slots", j + 1, h.arrivals.len(), n)));
        }
        for (i, e) in h.arrivals.iter_mut().enumerate() {
            if !(*e >= 0.0) || !e.is_finite() {
                return Err(Error::invalid(format!("user {}: energy arrival {} at slot {} is not a nonnegative number", j + 1, e, i + 1)));
            }
            *e = e.min(h.e_max);
        }
        if let DataProfile::Arrivals(b) = &user.data {
            if b.len() != n {
                return Err(Error::shape(format!("user {}: {} data arrivals for {} slots", j + 1, b.len(), n)));
            }
            if let Some((i, v)) = b.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid(format!("user {}: data arrival {} at slot {} is not a nonnegative number", j + 1, v, i + 1)));
            }
        }
    }
    if !(out.channel.a >= 0.0) || !(out.channel.b >= 0.0) {
        return Err(Error::invalid(format!("cross gains must be nonnegative, got a={} b={}", out.channel.a, out.channel.b)));
    }
    Ok(out)
}

/// Transmission powers, one row per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPolicy {
    rows: Vec<Vec<f64>>,
}

impl PowerPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("a policy needs at least one user"));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("policy rows have different lengths"));
        }
        if let Some(v) = rows.iter().flatten().find(|v| !(**v >= 0.0)) {
            return Err(Error::Domain { value: *v });
        }
        Ok(PowerPolicy { rows })
    }

    pub fn pair(p1: Vec<f64>, p2: Vec<f64>) -> Result<Self> {
        PowerPolicy::new(vec![p1, p2])
    }

    pub fn single(p: Vec<f64>) -> Result<Self> {
        PowerPolicy::new(vec![p])
    }

    pub fn zeros(users: usize, slots: usize) -> Self {
        PowerPolicy { rows: vec![vec![0.0; slots]; users] }
    }

    pub fn users(&self) -> usize {
        self.rows.len()
    }

    pub fn slots(&self) -> usize {
        self.rows[0].len()
    }

    pub fn user(&self, j: usize) -> &[f64] {
        &self.rows[j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Powers of both users in slot `i`; a one-row policy reads as user 2 silent.
    pub fn slot(&self, i: usize) -> (f64, f64) {
        let p1 = self.rows[0][i];
        let p2 = self.rows.get(1).map_or(0.0, |r| r[i]);
        (p1, p2)
    }

    /// Largest componentwise difference.
    pub fn max_abs_diff(&self, other: &PowerPolicy) -> f64 {
        self.rows
            .iter()
            .flatten()
            .zip(other.rows.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub magnitude: f64,
    /// Zero-based slot of the worst violation, if any constraint was violated.
    pub slot: Option<usize>,
    pub user: Option<usize>,
}

impl Violation {
    fn none() -> Self {
        Violation { magnitude: 0.0, slot: None, user: None }
    }

    fn record(&mut self, amount: f64, user: usize, slot: usize) {
        if amount > self.magnitude {
            *self = Violation { magnitude: amount, slot: Some(slot), user: Some(user) };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub energy_causality: Violation,
    pub battery_capacity: Violation,
    pub data_causality: Violation,
    pub tolerance: f64,
    pub feasible: bool,
}

impl FeasibilityReport {
    pub fn feasible_energy(&self) -> bool {
        self.energy_causality.magnitude <= self.tolerance && self.battery_capacity.magnitude <= self.tolerance
    }
}

/// Worst violation of each constraint family over both users.
pub fn feasibility_report(policy: &PowerPolicy, scenario: &Scenario, rates: &RateModel, tol: f64) -> Result<FeasibilityReport> {
    let n = scenario.grid.slots;
    let tau = scenario.grid.tau;
    if policy.slots() != n || policy.users() > 2 {
        return Err(Error::shape(format!(
            "policy is {}x{}, scenario has 2 users and {} slots",
            policy.users(),
            policy.slots(),
            n
        )));
    }
    let mut energy = Violation::none();
    let mut battery = Violation::none();
    let mut data = Violation::none();

    for j in 0..policy.users() {
        let h = &scenario.users[j].harvest;
        if h.arrivals.len() != n {
            return Err(Error::shape("harvest length differs from slot count"));
        }
        let p = policy.user(j);
        let mut spent = 0.0;
        let mut harvested = 0.0;
        for i in 0..n {
            spent += tau * p[i];
            harvested += h.arrivals[i];
            energy.record(spent - harvested, j, i);
            if i + 1 < n {
                let lhs = spent + h.e_max - harvested - h.arrivals[i + 1];
                battery.record(-lhs, j, i);
            }
        }
    }

    let departures = cumulative_user_departures(policy, rates, tau)?;
    for j in 0..policy.users() {
        if let Some(b) = scenario.users[j].data.arrivals() {
            let mut arrived = 0.0;
            for i in 0..n {
                arrived += b[i];
                data.record(departures[j][i] - arrived, j, i);
            }
        }
    }

    let feasible = energy.magnitude <= tol && battery.magnitude <= tol && data.magnitude <= tol;
    Ok(FeasibilityReport { energy_causality: energy, battery_capacity: battery, data_causality: data, tolerance: tol, feasible })
}

/// Cumulative departures per user, `tau * sum_{i<=n} r_j`.
pub(crate) fn cumulative_user_departures(policy: &PowerPolicy, rates: &RateModel, tau: f64) -> Result<Vec<Vec<f64>>> {
    let n = policy.slots();
    let mut out = vec![vec![0.0; n]; 2];
    let mut acc = [0.0; 2];
    for i in 0..n {
        let (p1, p2) = policy.slot(i);
        let (r1, r2) = rates.user_rates(p1, p2)?;
        acc[0] += tau * r1;
        acc[1] += tau * r2;
        out[0][i] = acc[0];
        out[1][i] = acc[1];
    }
    Ok(out)
}

/// Cumulative sum-rate departures: entry `n` is `sum_{i<=n} tau * r(p_1i, p_2i)`.
pub fn cumulative_departure(policy: &PowerPolicy, rates: &RateModel, grid: &TimeGrid) -> Result<Vec<f64>> {
    if policy.slots() != grid.slots {
        return Err(Error::shape(format!("policy has {} slots, grid has {}", policy.slots(), grid.slots)));
    }
    let mut acc = 0.0;
    (0..grid.slots)
        .map(|i| {
            let (p1, p2) = policy.slot(i);
            acc += grid.tau * rates.sum_rate(p1, p2)?;
            Ok(acc)
        })
        .collect()
}

/// Total throughput `sum_i tau * r(p_1i, p_2i)`.
pub fn throughput(policy: &PowerPolicy, rates: &RateModel, tau: f64) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..policy.slots() {
        let (p1, p2) = policy.slot(i);
        total += tau * rates.sum_rate(p1, p2)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{LinearRate, RateModel};
    use std::sync::Arc;

    fn one_user(e: Vec<f64>, e_max: f64, tau: f64) -> Scenario {
        let n = e.len();
        Scenario::new(
            TimeGrid { slots: n, tau },
            [UserProfile::backlogged(e, e_max), UserProfile::silent(n)],
            ChannelParams { a: 0.0, b: 0.0 },
        )
    }

    fn linear() -> RateModel {
        RateModel::with_kernel(ChannelParams { a: 0.0, b: 0.0 }, Arc::new(LinearRate::unit()), [10.0, 10.0]).unwrap()
    }

    #[test]
    fn truncates_arrivals_at_capacity() {
        let s = validate_scenario(&one_user(vec![12.0, 3.0], 10.0, 1.0)).unwrap();
        assert_eq!(s.users[0].harvest.arrivals, vec![10.0, 3.0]);
        let again = validate_scenario(&s).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_negative_energy() {
        let err = validate_scenario(&one_user(vec![-1.0, 0.0], 10.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn rejects_wrong_length() {
        let mut s = one_user(vec![1.0, 2.0], 10.0, 1.0);
        s.grid.slots = 3;
        s.users[1] = UserProfile::silent(3);
        assert!(matches!(validate_scenario(&s).unwrap_err(), Error::Shape(_)));
    }

    #[test]
    fn rejects_bad_capacity_and_tau() {
        let s = one_user(vec![1.0], 0.0, 1.0);
        assert!(matches!(validate_scenario(&s).unwrap_err(), Error::InvalidInput(_)));
        let s = one_user(vec![1.0], 1.0, 0.0);
        assert!(matches!(validate_scenario(&s).unwrap_err(), Error::InvalidInput(_)));
    }

    #[test]
    fn energy_causality_violation() {
        let s = one_user(vec![1.0, 0.0], 10.0, 1.0);
        let p = PowerPolicy::pair(vec![0.6, 0.5], vec![0.0, 0.0]).unwrap();
        let rep = feasibility_report(&p, &s, &linear(), 1e-9).unwrap();
        assert!((rep.energy_causality.magnitude - 0.1).abs() < 1e-12);
        assert_eq!(rep.energy_causality.slot, Some(1));
        assert!(!rep.feasible);
    }

    #[test]
    fn battery_overflow_violation() {
        let s = one_user(vec![1.0, 1.0], 1.0, 1.0);
        let p = PowerPolicy::pair(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let rep = feasibility_report(&p, &s, &linear(), 1e-9).unwrap();
        assert!((rep.battery_capacity.magnitude - 1.0).abs() < 1e-12);
        assert_eq!(rep.battery_capacity.slot, Some(0));
    }

    #[test]
    fn data_violation_for_spend_on_arrival() {
        // energy spent as it arrives, identity rate
        let e = vec![1.0, 0.0, 1.0, 0.5, 0.0];
        let mut s = one_user(e.clone(), 1.0, 1.0);
        s.users[0].data = DataProfile::Arrivals(vec![0.0, 1.5, 0.0, 0.2, 1.0]);
        let p = PowerPolicy::pair(e, vec![0.0; 5]).unwrap();
        let rep = feasibility_report(&p, &s, &linear(), 1e-9).unwrap();
        assert!(rep.data_causality.magnitude > 0.0);
        // cumulative departures [1,1,2,2.5,2.5] against arrivals [0,1.5,1.5,1.7,2.7]
        assert!((rep.data_causality.magnitude - 1.0).abs() < 1e-12);
        assert_eq!(rep.data_causality.slot, Some(0));
    }

    #[test]
    fn policy_shape_mismatch() {
        let s = one_user(vec![1.0, 0.0], 10.0, 1.0);
        let p = PowerPolicy::pair(vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert!(matches!(feasibility_report(&p, &s, &linear(), 1e-9), Err(Error::Shape(_))));
    }

    #[test]
    fn departures_of_silent_policy() {
        let rates = RateModel::from_channel(ChannelParams { a: 0.9, b: 2.0 }, [1.0, 1.0]).unwrap();
        let grid = TimeGrid::new(3, 1.0).unwrap();
        let curve = cumulative_departure(&PowerPolicy::zeros(2, 3), &rates, &grid).unwrap();
        assert_eq!(curve, vec![0.0; 3]);
        let p = PowerPolicy::pair(vec![3.0], vec![0.0]).unwrap();
        let curve = cumulative_departure(&p, &rates, &TimeGrid::new(1, 1.0).unwrap()).unwrap();
        assert!((curve[0] - 0.5 * 4f64.ln()).abs() < 1e-12);
    }
}
