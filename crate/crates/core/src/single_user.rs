//! Single-user scheduling: maximize `sum_i tau * f_i(p_i)` subject to energy
//! causality and battery capacity for one transmitter.
//!
//! The solver works in level space. At the optimum every slot runs at a
//! common water level `w = f_i'(p_i)` between consecutive boundaries where a
//! constraint binds; the level drops across a boundary where the battery is
//! empty and rises across one where it is full. Segments are found one at a
//! time by tracking, for a growing window, the lowest level that keeps the
//! window inside the causality bounds and the highest level that still
//! drains enough to avoid overflow.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HarvestProfile, PowerPolicy, TimeGrid};

/// A per-slot concave utility with its derivative.
pub trait SlotUtility: Send + Sync {
    fn value(&self, p: f64) -> f64;

    fn derivative(&self, p: f64) -> f64;

    fn curvature(&self, p: f64) -> f64 {
        let h = 1e-6 * (1.0 + p.abs());
        let lo = (p - h).max(0.0);
        (self.derivative(p + h) - self.derivative(lo)) / (p + h - lo)
    }

    /// Power at which the derivative equals `w`, when a closed form exists.
    fn invert_derivative(&self, _w: f64) -> Option<f64> {
        None
    }
}

pub type Utility = Arc<dyn SlotUtility>;

impl fmt::Debug for dyn SlotUtility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SlotUtility(f'(0) = {})", self.derivative(0.0))
    }
}

/// `weight * 1/2 ln(1 + p / base) + offset`: a link with inverse gain `base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogUtility {
    pub base: f64,
    pub weight: f64,
    pub offset: f64,
}

impl LogUtility {
    pub fn new(base: f64) -> Self {
        LogUtility { base, weight: 1.0, offset: 0.0 }
    }
}

impl SlotUtility for LogUtility {
    fn value(&self, p: f64) -> f64 {
        self.weight * 0.5 * (p / self.base).ln_1p() + self.offset
    }

    fn derivative(&self, p: f64) -> f64 {
        0.5 * self.weight / (self.base + p)
    }

    fn curvature(&self, p: f64) -> f64 {
        -0.5 * self.weight / ((self.base + p) * (self.base + p))
    }

    fn invert_derivative(&self, w: f64) -> Option<f64> {
        if w > 0.0 {
            Some(0.5 * self.weight / w - self.base)
        } else {
            Some(f64::INFINITY)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearUtility {
    pub slope: f64,
}

impl SlotUtility for LinearUtility {
    fn value(&self, p: f64) -> f64 {
        self.slope * p
    }

    fn derivative(&self, _p: f64) -> f64 {
        self.slope
    }

    fn curvature(&self, _p: f64) -> f64 {
        0.0
    }
}

/// `-1/2 (p - target)^2`; maximizing it over the feasible set is the
/// Euclidean projection of `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionUtility {
    pub target: f64,
}

impl SlotUtility for ProjectionUtility {
    fn value(&self, p: f64) -> f64 {
        -0.5 * (p - self.target) * (p - self.target)
    }

    fn derivative(&self, p: f64) -> f64 {
        self.target - p
    }

    fn curvature(&self, _p: f64) -> f64 {
        -1.0
    }

    fn invert_derivative(&self, w: f64) -> Option<f64> {
        Some(self.target - w)
    }
}

/// `inner(p) - weight * (p - center)^2`.
#[derive(Clone)]
pub struct Proximal {
    pub inner: Utility,
    pub weight: f64,
    pub center: f64,
}

impl SlotUtility for Proximal {
    fn value(&self, p: f64) -> f64 {
        self.inner.value(p) - self.weight * (p - self.center) * (p - self.center)
    }

    fn derivative(&self, p: f64) -> f64 {
        self.inner.derivative(p) - 2.0 * self.weight * (p - self.center)
    }

    fn curvature(&self, p: f64) -> f64 {
        self.inner.curvature(p) - 2.0 * self.weight
    }
}

/// Utility given by a pair of closures.
pub struct FnUtility<F, G> {
    pub value: F,
    pub derivative: G,
}

impl<F, G> SlotUtility for FnUtility<F, G>
where
    F: Fn(f64) -> f64 + Send + Sync,
    G: Fn(f64) -> f64 + Send + Sync,
{
    fn value(&self, p: f64) -> f64 {
        (self.value)(p)
    }

    fn derivative(&self, p: f64) -> f64 {
        (self.derivative)(p)
    }
}

/// Multipliers and residuals certifying a single-user schedule.
///
/// Multipliers are in derivative units (the Lagrangian divided by `tau`):
/// slot `n` is stationary when `f_n'(p_n) - level_n + eta_n = 0` with
/// `level_n = sum_{k>=n} (lambda_k - mu_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
    /// Reconstructed level per slot.
    pub level: Vec<f64>,
    pub stationarity_residual: f64,
    pub complementarity_residual: f64,
}

impl KktCertificate {
    pub fn certifies(&self, tol: f64) -> bool {
        self.stationarity_residual <= tol && self.complementarity_residual <= tol
    }
}

// relative band used when reading power intervals off a level, so that flat
// stretches of f' register as an interval rather than a single point
const BAND: f64 = 1e-12;
const TIE: f64 = 1e-10;

struct Bounds {
    upper: Vec<f64>,
    lower: Vec<f64>,
}

fn prefix_bounds(arrivals: &[f64], e_max: f64) -> Bounds {
    let n = arrivals.len();
    let mut upper = Vec::with_capacity(n);
    let mut acc = 0.0;
    for e in arrivals {
        acc += e;
        upper.push(acc);
    }
    let lower = (0..n)
        .map(|i| if i + 1 < n { (upper[i + 1] - e_max).max(0.0) } else { f64::NEG_INFINITY })
        .collect();
    Bounds { upper, lower }
}

struct Level<'a> {
    utils: &'a [Utility],
    d_zero: Vec<f64>,
    d_cap: Vec<f64>,
    cap: f64,
    tau: f64,
}

impl<'a> Level<'a> {
    fn new(utils: &'a [Utility], cap: f64, tau: f64) -> Self {
        let d_zero = utils.iter().map(|u| u.derivative(0.0)).collect();
        let d_cap = utils.iter().map(|u| u.derivative(cap)).collect();
        Level { utils, d_zero, d_cap, cap, tau }
    }

    fn invert(&self, i: usize, w: f64) -> f64 {
        let u = &self.utils[i];
        if let Some(p) = u.invert_derivative(w) {
            return p.clamp(0.0, self.cap);
        }
        let (mut lo, mut hi) = (0.0, self.cap);
        let mut p = 0.5 * (lo + hi);
        for _ in 0..200 {
            let d = u.derivative(p) - w;
            if d > 0.0 {
                lo = p;
            } else if d < 0.0 {
                hi = p;
            } else {
                return p;
            }
            if hi - lo <= 1e-15 * (1.0 + self.cap) {
                break;
            }
            let c = u.curvature(p);
            let newton = if c < 0.0 { p - d / c } else { f64::NAN };
            p = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        p
    }

    /// Smallest power whose derivative is at most `w`.
    fn low(&self, i: usize, w: f64) -> f64 {
        let w = w + BAND * w.abs();
        if self.d_zero[i] <= w {
            0.0
        } else if self.d_cap[i] > w {
            self.cap
        } else {
            self.invert(i, w)
        }
    }

    /// Largest power whose derivative is at least `w`.
    fn high(&self, i: usize, w: f64) -> f64 {
        let w = w - BAND * w.abs();
        if self.d_cap[i] >= w {
            self.cap
        } else if self.d_zero[i] < w {
            0.0
        } else {
            self.invert(i, w)
        }
    }

    fn spend_low(&self, k: usize, m: usize, w: f64) -> f64 {
        self.tau * (k..=m).map(|i| self.low(i, w)).sum::<f64>()
    }

    fn spend_high(&self, k: usize, m: usize, w: f64) -> f64 {
        self.tau * (k..=m).map(|i| self.high(i, w)).sum::<f64>()
    }
}

/// Boundary of a monotone predicate: `pred(lo)` false, `pred(hi)` true.
fn bisect(mut lo: f64, mut hi: f64, pred: impl Fn(f64) -> bool) -> (f64, f64) {
    for _ in 0..200 {
        if hi - lo <= 1e-15 * (lo.abs() + hi.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

/// Optimal powers for one user. Flat utilities resolve toward the latest
/// possible consumption.
pub(crate) fn solve_row(utils: &[Utility], arrivals: &[f64], e_max: f64, tau: f64) -> Vec<f64> {
    let n = arrivals.len();
    let bounds = prefix_bounds(arrivals, e_max);
    let total = bounds.upper[n - 1];
    let mut p = vec![0.0; n];
    if !(total > 0.0) {
        return p;
    }
    let cap = total / tau;
    let lv = Level::new(utils, cap, tau);
    let top = lv.d_zero.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bottom = lv.d_cap.iter().cloned().fold(f64::INFINITY, f64::min);
    let pad = 0.5 * (top - bottom).abs() + 0.5 * top.abs().max(bottom.abs()) + 1e-300;
    let (w_lo, w_hi) = (bottom - pad, top + pad);
    let scale = top.abs().max(bottom.abs());
    let tie = |x: f64| TIE * x.abs() + 1e-14 * scale;
    let eps = 1e-13 * total.max(e_max);

    let mut k = 0;
    let mut s0 = 0.0;
    while k < n {
        let (mut a, mut am) = (f64::NEG_INFINITY, None::<usize>);
        let (mut b, mut bm) = (f64::INFINITY, None::<usize>);
        let mut end = None;
        for m in k..n {
            let tu = bounds.upper[m] - s0;
            let start = if a.is_finite() { a } else { w_lo };
            if lv.spend_low(k, m, start) > tu + eps {
                let w = bisect(start, w_hi, |w| lv.spend_low(k, m, w) <= tu + eps).1;
                if w > b + tie(b) {
                    end = Some((bm.unwrap(), b, bounds.lower[bm.unwrap()]));
                    break;
                }
                a = w;
                am = Some(m);
            } else if a.is_finite() && lv.spend_low(k, m, a - tie(a)) > tu + eps {
                am = Some(m);
            }

            let tl = bounds.lower[m] - s0;
            if tl > eps {
                let start = if b.is_finite() { b } else { w_hi };
                if lv.spend_high(k, m, start) < tl - eps {
                    let w = bisect(w_lo, start, |w| lv.spend_high(k, m, w) < tl - eps).0;
                    if w < a - tie(a) {
                        end = Some((am.unwrap(), a, bounds.upper[am.unwrap()]));
                        break;
                    }
                    b = w;
                    bm = Some(m);
                } else if b.is_finite() && lv.spend_high(k, m, b + tie(b)) < tl - eps {
                    bm = Some(m);
                }
            }
        }
        let end = end.or_else(|| {
            if a > 0.0 {
                am.map(|m| (m, a, bounds.upper[m]))
            } else if b < 0.0 {
                bm.map(|m| (m, b, bounds.lower[m]))
            } else {
                None
            }
        });
        match end {
            Some((m, w, target)) => {
                fill(&lv, &bounds, &mut p, k, m, w, Some(target), s0);
                s0 = target;
                k = m + 1;
            }
            None => {
                fill(&lv, &bounds, &mut p, k, n - 1, 0.0, None, s0);
                break;
            }
        }
    }
    p
}

/// Powers for slots `k..=m` at level `w`, ending at cumulative spend
/// `target` (or the smallest feasible spend when `None`), with prefix sums
/// kept as small as the level interval allows.
#[allow(clippy::too_many_arguments)]
fn fill(lv: &Level, bounds: &Bounds, p: &mut [f64], k: usize, m: usize, w: f64, target: Option<f64>, s0: f64) {
    let tau = lv.tau;
    let lo: Vec<f64> = (k..=m).map(|i| lv.low(i, w)).collect();
    let hi: Vec<f64> = (k..=m).map(|i| lv.high(i, w)).collect();
    let len = m - k + 1;
    let mut need = vec![f64::NEG_INFINITY; len];
    need[len - 1] = target.unwrap_or(bounds.lower[m]);
    for t in (0..len - 1).rev() {
        need[t] = bounds.lower[k + t].max(need[t + 1] - tau * hi[t + 1]);
    }
    let mut prev = s0;
    for t in 0..len {
        let i = k + t;
        let mut s = (prev + tau * lo[t]).max(need[t]);
        s = s.min(bounds.upper[i]).min(prev + tau * hi[t]);
        if t == len - 1 {
            if let Some(target) = target {
                s = target;
            }
        }
        p[i] = ((s - prev) / tau).max(0.0);
        prev = s;
    }
}

fn check_utilities(utils: &[Utility], cap: f64) -> Result<()> {
    const SAMPLES: usize = 32;
    for (i, u) in utils.iter().enumerate() {
        let mut last = u.derivative(0.0);
        if !last.is_finite() {
            return Err(Error::InvalidUtility(format!("slot {}: derivative at zero is {last}", i + 1)));
        }
        for s in 1..=SAMPLES {
            let x = cap * s as f64 / SAMPLES as f64;
            let d = u.derivative(x);
            if !d.is_finite() || d > last + 1e-9 * (last.abs() + d.abs()) + 1e-15 {
                return Err(Error::InvalidUtility(format!("slot {}: derivative increases near p = {x}", i + 1)));
            }
            last = d;
        }
    }
    Ok(())
}

fn check_shapes(utils: &[Utility], harvest: &HarvestProfile, grid: &TimeGrid) -> Result<()> {
    if utils.len() != grid.slots || harvest.arrivals.len() != grid.slots {
        return Err(Error::shape(format!(
            "{} utilities and {} arrivals for {} slots",
            utils.len(),
            harvest.arrivals.len(),
            grid.slots
        )));
    }
    Ok(())
}

/// Solves the single-user problem and certifies the result.
pub fn solve_single_user(
    utilities: &[Utility],
    harvest: &HarvestProfile,
    grid: &TimeGrid,
    tol: f64,
) -> Result<(PowerPolicy, KktCertificate)> {
    check_shapes(utilities, harvest, grid)?;
    let total = harvest.total();
    check_utilities(utilities, total / grid.tau)?;
    let p = solve_row(utilities, &harvest.arrivals, harvest.e_max, grid.tau);
    let policy = PowerPolicy::single(p)?;
    let cert = verify_kkt(&policy, utilities, harvest, grid)?;
    if !cert.certifies(tol) {
        return Err(Error::Convergence {
            context: "single-user schedule failed its optimality check".into(),
            residual: cert.stationarity_residual.max(cert.complementarity_residual),
        });
    }
    Ok((policy, cert))
}

/// Level sequence `L_i = sum_{k>=i} (lambda_k - mu_k)` with `L_N = 0`. It
/// may step up going backward only where the battery is empty and down
/// only where it is full; it must match `d_i` in transmitting slots and
/// sit above it in silent ones, both up to a slack.
struct LevelChain<'a> {
    d: &'a [f64],
    positive: &'a [bool],
    empty: &'a [bool],
    full: &'a [bool],
}

impl LevelChain<'_> {
    fn slot(&self, i: usize, slack: f64) -> (f64, f64) {
        if self.positive[i] {
            (self.d[i] - slack, self.d[i] + slack)
        } else {
            (self.d[i] - slack, f64::INFINITY)
        }
    }

    /// Backward reachable intervals for every `L_i`, if any.
    fn intervals(&self, slack: f64) -> Option<Vec<(f64, f64)>> {
        let n = self.d.len();
        let mut out = vec![(0.0, 0.0); n];
        let (mut lo, mut hi) = (0.0, 0.0);
        for i in (0..n).rev() {
            if self.empty[i] {
                hi = f64::INFINITY;
            }
            if self.full[i] {
                lo = f64::NEG_INFINITY;
            }
            let (sl, sh) = self.slot(i, slack);
            lo = f64::max(lo, sl);
            hi = f64::min(hi, sh);
            if lo > hi {
                return None;
            }
            out[i] = (lo, hi);
        }
        Some(out)
    }

    fn levels(&self, slack: f64, iv: &[(f64, f64)]) -> Vec<f64> {
        let n = self.d.len();
        let mut level = vec![0.0; n];
        let mut prev: Option<f64> = None;
        for i in 0..n {
            let (mut lo, mut hi) = iv[i];
            // moving forward the level may fall where this slot's battery
            // is empty and rise where the previous one was full
            if let Some(l) = prev {
                if !self.empty[i - 1] {
                    lo = lo.max(l);
                }
                if !self.full[i - 1] {
                    hi = hi.min(l);
                }
            }
            let want = if self.positive[i] { self.d[i] } else { prev.unwrap_or(self.d[i]).max(self.d[i] - slack) };
            let l = want.clamp(lo, hi.max(lo));
            level[i] = l;
            prev = Some(l);
        }
        level
    }
}

/// Rebuilds multipliers for `policy` from its active constraints and
/// reports how far it is from satisfying the optimality conditions.
pub fn verify_kkt(policy: &PowerPolicy, utilities: &[Utility], harvest: &HarvestProfile, grid: &TimeGrid) -> Result<KktCertificate> {
    check_shapes(utilities, harvest, grid)?;
    if policy.slots() != grid.slots {
        return Err(Error::shape(format!("policy has {} slots, grid has {}", policy.slots(), grid.slots)));
    }
    let n = grid.slots;
    let tau = grid.tau;
    let p = policy.user(0);
    let bounds = prefix_bounds(&harvest.arrivals, harvest.e_max);
    let feas_tol = 1e-9 * harvest.e_max;
    let active_tol = 1e-9 * harvest.e_max;

    let mut spend = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        acc += tau * p[i];
        spend[i] = acc;
        let over = acc - bounds.upper[i];
        if over > feas_tol {
            return Err(Error::Infeasible(format!("energy causality violated by {over:e} at slot {}", i + 1)));
        }
        if i + 1 < n {
            let under = bounds.lower[i] - acc;
            if under > feas_tol {
                return Err(Error::Infeasible(format!("battery overflows by {under:e} at slot {}", i + 1)));
            }
        }
    }

    let p_tol = 1e-12 * (1.0 + bounds.upper[n - 1] / tau);
    let positive: Vec<bool> = p.iter().map(|&x| x > p_tol).collect();
    let d: Vec<f64> = (0..n).map(|i| utilities[i].derivative(p[i])).collect();
    let empty: Vec<bool> = (0..n).map(|i| bounds.upper[i] - spend[i] <= active_tol).collect();
    let full: Vec<bool> = (0..n).map(|i| i + 1 < n && spend[i] - bounds.lower[i] <= active_tol).collect();
    let chain = LevelChain { d: &d, positive: &positive, empty: &empty, full: &full };

    // smallest stationarity slack for which a level sequence exists
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut hi = 2.0 * scale + 1.0;
    let mut lo = 0.0;
    if chain.intervals(0.0).is_some() {
        hi = 0.0;
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if chain.intervals(mid).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let level = chain.levels(hi, &chain.intervals(hi).expect("feasible at the upper end"));

    let mut lambda = vec![0.0; n];
    let mut mu = vec![0.0; n.saturating_sub(1)];
    for i in 0..n {
        let next = if i + 1 < n { level[i + 1] } else { 0.0 };
        let step = level[i] - next;
        if step > 0.0 {
            lambda[i] = step;
        } else if step < 0.0 && i + 1 < n {
            mu[i] = -step;
        }
    }

    let mut eta = vec![0.0; n];
    let mut stationarity: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..n {
        if positive[i] {
            stationarity = stationarity.max((d[i] - level[i]).abs());
        } else {
            eta[i] = (level[i] - d[i]).max(0.0);
            stationarity = stationarity.max((d[i] - level[i]).max(0.0));
            complementarity = complementarity.max(eta[i] * p[i]);
        }
        complementarity = complementarity.max(lambda[i] * (bounds.upper[i] - spend[i]).max(0.0));
        if i + 1 < n {
            complementarity = complementarity.max(mu[i] * (spend[i] - bounds.lower[i]).max(0.0));
        }
    }
    Ok(KktCertificate { lambda, mu, eta, level, stationarity_residual: stationarity, complementarity_residual: complementarity })
}

/// Total `sum_i tau * f_i(p_i)`.
pub fn objective(utilities: &[Utility], p: &[f64], tau: f64) -> f64 {
    utilities.iter().zip(p).map(|(u, &x)| tau * u.value(x)).sum()
}

/// Euclidean projection of `target` onto one user's feasible powers.
pub(crate) fn project_row(target: &[f64], arrivals: &[f64], e_max: f64, tau: f64) -> Vec<f64> {
    let utils: Vec<Utility> = target.iter().map(|&y| Arc::new(ProjectionUtility { target: y }) as Utility).collect();
    solve_row(&utils, arrivals, e_max, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logs(n: usize) -> Vec<Utility> {
        (0..n).map(|_| Arc::new(LogUtility::new(1.0)) as Utility).collect()
    }

    fn solve(e: &[f64], e_max: f64) -> (Vec<f64>, KktCertificate) {
        let h = HarvestProfile::new(e.to_vec(), e_max);
        let g = TimeGrid::new(e.len(), 1.0).unwrap();
        let (p, c) = solve_single_user(&logs(e.len()), &h, &g, 1e-9).unwrap();
        (p.user(0).to_vec(), c)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn equalizes_symmetric_slots() {
        let (p, c) = solve(&[2.0, 0.0], 2.0);
        assert!(close(&p, &[1.0, 1.0], 1e-10), "{p:?}");
        assert!(c.certifies(1e-10));
    }

    #[test]
    fn energy_cannot_flow_backward() {
        let (p, _) = solve(&[0.0, 2.0], 2.0);
        assert!(close(&p, &[0.0, 2.0], 1e-10), "{p:?}");
    }

    #[test]
    fn battery_forces_early_spend() {
        let (p, c) = solve(&[2.0, 0.0, 2.0], 2.0);
        assert!(close(&p, &[1.0, 1.0, 2.0], 1e-10), "{p:?}");
        assert!(c.mu[1] > 0.0 || c.lambda[1] > 0.0);
    }

    #[test]
    fn kkt_rejects_uneven_split() {
        let h = HarvestProfile::new(vec![2.0, 0.0], 2.0);
        let g = TimeGrid::new(2, 1.0).unwrap();
        let c = verify_kkt(&PowerPolicy::single(vec![2.0, 0.0]).unwrap(), &logs(2), &h, &g).unwrap();
        assert!(c.stationarity_residual > 0.1);
        // best multipliers split the level gap 1/6 vs 1/2 evenly
        assert!((c.stationarity_residual - 1.0 / 6.0).abs() < 1e-12);
        let c = verify_kkt(&PowerPolicy::single(vec![1.0, 1.0]).unwrap(), &logs(2), &h, &g).unwrap();
        assert!(c.stationarity_residual <= 1e-8);
    }

    #[test]
    fn single_slot_spends_everything() {
        let (p, c) = solve(&[1.0], 5.0);
        assert!(close(&p, &[1.0], 1e-12));
        assert!(c.stationarity_residual <= 1e-8);
    }

    #[test]
    fn kkt_flags_infeasible_policy() {
        let h = HarvestProfile::new(vec![1.0, 0.0], 2.0);
        let g = TimeGrid::new(2, 1.0).unwrap();
        let r = verify_kkt(&PowerPolicy::single(vec![2.0, 0.0]).unwrap(), &logs(2), &h, &g);
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn fading_closed_form() {
        // static gains: p_i = [nu - 1/h_i]^+ with one common level
        let bases = [0.5, 2.0, 1.0, 4.0];
        let utils: Vec<Utility> = bases.iter().map(|&b| Arc::new(LogUtility::new(b)) as Utility).collect();
        let h = HarvestProfile::new(vec![4.0, 0.0, 0.0, 0.0], 10.0);
        let g = TimeGrid::new(4, 1.0).unwrap();
        let (p, c) = solve_single_user(&utils, &h, &g, 1e-9).unwrap();
        // nu = (4 + 0.5 + 2 + 1) / 3 = 2.5 with slot 4 silent
        assert!(close(p.user(0), &[2.0, 0.5, 1.5, 0.0], 1e-10), "{:?}", p.user(0));
        assert!(c.eta[3] > 0.0);
    }

    #[test]
    fn linear_utility_prefers_late_consumption() {
        let utils: Vec<Utility> = (0..3).map(|_| Arc::new(LinearUtility { slope: 1.0 }) as Utility).collect();
        let h = HarvestProfile::new(vec![1.0, 0.0, 0.0], 1.0);
        let g = TimeGrid::new(3, 1.0).unwrap();
        let (p, c) = solve_single_user(&utils, &h, &g, 1e-9).unwrap();
        assert!(close(p.user(0), &[0.0, 0.0, 1.0], 1e-12), "{:?}", p.user(0));
        assert!(c.certifies(1e-9));
    }

    #[test]
    fn nonconcave_utility_is_rejected() {
        let convex: Utility = Arc::new(FnUtility { value: |p: f64| p * p, derivative: |p: f64| 2.0 * p });
        let h = HarvestProfile::new(vec![1.0], 1.0);
        let g = TimeGrid::new(1, 1.0).unwrap();
        assert!(matches!(solve_single_user(&[convex], &h, &g, 1e-9), Err(Error::InvalidUtility(_))));
    }

    #[test]
    fn projection_keeps_feasible_points() {
        let p = project_row(&[0.5, 0.25, 0.0], &[1.0, 0.0, 0.5], 1.0, 1.0);
        assert!(close(&p, &[0.5, 0.25, 0.0], 1e-12), "{p:?}");
        let p = project_row(&[2.0, 0.0], &[1.0, 1.0], 1.0, 1.0);
        assert!(close(&p, &[1.0, 0.0], 1e-12), "{p:?}");
    }

    proptest! {
        #[test]
        fn random_instances_certify(e in proptest::collection::vec(0.0f64..3.0, 1..12), e_max in 1.0f64..3.0, tau in 0.5f64..2.0) {
            let e: Vec<f64> = e.into_iter().map(|x| x.min(e_max)).collect();
            let n = e.len();
            let bases: Vec<Utility> = (0..n).map(|i| Arc::new(LogUtility::new(0.5 + (i % 3) as f64)) as Utility).collect();
            let h = HarvestProfile::new(e.clone(), e_max);
            let g = TimeGrid::new(n, tau).unwrap();
            let (p, c) = solve_single_user(&bases, &h, &g, 1e-8).unwrap();
            let spent: f64 = p.user(0).iter().map(|x| x * tau).sum();
            prop_assert!((spent - h.total()).abs() <= 1e-9 * e_max * n as f64);
            prop_assert!(c.lambda.iter().chain(&c.mu).chain(&c.eta).all(|&m| m >= 0.0));
        }
    }
}
