//! Exhaustive search over quantized power schedules for small instances.
//!
//! Energies live on the lattice `delta = power_step * tau`. Arrivals and
//! capacities are rounded down onto it, so the oracle never uses energy the
//! scenario does not provide. Without data constraints the search is a
//! backward dynamic program over the two battery levels. With data
//! constraints it runs forward over battery levels and cumulative
//! departures; departures are rounded up to `data_step`, which keeps every
//! accepted schedule feasible at the cost of slightly tighter constraints.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_scenario, PowerPolicy, Scenario};
use crate::rates::RateModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub power_step: f64,
    /// Cap on the number of transitions (battery mode) or search nodes
    /// (data mode).
    pub max_enumeration: f64,
    /// Resolution of cumulative departures in data mode.
    pub data_step: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { power_step: 0.05, max_enumeration: 2e8, data_step: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub policy: PowerPolicy,
    pub objective: f64,
    /// Number of transitions or nodes examined.
    pub explored: f64,
}

struct Lattice {
    arrivals: [Vec<usize>; 2],
    cap: [usize; 2],
    // highest battery level that can ever occur
    reach: [usize; 2],
    // rate[k1][k2] = [r1, r2] at powers k * power_step
    rate: Vec<Vec<[f64; 2]>>,
    step: f64,
}

fn snap(x: f64, delta: f64) -> usize {
    (x / delta + 1e-9).floor().max(0.0) as usize
}

impl Lattice {
    fn new(s: &Scenario, rates: &RateModel, step: f64) -> Self {
        let delta = step * s.grid.tau;
        let arrivals = [0, 1].map(|j| s.users[j].harvest.arrivals.iter().map(|&e| snap(e, delta)).collect::<Vec<_>>());
        let cap = [0, 1].map(|j| snap(s.users[j].harvest.e_max, delta));
        let arrivals: [Vec<usize>; 2] = [0, 1].map(|j| arrivals[j].iter().map(|&e| e.min(cap[j])).collect());
        let reach = [0, 1].map(|j| cap[j].min(arrivals[j].iter().sum::<usize>()));
        let rate = (0..=reach[0])
            .map(|k1| (0..=reach[1]).map(|k2| rates.rates(k1 as f64 * step, k2 as f64 * step)).collect())
            .collect();
        Lattice { arrivals, cap, reach, rate, step }
    }
}

/// Best quantized schedule and its exact throughput.
pub fn brute_force(scenario: &Scenario, rates: &RateModel, opts: &OracleOptions) -> Result<OracleSolution> {
    if !(opts.power_step > 0.0) || !(opts.data_step > 0.0) {
        return Err(Error::invalid("oracle steps must be positive"));
    }
    let s = validate_scenario(scenario)?;
    let lat = Lattice::new(&s, rates, opts.power_step);
    if s.has_data_constraints() {
        forward_with_data(&s, &lat, opts)
    } else {
        backward(&s, &lat, opts)
    }
}

fn backward(s: &Scenario, lat: &Lattice, opts: &OracleOptions) -> Result<OracleSolution> {
    let n = s.grid.slots;
    let tau = s.grid.tau;
    let [m1, m2] = lat.reach;
    let [c1, c2] = lat.cap;
    let tri = |m: usize| ((m + 1) * (m + 2) / 2) as f64;
    let estimate = n as f64 * tri(m1) * tri(m2);
    if estimate > opts.max_enumeration {
        return Err(Error::SearchSpace { estimate, cap: opts.max_enumeration });
    }
    let width = m2 + 1;
    let mut next = vec![0.0f64; (m1 + 1) * width];
    let mut choice: Vec<Vec<(u16, u16)>> = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let last = i + 1 == n;
        let (e1, e2) = if last { (0, 0) } else { (lat.arrivals[0][i + 1], lat.arrivals[1][i + 1]) };
        let rows: Vec<(Vec<f64>, Vec<(u16, u16)>)> = (0..=m1)
            .into_par_iter()
            .map(|b1| {
                let mut vals = vec![f64::NEG_INFINITY; width];
                let mut acts = vec![(0u16, 0u16); width];
                for b2 in 0..=m2 {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = (0, 0);
                    for k1 in 0..=b1 {
                        let n1 = b1 - k1 + e1;
                        // beyond reach means the state itself is unreachable
                        if !last && n1 > c1.min(m1) {
                            continue;
                        }
                        for k2 in 0..=b2 {
                            let n2 = b2 - k2 + e2;
                            if !last && n2 > c2.min(m2) {
                                continue;
                            }
                            let r = lat.rate[k1][k2];
                            let future = if last { 0.0 } else { next[n1 * width + n2] };
                            let v = tau * (r[0] + r[1]) + future;
                            if v > best {
                                best = v;
                                arg = (k1 as u16, k2 as u16);
                            }
                        }
                    }
                    vals[b2] = best;
                    acts[b2] = arg;
                }
                (vals, acts)
            })
            .collect();
        let mut cur = Vec::with_capacity((m1 + 1) * width);
        let mut act = Vec::with_capacity((m1 + 1) * width);
        for (v, a) in rows {
            cur.extend(v);
            act.extend(a);
        }
        next = cur;
        choice.push(act);
    }
    choice.reverse();

    let (mut b1, mut b2) = (lat.arrivals[0][0], lat.arrivals[1][0]);
    let objective = next[b1 * width + b2];
    if objective == f64::NEG_INFINITY {
        return Err(Error::Infeasible("no quantized schedule avoids battery overflow".into()));
    }
    let mut rows = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n {
        let (k1, k2) = choice[i][b1 * width + b2];
        let (k1, k2) = (k1 as usize, k2 as usize);
        rows[0].push(k1 as f64 * lat.step);
        rows[1].push(k2 as f64 * lat.step);
        if i + 1 < n {
            b1 = b1 - k1 + lat.arrivals[0][i + 1];
            b2 = b2 - k2 + lat.arrivals[1][i + 1];
        }
    }
    let [p1, p2] = rows;
    Ok(OracleSolution { policy: PowerPolicy::pair(p1, p2)?, objective, explored: estimate })
}

#[derive(Clone, Copy)]
struct Node {
    b: [u16; 2],
    q: [u32; 2],
    value: f64,
    parent: usize,
    action: [u16; 2],
}

/// Drops nodes beaten by another with the same batteries, no more data
/// sent by either user and at least the same throughput.
fn prune(nodes: Vec<Node>) -> Vec<Node> {
    let mut groups: HashMap<[u16; 2], Vec<Node>> = HashMap::new();
    for node in nodes {
        groups.entry(node.b).or_default().push(node);
    }
    let mut keys: Vec<[u16; 2]> = groups.keys().copied().collect();
    keys.sort_unstable();
    let mut out = Vec::new();
    for key in keys {
        let mut group = groups.remove(&key).unwrap_or_default();
        group.sort_by(|x, y| y.value.total_cmp(&x.value).then(x.q.cmp(&y.q)));
        let start = out.len();
        for node in group {
            if !out[start..].iter().any(|k: &Node| k.q[0] <= node.q[0] && k.q[1] <= node.q[1]) {
                out.push(node);
            }
        }
    }
    out
}

fn forward_with_data(s: &Scenario, lat: &Lattice, opts: &OracleOptions) -> Result<OracleSolution> {
    let n = s.grid.slots;
    let tau = s.grid.tau;
    let dq = opts.data_step;
    let data: [Option<Vec<f64>>; 2] = [0, 1].map(|j| {
        s.users[j].data.arrivals().map(|b| {
            let mut acc = 0.0;
            b.iter()
                .map(|x| {
                    acc += x;
                    acc
                })
                .collect()
        })
    });
    let mut layers: Vec<Vec<Node>> = Vec::with_capacity(n + 1);
    layers.push(vec![Node {
        b: [lat.arrivals[0][0] as u16, lat.arrivals[1][0] as u16],
        q: [0, 0],
        value: 0.0,
        parent: usize::MAX,
        action: [0, 0],
    }]);
    let mut explored = 1.0;
    for i in 0..n {
        let last = i + 1 == n;
        let mut next: Vec<Node> = Vec::new();
        let mut index: HashMap<([u16; 2], [u32; 2]), usize> = HashMap::new();
        for (pi, node) in layers[i].iter().enumerate() {
            let [b1, b2] = [node.b[0] as usize, node.b[1] as usize];
            for k1 in 0..=b1 {
                for k2 in 0..=b2 {
                    let mut nb = [(b1 - k1) as u16, (b2 - k2) as u16];
                    if !last {
                        let n1 = b1 - k1 + lat.arrivals[0][i + 1];
                        let n2 = b2 - k2 + lat.arrivals[1][i + 1];
                        if n1 > lat.cap[0] || n2 > lat.cap[1] {
                            continue;
                        }
                        nb = [n1 as u16, n2 as u16];
                    }
                    let r = lat.rate[k1][k2];
                    let mut nq = [0u32; 2];
                    let mut ok = true;
                    for j in 0..2 {
                        if let Some(d) = &data[j] {
                            let sent = node.q[j] as f64 * dq + tau * r[j];
                            let cells = (sent / dq - 1e-9).ceil().max(0.0);
                            if cells * dq > d[i] + 1e-12 {
                                ok = false;
                                break;
                            }
                            nq[j] = cells as u32;
                        }
                    }
                    if !ok {
                        continue;
                    }
                    let value = node.value + tau * (r[0] + r[1]);
                    let cand = Node { b: nb, q: nq, value, parent: pi, action: [k1 as u16, k2 as u16] };
                    match index.get(&(nb, nq)) {
                        Some(&at) => {
                            if value > next[at].value {
                                next[at] = cand;
                            }
                        }
                        None => {
                            index.insert((nb, nq), next.len());
                            next.push(cand);
                        }
                    }
                }
            }
        }
        let next = prune(next);
        explored += next.len() as f64;
        if explored > opts.max_enumeration {
            let estimate = explored * n as f64 / (i + 1) as f64;
            return Err(Error::SearchSpace { estimate, cap: opts.max_enumeration });
        }
        layers.push(next);
    }

    let last = &layers[n];
    let mut best: Option<usize> = None;
    for (at, node) in last.iter().enumerate() {
        if best.map_or(true, |b| node.value > last[b].value) {
            best = Some(at);
        }
    }
    let Some(mut at) = best else {
        return Err(Error::Infeasible("no quantized schedule meets the energy, battery and data constraints".into()));
    };
    let objective = last[at].value;
    let mut rows = [vec![0.0; n], vec![0.0; n]];
    for i in (0..n).rev() {
        let node = layers[i + 1][at];
        rows[0][i] = node.action[0] as f64 * lat.step;
        rows[1][i] = node.action[1] as f64 * lat.step;
        at = node.parent;
    }
    let [p1, p2] = rows;
    Ok(OracleSolution { policy: PowerPolicy::pair(p1, p2)?, objective, explored })
}
