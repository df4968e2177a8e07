//! Seeded random scenarios: Poisson energy arrivals with uniform amounts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_scenario, Scenario, TimeGrid, UserProfile};
use crate::rates::ChannelParams;

/// Optional bursty data arrivals, generated like the energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketParams {
    pub mean_interarrival: f64,
    /// Packet sizes are uniform on `[0, max_size]`.
    pub max_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub slots: usize,
    pub tau: f64,
    pub e_max: [f64; 2],
    /// Seconds between harvests, exponentially distributed.
    pub mean_interarrival: f64,
    pub channel: ChannelParams,
    pub packets: Option<PacketParams>,
    pub seed: u64,
}

/// Slot index (zero-based) that contains time `t`.
pub fn slot_of(t: f64, tau: f64) -> usize {
    (t / tau).floor() as usize
}

fn arrivals(rng: &mut ChaCha8Rng, slots: usize, tau: f64, mean: f64, max_amount: f64) -> Vec<f64> {
    let exp = Exp::new(1.0 / mean).expect("positive rate");
    let horizon = slots as f64 * tau;
    let mut out = vec![0.0; slots];
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t >= horizon {
            return out;
        }
        out[slot_of(t, tau).min(slots - 1)] += rng.gen_range(0.0..=max_amount);
    }
}

/// Draws a scenario; identical parameters give identical scenarios.
/// Several harvests landing in one slot are summed, then truncated at the
/// battery capacity.
pub fn gen_scenario(params: &GeneratorParams) -> Result<Scenario> {
    let positive = params.tau > 0.0 && params.mean_interarrival > 0.0 && params.e_max.iter().all(|e| *e > 0.0);
    let packets_ok = params.packets.map_or(true, |p| p.mean_interarrival > 0.0 && p.max_size > 0.0);
    if params.slots == 0 || !positive || !packets_ok {
        return Err(Error::invalid("generator parameters must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let users = [0, 1].map(|j| {
        let e = arrivals(&mut rng, params.slots, params.tau, params.mean_interarrival, params.e_max[j]);
        match params.packets {
            None => UserProfile::backlogged(e, params.e_max[j]),
            Some(p) => {
                let b = arrivals(&mut rng, params.slots, params.tau, p.mean_interarrival, p.max_size);
                UserProfile::with_data(e, params.e_max[j], b)
            }
        }
    });
    validate_scenario(&Scenario::new(TimeGrid::new(params.slots, params.tau)?, users, params.channel))
}
