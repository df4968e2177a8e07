//! Sum-rate kernels of the two-user Gaussian interference channel.
//!
//! All rates are `1/2 ln(1 + snr)` nats per channel use. The asymmetric
//! regions are implemented for the canonical orientation `a <= 1 <= b`; a
//! channel with `a >= 1 >= b` is handled by swapping the users internally.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized cross gains: `a` from T2 into R1, `b` from T1 into R2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// `a <= 1`, `b >= 1`, `ab > 1`: weak interference treated as noise, strong one decoded.
    AsymmetricProductAbove1,
    /// `a <= 1`, `b >= 1`, `ab <= 1`: T1 limited by the worse of its two receivers.
    AsymmetricProductAtMost1,
    /// Both interferers decodable at every admissible power pair.
    VeryStrong,
    /// Anything else; requires a concave kernel.
    GenericConcave,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Region::AsymmetricProductAbove1 => "asymmetric (ab > 1)",
            Region::AsymmetricProductAtMost1 => "asymmetric (ab <= 1)",
            Region::VeryStrong => "very strong",
            Region::GenericConcave => "generic concave",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionTag {
    pub region: Region,
    /// User indices are swapped internally to reach `a <= 1 <= b`.
    pub mirrored: bool,
}

pub fn classify_region(a: f64, b: f64, p1_max: f64, p2_max: f64) -> RegionTag {
    let tag = |region, mirrored| RegionTag { region, mirrored };
    if a > 1.0 + p1_max && b > 1.0 + p2_max {
        return tag(Region::VeryStrong, false);
    }
    let asym = |a: f64, b: f64| if a * b > 1.0 { Region::AsymmetricProductAbove1 } else { Region::AsymmetricProductAtMost1 };
    if a <= 1.0 && b >= 1.0 {
        tag(asym(a, b), false)
    } else if a >= 1.0 && b <= 1.0 {
        tag(asym(b, a), true)
    } else {
        tag(Region::GenericConcave, false)
    }
}

/// Threshold on the canonical T2 power above which the joint-decoding term
/// limits the sum rate in the `ab <= 1` region.
pub fn threshold_power(a: f64, b: f64) -> f64 {
    if a * b >= 1.0 {
        f64::INFINITY
    } else {
        (b - 1.0) / (1.0 - a * b)
    }
}

/// A caller-supplied rate function for regions without a closed form.
///
/// The sum `r_1 + r_2` must be jointly concave and nondecreasing with
/// `r(0, 0) = 0`; this is spot-checked when the kernel is wrapped in a
/// [`RateModel`].
pub trait RateKernel: Send + Sync + fmt::Debug {
    fn user_rates(&self, p1: f64, p2: f64) -> [f64; 2];

    /// `jac[k][j] = d r_k / d p_j`.
    fn jacobian(&self, p1: f64, p2: f64) -> [[f64; 2]; 2];
}

/// Both receivers treat the other transmitter as noise. Not concave in
/// general; only usable where the construction-time check passes (for
/// instance `a = b = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreatInterferenceAsNoise {
    pub a: f64,
    pub b: f64,
}

impl RateKernel for TreatInterferenceAsNoise {
    fn user_rates(&self, p1: f64, p2: f64) -> [f64; 2] {
        [0.5 * (p1 / (1.0 + self.a * p2)).ln_1p(), 0.5 * (p2 / (1.0 + self.b * p1)).ln_1p()]
    }

    fn jacobian(&self, p1: f64, p2: f64) -> [[f64; 2]; 2] {
        let d1 = 1.0 + self.a * p2;
        let n1 = d1 + p1;
        let d2 = 1.0 + self.b * p1;
        let n2 = d2 + p2;
        [
            [0.5 / n1, 0.5 * self.a / n1 - 0.5 * self.a / d1],
            [0.5 * self.b / n2 - 0.5 * self.b / d2, 0.5 / n2],
        ]
    }
}

/// `r_j = slope_j * p_j`. Degenerate but handy for exercising flat water levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearRate {
    pub slopes: [f64; 2],
}

impl LinearRate {
    pub fn unit() -> Self {
        LinearRate { slopes: [1.0, 1.0] }
    }
}

impl RateKernel for LinearRate {
    fn user_rates(&self, p1: f64, p2: f64) -> [f64; 2] {
        [self.slopes[0] * p1, self.slopes[1] * p2]
    }

    fn jacobian(&self, _p1: f64, _p2: f64) -> [[f64; 2]; 2] {
        [[self.slopes[0], 0.0], [0.0, self.slopes[1]]]
    }
}

#[derive(Clone)]
pub struct RateModel {
    channel: ChannelParams,
    tag: RegionTag,
    // canonical orientation
    a: f64,
    b: f64,
    p_c: f64,
    kernel: Option<Arc<dyn RateKernel>>,
}

impl fmt::Debug for RateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RateModel")
            .field("channel", &self.channel)
            .field("tag", &self.tag)
            .field("p_c", &self.p_c)
            .field("kernel", &self.kernel)
            .finish()
    }
}

fn check_power(p: f64) -> Result<f64> {
    if p >= 0.0 {
        Ok(p)
    } else if p > -1e-12 {
        Ok(0.0)
    } else {
        Err(Error::Domain { value: p })
    }
}

impl RateModel {
    /// Classifies the channel against the power bounds and builds the
    /// matching kernel. Outside the closed-form regions the
    /// treat-interference-as-noise kernel is used, which must pass the
    /// concavity check.
    pub fn from_channel(channel: ChannelParams, power_bounds: [f64; 2]) -> Result<Self> {
        let tag = classify_region(channel.a, channel.b, power_bounds[0], power_bounds[1]);
        if tag.region == Region::GenericConcave {
            let kernel = Arc::new(TreatInterferenceAsNoise { a: channel.a, b: channel.b });
            return RateModel::with_kernel(channel, kernel, power_bounds);
        }
        let (a, b) = if tag.mirrored { (channel.b, channel.a) } else { (channel.a, channel.b) };
        let p_c = match tag.region {
            Region::AsymmetricProductAtMost1 => threshold_power(a, b),
            _ => f64::INFINITY,
        };
        Ok(RateModel { channel, tag, a, b, p_c, kernel: None })
    }

    pub fn for_scenario(scenario: &crate::model::Scenario) -> Result<Self> {
        RateModel::from_channel(scenario.channel, scenario.power_bounds())
    }

    /// Wraps a caller-supplied kernel after sampling it for concavity and
    /// monotonicity over `[0, p1_max] x [0, p2_max]`.
    pub fn with_kernel(channel: ChannelParams, kernel: Arc<dyn RateKernel>, power_bounds: [f64; 2]) -> Result<Self> {
        check_kernel(kernel.as_ref(), power_bounds)?;
        Ok(RateModel {
            channel,
            tag: RegionTag { region: Region::GenericConcave, mirrored: false },
            a: channel.a,
            b: channel.b,
            p_c: f64::INFINITY,
            kernel: Some(kernel),
        })
    }

    pub fn channel(&self) -> ChannelParams {
        self.channel
    }

    pub fn tag(&self) -> RegionTag {
        self.tag
    }

    pub fn region(&self) -> Region {
        self.tag.region
    }

    /// Region-B threshold in canonical T2 power; infinite elsewhere.
    pub fn threshold(&self) -> f64 {
        self.p_c
    }

    pub fn sum_rate(&self, p1: f64, p2: f64) -> Result<f64> {
        let (r1, r2) = self.user_rates(p1, p2)?;
        Ok(r1 + r2)
    }

    pub fn user_rates(&self, p1: f64, p2: f64) -> Result<(f64, f64)> {
        let r = self.rates(check_power(p1)?, check_power(p2)?);
        Ok((r[0], r[1]))
    }

    pub fn grad(&self, p1: f64, p2: f64) -> Result<(f64, f64)> {
        let j = self.jac(check_power(p1)?, check_power(p2)?);
        Ok((j[0][0] + j[1][0], j[0][1] + j[1][1]))
    }

    /// `jac[k][j] = d r_k / d p_j`.
    pub fn user_rate_jacobian(&self, p1: f64, p2: f64) -> Result<[[f64; 2]; 2]> {
        Ok(self.jac(check_power(p1)?, check_power(p2)?))
    }

    /// Inverse effective gain `1/h` seen by the canonical T1 when the other
    /// transmitter uses `p2`; T1's restriction is `1/2 ln(1 + p / (1/h))`
    /// plus a term independent of `p`.
    pub fn base_level_t1(&self, p2: f64) -> Result<f64> {
        let p2 = check_power(p2)?;
        match self.tag.region {
            Region::AsymmetricProductAbove1 => Ok(1.0 + self.a * p2),
            Region::AsymmetricProductAtMost1 => {
                if p2 < self.p_c {
                    Ok(1.0 + self.a * p2)
                } else {
                    Ok((1.0 + p2) / self.b)
                }
            }
            Region::VeryStrong => Ok(1.0),
            Region::GenericConcave => Err(Error::UnsupportedRegion(self.tag.region.to_string())),
        }
    }

    /// Base level of `user` (original indexing) if that user's restriction
    /// has the single-link fading form.
    pub fn fading_base_level(&self, user: usize, other: f64) -> Option<f64> {
        let canonical_t1 = if self.tag.mirrored { 1 } else { 0 };
        match self.tag.region {
            Region::VeryStrong => Some(1.0),
            Region::AsymmetricProductAbove1 | Region::AsymmetricProductAtMost1 if user == canonical_t1 => {
                self.base_level_t1(other).ok()
            }
            _ => None,
        }
    }

    /// `d^2 r / d p_user^2` at `(p1, p2)`.
    pub(crate) fn sum_curvature(&self, user: usize, p1: f64, p2: f64) -> f64 {
        if let Some(k) = &self.kernel {
            let h = 1e-6 * (1.0 + if user == 0 { p1 } else { p2 });
            let g = |q: f64| {
                let j = if user == 0 { k.jacobian(q, p2) } else { k.jacobian(p1, q) };
                j[0][user] + j[1][user]
            };
            let x = if user == 0 { p1 } else { p2 };
            let lo = (x - h).max(0.0);
            return (g(x + h) - g(lo)) / (x + h - lo);
        }
        let (cu, q1, q2) = self.to_canonical(user, p1, p2);
        let (a, b) = (self.a, self.b);
        match self.tag.region {
            Region::VeryStrong => {
                let x = if cu == 0 { q1 } else { q2 };
                -0.5 / ((1.0 + x) * (1.0 + x))
            }
            Region::AsymmetricProductAtMost1 if q2 >= self.p_c => {
                let d2 = 1.0 + b * q1 + q2;
                if cu == 0 {
                    -0.5 * b * b / (d2 * d2)
                } else {
                    -0.5 / (d2 * d2)
                }
            }
            _ => {
                let d0 = 1.0 + a * q2;
                let d1 = d0 + q1;
                if cu == 0 {
                    -0.5 / (d1 * d1)
                } else {
                    -0.5 * a * a / (d1 * d1) + 0.5 * a * a / (d0 * d0) - 0.5 / ((1.0 + q2) * (1.0 + q2))
                }
            }
        }
    }

    fn to_canonical(&self, user: usize, p1: f64, p2: f64) -> (usize, f64, f64) {
        if self.tag.mirrored {
            (1 - user, p2, p1)
        } else {
            (user, p1, p2)
        }
    }

    pub(crate) fn rates(&self, p1: f64, p2: f64) -> [f64; 2] {
        if let Some(k) = &self.kernel {
            return k.user_rates(p1, p2);
        }
        let (_, q1, q2) = self.to_canonical(0, p1, p2);
        let r = self.canonical_rates(q1, q2);
        if self.tag.mirrored {
            [r[1], r[0]]
        } else {
            r
        }
    }

    fn canonical_rates(&self, q1: f64, q2: f64) -> [f64; 2] {
        let (a, b) = (self.a, self.b);
        match self.tag.region {
            Region::VeryStrong => [0.5 * q1.ln_1p(), 0.5 * q2.ln_1p()],
            Region::AsymmetricProductAbove1 => [0.5 * (q1 / (1.0 + a * q2)).ln_1p(), 0.5 * q2.ln_1p()],
            Region::AsymmetricProductAtMost1 => {
                let weak = 0.5 * (q1 / (1.0 + a * q2)).ln_1p();
                let joint = 0.5 * (b * q1 / (1.0 + q2)).ln_1p();
                [weak.min(joint), 0.5 * q2.ln_1p()]
            }
            Region::GenericConcave => unreachable!("generic region always carries a kernel"),
        }
    }

    pub(crate) fn jac(&self, p1: f64, p2: f64) -> [[f64; 2]; 2] {
        if let Some(k) = &self.kernel {
            return k.jacobian(p1, p2);
        }
        let (_, q1, q2) = self.to_canonical(0, p1, p2);
        let j = self.canonical_jac(q1, q2);
        if self.tag.mirrored {
            [[j[1][1], j[1][0]], [j[0][1], j[0][0]]]
        } else {
            j
        }
    }

    fn canonical_jac(&self, q1: f64, q2: f64) -> [[f64; 2]; 2] {
        let (a, b) = (self.a, self.b);
        match self.tag.region {
            Region::VeryStrong => [[0.5 / (1.0 + q1), 0.0], [0.0, 0.5 / (1.0 + q2)]],
            Region::AsymmetricProductAtMost1 if q2 >= self.p_c => {
                let d2 = 1.0 + b * q1 + q2;
                [[0.5 * b / d2, 0.5 / d2 - 0.5 / (1.0 + q2)], [0.0, 0.5 / (1.0 + q2)]]
            }
            _ => {
                let d0 = 1.0 + a * q2;
                let d1 = d0 + q1;
                [[0.5 / d1, 0.5 * a / d1 - 0.5 * a / d0], [0.0, 0.5 / (1.0 + q2)]]
            }
        }
    }
}

fn check_kernel(kernel: &dyn RateKernel, bounds: [f64; 2]) -> Result<()> {
    let sum = |x: f64, y: f64| {
        let r = kernel.user_rates(x, y);
        r[0] + r[1]
    };
    let r0 = sum(0.0, 0.0);
    if r0.abs() > 1e-12 {
        return Err(Error::InvalidUtility(format!("kernel rate at zero power is {r0}, expected 0")));
    }
    let m1 = bounds[0].max(1e-9);
    let m2 = bounds[1].max(1e-9);
    let steps = 10;
    let h1 = m1 / steps as f64;
    let h2 = m2 / steps as f64;
    let dirs = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0)];
    for i in 0..=steps {
        for k in 0..=steps {
            let x = i as f64 * h1;
            let y = k as f64 * h2;
            let here = sum(x, y);
            let scale = 1.0 + here.abs();
            if i < steps && sum(x + h1, y) < here - 1e-12 * scale {
                return Err(Error::InvalidUtility(format!("rate decreases in p1 near ({x}, {y})")));
            }
            if k < steps && sum(x, y + h2) < here - 1e-12 * scale {
                return Err(Error::InvalidUtility(format!("rate decreases in p2 near ({x}, {y})")));
            }
            for (dx, dy) in dirs {
                let (sx, sy) = (dx * h1 * 0.5, dy * h2 * 0.5);
                let (xl, yl, xh, yh) = (x - sx, y - sy, x + sx, y + sy);
                if xl < 0.0 || yl < 0.0 || xh < 0.0 || yh < 0.0 {
                    continue;
                }
                let second = sum(xh, yh) - 2.0 * here + sum(xl, yl);
                if second > 1e-10 * scale {
                    return Err(Error::InvalidUtility(format!(
                        "rate is not concave near ({x:.4}, {y:.4}) along ({dx}, {dy}): second difference {second:e}"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalChannel {
    pub h11_db: f64,
    pub h22_db: f64,
    /// T2 into R1.
    pub h12_db: f64,
    /// T1 into R2.
    pub h21_db: f64,
    /// Receiver noise spectral density, W/Hz.
    pub noise_psd: f64,
    /// Hz.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub channel: ChannelParams,
    /// Normalized energy units per joule, per user.
    pub energy_per_joule: [f64; 2],
    pub bandwidth: f64,
}

impl Normalization {
    /// Bits carried by one unit of `tau * r` when the rate is in nats per
    /// real channel use and the link offers `2 * bandwidth` uses per second.
    pub fn bits_per_unit(&self) -> f64 {
        2.0 * self.bandwidth / std::f64::consts::LN_2
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts dB link gains to normalized cross gains. Each transmitter's
/// power is scaled by its own direct gain and the noise power, so
/// `a = g12 / g22` and `b = g21 / g11`.
pub fn normalize_channel(physical: &PhysicalChannel) -> Result<Normalization> {
    if !(physical.noise_psd > 0.0) || !(physical.bandwidth > 0.0) {
        return Err(Error::invalid(format!(
            "noise density and bandwidth must be positive, got {} and {}",
            physical.noise_psd, physical.bandwidth
        )));
    }
    let noise = physical.noise_psd * physical.bandwidth;
    let g11 = db_to_linear(physical.h11_db);
    let g22 = db_to_linear(physical.h22_db);
    let channel = ChannelParams { a: db_to_linear(physical.h12_db - physical.h22_db), b: db_to_linear(physical.h21_db - physical.h11_db) };
    Ok(Normalization { channel, energy_per_joule: [g11 / noise, g22 / noise], bandwidth: physical.bandwidth })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(a: f64, b: f64) -> RateModel {
        RateModel::from_channel(ChannelParams { a, b }, [10.0, 10.0]).unwrap()
    }

    #[test]
    fn classification() {
        assert_eq!(classify_region(0.9, 2.0, 10.0, 10.0).region, Region::AsymmetricProductAbove1);
        let t = classify_region(0.5, 1.5, 10.0, 10.0);
        assert_eq!(t.region, Region::AsymmetricProductAtMost1);
        assert!((threshold_power(0.5, 1.5) - 2.0).abs() < 1e-12);
        assert_eq!(classify_region(4.0, 4.0, 2.0, 2.0).region, Region::VeryStrong);
        assert_eq!(classify_region(4.0, 4.0, 3.0, 2.0).region, Region::GenericConcave);
        let m = classify_region(2.0, 0.9, 10.0, 10.0);
        assert_eq!(m, RegionTag { region: Region::AsymmetricProductAbove1, mirrored: true });
        assert_eq!(classify_region(0.3, 0.3, 1.0, 1.0).region, Region::GenericConcave);
    }

    #[test]
    fn region_a_values() {
        let m = model(0.5, 2.5);
        assert_eq!(m.sum_rate(0.0, 0.0).unwrap(), 0.0);
        let want = 0.5 * (5.0f64 / 3.0).ln() + 0.5 * 2f64.ln();
        assert!((m.sum_rate(1.0, 1.0).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.6020).abs() < 1e-4);
        assert!((m.sum_rate(3.0, 0.0).unwrap() - 0.5 * 4f64.ln()).abs() < 1e-12);
        let (r1, r2) = m.user_rates(1.0, 1.0).unwrap();
        assert!((r1 - 0.5 * (5.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((r2 - 0.5 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(m.user_rates(0.0, 5.0).unwrap(), (0.0, 0.5 * 6f64.ln()));
    }

    #[test]
    fn region_a_gradient() {
        let m = model(0.5, 2.5);
        let (g1, g2) = m.grad(1.0, 1.0).unwrap();
        assert!((g1 - 0.2).abs() < 1e-12);
        // frozen from central differences of sum_rate with step 1e-6
        assert!((g2 - 0.183_333_333_333).abs() < 1e-9);
        let (_, g2) = m.grad(0.0, 3.0).unwrap();
        assert!((g2 - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn region_b_kernels() {
        let m = model(0.5, 1.5);
        assert_eq!(m.region(), Region::AsymmetricProductAtMost1);
        assert!((m.threshold() - 2.0).abs() < 1e-12);
        let (_, g2) = m.grad(1.0, 3.0).unwrap();
        assert!((g2 - 1.0 / (2.0 * (1.0 + 1.5 + 3.0))).abs() < 1e-15);
        assert!((m.base_level_t1(1.0).unwrap() - 1.5).abs() < 1e-15);
        assert!((m.base_level_t1(4.0).unwrap() - 5.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn very_strong_decouples() {
        let m = RateModel::from_channel(ChannelParams { a: 10.0, b: 10.0 }, [2.0, 2.0]).unwrap();
        assert_eq!(m.region(), Region::VeryStrong);
        let (r1, r2) = m.user_rates(1.0, 3.0).unwrap();
        assert!((r1 - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((r2 - 0.5 * 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mirrored_matches_swapped() {
        let direct = model(0.7, 3.0);
        let mirrored = model(3.0, 0.7);
        assert!(mirrored.tag().mirrored);
        for &(x, y) in &[(0.3, 2.0), (4.0, 1.0), (0.0, 7.0)] {
            let (r1, r2) = direct.user_rates(x, y).unwrap();
            let (s1, s2) = mirrored.user_rates(y, x).unwrap();
            assert!((r1 - s2).abs() < 1e-15 && (r2 - s1).abs() < 1e-15);
            let (g1, g2) = direct.grad(x, y).unwrap();
            let (h1, h2) = mirrored.grad(y, x).unwrap();
            assert!((g1 - h2).abs() < 1e-15 && (g2 - h1).abs() < 1e-15);
        }
    }

    #[test]
    fn base_level_rejects_generic() {
        let m = RateModel::from_channel(ChannelParams { a: 0.0, b: 0.0 }, [1.0, 1.0]).unwrap();
        assert_eq!(m.region(), Region::GenericConcave);
        assert!(matches!(m.base_level_t1(1.0), Err(Error::UnsupportedRegion(_))));
        assert!((model(0.9, 2.0).base_level_t1(0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noise_kernel_with_interference_is_rejected() {
        let err = RateModel::from_channel(ChannelParams { a: 0.8, b: 0.8 }, [10.0, 10.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidUtility(_)));
    }

    #[test]
    fn negative_power_is_a_domain_error() {
        let m = model(0.9, 2.0);
        assert!(matches!(m.sum_rate(-1.0, 0.0), Err(Error::Domain { .. })));
        assert!(matches!(m.grad(0.0, -0.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn normalization() {
        let phys = PhysicalChannel { h11_db: -100.0, h22_db: -100.0, h12_db: -101.55, h21_db: -93.01, noise_psd: 1e-19, bandwidth: 1e6 };
        let n = normalize_channel(&phys).unwrap();
        assert!((n.channel.a - 0.70).abs() < 0.005);
        assert!((n.channel.b - 5.00).abs() < 0.05);
        // one millijoule becomes one normalized unit
        assert!((n.energy_per_joule[0] * 1e-3 - 1.0).abs() < 1e-9);
        let flat = PhysicalChannel { h11_db: -90.0, h22_db: -90.0, h12_db: -90.0, h21_db: -90.0, ..phys };
        let n = normalize_channel(&flat).unwrap();
        assert!((n.channel.a - 1.0).abs() < 1e-15 && (n.channel.b - 1.0).abs() < 1e-15);
        assert!(normalize_channel(&PhysicalChannel { bandwidth: 0.0, ..phys }).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        // region A or B, either orientation
        fn channel() -> impl Strategy<Value = (f64, f64)> {
            (0.2f64..0.95, 1.05f64..6.0, any::<bool>()).prop_map(|(a, b, flip)| if flip { (b, a) } else { (a, b) })
        }

        proptest! {
            #[test]
            fn user_rates_sum_to_sum_rate((a, b) in channel(), p1 in 0.0f64..10.0, p2 in 0.0f64..10.0) {
                let m = model(a, b);
                let (r1, r2) = m.user_rates(p1, p2).unwrap();
                prop_assert!(r1 >= 0.0 && r2 >= 0.0);
                prop_assert!((r1 + r2 - m.sum_rate(p1, p2).unwrap()).abs() <= 1e-12);
            }

            #[test]
            fn sum_rate_is_increasing((a, b) in channel(), p1 in 0.0f64..9.0, p2 in 0.0f64..9.0, d in 1e-3f64..1.0) {
                let m = model(a, b);
                let f = m.sum_rate(p1, p2).unwrap();
                prop_assert!(m.sum_rate(p1 + d, p2).unwrap() >= f - 1e-12);
                prop_assert!(m.sum_rate(p1, p2 + d).unwrap() >= f - 1e-12);
            }

            #[test]
            fn sum_rate_is_concave((a, b) in channel(), x in (0.0f64..10.0, 0.0f64..10.0), y in (0.0f64..10.0, 0.0f64..10.0)) {
                let m = model(a, b);
                let mid = m.sum_rate(0.5 * (x.0 + y.0), 0.5 * (x.1 + y.1)).unwrap();
                let chord = 0.5 * (m.sum_rate(x.0, x.1).unwrap() + m.sum_rate(y.0, y.1).unwrap());
                prop_assert!(mid >= chord - 1e-12);
            }

            #[test]
            fn gradient_matches_differences((a, b) in channel(), p1 in 0.01f64..9.9, p2 in 0.01f64..9.9) {
                let m = model(a, b);
                let kink = m.threshold();
                // the canonical second user carries the kink
                let q = if m.tag().mirrored { p1 } else { p2 };
                prop_assume!(m.region() != Region::AsymmetricProductAtMost1 || (q - kink).abs() > 1e-3);
                let h = 1e-6;
                let (g1, g2) = m.grad(p1, p2).unwrap();
                let d1 = (m.sum_rate(p1 + h, p2).unwrap() - m.sum_rate(p1 - h, p2).unwrap()) / (2.0 * h);
                let d2 = (m.sum_rate(p1, p2 + h).unwrap() - m.sum_rate(p1, p2 - h).unwrap()) / (2.0 * h);
                prop_assert!((g1 - d1).abs() <= 1e-6, "{} vs {}", g1, d1);
                prop_assert!((g2 - d2).abs() <= 1e-6, "{} vs {}", g2, d2);
            }

            #[test]
            fn continuous_across_kink(a in 0.2f64..0.95, t in 0.05f64..0.95, p1 in 0.0f64..10.0) {
                // ab <= 1 with the kink inside the power range
                let b = 1.0 / a - t * (1.0 / a - 1.0);
                let m = model(a, b);
                prop_assume!(m.region() == Region::AsymmetricProductAtMost1);
                let pc = m.threshold();
                prop_assume!(pc > 1e-3 && pc < 9.0);
                let below = m.sum_rate(p1, pc - 1e-9).unwrap();
                let above = m.sum_rate(p1, pc + 1e-9).unwrap();
                prop_assert!((below - above).abs() <= 1e-8);
            }
        }
    }
}
