//! JSON scenario files.
//!
//! With a normalized channel (`{"a": .., "b": ..}`) energies are already in
//! normalized units and data in nats. With a `physical` channel block,
//! energies are millijoules and data is bits; both are converted on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_scenario, DataProfile, Scenario, TimeGrid, UserProfile};
use crate::rates::{normalize_channel, ChannelParams, Normalization, PhysicalChannel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSpec {
    Arrivals(Vec<f64>),
    Backlog(Backlog),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backlog {
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    #[serde(rename = "E")]
    pub energy: Vec<f64>,
    #[serde(rename = "Emax")]
    pub e_max: f64,
    #[serde(rename = "B", default = "infinite")]
    pub data: DataSpec,
}

fn infinite() -> DataSpec {
    DataSpec::Backlog(Backlog::Infinite)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelSpec {
    Physical { physical: PhysicalChannel },
    Normalized(ChannelParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub tau: f64,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<usize>,
    pub users: [UserSpec; 2],
    pub channel: ChannelSpec,
}

/// A validated scenario in normalized units plus the factors used to get
/// there.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub scenario: Scenario,
    pub normalization: Option<Normalization>,
}

impl Loaded {
    /// Bits per normalized data unit.
    pub fn bits_per_unit(&self) -> f64 {
        match &self.normalization {
            Some(n) => n.bits_per_unit(),
            None => 1.0 / std::f64::consts::LN_2,
        }
    }
}

impl ScenarioFile {
    pub fn into_scenario(&self) -> Result<Loaded> {
        let n = self.slots.unwrap_or(self.users[0].energy.len());
        let grid = TimeGrid::new(n, self.tau)?;
        let (channel, normalization) = match &self.channel {
            ChannelSpec::Normalized(c) => (*c, None),
            ChannelSpec::Physical { physical } => {
                let norm = normalize_channel(physical)?;
                (norm.channel, Some(norm))
            }
        };
        let users = [0, 1].map(|j| {
            let u = &self.users[j];
            let (energy_scale, data_scale) = match &normalization {
                Some(norm) => (1e-3 * norm.energy_per_joule[j], 1.0 / norm.bits_per_unit()),
                None => (1.0, 1.0),
            };
            let arrivals = u.energy.iter().map(|e| e * energy_scale).collect();
            let data = match &u.data {
                DataSpec::Backlog(Backlog::Infinite) => DataProfile::Infinite,
                DataSpec::Arrivals(b) => DataProfile::Arrivals(b.iter().map(|x| x * data_scale).collect()),
            };
            UserProfile { harvest: crate::model::HarvestProfile::new(arrivals, u.e_max * energy_scale), data }
        });
        let scenario = validate_scenario(&Scenario::new(grid, users, channel))?;
        Ok(Loaded { scenario, normalization })
    }

    /// The file form of a normalized scenario.
    pub fn from_scenario(s: &Scenario) -> Self {
        let users = [0, 1].map(|j| {
            let u = &s.users[j];
            UserSpec {
                energy: u.harvest.arrivals.clone(),
                e_max: u.harvest.e_max,
                data: match &u.data {
                    DataProfile::Infinite => infinite(),
                    DataProfile::Arrivals(b) => DataSpec::Arrivals(b.clone()),
                },
            }
        });
        ScenarioFile { tau: s.grid.tau, slots: Some(s.grid.slots), users, channel: ChannelSpec::Normalized(s.channel) }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("scenario file: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario files serialize")
    }
}

pub fn load_scenario(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::invalid(format!("reading {}: {e}", path.display())))?;
    ScenarioFile::parse(&text)?.into_scenario()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_round_trip() {
        let text = r#"{"tau": 1, "users": [{"E": [1, 0], "Emax": 2}, {"E": [0, 3], "Emax": 2, "B": [0.5, 1]}],
                       "channel": {"a": 0.9, "b": 2}}"#;
        let loaded = ScenarioFile::parse(text).unwrap().into_scenario().unwrap();
        let s = &loaded.scenario;
        assert_eq!(s.grid.slots, 2);
        assert!(s.users[0].data.is_infinite());
        assert_eq!(s.users[1].harvest.arrivals, vec![0.0, 2.0]);
        let again = ScenarioFile::parse(&ScenarioFile::from_scenario(s).to_json()).unwrap().into_scenario().unwrap();
        assert_eq!(&again.scenario, s);
        assert_eq!(loaded.bits_per_unit(), 1.0 / std::f64::consts::LN_2);
    }

    #[test]
    fn physical_units_convert() {
        let text = r#"{"tau": 1, "users": [{"E": [5, 0], "Emax": 10, "B": [0, 2e6]}, {"E": [1, 1], "Emax": 10, "B": "infinite"}],
             "channel": {"physical": {"h11_db": -100, "h22_db": -100, "h12_db": -101.55, "h21_db": -93.01,
                                      "noise_psd": 1e-19, "bandwidth": 1e6}}}"#;
        let loaded = ScenarioFile::parse(text).unwrap().into_scenario().unwrap();
        let s = &loaded.scenario;
        assert!((s.users[0].harvest.arrivals[0] - 5.0).abs() < 1e-9);
        assert!((s.channel.a - 0.7).abs() < 0.005 && (s.channel.b - 5.0).abs() < 0.05);
        let b = s.users[0].data.arrivals().unwrap()[1];
        assert!((b * loaded.bits_per_unit() - 2e6).abs() < 1e-6);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_shapes() {
        assert!(ScenarioFile::parse(r#"{"tau": 1, "users": [], "channel": {"a": 1, "b": 1}}"#).is_err());
        let short = r#"{"tau": 1, "N": 3, "users": [{"E": [1], "Emax": 1}, {"E": [1], "Emax": 1}], "channel": {"a": 1, "b": 1}}"#;
        assert!(matches!(ScenarioFile::parse(short).unwrap().into_scenario(), Err(Error::Shape(_))));
        assert!(ScenarioFile::parse(r#"{"tau": 1, "extra": 0, "users": [], "channel": {}}"#).is_err());
    }
}
