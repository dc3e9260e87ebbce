//! Scenario description with every physical and learning default, plus TOML
//! loading with exhaustive validation.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::channel::{db_to_linear, max_doppler, thermal_noise, wavelength};
use crate::env::RewardParams;
use crate::error::{ConfigError, Error, FieldError, Result, Validator};
use crate::geometry::{coverage_arc, coverage_time, EARTH_RADIUS_M};
use crate::hfl::{AggregationMode, SyntheticConfig};

/// Which concurrent uplink transmitters count as interference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceMode {
    /// Every other transmitter of the same link class.
    #[default]
    AllActive,
    /// Only transmitters aimed at the same receiver.
    SameReceiver,
}

/// Source of the aggregation weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Softmax of the action's weight logits.
    #[default]
    Learned,
    /// Proportional to the training samples behind each model.
    DatasetProportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub users: usize,
    pub uavs: usize,
    pub satellites: usize,
    pub tasks: usize,

    pub arena_m: f64,
    pub uav_altitude_m: f64,
    pub uav_z_min_m: f64,
    pub uav_z_max_m: f64,
    pub uav_v_max_mps: f64,

    pub sat_altitude_m: f64,
    pub sat_speed_mps: f64,
    pub elevation_min_deg: f64,
    pub sat_spacing_min_m: f64,
    pub sat_spacing_max_m: f64,
    /// Pass distance already covered by the first satellite at reset.
    pub leader_travelled_m: f64,

    pub ground_carrier_hz: f64,
    pub space_carrier_hz: f64,
    pub isl_carrier_hz: f64,
    pub uav_gain_db: f64,
    pub sat_gain_db: f64,
    /// Gain of the UAV-satellite link; the product of both antenna gains
    /// when unset.
    pub sat_link_gain_db: Option<f64>,
    pub rician_factor_db: f64,
    pub tau_los: f64,
    pub tau_nlos: f64,
    pub bandwidth_hz: f64,
    pub isl_bandwidth_hz: f64,
    pub isl_peak_gain: f64,
    pub noise_temperature_k: f64,
    /// Overrides `v_L * f / c`.
    pub max_doppler_hz: Option<f64>,
    /// Overrides the propagation delay as the CSI age.
    pub csi_delay_s: Option<f64>,

    pub user_power_w: f64,
    pub uav_power_w: f64,
    pub sat_power_w: f64,

    pub slot_s: f64,
    pub horizon: usize,
    pub local_lr: f64,
    pub interference: InterferenceMode,
    pub aggregation: AggregationMode,
    pub weight_mode: WeightMode,
    pub reward: RewardParams,
    pub synthetic: SyntheticConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            users: 10,
            uavs: 3,
            satellites: 5,
            tasks: 3,
            arena_m: 250.0,
            uav_altitude_m: 50.0,
            uav_z_min_m: 40.0,
            uav_z_max_m: 60.0,
            uav_v_max_mps: 5.0,
            sat_altitude_m: 800e3,
            sat_speed_mps: 7800.0,
            elevation_min_deg: 40.0,
            sat_spacing_min_m: 100e3,
            sat_spacing_max_m: 500e3,
            leader_travelled_m: 0.0,
            ground_carrier_hz: 1e9,
            space_carrier_hz: 30e9,
            isl_carrier_hz: 23e9,
            uav_gain_db: 25.0,
            sat_gain_db: 40.0,
            sat_link_gain_db: None,
            rician_factor_db: 10.0,
            tau_los: 2.0,
            tau_nlos: 2.5,
            bandwidth_hz: 10e6,
            isl_bandwidth_hz: 1e9,
            isl_peak_gain: 1.0,
            noise_temperature_k: 354.81,
            max_doppler_hz: None,
            csi_delay_s: None,
            user_power_w: 0.1,
            uav_power_w: 1.0,
            sat_power_w: 2.0,
            slot_s: 1.0,
            horizon: 100,
            local_lr: 0.5,
            interference: InterferenceMode::AllActive,
            aggregation: AggregationMode::WeightedMean,
            weight_mode: WeightMode::Learned,
            reward: RewardParams::default(),
            synthetic: SyntheticConfig { model_size_bits: Some(DEFAULT_PAYLOAD_BITS), ..SyntheticConfig::default() },
        }
    }
}

/// Transfer size of one model in the default scenario.
pub const DEFAULT_PAYLOAD_BITS: f64 = 8e6;

impl Scenario {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Validator::new("scenario");
        for (name, n) in [("users", self.users), ("uavs", self.uavs), ("satellites", self.satellites), ("tasks", self.tasks)] {
            v.check(n >= 1, name, "must be at least 1");
        }
        v.check(self.horizon >= 1, "horizon", "must be at least 1");
        for (name, x) in [
            ("arena_m", self.arena_m),
            ("uav_v_max_mps", self.uav_v_max_mps),
            ("sat_altitude_m", self.sat_altitude_m),
            ("sat_speed_mps", self.sat_speed_mps),
            ("ground_carrier_hz", self.ground_carrier_hz),
            ("space_carrier_hz", self.space_carrier_hz),
            ("isl_carrier_hz", self.isl_carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("isl_bandwidth_hz", self.isl_bandwidth_hz),
            ("isl_peak_gain", self.isl_peak_gain),
            ("noise_temperature_k", self.noise_temperature_k),
            ("user_power_w", self.user_power_w),
            ("uav_power_w", self.uav_power_w),
            ("sat_power_w", self.sat_power_w),
            ("slot_s", self.slot_s),
            ("tau_los", self.tau_los),
            ("tau_nlos", self.tau_nlos),
        ] {
            v.positive(x, name);
        }
        v.check(self.uav_z_min_m > 0.0, "uav_z_min_m", "must be positive");
        v.check(self.uav_z_max_m >= self.uav_z_min_m, "uav_z_max_m", "must be >= uav_z_min_m");
        v.check(
            (self.uav_z_min_m..=self.uav_z_max_m).contains(&self.uav_altitude_m),
            "uav_altitude_m",
            "must lie in [uav_z_min_m, uav_z_max_m]",
        );
        v.check(
            (0.0..90.0).contains(&self.elevation_min_deg),
            "elevation_min_deg",
            format!("must lie in [0, 90), got {}", self.elevation_min_deg),
        );
        v.check(self.sat_spacing_min_m > 0.0, "sat_spacing_min_m", "must be positive");
        v.check(self.sat_spacing_max_m >= self.sat_spacing_min_m, "sat_spacing_max_m", "must be >= sat_spacing_min_m");
        v.check(
            self.leader_travelled_m >= 0.0 && self.leader_travelled_m.is_finite(),
            "leader_travelled_m",
            "must be non-negative",
        );
        v.check(self.uav_gain_db.is_finite(), "uav_gain_db", "must be finite");
        v.check(self.sat_gain_db.is_finite(), "sat_gain_db", "must be finite");
        v.check(!self.rician_factor_db.is_nan(), "rician_factor_db", "must be a number");
        if let Some(g) = self.sat_link_gain_db {
            v.check(g.is_finite(), "sat_link_gain_db", "must be finite");
        }
        if let Some(d) = self.max_doppler_hz {
            v.check(d >= 0.0 && d.is_finite(), "max_doppler_hz", "must be non-negative");
        }
        if let Some(d) = self.csi_delay_s {
            v.check(d >= 0.0 && d.is_finite(), "csi_delay_s", "must be non-negative");
        }
        v.check(self.local_lr >= 0.0 && self.local_lr.is_finite(), "local_lr", "must be non-negative");
        self.reward.validate(&mut v);
        let mut s = Validator::new("scenario.synthetic");
        self.synthetic.validate(&mut s);
        if let Err(e) = s.finish() {
            v.extend(e);
        }
        v.finish()
    }

    pub fn elevation_min_rad(&self) -> f64 {
        self.elevation_min_deg.to_radians()
    }

    /// Length of a full coverage pass, metres.
    pub fn coverage_arc(&self) -> Result<f64> {
        coverage_arc(EARTH_RADIUS_M, self.sat_altitude_m, self.elevation_min_rad())
    }

    /// Duration of a full coverage pass, seconds.
    pub fn coverage_time(&self) -> Result<f64> {
        coverage_time(self.coverage_arc()?, self.sat_speed_mps)
    }

    pub fn rician_factor(&self) -> f64 {
        db_to_linear(self.rician_factor_db)
    }

    pub fn sat_link_gain(&self) -> f64 {
        db_to_linear(self.sat_link_gain_db.unwrap_or(self.uav_gain_db + self.sat_gain_db))
    }

    pub fn ground_wavelength(&self) -> f64 {
        wavelength(self.ground_carrier_hz)
    }

    pub fn space_wavelength(&self) -> f64 {
        wavelength(self.space_carrier_hz)
    }

    pub fn max_doppler(&self) -> f64 {
        self.max_doppler_hz.unwrap_or_else(|| max_doppler(self.sat_speed_mps, self.space_carrier_hz))
    }

    pub fn noise_power(&self) -> f64 {
        thermal_noise(self.noise_temperature_k, self.bandwidth_hz)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario = parse_toml(text, "scenario")?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Deserializes TOML, turning syntax and type errors into a field-addressed
/// [`ConfigError`].
pub fn parse_toml<T: DeserializeOwned>(text: &str, root: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        Error::Config(ConfigError {
            errors: vec![FieldError { field: root.to_string(), message: e.message().to_string() }],
        })
    })
}
