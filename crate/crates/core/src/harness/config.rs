use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array_circuit::{ArrayConfig, BiasNetworkSpec, MicrostripSpec};
use crate::bus::{BusPair, DeadTimeModel, JitterSpec};
use crate::decoder::DecoderSpec;
use crate::detector::{DarkSpec, DetectorSpec, EfficiencyModel, SourceSpec};
use crate::error::{Error, Result};

/// Run-level settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub wavelengths_um: Vec<f64>,
    /// Background-subtracted count rate the source is adjusted to.
    pub reference_pcr_cps: f64,
    /// Plane current (total) at which the reference rate is set.
    pub reference_bias_ua: f64,
    /// Solve the source rate from the reference condition; otherwise use
    /// `source.mean_photon_rate_at_array` as given.
    pub auto_adjust_source: bool,
    pub dead_time_model: DeadTimeModel,
    /// Simulated time per flux-sweep point.
    pub flux_duration_s: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            duration_s: 1.0,
            wavelengths_um: vec![3.4, 5.3, 7.4, 10.0],
            reference_pcr_cps: 100e3,
            reference_bias_ua: 30.0,
            auto_adjust_source: true,
            dead_time_model: DeadTimeModel::NonParalyzable,
            flux_duration_s: 10.0,
        }
    }
}

/// Complete description of a simulated measurement.
///
/// Every section is optional in the TOML file and falls back to its
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub array: ArrayConfig,
    pub bias: BiasNetworkSpec,
    pub row_bus: MicrostripSpec,
    pub col_bus: MicrostripSpec,
    pub efficiency: EfficiencyModel,
    pub source: SourceSpec,
    pub dark: DarkSpec,
    pub detector: DetectorSpec,
    pub jitter: JitterSpec,
    pub decoder: DecoderSpec,
    pub run: RunSpec,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.bias.validate()?;
        self.row_bus.validate()?;
        self.col_bus.validate()?;
        self.efficiency.validate()?;
        self.source.validate()?;
        self.dark.validate()?;
        self.detector.validate()?;
        self.jitter.validate()?;
        self.decoder.validate()?;
        let run = &self.run;
        if !(run.duration_s > 0.0) {
            return Err(Error::invalid("run.duration_s", "must be positive"));
        }
        if !(run.flux_duration_s > 0.0) {
            return Err(Error::invalid("run.flux_duration_s", "must be positive"));
        }
        if run.wavelengths_um.is_empty() || run.wavelengths_um.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("run.wavelengths_um", "must be a non-empty list of positive values"));
        }
        if !(run.reference_pcr_cps > 0.0) {
            return Err(Error::invalid("run.reference_pcr_cps", "must be positive"));
        }
        if !(run.reference_bias_ua > 0.0) {
            return Err(Error::invalid("run.reference_bias_ua", "must be positive"));
        }
        if self.row_bus.n_taps != self.array.n_rows {
            return Err(Error::invalid("row_bus.n_taps", "must equal array.n_rows"));
        }
        if self.col_bus.n_taps != self.array.n_cols {
            return Err(Error::invalid("col_bus.n_taps", "must equal array.n_cols"));
        }
        Ok(())
    }

    pub fn buses(&self) -> BusPair<&MicrostripSpec> {
        BusPair::new(&self.row_bus, &self.col_bus)
    }

    pub fn bus_dead_times_ns(&self) -> BusPair<f64> {
        BusPair::new(self.row_bus.bus_dead_time_ns, self.col_bus.bus_dead_time_ns)
    }
}
