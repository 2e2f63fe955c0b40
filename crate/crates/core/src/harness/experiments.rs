use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bus::{simulate_line_throughput, throughput_response};
use crate::decoder::{decode, image_stats, Decoded, ImageStats};
use crate::detector::Plane;
use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::pipeline::{adjust_source_rate, derive_seed, simulate, stream_rng, RunPoint, Simulation, Stream};

/// One bias point of a count-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub wavelength_um: f64,
    /// Total current of the swept plane.
    pub i_plane_ua: f64,
    /// Raw count rate with the source on.
    pub pcr_cps: f64,
    pub dcr_cps: f64,
    /// `pcr - dcr`, clamped at zero.
    pub pcr_minus_dcr_cps: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweptPlane {
    Rows,
    Cols,
}

impl SweptPlane {
    pub fn line(self) -> Plane {
        match self {
            SweptPlane::Rows => Plane::Row,
            SweptPlane::Cols => Plane::Col,
        }
    }
}

const DARK_LABEL: u64 = 0;
const LIGHT_LABEL: u64 = 1;

/// Count rate versus bias of one plane, for every configured wavelength.
///
/// The swept plane's bus is counted at one end. The partner plane is held at
/// the reference bias when `partner_biased`, otherwise unbiased. Each point
/// is a dark run followed by a source-on run with the source adjusted per
/// wavelength; seeds depend only on (wavelength, current), so sweeps with and
/// without the partner see the same photon stream.
pub fn run_bias_sweep(
    config: &ExperimentConfig,
    plane: SweptPlane,
    partner_biased: bool,
    i_values_ua: &[f64],
) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    if i_values_ua.is_empty() {
        return Err(Error::invalid("i_values", "must not be empty"));
    }
    if i_values_ua.windows(2).any(|w| w[1] < w[0]) || i_values_ua.iter().any(|&i| !(i >= 0.0)) {
        return Err(Error::invalid("i_values", "must be non-negative and ascending"));
    }
    let rates: Vec<f64> = config
        .run
        .wavelengths_um
        .iter()
        .map(|&wl| adjust_source_rate(config, wl))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..rates.len())
        .flat_map(|w| (0..i_values_ua.len()).map(move |k| (w, k)))
        .collect();
    let partner_ua = if partner_biased { config.run.reference_bias_ua } else { 0.0 };
    jobs.par_iter()
        .map(|&(w, k)| {
            let wl = config.run.wavelengths_um[w];
            let i = i_values_ua[k];
            let (i_rows, i_cols) = match plane {
                SweptPlane::Rows => (i, partner_ua),
                SweptPlane::Cols => (partner_ua, i),
            };
            let point = |rate: f64, label: u64| RunPoint {
                wavelength_um: wl,
                photon_rate: rate,
                i_rows_ua: i_rows,
                i_cols_ua: i_cols,
                duration_s: config.run.duration_s,
                seed: derive_seed(config.run.seed, &[w as u64, k as u64, label]),
            };
            let line = plane.line();
            let dark = simulate(config, &point(0.0, DARK_LABEL))?.line_count(line);
            let light = simulate(config, &point(rates[w], LIGHT_LABEL))?.line_count(line);
            let dcr_cps = dark as f64 / config.run.duration_s;
            let pcr_cps = light as f64 / config.run.duration_s;
            let diff = pcr_cps - dcr_cps;
            Ok(SweepRecord {
                wavelength_um: wl,
                i_plane_ua: i,
                pcr_cps,
                dcr_cps,
                pcr_minus_dcr_cps: diff.max(0.0),
                clamped: diff < 0.0,
            })
        })
        .collect()
}

/// Products of one time-tagger style acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRun {
    pub wavelength_um: f64,
    pub photon_rate: f64,
    pub simulation: Simulation,
    pub decoded: Decoded,
    pub stats: ImageStats,
}

/// Both planes biased, both buses tagged at both ends, then decoded into
/// Δt histograms, peak tables and a pixel image, for every wavelength.
pub fn run_histogram_experiment(config: &ExperimentConfig) -> Result<Vec<HistogramRun>> {
    config.validate()?;
    config
        .run
        .wavelengths_um
        .par_iter()
        .enumerate()
        .map(|(w, &wl)| run_histogram_point(config, wl, derive_seed(config.run.seed, &[w as u64, 2])))
        .collect()
}

/// Single-wavelength acquisition and decode.
pub fn run_histogram_point(config: &ExperimentConfig, wavelength_um: f64, seed: u64) -> Result<HistogramRun> {
    let photon_rate = adjust_source_rate(config, wavelength_um)?;
    let simulation = simulate(
        config,
        &RunPoint {
            wavelength_um,
            photon_rate,
            i_rows_ua: config.bias.i_total_rows_ua,
            i_cols_ua: config.bias.i_total_cols_ua,
            duration_s: config.run.duration_s,
            seed,
        },
    )?;
    let decoded = decode(
        &simulation.tags,
        config.array.n_rows,
        config.array.n_cols,
        &config.decoder,
    )?;
    let stats = image_stats(&decoded.image);
    Ok(HistogramRun {
        wavelength_um,
        photon_rate,
        simulation,
        decoded,
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxPoint {
    pub input_cps: f64,
    /// Arrivals actually drawn, per second.
    pub offered_cps: f64,
    pub measured_cps: f64,
    pub closed_form_cps: f64,
}

/// Registered line rate versus offered rate, Monte Carlo against the closed
/// form, using the row bus dead time and the configured model.
pub fn run_flux_sweep(config: &ExperimentConfig, input_rates_cps: &[f64]) -> Result<Vec<FluxPoint>> {
    config.validate()?;
    if input_rates_cps.windows(2).any(|w| w[1] < w[0]) || input_rates_cps.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::invalid("input_rates", "must be non-negative and ascending"));
    }
    let dead_ns = config.row_bus.bus_dead_time_ns;
    let model = config.run.dead_time_model;
    let duration = config.run.flux_duration_s;
    input_rates_cps
        .par_iter()
        .enumerate()
        .map(|(k, &rate)| {
            let mut rng = stream_rng(derive_seed(config.run.seed, &[k as u64, 3]), Stream::Flux);
            let counts = simulate_line_throughput(rate, duration, dead_ns, model, &mut rng)?;
            Ok(FluxPoint {
                input_cps: rate,
                offered_cps: counts.offered as f64 / duration,
                measured_cps: counts.registered as f64 / duration,
                closed_form_cps: throughput_response(rate, dead_ns, model),
            })
        })
        .collect()
}

/// `n` log-spaced rates from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}
