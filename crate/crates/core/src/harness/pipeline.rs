use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::array_circuit::{divide_bias, draw_resistor_spread, tap_delay_schedule, TapSchedule};
use crate::bus::{emit_tags, throughput_response, BusEvent, BusPair, Tag};
use crate::detector::{
    dark_rate_per_wire, detect_photons, generate_dark_counts, generate_photon_arrivals, heater_trigger,
    internal_efficiency, merge_by_time, run_wire_cascade, DetectionEvent, DetectorSpec, Plane,
};
use crate::error::{Error, Result};

use super::config::ExperimentConfig;

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Resistors = 1,
    Arrivals = 2,
    Detection = 3,
    Dark = 4,
    Coupling = 5,
    Jitter = 6,
    Flux = 7,
}

/// ChaCha generator for `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Mixes labels into a seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(seed, |acc, &l| {
        let mut z = acc ^ l.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

/// Per-detector bias of every row and column wire.
#[derive(Debug, Clone, PartialEq)]
pub struct WireBias {
    pub rows_ua: Vec<f64>,
    pub cols_ua: Vec<f64>,
}

impl WireBias {
    pub fn plane(&self, plane: Plane) -> &[f64] {
        match plane {
            Plane::Row => &self.rows_ua,
            Plane::Col => &self.cols_ua,
        }
    }
}

/// Splits the two plane currents over the bias resistors. The resistor
/// spread is drawn from the config seed alone, so one device keeps the same
/// resistors across every run of an experiment.
pub fn wire_bias(config: &ExperimentConfig, i_rows_ua: f64, i_cols_ua: f64) -> Result<WireBias> {
    let mut rng = stream_rng(config.run.seed, Stream::Resistors);
    let tol = config.bias.r_bias_tolerance;
    let dev_rows = draw_resistor_spread(config.array.n_rows, tol, &mut rng)?;
    let dev_cols = draw_resistor_spread(config.array.n_cols, tol, &mut rng)?;
    Ok(WireBias {
        rows_ua: divide_bias(i_rows_ua, config.bias.r_bias_ohm, &dev_rows)?,
        cols_ua: divide_bias(i_cols_ua, config.bias.r_bias_ohm, &dev_cols)?,
    })
}

pub fn schedules(config: &ExperimentConfig) -> Result<BusPair<TapSchedule>> {
    Ok(BusPair::new(
        tap_delay_schedule(&config.row_bus)?,
        tap_delay_schedule(&config.col_bus)?,
    ))
}

/// One simulated acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPoint {
    pub wavelength_um: f64,
    /// Time-averaged signal photon rate at the array; 0 switches the source off
    /// (leakage included).
    pub photon_rate: f64,
    /// Total plane currents.
    pub i_rows_ua: f64,
    pub i_cols_ua: f64,
    pub duration_s: f64,
    pub seed: u64,
}

/// Simulator output with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub bias: WireBias,
    /// Wire clicks after dead time and coupling.
    pub detections: Vec<DetectionEvent>,
    /// Clicks that heated their bus tap.
    pub bus_events: Vec<BusEvent>,
    /// Per bus event: registered by the line (not lost to line dead time).
    pub accepted: Vec<bool>,
    pub tags: Vec<Tag>,
}

impl Simulation {
    /// Events registered on one line, as a counter at one end sees them.
    pub fn line_count(&self, line: Plane) -> usize {
        self.bus_events
            .iter()
            .zip(&self.accepted)
            .filter(|(e, &a)| a && e.line == line)
            .count()
    }
}

/// Runs the device chain: photons and dark clicks, wire dead time and
/// thermal coupling, heater triggering, then time-of-flight tagging.
pub fn simulate(config: &ExperimentConfig, point: &RunPoint) -> Result<Simulation> {
    let bias = wire_bias(config, point.i_rows_ua, point.i_cols_ua)?;
    let seed = point.seed;

    let arrivals = if point.photon_rate > 0.0 {
        let source = crate::detector::SourceSpec {
            wavelength_um: point.wavelength_um,
            mean_photon_rate_at_array: point.photon_rate,
            ..config.source.clone()
        };
        generate_photon_arrivals(&source, point.duration_s, &mut stream_rng(seed, Stream::Arrivals))?
    } else {
        Vec::new()
    };
    let candidate_spec = DetectorSpec {
        dead_time_ns: 0.0,
        ..config.detector.clone()
    };
    let photons = detect_photons(
        &arrivals,
        &config.array,
        &bias.rows_ua,
        &bias.cols_ua,
        &config.efficiency,
        &candidate_spec,
        &mut stream_rng(seed, Stream::Detection),
    )?;
    let mut dark_rng = stream_rng(seed, Stream::Dark);
    let dark_rows = generate_dark_counts(
        &config.dark,
        Plane::Row,
        &bias.rows_ua,
        config.array.n_cols,
        &config.efficiency,
        point.duration_s,
        &mut dark_rng,
    )?;
    let dark_cols = generate_dark_counts(
        &config.dark,
        Plane::Col,
        &bias.cols_ua,
        config.array.n_rows,
        &config.efficiency,
        point.duration_s,
        &mut dark_rng,
    )?;
    let dark = merge_by_time(dark_rows, dark_cols, |e| e.time_ps);
    let candidates = merge_by_time(photons, dark, |e| e.time_ps);

    let detections = run_wire_cascade(
        &candidates,
        &config.array,
        &bias.rows_ua,
        &bias.cols_ua,
        &config.detector,
        &mut stream_rng(seed, Stream::Coupling),
    )?;
    let mut bus_events: Vec<BusEvent> = detections
        .iter()
        .filter(|e| config.buses().get(e.wire).is_enabled())
        .filter_map(|e| {
            let i = bias.plane(e.wire)[e.wire_index()];
            heater_trigger(e, &config.bias, i)
        })
        .collect();
    bus_events.sort_by(|a, b| a.time_ps.total_cmp(&b.time_ps));

    let emission = emit_tags(
        &bus_events,
        &schedules(config)?,
        &config.jitter,
        &config.bus_dead_times_ns(),
        config.run.dead_time_model,
        &mut stream_rng(seed, Stream::Jitter),
    )?;
    Ok(Simulation {
        bias,
        detections,
        bus_events,
        accepted: emission.accepted,
        tags: emission.tags,
    })
}

/// Expected background-subtracted count rate on the bus of `line` for a
/// signal photon rate `photon_rate`, from the efficiency model and the
/// closed-form wire and line dead times. Thermal coupling from the partner
/// plane is ignored (the reference condition leaves it unbiased).
pub fn expected_line_pcr(
    config: &ExperimentConfig,
    line: Plane,
    bias: &WireBias,
    wavelength_um: f64,
    photon_rate: f64,
) -> Result<f64> {
    let wires = bias.plane(line);
    let n_wires = wires.len() as f64;
    let fraction = match line {
        Plane::Row => config.detector.row_wire_fraction,
        Plane::Col => 1.0 - config.detector.row_wire_fraction,
    };
    let tau_det = config.detector.dead_time_ns * 1e-9;
    let bus = *config.buses().get(line);
    if !bus.is_enabled() {
        return Ok(0.0);
    }
    // The signal is square-wave modulated with a period far above every
    // dead time, so on and off phases saturate independently.
    let duty = config.source.duty_cycle;
    let wire_np = |r: f64| r / (1.0 + r * tau_det);
    let mut on_phase = 0.0;
    let mut off_phase = 0.0;
    let mut dark_only = 0.0;
    for &i in wires {
        if !heater_trigger_possible(config, i) {
            continue;
        }
        let per_wire = fraction / n_wires;
        let signal = photon_rate * per_wire * internal_efficiency(i, wavelength_um, &config.efficiency)?;
        let leak = config.source.broadband_leakage_rate
            * per_wire
            * internal_efficiency(i, config.source.leakage_wavelength_um, &config.efficiency)?;
        let dark = dark_rate_per_wire(&config.dark, i, &config.efficiency)?;
        on_phase += wire_np(signal / duty + leak + dark);
        off_phase += wire_np(leak + dark);
        dark_only += wire_np(dark);
    }
    let model = config.run.dead_time_model;
    let line = |r: f64| throughput_response(r, bus.bus_dead_time_ns, model);
    Ok(duty * line(on_phase) + (1.0 - duty) * line(off_phase) - line(dark_only))
}

fn heater_trigger_possible(config: &ExperimentConfig, i_ua: f64) -> bool {
    i_ua > 0.0
        && crate::array_circuit::coupling_energy_j(config.bias.l_bias_h, i_ua) >= config.bias.heater_threshold_energy_j
}

/// Signal photon rate at the array that yields the reference count rate on
/// the row bus with rows at the reference bias and columns unbiased.
pub fn adjust_source_rate(config: &ExperimentConfig, wavelength_um: f64) -> Result<f64> {
    if !config.run.auto_adjust_source {
        return Ok(config.source.mean_photon_rate_at_array);
    }
    let bias = wire_bias(config, config.run.reference_bias_ua, 0.0)?;
    let target = config.run.reference_pcr_cps;
    let pcr = |rate: f64| expected_line_pcr(config, Plane::Row, &bias, wavelength_um, rate);
    if pcr(0.0)? >= target {
        return Ok(0.0);
    }
    let mut hi = target.max(1.0);
    let mut last = pcr(0.0)?;
    while pcr(hi)? < target {
        let now = pcr(hi)?;
        if hi > 1e15 || now <= last {
            return Err(Error::Analysis(format!(
                "reference rate of {target} cps is unreachable at {wavelength_um} um (max about {now:.0} cps)"
            )));
        }
        last = now;
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pcr(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-9 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
