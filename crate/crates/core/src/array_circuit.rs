//! Static array geometry, bias network and readout-line parameters, plus the
//! closed-form electrical calculations built on them.
//!
//! Units follow the field suffixes: `_um` micrometres, `_nm` nanometres,
//! `_ua` microamperes, `_ps`/`_ns` pico/nanoseconds, `_ohm`, `_h` henry,
//! `_j` joule. Functions that return SI quantities say so in their names.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Pixel grid geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    pub pixel_pitch_um: f64,
    /// Active pixel footprint (width, height).
    pub pixel_size_um: (f64, f64),
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_rows: 8,
            n_cols: 8,
            pixel_pitch_um: 30.0,
            pixel_size_um: (10.0, 5.0),
        }
    }
}

impl ArrayConfig {
    pub fn n_pixels(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn pixel_area_um2(&self) -> f64 {
        self.pixel_size_um.0 * self.pixel_size_um.1
    }

    /// Active area over the pitch cell.
    pub fn fill_factor(&self) -> f64 {
        self.pixel_area_um2() / (self.pixel_pitch_um * self.pixel_pitch_um)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::invalid("array", "n_rows and n_cols must be at least 1"));
        }
        positive("pixel_pitch_um", self.pixel_pitch_um)?;
        positive("pixel_size_um.0", self.pixel_size_um.0)?;
        positive("pixel_size_um.1", self.pixel_size_um.1)?;
        Ok(())
    }
}

/// Bias network shared by all rows (or all columns): one supply current
/// divided over parallel `R_bias`/`L_bias` branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasNetworkSpec {
    pub r_bias_ohm: f64,
    /// Relative half-width of the uniform per-branch resistor spread.
    pub r_bias_tolerance: f64,
    pub r_shunt_ohm: f64,
    pub r_tc_ohm: f64,
    pub l_bias_h: f64,
    pub i_total_rows_ua: f64,
    pub i_total_cols_ua: f64,
    /// Minimum inductive energy needed to switch the bus constriction.
    pub heater_threshold_energy_j: f64,
}

impl Default for BiasNetworkSpec {
    fn default() -> Self {
        Self {
            r_bias_ohm: 130.0,
            r_bias_tolerance: 0.0,
            r_shunt_ohm: 25.0,
            r_tc_ohm: 25.0,
            l_bias_h: 10e-6,
            i_total_rows_ua: 30.0,
            i_total_cols_ua: 30.0,
            heater_threshold_energy_j: 10e-18,
        }
    }
}

impl BiasNetworkSpec {
    pub fn validate(&self) -> Result<()> {
        positive("r_bias_ohm", self.r_bias_ohm)?;
        positive("r_shunt_ohm", self.r_shunt_ohm)?;
        positive("r_tc_ohm", self.r_tc_ohm)?;
        positive("l_bias_h", self.l_bias_h)?;
        check_tolerance(self.r_bias_tolerance)?;
        non_negative("i_total_rows_ua", self.i_total_rows_ua)?;
        non_negative("i_total_cols_ua", self.i_total_cols_ua)?;
        non_negative("heater_threshold_energy_j", self.heater_threshold_energy_j)?;
        Ok(())
    }

    /// `L_bias / R_tc` recovery time constant in nanoseconds.
    pub fn recovery_time_ns(&self) -> f64 {
        self.l_bias_h / self.r_tc_ohm * 1e9
    }
}

/// Superconducting microstrip readout bus with `n_taps` heater constrictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicrostripSpec {
    pub kinetic_inductance_ph_per_sq: f64,
    pub dielectric_thickness_nm: f64,
    pub dielectric_rel_permittivity: f64,
    pub strip_width_um: f64,
    /// Propagation delay between adjacent taps.
    pub segment_delay_ps: f64,
    /// Extra delay from the first/last tap to the (positive, negative) line end.
    pub end_lead_delays_ps: (f64, f64),
    pub n_taps: usize,
    /// Bus bias current; zero disables the bus.
    pub i_bus_ua: f64,
    pub bus_dead_time_ns: f64,
}

impl Default for MicrostripSpec {
    fn default() -> Self {
        Self {
            kinetic_inductance_ph_per_sq: 550.0,
            dielectric_thickness_nm: 50.0,
            dielectric_rel_permittivity: 3.9,
            strip_width_um: 1.0,
            segment_delay_ps: 500.0,
            end_lead_delays_ps: (2000.0, 2000.0),
            n_taps: 8,
            i_bus_ua: 2.8,
            bus_dead_time_ns: 1e9 / 6.5e6,
        }
    }
}

impl MicrostripSpec {
    pub fn validate(&self) -> Result<()> {
        positive("kinetic_inductance_ph_per_sq", self.kinetic_inductance_ph_per_sq)?;
        positive("dielectric_thickness_nm", self.dielectric_thickness_nm)?;
        positive("dielectric_rel_permittivity", self.dielectric_rel_permittivity)?;
        positive("strip_width_um", self.strip_width_um)?;
        positive("segment_delay_ps", self.segment_delay_ps)?;
        non_negative("end_lead_delays_ps.0", self.end_lead_delays_ps.0)?;
        non_negative("end_lead_delays_ps.1", self.end_lead_delays_ps.1)?;
        non_negative("i_bus_ua", self.i_bus_ua)?;
        non_negative("bus_dead_time_ns", self.bus_dead_time_ns)?;
        if self.n_taps == 0 {
            return Err(Error::invalid("n_taps", "must be at least 1"));
        }
        Ok(())
    }

    pub fn is_enabled(&self) -> bool {
        self.i_bus_ua > 0.0
    }
}

/// Per-tap propagation delays to both ends of a bus.
#[derive(Debug, Clone, PartialEq)]
pub struct TapSchedule {
    /// `(delay to positive end, delay to negative end)` for each tap.
    pub delays_ps: Vec<(f64, f64)>,
}

impl TapSchedule {
    pub fn n_taps(&self) -> usize {
        self.delays_ps.len()
    }

    /// `delay_pos - delay_neg` for each tap, increasing with tap index.
    pub fn delta_t_centers_ps(&self) -> Vec<f64> {
        self.delays_ps.iter().map(|(p, n)| p - n).collect()
    }

    /// `delay_pos + delay_neg`; identical for every tap.
    pub fn delay_sum_ps(&self) -> f64 {
        self.delays_ps.first().map(|(p, n)| p + n).unwrap_or(0.0)
    }

    /// Width of the Δt range spanned by the taps.
    pub fn delta_t_span_ps(&self) -> f64 {
        let c = self.delta_t_centers_ps();
        match (c.first(), c.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Largest |delay_pos - delay_neg| over all taps.
    pub fn max_abs_delta_t_ps(&self) -> f64 {
        self.delta_t_centers_ps()
            .into_iter()
            .fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Pulse propagation speed on the microstrip, m/s.
///
/// Per unit length the line has `L = L_k / w` and `C = ε0 ε_r w / d`, so the
/// width cancels: `v = sqrt(d / (L_k ε0 ε_r))`.
pub fn microstrip_velocity(spec: &MicrostripSpec) -> Result<f64> {
    positive("kinetic_inductance_ph_per_sq", spec.kinetic_inductance_ph_per_sq)?;
    positive("dielectric_thickness_nm", spec.dielectric_thickness_nm)?;
    positive("dielectric_rel_permittivity", spec.dielectric_rel_permittivity)?;
    let l_k = spec.kinetic_inductance_ph_per_sq * 1e-12;
    let d = spec.dielectric_thickness_nm * 1e-9;
    Ok((d / (l_k * VACUUM_PERMITTIVITY * spec.dielectric_rel_permittivity)).sqrt())
}

/// Characteristic impedance of the microstrip, ohms.
pub fn microstrip_impedance(spec: &MicrostripSpec) -> Result<f64> {
    positive("strip_width_um", spec.strip_width_um)?;
    positive("kinetic_inductance_ph_per_sq", spec.kinetic_inductance_ph_per_sq)?;
    positive("dielectric_thickness_nm", spec.dielectric_thickness_nm)?;
    positive("dielectric_rel_permittivity", spec.dielectric_rel_permittivity)?;
    let l_k = spec.kinetic_inductance_ph_per_sq * 1e-12;
    let d = spec.dielectric_thickness_nm * 1e-9;
    let w = spec.strip_width_um * 1e-6;
    Ok((l_k * d / (VACUUM_PERMITTIVITY * spec.dielectric_rel_permittivity)).sqrt() / w)
}

/// Impedance transformation ratio the end tapers must provide to reach `load_ohm`.
pub fn taper_ratio(spec: &MicrostripSpec, load_ohm: f64) -> Result<f64> {
    positive("load_ohm", load_ohm)?;
    Ok(microstrip_impedance(spec)? / load_ohm)
}

/// Kinetic inductance of a meandered wire in µH: squares × inductance per square.
pub fn meander_inductance_uh(width_um: f64, length_mm: f64, l_k_ph_per_sq: f64) -> Result<f64> {
    positive("width_um", width_um)?;
    non_negative("length_mm", length_mm)?;
    non_negative("l_k_ph_per_sq", l_k_ph_per_sq)?;
    let squares = length_mm * 1e3 / width_um;
    Ok(squares * l_k_ph_per_sq * 1e-6)
}

/// Draws the relative resistor deviation of each branch, uniform in `±tolerance`.
pub fn draw_resistor_spread<R: Rng + ?Sized>(
    n_parallel: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_parallel == 0 {
        return Err(Error::invalid("n_parallel", "must be at least 1"));
    }
    check_tolerance(tolerance)?;
    if tolerance == 0.0 {
        return Ok(vec![0.0; n_parallel]);
    }
    Ok((0..n_parallel)
        .map(|_| rng.random_range(-tolerance..=tolerance))
        .collect())
}

/// Splits `i_total_ua` over parallel branches of resistance `r_bias (1 + δ_i)`.
///
/// Branch currents are proportional to branch conductance; the last branch
/// takes the remainder so the currents sum to `i_total_ua`.
pub fn divide_bias(i_total_ua: f64, r_bias_ohm: f64, deviations: &[f64]) -> Result<Vec<f64>> {
    positive("r_bias_ohm", r_bias_ohm)?;
    non_negative("i_total_ua", i_total_ua)?;
    if deviations.is_empty() {
        return Err(Error::invalid("n_parallel", "must be at least 1"));
    }
    let n = deviations.len();
    if deviations.iter().all(|&d| d == deviations[0]) {
        return Ok(vec![i_total_ua / n as f64; n]);
    }
    let conductance: Vec<f64> = deviations
        .iter()
        .map(|d| 1.0 / (r_bias_ohm * (1.0 + d)))
        .collect();
    let total: f64 = conductance.iter().sum();
    let mut currents: Vec<f64> = conductance.iter().map(|g| i_total_ua * g / total).collect();
    let head: f64 = currents[..n - 1].iter().sum();
    currents[n - 1] = i_total_ua - head;
    Ok(currents)
}

/// Per-detector bias currents for `n_parallel` branches fed from one supply.
pub fn per_detector_bias<R: Rng + ?Sized>(
    i_total_ua: f64,
    n_parallel: usize,
    r_bias_ohm: f64,
    tolerance: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let deviations = draw_resistor_spread(n_parallel, tolerance, rng)?;
    divide_bias(i_total_ua, r_bias_ohm, &deviations)
}

/// Delays from every tap to both ends of the line.
///
/// Tap `k` sits `k` segments from the positive-end lead and `n-1-k` segments
/// from the negative-end lead, so the delay sum is tap independent and the
/// Δt centers step by `2 · segment_delay`.
pub fn tap_delay_schedule(spec: &MicrostripSpec) -> Result<TapSchedule> {
    if spec.n_taps == 0 {
        return Err(Error::invalid("n_taps", "must be at least 1"));
    }
    let n = spec.n_taps;
    let (lead_pos, lead_neg) = spec.end_lead_delays_ps;
    let seg = spec.segment_delay_ps;
    let delays_ps = (0..n)
        .map(|k| {
            (
                lead_pos + k as f64 * seg,
                lead_neg + (n - 1 - k) as f64 * seg,
            )
        })
        .collect();
    Ok(TapSchedule { delays_ps })
}

/// Smallest segment delay whose Δt spacing still exceeds `separation_ps`.
pub fn min_segment_delay_ps(separation_ps: f64) -> f64 {
    separation_ps / 2.0
}

/// Physical line length of one segment in mm for a given delay and velocity.
pub fn segment_length_mm(segment_delay_ps: f64, velocity_m_per_s: f64) -> f64 {
    segment_delay_ps * 1e-12 * velocity_m_per_s * 1e3
}

/// Energy stored in the bias inductor, `½ L I²`, in joules.
pub fn coupling_energy_j(l_bias_h: f64, i_branch_ua: f64) -> f64 {
    let i = i_branch_ua * 1e-6;
    0.5 * l_bias_h * i * i
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive and finite, got {value}")))
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be non-negative and finite, got {value}")))
    }
}

fn check_tolerance(tolerance: f64) -> Result<()> {
    if (0.0..0.5).contains(&tolerance) {
        Ok(())
    } else {
        Err(Error::invalid("r_bias_tolerance", format!("must lie in [0, 0.5), got {tolerance}")))
    }
}
