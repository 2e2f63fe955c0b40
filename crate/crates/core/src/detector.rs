//! Photon and dark-count generation and the per-pixel detection physics:
//! bias-dependent internal efficiency, co-wound thermal coupling, detector
//! dead time and heater-to-bus triggering.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::array_circuit::{coupling_energy_j, ArrayConfig, BiasNetworkSpec};
use crate::bus::BusEvent;
use crate::error::{Error, Result};
use crate::{PS_PER_NS, PS_PER_S};

/// Which of the two co-wound meanders (and which readout bus) an event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Row,
    Col,
}

impl Plane {
    pub fn partner(self) -> Plane {
        match self {
            Plane::Row => Plane::Col,
            Plane::Col => Plane::Row,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::Row => "row",
            Plane::Col => "col",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    /// Index of the wire of `plane` that runs through this pixel.
    pub fn wire(self, plane: Plane) -> usize {
        match plane {
            Plane::Row => self.row,
            Plane::Col => self.col,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cause {
    Photon,
    Dark,
    ThermalCouple,
}

/// One nanowire click.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    pub time_ps: f64,
    pub pixel: Pixel,
    pub wire: Plane,
    pub cause: Cause,
    /// Physical event id, assigned by [`run_wire_cascade`]. A thermally
    /// coupled click shares the id of the click that caused it.
    pub id: u64,
}

impl DetectionEvent {
    pub fn wire_index(&self) -> usize {
        self.pixel.wire(self.wire)
    }
}

/// Logistic internal detection efficiency at one wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyEntry {
    pub wavelength_um: f64,
    /// Per-detector current at half of `eta_max`.
    pub i50_ua: f64,
    pub width_ua: f64,
    pub eta_max: f64,
}

impl EfficiencyEntry {
    pub fn new(wavelength_um: f64, i50_ua: f64, width_ua: f64, eta_max: f64) -> Self {
        Self {
            wavelength_um,
            i50_ua,
            width_ua,
            eta_max,
        }
    }

    /// `eta_max / (1 + exp(-(i - i50) / width))`, and zero for an unbiased wire.
    pub fn efficiency(&self, i_ua: f64) -> f64 {
        if i_ua <= 0.0 {
            return 0.0;
        }
        self.eta_max / (1.0 + (-(i_ua - self.i50_ua) / self.width_ua).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyModel {
    pub entries: Vec<EfficiencyEntry>,
}

impl Default for EfficiencyModel {
    fn default() -> Self {
        Self {
            entries: vec![
                EfficiencyEntry::new(3.4, 1.9, 0.28, 1.0),
                EfficiencyEntry::new(5.3, 2.7, 0.38, 1.0),
                EfficiencyEntry::new(7.4, 3.6, 0.55, 1.0),
                EfficiencyEntry::new(10.0, 4.2, 0.7, 1.0),
            ],
        }
    }
}

impl EfficiencyModel {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("efficiency model has no entries".into()));
        }
        for e in &self.entries {
            if !(e.eta_max > 0.0 && e.eta_max <= 1.0) {
                return Err(Error::invalid("eta_max", format!("must lie in (0, 1], got {}", e.eta_max)));
            }
            if !(e.width_ua > 0.0) {
                return Err(Error::invalid("width_ua", format!("must be positive, got {}", e.width_ua)));
            }
            if !(e.wavelength_um > 0.0) {
                return Err(Error::invalid("wavelength_um", "must be positive"));
            }
        }
        Ok(())
    }

    /// Entry with the wavelength closest to `wavelength_um`.
    pub fn entry(&self, wavelength_um: f64) -> Result<&EfficiencyEntry> {
        self.entries
            .iter()
            .min_by(|a, b| {
                (a.wavelength_um - wavelength_um)
                    .abs()
                    .total_cmp(&(b.wavelength_um - wavelength_um).abs())
            })
            .ok_or_else(|| Error::Config("efficiency model has no entries".into()))
    }
}

/// Internal detection efficiency of one detector at `i_ua` per-detector bias.
pub fn internal_efficiency(i_ua: f64, wavelength_um: f64, model: &EfficiencyModel) -> Result<f64> {
    Ok(model.entry(wavelength_um)?.efficiency(i_ua))
}

/// Square-wave modulated thermal source, flood illuminating the array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSpec {
    pub wavelength_um: f64,
    /// Time-averaged photon rate reaching the array.
    pub mean_photon_rate_at_array: f64,
    pub modulation_frequency_hz: f64,
    pub duty_cycle: f64,
    /// Unfiltered, unmodulated background from the source assembly.
    pub broadband_leakage_rate: f64,
    /// Wavelength at which leakage photons are detected.
    pub leakage_wavelength_um: f64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self {
            wavelength_um: 3.4,
            mean_photon_rate_at_array: 2e5,
            modulation_frequency_hz: 1e3,
            duty_cycle: 0.5,
            broadband_leakage_rate: 5e3,
            leakage_wavelength_um: 10.0,
        }
    }
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_photon_rate_at_array >= 0.0 && self.broadband_leakage_rate >= 0.0) {
            return Err(Error::invalid("source rate", "rates must be non-negative"));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return Err(Error::invalid("duty_cycle", format!("must lie in (0, 1], got {}", self.duty_cycle)));
        }
        if !(self.modulation_frequency_hz > 0.0) {
            return Err(Error::invalid("modulation_frequency_hz", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonArrival {
    pub time_ps: f64,
    pub wavelength_um: f64,
}

/// Dark-count components per wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DarkSpec {
    /// Stray blackbody photons per wire, detected with the efficiency at
    /// `blackbody_wavelength_um`.
    pub blackbody_background_rate: f64,
    pub blackbody_wavelength_um: f64,
    pub intrinsic_prefactor: f64,
    /// Exponential growth of intrinsic dark counts per µA of detector bias.
    pub intrinsic_exponent: f64,
}

impl Default for DarkSpec {
    fn default() -> Self {
        Self {
            blackbody_background_rate: 100.0,
            blackbody_wavelength_um: 10.0,
            intrinsic_prefactor: 1e-4,
            intrinsic_exponent: 2.5,
        }
    }
}

impl DarkSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.blackbody_background_rate,
            self.intrinsic_prefactor,
            self.intrinsic_exponent,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("dark", "all dark-count parameters must be non-negative"));
        }
        Ok(())
    }

    pub fn zero() -> Self {
        Self {
            blackbody_background_rate: 0.0,
            blackbody_wavelength_um: 10.0,
            intrinsic_prefactor: 0.0,
            intrinsic_exponent: 0.0,
        }
    }
}

/// Detector-level timing and coupling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    /// Time a wire stays insensitive after it fires.
    pub dead_time_ns: f64,
    pub p_couple: f64,
    pub coupling_delay_ps: f64,
    /// Partner bias must exceed this for a coupled click.
    pub couple_trigger_floor_ua: f64,
    /// Probability that an absorbed photon lands on the row meander.
    pub row_wire_fraction: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            dead_time_ns: 100.0,
            p_couple: 1.0,
            coupling_delay_ps: 50.0,
            couple_trigger_floor_ua: 0.0,
            row_wire_fraction: 0.5,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_couple) {
            return Err(Error::invalid("p_couple", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.row_wire_fraction) {
            return Err(Error::invalid("row_wire_fraction", "must lie in [0, 1]"));
        }
        if !(self.dead_time_ns >= 0.0 && self.coupling_delay_ps >= 0.0 && self.couple_trigger_floor_ua >= 0.0) {
            return Err(Error::invalid("detector", "times and trigger floor must be non-negative"));
        }
        Ok(())
    }
}

/// Photon arrival times on the array over `[0, duration_s)`, sorted.
///
/// Signal photons form a Poisson process at `mean / duty` during the on
/// phase of the square-wave modulation and zero otherwise; leakage photons
/// are homogeneous over the whole interval.
pub fn generate_photon_arrivals<R: Rng + ?Sized>(
    source: &SourceSpec,
    duration_s: f64,
    rng: &mut R,
) -> Result<Vec<PhotonArrival>> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration_s", "must be positive"));
    }
    source.validate()?;
    let duration_ps = duration_s * PS_PER_S;
    let period_ps = PS_PER_S / source.modulation_frequency_hz;
    let on_ps = source.duty_cycle * period_ps;

    let mut arrivals = Vec::new();
    if source.mean_photon_rate_at_array > 0.0 {
        let on_rate_per_ps = source.mean_photon_rate_at_array / source.duty_cycle / PS_PER_S;
        let gaps = Exp::new(on_rate_per_ps).expect("positive rate");
        // Walk the concatenated on-phases and map each point back to wall time.
        let full_periods = (duration_ps / period_ps).floor();
        let tail_on = (duration_ps - full_periods * period_ps).min(on_ps);
        let total_on_ps = full_periods * on_ps + tail_on;
        let mut s = gaps.sample(rng);
        while s < total_on_ps {
            let k = (s / on_ps).floor();
            let t = k * period_ps + (s - k * on_ps);
            arrivals.push(PhotonArrival {
                time_ps: t,
                wavelength_um: source.wavelength_um,
            });
            s += gaps.sample(rng);
        }
    }
    if source.broadband_leakage_rate > 0.0 {
        let gaps = Exp::new(source.broadband_leakage_rate / PS_PER_S).expect("positive rate");
        let mut t = gaps.sample(rng);
        let mut leakage = Vec::new();
        while t < duration_ps {
            leakage.push(PhotonArrival {
                time_ps: t,
                wavelength_um: source.leakage_wavelength_um,
            });
            t += gaps.sample(rng);
        }
        arrivals = merge_by_time(arrivals, leakage, |a| a.time_ps);
    }
    Ok(arrivals)
}

/// Converts photon arrivals into wire clicks under flood illumination.
///
/// Each arrival hits a uniformly random pixel and one of its two meanders;
/// it is detected with that wire's internal efficiency. A wire that fired
/// ignores further photons for `detector.dead_time_ns`.
pub fn detect_photons<R: Rng + ?Sized>(
    arrivals: &[PhotonArrival],
    array: &ArrayConfig,
    bias_per_row_ua: &[f64],
    bias_per_col_ua: &[f64],
    eff: &EfficiencyModel,
    detector: &DetectorSpec,
    rng: &mut R,
) -> Result<Vec<DetectionEvent>> {
    check_bias_dims(array, bias_per_row_ua, bias_per_col_ua)?;
    eff.validate()?;
    let dead_ps = detector.dead_time_ns * PS_PER_NS;
    let mut blocked_until = vec![f64::NEG_INFINITY; array.n_rows + array.n_cols];
    // Cache the entry lookup: arrivals come in at most a couple of wavelengths.
    let mut cached: Option<(f64, &EfficiencyEntry)> = None;
    let mut events = Vec::new();
    for a in arrivals {
        let pixel = Pixel {
            row: rng.random_range(0..array.n_rows),
            col: rng.random_range(0..array.n_cols),
        };
        let wire = if rng.random::<f64>() < detector.row_wire_fraction {
            Plane::Row
        } else {
            Plane::Col
        };
        let u: f64 = rng.random();
        let entry = match cached {
            Some((wl, e)) if wl == a.wavelength_um => e,
            _ => {
                let e = eff.entry(a.wavelength_um)?;
                cached = Some((a.wavelength_um, e));
                e
            }
        };
        let (bias, state) = match wire {
            Plane::Row => (bias_per_row_ua[pixel.row], pixel.row),
            Plane::Col => (bias_per_col_ua[pixel.col], array.n_rows + pixel.col),
        };
        if u >= entry.efficiency(bias) || a.time_ps < blocked_until[state] {
            continue;
        }
        blocked_until[state] = a.time_ps + dead_ps;
        events.push(DetectionEvent {
            time_ps: a.time_ps,
            pixel,
            wire,
            cause: Cause::Photon,
            id: 0,
        });
    }
    Ok(events)
}

/// Thermal click induced in the co-wound partner meander.
pub fn thermal_couple<R: Rng + ?Sized>(
    event: &DetectionEvent,
    partner_bias_ua: f64,
    detector: &DetectorSpec,
    rng: &mut R,
) -> Option<DetectionEvent> {
    if partner_bias_ua <= detector.couple_trigger_floor_ua || partner_bias_ua <= 0.0 {
        return None;
    }
    if rng.random::<f64>() >= detector.p_couple {
        return None;
    }
    Some(DetectionEvent {
        time_ps: event.time_ps + detector.coupling_delay_ps,
        pixel: event.pixel,
        wire: event.wire.partner(),
        cause: Cause::ThermalCouple,
        id: event.id,
    })
}

/// Expected dark-count rate of one wire at per-detector bias `i_ua`.
pub fn dark_rate_per_wire(dark: &DarkSpec, i_ua: f64, eff: &EfficiencyModel) -> Result<f64> {
    if i_ua <= 0.0 {
        return Ok(0.0);
    }
    let blackbody = dark.blackbody_background_rate * internal_efficiency(i_ua, dark.blackbody_wavelength_um, eff)?;
    Ok(blackbody + dark.intrinsic_prefactor * (dark.intrinsic_exponent * i_ua).exp())
}

/// Homogeneous Poisson dark clicks on every wire of `plane`.
///
/// `wire_bias_ua[w]` is the per-detector bias of wire `w`; the click lands
/// on a uniformly random one of the `pixels_per_wire` series detectors.
/// Output is sorted by time.
pub fn generate_dark_counts<R: Rng + ?Sized>(
    dark: &DarkSpec,
    plane: Plane,
    wire_bias_ua: &[f64],
    pixels_per_wire: usize,
    eff: &EfficiencyModel,
    duration_s: f64,
    rng: &mut R,
) -> Result<Vec<DetectionEvent>> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration_s", "must be positive"));
    }
    if pixels_per_wire == 0 {
        return Err(Error::invalid("pixels_per_wire", "must be at least 1"));
    }
    dark.validate()?;
    let duration_ps = duration_s * PS_PER_S;
    let mut events = Vec::new();
    for (w, &i) in wire_bias_ua.iter().enumerate() {
        let rate = dark_rate_per_wire(dark, i, eff)?;
        if rate <= 0.0 {
            continue;
        }
        let n: f64 = Poisson::new(rate * duration_s).expect("positive mean").sample(rng);
        for _ in 0..n as u64 {
            let along = rng.random_range(0..pixels_per_wire);
            let pixel = match plane {
                Plane::Row => Pixel { row: w, col: along },
                Plane::Col => Pixel { row: along, col: w },
            };
            events.push(DetectionEvent {
                time_ps: rng.random::<f64>() * duration_ps,
                pixel,
                wire: plane,
                cause: Cause::Dark,
                id: 0,
            });
        }
    }
    events.sort_by(|a, b| a.time_ps.total_cmp(&b.time_ps));
    Ok(events)
}

/// Forwards a click to its bus tap if the inductively stored energy
/// `½ L_bias I²` reaches the heater threshold.
pub fn heater_trigger(event: &DetectionEvent, net: &BiasNetworkSpec, i_branch_ua: f64) -> Option<BusEvent> {
    if i_branch_ua <= 0.0 {
        return None;
    }
    if coupling_energy_j(net.l_bias_h, i_branch_ua) < net.heater_threshold_energy_j {
        return None;
    }
    Some(BusEvent {
        line: event.wire,
        tap: event.wire_index(),
        time_ps: event.time_ps,
        pixel: event.pixel,
        id: event.id,
    })
}

/// Resolves candidate clicks chronologically against per-wire dead time and
/// thermal coupling.
///
/// `candidates` must be time sorted (photon and dark clicks merged). Each
/// accepted click gets a fresh id and may spawn a coupled click on the
/// partner wire, which is itself subject to that wire's dead time.
pub fn run_wire_cascade<R: Rng + ?Sized>(
    candidates: &[DetectionEvent],
    array: &ArrayConfig,
    bias_per_row_ua: &[f64],
    bias_per_col_ua: &[f64],
    detector: &DetectorSpec,
    rng: &mut R,
) -> Result<Vec<DetectionEvent>> {
    check_bias_dims(array, bias_per_row_ua, bias_per_col_ua)?;
    if candidates.windows(2).any(|w| w[1].time_ps < w[0].time_ps) {
        return Err(Error::Data("cascade candidates are not time sorted".into()));
    }
    let dead_ps = detector.dead_time_ns * PS_PER_NS;
    let n_rows = array.n_rows;
    let state_of = |e: &DetectionEvent| match e.wire {
        Plane::Row => e.pixel.row,
        Plane::Col => n_rows + e.pixel.col,
    };
    let bias_of = |plane: Plane, pixel: Pixel| match plane {
        Plane::Row => bias_per_row_ua[pixel.row],
        Plane::Col => bias_per_col_ua[pixel.col],
    };

    let mut blocked_until = vec![f64::NEG_INFINITY; array.n_rows + array.n_cols];
    // Coupled clicks trail their cause by a constant delay, so they are
    // produced in time order and a FIFO is enough.
    let mut pending: VecDeque<DetectionEvent> = VecDeque::new();
    let mut out = Vec::with_capacity(candidates.len() * 2);
    let mut next_id = 0u64;

    let mut fire = |e: DetectionEvent, out: &mut Vec<DetectionEvent>| -> bool {
        let s = state_of(&e);
        if e.time_ps < blocked_until[s] {
            return false;
        }
        blocked_until[s] = e.time_ps + dead_ps;
        out.push(e);
        true
    };

    for cand in candidates {
        while pending.front().is_some_and(|p| p.time_ps <= cand.time_ps) {
            let p = pending.pop_front().expect("non-empty");
            fire(p, &mut out);
        }
        let mut primary = *cand;
        primary.id = next_id;
        if fire(primary, &mut out) {
            next_id += 1;
            let partner_bias = bias_of(primary.wire.partner(), primary.pixel);
            if let Some(c) = thermal_couple(&primary, partner_bias, detector, rng) {
                pending.push_back(c);
            }
        }
    }
    for p in pending {
        fire(p, &mut out);
    }
    Ok(out)
}

fn check_bias_dims(array: &ArrayConfig, rows: &[f64], cols: &[f64]) -> Result<()> {
    if rows.len() != array.n_rows || cols.len() != array.n_cols {
        return Err(Error::Config(format!(
            "bias lists ({} rows, {} cols) do not match a {}x{} array",
            rows.len(),
            cols.len(),
            array.n_rows,
            array.n_cols
        )));
    }
    Ok(())
}

/// Merges two time-sorted vectors; ties keep `a` first.
pub(crate) fn merge_by_time<T, F: Fn(&T) -> f64>(a: Vec<T>, b: Vec<T>, key: F) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut ib = b.into_iter().peekable();
    for x in a {
        while ib.peek().is_some_and(|y| key(y) < key(&x)) {
            out.push(ib.next().expect("peeked"));
        }
        out.push(x);
    }
    out.extend(ib);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn arrivals_at(times: &[f64], wl: f64) -> Vec<PhotonArrival> {
        times
            .iter()
            .map(|&t| PhotonArrival { time_ps: t, wavelength_um: wl })
            .collect()
    }

    #[test]
    fn efficiency_midpoint_and_zero_bias() {
        let model = EfficiencyModel::default();
        assert_eq!(internal_efficiency(0.0, 3.4, &model).unwrap(), 0.0);
        assert!(internal_efficiency(0.0, 3.4, &model).unwrap() < 1e-6);
        let e = model.entry(5.3).unwrap();
        assert_eq!(e.efficiency(e.i50_ua), e.eta_max / 2.0);
        let empty = EfficiencyModel { entries: vec![] };
        assert!(matches!(internal_efficiency(1.0, 3.4, &empty), Err(Error::Config(_))));
    }

    #[test]
    fn default_short_wavelength_has_plateau() {
        let m = EfficiencyModel::default();
        let low = internal_efficiency(23.0 / 8.0, 3.4, &m).unwrap();
        let high = internal_efficiency(31.0 / 8.0, 3.4, &m).unwrap();
        assert!(low / high >= 0.95, "{low} / {high}");
    }

    #[test]
    fn nearest_wavelength_lookup() {
        let m = EfficiencyModel::default();
        assert_eq!(m.entry(3.0).unwrap().wavelength_um, 3.4);
        assert_eq!(m.entry(9.0).unwrap().wavelength_um, 10.0);
        assert_eq!(m.entry(6.4).unwrap().wavelength_um, 7.4);
    }

    #[test]
    fn default_curves_are_ordered_by_wavelength() {
        let m = EfficiencyModel::default();
        // the sub-threshold tails cross below 1.4 µA, where every η < 3%
        for k in 16..=100 {
            let i = k as f64 * 0.1;
            let e: Vec<f64> = [3.4, 5.3, 7.4, 10.0]
                .iter()
                .map(|&wl| internal_efficiency(i, wl, &m).unwrap())
                .collect();
            assert!(e[0] >= e[1] && e[1] >= e[2] && e[2] >= e[3], "i={i}: {e:?}");
        }
    }

    #[test]
    fn no_source_no_arrivals() {
        let src = SourceSpec {
            mean_photon_rate_at_array: 0.0,
            broadband_leakage_rate: 0.0,
            ..Default::default()
        };
        assert!(generate_photon_arrivals(&src, 1.0, &mut rng(1)).unwrap().is_empty());
        assert!(generate_photon_arrivals(&src, 0.0, &mut rng(1)).is_err());
    }

    #[test]
    fn modulated_arrivals_count_and_phase() {
        let src = SourceSpec {
            mean_photon_rate_at_array: 1e5,
            broadband_leakage_rate: 0.0,
            ..Default::default()
        };
        let a = generate_photon_arrivals(&src, 1.0, &mut rng(7)).unwrap();
        let n = a.len() as f64;
        assert!((n - 1e5).abs() <= 3.0 * 1e5f64.sqrt(), "{n}");
        let period = 1e9;
        for p in &a {
            let phase = p.time_ps.rem_euclid(period);
            assert!(phase < 0.5 * period, "arrival in off phase at {}", p.time_ps);
        }
        assert!(a.windows(2).all(|w| w[0].time_ps <= w[1].time_ps));
        // on-phase rate is mean / duty
        let on_time_s = 0.5;
        let on_rate = n / on_time_s;
        assert!((on_rate - 2e5).abs() <= 3.0 * (2e5 * on_time_s).sqrt() / on_time_s);
    }

    #[test]
    fn leakage_fills_off_phase() {
        let src = SourceSpec {
            mean_photon_rate_at_array: 0.0,
            broadband_leakage_rate: 1e4,
            ..Default::default()
        };
        let a = generate_photon_arrivals(&src, 1.0, &mut rng(3)).unwrap();
        let off = a.iter().filter(|p| p.time_ps.rem_euclid(1e9) >= 0.5e9).count() as f64;
        assert!((off - 5e3).abs() < 4.0 * 5e3f64.sqrt(), "{off}");
        assert!(a.iter().all(|p| p.wavelength_um == 10.0));
    }

    #[test]
    fn unbiased_array_detects_nothing() {
        let array = ArrayConfig::default();
        let arrivals = arrivals_at(&(0..1000).map(|k| k as f64 * 1e6).collect::<Vec<_>>(), 3.4);
        let ev = detect_photons(
            &arrivals,
            &array,
            &[0.0; 8],
            &[0.0; 8],
            &EfficiencyModel::default(),
            &DetectorSpec::default(),
            &mut rng(1),
        )
        .unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn saturated_wires_detect_every_photon() {
        let array = ArrayConfig::default();
        let eff = EfficiencyModel {
            entries: vec![EfficiencyEntry::new(3.4, -1e3, 1.0, 1.0)],
        };
        let arrivals = arrivals_at(&(0..5000).map(|k| k as f64 * 1e7).collect::<Vec<_>>(), 3.4);
        let ev = detect_photons(&arrivals, &array, &[1.0; 8], &[1.0; 8], &eff, &DetectorSpec::default(), &mut rng(2))
            .unwrap();
        assert_eq!(ev.len(), 5000);
        assert!(ev.iter().all(|e| e.pixel.row < 8 && e.pixel.col < 8));
    }

    #[test]
    fn rows_only_detection_is_binomial() {
        let array = ArrayConfig::default();
        let eff = EfficiencyModel::default();
        let n = 100_000usize;
        // spacing far above the detector dead time
        let arrivals = arrivals_at(&(0..n).map(|k| k as f64 * 1e7).collect::<Vec<_>>(), 3.4);
        let ev = detect_photons(&arrivals, &array, &[3.75; 8], &[0.0; 8], &eff, &DetectorSpec::default(), &mut rng(5))
            .unwrap();
        let eta = internal_efficiency(3.75, 3.4, &eff).unwrap();
        let p = 0.5 * eta;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((ev.len() as f64 - mean).abs() <= 3.0 * sigma, "{} vs {mean}", ev.len());
        assert!(ev.iter().all(|e| e.wire == Plane::Row));
    }

    #[test]
    fn detector_dead_time_blocks_wire() {
        let array = ArrayConfig {
            n_rows: 1,
            n_cols: 1,
            ..Default::default()
        };
        let eff = EfficiencyModel {
            entries: vec![EfficiencyEntry::new(3.4, -1e3, 1.0, 1.0)],
        };
        let det = DetectorSpec {
            row_wire_fraction: 1.0,
            ..Default::default()
        };
        // 100 ns dead time: the arrival 50 ns later is lost, the one at 150 ns is not
        let arrivals = arrivals_at(&[0.0, 50e3, 150e3], 3.4);
        let ev = detect_photons(&arrivals, &array, &[1.0], &[1.0], &eff, &det, &mut rng(0)).unwrap();
        let times: Vec<f64> = ev.iter().map(|e| e.time_ps).collect();
        assert_eq!(times, vec![0.0, 150e3]);
    }

    #[test]
    fn bias_dimension_mismatch_is_config_error() {
        let err = detect_photons(
            &[],
            &ArrayConfig::default(),
            &[1.0; 7],
            &[1.0; 8],
            &EfficiencyModel::default(),
            &DetectorSpec::default(),
            &mut rng(0),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    fn row_event(t: f64) -> DetectionEvent {
        DetectionEvent {
            time_ps: t,
            pixel: Pixel { row: 2, col: 5 },
            wire: Plane::Row,
            cause: Cause::Photon,
            id: 9,
        }
    }

    #[test]
    fn coupling_needs_partner_bias() {
        let det = DetectorSpec::default();
        assert!(thermal_couple(&row_event(0.0), 0.0, &det, &mut rng(0)).is_none());
        let c = thermal_couple(&row_event(1000.0), 3.75, &det, &mut rng(0)).unwrap();
        assert_eq!(c.wire, Plane::Col);
        assert_eq!(c.pixel, Pixel { row: 2, col: 5 });
        assert_eq!(c.time_ps, 1050.0);
        assert_eq!(c.cause, Cause::ThermalCouple);
        assert_eq!(c.id, 9);
        let floor = DetectorSpec {
            couple_trigger_floor_ua: 4.0,
            ..det
        };
        assert!(thermal_couple(&row_event(0.0), 3.75, &floor, &mut rng(0)).is_none());
    }

    #[test]
    fn half_coupling_probability_is_binomial() {
        let det = DetectorSpec {
            p_couple: 0.5,
            ..Default::default()
        };
        let mut r = rng(11);
        let n = (0..10_000)
            .filter(|&k| thermal_couple(&row_event(k as f64), 3.75, &det, &mut r).is_some())
            .count() as f64;
        assert!((n - 5000.0).abs() <= 150.0, "{n}");
    }

    #[test]
    fn dark_counts_zero_and_blackbody_only() {
        let eff = EfficiencyModel::default();
        let none = generate_dark_counts(&DarkSpec::zero(), Plane::Row, &[3.75; 8], 8, &eff, 1.0, &mut rng(0)).unwrap();
        assert!(none.is_empty());

        let sat = EfficiencyModel {
            entries: vec![EfficiencyEntry::new(10.0, -1e3, 1.0, 1.0)],
        };
        let dark = DarkSpec {
            blackbody_background_rate: 2000.0,
            ..DarkSpec::zero()
        };
        let ev = generate_dark_counts(&dark, Plane::Col, &[3.75; 8], 8, &sat, 2.0, &mut rng(4)).unwrap();
        let mean = 8.0 * 2000.0 * 2.0;
        assert!((ev.len() as f64 - mean).abs() <= 3.0 * mean.sqrt(), "{}", ev.len());
        assert!(ev.iter().all(|e| e.wire == Plane::Col && e.cause == Cause::Dark && e.time_ps < 2e12));
        assert!(ev.windows(2).all(|w| w[0].time_ps <= w[1].time_ps));
    }

    #[test]
    fn heater_threshold_semantics() {
        let net = BiasNetworkSpec::default();
        let ev = row_event(123.0);
        assert!(heater_trigger(&ev, &net, 0.0).is_none());
        let fwd = heater_trigger(&ev, &net, 3.75).unwrap();
        assert_eq!((fwd.line, fwd.tap, fwd.time_ps), (Plane::Row, 2, 123.0));
        let strict = BiasNetworkSpec {
            heater_threshold_energy_j: coupling_energy_j(net.l_bias_h, 3.75) * 1.0001,
            ..net
        };
        assert!(heater_trigger(&ev, &strict, 3.75).is_none());
    }

    #[test]
    fn cascade_doubles_bus_events_when_partner_biased() {
        let array = ArrayConfig::default();
        let net = BiasNetworkSpec::default();
        let det = DetectorSpec {
            dead_time_ns: 0.0,
            ..Default::default()
        };
        let arrivals = generate_photon_arrivals(&SourceSpec::default(), 0.2, &mut rng(21)).unwrap();
        let cands = detect_photons(&arrivals, &array, &[3.75; 8], &[0.0; 8], &EfficiencyModel::default(), &det, &mut rng(22))
            .unwrap();
        let count = |cols: &[f64]| {
            let ev = run_wire_cascade(&cands, &array, &[3.75; 8], cols, &det, &mut rng(23)).unwrap();
            ev.iter()
                .filter(|e| {
                    let i = match e.wire {
                        Plane::Row => 3.75,
                        Plane::Col => cols[e.pixel.col],
                    };
                    heater_trigger(e, &net, i).is_some()
                })
                .count()
        };
        let alone = count(&[0.0; 8]);
        assert!(alone > 1000);
        assert_eq!(count(&[3.75; 8]), 2 * alone);
    }

    #[test]
    fn cascade_respects_partner_dead_time() {
        let array = ArrayConfig {
            n_rows: 1,
            n_cols: 1,
            ..Default::default()
        };
        let det = DetectorSpec::default();
        let mk = |t: f64, wire| DetectionEvent {
            time_ps: t,
            pixel: Pixel { row: 0, col: 0 },
            wire,
            cause: Cause::Photon,
            id: 0,
        };
        // row click couples into the column at 50 ps; the column photon at
        // 20 ns then finds its wire dead.
        let cands = vec![mk(0.0, Plane::Row), mk(20e3, Plane::Col)];
        let out = run_wire_cascade(&cands, &array, &[3.75], &[3.75], &det, &mut rng(0)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].cause, Cause::ThermalCouple);
        assert_eq!(out[0].id, out[1].id);
        let unsorted = vec![mk(5.0, Plane::Row), mk(1.0, Plane::Row)];
        assert!(run_wire_cascade(&unsorted, &array, &[1.0], &[1.0], &det, &mut rng(0)).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_photon_arrivals(&SourceSpec::default(), 0.1, &mut rng(99)).unwrap();
        let b = generate_photon_arrivals(&SourceSpec::default(), 0.1, &mut rng(99)).unwrap();
        assert_eq!(a, b);
        let array = ArrayConfig::default();
        let eff = EfficiencyModel::default();
        let det = DetectorSpec::default();
        let e1 = detect_photons(&a, &array, &[3.75; 8], &[3.75; 8], &eff, &det, &mut rng(5)).unwrap();
        let e2 = detect_photons(&b, &array, &[3.75; 8], &[3.75; 8], &eff, &det, &mut rng(5)).unwrap();
        assert_eq!(e1, e2);
    }

    proptest! {
        #[test]
        fn efficiency_monotone_and_bounded(i50 in 0.1f64..10.0, w in 0.01f64..3.0, eta in 0.01f64..=1.0,
                                           a in 0.0f64..20.0, b in 0.0f64..20.0) {
            let e = EfficiencyEntry::new(3.4, i50, w, eta);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(e.efficiency(lo) <= e.efficiency(hi));
            prop_assert!(e.efficiency(hi) <= eta && e.efficiency(lo) >= 0.0);
        }

        #[test]
        fn dark_rate_monotone(a in 0.0f64..8.0, b in 0.0f64..8.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let eff = EfficiencyModel::default();
            let d = DarkSpec::default();
            prop_assert!(dark_rate_per_wire(&d, lo, &eff).unwrap() <= dark_rate_per_wire(&d, hi, &eff).unwrap());
        }
    }
}
