//! Time-of-flight readout of the row and column buses.
//!
//! A heater-triggered tap launches a positive pulse towards one end of its
//! line and a negative pulse towards the other. Each end is time tagged with
//! independent Gaussian jitter; the whole line is blind for its dead time
//! after an accepted event.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::array_circuit::TapSchedule;
use crate::detector::{Pixel, Plane};
use crate::error::{Error, Result};
use crate::{PS_PER_NS, PS_PER_S};

/// Gaussian FWHM in units of σ, `2 sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Time-tagger input channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Channel {
    RowPos = 0,
    RowNeg = 1,
    ColPos = 2,
    ColNeg = 3,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::RowPos, Channel::RowNeg, Channel::ColPos, Channel::ColNeg];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Channel> {
        Channel::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::RowPos => "row_pos",
            Channel::RowNeg => "row_neg",
            Channel::ColPos => "col_pos",
            Channel::ColNeg => "col_neg",
        }
    }

    pub fn from_name(name: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn pos(line: Plane) -> Channel {
        match line {
            Plane::Row => Channel::RowPos,
            Plane::Col => Channel::ColPos,
        }
    }

    pub fn neg(line: Plane) -> Channel {
        match line {
            Plane::Row => Channel::RowNeg,
            Plane::Col => Channel::ColNeg,
        }
    }

    pub fn line(self) -> Plane {
        match self {
            Channel::RowPos | Channel::RowNeg => Plane::Row,
            Channel::ColPos | Channel::ColNeg => Plane::Col,
        }
    }
}

/// One timestamp, integer picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag {
    pub channel: Channel,
    pub time_ps: i64,
}

/// A heater-triggered event on a bus tap. `pixel` and `id` are simulator
/// ground truth and never reach the tag stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusEvent {
    pub line: Plane,
    pub tap: usize,
    pub time_ps: f64,
    pub pixel: Pixel,
    pub id: u64,
}

/// Value held separately for the row and the column bus.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusPair<T> {
    pub row: T,
    pub col: T,
}

impl<T> BusPair<T> {
    pub fn new(row: T, col: T) -> Self {
        Self { row, col }
    }

    pub fn get(&self, line: Plane) -> &T {
        match line {
            Plane::Row => &self.row,
            Plane::Col => &self.col,
        }
    }

    pub fn get_mut(&mut self, line: Plane) -> &mut T {
        match line {
            Plane::Row => &mut self.row,
            Plane::Col => &mut self.col,
        }
    }
}

/// Per-end timing jitter of each bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterSpec {
    pub sigma_per_end_row_ps: f64,
    pub sigma_per_end_col_ps: f64,
}

impl JitterSpec {
    /// Per-end σ that yields the given FWHM of the end-to-end difference.
    pub fn sigma_for_delta_fwhm(fwhm_ps: f64) -> f64 {
        fwhm_ps / (FWHM_PER_SIGMA * std::f64::consts::SQRT_2)
    }

    pub fn zero() -> Self {
        Self {
            sigma_per_end_row_ps: 0.0,
            sigma_per_end_col_ps: 0.0,
        }
    }

    pub fn sigma(&self, line: Plane) -> f64 {
        match line {
            Plane::Row => self.sigma_per_end_row_ps,
            Plane::Col => self.sigma_per_end_col_ps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_per_end_row_ps >= 0.0 && self.sigma_per_end_col_ps >= 0.0) {
            return Err(Error::invalid("jitter", "σ must be non-negative"));
        }
        Ok(())
    }
}

impl Default for JitterSpec {
    /// Matches differential FWHMs of 122 ps (rows) and 167 ps (columns).
    fn default() -> Self {
        Self {
            sigma_per_end_row_ps: Self::sigma_for_delta_fwhm(122.0),
            sigma_per_end_col_ps: Self::sigma_for_delta_fwhm(167.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeadTimeModel {
    /// Events during the dead interval are lost and do not extend it.
    #[default]
    NonParalyzable,
    /// Every arrival, accepted or not, restarts the dead interval.
    Paralyzable,
}

/// Dead-time state of one bus line.
#[derive(Debug, Clone, PartialEq)]
pub struct BusLineState {
    pub blocked_until_ps: f64,
    pub dead_time_ns: f64,
    pub model: DeadTimeModel,
}

impl BusLineState {
    pub fn new(dead_time_ns: f64, model: DeadTimeModel) -> Self {
        Self {
            blocked_until_ps: f64::NEG_INFINITY,
            dead_time_ns,
            model,
        }
    }

    /// Presents an arrival at `t_ps` (non-decreasing); returns whether it registers.
    pub fn offer(&mut self, t_ps: f64) -> bool {
        let dead_ps = self.dead_time_ns * PS_PER_NS;
        if t_ps < self.blocked_until_ps {
            if self.model == DeadTimeModel::Paralyzable {
                self.blocked_until_ps = t_ps + dead_ps;
            }
            return false;
        }
        self.blocked_until_ps = t_ps + dead_ps;
        true
    }
}

/// Tags produced by [`emit_tags`] plus which input events survived.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    /// Sorted by time, ties by channel code.
    pub tags: Vec<Tag>,
    pub accepted: Vec<bool>,
}

impl Emission {
    pub fn n_accepted(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }
}

/// Turns bus events into end tags.
///
/// Every surviving event yields one tag on each end of its line at
/// `t + delay + N(0, σ)`, rounded half-to-even to whole picoseconds and
/// floored at zero. An event arriving while its line is dead loses both tags.
pub fn emit_tags<R: Rng + ?Sized>(
    events: &[BusEvent],
    schedules: &BusPair<TapSchedule>,
    jitter: &JitterSpec,
    dead_time_ns: &BusPair<f64>,
    model: DeadTimeModel,
    rng: &mut R,
) -> Result<Emission> {
    jitter.validate()?;
    if events.windows(2).any(|w| w[1].time_ps < w[0].time_ps) {
        return Err(Error::Data("bus events are not time sorted".into()));
    }
    let mut state = BusPair::new(
        BusLineState::new(dead_time_ns.row, model),
        BusLineState::new(dead_time_ns.col, model),
    );
    let noise = BusPair::new(
        Normal::new(0.0, jitter.sigma_per_end_row_ps).expect("finite σ"),
        Normal::new(0.0, jitter.sigma_per_end_col_ps).expect("finite σ"),
    );
    let mut tags = Vec::with_capacity(events.len() * 2);
    let mut accepted = Vec::with_capacity(events.len());
    for ev in events {
        let sched = schedules.get(ev.line);
        let &(d_pos, d_neg) = sched.delays_ps.get(ev.tap).ok_or_else(|| {
            Error::Data(format!(
                "tap index {} out of range for {} bus with {} taps",
                ev.tap,
                ev.line.name(),
                sched.n_taps()
            ))
        })?;
        if !state.get_mut(ev.line).offer(ev.time_ps) {
            accepted.push(false);
            continue;
        }
        accepted.push(true);
        let n = noise.get(ev.line);
        let t_pos = ev.time_ps + d_pos + n.sample(rng);
        let t_neg = ev.time_ps + d_neg + n.sample(rng);
        tags.push(Tag {
            channel: Channel::pos(ev.line),
            time_ps: quantize_ps(t_pos),
        });
        tags.push(Tag {
            channel: Channel::neg(ev.line),
            time_ps: quantize_ps(t_neg),
        });
    }
    tags.sort_by_key(|t| (t.time_ps, t.channel));
    Ok(Emission { tags, accepted })
}

fn quantize_ps(t: f64) -> i64 {
    t.round_ties_even().max(0.0) as i64
}

/// Expected registered rate for a true input rate under a dead-time model.
pub fn throughput_response(input_rate: f64, dead_time_ns: f64, model: DeadTimeModel) -> f64 {
    let x = input_rate * dead_time_ns * 1e-9;
    match model {
        DeadTimeModel::NonParalyzable => input_rate / (1.0 + x),
        DeadTimeModel::Paralyzable => input_rate * (-x).exp(),
    }
}

/// Dead time (ns) at which `target_3db_rate` is registered at half rate.
pub fn calibrate_dead_time(target_3db_rate: f64, model: DeadTimeModel) -> Result<f64> {
    if !(target_3db_rate > 0.0) {
        return Err(Error::invalid("target_3db_rate", "must be positive"));
    }
    let seconds = match model {
        DeadTimeModel::NonParalyzable => 1.0 / target_3db_rate,
        DeadTimeModel::Paralyzable => std::f64::consts::LN_2 / target_3db_rate,
    };
    Ok(seconds * 1e9)
}

/// Inverts [`throughput_response`]: the input rate that registers as `measured_rate`.
///
/// Returns `None` when the measured rate is unreachable (at or above `1/τ`
/// for non-paralyzable, above the `1/(eτ)` peak for paralyzable). The
/// paralyzable branch returns the low-rate solution.
pub fn invert_throughput(measured_rate: f64, dead_time_ns: f64, model: DeadTimeModel) -> Option<f64> {
    let tau = dead_time_ns * 1e-9;
    if measured_rate <= 0.0 || tau == 0.0 {
        return Some(measured_rate.max(0.0));
    }
    match model {
        DeadTimeModel::NonParalyzable => {
            let denom = 1.0 - measured_rate * tau;
            (denom > 0.0).then(|| measured_rate / denom)
        }
        DeadTimeModel::Paralyzable => {
            if measured_rate * tau > (-1.0f64).exp() {
                return None;
            }
            // fixed point r = m exp(r τ), contracting on the low branch
            let mut r = measured_rate;
            for _ in 0..200 {
                let next = measured_rate * (r * tau).exp();
                if (next - r).abs() <= 1e-13 * next {
                    return Some(next);
                }
                r = next;
            }
            Some(r)
        }
    }
}

/// Counts of a streamed Poisson line simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineCounts {
    pub offered: u64,
    pub registered: u64,
}

/// Streams a Poisson arrival process at `input_rate` through one line's
/// dead time without materialising tags.
pub fn simulate_line_throughput<R: Rng + ?Sized>(
    input_rate: f64,
    duration_s: f64,
    dead_time_ns: f64,
    model: DeadTimeModel,
    rng: &mut R,
) -> Result<LineCounts> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration_s", "must be positive"));
    }
    if !(input_rate >= 0.0) {
        return Err(Error::invalid("input_rate", "must be non-negative"));
    }
    let mut counts = LineCounts {
        offered: 0,
        registered: 0,
    };
    if input_rate == 0.0 {
        return Ok(counts);
    }
    let horizon = duration_s * PS_PER_S;
    let gaps = Exp::new(input_rate / PS_PER_S).expect("positive rate");
    let mut line = BusLineState::new(dead_time_ns, model);
    let mut t = gaps.sample(rng);
    while t < horizon {
        counts.offered += 1;
        if line.offer(t) {
            counts.registered += 1;
        }
        t += gaps.sample(rng);
    }
    Ok(counts)
}
