//! Reconstruction from time tags: end pairing, Δt histograms, peak finding,
//! Δt→index calibration, row/column coincidence and pixel images.
//!
//! All matching is greedy and chronological; nothing is dropped silently.
//! Every pair ends up in the image, in an ambiguity counter or in an
//! unmatched counter.

use serde::{Deserialize, Serialize};

use crate::bus::{Channel, Tag, FWHM_PER_SIGMA};
use crate::detector::Plane;
use crate::error::{Error, Result};
use crate::timetag_io::channel_times;

/// One positive-end tag matched with one negative-end tag of the same line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndPair {
    pub line: Plane,
    /// `(t_pos + t_neg) / 2`
    pub t_mid_ps: f64,
    /// `t_pos - t_neg`
    pub delta_t_ps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    /// Sorted by `t_mid_ps`.
    pub pairs: Vec<EndPair>,
    pub unmatched_pos: usize,
    pub unmatched_neg: usize,
}

/// Pairs the two ends of one line.
///
/// Positive tags are visited in time order; each takes the unconsumed
/// negative tag within `max_skew_ps` that is nearest in time. With a
/// `guide` calibration, candidates whose Δt falls inside a calibrated peak
/// are preferred (smallest residual first), which resolves pile-up of two
/// events on one line inside the skew window.
pub fn pair_ends(
    line: Plane,
    pos: &[i64],
    neg: &[i64],
    max_skew_ps: f64,
    guide: Option<&CalibrationMap>,
) -> PairResult {
    let mut consumed = vec![false; neg.len()];
    let mut lo = 0usize;
    let mut pairs = Vec::with_capacity(pos.len().min(neg.len()));
    let mut unmatched_pos = 0;
    for &p in pos {
        let pf = p as f64;
        while lo < neg.len() && (consumed[lo] || (neg[lo] as f64) < pf - max_skew_ps) {
            lo += 1;
        }
        // (outside calibrated peaks, residual, |time distance|)
        let mut best: Option<((bool, f64, f64), usize)> = None;
        let mut j = lo;
        while j < neg.len() && (neg[j] as f64) <= pf + max_skew_ps {
            if !consumed[j] {
                let delta = pf - neg[j] as f64;
                let key = match guide.and_then(|m| m.residual(delta)) {
                    Some(r) => (false, r, delta.abs()),
                    None => (true, 0.0, delta.abs()),
                };
                if best.as_ref().is_none_or(|(k, _)| key_less(&key, k)) {
                    best = Some((key, j));
                }
            }
            j += 1;
        }
        match best {
            Some((_, j)) => {
                consumed[j] = true;
                let n = neg[j] as f64;
                pairs.push(EndPair {
                    line,
                    t_mid_ps: 0.5 * (pf + n),
                    delta_t_ps: pf - n,
                });
            }
            None => unmatched_pos += 1,
        }
    }
    let unmatched_neg = consumed.iter().filter(|&&c| !c).count();
    pairs.sort_by(|a, b| a.t_mid_ps.total_cmp(&b.t_mid_ps));
    PairResult {
        pairs,
        unmatched_pos,
        unmatched_neg,
    }
}

fn key_less(a: &(bool, f64, f64), b: &(bool, f64, f64)) -> bool {
    (a.0, a.1, a.2) < (b.0, b.1, b.2)
}

/// Fixed-width histogram of Δt values.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaHistogram {
    pub bin_width_ps: f64,
    /// Left edge of bin 0.
    pub origin_ps: f64,
    pub counts: Vec<u64>,
}

impl DeltaHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.origin_ps + (i as f64 + 0.5) * self.bin_width_ps
    }

    pub fn bin_of(&self, value: f64) -> i64 {
        ((value - self.origin_ps) / self.bin_width_ps).floor() as i64
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Mean and variance of the binned distribution (bin centers weighted by counts).
    pub fn moments(&self) -> Option<(f64, f64)> {
        let n = self.total() as f64;
        if n == 0.0 {
            return None;
        }
        let mean = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * self.bin_center(i))
            .sum::<f64>()
            / n;
        let var = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * (self.bin_center(i) - mean).powi(2))
            .sum::<f64>()
            / n;
        Some((mean, var))
    }

    /// Adds another histogram with the same binning grid.
    pub fn merge(&mut self, other: &DeltaHistogram) -> Result<()> {
        if other.bin_width_ps != self.bin_width_ps {
            return Err(Error::Data("cannot merge histograms with different bin widths".into()));
        }
        if other.counts.is_empty() {
            return Ok(());
        }
        if self.counts.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        let offset = (other.origin_ps - self.origin_ps) / self.bin_width_ps;
        if (offset - offset.round()).abs() > 1e-9 {
            return Err(Error::Data("cannot merge histograms on different grids".into()));
        }
        let offset = offset.round() as i64;
        let start = offset.min(0);
        let end = (self.counts.len() as i64).max(offset + other.counts.len() as i64);
        let mut counts = vec![0u64; (end - start) as usize];
        for (i, &c) in self.counts.iter().enumerate() {
            counts[(i as i64 - start) as usize] += c;
        }
        for (i, &c) in other.counts.iter().enumerate() {
            counts[(i as i64 + offset - start) as usize] += c;
        }
        self.origin_ps += start as f64 * self.bin_width_ps;
        self.counts = counts;
        Ok(())
    }
}

/// Histograms `values` with bins centered on integer multiples of `bin_width_ps`.
pub fn build_histogram(values: &[f64], bin_width_ps: f64) -> Result<DeltaHistogram> {
    if !(bin_width_ps > 0.0) {
        return Err(Error::invalid("bin_width_ps", "must be positive"));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() {
        return Ok(DeltaHistogram {
            bin_width_ps,
            origin_ps: 0.0,
            counts: Vec::new(),
        });
    }
    let grid = |v: f64| (v / bin_width_ps + 0.5).floor();
    let origin_ps = (grid(lo) - 0.5) * bin_width_ps;
    let n_bins = (grid(hi) - grid(lo)) as usize + 1;
    let mut hist = DeltaHistogram {
        bin_width_ps,
        origin_ps,
        counts: vec![0; n_bins],
    };
    for &v in values {
        let b = hist.bin_of(v).clamp(0, n_bins as i64 - 1) as usize;
        hist.counts[b] += 1;
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub center_ps: f64,
    pub fwhm_ps: f64,
    /// Counts within ±3σ (σ from the FWHM) of the center.
    pub area: u64,
    pub height: u64,
}

/// Finds the `n_expected` tallest local maxima at least `min_separation_ps`
/// apart and measures each one.
///
/// The FWHM comes from linear interpolation of the half-maximum crossing on
/// each flank. The center is the count-weighted centroid over ±1 FWHM,
/// starting at the midpoint of the two crossings and recentred until it
/// settles. Peaks are returned by center.
pub fn find_peaks(hist: &DeltaHistogram, n_expected: usize, min_separation_ps: f64) -> Result<Vec<Peak>> {
    if n_expected == 0 {
        return Err(Error::invalid("n_expected", "must be at least 1"));
    }
    let c = &hist.counts;
    let mut maxima: Vec<usize> = (0..c.len())
        .filter(|&i| {
            let left = if i > 0 { c[i - 1] } else { 0 };
            let right = c.get(i + 1).copied().unwrap_or(0);
            c[i] > 0 && c[i] > left && c[i] >= right
        })
        .collect();
    maxima.sort_by(|&a, &b| c[b].cmp(&c[a]).then(a.cmp(&b)));

    let mut chosen: Vec<usize> = Vec::with_capacity(n_expected);
    for i in maxima {
        let x = hist.bin_center(i);
        if chosen
            .iter()
            .all(|&j| (hist.bin_center(j) - x).abs() >= min_separation_ps)
        {
            chosen.push(i);
            if chosen.len() == n_expected {
                break;
            }
        }
    }
    if chosen.len() < n_expected {
        let mut found: Vec<f64> = chosen.iter().map(|&i| hist.bin_center(i)).collect();
        found.sort_by(f64::total_cmp);
        return Err(Error::PeakDetection {
            expected: n_expected,
            found,
        });
    }
    let mut peaks: Vec<Peak> = chosen.into_iter().map(|i| measure_peak(hist, i)).collect();
    peaks.sort_by(|a, b| a.center_ps.total_cmp(&b.center_ps));
    Ok(peaks)
}

fn measure_peak(hist: &DeltaHistogram, i: usize) -> Peak {
    let c = &hist.counts;
    let bw = hist.bin_width_ps;
    let height = c[i];
    let half = height as f64 / 2.0;

    let mut lo = i;
    while lo > 0 && c[lo - 1] as f64 >= half {
        lo -= 1;
    }
    let mut hi = i;
    while hi + 1 < c.len() && c[hi + 1] as f64 >= half {
        hi += 1;
    }
    let crossing = |inside: usize, outside: Option<usize>, edge: f64| -> f64 {
        match outside {
            Some(o) => {
                let (x_in, x_out) = (hist.bin_center(inside), hist.bin_center(o));
                let (y_in, y_out) = (c[inside] as f64, c[o] as f64);
                x_out + (half - y_out) / (y_in - y_out) * (x_in - x_out)
            }
            None => edge,
        }
    };
    let left = crossing(lo, lo.checked_sub(1), hist.origin_ps);
    let right = crossing(
        hi,
        (hi + 1 < c.len()).then_some(hi + 1),
        hist.origin_ps + c.len() as f64 * bw,
    );
    let fwhm_ps = right - left;
    let center_ps = windowed_centroid(hist, 0.5 * (left + right), fwhm_ps.max(bw));

    let radius = 3.0 * fwhm_ps.max(bw) / FWHM_PER_SIGMA;
    let area = c
        .iter()
        .enumerate()
        .filter(|(k, _)| (hist.bin_center(*k) - center_ps).abs() <= radius)
        .map(|(_, &v)| v)
        .sum();
    Peak {
        center_ps,
        fwhm_ps,
        area,
        height,
    }
}

/// Count-weighted centroid over a window of half-width `half_width`,
/// recentred on its own result; edge bins count by their overlap.
fn windowed_centroid(hist: &DeltaHistogram, start: f64, half_width: f64) -> f64 {
    let bw = hist.bin_width_ps;
    let mut center = start;
    for _ in 0..8 {
        let (a, b) = (center - half_width, center + half_width);
        let first = hist.bin_of(a).max(0) as usize;
        let last = (hist.bin_of(b).max(0) as usize).min(hist.counts.len().saturating_sub(1));
        let (mut sw, mut swx) = (0.0, 0.0);
        for k in first..=last {
            let left = hist.origin_ps + k as f64 * bw;
            let overlap = ((left + bw).min(b) - left.max(a)).max(0.0) / bw;
            let w = overlap * hist.counts[k] as f64;
            sw += w;
            swx += w * hist.bin_center(k);
        }
        if sw == 0.0 {
            break;
        }
        let next = swx / sw;
        let moved = (next - center).abs();
        center = next;
        if moved < 1e-3 {
            break;
        }
    }
    center
}

/// Ordered Δt centers of one line and the radius within which a Δt is
/// assigned to a center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub centers_ps: Vec<f64>,
    pub tolerance_ps: f64,
}

impl CalibrationMap {
    pub fn new(centers_ps: Vec<f64>, tolerance_ps: f64) -> Result<Self> {
        if centers_ps.is_empty() {
            return Err(Error::invalid("centers_ps", "calibration needs at least one center"));
        }
        if centers_ps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("centers_ps", "centers must be strictly increasing"));
        }
        if !(tolerance_ps > 0.0) {
            return Err(Error::invalid("tolerance_ps", "must be positive"));
        }
        Ok(Self {
            centers_ps,
            tolerance_ps,
        })
    }

    pub fn len(&self) -> usize {
        self.centers_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers_ps.is_empty()
    }

    fn nearest(&self, delta_t_ps: f64) -> (usize, f64) {
        let c = &self.centers_ps;
        let k = c.partition_point(|&x| x < delta_t_ps);
        let mut best = (0, f64::INFINITY);
        for idx in [k.wrapping_sub(1), k] {
            if let Some(&x) = c.get(idx) {
                let d = (delta_t_ps - x).abs();
                if d < best.1 {
                    best = (idx, d);
                }
            }
        }
        best
    }

    /// Distance to the nearest center if it is within tolerance.
    pub fn residual(&self, delta_t_ps: f64) -> Option<f64> {
        let (_, d) = self.nearest(delta_t_ps);
        (d <= self.tolerance_ps).then_some(d)
    }
}

/// Learns the Δt→index map of a line from its histogram.
///
/// The tolerance is half the smallest gap between adjacent centers, capped
/// at a 3σ radius of the widest peak.
pub fn calibrate(hist: &DeltaHistogram, n_expected: usize, min_separation_ps: f64) -> Result<CalibrationMap> {
    let peaks = find_peaks(hist, n_expected, min_separation_ps)?;
    calibration_from_peaks(&peaks, hist.bin_width_ps)
}

pub fn calibration_from_peaks(peaks: &[Peak], bin_width_ps: f64) -> Result<CalibrationMap> {
    let centers: Vec<f64> = peaks.iter().map(|p| p.center_ps).collect();
    let max_fwhm = peaks.iter().map(|p| p.fwhm_ps).fold(bin_width_ps, f64::max);
    let three_sigma = 3.0 * max_fwhm / FWHM_PER_SIGMA;
    let half_gap = centers
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]))
        .fold(f64::INFINITY, f64::min);
    CalibrationMap::new(centers, half_gap.min(three_sigma))
}

/// Index of the calibrated center nearest to `delta_t_ps`, or `None` when
/// the value lies outside every tolerance window.
pub fn assign_index(delta_t_ps: f64, map: &CalibrationMap) -> Option<usize> {
    let (idx, d) = map.nearest(delta_t_ps);
    (d <= map.tolerance_ps).then_some(idx)
}

/// A row pair matched with a column pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coincidence {
    pub t_mid_row_ps: f64,
    pub t_mid_col_ps: f64,
    pub row: Option<usize>,
    pub col: Option<usize>,
}

impl Coincidence {
    pub fn pixel(&self) -> Option<(usize, usize)> {
        Some((self.row?, self.col?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    /// In row-pair time order.
    pub coincidences: Vec<Coincidence>,
    pub unmatched_row_pairs: usize,
    pub unmatched_col_pairs: usize,
}

/// Matches row pairs to column pairs by midpoint time.
///
/// Row pairs are visited in time order; each takes the unconsumed column
/// pair whose `t_mid - mid_offset_ps` is nearest, if within `window_ps`.
pub fn correlate(
    row_pairs: &[EndPair],
    col_pairs: &[EndPair],
    row_map: &CalibrationMap,
    col_map: &CalibrationMap,
    window_ps: f64,
    mid_offset_ps: f64,
) -> Result<Correlation> {
    if !(window_ps > 0.0) {
        return Err(Error::invalid("coincidence_window_ps", "must be positive"));
    }
    for (name, pairs) in [("row", row_pairs), ("col", col_pairs)] {
        if pairs.windows(2).any(|w| w[1].t_mid_ps < w[0].t_mid_ps) {
            return Err(Error::Data(format!("{name} pairs are not sorted by t_mid")));
        }
    }
    let col_t: Vec<f64> = col_pairs.iter().map(|p| p.t_mid_ps - mid_offset_ps).collect();
    let mut consumed = vec![false; col_pairs.len()];
    let mut lo = 0usize;
    let mut coincidences = Vec::new();
    let mut unmatched_row_pairs = 0;
    for r in row_pairs {
        while lo < col_t.len() && (consumed[lo] || col_t[lo] < r.t_mid_ps - window_ps) {
            lo += 1;
        }
        let mut best: Option<(f64, usize)> = None;
        let mut j = lo;
        while j < col_t.len() && col_t[j] <= r.t_mid_ps + window_ps {
            if !consumed[j] {
                let d = (col_t[j] - r.t_mid_ps).abs();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
            j += 1;
        }
        match best {
            Some((_, j)) => {
                consumed[j] = true;
                coincidences.push(Coincidence {
                    t_mid_row_ps: r.t_mid_ps,
                    t_mid_col_ps: col_pairs[j].t_mid_ps,
                    row: assign_index(r.delta_t_ps, row_map),
                    col: assign_index(col_pairs[j].delta_t_ps, col_map),
                });
            }
            None => unmatched_row_pairs += 1,
        }
    }
    Ok(Correlation {
        coincidences,
        unmatched_row_pairs,
        unmatched_col_pairs: consumed.iter().filter(|&&c| !c).count(),
    })
}

/// Reconstructed count map.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major.
    pub counts: Vec<u64>,
    pub unmatched_row_pairs: usize,
    pub unmatched_col_pairs: usize,
    /// Coincidences whose row or column Δt fell outside every calibrated peak.
    pub ambiguous: usize,
}

impl PixelImage {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            counts: vec![0; n_rows * n_cols],
            unmatched_row_pairs: 0,
            unmatched_col_pairs: 0,
            ambiguous: 0,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.n_cols + col]
    }

    pub fn increment(&mut self, row: usize, col: usize) {
        self.counts[row * self.n_cols + col] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn from_correlation(corr: &Correlation, n_rows: usize, n_cols: usize) -> Self {
        let mut image = Self::new(n_rows, n_cols);
        for c in &corr.coincidences {
            match c.pixel() {
                Some((r, k)) if r < n_rows && k < n_cols => image.increment(r, k),
                _ => image.ambiguous += 1,
            }
        }
        image.unmatched_row_pairs = corr.unmatched_row_pairs;
        image.unmatched_col_pairs = corr.unmatched_col_pairs;
        image
    }
}

/// Row/column coincidence followed by histogramming into pixels.
pub fn correlate_and_image(
    row_pairs: &[EndPair],
    col_pairs: &[EndPair],
    row_map: &CalibrationMap,
    col_map: &CalibrationMap,
    window_ps: f64,
    mid_offset_ps: f64,
) -> Result<PixelImage> {
    let corr = correlate(row_pairs, col_pairs, row_map, col_map, window_ps, mid_offset_ps)?;
    Ok(PixelImage::from_correlation(&corr, row_map.len(), col_map.len()))
}

/// Median offset between each row pair and its nearest column pair within
/// `search_window_ps`; absorbs unequal lead delays of the two buses.
pub fn estimate_mid_offset(row_pairs: &[EndPair], col_pairs: &[EndPair], search_window_ps: f64) -> Option<f64> {
    let mut diffs = Vec::new();
    let mut k = 0usize;
    for r in row_pairs {
        while k + 1 < col_pairs.len() && col_pairs[k + 1].t_mid_ps <= r.t_mid_ps {
            k += 1;
        }
        let nearest = [k, k + 1]
            .into_iter()
            .filter_map(|j| col_pairs.get(j))
            .map(|c| c.t_mid_ps - r.t_mid_ps)
            .min_by(|a, b| a.abs().total_cmp(&b.abs()));
        if let Some(d) = nearest.filter(|d| d.abs() <= search_window_ps) {
            diffs.push(d);
        }
    }
    if diffs.is_empty() {
        return None;
    }
    diffs.sort_by(f64::total_cmp);
    let m = diffs.len() / 2;
    Some(if diffs.len() % 2 == 1 {
        diffs[m]
    } else {
        0.5 * (diffs[m - 1] + diffs[m])
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageStats {
    pub total: u64,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    /// Population std / mean over pixels; `None` for an empty image.
    pub coefficient_of_variation: Option<f64>,
}

pub fn image_stats(image: &PixelImage) -> ImageStats {
    let mut row_sums = vec![0u64; image.n_rows];
    let mut col_sums = vec![0u64; image.n_cols];
    for r in 0..image.n_rows {
        for c in 0..image.n_cols {
            let v = image.get(r, c);
            row_sums[r] += v;
            col_sums[c] += v;
        }
    }
    let total = image.total();
    let n = image.counts.len() as f64;
    let coefficient_of_variation = (total > 0 && n > 0.0).then(|| {
        let mean = total as f64 / n;
        let var = image.counts.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() / mean
    });
    ImageStats {
        total,
        row_sums,
        col_sums,
        coefficient_of_variation,
    }
}

/// Decoder settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSpec {
    pub bin_width_ps: f64,
    /// Largest |t_pos - t_neg| accepted when pairing ends.
    pub max_skew_ps: f64,
    pub coincidence_window_ps: f64,
    pub min_peak_separation_ps: f64,
    /// Re-pair ends using the first-pass calibration.
    pub guided_pairing: bool,
    /// Search radius for learning the row/column midpoint offset.
    pub mid_offset_search_ps: f64,
}

impl Default for DecoderSpec {
    fn default() -> Self {
        Self {
            bin_width_ps: 10.0,
            max_skew_ps: 10_000.0,
            coincidence_window_ps: 5_000.0,
            min_peak_separation_ps: 400.0,
            guided_pairing: true,
            mid_offset_search_ps: 20_000.0,
        }
    }
}

impl DecoderSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bin_width_ps", self.bin_width_ps),
            ("max_skew_ps", self.max_skew_ps),
            ("coincidence_window_ps", self.coincidence_window_ps),
            ("min_peak_separation_ps", self.min_peak_separation_ps),
            ("mid_offset_search_ps", self.mid_offset_search_ps),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Decoding products for one bus.
#[derive(Debug, Clone, PartialEq)]
pub struct LineDecode {
    pub pairing: PairResult,
    pub histogram: DeltaHistogram,
    pub peaks: Vec<Peak>,
    pub map: CalibrationMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub row: LineDecode,
    pub col: LineDecode,
    pub mid_offset_ps: f64,
    pub correlation: Correlation,
    pub image: PixelImage,
}

impl Decoded {
    pub fn line(&self, line: Plane) -> &LineDecode {
        match line {
            Plane::Row => &self.row,
            Plane::Col => &self.col,
        }
    }
}

/// Pairs, histograms and calibrates one line.
pub fn decode_line(tags: &[Tag], line: Plane, n_taps: usize, spec: &DecoderSpec) -> Result<LineDecode> {
    let pos = channel_times(tags, Channel::pos(line));
    let neg = channel_times(tags, Channel::neg(line));
    let first = pair_ends(line, &pos, &neg, spec.max_skew_ps, None);
    let deltas = |p: &PairResult| p.pairs.iter().map(|e| e.delta_t_ps).collect::<Vec<_>>();
    let hist = build_histogram(&deltas(&first), spec.bin_width_ps)?;
    let peaks = find_peaks(&hist, n_taps, spec.min_peak_separation_ps)?;
    let map = calibration_from_peaks(&peaks, spec.bin_width_ps)?;
    if !spec.guided_pairing {
        return Ok(LineDecode {
            pairing: first,
            histogram: hist,
            peaks,
            map,
        });
    }
    let pairing = pair_ends(line, &pos, &neg, spec.max_skew_ps, Some(&map));
    let histogram = build_histogram(&deltas(&pairing), spec.bin_width_ps)?;
    let peaks = find_peaks(&histogram, n_taps, spec.min_peak_separation_ps)?;
    let map = calibration_from_peaks(&peaks, spec.bin_width_ps)?;
    Ok(LineDecode {
        pairing,
        histogram,
        peaks,
        map,
    })
}

/// Full decode of a four-channel tag stream into a pixel image.
pub fn decode(tags: &[Tag], n_rows: usize, n_cols: usize, spec: &DecoderSpec) -> Result<Decoded> {
    spec.validate()?;
    let row = decode_line(tags, Plane::Row, n_rows, spec)?;
    let col = decode_line(tags, Plane::Col, n_cols, spec)?;
    let mid_offset_ps =
        estimate_mid_offset(&row.pairing.pairs, &col.pairing.pairs, spec.mid_offset_search_ps).unwrap_or(0.0);
    let correlation = correlate(
        &row.pairing.pairs,
        &col.pairing.pairs,
        &row.map,
        &col.map,
        spec.coincidence_window_ps,
        mid_offset_ps,
    )?;
    let image = PixelImage::from_correlation(&correlation, n_rows, n_cols);
    Ok(Decoded {
        row,
        col,
        mid_offset_ps,
        correlation,
        image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_samples(centers: &[f64], sigma: f64, per_peak: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for &c in centers {
            let n = Normal::new(c, sigma).unwrap();
            out.extend((0..per_peak).map(|_| n.sample(&mut rng)));
        }
        out
    }

    fn pair(line: Plane, t: f64, d: f64) -> EndPair {
        EndPair {
            line,
            t_mid_ps: t,
            delta_t_ps: d,
        }
    }

    #[test]
    fn single_pair_geometry() {
        let r = pair_ends(Plane::Row, &[1_000 + 250], &[1_000 - 250], 5_000.0, None);
        assert_eq!(r.pairs, vec![pair(Plane::Row, 1000.0, 500.0)]);
        assert_eq!((r.unmatched_pos, r.unmatched_neg), (0, 0));
    }

    #[test]
    fn pos_without_partner_is_unmatched() {
        let r = pair_ends(Plane::Col, &[0], &[20_000], 5_000.0, None);
        assert!(r.pairs.is_empty());
        assert_eq!((r.unmatched_pos, r.unmatched_neg), (1, 1));
    }

    #[test]
    fn guided_pairing_resolves_pile_up() {
        // event A at t=0 on tap 7 (Δt = +3500), event B at t=1000 on tap 0 (Δt = -3500)
        let pos = [1000 + 0, 3500];
        let neg = [0, 1000 + 3500];
        let naive = pair_ends(Plane::Row, &pos, &neg, 10_000.0, None);
        let naive_d: Vec<f64> = naive.pairs.iter().map(|p| p.delta_t_ps).collect();
        assert_eq!(naive_d, vec![1000.0, -1000.0]);
        let map = CalibrationMap::new(vec![-3500.0, -2500.0, 2500.0, 3500.0], 12.0).unwrap();
        let guided = pair_ends(Plane::Row, &pos, &neg, 10_000.0, Some(&map));
        let mut d: Vec<f64> = guided.pairs.iter().map(|p| p.delta_t_ps).collect();
        d.sort_by(f64::total_cmp);
        assert_eq!(d, vec![-3500.0, 3500.0]);
    }

    #[test]
    fn histogram_basics() {
        let empty = build_histogram(&[], 10.0).unwrap();
        assert_eq!(empty.total(), 0);
        assert!(empty.counts.iter().all(|&c| c == 0));
        let same = build_histogram(&[42.0; 1000], 10.0).unwrap();
        assert_eq!(same.counts, vec![1000]);
        assert_eq!(same.bin_center(0), 40.0);
        assert!(build_histogram(&[1.0], 0.0).is_err());
        let h = build_histogram(&[-3500.0, -3496.0, -3494.0], 10.0).unwrap();
        assert_eq!(h.origin_ps, -3505.0);
        assert_eq!(h.counts, vec![2, 1]);
        assert_eq!(h.bin_of(-3494.0), 1);
    }

    #[test]
    fn histogram_variance_of_gaussian() {
        let v = gaussian_samples(&[0.0], 50.0, 100_000, 1);
        let h = build_histogram(&v, 10.0).unwrap();
        assert_eq!(h.total(), 100_000);
        let (_, var) = h.moments().unwrap();
        assert!((var / 2500.0 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn histogram_merge_sums_counts() {
        let a = build_histogram(&[0.0, 10.0, 10.0], 10.0).unwrap();
        let b = build_histogram(&[-20.0, 10.0], 10.0).unwrap();
        let mut m = a.clone();
        m.merge(&b).unwrap();
        assert_eq!(m.total(), 5);
        let all = build_histogram(&[0.0, 10.0, 10.0, -20.0, 10.0], 10.0).unwrap();
        assert_eq!(m, all);
    }

    #[test]
    fn spike_peak() {
        let h = build_histogram(&[100.0; 50], 10.0).unwrap();
        let p = find_peaks(&h, 1, 500.0).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p[0].fwhm_ps <= 10.0);
        assert_eq!(p[0].center_ps, 100.0);
        assert_eq!(p[0].area, 50);
    }

    #[test]
    fn gaussian_fwhm_matches_row_target() {
        let v = gaussian_samples(&[0.0], 51.8, 10_000, 2);
        let h = build_histogram(&v, 10.0).unwrap();
        let p = find_peaks(&h, 1, 500.0).unwrap();
        assert!((p[0].fwhm_ps / 122.0 - 1.0).abs() < 0.10, "{}", p[0].fwhm_ps);
    }

    #[test]
    fn eight_peaks_recovered() {
        let centers: Vec<f64> = (0..8).map(|k| -3500.0 + 1000.0 * k as f64).collect();
        let v = gaussian_samples(&centers, 52.0, 10_000, 3);
        let h = build_histogram(&v, 10.0).unwrap();
        let p = find_peaks(&h, 8, 400.0).unwrap();
        for (peak, c) in p.iter().zip(&centers) {
            assert!((peak.center_ps - c).abs() <= 5.0, "{} vs {c}", peak.center_ps);
        }
        assert!(p.windows(2).all(|w| w[1].center_ps - w[0].center_ps > 500.0));
    }

    #[test]
    fn too_few_peaks_is_an_error() {
        let v = gaussian_samples(&[0.0, 1000.0], 30.0, 2000, 4);
        let h = build_histogram(&v, 10.0).unwrap();
        match find_peaks(&h, 3, 400.0) {
            Err(Error::PeakDetection { expected, found }) => {
                assert_eq!(expected, 3);
                assert_eq!(found.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn calibration_single_and_rate_independent() {
        let h = build_histogram(&[250.0; 100], 10.0).unwrap();
        let m = calibrate(&h, 1, 400.0).unwrap();
        assert_eq!(m.centers_ps, vec![250.0]);
        assert_eq!(assign_index(250.0, &m), Some(0));

        let centers: Vec<f64> = (0..8).map(|k| -3500.0 + 1000.0 * k as f64).collect();
        let mut skewed = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (k, &c) in centers.iter().enumerate() {
            let n = Normal::new(c, 52.0).unwrap();
            skewed.extend((0..(1000 * (k + 1))).map(|_| n.sample(&mut rng)));
        }
        let uniform = gaussian_samples(&centers, 52.0, 4000, 6);
        let a = calibrate(&build_histogram(&skewed, 10.0).unwrap(), 8, 400.0).unwrap();
        let b = calibrate(&build_histogram(&uniform, 10.0).unwrap(), 8, 400.0).unwrap();
        for ((x, y), c) in a.centers_ps.iter().zip(&b.centers_ps).zip(&centers) {
            assert!((x - c).abs() <= 5.0 && (y - c).abs() <= 5.0, "{x} {y} {c}");
        }
        // 3σ radius of ~122 ps FWHM, below half the 1 ns gap
        assert!(a.tolerance_ps > 120.0 && a.tolerance_ps < 500.0, "{}", a.tolerance_ps);
    }

    #[test]
    fn assignment_rules() {
        let m = CalibrationMap::new(vec![-500.0, 500.0], 200.0).unwrap();
        assert_eq!(assign_index(-500.0, &m), Some(0));
        assert_eq!(assign_index(500.0, &m), Some(1));
        assert_eq!(assign_index(0.0, &m), None);
        assert_eq!(assign_index(690.0, &m), Some(1));
        assert!(CalibrationMap::new(vec![1.0, 1.0], 1.0).is_err());
    }

    fn one_map(n: usize) -> CalibrationMap {
        CalibrationMap::new((0..n).map(|k| 1000.0 * k as f64).collect(), 100.0).unwrap()
    }

    #[test]
    fn single_coincidence_image() {
        let img = correlate_and_image(
            &[pair(Plane::Row, 5000.0, 2000.0)],
            &[pair(Plane::Col, 5000.0, 3000.0)],
            &one_map(8),
            &one_map(8),
            5000.0,
            0.0,
        )
        .unwrap();
        assert_eq!(img.total(), 1);
        assert_eq!(img.get(2, 3), 1);
    }

    #[test]
    fn empty_column_stream() {
        let rows: Vec<EndPair> = (0..5).map(|k| pair(Plane::Row, k as f64 * 1e6, 0.0)).collect();
        let img = correlate_and_image(&rows, &[], &one_map(8), &one_map(8), 5000.0, 0.0).unwrap();
        assert_eq!(img.total(), 0);
        assert_eq!(img.unmatched_row_pairs, 5);
        assert_eq!(img.ambiguous, 0);
    }

    #[test]
    fn mid_offset_is_learned() {
        let rows: Vec<EndPair> = (0..50).map(|k| pair(Plane::Row, k as f64 * 1e6, 0.0)).collect();
        let cols: Vec<EndPair> = (0..50).map(|k| pair(Plane::Col, k as f64 * 1e6 + 1234.0, 0.0)).collect();
        assert_eq!(estimate_mid_offset(&rows, &cols, 20_000.0), Some(1234.0));
        assert_eq!(estimate_mid_offset(&rows, &[], 20_000.0), None);
    }

    #[test]
    fn image_statistics() {
        let mut uniform = PixelImage::new(8, 8);
        uniform.counts.iter_mut().for_each(|c| *c = 7);
        let s = image_stats(&uniform);
        assert_eq!(s.coefficient_of_variation, Some(0.0));
        assert_eq!(s.row_sums, vec![56; 8]);

        let mut hot = PixelImage::new(8, 8);
        hot.counts[10] = 64;
        let cov = image_stats(&hot).coefficient_of_variation.unwrap();
        assert!((cov - 63f64.sqrt()).abs() < 1e-12, "{cov}");

        assert_eq!(image_stats(&PixelImage::new(8, 8)).coefficient_of_variation, None);
    }

    proptest! {
        #[test]
        fn fwhm_tracks_sigma(sigma in 20.0f64..200.0, seed: u64) {
            let v = gaussian_samples(&[0.0], sigma, 100_000, seed);
            let h = build_histogram(&v, 10.0).unwrap();
            let p = find_peaks(&h, 1, 10.0 * sigma).unwrap();
            let truth = FWHM_PER_SIGMA * sigma;
            prop_assert!((p[0].fwhm_ps - truth).abs() <= (0.1 * truth).max(10.0), "{} vs {}", p[0].fwhm_ps, truth);
        }

        #[test]
        fn correlation_conserves_pairs(
            rows in prop::collection::vec((0.0f64..1e6, -4000.0f64..4000.0), 0..200),
            cols in prop::collection::vec((0.0f64..1e6, -4000.0f64..4000.0), 0..200),
            window in 1.0f64..20_000.0,
        ) {
            let mut r: Vec<EndPair> = rows.iter().map(|&(t, d)| pair(Plane::Row, t, d)).collect();
            let mut c: Vec<EndPair> = cols.iter().map(|&(t, d)| pair(Plane::Col, t, d)).collect();
            r.sort_by(|a, b| a.t_mid_ps.total_cmp(&b.t_mid_ps));
            c.sort_by(|a, b| a.t_mid_ps.total_cmp(&b.t_mid_ps));
            let m = CalibrationMap::new((0..8).map(|k| -3500.0 + 1000.0 * k as f64).collect(), 150.0).unwrap();
            let img = correlate_and_image(&r, &c, &m, &m, window, 0.0).unwrap();
            let matched = img.total() as usize + img.ambiguous;
            prop_assert_eq!(r.len(), matched + img.unmatched_row_pairs);
            prop_assert_eq!(c.len(), matched + img.unmatched_col_pairs);
        }

        #[test]
        fn pairing_conserves_tags(
            pos in prop::collection::vec(0i64..1_000_000, 0..200),
            neg in prop::collection::vec(0i64..1_000_000, 0..200),
            skew in 1.0f64..50_000.0,
        ) {
            let mut pos = pos; pos.sort();
            let mut neg = neg; neg.sort();
            let r = pair_ends(Plane::Row, &pos, &neg, skew, None);
            prop_assert_eq!(pos.len(), r.pairs.len() + r.unmatched_pos);
            prop_assert_eq!(neg.len(), r.pairs.len() + r.unmatched_neg);
            prop_assert!(r.pairs.iter().all(|p| p.delta_t_ps.abs() <= skew));
        }
    }
}
