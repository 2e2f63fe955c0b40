//! CSV writers and readers for experiment results. Header cells carry units.

use std::io::{Read, Write};

use crate::bus::BusEvent;
use crate::decoder::{image_stats, CalibrationMap, Decoded, DeltaHistogram, Peak, PixelImage};
use crate::detector::Plane;
use crate::error::{Error, Result};

use super::experiments::{FluxPoint, SweepRecord};

fn writer<W: Write>(dest: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(dest);
    w.write_record(header)?;
    Ok(w)
}

fn finish<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(records: &[SweepRecord], dest: W) -> Result<()> {
    let mut w = writer(
        dest,
        &["wavelength_um", "i_plane_ua", "pcr_cps", "dcr_cps", "pcr_minus_dcr_cps", "clamped"],
    )?;
    for r in records {
        w.write_record([
            r.wavelength_um.to_string(),
            r.i_plane_ua.to_string(),
            r.pcr_cps.to_string(),
            r.dcr_cps.to_string(),
            r.pcr_minus_dcr_cps.to_string(),
            r.clamped.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_flux_csv<W: Write>(points: &[FluxPoint], dest: W) -> Result<()> {
    let mut w = writer(dest, &["input_cps", "offered_cps", "measured_cps", "closed_form_cps"])?;
    for p in points {
        w.write_record([
            p.input_cps.to_string(),
            p.offered_cps.to_string(),
            p.measured_cps.to_string(),
            p.closed_form_cps.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_histogram_csv<W: Write>(hist: &DeltaHistogram, dest: W) -> Result<()> {
    let mut w = writer(dest, &["bin_left_ps", "bin_right_ps", "counts"])?;
    for (i, &c) in hist.counts.iter().enumerate() {
        let left = hist.origin_ps + i as f64 * hist.bin_width_ps;
        w.write_record([
            left.to_string(),
            (left + hist.bin_width_ps).to_string(),
            c.to_string(),
        ])?;
    }
    finish(w)
}

pub fn read_histogram_csv<R: Read>(source: R) -> Result<DeltaHistogram> {
    let mut rdr = csv::Reader::from_reader(source);
    let mut rows: Vec<(f64, f64, u64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Data("histogram row has too few columns".into()));
        let num = |i: usize| -> Result<f64> {
            field(i)?
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("bad number in histogram column {i}")))
        };
        let count = field(2)?
            .trim()
            .parse()
            .map_err(|_| Error::Data("bad count in histogram".into()))?;
        rows.push((num(0)?, num(1)?, count));
    }
    let Some(&(origin_ps, right, _)) = rows.first() else {
        return Err(Error::Data("histogram file has no bins".into()));
    };
    let bin_width_ps = right - origin_ps;
    if !(bin_width_ps > 0.0) {
        return Err(Error::Data("histogram bins must have positive width".into()));
    }
    Ok(DeltaHistogram {
        bin_width_ps,
        origin_ps,
        counts: rows.into_iter().map(|r| r.2).collect(),
    })
}

pub fn write_peaks_csv<W: Write>(peaks: &[Peak], dest: W) -> Result<()> {
    let mut w = writer(dest, &["index", "center_ps", "fwhm_ps", "area_counts", "height_counts"])?;
    for (i, p) in peaks.iter().enumerate() {
        w.write_record([
            i.to_string(),
            p.center_ps.to_string(),
            p.fwhm_ps.to_string(),
            p.area.to_string(),
            p.height.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_calibration_csv<W: Write>(maps: &[(Plane, &CalibrationMap)], dest: W) -> Result<()> {
    let mut w = writer(dest, &["line", "index", "center_ps", "tolerance_ps"])?;
    for (line, map) in maps {
        for (i, c) in map.centers_ps.iter().enumerate() {
            w.write_record([
                line.name().to_string(),
                i.to_string(),
                c.to_string(),
                map.tolerance_ps.to_string(),
            ])?;
        }
    }
    finish(w)
}

pub fn write_image_csv<W: Write>(image: &PixelImage, dest: W) -> Result<()> {
    let mut w = writer(dest, &["row", "col", "counts"])?;
    for r in 0..image.n_rows {
        for c in 0..image.n_cols {
            w.write_record([r.to_string(), c.to_string(), image.get(r, c).to_string()])?;
        }
    }
    finish(w)
}

pub fn read_image_csv<R: Read>(source: R) -> Result<PixelImage> {
    let mut rdr = csv::Reader::from_reader(source);
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<u64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Data(format!("bad or missing value in image column {i}")))
        };
        cells.push((parse(0)? as usize, parse(1)? as usize, parse(2)?));
    }
    if cells.is_empty() {
        return Err(Error::Data("image file has no pixels".into()));
    }
    let n_rows = cells.iter().map(|c| c.0).max().unwrap_or(0) + 1;
    let n_cols = cells.iter().map(|c| c.1).max().unwrap_or(0) + 1;
    let mut image = PixelImage::new(n_rows, n_cols);
    for (r, c, v) in cells {
        image.counts[r * n_cols + c] += v;
    }
    Ok(image)
}

/// One line per decode with the pairing and imaging bookkeeping.
pub fn write_summary_csv<W: Write>(rows: &[(String, &Decoded)], dest: W) -> Result<()> {
    let mut w = writer(
        dest,
        &[
            "run",
            "row_pairs",
            "col_pairs",
            "image_total_counts",
            "ambiguous_counts",
            "unmatched_row_pairs",
            "unmatched_col_pairs",
            "mid_offset_ps",
            "mean_row_fwhm_ps",
            "mean_col_fwhm_ps",
            "image_cov",
        ],
    )?;
    for (label, d) in rows {
        let mean_fwhm = |peaks: &[Peak]| peaks.iter().map(|p| p.fwhm_ps).sum::<f64>() / peaks.len() as f64;
        w.write_record([
            label.clone(),
            d.row.pairing.pairs.len().to_string(),
            d.col.pairing.pairs.len().to_string(),
            d.image.total().to_string(),
            d.image.ambiguous.to_string(),
            d.image.unmatched_row_pairs.to_string(),
            d.image.unmatched_col_pairs.to_string(),
            d.mid_offset_ps.to_string(),
            mean_fwhm(&d.row.peaks).to_string(),
            mean_fwhm(&d.col.peaks).to_string(),
            image_stats(&d.image)
                .coefficient_of_variation
                .map(|v| v.to_string())
                .unwrap_or_default(),
        ])?;
    }
    finish(w)
}

/// Simulator ground truth for every bus event.
pub fn write_bus_events_csv<W: Write>(events: &[BusEvent], accepted: &[bool], dest: W) -> Result<()> {
    let mut w = writer(dest, &["time_ps", "line", "tap", "row", "col", "event_id", "registered"])?;
    for (e, a) in events.iter().zip(accepted) {
        w.write_record([
            e.time_ps.to_string(),
            e.line.name().to_string(),
            e.tap.to_string(),
            e.pixel.row.to_string(),
            e.pixel.col.to_string(),
            e.id.to_string(),
            a.to_string(),
        ])?;
    }
    finish(w)
}
