//! Experiment orchestration: configuration, the simulate→decode pipeline,
//! bias and flux sweeps, and CSV/SVG output.

pub mod config;
pub mod experiments;
pub mod output;
pub mod pipeline;
pub mod svg;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, RunSpec};
pub use experiments::{
    log_spaced, run_bias_sweep, run_flux_sweep, run_histogram_experiment, run_histogram_point, FluxPoint,
    HistogramRun, SweepRecord, SweptPlane,
};
pub use pipeline::{adjust_source_rate, simulate, RunPoint, Simulation};

use crate::decoder::Decoded;
use crate::detector::Plane;
use crate::error::Result;

/// File-name fragment for a wavelength, e.g. `3.4um`.
pub fn wavelength_tag(wavelength_um: f64) -> String {
    format!("{wavelength_um}um")
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes both Δt histograms and peak tables, the calibration maps and the
/// image of one decode, with file names suffixed by `label`.
pub fn write_decode_outputs(dir: &Path, label: &str, decoded: &Decoded, with_svg: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for line in [Plane::Row, Plane::Col] {
        let ld = decoded.line(line);
        let name = line.name();
        let path = dir.join(format!("histogram_{name}_{label}.csv"));
        output::write_histogram_csv(&ld.histogram, create(&path)?)?;
        written.push(path);
        let path = dir.join(format!("peaks_{name}_{label}.csv"));
        output::write_peaks_csv(&ld.peaks, create(&path)?)?;
        written.push(path);
        if with_svg {
            let path = dir.join(format!("histogram_{name}_{label}.svg"));
            let title = format!("{name} Δt histogram, {label}");
            svg::write_svg(&path, &svg::render_histogram_svg(&ld.histogram, true, &title)?)?;
            written.push(path);
        }
    }
    let path = dir.join(format!("calibration_{label}.csv"));
    output::write_calibration_csv(
        &[(Plane::Row, &decoded.row.map), (Plane::Col, &decoded.col.map)],
        create(&path)?,
    )?;
    written.push(path);
    let path = dir.join(format!("image_{label}.csv"));
    output::write_image_csv(&decoded.image, create(&path)?)?;
    written.push(path);
    if with_svg {
        let path = dir.join(format!("image_{label}.svg"));
        let title = format!("pixel counts, {label}");
        svg::write_svg(&path, &svg::render_image_svg(&decoded.image, &title)?)?;
        written.push(path);
    }
    Ok(written)
}

/// [`write_decode_outputs`] for every wavelength plus `summary.csv`.
/// Returns the files written, in order.
pub fn write_histogram_outputs(dir: &Path, runs: &[HistogramRun], with_svg: bool) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for run in runs {
        let label = wavelength_tag(run.wavelength_um);
        written.extend(write_decode_outputs(dir, &label, &run.decoded, with_svg)?);
        rows.push((label, &run.decoded));
    }
    std::fs::create_dir_all(dir)?;
    let path = dir.join("summary.csv");
    output::write_summary_csv(&rows, create(&path)?)?;
    written.push(path);
    Ok(written)
}
