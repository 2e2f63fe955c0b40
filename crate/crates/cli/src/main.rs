//! `tci`: simulate, decode and sweep a thermally coupled SNSPD imager.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tci_core::bus::Tag;
use tci_core::decoder::{decode, decode_line};
use tci_core::detector::Plane;
use tci_core::error::{Error, Result};
use tci_core::harness::output::{
    read_histogram_csv, read_image_csv, write_bus_events_csv, write_calibration_csv, write_flux_csv, write_peaks_csv,
    write_sweep_csv,
};
use tci_core::harness::svg::{render_histogram_svg, render_image_svg, write_svg};
use tci_core::harness::{
    adjust_source_rate, log_spaced, run_bias_sweep, run_flux_sweep, run_histogram_experiment, simulate,
    wavelength_tag, write_decode_outputs, write_histogram_outputs, ExperimentConfig, RunPoint, SweptPlane,
};
use tci_core::timetag_io::{read_tags, read_tags_csv, write_tags, write_tags_csv};

#[derive(Parser, Debug)]
#[command(name = "tci", version, about = "Thermally coupled SNSPD imager simulator and decoder")]
struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Tag file format; inferred from the extension when omitted.
    #[arg(long, global = true, value_enum)]
    format: Option<TagFormat>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TagFormat {
    Csv,
    Ttg,
}

impl TagFormat {
    fn resolve(explicit: Option<TagFormat>, path: &Path) -> TagFormat {
        explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TagFormat::Csv,
            _ => TagFormat::Ttg,
        })
    }

    fn extension(self) -> &'static str {
        match self {
            TagFormat::Csv => "csv",
            TagFormat::Ttg => "ttg",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one acquisition and write its time tags.
    Simulate(SimulateArgs),
    /// Decode a tag file into Δt histograms, calibration maps and an image.
    Decode(InputArgs),
    /// Count rate versus bias current of one plane.
    SweepBias(SweepBiasArgs),
    /// Registered versus offered line rate.
    SweepFlux(SweepFluxArgs),
    /// Extract Δt calibration maps and peak tables from a tag file.
    Calibrate(InputArgs),
    /// Render a histogram or image CSV as SVG.
    Render(RenderArgs),
    /// Simulate and decode every configured wavelength.
    Histograms,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Wavelength in µm; the first configured one when omitted.
    #[arg(long)]
    wavelength: Option<f64>,
    /// Time-averaged photon rate in photons/s; auto-adjusted when omitted.
    #[arg(long)]
    photon_rate: Option<f64>,
    /// Overrides `run.duration_s`.
    #[arg(long)]
    duration: Option<f64>,
    /// Total row current in µA; `bias.i_total_rows_ua` when omitted.
    #[arg(long)]
    rows_ua: Option<f64>,
    /// Total column current in µA; `bias.i_total_cols_ua` when omitted.
    #[arg(long)]
    cols_ua: Option<f64>,
    /// Also write the ground-truth bus events.
    #[arg(long)]
    truth: bool,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Tag file (`.ttg` or `.csv`).
    input: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlaneArg {
    Rows,
    Cols,
}

#[derive(Args, Debug)]
struct SweepBiasArgs {
    #[arg(long, value_enum, default_value = "rows")]
    plane: PlaneArg,
    /// Hold the other plane at the reference bias.
    #[arg(long)]
    partner_biased: bool,
    /// Comma-separated plane currents in µA; 0 to 31 in steps of 1 when omitted.
    #[arg(long, value_delimiter = ',')]
    currents: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct SweepFluxArgs {
    /// Comma-separated input rates in counts/s; log-spaced when omitted.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e4)]
    min_rate: f64,
    #[arg(long, default_value_t = 1e8)]
    max_rate: f64,
    #[arg(long, default_value_t = 25)]
    points: usize,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// `histogram_*.csv` or `image_*.csv`.
    input: PathBuf,
    /// Output path; the input with an `.svg` extension when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Linear count axis for histograms.
    #[arg(long)]
    linear: bool,
    #[arg(long)]
    title: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn read_tag_file(path: &Path, format: Option<TagFormat>) -> Result<Vec<Tag>> {
    let mut source = BufReader::new(File::open(path)?);
    match TagFormat::resolve(format, path) {
        TagFormat::Ttg => read_tags(source),
        TagFormat::Csv => {
            let mut text = Vec::new();
            source.read_to_end(&mut text)?;
            read_tags_csv(&text[..])
        }
    }
}

fn file_label(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("tags")
        .to_string()
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(&cli, &config, args),
        Command::Decode(args) => {
            let tags = read_tag_file(&args.input, cli.format)?;
            let decoded = decode(&tags, config.array.n_rows, config.array.n_cols, &config.decoder)?;
            let written = write_decode_outputs(&cli.out_dir, &file_label(&args.input), &decoded, cli.svg)?;
            println!(
                "{} row pairs, {} col pairs, {} imaged events, {} ambiguous",
                decoded.row.pairing.pairs.len(),
                decoded.col.pairing.pairs.len(),
                decoded.image.total(),
                decoded.image.ambiguous
            );
            report(&written);
            Ok(())
        }
        Command::Calibrate(args) => {
            let tags = read_tag_file(&args.input, cli.format)?;
            let label = file_label(&args.input);
            std::fs::create_dir_all(&cli.out_dir)?;
            let mut written = Vec::new();
            let mut maps = Vec::new();
            for (line, n_taps) in [(Plane::Row, config.array.n_rows), (Plane::Col, config.array.n_cols)] {
                let ld = decode_line(&tags, line, n_taps, &config.decoder)?;
                let path = cli.out_dir.join(format!("peaks_{}_{label}.csv", line.name()));
                write_peaks_csv(&ld.peaks, create(&path)?)?;
                written.push(path);
                println!(
                    "{} line: tolerance {:.1} ps, centers {:?} ps",
                    line.name(),
                    ld.map.tolerance_ps,
                    ld.map.centers_ps.iter().map(|c| c.round()).collect::<Vec<_>>()
                );
                maps.push((line, ld.map));
            }
            let path = cli.out_dir.join(format!("calibration_{label}.csv"));
            let refs: Vec<_> = maps.iter().map(|(l, m)| (*l, m)).collect();
            write_calibration_csv(&refs, create(&path)?)?;
            written.push(path);
            report(&written);
            Ok(())
        }
        Command::SweepBias(args) => {
            let plane = match args.plane {
                PlaneArg::Rows => SweptPlane::Rows,
                PlaneArg::Cols => SweptPlane::Cols,
            };
            let currents = args
                .currents
                .clone()
                .unwrap_or_else(|| (0..=31).map(f64::from).collect());
            let records = run_bias_sweep(&config, plane, args.partner_biased, &currents)?;
            std::fs::create_dir_all(&cli.out_dir)?;
            let partner = if args.partner_biased { "biased" } else { "unbiased" };
            let name = format!("sweep_{}_partner_{partner}.csv", plane.line().name());
            let path = cli.out_dir.join(name);
            write_sweep_csv(&records, create(&path)?)?;
            let clamped = records.iter().filter(|r| r.clamped).count();
            if clamped > 0 {
                println!("{clamped} points clamped at zero");
            }
            report(&[path]);
            Ok(())
        }
        Command::SweepFlux(args) => {
            let rates = match &args.rates {
                Some(r) => r.clone(),
                None => log_spaced(args.min_rate, args.max_rate, args.points),
            };
            let points = run_flux_sweep(&config, &rates)?;
            std::fs::create_dir_all(&cli.out_dir)?;
            let path = cli.out_dir.join("flux.csv");
            write_flux_csv(&points, create(&path)?)?;
            report(&[path]);
            Ok(())
        }
        Command::Render(args) => cmd_render(args),
        Command::Config => {
            print!("{}", config.to_toml_string()?);
            Ok(())
        }
        Command::Histograms => {
            let runs = run_histogram_experiment(&config)?;
            report(&write_histogram_outputs(&cli.out_dir, &runs, cli.svg)?);
            Ok(())
        }
    }
}

fn cmd_simulate(cli: &Cli, config: &ExperimentConfig, args: &SimulateArgs) -> Result<()> {
    let wavelength_um = args.wavelength.unwrap_or(config.run.wavelengths_um[0]);
    let photon_rate = match args.photon_rate {
        Some(r) => r,
        None => adjust_source_rate(config, wavelength_um)?,
    };
    let point = RunPoint {
        wavelength_um,
        photon_rate,
        i_rows_ua: args.rows_ua.unwrap_or(config.bias.i_total_rows_ua),
        i_cols_ua: args.cols_ua.unwrap_or(config.bias.i_total_cols_ua),
        duration_s: args.duration.unwrap_or(config.run.duration_s),
        seed: config.run.seed,
    };
    let sim = simulate(config, &point)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let format = cli.format.unwrap_or(TagFormat::Ttg);
    let label = wavelength_tag(wavelength_um);
    let path = cli.out_dir.join(format!("tags_{label}.{}", format.extension()));
    match format {
        TagFormat::Ttg => {
            write_tags(&sim.tags, create(&path)?)?;
        }
        TagFormat::Csv => write_tags_csv(&sim.tags, create(&path)?)?,
    }
    println!(
        "{} tags from {} bus events at {photon_rate:.0} photons/s",
        sim.tags.len(),
        sim.bus_events.len()
    );
    let mut written = vec![path];
    if args.truth {
        let path = cli.out_dir.join(format!("truth_{label}.csv"));
        write_bus_events_csv(&sim.bus_events, &sim.accepted, create(&path)?)?;
        written.push(path);
    }
    report(&written);
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    let text = std::fs::read(&args.input)?;
    let header = text.split(|&b| b == b'\n').next().unwrap_or_default();
    let title = args.title.clone().unwrap_or_else(|| file_label(&args.input));
    let svg = if header.starts_with(b"bin_left_ps") {
        render_histogram_svg(&read_histogram_csv(&text[..])?, !args.linear, &title)?
    } else if header.starts_with(b"row,col") {
        render_image_svg(&read_image_csv(&text[..])?, &title)?
    } else {
        return Err(Error::Data(format!(
            "{}: not a histogram or image CSV",
            args.input.display()
        )));
    };
    let path = args.output.clone().unwrap_or_else(|| args.input.with_extension("svg"));
    write_svg(&path, &svg)?;
    report(&[path]);
    Ok(())
}
