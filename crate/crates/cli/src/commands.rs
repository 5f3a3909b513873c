use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chainph_core::car::{car_chained, CarParams};
use chainph_core::sim::{diagnostics, Diagnostics};
use chainph_core::verify::{all_passed, run_checks, VerifyOptions};
use chainph_core::{run_closed_loop, TrajectoryRecord, Vector, WChart};

use crate::config::{LoadedConfig, OutputFormat, Overrides, ValidatedRun};
use crate::floats::FloatStyle;
use crate::plot::{LinePlot, Series};
use crate::status::{CliError, ExitStatus};

pub const CSV_HEADER: &str =
    "t,x1,y1,theta,phi,z1,z2,z3,z4,w1,w2,w3,w4,p1,p2,u1,u2,H_d,Hdot_d,c_res";

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const CONFIGURATION_PLOT: &str = "configuration.svg";
pub const PATH_PLOT: &str = "path.svg";
pub const ENERGY_PLOT: &str = "energy.svg";

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub config: PathBuf,
    pub overrides: Overrides,
    pub plots: bool,
    pub floats: FloatStyle,
}

/// Runs the closed loop described by the config and writes the requested
/// artifacts. The returned status mirrors the run status.
pub fn simulate(opts: &SimulateOptions, out: &mut dyn Write) -> Result<ExitStatus, CliError> {
    let loaded = LoadedConfig::load(&opts.config)
        .map_err(|e| CliError::new(ExitStatus::ConfigError, e.to_string()))?;
    let run = loaded
        .validate(&opts.overrides)
        .map_err(|e| CliError::new(ExitStatus::ConfigError, e.to_string()))?;
    let sys = car_chained(run.car)?;
    let rec = run_closed_loop(&sys, &run.controller, &run.sim)?;
    let diag = diagnostics(&rec);

    let dir = &run.output.directory;
    fs::create_dir_all(dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    if run.output.wants(OutputFormat::Csv) {
        let path = dir.join(TRAJECTORY_FILE);
        let mut w = BufWriter::new(File::create(&path)?);
        write_csv(&rec, opts.floats, &mut w)?;
        w.flush()?;
        written.push(path);
    }
    let summary = summary_text(&opts.config, &run, &rec, &diag);
    if run.output.wants(OutputFormat::Summary) {
        let path = dir.join(SUMMARY_FILE);
        fs::write(&path, &summary)?;
        written.push(path);
    }
    if run.output.wants(OutputFormat::Json) {
        let path = dir.join(DIAGNOSTICS_FILE);
        let json = serde_json::to_string_pretty(&diag)
            .map_err(|e| CliError::new(ExitStatus::NumericalFailure, e.to_string()))?;
        fs::write(&path, json + "\n")?;
        written.push(path);
    }
    if opts.plots && run.output.wants(OutputFormat::Svg) {
        for (name, plot) in plots(&rec, &run.car) {
            let path = dir.join(name);
            fs::write(&path, plot.to_svg())?;
            written.push(path);
        }
    }

    write!(out, "{summary}")?;
    for path in &written {
        writeln!(out, "wrote {}", path.display())?;
    }
    let status = ExitStatus::from(rec.status);
    writeln!(out, "status {status}")?;
    Ok(status)
}

pub fn write_csv(
    rec: &TrajectoryRecord,
    style: FloatStyle,
    w: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for s in &rec.samples {
        let row = std::iter::once(s.t)
            .chain(s.q.iter().copied())
            .chain(s.z.iter().copied())
            .chain(s.w.iter().copied())
            .chain(s.p.iter().copied())
            .chain(s.u.iter().copied())
            .chain([s.h_d, s.dissipation_rate, s.constraint_residual]);
        writeln!(w, "{}", style.join(row, ","))?;
    }
    Ok(())
}

fn summary_text(
    config: &Path,
    run: &ValidatedRun,
    rec: &TrajectoryRecord,
    diag: &Diagnostics,
) -> String {
    let mut s = String::new();
    s.push_str(&format!("config                   {}\n", config.display()));
    s.push_str(&format!("dt                       {}\n", run.sim.dt));
    s.push_str(&format!("duration                 {}\n", run.sim.duration));
    s.push_str(&format!(
        "initial q                {:?}\n",
        run.sim.initial_q.as_slice()
    ));
    s.push_str(&format!(
        "gains                    {:?}\n",
        run.controller.gains
    ));
    s.push_str(&format!("k                        {}\n", run.controller.k));
    s.push_str(&format!("{diag}\n"));
    if let Some(message) = &rec.message {
        s.push_str(&format!("message                  {message}\n"));
    }
    s
}

fn plots(rec: &TrajectoryRecord, car: &CarParams) -> Vec<(&'static str, LinePlot)> {
    let column =
        |i: usize| -> Vec<(f64, f64)> { rec.samples.iter().map(|s| (s.t, s.q[i])).collect() };
    let configuration = LinePlot {
        title: "Configuration".into(),
        x_label: "t [s]".into(),
        y_label: "q".into(),
        series: ["x1", "y1", "theta", "phi"]
            .iter()
            .enumerate()
            .map(|(i, name)| Series::new(*name, column(i)))
            .collect(),
        equal_aspect: false,
    };
    let rear: Vec<(f64, f64)> = rec.samples.iter().map(|s| (s.q[0], s.q[1])).collect();
    let front: Vec<(f64, f64)> = rec.samples.iter().map(|s| car.front_wheel(&s.q)).collect();
    let path = LinePlot {
        title: "Wheel paths".into(),
        x_label: "x".into(),
        y_label: "y".into(),
        series: vec![
            Series::new("rear wheel", rear),
            Series::new("front wheel", front),
        ],
        equal_aspect: true,
    };
    let energy = LinePlot {
        title: "Closed-loop energy".into(),
        x_label: "t [s]".into(),
        y_label: "H_d".into(),
        series: vec![Series::new(
            "H_d",
            rec.samples.iter().map(|s| (s.t, s.h_d)).collect(),
        )],
        equal_aspect: false,
    };
    vec![
        (CONFIGURATION_PLOT, configuration),
        (PATH_PLOT, path),
        (ENERGY_PLOT, energy),
    ]
}

/// Prints one line per check and a tally.
pub fn verify(opts: &VerifyOptions, out: &mut dyn Write) -> Result<ExitStatus, CliError> {
    let results = run_checks(opts);
    for r in &results {
        writeln!(out, "{r}")?;
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name)
        .collect();
    writeln!(
        out,
        "{} of {} checks passed (subset {}, seed {})",
        results.len() - failed.len(),
        results.len(),
        opts.subset,
        opts.seed
    )?;
    if all_passed(&results) {
        writeln!(out, "status {}", ExitStatus::Ok)?;
        Ok(ExitStatus::Ok)
    } else {
        writeln!(out, "failed: {}", failed.join(", "))?;
        writeln!(out, "status {}", ExitStatus::VerificationFailed)?;
        Ok(ExitStatus::VerificationFailed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `z -> w`.
    Forward,
    /// `w -> z`.
    Inverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformOptions {
    pub n: usize,
    pub direction: Direction,
    pub values: Vec<f64>,
    pub floats: FloatStyle,
}

pub fn parse_vector(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|item| {
            let item = item.trim();
            item.parse::<f64>().map_err(|_| {
                CliError::new(ExitStatus::ConfigError, format!("`{item}` is not a number"))
            })
        })
        .collect()
}

/// Evaluates the w-chart in either direction and prints the result.
pub fn transform(opts: &TransformOptions, out: &mut dyn Write) -> Result<ExitStatus, CliError> {
    let chart = WChart::new(opts.n)?;
    if opts.values.len() != opts.n {
        return Err(CliError::new(
            ExitStatus::ConfigError,
            format!(
                "expected {} comma-separated values, got {}",
                opts.n,
                opts.values.len()
            ),
        ));
    }
    let x = Vector::from_vec(opts.values.clone());
    let y = match opts.direction {
        Direction::Forward => chart.forward(&x)?,
        Direction::Inverse => chart.inverse(&x)?,
    };
    writeln!(out, "{}", opts.floats.join(y.iter().copied(), ","))?;
    Ok(ExitStatus::Ok)
}
