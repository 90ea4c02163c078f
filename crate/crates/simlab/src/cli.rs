//! The `splinenet` command line.
//!
//! Exit status: 0 on success, 2 when a certificate fails, 1 on usage or
//! input errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;
use splinenet::certify::{certify_prod, certify_sq, certify_tilde_b, certify_tilde_d, Certificate};
use splinenet::constructor::build_tilde_d;
use splinenet::estimator::{additive_to_network, fit_additive, fit_pilot, pilot_to_network};
use splinenet::inference::{gof_test_with, pointwise_ci_with, rate_condition_holds, NoiseVariance};
use splinenet::{Dataset, KnotGrid, PilotFit, ReluNetwork, TruncatedPowerBasis};

use crate::config::{Bandwidth, MRule, SimConfig};
use crate::experiments::{
    run_coverage, run_diagnostics, run_null_calibration, run_power_curve, run_rate_experiment,
    ExperimentReport,
};
use crate::io::{read_dataset, report_csv, OutputDir};
use crate::{Result, SimError};

#[derive(Debug, Parser)]
#[command(
    name = "splinenet",
    version,
    about = "B-spline regression compiled into certified ReLU networks"
)]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files and manifest.json.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CertTarget {
    Sq,
    Prod,
    TildeB,
    TildeD,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Spline order.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Interior knot count; defaults to the bandwidth rule for the data.
    #[arg(long = "M")]
    pub knots: Option<usize>,
    /// Network precision; defaults to the rate rule.
    #[arg(long)]
    pub m: Option<usize>,
    /// Smoothness used by the default rules.
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a network and check its error bound on a dense grid.
    Certify {
        #[arg(long, value_enum, default_value_t = CertTarget::TildeD)]
        target: CertTarget,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long = "M", default_value_t = 4)]
        knots: usize,
        #[arg(long, default_value_t = 6)]
        m: usize,
        /// Number of factors for `--target prod`.
        #[arg(long, default_value_t = 2)]
        s: usize,
    },
    /// Least-squares spline fit of a CSV dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        additive: bool,
        /// Also write the fitted network to this file.
        #[arg(long)]
        emit_net: Option<PathBuf>,
    },
    /// Evaluate a saved fit or network.
    Predict {
        #[arg(long, conflicts_with = "load_net")]
        fit: Option<PathBuf>,
        #[arg(long)]
        load_net: Option<PathBuf>,
        /// Point as comma-separated coordinates; repeatable.
        #[arg(long = "x", required = true)]
        x: Vec<String>,
    },
    /// Pointwise confidence intervals from a CSV dataset.
    Ci {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long = "x", required = true)]
        x: Vec<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Known noise standard deviation τ.
        #[arg(long)]
        tau_known: Option<f64>,
    },
    /// Goodness-of-fit test of `f₀ = 0` on a CSV dataset.
    Test {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        tau_known: Option<f64>,
    },
    /// Monte Carlo estimation rates.
    Rates(ExpArgs),
    /// Null distribution of the test statistic.
    NullCalib(ExpArgs),
    /// Rejection rate against scaled alternatives.
    Power(ExpArgs),
    /// Coverage of pointwise intervals.
    Coverage(ExpArgs),
    /// Gram eigenvalue window and norm equivalence.
    Diagnose(ExpArgs),
    /// Write the basis network, or the network of a saved fit, as JSON.
    EmitNet {
        #[arg(long, conflicts_with = "fit")]
        k: Option<usize>,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long = "M", default_value_t = 4)]
        knots: usize,
        #[arg(long, default_value_t = 6)]
        m: usize,
        #[arg(long)]
        fit: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ExpArgs {
    /// Override the replication count.
    #[arg(long)]
    pub reps: Option<usize>,
}

/// Parses `argv` and runs the command, returning the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let shown: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(&cli, shown) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Sink {
    out: Option<OutputDir>,
    format: Format,
}

impl Sink {
    fn new(cli: &Cli, command: &str, args: Vec<String>) -> Result<Self> {
        let out = match &cli.out {
            Some(dir) => Some(OutputDir::create(dir, command, args)?),
            None => None,
        };
        Ok(Sink {
            out,
            format: cli.format,
        })
    }

    fn input(&mut self, path: &Path) {
        if let Some(o) = &mut self.out {
            o.input(path);
        }
    }

    fn seed(&mut self, seed: u64) {
        if let Some(o) = &mut self.out {
            o.seed(seed);
        }
    }

    /// Writes `value` as `<stem>.json|csv` under `--out`, or to stdout.
    fn emit<T: Serialize>(&mut self, stem: &str, value: &T) -> Result<()> {
        let text = match self.format {
            Format::Json => serde_json::to_string_pretty(value)? + "\n",
            Format::Csv => flat_csv(&serde_json::to_value(value)?)?,
        };
        self.put(stem, &text)
    }

    fn put(&mut self, stem: &str, text: &str) -> Result<()> {
        let ext = match self.format {
            Format::Json => "json",
            Format::Csv => "csv",
        };
        match &mut self.out {
            Some(o) => {
                o.write(&format!("{stem}.{ext}"), text)?;
            }
            None => {
                let mut so = std::io::stdout().lock();
                so.write_all(text.as_bytes())
                    .and_then(|_| so.flush())
                    .map_err(|e| SimError::io(Path::new("<stdout>"), e))?;
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if let Some(o) = self.out {
            o.finish()?;
        }
        Ok(())
    }
}

/// One CSV row per object; nested values are embedded as JSON text.
fn flat_csv(value: &Value) -> Result<String> {
    let rows: Vec<&serde_json::Map<String, Value>> = match value {
        Value::Array(items) => items.iter().filter_map(Value::as_object).collect(),
        Value::Object(map) => vec![map],
        _ => return Err(SimError::Config("value has no tabular form".into())),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = rows.first() {
        w.write_record(first.keys())?;
    }
    for row in rows {
        let cells: Vec<String> = row
            .values()
            .map(|v| match v {
                Value::String(s) => s.clone(),
                Value::Null => String::new(),
                other => other.to_string(),
            })
            .collect();
        w.write_record(&cells)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| SimError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

type Predictor = Box<dyn Fn(&[f64]) -> Result<f64>>;

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| SimError::Config(format!("bad coordinate {t:?} in point {s:?}")))
        })
        .collect()
}

fn noise_of(tau: Option<f64>) -> Result<NoiseVariance> {
    match tau {
        None => Ok(NoiseVariance::Estimated),
        Some(t) if t >= 0.0 && t.is_finite() => Ok(NoiseVariance::Known(t * t)),
        Some(t) => Err(SimError::Config(format!(
            "--tau-known must be ≥ 0, got {t}"
        ))),
    }
}

/// Knot count and precision for a data fit, warning when the precision is
/// too coarse for the sample size.
fn resolve_grid(g: &GridArgs, n: usize, d_rule: usize, rule: Bandwidth) -> (usize, usize) {
    let knots = g.knots.unwrap_or_else(|| rule.knots(n, g.beta, d_rule));
    let m =
        g.m.unwrap_or_else(|| MRule::default().precision(n, g.beta, d_rule));
    if !rate_condition_holds(n, 1.0 / knots as f64, d_rule, m) {
        eprintln!(
            "warning: n^(1/2) h^(-d/2) exceeds 4^m (n = {n}, M = {knots}, m = {m}); raise --m"
        );
    }
    (knots, m)
}

fn load_config(cli: &Cli, reps: Option<usize>) -> Result<SimConfig> {
    let mut cfg = match &cli.config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(r) = reps {
        cfg.reps = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pilot_fit(data: &Dataset, g: &GridArgs, rule: Bandwidth) -> Result<(PilotFit, usize)> {
    let (knots, m) = resolve_grid(g, data.n(), data.dim(), rule);
    let grid = KnotGrid::cardinal(knots, g.k)?;
    Ok((fit_pilot(data, &grid, data.dim())?, m))
}

fn execute(cli: &Cli, args: Vec<String>) -> Result<i32> {
    let name = command_name(&cli.command);
    let mut sink = Sink::new(cli, name, args)?;
    let mut status = 0;
    match &cli.command {
        Command::Certify {
            target,
            k,
            d,
            knots,
            m,
            s,
        } => {
            let cert: Certificate = match target {
                CertTarget::Sq => certify_sq(*m)?,
                CertTarget::Prod => certify_prod(*m, *s)?,
                CertTarget::TildeB => certify_tilde_b(&KnotGrid::cardinal(*knots, *k)?, *m)?,
                CertTarget::TildeD => certify_tilde_d(&KnotGrid::cardinal(*knots, *k)?, *d, *m)?,
            };
            if cert.architecture_ok == Some(false) {
                eprintln!("warning: the network exceeds its stated depth or width ceiling");
            }
            if !cert.pass {
                status = 2;
            }
            sink.emit("certificate", &cert)?;
        }
        Command::Fit {
            data,
            grid,
            additive,
            emit_net,
        } => {
            sink.input(data);
            let ds = read_dataset(data)?;
            let rule = Bandwidth::Estimation { c: 1.0 };
            let (text, net) = if *additive {
                let (knots, m) = resolve_grid(grid, ds.n(), 1, rule);
                let basis = TruncatedPowerBasis::cardinal(&vec![(knots, grid.k); ds.dim()])?;
                let fit = fit_additive(&ds, &basis)?;
                let net = match emit_net {
                    Some(_) => Some(additive_to_network(&fit, m)?),
                    None => None,
                };
                (serde_json::to_string_pretty(&fit)?, net)
            } else {
                let (fit, m) = pilot_fit(&ds, grid, rule)?;
                let net = match emit_net {
                    Some(_) => Some(pilot_to_network(&fit, m)?),
                    None => None,
                };
                (fit.to_json()?, net)
            };
            if let (Some(path), Some(net)) = (emit_net, net) {
                std::fs::write(path, net.to_json()?).map_err(|e| SimError::io(path, e))?;
            }
            sink.format = Format::Json;
            sink.put("fit", &(text + "\n"))?;
        }
        Command::Predict { fit, load_net, x } => {
            let points = x
                .iter()
                .map(|s| parse_point(s))
                .collect::<Result<Vec<_>>>()?;
            #[derive(Serialize)]
            struct Prediction {
                x: Vec<f64>,
                value: f64,
            }
            let value: Predictor = match (fit, load_net) {
                (Some(p), None) => {
                    sink.input(p);
                    let text = std::fs::read_to_string(p).map_err(|e| SimError::io(p, e))?;
                    let f = PilotFit::from_json(&text)?;
                    Box::new(move |x| Ok(f.predict(x)?))
                }
                (None, Some(p)) => {
                    sink.input(p);
                    let text = std::fs::read_to_string(p).map_err(|e| SimError::io(p, e))?;
                    let net = ReluNetwork::from_json(&text)?;
                    if net.output_dim() != 1 {
                        return Err(SimError::Config(format!(
                            "network has {} outputs; predict needs a scalar network",
                            net.output_dim()
                        )));
                    }
                    Box::new(move |x| Ok(net.evaluate(x)?[0]))
                }
                _ => return Err(SimError::Config("predict needs --fit or --load-net".into())),
            };
            let out = points
                .into_iter()
                .map(|x| {
                    Ok(Prediction {
                        value: value(&x)?,
                        x,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            sink.emit("predictions", &out)?;
        }
        Command::Ci {
            data,
            grid,
            x,
            alpha,
            tau_known,
        } => {
            sink.input(data);
            let ds = read_dataset(data)?;
            let (fit, m) = pilot_fit(&ds, grid, Bandwidth::Estimation { c: 1.0 })?;
            let net = pilot_to_network(&fit, m)?;
            let noise = noise_of(*tau_known)?;
            let out = x
                .iter()
                .map(|s| {
                    Ok(pointwise_ci_with(
                        &fit,
                        &net,
                        &parse_point(s)?,
                        *alpha,
                        noise,
                    )?)
                })
                .collect::<Result<Vec<_>>>()?;
            sink.emit("intervals", &out)?;
        }
        Command::Test {
            data,
            grid,
            alpha,
            tau_known,
        } => {
            sink.input(data);
            let ds = read_dataset(data)?;
            let (fit, m) = pilot_fit(&ds, grid, Bandwidth::Testing { c: 1.0 })?;
            let net = pilot_to_network(&fit, m)?;
            let result = gof_test_with(&fit, &net, &ds, *alpha, noise_of(*tau_known)?)?;
            sink.emit("test", &result)?;
        }
        Command::Rates(a)
        | Command::NullCalib(a)
        | Command::Power(a)
        | Command::Coverage(a)
        | Command::Diagnose(a) => {
            if let Some(p) = &cli.config {
                sink.input(p);
            }
            let cfg = load_config(cli, a.reps)?;
            sink.seed(cfg.seed);
            let report = match &cli.command {
                Command::Rates(_) => run_rate_experiment(&cfg)?,
                Command::NullCalib(_) => run_null_calibration(&cfg)?,
                Command::Power(_) => run_power_curve(&cfg)?,
                Command::Coverage(_) => run_coverage(&cfg)?,
                _ => run_diagnostics(&cfg)?,
            };
            emit_report(&mut sink, name, &report)?;
        }
        Command::EmitNet {
            k,
            d,
            knots,
            m,
            fit,
        } => {
            let net = match fit {
                Some(p) => {
                    sink.input(p);
                    let text = std::fs::read_to_string(p).map_err(|e| SimError::io(p, e))?;
                    pilot_to_network(&PilotFit::from_json(&text)?, *m)?
                }
                None => build_tilde_d(&KnotGrid::cardinal(*knots, k.unwrap_or(3))?, *d, *m)?.net,
            };
            sink.format = Format::Json;
            sink.put("network", &(net.to_json()? + "\n"))?;
        }
    }
    sink.finish()?;
    Ok(status)
}

fn emit_report(sink: &mut Sink, name: &str, report: &ExperimentReport) -> Result<()> {
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let json = serde_json::to_string_pretty(report)? + "\n";
    let csv = report_csv(report)?;
    match &mut sink.out {
        Some(o) => {
            o.write(&format!("{name}.json"), &json)?;
            o.write(&format!("{name}.csv"), &csv)?;
            Ok(())
        }
        None => match sink.format {
            Format::Json => sink.put(name, &json),
            Format::Csv => sink.put(name, &csv),
        },
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Certify { .. } => "certify",
        Command::Fit { .. } => "fit",
        Command::Predict { .. } => "predict",
        Command::Ci { .. } => "ci",
        Command::Test { .. } => "test",
        Command::Rates(_) => "rates",
        Command::NullCalib(_) => "null-calib",
        Command::Power(_) => "power",
        Command::Coverage(_) => "coverage",
        Command::Diagnose(_) => "diagnose",
        Command::EmitNet { .. } => "emit-net",
    }
}
