//! `access-auction`: parse feeders, build bids, clear the access auction,
//! certify results and run the 141-bus sweeps.
//!
//! Exit codes: 0 success, 1 infeasible auction or failed verification, 2 bad input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use access_auction::auction::{clear, verify_robust, AuctionInstance, AuctionOptions, DsoCost, ResultFile};
use access_auction::dera::{bid_curves, DeraBids, DeraConfig, DeraPortfolio};
use access_auction::net_model::{build_sensitivity, parse_matpower_case, BoundsOn, RadialNetwork, SensitivityOptions};
use access_auction::scenario::{apply_flow_limits, run_scenario, sweep, sweep_csv, ScenarioConfig, SweepParam};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "access-auction", version, about = "Distribution-network access auction for DER aggregators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a MATPOWER case to network JSON and check radiality.
    Parse {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, default_value_t = 0.98)]
        pf: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build bid curves from aggregator configs.
    Bids {
        #[command(flatten)]
        net: NetworkArgs,
        #[arg(long = "dera", required = true, num_args = 1..)]
        deras: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        segments: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clear the auction; writes result JSON plus price, allocation and KKT CSVs beside it.
    Clear {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        limits: LimitArgs,
        #[arg(long)]
        bids: PathBuf,
        /// DSO cost coefficients `a,b` of J(x) = (b/2)x² − a·x.
        #[arg(long, default_value = "-0.096,0.2", allow_hyphen_values = true)]
        dso: String,
        /// JSON with `utility_lo` and `utility_hi` (MW per non-reference bus); zero when absent.
        #[arg(long)]
        utility: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        j_segments: usize,
        /// Monte Carlo profiles for the attached robustness certificate; 0 skips it.
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check a result against the network limits.
    Verify {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        limits: LimitArgs,
        #[arg(long)]
        result: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep one scenario parameter and write surplus per value as CSV.
    Sweep {
        #[command(flatten)]
        net: NetworkArgs,
        /// Scenario JSON; the 141-bus experiment preset when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        param: ParamArg,
        /// Comma-separated values; a default grid when absent.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a whole scenario and write every artifact into a directory.
    Scenario {
        #[command(flatten)]
        net: NetworkArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write the 141-bus experiment scenario as editable JSON.
    Preset {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct NetworkArgs {
    /// Network JSON or MATPOWER `.m` case.
    #[arg(long)]
    network: PathBuf,
    /// Power factor used when reading a MATPOWER case.
    #[arg(long, default_value_t = 0.98)]
    pf: f64,
}

#[derive(Args)]
struct LimitArgs {
    #[arg(long, default_value_t = 0.05)]
    voltage_dev: f64,
    #[arg(long, value_enum, default_value_t = BoundsArg::U)]
    bounds_on: BoundsArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundsArg {
    U,
    V,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    DeraRatio,
    DgLevel,
}

impl From<ParamArg> for SweepParam {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::DeraRatio => SweepParam::DeraRatio,
            ParamArg::DgLevel => SweepParam::DgLevel,
        }
    }
}

impl LimitArgs {
    fn options(&self) -> SensitivityOptions {
        SensitivityOptions {
            voltage_dev: self.voltage_dev,
            bounds_on: match self.bounds_on {
                BoundsArg::U => BoundsOn::U,
                BoundsArg::V => BoundsOn::V,
            },
            require_flow_limits: false,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct UtilityRange {
    utility_lo: Vec<f64>,
    utility_hi: Vec<f64>,
}

/// Failures that map to exit code 1.
#[derive(Debug)]
struct Rejected(String);

impl std::fmt::Display for Rejected {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Rejected {}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_network(args: &NetworkArgs) -> Result<RadialNetwork> {
    let text = read(&args.network)?;
    let net = if args.network.extension().is_some_and(|e| e == "m") {
        parse_matpower_case(&text, args.pf)
    } else {
        RadialNetwork::from_json(&text)
    };
    net.with_context(|| format!("loading network {}", args.network.display()))
}

fn parse_dso(spec: &str) -> Result<DsoCost> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [a, b] = parts.as_slice() else {
        bail!("--dso expects `a,b`, got {spec:?}");
    };
    Ok(DsoCost::new(a.parse()?, b.parse()?)?)
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => load_json(p),
        None => Ok(ScenarioConfig::preset()),
    }
}

/// Sibling of `out` named `<stem>_<suffix>`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "result".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_{suffix}"))
}

fn write_result(out: &Path, file: &ResultFile) -> Result<()> {
    write(out, &serde_json::to_string_pretty(file)?)?;
    write(&sibling(out, "prices.csv"), &file.prices_csv())?;
    write(&sibling(out, "allocations.csv"), &file.allocations_csv())?;
    write(&sibling(out, "kkt.csv"), &file.kkt_csv())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Parse { case, pf, out } => {
            let text = read(&case)?;
            let net = if case.extension().is_some_and(|e| e == "m") {
                parse_matpower_case(&text, pf)
            } else {
                RadialNetwork::from_json(&text)
            }
            .with_context(|| format!("loading {}", case.display()))?;
            write(&out, &net.to_json())?;
            let limited = net.lines().iter().filter(|l| l.flow_limit_mw.is_some()).count();
            println!("buses: {}", net.bus_count());
            println!("lines: {}", net.lines().len());
            println!("radial: yes");
            println!("flow limits: {limited} of {}", net.lines().len());
        }
        Command::Bids { net, deras, segments, out } => {
            let net = load_network(&net)?;
            let mut all = Vec::with_capacity(deras.len());
            for path in &deras {
                let cfg: DeraConfig = load_json(path)?;
                let port = DeraPortfolio::from_config(&cfg).with_context(|| format!("config {}", path.display()))?;
                if let Some(bad) = port.buses().into_iter().find(|&b| b < 2 || b > net.bus_count()) {
                    bail!("{}: bus {bad} is not a non-reference bus of the network", cfg.id);
                }
                let bids = bid_curves(&port, None, segments)?;
                println!(
                    "{}: {} curves, constant {:.6} $",
                    bids.id,
                    bids.curves.len(),
                    bids.surplus_constant
                );
                all.push(bids);
            }
            write(&out, &serde_json::to_string_pretty(&all)?)?;
        }
        Command::Clear {
            net,
            limits,
            bids,
            dso,
            utility,
            j_segments,
            samples,
            seed,
            out,
        } => {
            let net = load_network(&net)?;
            let bundle = build_sensitivity(&net, &limits.options())?;
            let bids: Vec<DeraBids> = load_json(&bids)?;
            let n = bundle.dim();
            let range = match utility {
                Some(p) => load_json(&p)?,
                None => UtilityRange {
                    utility_lo: vec![0.0; n],
                    utility_hi: vec![0.0; n],
                },
            };
            let mut inst = AuctionInstance::new(bundle, bids, range.utility_lo, range.utility_hi, parse_dso(&dso)?)?;
            inst.options = AuctionOptions { j_segments };
            let res = clear(&inst)?;
            let cert = (samples > 0)
                .then(|| verify_robust(&res.allocations, &inst.bundle, &inst.utility_lo, &inst.utility_hi, samples, seed))
                .transpose()?;
            let file = ResultFile::new(&res, &inst, cert);
            write_result(&out, &file)?;
            println!("surplus: {:.6} $", file.surplus);
            println!("pwl gap: {:.3e} $", file.gap_pwl);
            println!("kkt max residual: {:.3e}", res.kkt.max());
        }
        Command::Verify {
            net,
            limits,
            result,
            samples,
            seed,
        } => {
            let net = load_network(&net)?;
            let bundle = build_sensitivity(&net, &limits.options())?;
            let file: ResultFile = load_json(&result)?;
            let cert = verify_robust(&file.allocations(), &bundle, &file.utility_lo, &file.utility_hi, samples, seed)?;
            println!("{}", serde_json::to_string_pretty(&cert)?);
            if !cert.passed() {
                return Err(Rejected(format!(
                    "verification failed: worst margin {:.3e} at row {}, {} of {} samples violate",
                    cert.worst_margin, cert.worst_row, cert.violations, cert.samples
                ))
                .into());
            }
            println!("verified");
        }
        Command::Sweep {
            net,
            config,
            param,
            values,
            out,
        } => {
            let net = load_network(&net)?;
            let cfg = load_scenario(config.as_deref())?;
            let param = SweepParam::from(param);
            let values = match values {
                Some(v) => v
                    .split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad value {s:?}: {e}")))
                    .collect::<Result<Vec<_>>>()?,
                None => param.default_values(),
            };
            let rows = sweep(&net, &cfg, param, &values)?;
            let csv = sweep_csv(&rows);
            write(&out, &csv)?;
            print!("{csv}");
        }
        Command::Scenario {
            net,
            config,
            samples,
            out_dir,
        } => {
            let net = load_network(&net)?;
            let cfg = load_scenario(config.as_deref())?;
            let outcome = run_scenario(&net, &cfg)?;
            let inst = &outcome.instance;
            let cert = verify_robust(
                &outcome.result.allocations,
                &inst.bundle,
                &inst.utility_lo,
                &inst.utility_hi,
                samples,
                cfg.seed,
            )?;
            let passed = cert.passed();
            write(&out_dir.join("network.json"), &apply_flow_limits(&net, &cfg)?.to_json())?;
            write(&out_dir.join("scenario.json"), &serde_json::to_string_pretty(&cfg)?)?;
            write(&out_dir.join("bids.json"), &serde_json::to_string_pretty(&outcome.bids)?)?;
            write_result(&out_dir.join("result.json"), &ResultFile::new(&outcome.result, inst, Some(cert)))?;
            println!("social surplus: {:.6} $", outcome.result.social_surplus);
            for (b, s) in outcome.bids.iter().zip(&outcome.dera_surplus) {
                println!("{}: surplus {s:.6} $", b.id);
            }
            if !passed {
                return Err(Rejected("robustness certificate failed".into()).into());
            }
        }
        Command::Preset { out } => {
            write(&out, &serde_json::to_string_pretty(&ScenarioConfig::preset())?)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let rejected = err.chain().any(|e| {
        e.is::<Rejected>() || matches!(e.downcast_ref::<access_auction::Error>(), Some(access_auction::Error::Infeasible { .. }))
    });
    if rejected {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
