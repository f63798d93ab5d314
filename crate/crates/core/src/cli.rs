//! `pnce` command line.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when the input data
//! or configuration is rejected.

use std::error::Error;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::channel::{simulate_frame, ChannelRealization, ChannelSpec, SnrSpec};
use crate::derive_seed;
use crate::estimator::gemm::Accumulator;
use crate::estimator::{BackendConfig, BackendKind, FrameEstimator};
use crate::experiments::{run_latency_bench, run_snr_sweep, run_tap_sweep, SweepResult};
use crate::io::results::latency_rows;
use crate::io::{
    emit_plot_script, parse_rows, read_iq, render_rows, write_iq, CsvRow, ExperimentKind, FigureKind, IqFile,
    RunConfig,
};
use crate::metrics::mae;
use crate::pilot::{build_batch_plan, PilotConfig};
use crate::pn::{generate_mseq, LfsrSpec, PnSequence};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pnce", version, about = "PN-sequence correlation channel estimation for massive MIMO")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print one period of an m-sequence, one chip per line.
    GenPn(GenPnArgs),
    /// Simulate one pilot frame; write received samples and the true channel.
    Simulate(SimulateArgs),
    /// Estimate every CIR from an IQ file.
    Estimate(EstimateArgs),
    /// Run an MAE sweep described by a JSON config.
    Sweep(RunArgs),
    /// Time the estimation path for each configuration in a JSON config.
    Bench(RunArgs),
    /// Emit a gnuplot script from a results CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenPnArgs {
    /// Register length k; the sequence has 2^k - 1 chips.
    #[arg(long)]
    pub degree: u32,
    /// Feedback taps, e.g. `--taps 9,5`. Defaults to the built-in polynomial.
    #[arg(long, value_delimiter = ',')]
    pub taps: Option<Vec<u32>>,
    /// Nonzero initial register state.
    #[arg(long, default_value_t = 1)]
    pub state: u32,
    /// Emit JSON instead of one chip per line.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// PN length M.
    #[arg(long, default_value_t = 511)]
    pub m: usize,
    /// CIR length L.
    #[arg(long, default_value_t = 64)]
    pub l: usize,
    /// Cyclic prefix length; defaults to L.
    #[arg(long)]
    pub cp: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub nt: usize,
    #[arg(long, default_value_t = 16)]
    pub nr: usize,
    #[arg(long = "n-batch", default_value_t = 1)]
    pub n_batch: usize,
    /// Nonzero taps per link; defaults to L.
    #[arg(long = "l-nz")]
    pub l_nz: Option<usize>,
    /// SNR in dB; `inf` for a noiseless frame.
    #[arg(long, default_value_t = 30.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output IQ file.
    #[arg(long)]
    pub out: PathBuf,
    /// Output JSON file holding the true channel.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "reference64", value_parser = parse_backend)]
    pub backend: BackendKind,
    /// Chunk length for per-chunk normalization (tensor16); 0 disables it.
    #[arg(long)]
    pub chunk: Option<usize>,
    /// tensor16 accumulator: binary32 or binary16.
    #[arg(long, value_parser = parse_accumulator)]
    pub accumulator: Option<Accumulator>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// True channel JSON; prints the MAE of each frame to standard error.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long, value_parser = parse_figure)]
    pub figure: FigureKind,
    /// Output script; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: crate::estimator::EstimatorError| e.to_string())
}

fn parse_accumulator(s: &str) -> Result<Accumulator, String> {
    match s {
        "binary32" => Ok(Accumulator::Binary32),
        "binary16" => Ok(Accumulator::Binary16),
        _ => Err(format!("unknown accumulator {s:?} (expected binary32 or binary16)")),
    }
}

fn parse_figure(s: &str) -> Result<FigureKind, String> {
    s.parse()
}

type CliResult = Result<(), Box<dyn Error>>;

fn at(path: &Path) -> impl FnOnce(Box<dyn Error>) -> Box<dyn Error> + '_ {
    move |e| format!("{}: {e}", path.display()).into()
}

fn write_out(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> CliResult {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display()).into()),
        None => stdout.write_all(text.as_bytes()).map_err(Into::into),
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let res = match cli.command {
        Command::GenPn(a) => gen_pn(a, stdout),
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a, stdout, stderr),
        Command::Sweep(a) => sweep(a, stdout),
        Command::Bench(a) => bench(a, stdout),
        Command::Plot(a) => plot(a, stdout),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_DATA
        }
    }
}

fn gen_pn(a: GenPnArgs, stdout: &mut dyn Write) -> CliResult {
    let spec = match a.taps {
        Some(t) => LfsrSpec::new(a.degree, &t, a.state)?,
        None => {
            let b = LfsrSpec::builtin(a.degree)?;
            LfsrSpec::new(a.degree, b.taps(), a.state)?
        }
    };
    let seq = generate_mseq(&spec)?;
    let mut text = String::with_capacity(seq.len() * 3);
    if a.json {
        text = serde_json::to_string_pretty(&seq)?;
        text.push('\n');
    } else {
        for c in seq.chips() {
            text.push_str(if *c > 0.0 { "1\n" } else { "-1\n" });
        }
    }
    write_out(None, &text, stdout)
}

fn simulate(a: SimulateArgs) -> CliResult {
    let cfg = PilotConfig::new(a.m, a.l, a.nt, a.n_batch, 1.0)?.with_cp(a.cp.unwrap_or(a.l))?;
    let seq = PnSequence::builtin(a.m)?;
    let chan = ChannelSpec {
        l: a.l,
        l_nz: a.l_nz.unwrap_or(a.l),
        nt: a.nt,
        nr: a.nr,
        seed: derive_seed(a.seed, &[0]),
    };
    let snr = SnrSpec {
        snr_db: a.snr,
        seed: derive_seed(a.seed, &[1]),
    };
    let (h, frames) = simulate_frame(&cfg, &chan, &snr, &seq)?;
    write_iq(&a.out, &IqFile::from_received(&cfg, &frames, a.seed)?)?;
    let json = serde_json::to_string(&h)?;
    fs::write(&a.truth, json).map_err(|e| format!("{}: {e}", a.truth.display()))?;
    info!("wrote {} batches to {}", frames.len(), a.out.display());
    Ok(())
}

fn estimate(a: EstimateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult {
    let file = read_iq(&a.input).map_err(|e| at(&a.input)(e.into()))?;
    let cfg = file.header.pilot_config(1.0);
    let plan = build_batch_plan(&cfg).map_err(|e| at(&a.input)(e.into()))?;
    let seq = PnSequence::builtin(cfg.m).map_err(|e| at(&a.input)(e.into()))?;
    let mut backend = BackendConfig::of(a.backend);
    if let Some(k) = a.chunk {
        backend = backend.with_chunk((k > 0).then_some(k));
    }
    if let Some(acc) = a.accumulator {
        backend = backend.with_accumulator(acc);
    }
    let estimator = FrameEstimator::new(&plan, &seq, backend)?;
    let truth: Option<ChannelRealization> = match &a.truth {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Some(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?)
        }
        None => None,
    };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["frame", "rx", "tx", "lag", "re", "im"])?;
    for (f, frames) in file.to_received()?.iter().enumerate() {
        let (est, stats) = estimator.estimate(frames).map_err(|e| at(&a.input)(e.into()))?;
        if stats.saturated > 0 {
            writeln!(stderr, "warning: frame {f}: {} saturated intermediates", stats.saturated)?;
        }
        if let Some(h) = &truth {
            writeln!(stderr, "frame {f}: mae {}", mae(h, &est)?)?;
        }
        for (r, per_tx) in est.taps.iter().enumerate() {
            for (t, cir) in per_tx.iter().enumerate() {
                for (lag, z) in cir.iter().enumerate() {
                    w.write_record([
                        f.to_string(),
                        r.to_string(),
                        t.to_string(),
                        lag.to_string(),
                        z.re.to_string(),
                        z.im.to_string(),
                    ])?;
                }
            }
        }
    }
    let text = String::from_utf8(w.into_inner()?)?;
    write_out(a.out.as_deref(), &text, stdout)
}

fn load(a: &RunArgs) -> Result<RunConfig, Box<dyn Error>> {
    let mut rc = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        rc.config.seed = s;
    }
    if let Some(o) = &a.out {
        rc.output.csv = Some(o.clone());
    }
    Ok(rc)
}

fn finish(rc: &RunConfig, rows: &[CsvRow], stdout: &mut dyn Write) -> CliResult {
    write_out(rc.output.csv.as_deref(), &render_rows(rows), stdout)?;
    if let Some(p) = &rc.output.plot {
        let script = emit_plot_script(rows, rc.output.figure.unwrap_or(rc.default_figure()))?;
        write_out(Some(p), &script, stdout)?;
    }
    Ok(())
}

fn sweep(a: RunArgs, stdout: &mut dyn Write) -> CliResult {
    let rc = load(&a)?;
    let results: Vec<SweepResult> = match rc.experiment {
        ExperimentKind::SnrSweep => run_snr_sweep(&rc.config)?,
        ExperimentKind::TapSweep => run_tap_sweep(&rc.config)?,
        ExperimentKind::Latency => {
            return Err(format!("{}: latency experiments run under `pnce bench`", a.config.display()).into())
        }
    };
    if let Some(p) = &rc.output.per_iteration_csv {
        let rows: Vec<CsvRow> = results.iter().flat_map(|r| r.per_iteration()).map(|r| CsvRow::from(&r)).collect();
        write_out(Some(p), &render_rows(&rows), stdout)?;
    }
    if let Some(p) = &rc.output.json {
        write_out(Some(p), &serde_json::to_string_pretty(&results)?, stdout)?;
    }
    let rows: Vec<CsvRow> = results.iter().map(CsvRow::from).collect();
    finish(&rc, &rows, stdout)
}

fn bench(a: RunArgs, stdout: &mut dyn Write) -> CliResult {
    let mut rc = load(&a)?;
    if rc.experiment != ExperimentKind::Latency && rc.output.figure.is_none() {
        rc.output.figure = Some(FigureKind::Fig5);
    }
    let report = run_latency_bench(&rc.config)?;
    if let Some(p) = &rc.output.json {
        write_out(Some(p), &serde_json::to_string_pretty(&report)?, stdout)?;
    }
    finish(&rc, &latency_rows(&report), stdout)
}

fn plot(a: PlotArgs, stdout: &mut dyn Write) -> CliResult {
    let text = fs::read_to_string(&a.csv).map_err(|e| format!("{}: {e}", a.csv.display()))?;
    let rows = parse_rows(&text).map_err(|e| at(&a.csv)(e.into()))?;
    let script = emit_plot_script(&rows, a.figure).map_err(|e| at(&a.csv)(e.into()))?;
    write_out(a.out.as_deref(), &script, stdout)
}
