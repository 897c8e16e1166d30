use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qdfarm::extract::{analyze_map, PipelineConfig};
use qdfarm::io::{self, TruthRecord};
use qdfarm::layout::{centroid, place_default_farm, place_farm, uniformity, FarmLayout};
use qdfarm::mux::{scan_time, seconds_to_ns, ScanPlan};
use qdfarm::report::{compare, run_pipeline, FarmReport, PARAMETER_TOLERANCES};
use qdfarm::rfchain::{bandwidth_fwhm, fit_t_min, ResonatorModel};
use qdfarm::sim::{synth_cells, FarmSpec, Normal, Readout};
use qdfarm::stats::{describe, hmc_fit, loo_score, HmcConfig, RegressionModel};

/// Command-line misuse (exit code 1) as opposed to bad data (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "qdfarm", version, about = "Quantum-dot farm simulation and analysis")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesise a labelled farm of charge-stability maps.
    Simulate(SimulateArgs),
    /// Run the extraction pipeline over a map file or directory.
    Analyze(AnalyzeArgs),
    /// Print the class of each map.
    Classify(ClassifyArgs),
    /// Bayesian regression of first-electron voltage on threshold voltage.
    FitCorrelation(FitArgs),
    /// Resonator and readout figures of merit.
    #[command(subcommand)]
    Rf(RfCommand),
    /// Time budget of a multiplexed farm scan.
    Scan(ScanArgs),
    /// Common-centroid placement of instance sets.
    Place(PlaceArgs),
    /// Summarise an analysis, optionally against ground truth.
    Report(ReportArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Classify(a) => classify(a),
        Command::FitCorrelation(a) => fit_correlation(a),
        Command::Rf(c) => rf(c),
        Command::Scan(a) => scan(a),
        Command::Place(a) => place(a),
        Command::Report(a) => report(a),
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FarmKind {
    Default,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReadoutArg {
    Rf,
    Dc,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "default")]
    farm: FarmKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Placement seed; defaults to `--seed`.
    #[arg(long)]
    layout_seed: Option<u64>,
    /// Output directory: `maps/`, `truth.csv` and `layout.csv`.
    #[arg(long, default_value = "farm")]
    out: PathBuf,
    /// Only the first N cells in row-major order.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    noise_free: bool,
    #[arg(long, value_enum, default_value = "rf")]
    readout: ReadoutArg,
    /// Per-sample noise for one average.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    drift: Option<f64>,
    #[arg(long)]
    averages: Option<u32>,
    /// Good,Bad,Multi relative frequencies applied to every set.
    #[arg(long, value_parser = parse_triple)]
    mix: Option<[f64; 3]>,
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected three comma-separated numbers".to_string())
}

fn parse_normal(s: &str) -> std::result::Result<Normal, String> {
    let (m, sd) = s.split_once(',').ok_or("expected MEAN,STD")?;
    let mean = m.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let std = sd.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok(Normal::new(mean, std))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let FarmKind::Default = a.farm;
    let mut farm = FarmSpec::default_farm();
    if a.noise_free {
        farm = farm.noise_free();
    }
    if let Some(n) = a.noise {
        farm.noise_sigma = n;
    }
    if let Some(d) = a.drift {
        farm.drift_amplitude = d;
    }
    if let Some(n) = a.averages {
        farm.n_averages = n;
    }
    if let Some(m) = a.mix {
        farm = farm.with_class_mix(m);
    }
    farm.readout = match a.readout {
        ReadoutArg::Rf => Readout::Rf,
        ReadoutArg::Dc => Readout::Dc,
    };
    let layout = place_default_farm(a.layout_seed.unwrap_or(a.seed));
    let limit = a.limit.unwrap_or(usize::MAX);
    let devices = synth_cells(&farm, &layout, a.seed, |i| i < limit)?;

    let maps = a.out.join("maps");
    fs::create_dir_all(&maps).with_context(|| format!("creating {}", maps.display()))?;
    for d in &devices {
        io::save_map(&d.map, maps.join(format!("{}.{}", d.device_id, io::CSM_EXTENSION)))?;
    }
    let truth: Vec<TruthRecord> = devices.iter().map(TruthRecord::of).collect();
    io::write_truth(a.out.join("truth.csv"), &truth)?;
    io::write_layout(a.out.join("layout.csv"), &layout)?;
    println!("wrote {} maps to {}", devices.len(), maps.display());
    Ok(())
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    canny_sigma: Option<f64>,
    #[arg(long)]
    clahe_clip: Option<f64>,
    /// Minimum zero-bias peak prominence as a fraction of the maximum.
    #[arg(long)]
    peak_prominence: Option<f64>,
    #[arg(long)]
    no_drift_removal: bool,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        if let Some(s) = self.canny_sigma {
            c.canny_sigma = s;
        }
        if let Some(s) = self.clahe_clip {
            c.clahe_clip = s;
        }
        if let Some(p) = self.peak_prominence {
            c.peak_prominence = p;
        }
        if self.no_drift_removal {
            c.remove_drift = false;
        }
        c
    }
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// A `.csm` file or a directory of them.
    path: PathBuf,
    /// Report directory.
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
    /// Layout file; `layout.csv` beside or above the maps is used if present.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Worker threads (overrides QDFARM_WORKERS; default all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn workers(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("QDFARM_WORKERS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("QDFARM_WORKERS='{v}' is not a worker count"))),
        Err(_) => Ok(None),
    }
}

fn find_layout(explicit: Option<PathBuf>, path: &Path) -> Result<Option<FarmLayout>> {
    if let Some(p) = explicit {
        return Ok(Some(io::read_layout(p)?));
    }
    let dir = if path.is_dir() { Some(path) } else { path.parent() };
    let candidates = dir
        .into_iter()
        .flat_map(|d| [Some(d.join("layout.csv")), d.parent().map(|p| p.join("layout.csv"))])
        .flatten();
    for c in candidates {
        if c.is_file() {
            return Ok(Some(io::read_layout(c)?));
        }
    }
    Ok(None)
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let workers = workers(a.workers)?;
    let layout = find_layout(a.layout, &a.path)?;
    let run = run_pipeline(&a.path, &a.pipeline.config(), workers, layout.as_ref())?;
    run.report.save(&a.out)?;
    let r = &run.report;
    let failed = r.records.iter().filter(|x| x.error.is_some()).count();
    if let Some(t) = &r.timing {
        println!("analysed {} maps with {} workers in {:.2} s", t.maps, t.workers, t.elapsed_s);
    }
    for c in &r.classes {
        println!("{:<6} {:>5} {:>6.3}", c.class, c.count, c.fraction);
    }
    if failed > 0 {
        println!("{failed} devices failed analysis (see records.csv)");
    }
    println!("report written to {}", a.out.display());
    if !run.unreadable.is_empty() {
        for (p, e) in &run.unreadable {
            eprintln!("unreadable: {}: {e}", p.display());
        }
        bail!("{} map files could not be read", run.unreadable.len());
    }
    Ok(())
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(required = true)]
    maps: Vec<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let cfg = a.pipeline.config();
    let mut bad = 0;
    for p in &a.maps {
        match io::load_map(p).and_then(|m| analyze_map(&m, &cfg)) {
            Ok(r) => println!("{}\t{}", r.device_id, r.class),
            Err(e) => {
                eprintln!("{}: {e}", p.display());
                bad += 1;
            }
        }
    }
    if bad > 0 {
        bail!("{bad} maps could not be classified");
    }
    Ok(())
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Two-column (v_th, v_1e) table in volts.
    data: PathBuf,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial leapfrog step size (adapted during warmup).
    #[arg(long, default_value_t = 0.1)]
    step_size: f64,
    #[arg(long, default_value_t = 10)]
    leapfrog: usize,
    #[arg(long, default_value_t = 0.8)]
    target_accept: f64,
    #[arg(long)]
    no_adapt: bool,
    /// Slope prior MEAN,STD.
    #[arg(long, value_parser = parse_normal, default_value = "1,1")]
    alpha_prior: Normal,
    /// Intercept prior MEAN,STD in volts.
    #[arg(long, value_parser = parse_normal, default_value = "0,1")]
    beta_prior: Normal,
    /// Prior on ln(sigma) MEAN,STD; default centred on 20 mV.
    #[arg(long, value_parser = parse_normal)]
    log_sigma_prior: Option<Normal>,
    /// Known noise level in volts; only slope and intercept are sampled.
    #[arg(long)]
    fixed_sigma: Option<f64>,
    /// Threshold-voltage spread for the observed-spread estimate; defaults
    /// to the sample standard deviation of the data.
    #[arg(long)]
    vth_std: Option<f64>,
    /// Predictive interval for V_1e at this threshold voltage.
    #[arg(long)]
    at: Option<f64>,
    /// Write posterior samples (alpha, beta, sigma) to this CSV file.
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn fit_correlation(a: FitArgs) -> Result<()> {
    let data = io::load_pairs(&a.data)?;
    let mut model = RegressionModel {
        alpha: a.alpha_prior,
        beta: a.beta_prior,
        ..RegressionModel::default()
    };
    if let Some(p) = a.log_sigma_prior {
        model.log_sigma = p;
    }
    model.fixed_sigma = a.fixed_sigma;
    let cfg = HmcConfig {
        step_size: a.step_size,
        leapfrog_steps: a.leapfrog,
        n_samples: a.samples,
        n_warmup: a.warmup,
        seed: a.seed,
        chains: a.chains,
        target_accept: a.target_accept,
        adapt: !a.no_adapt,
        ..HmcConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let fit = hmc_fit(&data, &model, &cfg)?;
    let s = fit.summary()?;
    println!("n = {}  samples = {}  chains = {}", data.len(), s.n_samples, fit.chains);
    println!("acceptance = {:.3}  step = {:.3e}  divergent = {}", fit.acceptance, fit.step_size, fit.divergent);
    if fit.chains > 1 {
        let r: Vec<String> = fit.rhat.iter().map(|r| format!("{r:.4}")).collect();
        println!("split-Rhat = [{}]", r.join(", "));
    }
    println!("{:<10} {:>12} {:>12} {:>12} {:>12}", "param", "mean", "std", "2.5%", "97.5%");
    for (name, p) in [("alpha", s.alpha), ("beta", s.beta), ("sigma", s.sigma)] {
        println!("{name:<10} {:>12.6} {:>12.6} {:>12.6} {:>12.6}", p.mean, p.std, p.lower, p.upper);
    }
    let vth_std = match a.vth_std {
        Some(v) => v,
        None => describe(&data.iter().map(|d| d.0).collect::<Vec<_>>())?.std,
    };
    let spread = fit.observed_spread(vth_std)?;
    println!(
        "observed spread = {:.6} V [{:.6}, {:.6}] for V_th std {:.6} V",
        spread.mean, spread.lower, spread.upper, vth_std
    );
    println!("loo = {:.3}", loo_score(&fit.samples, &data)?);
    if let Some(v) = a.at {
        let p = fit.predictive_interval(v, 0.95, a.seed)?;
        println!("V_1e at V_th = {v}: {:.6} V, 95% [{:.6}, {:.6}]", p.mean, p.lower, p.upper);
    }
    if let Some(path) = a.dump {
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        for s in &fit.samples {
            w.serialize(s)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Subcommand, Debug)]
enum RfCommand {
    /// Resonance, calibrated dip and quality factors of the tank.
    Resonator(ResonatorArgs),
    /// Integration time for SNR = 1 from a (tau, SNR) table.
    Tmin {
        table: PathBuf,
    },
    /// FWHM of a (frequency, SNR²) table.
    Bandwidth {
        table: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ResonatorArgs {
    #[arg(long, default_value_t = 32.7e-9)]
    inductance: f64,
    #[arg(long, default_value_t = 0.8e-12)]
    coupling_capacitance: f64,
    #[arg(long, default_value_t = 0.8e-12)]
    parasitic_chip: f64,
    #[arg(long, default_value_t = 3.06e-12)]
    parasitic_pcb: f64,
    #[arg(long, default_value_t = 50.0)]
    line_impedance: f64,
    /// Matching coefficient the loss is calibrated to.
    #[arg(long, default_value_t = 0.66)]
    beta: f64,
    /// Device resistance for the reflection sweep (Ω); blockade if omitted.
    #[arg(long)]
    device_resistance: Option<f64>,
    /// Write an (f, |Γ|) sweep over ±10% of resonance to this file.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long, default_value_t = 2001)]
    points: usize,
}

fn rf(c: RfCommand) -> Result<()> {
    match c {
        RfCommand::Resonator(a) => {
            let m = ResonatorModel {
                inductance: a.inductance,
                coupling_capacitance: a.coupling_capacitance,
                parasitic_chip: a.parasitic_chip,
                parasitic_pcb: a.parasitic_pcb,
                line_impedance: a.line_impedance,
                internal_loss_resistance: f64::INFINITY,
            }
            .calibrated(a.beta)?;
            let r = a.device_resistance.unwrap_or(f64::INFINITY);
            let (f_dip, depth) = m.dip(r);
            println!("C_total = {:.4e} F", m.total_capacitance());
            println!("f_r = {:.6e} Hz", m.resonant_frequency());
            println!("dip = {:.6e} Hz, |Gamma| = {:.4}", f_dip, depth);
            println!("R_loss = {:.1} Ohm, Q_i = {:.2}, Q_L = {:.2}", m.internal_loss_resistance, m.internal_q(), m.loaded_q(r)?);
            if let Some(path) = a.sweep {
                if a.points < 2 {
                    return Err(usage("--points must be at least 2"));
                }
                let f0 = m.resonant_frequency();
                let rows: Vec<(f64, f64)> = (0..a.points)
                    .map(|k| {
                        let f = f0 * (0.9 + 0.2 * k as f64 / (a.points - 1) as f64);
                        (f, m.reflection(f, r).norm())
                    })
                    .collect();
                io::save_pairs(path, ("frequency_hz", "abs_gamma"), &rows)?;
            }
        }
        RfCommand::Tmin { table } => {
            let t = fit_t_min(&io::load_pairs(&table)?)?;
            println!("t_min = {t:.6e} s");
        }
        RfCommand::Bandwidth { table } => {
            let w = bandwidth_fwhm(&io::load_pairs(&table)?)?;
            println!("fwhm = {w:.6e} Hz");
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// Plan file (device_id,points,tau,averages,settle); the default
    /// five-minute plan if omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Budget in seconds.
    #[arg(long, default_value_t = 300.0)]
    budget: f64,
    /// Write the default plan to this file and exit.
    #[arg(long)]
    write_default: Option<PathBuf>,
    /// Write per-device durations (device_id, seconds) to this file.
    #[arg(long)]
    breakdown: Option<PathBuf>,
}

fn scan(a: ScanArgs) -> Result<()> {
    if let Some(p) = a.write_default {
        io::write_scan_plan(&p, &ScanPlan::default_farm())?;
        println!("wrote default plan to {}", p.display());
        return Ok(());
    }
    let plan = match &a.plan {
        Some(p) => io::read_scan_plan(p)?,
        None => ScanPlan::default_farm(),
    };
    let budget = seconds_to_ns(a.budget).map_err(|e| usage(e.to_string()))?;
    let r = scan_time(&plan, Some(budget))?;
    println!("devices = {}", r.per_device.len());
    println!("total = {} ns ({:.6} s)", r.total_ns, r.total_seconds());
    println!("budget = {:.6} s: {}", a.budget, if r.over_budget { "OVER BUDGET" } else { "within budget" });
    if let Some(path) = a.breakdown {
        let rows: Vec<(f64, f64)> = r.per_device.iter().map(|(id, t)| (*id as f64, *t as f64 * 1e-9)).collect();
        io::save_pairs(path, ("device_id", "seconds"), &rows)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
struct PlaceArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated set sizes; eight sets of 128 by default.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Verify every set's centroid is the array centre.
    #[arg(long)]
    check: bool,
    /// Write the layout file here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn place(a: PlaceArgs) -> Result<()> {
    let layout = match &a.sizes {
        Some(s) => place_farm(s, a.seed).map_err(|e| usage(e.to_string()))?,
        None => place_default_farm(a.seed),
    };
    let mut ok = true;
    println!("{:>4} {:>6} {:>10} {:>10}", "set", "count", "row", "col");
    for id in layout.set_ids() {
        let (r, c) = centroid(&layout, id)?;
        ok &= r == 15.5 && c == 15.5;
        println!("{id:>4} {:>6} {r:>10.4} {c:>10.4}", layout.set_members(id).count());
    }
    if let Some(p) = &a.out {
        io::write_layout(p, &layout)?;
    }
    if a.check {
        if !ok {
            bail!("centroid check failed");
        }
        println!("centroid check passed");
    }
    Ok(())
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory written by `analyze`.
    #[arg(long, default_value = "analysis")]
    analysis: PathBuf,
    /// Ground truth written by `simulate`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Layout file for the row/column uniformity table.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Also write the text report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn report(a: ReportArgs) -> Result<()> {
    use std::fmt::Write as _;
    let r = FarmReport::load(&a.analysis)?;
    r.check_consistency()?;
    let mut s = String::new();
    writeln!(s, "devices: {}", r.records.len())?;
    writeln!(s, "\nclass frequencies")?;
    for c in &r.classes {
        writeln!(s, "  {:<6} {:>5} {:>7.3}", c.class, c.count, c.fraction)?;
    }
    writeln!(s, "\nper instance set (Good devices)")?;
    writeln!(
        s,
        "  {:>4} {:>5} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "set", "n", "good", "bad", "multi", "v1e", "sd", "alpha_g", "sd", "asym", "sd"
    )?;
    for g in &r.sets {
        writeln!(
            s,
            "  {:>4} {:>5} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            g.set_id.map_or_else(|| "-".into(), |x| x.to_string()),
            g.devices,
            g.good,
            g.bad,
            g.multi,
            opt(g.v_1e.mean),
            opt(g.v_1e.std),
            opt(g.alpha_g.mean),
            opt(g.alpha_g.std),
            opt(g.asymmetry.mean),
            opt(g.asymmetry.std)
        )?;
    }
    if let Some(t) = &a.truth {
        let truth = io::read_truth(t)?;
        let c = compare(&r, &truth, PARAMETER_TOLERANCES);
        writeln!(s, "\ncomparison with ground truth ({} matched, {} unmatched)", c.matched, c.unmatched)?;
        writeln!(s, "  truth\\pred   good    bad  multi")?;
        for (i, row) in c.confusion.iter().enumerate() {
            writeln!(s, "  {:<10} {:>6} {:>6} {:>6}", ["good", "bad", "multi"][i], row[0], row[1], row[2])?;
        }
        writeln!(s, "  agreement = {:.4}", c.agreement)?;
        for (name, e) in [("v_1e", c.v_1e), ("alpha_g", c.alpha_g), ("asymmetry", c.asymmetry)] {
            if let Some(e) = e {
                writeln!(
                    s,
                    "  {name:<10} n={:<5} mean|err|={:.5} max|err|={:.5} within {}: {:.3}",
                    e.count,
                    e.mean_abs,
                    e.max_abs,
                    e.tolerance,
                    e.within_tolerance as f64 / e.count as f64
                )?;
            }
        }
    }
    if let Some(lp) = &a.layout {
        let layout = io::read_layout(lp)?;
        let u = uniformity(&layout, |id| r.class_of(id))?;
        writeln!(s, "\nlayout uniformity (KLD from uniform)")?;
        for c in &u.classes {
            writeln!(s, "  {:<6} n={:<5} row={:.4} col={:.4} set={:.4}", c.class, c.count, c.row_kld, c.col_kld, c.set_kld)?;
        }
        writeln!(
            s,
            "  row/col mean {:.4} ± {:.4}, by type {:.4}",
            u.rowcol_kld_mean, u.rowcol_kld_std, u.by_type_kld_mean
        )?;
    }
    print!("{s}");
    if let Some(out) = a.out {
        fs::write(&out, &s).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}
