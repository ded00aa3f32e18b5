use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use correctorlab::corrector::CorrectorSet;
use correctorlab::ensemble::{
    read_records, run_ensemble, run_mean_value_campaign, write_records, EnsembleConfig, SampleContext,
    SampleStatus,
};
use correctorlab::functionals::{estimate_rstar, make_average_functional};
use correctorlab::gaussfield::FieldSeed;
use correctorlab::io::{write_fields, FieldMeta};
use correctorlab::report::{summarize, write_report};
use correctorlab::sensitivity::{exponents, sensitivity_norms, verify_representation, Target};
use correctorlab::{LabError, Result};

#[derive(Parser)]
#[command(name = "correctorlab", version, about = "Correctors of random elliptic operators on periodic lattices")]
struct Cli {
    /// Report errors as JSON on standard error.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one Gaussian tensor field (or its coefficient) to a binary file.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Write `a` instead of the Gaussian input.
        #[arg(long)]
        mapped: bool,
    },
    /// Solve correctors for one realization.
    Corrector {
        #[command(flatten)]
        common: Common,
        /// Also write phi (and sigma) to this binary file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sensitivity norms, or the central-difference check of the derivative
    /// representations.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        check_representation: bool,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        /// Cube radius of the checked functional; defaults to `L/4`.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Mean-value and smallness diagnostics over realizations.
    Mvcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2.0)]
        r: f64,
        #[arg(long = "big-r", default_value_t = 16.0)]
        big_r: f64,
        /// Random-boundary harmonics per sample.
        #[arg(long, default_value_t = 4)]
        trials: usize,
        #[arg(long, default_value_t = 0.1)]
        screen_threshold: f64,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run a campaign and write one record per sample.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "records.jsonl")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Validate the configuration and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Fit tables and plots from a record file.
    Report {
        #[arg(long)]
        records: PathBuf,
        /// Output directory; defaults to the directory of the records.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Configuration file plus per-key overrides.
#[derive(Args, Debug, Default)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    box_size: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    smoothing_scale: Option<f64>,
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sample index for single-realization commands.
    #[arg(long, default_value_t = 0)]
    index: u64,
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    tail_scale: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    preconditioner: Option<String>,
    #[arg(long)]
    rstar_threshold: Option<f64>,
    #[arg(long)]
    without_sigma: bool,
    #[arg(long)]
    sensitivity: bool,
    #[arg(long)]
    windows: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<EnsembleConfig> {
        let mut c = match &self.config {
            Some(p) => EnsembleConfig::from_file(p)?,
            None => EnsembleConfig::default(),
        };
        macro_rules! over {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = &self.$flag { c.$field = v.clone(); })*
            };
        }
        over!(d => d, n => n, beta => beta, amplitude => amplitude, smoothing_scale => smoothing_scale,
              map => map, lambda => lambda, samples => samples, seed => base_seed, radii => radii,
              thresholds => thresholds, tolerance => rel_tolerance, preconditioner => preconditioner,
              rstar_threshold => rstar_threshold, windows => windows);
        if self.box_size.is_some() {
            c.box_size = self.box_size;
        }
        if self.tail_scale.is_some() {
            c.tail_scale = self.tail_scale;
        }
        if self.max_iterations.is_some() {
            c.max_iterations = self.max_iterations;
        }
        if self.without_sigma {
            c.with_sigma = false;
        }
        if self.sensitivity {
            c.sensitivity = true;
        }
        Ok(c)
    }
}

fn banner(config: &EnsembleConfig, index: Option<u64>) -> Result<()> {
    eprintln!("config {}", serde_json::to_string(config)?);
    match index {
        Some(i) => eprintln!("seed base={} index={}", config.base_seed, i),
        None => eprintln!("seed base={}", config.base_seed),
    }
    Ok(())
}

fn workers(flag: Option<usize>) -> Result<usize> {
    if let Some(w) = flag {
        return Ok(w.max(1));
    }
    match std::env::var("CORRECTORLAB_WORKERS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|w| w.max(1))
            .map_err(|_| LabError::Config(format!("CORRECTORLAB_WORKERS is not a count: {v}"))),
        Err(_) => Ok(1),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { common, out, mapped } => {
            let cfg = common.resolve()?;
            let ctx = SampleContext::new(&cfg)?;
            banner(&cfg, Some(common.index))?;
            let seed = FieldSeed::new(cfg.base_seed, common.index);
            let (at, a) = ctx.coefficient(seed);
            let field = if mapped { &a } else { &at };
            let d = cfg.d;
            let names = (0..d * d)
                .map(|e| format!("{}{}{}", if mapped { "a" } else { "atilde" }, e / d, e % d))
                .collect();
            let mut meta = FieldMeta::new(&ctx.lattice, names, serde_json::to_value(&cfg)?);
            meta.base_seed = Some(cfg.base_seed);
            meta.sample_index = Some(common.index);
            let comps: Vec<&[f64]> = field.comps.iter().map(|c| c.as_slice()).collect();
            write_fields(&out, &comps, &meta)?;
            println!("wrote {}", out.display());
        }
        Command::Corrector { common, out } => {
            let cfg = common.resolve()?;
            let ctx = SampleContext::new(&cfg)?;
            banner(&cfg, Some(common.index))?;
            let (_, a) = ctx.coefficient(FieldSeed::new(cfg.base_seed, common.index));
            let set = CorrectorSet::assemble(&a, &ctx.opts, cfg.with_sigma)?;
            let rstar = estimate_rstar(&set.components(), cfg.beta, cfg.rstar_threshold, &[0; 3])?;
            let rec = set.record();
            if let Some(path) = out {
                let d = cfg.d;
                let mut names: Vec<String> = (0..d).map(|i| format!("phi{i}")).collect();
                let mut comps: Vec<&[f64]> = set.phi.iter().map(|p| p.values.as_slice()).collect();
                let pairs = correctorlab::corrector::skew_pairs(d);
                for (i, s) in set.sigma.iter().enumerate() {
                    for (p, f) in s.iter().enumerate() {
                        names.push(format!("sigma{i}{}{}", pairs[p].0, pairs[p].1));
                        comps.push(f.values.as_slice());
                    }
                }
                let mut meta = FieldMeta::new(&ctx.lattice, names, serde_json::to_value(&cfg)?);
                meta.base_seed = Some(cfg.base_seed);
                meta.sample_index = Some(common.index);
                write_fields(&path, &comps, &meta)?;
            }
            if cli.json {
                println!("{}", json!({ "corrector": rec, "rstar": rstar }));
            } else {
                println!("a_hom {:?}", rec.a_hom);
                for (i, s) in rec.solves.iter().enumerate() {
                    println!("phi{i} residual {:.3e} iterations {}", s.residual, s.iterations);
                }
                for (i, r) in rec.flux_potential_residuals.iter().enumerate() {
                    println!("sigma{i} flux potential residual {r:.3e}");
                }
                println!("r_* {} censored {}", rstar.rstar, rstar.censored);
            }
        }
        Command::Sensitivity {
            common,
            check_representation,
            trials,
            epsilon,
            radius,
        } => {
            let cfg = common.resolve()?;
            let ctx = SampleContext::new(&cfg)?;
            banner(&cfg, Some(common.index))?;
            let seed = FieldSeed::new(cfg.base_seed, common.index);
            let (_, a) = ctx.coefficient(seed);
            if check_representation {
                if cfg.d < 2 {
                    return Err(LabError::invalid("the sigma check needs d >= 2"));
                }
                let r = radius.unwrap_or(ctx.lattice.box_size() / 4.0);
                let f = make_average_functional(ctx.lattice, r, 0)?;
                let mut rng = FieldSeed::new(cfg.base_seed ^ 0xD1B5_4A32_D192_ED03, common.index).rng();
                let mut worst: f64 = 0.0;
                let mut results = Vec::new();
                for target in [Target::Phi { i: 0 }, Target::Sigma { i: 0, j: 0, k: 1 }] {
                    let c = verify_representation(&a, &f, target, trials, &[epsilon], &mut rng, &ctx.opts)?;
                    let e = c.max_rel_error(0);
                    worst = worst.max(e);
                    if !cli.json {
                        println!("{target:?} max relative error {e:.3e} over {trials} directions");
                    }
                    results.push(c);
                }
                if cli.json {
                    println!("{}", json!({ "checks": results, "max_rel_error": worst }));
                } else {
                    println!("max relative error {worst:.3e}");
                }
                return Ok(if worst < 1e-4 { ExitCode::SUCCESS } else { ExitCode::from(1) });
            }
            let set = CorrectorSet::assemble(&a, &ctx.opts, false)?;
            let q = exponents(cfg.beta, cfg.d)?.q;
            let norms = sensitivity_norms(&a, &set.phi[0], &cfg.radii, q, &ctx.opts)?;
            if cli.json {
                println!("{}", json!({ "q": q, "radii": cfg.radii, "norms": norms }));
            } else {
                println!("q {q}");
                for (r, v) in cfg.radii.iter().zip(&norms) {
                    println!("r {r} norm {v:.6e}");
                }
            }
        }
        Command::Mvcheck {
            common,
            r,
            big_r,
            trials,
            screen_threshold,
            workers: w,
        } => {
            let mut cfg = common.resolve()?;
            if common.samples.is_none() && common.config.is_none() {
                cfg.samples = 10;
            }
            cfg.validate_model()?;
            banner(&cfg, None)?;
            let s = run_mean_value_campaign(&cfg, r, big_r, trials, screen_threshold, workers(w)?)?;
            if cli.json {
                println!("{}", json!({ "config": cfg, "summary": s }));
            } else {
                println!("samples {} pass rate {:.3}", s.samples.len(), s.pass_rate);
                match s.max_ratio_passing {
                    Some(m) => println!("max ratio over screened samples {m:.4}"),
                    None => println!("no sample passed the smallness screen"),
                }
                println!("max ratio over all samples {:.4}", s.max_ratio_all);
                for (kind, (q50, q90, qmax)) in &s.quantiles {
                    println!("{kind}: median {q50:.4} q90 {q90:.4} max {qmax:.4}");
                }
            }
        }
        Command::Ensemble {
            common,
            out,
            workers: w,
            dry_run,
        } => {
            let cfg = common.resolve()?;
            cfg.validate()?;
            banner(&cfg, None)?;
            if dry_run {
                println!("configuration valid");
                return Ok(ExitCode::SUCCESS);
            }
            let records = run_ensemble(&cfg, workers(w)?)?;
            write_records(&out, &cfg, &records)?;
            let failed = records.iter().filter(|r| r.status == SampleStatus::Failed).count();
            println!("wrote {} records to {} ({failed} failed)", records.len(), out.display());
            if failed > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { records, out } => {
            let (cfg, recs) = read_records(&records)?;
            banner(&cfg, None)?;
            let dir = out.unwrap_or_else(|| records.parent().unwrap_or(Path::new(".")).to_path_buf());
            let files = write_report(&dir, &cfg, &recs)?;
            let s = summarize(&cfg, &recs);
            if let Some(v) = &s.variance {
                println!(
                    "variance slope {:.4} [{:.4}, {:.4}] (predicted {})",
                    v.fit.slope, v.fit.slope_ci.0, v.fit.slope_ci.1, v.predicted_slope
                );
            }
            if let Some(f) = s.tail.as_ref().and_then(|t| t.fit.as_ref()) {
                println!("tail slope {:.4} r2 {:.4}", f.linear.slope, f.linear.r_squared);
            }
            if let Some(f) = s.rstar.as_ref().and_then(|t| t.fit.as_ref()) {
                println!("r_* tail slope {:.4}", f.slope);
            }
            for n in &s.notes {
                println!("skipped {n}");
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage problems are validation errors.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let as_json = cli.json;
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let code = e.exit_code();
            if as_json {
                let kind = match &e {
                    LabError::InvalidParameter(_) => "invalid_parameter",
                    LabError::NoConvergence { .. } => "no_convergence",
                    LabError::InsufficientData(_) => "insufficient_data",
                    LabError::Config(_) => "config",
                    LabError::Io(_) => "io",
                    LabError::Json(_) => "json",
                    LabError::Csv(_) => "csv",
                };
                eprintln!("{}", json!({ "error": kind, "message": e.to_string(), "exit_code": code }));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(code as u8)
        }
    }
}
