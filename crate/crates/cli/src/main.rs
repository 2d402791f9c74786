mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use advfeat_core::attack::{geometry, pgd, target_labels, Mode};
use advfeat_core::boundary::{solve_lambda, BoundaryModel};
use advfeat_core::data::{gen_dataset, ortho_stats, read_afpd, write_dataset, Dataset, Source};
use advfeat_core::experiment::{run_pipeline, sweep, sweep_csv, sweep_medians, write_run, write_sweep, SweepAxis};
use advfeat_core::net::{init_params, read_params, write_params};
use advfeat_core::plot::{decision_map_svg, map_from_csv, series_from_sweep_csv, sweep_svg};
use advfeat_core::rng::derive_seed;
use advfeat_core::theory::{
    check_lambda_bounds, check_natural_condition, check_theorem1, check_uniform_condition, verify_concentration,
    verify_subgaussian_vector_lemma, verify_uniform_vector_lemma, ConditionReport, ProbeTable,
};
use advfeat_core::train::train;

use config::{resolve, CliConfig};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "advfeat", version, about = "Learning-from-perturbations laboratory for one-hidden-layer networks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// JSON config document merged over the preset defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a named preset (desk_noise, paper_noise, desk_natural, desk_flipped).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override one config value, e.g. `--set dataset.d=512` (repeatable).
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    sets: Vec<String>,
    /// Root seed; overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = rayon default).
    #[arg(long, global = true, env = "ADVFEAT_THREADS", default_value_t = 0)]
    threads: usize,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Print the resolved config and exit without touching the filesystem.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset and write it as AFPD.
    Gen {
        /// Sample distribution; overrides `dataset.source`.
        #[arg(long)]
        source: Option<Source>,
        /// Input dimension.
        #[arg(long)]
        d: Option<usize>,
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
        /// Per-coordinate scale of the generator.
        #[arg(long)]
        scale: Option<f64>,
        /// Output file (default `<out-dir>/dataset.afpd`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a CSV copy next to the AFPD file.
        #[arg(long)]
        csv: bool,
    },
    /// Train a network on a dataset and write its parameters and report.
    Train {
        /// Labelled training set (AFPD).
        #[arg(long)]
        data: PathBuf,
        /// Output prefix (default `<out-dir>/model`), producing `.afpw` and `.report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perturb a base dataset toward attack targets.
    Attack {
        /// Base samples to perturb.
        #[arg(long)]
        data: PathBuf,
        /// Teacher parameters (needed for PGD, and for geometry without --natural).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Natural training set; geometry attacks use its exact boundary when solvable.
        #[arg(long)]
        natural: Option<PathBuf>,
        /// Output file (default `<out-dir>/adversarial.afpd`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate theory conditions and lemma checks; exit 0 iff all pass.
    Check {
        #[arg(long, value_enum, default_value_t = Suite::Theorem1)]
        suite: Suite,
        /// Dataset for the condition suites.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Perturbation size for `natural` and `uniform`.
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// Unit direction file (one value per line) for `uniform`; defaults to the first coordinate axis.
        #[arg(long)]
        direction: Option<PathBuf>,
        /// Monte Carlo trials per lemma check.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Write the reports as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run one teacher → attack → student pipeline.
    Run,
    /// Run the pipeline over a ladder of values.
    Sweep {
        /// Config field to vary.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values for the axis.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Seeds to repeat every value with (default: the config seed).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Render SVG from a decision-map CSV or a sweep summary CSV.
    Plot {
        /// Decision-map CSV written by `run`.
        #[arg(long, conflicts_with = "sweep", required_unless_present = "sweep")]
        map: Option<PathBuf>,
        /// Sweep `summary.csv`.
        #[arg(long)]
        sweep: Option<PathBuf>,
        /// SVG output file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Theorem1,
    Natural,
    Uniform,
    Lambda,
    Lemmas,
    All,
}

/// Errors carrying the exit code they map to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn usage(err: anyhow::Error) -> Failure {
    Failure { code: EXIT_USAGE, err }
}

fn runtime(err: anyhow::Error) -> Failure {
    Failure { code: EXIT_RUNTIME, err }
}

type Outcome = std::result::Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.global.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build_global() {
            eprintln!("error: cannot configure {} threads: {e}", cli.global.threads);
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    let g = &cli.global;
    if let Command::Plot { map, sweep, out, title } = &cli.cmd {
        return cmd_plot(g, map.as_deref(), sweep.as_deref(), out, title);
    }
    let mut cfg = resolve(g.preset.as_deref(), g.config.as_deref(), &g.sets, g.seed).map_err(usage)?;
    if let Some(dir) = &g.out_dir {
        cfg.output.dir = dir.clone();
    }
    if let Command::Gen { source, d, n, scale, .. } = &cli.cmd {
        let ds = &mut cfg.dataset;
        ds.source = source.unwrap_or(ds.source);
        ds.d = d.unwrap_or(ds.d);
        ds.n = n.unwrap_or(ds.n);
        ds.scale = scale.unwrap_or(ds.scale);
    }
    let echo = serde_json::to_string_pretty(&cfg).map_err(|e| usage(e.into()))?;
    if g.dry_run {
        println!("{echo}");
        return Ok(0);
    }
    eprintln!("resolved config:\n{echo}");
    match &cli.cmd {
        Command::Gen { out, csv, .. } => cmd_gen(g, &cfg, out.as_deref(), *csv),
        Command::Train { data, out } => cmd_train(g, &cfg, data, out.as_deref()),
        Command::Attack {
            data,
            params,
            natural,
            out,
        } => cmd_attack(g, &cfg, data, params.as_deref(), natural.as_deref(), out.as_deref()),
        Command::Check {
            suite,
            dataset,
            eps,
            direction,
            trials,
            json,
        } => cmd_check(g, &cfg, *suite, dataset.as_deref(), *eps, direction.as_deref(), *trials, json.as_deref()),
        Command::Run => cmd_run(g, &cfg),
        Command::Sweep { axis, values, seeds } => cmd_sweep(g, &cfg, *axis, values, seeds),
        Command::Plot { .. } => unreachable!("handled above"),
    }
}

/// Refuses to replace an existing file unless `--force` was given.
fn claim_output(g: &Global, path: &Path) -> std::result::Result<(), Failure> {
    if path.exists() && !g.force {
        return Err(usage(anyhow!("{} already exists (use --force to overwrite)", path.display())));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))
            .map_err(runtime)?;
    }
    Ok(())
}

fn require_file(path: &Path) -> std::result::Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(anyhow!("input file {} does not exist", path.display())))
    }
}

fn load_dataset(path: &Path) -> std::result::Result<Dataset, Failure> {
    require_file(path)?;
    read_afpd(path)
        .map(|(ds, _)| ds)
        .with_context(|| format!("cannot read dataset {}", path.display()))
        .map_err(runtime)
}

fn cmd_gen(g: &Global, cfg: &CliConfig, out: Option<&Path>, csv: bool) -> Outcome {
    let ds = &cfg.dataset;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.join("dataset.afpd"));
    let data = gen_dataset(ds.source, ds.d, ds.n, cfg.experiment.seed, ds.scale).map_err(|e| usage(e.into()))?;
    claim_output(g, &path)?;
    write_dataset(&data, &path).map_err(|e| runtime(e.into()))?;
    if csv {
        let csv_path = path.with_extension("csv");
        claim_output(g, &csv_path)?;
        data.write_csv(&csv_path).map_err(|e| runtime(e.into()))?;
    }
    println!("wrote {} ({} x {}, {}, content id {:016x})", path.display(), data.n(), data.d(), data.source, data.content_id());
    Ok(0)
}

fn cmd_train(g: &Global, cfg: &CliConfig, data: &Path, out: Option<&Path>) -> Outcome {
    let ds = load_dataset(data)?;
    let mut net = cfg.network_config();
    net.d = ds.d();
    let prefix = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.join("model"));
    let params_path = prefix.with_extension("afpw");
    let report_path = prefix.with_extension("report.json");
    claim_output(g, &params_path)?;
    claim_output(g, &report_path)?;
    let seed = cfg.experiment.seed;
    let p0 = init_params(&net, derive_seed(seed, "cli/init"));
    let mut tc = cfg.train.clone();
    tc.seed = derive_seed(seed, "cli/train");
    let (p, report) = train(&p0, &net, &ds, &tc).map_err(|e| runtime(e.into()))?;
    write_params(&p, &net, &params_path).map_err(|e| runtime(e.into()))?;
    fs::write(&report_path, serde_json::to_string_pretty(&report).map_err(|e| runtime(e.into()))?).map_err(|e| runtime(e.into()))?;
    println!(
        "trained {} epochs ({:?}): loss {:.4e}, min margin {:.4e}; wrote {}",
        report.epochs_run,
        report.stopped_by,
        report.final_loss,
        report.margin_min,
        params_path.display()
    );
    Ok(0)
}

fn cmd_attack(g: &Global, cfg: &CliConfig, data: &Path, params: Option<&Path>, natural: Option<&Path>, out: Option<&Path>) -> Outcome {
    let base = load_dataset(data)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.join("adversarial.afpd"));
    let mut spec = cfg.attack.clone();
    spec.seed = derive_seed(cfg.experiment.seed, "cli/attack");
    spec.validate(base.d()).map_err(|e| usage(e.into()))?;
    let targets = target_labels(&spec.target_rule, base.y.view(), base.n(), spec.seed).map_err(|e| usage(e.into()))?;
    let teacher = match params {
        Some(p) => {
            require_file(p)?;
            Some(read_params(p).with_context(|| format!("cannot read params {}", p.display())).map_err(runtime)?)
        }
        None => None,
    };
    let adv = match spec.mode {
        Mode::Pgd => {
            let (p, mut net) = teacher.ok_or_else(|| usage(anyhow!("PGD needs --params")))?;
            net.init_scale = cfg.network.init_scale;
            pgd(&p, &net, &base, &spec, &targets).map_err(|e| runtime(e.into()))?
        }
        Mode::Geometry => {
            let boundary = match (natural, teacher) {
                (Some(nat_path), teacher) => {
                    let nat = load_dataset(nat_path)?;
                    let gamma = teacher.as_ref().map(|t| t.1.gamma).unwrap_or(cfg.network.gamma);
                    let (mp, mm) = (cfg.network.m_plus, cfg.network.m_minus);
                    match (solve_lambda(&nat, gamma, mp, mm), teacher) {
                        (Ok(lambda), _) => BoundaryModel::from_lambda(nat, lambda).map_err(|e| runtime(e.into()))?,
                        (Err(e), Some((p, net))) => {
                            eprintln!("note: exact boundary unavailable ({e}); using the teacher's v − u");
                            BoundaryModel::empirical(&p, &net)
                        }
                        (Err(e), None) => return Err(runtime(anyhow!("exact boundary unavailable ({e}) and no --params given"))),
                    }
                }
                (None, Some((p, net))) => BoundaryModel::empirical(&p, &net),
                (None, None) => return Err(usage(anyhow!("geometry attacks need --natural or --params"))),
            };
            geometry(&base, &boundary, &spec, &targets).map_err(|e| runtime(e.into()))?
        }
    };
    claim_output(g, &path)?;
    adv.write(&base, &path).map_err(|e| runtime(e.into()))?;
    let b = adv.budget();
    println!(
        "wrote {} ({} samples; max L2 {:.4e}, max Linf {:.4e}, max L0 {}, flagged {})",
        path.display(),
        adv.n(),
        b.max_l2,
        b.max_linf,
        b.max_l0,
        b.flagged
    );
    Ok(0)
}

fn read_direction(path: &Path, d: usize) -> std::result::Result<ndarray::Array1<f64>, Failure> {
    require_file(path)?;
    let text = fs::read_to_string(path).map_err(|e| runtime(e.into()))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| usage(anyhow!("{}: `{t}` is not a number", path.display()))))
        .collect::<std::result::Result<_, _>>()?;
    if vals.len() != d {
        return Err(usage(anyhow!("{} has {} values, dataset has d = {d}", path.display(), vals.len())));
    }
    Ok(ndarray::Array1::from_vec(vals))
}

#[allow(clippy::too_many_arguments)]
fn cmd_check(
    g: &Global,
    cfg: &CliConfig,
    suite: Suite,
    dataset: Option<&Path>,
    eps: f64,
    direction: Option<&Path>,
    trials: usize,
    json: Option<&Path>,
) -> Outcome {
    let gamma = cfg.network.gamma;
    let mut reports: Vec<ConditionReport> = Vec::new();
    let mut tables: Vec<(String, ProbeTable)> = Vec::new();
    let wants = |s: Suite| suite == s || suite == Suite::All;
    let needs_data = [Suite::Theorem1, Suite::Natural, Suite::Uniform, Suite::Lambda].iter().any(|&s| wants(s));
    let ds = match (needs_data, dataset) {
        (true, Some(p)) => Some(load_dataset(p)?),
        (true, None) => return Err(usage(anyhow!("suite {suite:?} needs --dataset"))),
        (false, _) => None,
    };
    if let Some(ds) = &ds {
        let stats = ortho_stats(ds);
        if wants(Suite::Theorem1) {
            reports.push(check_theorem1(&stats, ds.n(), gamma));
        }
        if wants(Suite::Natural) {
            reports.push(check_natural_condition(&stats, ds.n(), gamma, eps));
        }
        if wants(Suite::Lambda) {
            match solve_lambda(ds, gamma, cfg.network.m_plus, cfg.network.m_minus) {
                Ok(lambda) => reports.push(check_lambda_bounds(lambda.view(), &stats, gamma)),
                Err(e) => {
                    let mut r = ConditionReport::new("lambda_interval", f64::NEG_INFINITY, 0.0, true);
                    r.constants.insert("solve_failed".into(), 1.0);
                    eprintln!("lambda solve failed: {e}");
                    reports.push(r);
                }
            }
        }
        if wants(Suite::Uniform) {
            let q = match direction {
                Some(p) => read_direction(p, ds.d())?,
                None => {
                    let mut e1 = ndarray::Array1::zeros(ds.d());
                    e1[0] = 1.0;
                    e1
                }
            };
            reports.push(check_uniform_condition(ds, q.view(), ds.n(), eps, gamma).map_err(|e| usage(e.into()))?);
        }
    }
    if wants(Suite::Lemmas) {
        let seed = cfg.experiment.seed;
        let run = |r: advfeat_core::Result<ProbeTable>| r.map_err(|e| runtime(e.into()));
        tables.push(("uniform_vectors".into(), run(verify_uniform_vector_lemma(4096, 16, 1000.0, trials, seed))?));
        tables.push((
            "gaussian_vectors".into(),
            run(verify_subgaussian_vector_lemma(4096, 16, trials, Source::Gaussian, seed))?,
        ));
        tables.push((
            "rademacher_vectors".into(),
            run(verify_subgaussian_vector_lemma(4096, 16, trials, Source::Rademacher, seed))?,
        ));
        tables.push(("concentration".into(), run(verify_concentration(&[-1.0; 10], &[1.0; 10], 10.0, trials * 10, seed))?));
        for (name, t) in &tables {
            for row in &t.rows {
                let bound = row.bound.unwrap_or(0.0);
                let se = row.std_err.unwrap_or(0.0);
                // Tail probabilities are upper-bounded; event rates lower-bounded.
                let (lhs, rhs) = if name == "concentration" {
                    (bound + 3.0 * se, row.value)
                } else {
                    (row.value, bound - 3.0 * se)
                };
                let mut r = ConditionReport::new(&format!("{name}/{}", row.statistic), lhs, rhs, false);
                r.constants.insert("std_err".into(), se);
                reports.push(r);
            }
        }
    }
    for r in &reports {
        println!("{}", r.summary_line());
        for p in &r.parts {
            println!("  {}", p.summary_line());
        }
    }
    if let Some(path) = json {
        claim_output(g, path)?;
        let doc = serde_json::json!({ "reports": reports, "tables": tables });
        fs::write(path, serde_json::to_string_pretty(&doc).map_err(|e| runtime(e.into()))?).map_err(|e| runtime(e.into()))?;
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("{} checks, {} failed", reports.len(), failed);
    Ok(if failed == 0 { 0 } else { EXIT_CHECK_FAILED })
}

fn cmd_run(g: &Global, cfg: &CliConfig) -> Outcome {
    let exp = cfg.experiment_config();
    exp.validate().map_err(|e| usage(e.into()))?;
    let dir = cfg.output.dir.join(&exp.name);
    let marker = dir.join("result.json");
    claim_output(g, &marker)?;
    let result = run_pipeline(&exp).map_err(|e| runtime(e.into()))?;
    write_run(&dir, &result).map_err(|e| runtime(e.into()))?;
    println!(
        "accuracy on natural data {:.4}, agreement with standard boundary {:.4} ({} probes used), boundary {}",
        result.accuracy_on_natural, result.agreement_vs_standard.rate, result.agreement_vs_standard.n_used, result.boundary_mode
    );
    for r in &result.condition_reports {
        println!("{}", r.summary_line());
    }
    println!("wrote {}", dir.display());
    Ok(0)
}

fn cmd_sweep(g: &Global, cfg: &CliConfig, axis: SweepAxis, values: &[usize], seeds: &[u64]) -> Outcome {
    let exp = cfg.experiment_config();
    exp.validate().map_err(|e| usage(e.into()))?;
    let seeds: Vec<u64> = if seeds.is_empty() { vec![exp.seed] } else { seeds.to_vec() };
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let dir = cfg.output.dir.join(format!("{}_sweep_{}", exp.name, axis.name()));
    claim_output(g, &dir.join("summary.csv"))?;
    let cells = sweep(&exp, axis, &sorted, &seeds).map_err(|e| usage(e.into()))?;
    write_sweep(&dir, &exp, &cells).map_err(|e| runtime(e.into()))?;
    print!("{}", sweep_csv(&cells));
    for (v, acc, agr) in sweep_medians(&cells) {
        println!("median {}={v}: accuracy {acc:.4}, agreement {agr:.4}", axis.name());
    }
    let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
    println!("wrote {}", dir.display());
    Ok(if failed == 0 { 0 } else { EXIT_RUNTIME })
}

fn cmd_plot(g: &Global, map: Option<&Path>, sweep_path: Option<&Path>, out: &Path, title: &str) -> Outcome {
    let svg = match (map, sweep_path) {
        (Some(p), _) => {
            require_file(p)?;
            let text = fs::read_to_string(p).map_err(|e| runtime(e.into()))?;
            let m = map_from_csv(&text).with_context(|| format!("cannot parse {}", p.display())).map_err(usage)?;
            decision_map_svg(&m, title)
        }
        (None, Some(p)) => {
            require_file(p)?;
            let text = fs::read_to_string(p).map_err(|e| runtime(e.into()))?;
            let (axis, series) = series_from_sweep_csv(&text).with_context(|| format!("cannot parse {}", p.display())).map_err(usage)?;
            sweep_svg(&series, &axis, "median rate").map_err(|e| usage(e.into()))?
        }
        (None, None) => return Err(usage(anyhow!("plot needs --map or --sweep"))),
    };
    if g.dry_run {
        println!("would write {} ({} bytes)", out.display(), svg.len());
        return Ok(0);
    }
    claim_output(g, out)?;
    fs::write(out, svg).map_err(|e| runtime(e.into()))?;
    println!("wrote {}", out.display());
    Ok(0)
}
