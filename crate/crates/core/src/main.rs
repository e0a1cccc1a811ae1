use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use scalelink::bank::{load_form, save_form};
use scalelink::calibration::{calibrate_mcmc, calibrate_oracle, CalibrationSpec, Population};
use scalelink::config::{StudyFile, CONFIG_SCHEMA_VERSION};
use scalelink::data::ResponseMatrix;
use scalelink::evaluation::evaluate;
use scalelink::linking::{estimate_transform, LinkingOptions, QuadratureGrid};
use scalelink::model::{Item, ModelFamily, TestForm};
use scalelink::report::{write_plots, write_tables};
use scalelink::simulation::{
    build_anchor_set, default_item_bank, derive_seed, run_study, AnchorScenario, GeneratedDataset, StudyReport,
    REPORT_FORMAT_VERSION,
};
use scalelink::{Error, Result};

const BANK_CSV_FORMAT_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "scalelink", version, about = "IRT scale linking for mixed-format tests")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic base/new item bank pair.
    Bank {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate abilities and responses for one form.
    Generate {
        #[arg(long)]
        form: PathBuf,
        #[arg(long, default_value_t = 3000)]
        n: usize,
        /// MC/CR ability correlation.
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate a form under one analysis model.
    Calibrate(CalibrateArgs),
    /// Estimate the transformation placing the new calibration on the base scale.
    Link {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        new: PathBuf,
        #[arg(long, default_value = "MCCR")]
        scenario: AnchorScenario,
        #[arg(long)]
        initial_step: Option<f64>,
        /// Also write the record here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation study from a config file and write the report directory.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Overrides the config's base_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Condition filter such as `rho=0.5,scenario=MCOnly`; repeatable.
        #[arg(long)]
        only: Vec<String>,
        #[arg(long)]
        plots: bool,
    },
    /// Rebuild tables (and plots) from a saved report.json.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plots: bool,
    },
}

#[derive(Args)]
struct CalibrateArgs {
    /// Item bank whose ids and formats define the calibration.
    #[arg(long)]
    form: PathBuf,
    /// Response CSV (required for MCMC).
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long, default_value = "UIRT")]
    model: ModelFamily,
    /// Perturb the (projected) generating parameters instead of sampling.
    #[arg(long)]
    oracle_sigma: Option<f64>,
    /// Generating correlation, used by the oracle mode.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long)]
    chain_length: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Bank { seed, out } => cmd_bank(seed, &out),
        Command::Generate {
            form,
            n,
            rho,
            seed,
            out,
        } => cmd_generate(&form, n, rho, seed, &out),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Link {
            base,
            new,
            scenario,
            initial_step,
            out,
        } => cmd_link(&base, &new, scenario, initial_step, out.as_deref()),
        Command::Study {
            config,
            out,
            jobs,
            seed,
            only,
            plots,
        } => cmd_study(&config, &out, jobs, seed, &only, plots),
        Command::Report { input, out, plots } => cmd_report(&input, &out, plots),
    }
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(dir: &Path, command: &str, mut fields: Value) -> Result<()> {
    let obj = fields.as_object_mut().expect("manifest fields are an object");
    obj.insert("command".into(), json!(command));
    obj.insert("tool_version".into(), json!(env!("CARGO_PKG_VERSION")));
    obj.insert(
        "formats".into(),
        json!({
            "bank_csv": BANK_CSV_FORMAT_VERSION,
            "report_json": REPORT_FORMAT_VERSION,
            "config_schema": CONFIG_SCHEMA_VERSION,
        }),
    );
    let text = serde_json::to_string_pretty(&fields)? + "\n";
    write_file(&dir.join("manifest.json"), text.as_bytes())
}

fn cmd_bank(seed: Option<u64>, out: &Path) -> Result<ExitCode> {
    let seed = seed_or_entropy(seed);
    create_dir(out)?;
    let (base, new) = default_item_bank(seed)?;
    save_form(&base, &out.join("base.csv"))?;
    save_form(&new, &out.join("new.csv"))?;
    write_manifest(out, "bank", json!({ "seeds": { "bank": seed }, "outputs": ["base.csv", "new.csv"] }))?;
    println!("wrote {} and {}", out.join("base.csv").display(), out.join("new.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(form_path: &Path, n: usize, rho: f64, seed: Option<u64>, out: &Path) -> Result<ExitCode> {
    let seed = seed_or_entropy(seed);
    let form = load_form(form_path)?;
    create_dir(out)?;
    let data = GeneratedDataset::generate(&form, n, &Population::bivariate(rho), seed)?;
    data.thetas.save(&out.join("thetas.csv"))?;
    data.responses.save(&out.join("responses.csv"))?;
    write_manifest(
        out,
        "generate",
        json!({
            "form": form_path,
            "form_sha256": sha256_hex(&fs::read(form_path).map_err(|e| Error::io(form_path, e))?),
            "n": n,
            "rho": data.rho_used,
            "seeds": {
                "generate": seed,
                "theta": derive_seed(seed, "theta"),
                "responses": derive_seed(seed, "responses"),
            },
            "outputs": ["thetas.csv", "responses.csv"],
        }),
    )?;
    println!("wrote {} examinees to {}", n, out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<ExitCode> {
    let seed = seed_or_entropy(args.seed);
    let form = load_form(&args.form)?;
    let result = match args.oracle_sigma {
        Some(sigma) => {
            let spec = CalibrationSpec::oracle(args.model, sigma, seed);
            calibrate_oracle(form.items(), &Population::bivariate(args.rho), &spec)?
        }
        None => {
            let path = args
                .responses
                .as_deref()
                .ok_or_else(|| Error::invalid("--responses is required unless --oracle-sigma is given"))?;
            let responses = ResponseMatrix::load(path)?;
            let mut spec = CalibrationSpec::mcmc(args.model, seed);
            spec.chain_length = args.chain_length.unwrap_or(spec.chain_length);
            spec.burn_in = args.burn_in.unwrap_or(spec.burn_in);
            calibrate_mcmc(&responses, &form, &spec)?
        }
    };
    for w in &result.warnings {
        log::warn!("{w}");
    }
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(&args.out, &buf)?;
    println!("seed={seed}");
    for (block, rate) in &result.acceptance_rates {
        log::info!("acceptance {block}: {rate:.3}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_link(
    base_path: &Path,
    new_path: &Path,
    scenario: AnchorScenario,
    initial_step: Option<f64>,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let base = load_form(base_path)?;
    let new = load_form(new_path)?;
    if base.family() != new.family() {
        return Err(Error::invalid(format!(
            "base bank is {} but new bank is {}",
            base.family(),
            new.family()
        )));
    }
    let ids: Vec<String> = build_anchor_set(&base, scenario)?
        .into_iter()
        .filter(|id| new.get(id).is_some())
        .collect();
    if ids.is_empty() {
        return Err(Error::EmptyAnchorSet(format!(
            "no common {scenario} anchors between {} and {}",
            base_path.display(),
            new_path.display()
        )));
    }
    let pick = |form: &TestForm| -> Vec<Item> { ids.iter().map(|id| form.get(id).cloned().expect("common id")).collect() };
    let mut options = LinkingOptions::default();
    if let Some(step) = initial_step {
        options.initial_step = step;
    }
    let grid = QuadratureGrid::default_for(base.dim());
    let result = estimate_transform(&pick(&base), &pick(&new), &grid, &options)?;
    let record = result.to_record();
    print!("{record}");
    if result.condition_warning {
        log::warn!("ill-conditioned linking solution");
    }
    if let Some(path) = out {
        write_file(path, record.as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Restricts the config to conditions matching every `--only` key; values for
/// the same key are alternatives.
fn apply_only(config: &mut scalelink::simulation::StudyConfig, filters: &[String]) -> Result<()> {
    let mut rhos = Vec::new();
    let mut scenarios = Vec::new();
    let mut models = Vec::new();
    for part in filters.iter().flat_map(|f| f.split(',')) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--only expects key=value, got `{part}`")))?;
        match key.trim() {
            "rho" => rhos.push(
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("--only rho: `{value}` is not a number")))?,
            ),
            "scenario" => scenarios.push(value.trim().parse::<AnchorScenario>()?),
            "model" => models.push(value.trim().parse::<ModelFamily>()?),
            other => return Err(Error::invalid(format!("--only: unknown key `{other}` (rho, scenario, model)"))),
        }
    }
    let unmatched = |what: &str| Error::invalid(format!("--only {what} matches no configured condition"));
    if !rhos.is_empty() {
        config.rho_levels.retain(|r| rhos.contains(r));
        if config.rho_levels.is_empty() {
            return Err(unmatched("rho"));
        }
    }
    if !scenarios.is_empty() {
        config.anchor_scenarios.retain(|s| scenarios.contains(s));
        if config.anchor_scenarios.is_empty() {
            return Err(unmatched("scenario"));
        }
    }
    if !models.is_empty() {
        config.analysis_models.retain(|m| models.contains(m));
        if config.analysis_models.is_empty() {
            return Err(unmatched("model"));
        }
    }
    Ok(())
}

fn cmd_study(
    config_path: &Path,
    out: &Path,
    jobs: usize,
    seed: Option<u64>,
    only: &[String],
    plots: bool,
) -> Result<ExitCode> {
    let bytes = fs::read(config_path).map_err(|e| Error::io(config_path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let source = config_path.display().to_string();
    let file = StudyFile::parse(&text, &source)?;
    let base_seed = seed.or(file.base_seed).unwrap_or_else(rand::random);
    let dir = config_path.parent().unwrap_or(Path::new("."));
    let mut config = file.resolve(&text, &source, dir, base_seed)?;
    apply_only(&mut config, only)?;
    create_dir(out)?;

    let report = run_study(&config, jobs)?;
    let raw = serde_json::to_string_pretty(&report)? + "\n";
    write_file(&out.join("report.json"), raw.as_bytes())?;
    let mut outputs = vec![PathBuf::from("report.json")];
    outputs.extend(emit_tables(&report, out, plots)?);

    let outputs: Vec<String> = outputs
        .iter()
        .map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string())
        .collect();
    write_manifest(
        out,
        "study",
        json!({
            "config": config_path,
            "config_sha256": sha256_hex(&bytes),
            "base_seed": base_seed,
            "only": only,
            "conditions": config.conditions().iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "records": report.records.len(),
            "failures": report.failures.len(),
            "seeds": report.seeds,
            "outputs": outputs,
        }),
    )?;
    report_failures(&report)
}

fn emit_tables(report: &StudyReport, out: &Path, plots: bool) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if !report.records.is_empty() {
        let eval = evaluate(report)?;
        written.extend(write_tables(out, report, &eval)?);
        if plots {
            written.extend(write_plots(&out.join("plots"), report)?);
        }
    }
    Ok(written)
}

fn report_failures(report: &StudyReport) -> Result<ExitCode> {
    if report.failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for f in &report.failures {
        eprintln!("failed: {}, replication {}: {}", f.condition, f.replication, f.message);
    }
    eprintln!("{} work item(s) failed", report.failures.len());
    Ok(ExitCode::from(1))
}

fn cmd_report(input: &Path, out: &Path, plots: bool) -> Result<ExitCode> {
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let report: StudyReport = serde_json::from_str(&text)?;
    if report.format_version != REPORT_FORMAT_VERSION {
        return Err(Error::Unsupported(format!(
            "report format version {} (expected {REPORT_FORMAT_VERSION})",
            report.format_version
        )));
    }
    create_dir(out)?;
    let written = emit_tables(&report, out, plots)?;
    println!("wrote {} file(s) to {}", written.len(), out.display());
    report_failures(&report)
}
