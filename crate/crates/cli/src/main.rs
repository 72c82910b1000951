use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use cfx_core::encoding::{encode_csv, encode_schema, schema_to_toml, select_entity};
use cfx_core::report::{approx, to_json, to_json_value};
use cfx_core::{
    asp, full_report, load_table, parse_constraints, parse_rule_program, report, ClassifierSpec, ConstraintSet,
    Entity, EngineError, Explanation, ExplanationReport, ExternalClassifier, ExternalEndpoint, FeatureSchema, Instance,
    LabeledSample, Provenance, SchemaFile64, DEFAULT_TIMEOUT,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Counterfactual explanations and responsibility scores for classifiers.
#[derive(Parser)]
#[command(name = "cfx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain why the entity gets label 1.
    Explain {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = Order::C)]
        order: Order,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Responsibility score of every feature value.
    Resp {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Write the instance as an answer-set program.
    ExportAsp {
        #[command(flatten)]
        input: InputArgs,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bucketize numeric features into one-hot binary features.
    Encode {
        /// Schema file with `buckets` entries.
        #[arg(long)]
        schema: PathBuf,
        /// Raw CSV data to translate.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Writes schema.toml, constraints.cfx and data.csv here instead of printing.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    schema: PathBuf,
    /// A `.csv` decision table, a rule file, or `cmd:<launch line>` for an external process.
    #[arg(long)]
    classifier: String,
    /// CSV with a header and one or more entity rows.
    #[arg(long)]
    entity: PathBuf,
    /// Row to explain when the entity file has several.
    #[arg(long)]
    entity_id: Option<String>,
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Labeled CSV sample; restricts the search to its label-0 rows.
    #[arg(long)]
    sample: Option<PathBuf>,
    #[arg(long)]
    max_card: Option<usize>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    count_propagated: bool,
    /// Maximum number of classifier calls.
    #[arg(long)]
    budget: Option<usize>,
    /// Per-request deadline for external classifiers.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_millis() as u64)]
    timeout_ms: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Order {
    C,
    S,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_schema(path: &Path) -> Result<FeatureSchema> {
    let file = SchemaFile64::parse(&read(path)?).with_context(|| format!("schema {}", path.display()))?;
    file.categorical()
        .with_context(|| format!("schema {} (run `cfx encode` first)", path.display()))
}

fn load_classifier(spec: &str, schema: &FeatureSchema, timeout: Duration) -> Result<ClassifierSpec> {
    if let Some(cmd) = spec.strip_prefix("cmd:") {
        let endpoint = ExternalEndpoint::new(cmd, schema.arity()).with_timeout(timeout);
        let ext = ExternalClassifier::connect(endpoint).context("starting external classifier")?;
        log::info!("external classifier `{}` connected", ext.name());
        return Ok(ext.into());
    }
    let path = Path::new(spec);
    let text = read(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let t = load_table(&text, schema).with_context(|| format!("classifier table {spec}"))?;
        Ok(t.into())
    } else {
        let p = parse_rule_program(&text, schema).with_context(|| format!("rule file {spec}"))?;
        Ok(p.into())
    }
}

fn build_instance(a: &InputArgs) -> Result<Instance> {
    let schema = load_schema(&a.schema)?;
    let entity = select_entity(&read(&a.entity)?, &schema, a.entity_id.as_deref())
        .with_context(|| format!("entity file {}", a.entity.display()))?;
    let constraints = match &a.constraints {
        Some(p) => parse_constraints(&read(p)?, &schema).with_context(|| format!("constraints {}", p.display()))?,
        None => ConstraintSet::new(&schema),
    };
    let classifier = load_classifier(&a.classifier, &schema, Duration::from_millis(a.timeout_ms))?;
    let mut inst = Instance::new(schema.clone(), entity, classifier)?
        .with_constraints(constraints)
        .with_count_propagated(a.count_propagated);
    if let Some(p) = &a.sample {
        let sample = LabeledSample::from_csv(&read(p)?, &schema).with_context(|| format!("sample {}", p.display()))?;
        inst = inst.with_sample(sample);
    }
    if let Some(k) = a.max_card {
        inst = inst.with_max_cardinality(k)?;
    }
    if let Some(b) = a.budget {
        inst = inst.with_budget(b);
    }
    Ok(inst)
}

fn render(schema: &FeatureSchema, e: &Entity, x: &Explanation) -> String {
    let items: Vec<String> = x
        .items()
        .iter()
        .map(|(&i, v)| format!("{}={}", schema.features()[i].name, v))
        .collect();
    let changes: Vec<String> = x
        .witness()
        .changes()
        .map(|(i, c)| {
            let mark = match (c.provenance, x.contains(i)) {
                (Provenance::Explicit, _) => "",
                (Provenance::Propagated, true) => " (propagated)",
                (Provenance::Propagated, false) => " (propagated, not counted)",
            };
            format!("{}: {} -> {}{mark}", schema.features()[i].name, e.value(i), c.value)
        })
        .collect();
    format!("{{{}}}  via {}", items.join(", "), changes.join("; "))
}

fn resp_lines(schema: &FeatureSchema, r: &ExplanationReport) -> String {
    let width = schema.names().map(str::len).max().unwrap_or(0);
    r.resp
        .iter()
        .map(|x| {
            let name = &schema.features()[x.feature].name;
            format!("{name:<width$}  {}  {}  ({})\n", x.value, x.score, approx(x.score))
        })
        .collect()
}

fn table_output(schema: &FeatureSchema, r: &ExplanationReport, order: Order) -> String {
    let mut out = String::new();
    let values: Vec<String> = schema
        .names()
        .zip(r.entity.values())
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    out.push_str(&format!("entity {}: {}\n", r.entity.id(), values.join(" ")));
    let mut section = |title: String, xs: &[Explanation]| {
        out.push_str(&format!("\n{title}\n"));
        if xs.is_empty() {
            out.push_str("  (none)\n");
        }
        for x in xs {
            out.push_str(&format!("  {}\n", render(schema, &r.entity, x)));
        }
    };
    match r.min_cardinality() {
        Some(k) => section(format!("c-explanations (size {k}):"), &r.c_explanations),
        None => section("c-explanations:".to_string(), &r.c_explanations),
    }
    if order != Order::C {
        section("s-explanations:".to_string(), &r.s_explanations);
    }
    if let Some(all) = &r.causal_explanations {
        section("causal explanations:".to_string(), all);
    }
    out.push_str("\nresponsibility:\n");
    for line in resp_lines(schema, r).lines() {
        out.push_str(&format!("  {line}\n"));
    }
    let d = &r.diagnostics;
    out.push_str(&format!(
        "\n{} candidates, {} classifier calls, {} pruned by constraints",
        d.candidates_tested, d.classifier_calls, d.pruned_by_constraints
    ));
    if d.truncated {
        out.push_str(&format!(", searched up to size {}", d.max_cardinality));
    }
    if d.budget_exhausted {
        out.push_str(", budget exhausted (results incomplete)");
    }
    out.push('\n');
    out
}

fn explain(input: &InputArgs, order: Order, format: Format) -> Result<()> {
    let inst = build_instance(input)?;
    let started = Instant::now();
    let r = if order == Order::All { full_report(&inst)? } else { report(&inst)? };
    log::info!("search finished in {:?}", started.elapsed());
    match format {
        Format::Json => emit(&format!("{}\n", to_json(inst.schema(), &r))),
        Format::Table => emit(&table_output(inst.schema(), &r, order)),
    }
}

fn resp(input: &InputArgs, format: Format) -> Result<()> {
    let inst = build_instance(input)?;
    let r = report(&inst)?;
    match format {
        Format::Json => {
            let v = to_json_value(inst.schema(), &r);
            emit(&format!("{:#}\n", v["resp"]))
        }
        Format::Table => emit(&resp_lines(inst.schema(), &r)),
    }
}

fn export_asp(input: &InputArgs, out: Option<&Path>) -> Result<()> {
    let inst = build_instance(input)?;
    let text = asp::export(&inst)?.to_text();
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => emit(&text)?,
    }
    Ok(())
}

fn encode(schema: &Path, data: Option<&Path>, out_dir: Option<&Path>) -> Result<()> {
    let file = SchemaFile64::parse(&read(schema)?).with_context(|| format!("schema {}", schema.display()))?;
    let (encoded, groups, encoder) = encode_schema(&file.features, &file.buckets)?;
    let csv = match data {
        Some(p) => Some(encode_csv(&read(p)?, &file.features, &encoded, &encoder).with_context(|| format!("data {}", p.display()))?),
        None => None,
    };
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(dir.join("schema.toml"), schema_to_toml(&encoded))?;
            fs::write(dir.join("constraints.cfx"), groups.to_text())?;
            if let Some(csv) = csv {
                fs::write(dir.join("data.csv"), csv)?;
            }
        }
        None => match csv {
            Some(csv) => emit(&csv)?,
            None => {
                let mut text = schema_to_toml(&encoded);
                if !groups.is_empty() {
                    text.push_str(&format!("\n# constraints\n{}", comment_out(&groups.to_text())));
                }
                emit(&text)?;
            }
        },
    }
    Ok(())
}

/// Writes to stdout; a closed pipe on the reading side is not an error.
fn emit(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => other.context("writing to stdout"),
    }
}

fn comment_out(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Explain { input, order, format } => explain(&input, order, format),
        Command::Resp { input, format } => resp(&input, format),
        Command::ExportAsp { input, out } => export_asp(&input, out.as_deref()),
        Command::Encode { schema, data, out_dir } => encode(&schema, data.as_deref(), out_dir.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("CFX_LOG")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(EngineError::NothingToExplain(_)) = e.downcast_ref::<EngineError>() {
                return ExitCode::from(2);
            }
            ExitCode::from(1)
        }
    }
}
