//! Reference classifier server for the external line protocol.
//!
//! Serves a decision table (`.csv`) or a rule file over stdin/stdout.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use cfx_core::classifier::PROTOCOL;
use cfx_core::{load_table, parse_rule_program, ClassifierSpec, FeatureSchema, SchemaFile64, Value};
use clap::Parser;

#[derive(Parser)]
#[command(name = "cfx-serve", version)]
struct Args {
    #[arg(long)]
    schema: PathBuf,
    /// Decision table (`.csv`) or rule file.
    #[arg(long)]
    classifier: PathBuf,
    /// Name sent back in the handshake.
    #[arg(long, default_value = "cfx-serve")]
    name: String,
    /// Appends every received line to this file.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn load(args: &Args) -> Result<(FeatureSchema, ClassifierSpec)> {
    let text = std::fs::read_to_string(&args.schema).with_context(|| format!("reading {}", args.schema.display()))?;
    let schema = SchemaFile64::parse(&text)?.categorical()?;
    let body = std::fs::read_to_string(&args.classifier)
        .with_context(|| format!("reading {}", args.classifier.display()))?;
    let spec = if args.classifier.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        load_table(&body, &schema)?.into()
    } else {
        parse_rule_program(&body, &schema)?.into()
    };
    Ok((schema, spec))
}

fn answer(schema: &FeatureSchema, spec: &ClassifierSpec, line: &str) -> String {
    let mut parts = line.splitn(3, ' ');
    let (Some("CLASSIFY"), Some(id), Some(body)) = (parts.next(), parts.next(), parts.next()) else {
        return "ERR - malformed request".to_string();
    };
    let values: Vec<Value> = body.split('|').map(Value::new).collect();
    if let Err(e) = schema.check_values(&values) {
        return format!("ERR {id} {e}");
    }
    match spec.classify_values(&values) {
        Ok(l) => format!("LABEL {id} {l}"),
        Err(e) => format!("ERR {id} {e}"),
    }
}

fn main() -> Result<()> {
    let args = Args::parse();
    let (schema, spec) = load(&args)?;
    let mut log: Option<File> = match &args.log {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?,
        ),
        None => None,
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut lines = stdin.lock().lines();

    let hello = lines.next().context("no handshake")??;
    if let Some(f) = log.as_mut() {
        writeln!(f, "{hello}")?;
    }
    let expected = format!("HELLO {PROTOCOL} {}", schema.arity());
    if hello.trim_end() != expected {
        writeln!(out, "ERR - expected `{expected}`")?;
        bail!("bad handshake `{hello}`");
    }
    writeln!(out, "OK {}", args.name)?;
    out.flush()?;

    for line in lines {
        let line = line?;
        if let Some(f) = log.as_mut() {
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        writeln!(out, "{}", answer(&schema, &spec, line))?;
        out.flush()?;
    }
    Ok(())
}
