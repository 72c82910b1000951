//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cfx_core::asp::{census, export, parse_program};
use cfx_core::encoding::encode_schema;
use cfx_core::engine::{all_causal_explanations, explain_from_sample, full_report, report};
use cfx_core::report::{from_json, to_json};
use cfx_core::{
    load_table, parse_constraints, parse_rule_program, BucketSpec, ClassifyError, ConstraintSet, Entity, Explanation,
    ExplanationReport, ExternalClassifier, ExternalEndpoint, FeatureSchema, Instance, Label, LabeledSample, Provenance,
    Resp, SchemaFile64, Value,
};
use cfx_oracle::gen::{random_constraints, random_instance, GenConfig};
use cfx_oracle::{admissible_interventions, brute_force_report};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn read(name: &str) -> String {
    fs::read_to_string(data(name)).expect("fixture exists")
}

fn table1_schema() -> FeatureSchema {
    SchemaFile64::parse(&read("table1.toml")).unwrap().categorical().unwrap()
}

fn table1() -> Instance {
    let s = table1_schema();
    let t = load_table(&read("table1.csv"), &s).unwrap();
    let e = Entity::parse(&s, "e1", &["0", "1", "1"]).unwrap();
    Instance::new(s, e, t.into()).unwrap()
}

/// Explanations as sorted lists of (feature name, original value).
fn items(schema: &FeatureSchema, xs: &[Explanation]) -> BTreeSet<Vec<(String, String)>> {
    xs.iter()
        .map(|x| {
            x.items()
                .iter()
                .map(|(&i, v)| (schema.features()[i].name.clone(), v.to_string()))
                .collect()
        })
        .collect()
}

fn expl(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(f, v)| (f.to_string(), v.to_string())).collect()
}

fn criterion_1() -> Check {
    let started = Instant::now();
    let inst = table1();
    let s = inst.schema().clone();
    let r = full_report(&inst).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    let e4 = expl(&[("F1", "0"), ("F2", "1")]);
    let e7 = expl(&[("F2", "1")]);
    let e8 = expl(&[("F2", "1"), ("F3", "1")]);
    let causal = items(&s, r.causal_explanations.as_deref().unwrap_or_default());
    ensure(causal == BTreeSet::from([e4, e7.clone(), e8]), || format!("causal explanations {causal:?}"))?;
    let c = items(&s, &r.c_explanations);
    ensure(c == BTreeSet::from([e7.clone()]), || format!("c-explanations {c:?}"))?;
    let sx = items(&s, &r.s_explanations);
    ensure(sx == BTreeSet::from([e7]), || format!("s-explanations {sx:?}"))?;
    let scores: Vec<Resp> = r.resp.iter().map(|x| x.score).collect();
    let want = vec![Resp::from_integer(0), Resp::from_integer(1), Resp::from_integer(0)];
    ensure(scores == want, || format!("resp {scores:?}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("3 causal, c = s = {{F2=1}}, resp F1=0 F2=1 F3=0, {elapsed:?}"))
}

fn criterion_2() -> Check {
    let started = Instant::now();
    let cfg = GenConfig::default();
    let mut with_denials = 0;
    let cases = 250;
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE + seed);
        let (inst, text) = random_instance(&mut rng, &cfg);
        if !text.is_empty() {
            with_denials += 1;
        }
        let engine = report(&inst).map_err(|e| e.to_string())?;
        let oracle = brute_force_report(&inst).map_err(|e| e.to_string())?;
        ensure(engine.same_results(&oracle), || {
            format!("seed {seed}: engine and oracle differ\nconstraints:\n{text}")
        })?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{cases} instances ({with_denials} with denials) identical, {elapsed:?}"))
}

fn movers_schema() -> FeatureSchema {
    SchemaFile64::parse(&read("movers.toml")).unwrap().categorical().unwrap()
}

fn criterion_3() -> Check {
    let s = movers_schema();
    let gender_rule = parse_rule_program(&read("movers.rules"), &s).map_err(|e| e.to_string())?;
    let liftable = s.index_of("liftable").unwrap();
    let age = s.index_of("age").unwrap();
    let bad = |v: &[Value]| v[liftable].as_str() == "1" && v[age].as_int().is_some_and(|a| a > 80);

    // denial: no admissible final state has liftable = 1 and age > 80
    let old = Entity::parse(&s, "r", &["101", "0", "F", "160", "6", "85"]).unwrap();
    let denial = parse_constraints("deny: liftable = 1 and age > 80.", &s).map_err(|e| e.to_string())?;
    let open = Instance::new(s.clone(), old.clone(), gender_rule.clone().into()).unwrap();
    let reachable = admissible_interventions(&open).map_err(|e| e.to_string())?;
    ensure(reachable.iter().any(|c| bad(&c.state)), || "state never reachable without the denial".into())?;
    let guarded = Instance::new(s.clone(), old, gender_rule.clone().into())
        .unwrap()
        .with_constraints(denial.clone());
    let admissible = admissible_interventions(&guarded).map_err(|e| e.to_string())?;
    ensure(!admissible.iter().any(|c| bad(&c.state)), || "oracle admits liftable=1, age>80".into())?;
    for x in all_causal_explanations(&guarded).map_err(|e| e.to_string())? {
        let mut state = guarded.entity().values().to_vec();
        for (i, c) in x.witness().changes() {
            state[i] = c.value.clone();
        }
        ensure(!bad(&state), || format!("engine explanation reaches liftable=1, age>80: {x:?}"))?;
    }

    // implication: {(gender, M)} comes with liftable = 1 attached
    let both = parse_constraints(&read("movers.cfx"), &s).map_err(|e| e.to_string())?;
    let mary = Entity::parse(&s, "mary", &["101", "0", "F", "160", "6", "28"]).unwrap();
    let gender = s.index_of("gender").unwrap();
    let inst = Instance::new(s.clone(), mary.clone(), gender_rule.clone().into())
        .unwrap()
        .with_constraints(both.clone());
    let r = report(&inst).map_err(|e| e.to_string())?;
    let found = r.s_explanations.iter().find(|x| {
        let w = x.witness();
        w.len() == 2
            && w.get(gender).is_some_and(|c| c.value.as_str() == "M" && c.provenance == Provenance::Explicit)
            && w.get(liftable).is_some_and(|c| c.value.as_str() == "1" && c.provenance == Provenance::Propagated)
    });
    let found = found.ok_or_else(|| format!("no {{gender=M}} + propagated liftable in {:?}", r.s_explanations))?;
    ensure(found.features() == BTreeSet::from([liftable, gender]), || format!("counted features {:?}", found.features()))?;

    let inst = Instance::new(s.clone(), mary, gender_rule.into())
        .unwrap()
        .with_constraints(both)
        .with_count_propagated(false);
    let c = report(&inst).map_err(|e| e.to_string())?.c_explanations;
    ensure(c.len() == 1 && c[0].features() == BTreeSet::from([gender]), || format!("uncounted c {c:?}"))?;
    ensure(c[0].witness().get(liftable).is_some_and(|c| c.provenance == Provenance::Propagated), || {
        "propagated change missing from witness".into()
    })?;
    Ok(format!(
        "{} admissible states, none with liftable=1 and age>80; {{gender=M}} carries propagated liftable=1",
        admissible.len()
    ))
}

fn criterion_4() -> Check {
    let spec = BucketSpec::new("ERE", vec![64.0, 71.0, 76.0, 81.0]).map_err(|e| e.to_string())?;
    for (x, want) in [(65.0, 1), (64.0, 1), (63.0, 0), (81.0, 4)] {
        let got = spec.bucketize(x).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("bucketize({x}) = {got}, want {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let x: f64 = rng.gen_range(0.0..150.0);
        let bits = spec.one_hot(x).map_err(|e| e.to_string())?;
        ensure(bits.iter().map(|&b| b as u32).sum::<u32>() == 1, || format!("one_hot({x}) = {bits:?}"))?;
        ensure(spec.decode(&bits) == Some(spec.bucketize(x).unwrap()), || format!("decode of {x}"))?;
    }
    let file = SchemaFile64::parse(&read("ere.toml")).map_err(|e| e.to_string())?;
    let (schema, groups, _) = encode_schema(&file.features, &file.buckets).map_err(|e| e.to_string())?;
    let two_hot: Vec<Value> = ["0", "1", "1", "0", "0"].map(Value::from).to_vec();
    let one_hot: Vec<Value> = ["0", "1", "0", "0", "0"].map(Value::from).to_vec();
    ensure(schema.arity() == 5, || format!("encoded arity {}", schema.arity()))?;
    ensure(!groups.check_onehot(&two_hot).satisfied, || "two-hot vector accepted".into())?;
    ensure(groups.check_onehot(&one_hot).satisfied, || "one-hot vector rejected".into())?;
    Ok("65->1 64->1 63->0 81->4, 1000 one-hot vectors, two-hot rejected".into())
}

fn tuples(schema: &FeatureSchema) -> Vec<Vec<Value>> {
    let mut out = vec![Vec::new()];
    for f in schema.features() {
        out = out
            .into_iter()
            .flat_map(|p: Vec<Value>| {
                f.domain.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(v.clone());
                    q
                })
            })
            .collect();
    }
    out
}

fn invariants(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inst, text) = random_instance(&mut rng, &GenConfig::default());
    let schema = inst.schema().clone();
    let n = schema.arity() as u64;
    let r = report(&inst).map_err(|e| e.to_string())?;

    // c within s, one size for all c
    let s_sets: BTreeSet<BTreeSet<usize>> = r.s_explanations.iter().map(Explanation::features).collect();
    for c in &r.c_explanations {
        ensure(s_sets.contains(&c.features()), || "c-explanation missing from s".into())?;
        ensure(Some(c.cardinality()) == r.min_cardinality(), || "mixed c sizes".into())?;
    }
    // resp in {0} and {1/k}
    for x in &r.resp {
        let ok = x.score == Resp::from_integer(0) || (1..=n).any(|k| x.score == Resp::new(1, k));
        ensure(ok, || format!("resp {}", x.score))?;
    }
    // top score exactly on c items
    let top = r.resp.iter().map(|x| x.score).max().unwrap_or_default();
    let at_top: BTreeSet<usize> = r
        .resp
        .iter()
        .filter(|x| top > Resp::from_integer(0) && x.score == top)
        .map(|x| x.feature)
        .collect();
    let in_c: BTreeSet<usize> = r.c_explanations.iter().flat_map(Explanation::features).collect();
    ensure(at_top == in_c, || format!("top-resp {at_top:?} vs c items {in_c:?}"))?;

    // adding denials never lowers k*
    let extra = random_constraints(&mut rng, &schema, &GenConfig { denial_rate: 1.0, ..GenConfig::default() });
    let more: ConstraintSet = parse_constraints(&format!("{text}{extra}"), &schema).map_err(|e| e.to_string())?;
    let tighter = Instance::new(schema.clone(), inst.entity().clone(), inst.classifier().clone_table())
        .map_err(|e| e.to_string())?
        .with_constraints(more);
    let r2 = report(&tighter).map_err(|e| e.to_string())?;
    if let (Some(k0), Some(k1)) = (r.min_cardinality(), r2.min_cardinality()) {
        ensure(k1 >= k0, || format!("k* dropped from {k0} to {k1}"))?;
    }

    // a classifier-consistent sample never beats the full space
    let keep: f64 = rng.gen_range(0.1..1.0);
    let rows: Vec<(Entity, Label)> = tuples(&schema)
        .into_iter()
        .filter(|_| rng.gen_bool(keep))
        .map(|t| {
            let l = inst.classifier().classify_values(&t).unwrap();
            (Entity::new(&schema, "s", t).unwrap(), l)
        })
        .collect();
    if !rows.is_empty() {
        let causal: BTreeSet<BTreeSet<usize>> = all_causal_explanations(&inst)
            .map_err(|e| e.to_string())?
            .iter()
            .map(Explanation::features)
            .collect();
        let sampled = Instance::new(schema.clone(), inst.entity().clone(), inst.classifier().clone_table())
            .map_err(|e| e.to_string())?
            .with_constraints(parse_constraints(&text, &schema).unwrap())
            .with_sample(LabeledSample::new(rows).map_err(|e| e.to_string())?);
        let rs = explain_from_sample(&sampled).map_err(|e| e.to_string())?;
        for x in &rs.s_explanations {
            ensure(causal.contains(&x.features()), || "sample explanation not causal in full space".into())?;
        }
        if let (Some(kf), Some(ks)) = (r.min_cardinality(), rs.min_cardinality()) {
            ensure(ks >= kf, || format!("sample k* {ks} below full {kf}"))?;
        }
    }

    // identical serialized reports
    let again = to_json(&schema, &report(&inst).map_err(|e| e.to_string())?);
    ensure(to_json(&schema, &r) == again, || "serialized reports differ".into())
}

trait CloneTable {
    fn clone_table(&self) -> cfx_core::ClassifierSpec;
}

impl CloneTable for cfx_core::ClassifierSpec {
    fn clone_table(&self) -> cfx_core::ClassifierSpec {
        match self {
            cfx_core::ClassifierSpec::Table(t) => t.clone().into(),
            other => panic!("expected a table classifier, got {other:?}"),
        }
    }
}

fn criterion_5() -> Check {
    let started = Instant::now();
    let cases = 1000;
    for seed in 0..cases {
        invariants(0x5EED_0000 + seed).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{cases} random instances, all invariants hold, {elapsed:?}"))
}

fn criterion_6() -> Check {
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/table1.lp");
    let golden = fs::read_to_string(&golden_path).map_err(|e| e.to_string())?;
    let program = export(&table1()).map_err(|e| e.to_string())?;
    let text = program.to_text();
    ensure(text == golden, || "export differs from the golden file".into())?;

    let count = |prefix: &str| program.facts.iter().chain(&program.rules).filter(|l| l.starts_with(prefix)).count();
    ensure(count("dom") == 6, || format!("{} dom facts", count("dom")))?;
    ensure(count("c(") == 8, || format!("{} classifier facts", count("c(")))?;
    ensure(count("expl") == 3, || format!("{} expl rules", count("expl")))?;
    ensure(program.weak_constraints.len() == 3, || "weak constraint count".into())?;
    ensure(program.strong_constraints.len() == 1, || "strong constraint count".into())?;
    ensure(program.facts.contains(&"e(e1,0,1,1,o).".to_string()), || "entity fact".into())?;
    let parsed = parse_program(&text).map_err(|e| e.to_string())?;
    let [facts, rules, strong, weak] = census(&parsed);
    ensure([facts, strong, weak] == [15, 1, 3], || format!("parsed census {:?}", census(&parsed)))?;

    let out = Command::new(env!("CARGO_BIN_EXE_cfx"))
        .args(["export-asp", "--schema"])
        .arg(data("table1.toml"))
        .arg("--classifier")
        .arg(data("table1.csv"))
        .arg("--entity")
        .arg(data("e1.csv"))
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success() && out.stdout == golden.as_bytes(), || "CLI export differs from golden".into())?;
    Ok(format!("golden match, {facts} facts / {rules} rules / {strong} strong / {weak} weak, re-parses"))
}

fn criterion_7() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("requests.log");
    let server = format!(
        "cmd:{} --schema {} --classifier {} --name table1 --log {}",
        env!("CARGO_BIN_EXE_cfx-serve"),
        data("table1.toml").display(),
        data("table1.csv").display(),
        log.display()
    );
    let out = Command::new(env!("CARGO_BIN_EXE_cfx"))
        .args(["explain", "--order", "all", "--format", "json", "--schema"])
        .arg(data("table1.toml"))
        .args(["--classifier", &server, "--entity"])
        .arg(data("e1.csv"))
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("cfx failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let remote: ExplanationReport = from_json(&text, &table1_schema()).map_err(|e| e.to_string())?;
    let local = full_report(&table1()).map_err(|e| e.to_string())?;
    ensure(remote.same_results(&local), || "external report differs from the table report".into())?;

    let logged = fs::read_to_string(&log).map_err(|e| e.to_string())?;
    let requests: Vec<&str> = logged.lines().filter(|l| l.starts_with("CLASSIFY ")).collect();
    let bodies: BTreeSet<&str> = requests.iter().filter_map(|l| l.rsplit(' ').next()).collect();
    ensure(requests.len() == bodies.len(), || format!("repeated tuples in {requests:?}"))?;
    ensure(requests.len() <= 8, || format!("{} requests for 8 tuples", requests.len()))?;

    let deadline = Duration::from_millis(400);
    let endpoint = ExternalEndpoint::new("read l; echo OK stall; sleep 30", 3).with_timeout(deadline);
    let stalled = ExternalClassifier::connect(endpoint).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let res = stalled.classify(Some("e1"), &["0", "1", "1"].map(Value::from));
    let took = started.elapsed();
    ensure(matches!(res, Err(ClassifyError::ExternalTimeout(_))), || format!("got {res:?}"))?;
    ensure(took >= deadline && took <= deadline + Duration::from_millis(100), || format!("timed out after {took:?}"))?;
    Ok(format!(
        "same report over the protocol, {} distinct CLASSIFY lines, timeout after {took:?} (deadline {deadline:?})",
        requests.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 7] = [
        ("table 1 reproduction", criterion_1),
        ("engine equals oracle", criterion_2),
        ("denial and implication scenario", criterion_3),
        ("bucketization", criterion_4),
        ("invariant suite", criterion_5),
        ("ASP export", criterion_6),
        ("external protocol", criterion_7),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {} {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
