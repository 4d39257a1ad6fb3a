//! The shipped example configs and the published schema agree with the parser.

use std::fs;
use std::path::{Path, PathBuf};

use hetsgd_cli::config::ExperimentConfig;
use serde_json::{json, Value};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn validator() -> jsonschema::Validator {
    let text = fs::read_to_string(root().join("docs/config.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn examples() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(root().join("configs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    v
}

#[test]
fn examples_parse_and_match_the_schema() {
    let schema = validator();
    let paths = examples();
    assert!(paths.len() >= 5);
    for path in paths {
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
        let raw: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let errors: Vec<String> = schema.iter_errors(&raw).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{}: {errors:?}", path.display());
        // The canonical form, with defaults filled in, is valid too.
        let canonical: Value = serde_json::from_str(&cfg.canonical_json()).unwrap();
        let errors: Vec<String> = schema.iter_errors(&canonical).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{} canonical: {errors:?}", path.display());
        assert_eq!(ExperimentConfig::from_json(&cfg.canonical_json()).unwrap(), cfg);
    }
}

#[test]
fn schema_and_parser_reject_the_same_mistakes() {
    let schema = validator();
    let base: Value = serde_json::from_str(
        &fs::read_to_string(root().join("configs/lognormal.json")).unwrap(),
    )
    .unwrap();
    type Mutation = Box<dyn Fn(&mut Value)>;
    let mutations: Vec<(&str, Mutation)> = vec![
        ("unknown top-level key", Box::new(|c| c["epsilon"] = json!(1e-4))),
        ("unknown budget key", Box::new(|c| c["budget"]["wall"] = json!(1))),
        ("unknown delay kind", Box::new(|c| c["cluster"]["delay"] = json!({"kind": "pareto", "a": 2}))),
        ("extra delay field", Box::new(|c| c["cluster"]["delay"]["sigma"] = json!(1))),
        ("negative s", Box::new(|c| c["cluster"]["delay"]["s"] = json!(-1))),
        ("q out of range", Box::new(|c| c["cluster"]["delay"] = json!({"kind": "infbernoulli", "q": 1.0}))),
        ("unknown tau rule", Box::new(|c| c["cluster"]["tau"] = json!("i+1"))),
        ("both delay forms", Box::new(|c| c["cluster"]["delays"] = json!([{"kind": "constant", "c": 0}]))),
        ("zero eps", Box::new(|c| c["eps"] = json!(0))),
        ("empty seeds", Box::new(|c| c["seeds"] = json!([]))),
        ("missing seeds", Box::new(|c| { c.as_object_mut().unwrap().remove("seeds"); })),
        ("bad stop rule", Box::new(|c| c["stop"] = json!("sometimes"))),
        ("bad label", Box::new(|c| c["methods"][0]["label"] = json!("a b"))),
        ("unknown problem", Box::new(|c| c["problem"] = json!({"kind": "rosenbrock", "d": 2}))),
        ("empty sweep", Box::new(|c| c["sweep"] = json!({"axis": "eps", "values": []}))),
        ("bad budget time", Box::new(|c| c["budget"]["time"] = json!("forever"))),
        ("stride zero", Box::new(|c| c["output"]["trace_stride"] = json!(0))),
    ];
    for (what, mutate) in mutations {
        let mut cfg = base.clone();
        mutate(&mut cfg);
        assert!(!schema.is_valid(&cfg), "schema accepts {what}");
        assert!(ExperimentConfig::from_json(&cfg.to_string()).is_err(), "parser accepts {what}");
    }
}
