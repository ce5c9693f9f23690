//! Region manifest files.
//!
//! One manifest describes the region partition of one workload. The format
//! is line oriented; every record is a single line of whitespace separated
//! `key=value` pairs:
//!
//! ```text
//! # comments and blank lines are ignored
//! workload=cnn_mnist
//! id=conv class=candidate time_fraction=0.66 executions=23040 checks=4608 store_fraction=0.02 lower=-8.5 upper=8.5 mode=drop
//! id=out class=crucial time_fraction=0.01 executions=10
//! ```
//!
//! The `workload=` line must precede every region record. Region keys:
//!
//! | key              | required | value                                   |
//! |------------------|----------|-----------------------------------------|
//! | `id`             | yes      | unique region name                      |
//! | `class`          | yes      | `crucial` or `candidate`                |
//! | `time_fraction`  | yes      | share of baseline inference time, [0,1] |
//! | `executions`     | no (1)   | region executions per inference         |
//! | `checks`         | no (0)   | bound checks per inference              |
//! | `store_fraction` | no (0)   | share of the region's instructions that are stores |
//! | `lower`,`upper`,`mode` | all or none | bound checker; mode `clamp` or `drop` |
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `format(parse(text))` preserves every value exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{validate_region_set, BoundMode, BoundSpec, RegionClass, RegionDescriptor, RegionTable};

pub fn parse(text: &str, origin: &str) -> Result<RegionTable> {
    let err = |line: usize, message: String| Error::Manifest { path: origin.to_owned(), line, message };
    let mut workload: Option<String> = None;
    let mut regions = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = Vec::new();
        for token in line.split_whitespace() {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected key=value, found `{token}`")))?;
            if fields.iter().any(|(key, _)| *key == k) {
                return Err(err(line_no, format!("repeated key `{k}`")));
            }
            fields.push((k, v));
        }
        if let [("workload", name)] = fields.as_slice() {
            workload = Some((*name).to_owned());
            continue;
        }
        let workload = workload
            .as_deref()
            .ok_or_else(|| err(line_no, "region record before the `workload=` line".into()))?;
        regions.push(parse_record(&fields, workload).map_err(|m| err(line_no, m))?);
    }
    if regions.is_empty() {
        return Err(err(0, "manifest declares no regions".into()));
    }
    validate_region_set(regions)
}

fn parse_record(fields: &[(&str, &str)], workload: &str) -> std::result::Result<RegionDescriptor, String> {
    let get = |key: &str| fields.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
    let float = |key: &str| -> std::result::Result<Option<f64>, String> {
        get(key).map(|v| v.parse::<f64>().map_err(|_| format!("`{key}` is not a number: `{v}`"))).transpose()
    };
    let int = |key: &str| -> std::result::Result<Option<u64>, String> {
        get(key).map(|v| v.parse::<u64>().map_err(|_| format!("`{key}` is not an integer: `{v}`"))).transpose()
    };
    const KNOWN: [&str; 9] =
        ["id", "class", "time_fraction", "executions", "checks", "store_fraction", "lower", "upper", "mode"];
    if let Some((k, _)) = fields.iter().find(|(k, _)| !KNOWN.contains(k)) {
        return Err(format!("unknown key `{k}`"));
    }

    let id = get("id").ok_or("missing `id`")?;
    let class = match get("class").ok_or("missing `class`")? {
        "crucial" => RegionClass::Crucial,
        "candidate" => RegionClass::NonCrucialCandidate,
        other => return Err(format!("unknown class `{other}`")),
    };
    let time_fraction = float("time_fraction")?.ok_or("missing `time_fraction`")?;
    let mut region = RegionDescriptor::new(id, workload, class, time_fraction)
        .with_executions(int("executions")?.unwrap_or(1))
        .with_checks(int("checks")?.unwrap_or(0))
        .with_store_fraction(float("store_fraction")?.unwrap_or(0.0));

    match (float("lower")?, float("upper")?, get("mode")) {
        (None, None, None) => {}
        (Some(lower), Some(upper), Some(mode)) => {
            let mode = match mode {
                "clamp" => BoundMode::Clamp,
                "drop" => BoundMode::Drop,
                other => return Err(format!("unknown bound mode `{other}`")),
            };
            region.bound = Some(BoundSpec { lower, upper, mode });
        }
        _ => return Err("`lower`, `upper` and `mode` must appear together".into()),
    }
    Ok(region)
}

pub fn format(table: &RegionTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "workload={}", table.workload());
    for r in table.iter() {
        let class = match r.class {
            RegionClass::Crucial => "crucial",
            RegionClass::NonCrucialCandidate => "candidate",
        };
        let _ = write!(
            out,
            "id={} class={class} time_fraction={:?} executions={} checks={} store_fraction={:?}",
            r.id, r.time_fraction, r.executions, r.checks, r.store_fraction
        );
        if let Some(b) = &r.bound {
            let mode = match b.mode {
                BoundMode::Clamp => "clamp",
                BoundMode::Drop => "drop",
            };
            let _ = write!(out, " lower={:?} upper={:?} mode={mode}", b.lower, b.upper);
        }
        out.push('\n');
    }
    out
}

pub fn load(path: &Path) -> Result<RegionTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, &path.display().to_string())
}
