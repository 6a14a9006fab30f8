//! Config files (TOML or JSON) with `key.path=value` overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use toml::{Table, Value};

use pwtt::pipeline::RunConfig;
use pwtt::sim::SimSpec;

/// Reads a TOML or JSON (by `.json` extension) file into a table.
pub fn load_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Recursively overlays `over` onto `base`; tables merge, everything else
/// is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML literal
/// and falls back to a plain string, so `seed=7`, `threshold.mode="fixed"`
/// and `output_dir=out` all work.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override {spec:?} is not key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override {spec:?} has an empty key segment");
    }
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => bail!("override {spec:?}: {p} is not a table"),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Run config from a file plus overrides; relative paths resolve against
/// the file's directory.
pub fn run_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let mut t = load_table(path)?;
    for o in overrides {
        apply_override(&mut t, o)?;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(RunConfig::from_toml(&toml::to_string(&t)?, base)?)
}

/// Simulation spec: defaults, then the optional file, then overrides.
pub fn sim_spec(path: Option<&Path>, null_case: bool, overrides: &[String]) -> Result<SimSpec> {
    let base = if null_case { SimSpec::null_case() } else { SimSpec::default() };
    let mut t = Table::try_from(&base).context("serializing default simulation spec")?;
    if let Some(p) = path {
        let file = load_table(p)?;
        // a full event plan or layout replaces the default rather than merging into it
        for k in ["events", "layout"] {
            if file.contains_key(k) {
                t.remove(k);
            }
        }
        merge(&mut t, file);
    }
    for o in overrides {
        apply_override(&mut t, o)?;
    }
    let spec: SimSpec = t.try_into().context("invalid simulation spec")?;
    spec.validate()?;
    Ok(spec)
}

/// A run config pointing at a simulated dataset in `dir`.
pub fn sim_run_config(spec: &SimSpec) -> String {
    let event = match spec.event_date() {
        Some(d) => d.to_string(),
        None => {
            let (y, m, d) = pwtt::sim::DEFAULT_EVENT;
            format!("{y}-{m:02}-{d:02}")
        }
    };
    format!(
        r#"manifest = "manifest.json"
footprints = "footprints.geojson"
annotations = "annotations.geojson"
events = "events.geojson"
output_dir = "run"
seed = {seed}

[window]
reference = ["{start}", "{event}"]
inference = ["{event}", "{end}"]
"#,
        seed = spec.seed,
        start = spec.start,
        end = spec.end,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_literals_and_paths() {
        let mut t = Table::new();
        apply_override(&mut t, "seed=7").unwrap();
        apply_override(&mut t, "threshold.mode=\"fixed\"").unwrap();
        apply_override(&mut t, "threshold.value=2.5").unwrap();
        apply_override(&mut t, "output_dir=out/a").unwrap();
        assert_eq!(t["seed"].as_integer(), Some(7));
        assert_eq!(t["threshold"]["mode"].as_str(), Some("fixed"));
        assert_eq!(t["threshold"]["value"].as_float(), Some(2.5));
        assert_eq!(t["output_dir"].as_str(), Some("out/a"));
        assert!(apply_override(&mut t, "noequals").is_err());
        assert!(apply_override(&mut t, "seed.x=1").is_err());
        assert!(apply_override(&mut t, "a..b=1").is_err());
    }

    #[test]
    fn merge_is_deep() {
        let mut a: Table = toml::from_str("x = 1\n[g]\nw = 2\nh = 3").unwrap();
        merge(&mut a, toml::from_str("[g]\nh = 9").unwrap());
        assert_eq!(a["g"]["w"].as_integer(), Some(2));
        assert_eq!(a["g"]["h"].as_integer(), Some(9));
    }

    #[test]
    fn default_spec_round_trips() {
        assert_eq!(sim_spec(None, false, &[]).unwrap(), SimSpec::default());
        let s = sim_spec(None, true, &["grid.width=32".into(), "seed=3".into()]).unwrap();
        assert_eq!((s.grid.width, s.seed), (32, 3));
        assert!(s.event_date().is_none());
    }
}
