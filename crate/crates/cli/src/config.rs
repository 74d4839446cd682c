//! Layered TOML configuration.
//!
//! A command starts from its built-in defaults, overlays the keys of an
//! optional config file, then applies `--set key=value` overrides in order.
//! Dotted keys address nested tables (`clipping.kind=whole_batch`). A value
//! is read as a TOML literal when it parses as one and as a bare string
//! otherwise, so `--set loss=softmax_cross_entropy` needs no quoting.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

fn merge(into: &mut Table, from: Table) {
    for (key, value) in from {
        match (into.get_mut(&key), value) {
            (Some(Value::Table(dst)), Value::Table(src)) => merge(dst, src),
            (_, value) => {
                into.insert(key, value);
            }
        }
    }
}

fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `key=value` override to `table`.
pub fn apply_set(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not of the form key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override {assignment:?} has an empty key segment");
    }
    let mut cursor = table;
    for segment in &path[..path.len() - 1] {
        let slot = cursor
            .entry(segment.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        if !slot.is_table() {
            *slot = Value::Table(Table::new());
        }
        cursor = slot.as_table_mut().expect("just made a table");
    }
    cursor.insert(path[path.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn to_table<T: Serialize>(value: &T) -> Result<Table> {
    match Value::try_from(value)? {
        Value::Table(t) => Ok(t),
        other => bail!("config did not serialize to a table: {other:?}"),
    }
}

/// Resolves `defaults`, then the file table, then each override.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<Table>,
    sets: &[String],
) -> Result<T> {
    let mut table = to_table(defaults)?;
    if let Some(file) = file {
        merge(&mut table, file);
    }
    for s in sets {
        apply_set(&mut table, s)?;
    }
    Value::Table(table)
        .try_into()
        .context("resolving configuration")
}

pub fn render<T: Serialize>(value: &T) -> Result<String> {
    Ok(toml::to_string(&to_table(value)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Inner {
        x: f64,
        tag: String,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Outer {
        n: u64,
        name: String,
        inner: Inner,
    }

    #[test]
    fn layering_order() {
        let file: Table = toml::from_str("n = 3\n[inner]\nx = 1.5\n").unwrap();
        let out: Outer = resolve(
            &Outer::default(),
            Some(file),
            &["n=7".into(), "inner.tag=abc".into(), "name=\"q r\"".into()],
        )
        .unwrap();
        assert_eq!(
            out,
            Outer {
                n: 7,
                name: "q r".into(),
                inner: Inner {
                    x: 1.5,
                    tag: "abc".into()
                }
            }
        );
    }

    #[test]
    fn bad_overrides() {
        let mut t = Table::new();
        assert!(apply_set(&mut t, "novalue").is_err());
        assert!(apply_set(&mut t, "a..b=1").is_err());
        let r: Result<Outer> = resolve(&Outer::default(), None, &["n=oops".into()]);
        assert!(r.is_err());
    }

    #[test]
    fn render_round_trips() {
        let v = Outer {
            n: 2,
            name: "z".into(),
            inner: Inner { x: 0.25, tag: String::new() },
        };
        let text = render(&v).unwrap();
        let back: Outer = toml::from_str(&text).unwrap();
        assert_eq!(back, v);
    }
}
