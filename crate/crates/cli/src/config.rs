//! Layered run configuration: defaults < file < flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use vinenav::env::EnvConfig;
use vinenav::eval::EvalConfig;
use vinenav::sac::SacConfig;
use vinenav::world::WorldConfig;

pub const SNAPSHOT: &str = "resolved_config.toml";
pub const PROVENANCE: &str = "provenance.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// Episodes between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub trace_steps: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            checkpoint_every: 50,
            trace_steps: 100,
        }
    }
}

/// Files a subcommand reads. Empty means unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Inputs {
    pub world: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub inputs: Inputs,
    pub world: WorldConfig,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Default,
    Preset(String),
    File(PathBuf),
    Flag(String),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Default => write!(f, "default"),
            Source::Preset(p) => write!(f, "preset:{p}"),
            Source::File(p) => write!(f, "file:{}", p.display()),
            Source::Flag(name) => write!(f, "flag:{name}"),
        }
    }
}

/// Rejected user input; maps to the usage exit code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Leaf path → source of its value.
pub type Provenance = BTreeMap<String, String>;

/// Tagged enums are replaced as a whole so their variant fields never mix.
fn is_atomic(t: &Table) -> bool {
    t.contains_key("mode") || t.contains_key("kind")
}

fn mark(prov: &mut Provenance, path: &str, v: &Value, src: &Source) {
    if !path.is_empty() {
        let prefix = format!("{path}.");
        prov.retain(|k, _| k != path && !k.starts_with(&prefix));
    }
    leaves(prov, path, v, src);
}

fn leaves(prov: &mut Provenance, path: &str, v: &Value, src: &Source) {
    match v {
        Value::Table(t) if !t.is_empty() => {
            for (k, child) in t {
                leaves(prov, &join(path, k), child, src);
            }
        }
        _ => {
            prov.insert(path.to_string(), src.to_string());
        }
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn merge(base: &mut Table, over: &Table, path: &str, src: &Source, prov: &mut Provenance) -> anyhow::Result<()> {
    for (k, v) in over {
        let p = join(path, k);
        let Some(slot) = base.get_mut(k) else {
            return Err(usage(format!("unknown configuration key `{p}`")));
        };
        match (slot, v) {
            (Value::Table(b), Value::Table(o)) if !is_atomic(b) && !is_atomic(o) => merge(b, o, &p, src, prov)?,
            (slot, v) => {
                if slot.type_str() != v.type_str() && !(is_number(slot) && is_number(v)) {
                    return Err(usage(format!(
                        "`{p}` expects {}, got {}",
                        slot.type_str(),
                        v.type_str()
                    )));
                }
                *slot = coerce(slot, v.clone());
                mark(prov, &p, slot, src);
            }
        }
    }
    Ok(())
}

fn is_number(v: &Value) -> bool {
    matches!(v, Value::Integer(_) | Value::Float(_))
}

/// An integer literal given for a float field is widened.
fn coerce(slot: &Value, v: Value) -> Value {
    match (slot, v) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    }
}

/// Parses `VALUE` as a TOML literal, falling back to a bare string.
pub fn parse_literal(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn nested(path: &str, v: Value) -> Table {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().unwrap_or_default();
    let mut t = Table::new();
    t.insert(last.to_string(), v);
    for p in parts.into_iter().rev() {
        let mut outer = Table::new();
        outer.insert(p.to_string(), Value::Table(t));
        t = outer;
    }
    t
}

/// Accumulates layers and resolves them into a [`RunConfig`].
pub struct Builder {
    tree: Table,
    prov: Provenance,
}

impl Builder {
    pub fn new() -> anyhow::Result<Self> {
        let tree = Table::try_from(RunConfig::default())?;
        let mut prov = Provenance::new();
        mark(&mut prov, "", &Value::Table(tree.clone()), &Source::Default);
        Ok(Self { tree, prov })
    }

    pub fn world_preset(&mut self, name: &str) -> anyhow::Result<()> {
        let cfg = WorldConfig::preset(name).ok_or_else(|| usage(format!("unknown world preset `{name}`")))?;
        let v = Value::try_from(cfg)?;
        mark(&mut self.prov, "world", &v, &Source::Preset(name.into()));
        self.tree.insert("world".into(), v);
        Ok(())
    }

    pub fn file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let over: Table = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        merge(&mut self.tree, &over, "", &Source::File(path.to_path_buf()), &mut self.prov)
    }

    pub fn set(&mut self, path: &str, value: Value, flag: &str) -> anyhow::Result<()> {
        if path.is_empty() || path.split('.').any(str::is_empty) {
            return Err(usage(format!("malformed key `{path}`")));
        }
        merge(&mut self.tree, &nested(path, value), "", &Source::Flag(flag.into()), &mut self.prov)
    }

    /// Applies a `key=value` override.
    pub fn assignment(&mut self, raw: &str) -> anyhow::Result<()> {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| usage(format!("`--set {raw}` is not of the form key=value")))?;
        self.set(k.trim(), parse_literal(v.trim()), "--set")
    }

    pub fn resolve(self) -> anyhow::Result<(RunConfig, Provenance)> {
        let cfg: RunConfig = Value::Table(self.tree)
            .try_into()
            .map_err(|e: toml::de::Error| usage(format!("configuration: {e}")))?;
        Ok((cfg, self.prov))
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes the snapshot and provenance next to the outputs.
    pub fn persist(&self, prov: &Provenance, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(SNAPSHOT), self.to_toml()?)?;
        std::fs::write(dir.join(PROVENANCE), toml::to_string(prov)?)?;
        Ok(())
    }
}
