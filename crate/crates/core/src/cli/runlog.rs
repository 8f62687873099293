//! Run manifests and per-unit idempotency stamps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context as _, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use contactsense::util::atomic_write;
use contactsense::workspace::Workspace;

/// One independently skippable piece of work, usually a trial.
#[derive(Debug, Clone)]
pub struct Unit {
    pub name: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Extra values folded into the input key (e.g. a resolved profile).
    pub extra: Value,
    /// Skip when the stamp matches.
    pub stamped: bool,
}

impl Unit {
    pub fn new(name: impl Into<String>) -> Self {
        Unit {
            name: name.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: Value::Null,
            stamped: true,
        }
    }

    pub fn input(mut self, p: impl Into<PathBuf>) -> Self {
        self.inputs.push(p.into());
        self
    }

    pub fn inputs(mut self, ps: impl IntoIterator<Item = PathBuf>) -> Self {
        self.inputs.extend(ps);
        self
    }

    pub fn output(mut self, p: impl Into<PathBuf>) -> Self {
        self.outputs.push(p.into());
        self
    }

    pub fn extra(mut self, v: Value) -> Self {
        self.extra = v;
        self
    }

    pub fn unstamped(mut self) -> Self {
        self.stamped = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Done,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitRecord {
    pub unit: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    seed: u64,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    params: &'a Value,
    units: &'a [UnitRecord],
}

#[derive(Debug, Serialize, Deserialize)]
struct Stamp {
    key: String,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Content hashes of a file, or of every file under a directory. Missing
/// paths hash to "absent".
pub fn hash_path(path: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let key = path.display().to_string();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for e in entries {
            hash_path(&e, out)?;
        }
    } else if path.is_file() {
        out.insert(key, hash_file(path)?);
    } else {
        out.insert(key, "absent".into());
    }
    Ok(())
}

fn hash_all(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    for p in paths {
        hash_path(p, &mut m)?;
    }
    Ok(m)
}

fn input_key(
    command: &str,
    params: &Value,
    unit: &Unit,
    inputs: &BTreeMap<String, String>,
) -> String {
    let doc = serde_json::json!({
        "command": command,
        "params": params,
        "extra": unit.extra,
        "inputs": inputs,
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Records one CLI invocation and writes its manifest under `runs/`.
pub struct Run {
    ws: Workspace,
    command: String,
    params: Value,
    seed: u64,
    force: bool,
    started: u128,
    records: Vec<UnitRecord>,
}

impl Run {
    pub fn new(ws: &Workspace, command: &str, params: Value, seed: u64, force: bool) -> Self {
        Run {
            ws: ws.clone(),
            command: command.to_string(),
            params,
            seed,
            force,
            started: now_ms(),
            records: Vec::new(),
        }
    }

    fn stamp_path(&self, unit: &str) -> PathBuf {
        self.ws
            .runs_dir()
            .join("stamps")
            .join(&self.command)
            .join(format!("{}.json", sanitize(unit)))
    }

    fn is_fresh(&self, unit: &Unit, key: &str) -> bool {
        if self.force || !unit.stamped || unit.outputs.iter().any(|o| !o.exists()) {
            return false;
        }
        std::fs::read_to_string(self.stamp_path(&unit.name))
            .ok()
            .and_then(|s| serde_json::from_str::<Stamp>(&s).ok())
            .is_some_and(|s| s.key == key)
    }

    fn execute<F>(&self, unit: &Unit, f: &F) -> UnitRecord
    where
        F: Fn(&Unit) -> Result<()> + Sync,
    {
        let mut rec = UnitRecord {
            unit: unit.name.clone(),
            status: Status::Done,
            error: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        };
        let result = (|| -> Result<()> {
            rec.inputs = hash_all(&unit.inputs)?;
            let key = input_key(&self.command, &self.params, unit, &rec.inputs);
            if self.is_fresh(unit, &key) {
                rec.status = Status::Skipped;
                log::info!("{}: {} unchanged, skipping", self.command, unit.name);
            } else {
                f(unit)?;
                if unit.stamped {
                    let stamp = serde_json::to_vec(&Stamp { key })?;
                    atomic_write(&self.stamp_path(&unit.name), &stamp)?;
                }
            }
            rec.outputs = hash_all(&unit.outputs)?;
            Ok(())
        })();
        if let Err(e) = result {
            log::error!("{}: {}: {e:#}", self.command, unit.name);
            rec.status = Status::Failed;
            rec.error = Some(format!("{e:#}"));
        }
        rec
    }

    /// Run units on the rayon pool; records keep the input order.
    pub fn units<F>(&mut self, units: &[Unit], f: F)
    where
        F: Fn(&Unit) -> Result<()> + Sync,
    {
        let this = &*self;
        let recs: Vec<UnitRecord> = units.par_iter().map(|u| this.execute(u, &f)).collect();
        self.records.extend(recs);
    }

    pub fn unit<F>(&mut self, unit: Unit, f: F)
    where
        F: Fn(&Unit) -> Result<()> + Sync,
    {
        let rec = self.execute(&unit, &f);
        self.records.push(rec);
    }

    /// Record a unit that failed before it could run.
    pub fn fail(&mut self, unit: &str, err: impl std::fmt::Display) {
        log::error!("{}: {unit}: {err}", self.command);
        self.records.push(UnitRecord {
            unit: unit.to_string(),
            status: Status::Failed,
            error: Some(err.to_string()),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        });
    }

    pub fn succeeded(&self, unit: &str) -> bool {
        self.records
            .iter()
            .any(|r| r.unit == unit && r.status != Status::Failed)
    }

    /// Write the manifest, print the summary, and fail if any unit failed.
    pub fn finish(self) -> Result<()> {
        let manifest = Manifest {
            command: &self.command,
            argv: std::env::args().collect(),
            seed: self.seed,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            params: &self.params,
            units: &self.records,
        };
        let path = self.ws.runs_dir().join(format!(
            "{}-{}-{}.json",
            self.command,
            self.started,
            std::process::id()
        ));
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        atomic_write(&path, text.as_bytes())?;

        let count = |s| self.records.iter().filter(|r| r.status == s).count();
        let (done, skipped, failed) = (
            count(Status::Done),
            count(Status::Skipped),
            count(Status::Failed),
        );
        log::info!(
            "{}: {done} done, {skipped} skipped, {failed} failed (manifest {})",
            self.command,
            path.display()
        );
        if failed > 0 {
            let lines: Vec<String> = self
                .records
                .iter()
                .filter(|r| r.status == Status::Failed)
                .map(|r| format!("  {}: {}", r.unit, r.error.as_deref().unwrap_or("")))
                .collect();
            anyhow::bail!(
                "{failed} of {} units failed:\n{}",
                self.records.len(),
                lines.join("\n")
            );
        }
        Ok(())
    }
}
