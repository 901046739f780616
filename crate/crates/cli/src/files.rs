//! Reading the JSON inputs the commands take.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use stars::factorybot::GridInstance;
use stars::sim::{ScheduledCommand, StateRef, TabularPolicy};
use stars::session::{script_to_schedule, ClientMessage};
use stars::synth::{Objective, StrategyTemplate};
use stars::Mdp;

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes through a temporary file in the same directory, so readers never
/// see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

pub fn read_mdp(path: &Path) -> Result<Mdp> {
    Mdp::from_json_str(&read(path)?).with_context(|| format!("parsing MDP {}", path.display()))
}

pub fn read_policy(path: &Path, mdp: &Mdp) -> Result<TabularPolicy> {
    let json: BTreeMap<String, BTreeMap<String, f64>> = serde_json::from_str(&read(path)?)?;
    Ok(TabularPolicy::from_json(&json, mdp)?)
}

pub fn read_template(path: &Path, mdp: &Mdp) -> Result<StrategyTemplate> {
    StrategyTemplate::from_json_str(&read(path)?, mdp).with_context(|| format!("parsing template {}", path.display()))
}

pub fn read_instance(path: &Path) -> Result<GridInstance> {
    GridInstance::from_json_str(&read(path)?).with_context(|| format!("parsing instance {}", path.display()))
}

/// The instance name a file stands for: its stem.
pub fn instance_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// `*.json` files of a directory, sorted by name.
pub fn instance_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}

fn states(mdp: &Mdp, refs: &[StateRef]) -> Result<Vec<usize>> {
    Ok(refs.iter().map(|r| r.resolve(mdp)).collect::<Result<_, _>>()?)
}

/// `buchi:cells.json`, `reach:cells.json` or `parity:colors.json`. A cells
/// file lists state names or `[x, y]` cells; a colors file is a list with
/// one color per state or an object from state name to color.
pub fn parse_objective(spec: &str, mdp: &Mdp) -> Result<Objective> {
    let (kind, file) = spec.split_once(':').context("objective must look like kind:file")?;
    let text = read(Path::new(file))?;
    match kind {
        "buchi" | "reach" => {
            let refs: Vec<StateRef> = serde_json::from_str(&text)?;
            let target = states(mdp, &refs)?;
            Ok(if kind == "buchi" {
                Objective::Buchi { target }
            } else {
                Objective::Reach { target }
            })
        }
        "parity" => {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let colors = match v {
                serde_json::Value::Array(_) => serde_json::from_value::<Vec<u32>>(v)?,
                serde_json::Value::Object(_) => {
                    let map: BTreeMap<String, u32> = serde_json::from_value(v)?;
                    let mut colors = vec![0; mdp.num_states()];
                    for (name, c) in map {
                        let q = mdp.state_by_name(&name).with_context(|| format!("unknown state {name}"))?;
                        colors[q] = c;
                    }
                    colors
                }
                _ => bail!("colors must be a list or an object"),
            };
            if colors.len() != mdp.num_states() {
                bail!("{} colors for {} states", colors.len(), mdp.num_states());
            }
            Ok(Objective::Parity { colors })
        }
        other => bail!("unknown objective kind {other}"),
    }
}

/// A schedule file: either a list of `{"at": t, ...command}` entries or a
/// session script (protocol messages), which also fixes the step count.
pub fn read_schedule(path: &Path) -> Result<(Vec<ScheduledCommand>, Option<u64>)> {
    let v: serde_json::Value = serde_json::from_str(&read(path)?)?;
    let items = v.as_array().context("schedule must be a JSON list")?;
    if items.iter().all(|x| x.get("at").is_some()) {
        Ok((serde_json::from_value(v)?, None))
    } else {
        let mut msgs = Vec::new();
        for mut item in items.iter().cloned() {
            if let Some(o) = item.as_object_mut() {
                o.remove("session");
            }
            msgs.push(serde_json::from_value::<ClientMessage>(item)?);
        }
        let (sched, total) = script_to_schedule(&msgs);
        Ok((sched, Some(total)))
    }
}

/// `5..9` (inclusive) or `5,7,9`.
pub fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim_start_matches('=').trim().parse()?);
        if a > b {
            bail!("empty size range {s}");
        }
        Ok((a..=b).collect())
    } else {
        Ok(s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_sizes("5..9").unwrap(), vec![5, 6, 7, 8, 9]);
        assert_eq!(parse_sizes("5..=6").unwrap(), vec![5, 6]);
        assert_eq!(parse_sizes("7, 5").unwrap(), vec![7, 5]);
        assert!(parse_sizes("9..5").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_atomic(&p, b"a").unwrap();
        write_atomic(&p, b"b").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "b");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
