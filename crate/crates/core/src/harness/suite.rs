//! Suite description files and instance loading.
//!
//! A suite file is TOML. Instances come from explicit `(net, prop)` pairs,
//! from every property applied to every network, and from a robustness
//! manifest applied to every network:
//!
//! ```toml
//! strategies = ["soi", "polarity"]
//! timeout_s = 60
//! seed = 0
//! workers = 4
//! out_dir = "results"
//! networks = ["a.nnet"]
//! properties = ["p.prop"]
//! robust_manifest = "points.txt"
//!
//! [[instances]]
//! net = "net_q0000.nnet"
//! prop = "prop_q0000.prop"
//! ```
//!
//! Relative paths resolve against the suite file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristics::Strategy;
use crate::model::{load_nnet, Network};
use crate::query::{
    make_robustness_queries, parse_property, parse_robustness_manifest, Comparator, Query,
};
use crate::search::Budget;

/// A network with one query against it.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: String,
    pub net: Arc<Network>,
    pub query: Query,
}

/// An instance, or the reason it could not be loaded.
#[derive(Debug, Clone)]
pub struct LoadedInstance {
    pub id: String,
    pub instance: std::result::Result<Instance, String>,
}

impl From<Instance> for LoadedInstance {
    fn from(i: Instance) -> Self {
        LoadedInstance {
            id: i.id.clone(),
            instance: Ok(i),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub net: String,
    pub prop: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteFile {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub networks: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub properties: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust_manifest: Option<String>,
    #[serde(default)]
    pub comparator: Comparator,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instances: Vec<InstanceEntry>,
}

/// A suite file with paths resolved and defaults applied.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub instances: Vec<LoadedInstance>,
    pub strategies: Vec<Strategy>,
    pub budget: Budget,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl SuiteFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("suite file: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("suite file: {e}")))
    }

    pub fn load(path: &Path) -> Result<SuiteConfig> {
        let file = SuiteFile::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        file.resolve(base)
    }

    pub fn resolve(&self, base: &Path) -> Result<SuiteConfig> {
        let strategies = self
            .strategies
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<Strategy>>>()?;
        let timeout = Duration::from_secs_f64(self.timeout_s.unwrap_or(60.0));
        let budget = Budget::new(timeout, self.max_iterations.unwrap_or(u64::MAX), self.seed)?;
        let instances = self.instances(base)?;
        if strategies.is_empty() || instances.is_empty() {
            return Err(Error::InvalidArgument(
                "a suite needs at least one strategy and one query".into(),
            ));
        }
        Ok(SuiteConfig {
            instances,
            strategies,
            budget,
            workers: self.workers.unwrap_or(1).max(1),
            out_dir: base.join(self.out_dir.as_deref().unwrap_or("results")),
            checkpoint: self.checkpoint.as_ref().map(|c| base.join(c)),
        })
    }

    /// Every instance the file describes; unreadable inputs become error
    /// entries rather than failing the whole suite.
    pub fn instances(&self, base: &Path) -> Result<Vec<LoadedInstance>> {
        let mut out = Vec::new();
        for e in &self.instances {
            let id = e.id.clone().unwrap_or_else(|| stem(&e.prop));
            out.push(load_pair(id, &base.join(&e.net), &base.join(&e.prop)));
        }
        for n in &self.networks {
            for p in &self.properties {
                let id = format!("{}/{}", stem(n), stem(p));
                out.push(load_pair(id, &base.join(n), &base.join(p)));
            }
            if let Some(m) = &self.robust_manifest {
                out.extend(load_robustness(
                    n,
                    &base.join(n),
                    &base.join(m),
                    self.comparator,
                ));
            }
        }
        Ok(out)
    }
}

fn stem(p: &str) -> String {
    Path::new(p)
        .file_stem()
        .map_or_else(|| p.to_string(), |s| s.to_string_lossy().into_owned())
}

fn read_net(path: &Path) -> std::result::Result<Network, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    load_nnet(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_pair(id: String, net: &Path, prop: &Path) -> LoadedInstance {
    let instance = (|| {
        let n = read_net(net)?;
        let text = std::fs::read_to_string(prop).map_err(|e| format!("{}: {e}", prop.display()))?;
        let query = parse_property(&text, &n).map_err(|e| format!("{}: {e}", prop.display()))?;
        Ok(Instance {
            id: id.clone(),
            net: Arc::new(n),
            query,
        })
    })();
    LoadedInstance { id, instance }
}

fn load_robustness(
    name: &str,
    net: &Path,
    manifest: &Path,
    comparator: Comparator,
) -> Vec<LoadedInstance> {
    let prefix = stem(name);
    let fail = |e: String| {
        vec![LoadedInstance {
            id: format!("{prefix}/robust"),
            instance: Err(e),
        }]
    };
    let n = match read_net(net) {
        Ok(n) => Arc::new(n),
        Err(e) => return fail(e),
    };
    let rows = match std::fs::read_to_string(manifest)
        .map_err(|e| e.to_string())
        .and_then(|t| parse_robustness_manifest(&t).map_err(|e| e.to_string()))
    {
        Ok(r) => r,
        Err(e) => return fail(format!("{}: {e}", manifest.display())),
    };
    let mut out = Vec::new();
    for (k, row) in rows.iter().enumerate() {
        let label = format!("{prefix}/r{k}");
        match make_robustness_queries(&n, &row.x0, row.delta, comparator, &label) {
            Ok(qs) => out.extend(qs.into_iter().map(|q| {
                LoadedInstance::from(Instance {
                    id: q.label.clone(),
                    net: Arc::clone(&n),
                    query: q,
                })
            })),
            Err(e) => out.push(LoadedInstance {
                id: label,
                instance: Err(e.to_string()),
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{emit_nnet, toy_network};

    #[test]
    fn resolves_pairs_and_reports_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("toy.nnet"), emit_nnet(&toy_network())).unwrap();
        std::fs::write(dir.path().join("ex1.prop"), "out 1 <= -0.5\n").unwrap();
        let text = r#"
strategies = ["soi", "babsr"]
timeout_s = 5
networks = ["toy.nnet"]
properties = ["ex1.prop", "missing.prop"]

[[instances]]
net = "toy.nnet"
prop = "ex1.prop"
"#;
        std::fs::write(dir.path().join("suite.toml"), text).unwrap();
        let cfg = SuiteFile::load(&dir.path().join("suite.toml")).unwrap();
        assert_eq!(cfg.strategies, vec![Strategy::Soi, Strategy::Babsr]);
        assert_eq!(cfg.budget.timeout, Duration::from_secs(5));
        let ids: Vec<&str> = cfg.instances.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, vec!["ex1", "toy/ex1", "toy/missing"]);
        assert!(cfg.instances[2].instance.is_err());
    }

    #[test]
    fn empty_strategy_list_is_rejected() {
        let f = SuiteFile::parse("networks = []").unwrap();
        assert!(f.resolve(Path::new(".")).is_err());
    }
}
