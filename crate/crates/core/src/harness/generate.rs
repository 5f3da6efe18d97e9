//! Reproducible random benchmark suites.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristics::Strategy;
use crate::model::{emit_nnet, Layer, Network};
use crate::query::{OutputConstraint, Query};

use super::suite::{Instance, InstanceEntry, SuiteFile};

/// Shape ranges of generated networks. Every network has domain `[-1, 1]^n`
/// and a single output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub min_inputs: usize,
    pub max_inputs: usize,
    pub min_relus: usize,
    pub max_relus: usize,
    /// One or two hidden layers.
    pub max_hidden_layers: usize,
    /// Query boxes have half-widths drawn from this range.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Random points per query for threshold calibration and the SAT estimate.
    pub samples: usize,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            min_inputs: 2,
            max_inputs: 5,
            min_relus: 6,
            max_relus: 12,
            max_hidden_layers: 2,
            min_radius: 0.1,
            max_radius: 0.5,
            samples: 200,
        }
    }
}

impl GenSpec {
    fn validate(&self) -> Result<()> {
        let ok = self.min_inputs >= 1
            && self.min_inputs <= self.max_inputs
            && self.min_relus >= 1
            && self.min_relus <= self.max_relus
            && self.max_hidden_layers >= 1
            && self.min_radius > 0.0
            && self.min_radius <= self.max_radius
            && self.samples > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid generator spec {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedSuite {
    pub instances: Vec<Instance>,
    /// Fraction of queries for which a sampled input already satisfies the
    /// output constraint.
    pub sampled_sat_fraction: f64,
}

fn uniform_layer(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize, relu: bool) -> Result<Layer> {
    let weights = (0..outputs)
        .map(|_| (0..inputs).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let bias = (0..outputs).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    Layer::new(weights, bias, relu)
}

fn random_network(rng: &mut ChaCha8Rng, spec: &GenSpec) -> Result<Network> {
    let n = rng.gen_range(spec.min_inputs..=spec.max_inputs);
    let relus = rng.gen_range(spec.min_relus..=spec.max_relus);
    let depth = rng.gen_range(1..=spec.max_hidden_layers.min(relus));
    let mut sizes = vec![relus / depth; depth];
    for s in sizes.iter_mut().take(relus % depth) {
        *s += 1;
    }
    let mut layers = Vec::with_capacity(depth + 1);
    let mut prev = n;
    for &s in &sizes {
        layers.push(uniform_layer(rng, prev, s, true)?);
        prev = s;
    }
    layers.push(uniform_layer(rng, prev, 1, false)?);
    Network::new(layers, vec![-1.0; n], vec![1.0; n], None)
}

fn sample_box(rng: &mut ChaCha8Rng, lower: &[f64], upper: &[f64]) -> Vec<f64> {
    lower
        .iter()
        .zip(upper)
        .map(|(l, u)| if l < u { rng.gen_range(*l..=*u) } else { *l })
        .collect()
}

/// `count` random (network, query) pairs. Each query asks for `y ≤ t` with
/// `t` the median output sampled over the whole domain, over a box of random
/// radius around a sampled point whose output lies above `t`.
pub fn generate_instances(seed: u64, count: usize, spec: &GenSpec) -> Result<GeneratedSuite> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(count);
    let mut sampled_sat = 0usize;
    for k in 0..count {
        let net = random_network(&mut rng, spec)?;
        let points: Vec<Vec<f64>> = (0..spec.samples)
            .map(|_| sample_box(&mut rng, net.input_lower(), net.input_upper()))
            .collect();
        let outputs = points
            .iter()
            .map(|x| Ok(net.evaluate(x)?[0]))
            .collect::<Result<Vec<f64>>>()?;
        let mut sorted = outputs.clone();
        sorted.sort_by(f64::total_cmp);
        let threshold = sorted[sorted.len() / 2];
        // Center the box on a random sample from the upper half, so whether
        // the box reaches below the threshold depends on its radius.
        let above: Vec<&Vec<f64>> = points
            .iter()
            .zip(&outputs)
            .filter(|(_, y)| **y > threshold)
            .map(|(x, _)| x)
            .collect();
        let center = if above.is_empty() {
            points[0].clone()
        } else {
            above[rng.gen_range(0..above.len())].clone()
        };

        let radius = rng.gen_range(spec.min_radius..=spec.max_radius);
        let lower: Vec<f64> = center.iter().map(|c| (c - radius).max(-1.0)).collect();
        let upper: Vec<f64> = center.iter().map(|c| (c + radius).min(1.0)).collect();
        let id = format!("q{k:04}");
        let query = Query::new(
            id.clone(),
            lower.clone(),
            upper.clone(),
            vec![OutputConstraint::new(vec![1.0], threshold)],
        )?;
        let hit = (0..spec.samples).any(|_| {
            let x = sample_box(&mut rng, &lower, &upper);
            net.evaluate(&x).map(|y| y[0] <= threshold).unwrap_or(false)
        });
        if hit {
            sampled_sat += 1;
        }
        instances.push(Instance {
            id,
            net: Arc::new(net),
            query,
        });
    }
    let sampled_sat_fraction = if count == 0 {
        0.0
    } else {
        sampled_sat as f64 / count as f64
    };
    Ok(GeneratedSuite {
        instances,
        sampled_sat_fraction,
    })
}

/// Writes `net_<k>.nnet`, `prop_<k>.prop` and a `suite.toml` listing the
/// pairs into `dir`.
pub fn gen_random_suite(
    seed: u64,
    count: usize,
    spec: &GenSpec,
    dir: &Path,
) -> Result<GeneratedSuite> {
    let suite = generate_instances(seed, count, spec)?;
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(count);
    for inst in &suite.instances {
        let net_file = format!("net_{}.nnet", inst.id);
        let prop_file = format!("prop_{}.prop", inst.id);
        std::fs::write(dir.join(&net_file), emit_nnet(&inst.net))?;
        std::fs::write(dir.join(&prop_file), inst.query.to_property_text())?;
        entries.push(InstanceEntry {
            id: Some(inst.id.clone()),
            net: net_file,
            prop: prop_file,
        });
    }
    let file = SuiteFile {
        strategies: Strategy::STATIC.iter().map(|s| s.to_string()).collect(),
        instances: entries,
        ..SuiteFile::default()
    };
    std::fs::write(dir.join("suite.toml"), file.to_toml()?)?;
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_the_spec() {
        let s = generate_instances(3, 20, &GenSpec::default()).unwrap();
        assert_eq!(s.instances.len(), 20);
        for inst in &s.instances {
            assert!((2..=5).contains(&inst.net.input_dim()));
            assert!((6..=12).contains(&inst.net.relu_count()));
        }
    }

    #[test]
    fn files_are_byte_identical_for_a_seed() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_random_suite(11, 4, &GenSpec::default(), a.path()).unwrap();
        gen_random_suite(11, 4, &GenSpec::default(), b.path()).unwrap();
        for name in ["suite.toml", "net_q0002.nnet", "prop_q0003.prop"] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name}");
        }
    }
}
