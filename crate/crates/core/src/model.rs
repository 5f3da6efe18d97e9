//! Feed-forward ReLU networks.
//!
//! A [`Network`] is a chain of affine layers, each optionally followed by a
//! ReLU. The on-disk format is NNet, the text format the ACAS-Xu networks ship
//! in. Normalization constants from the NNet header are kept on the network
//! but never applied implicitly; see [`Network::normalize_input`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine layer `out = W·in + b`, optionally followed by a ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    relu: bool,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, relu: bool) -> Result<Self> {
        let outputs = weights.len();
        if outputs == 0 {
            return Err(Error::Dimension("layer has no rows".into()));
        }
        let inputs = weights[0].len();
        if inputs == 0 {
            return Err(Error::Dimension("layer has no columns".into()));
        }
        if let Some((r, row)) = weights.iter().enumerate().find(|(_, r)| r.len() != inputs) {
            return Err(Error::Dimension(format!(
                "row {r} has {} values, expected {inputs}",
                row.len()
            )));
        }
        if bias.len() != outputs {
            return Err(Error::Dimension(format!(
                "bias has {} values, expected {outputs}",
                bias.len()
            )));
        }
        Ok(Layer {
            inputs,
            outputs,
            weights: weights.into_iter().flatten().collect(),
            bias,
            relu,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn has_relu(&self) -> bool {
        self.relu
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.inputs..(r + 1) * self.inputs]
    }

    pub fn weight(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.inputs + c]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `W·x + b` without the activation.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        (0..self.outputs)
            .map(|r| dot(self.row(r), x) + self.bias[r])
            .collect()
    }
}

/// Per-input `(mean, range)` pairs plus the shared output pair, as stored in
/// the NNet header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_mean: Vec<f64>,
    pub input_range: Vec<f64>,
    pub output_mean: f64,
    pub output_range: f64,
}

/// A ReLU position: `layer` indexes [`Network::layers`], `index` the neuron
/// within that layer. Ordering is lexicographic and serves as the global
/// tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

impl NeuronId {
    pub fn new(layer: usize, index: usize) -> Self {
        NeuronId { layer, index }
    }
}

impl std::fmt::Display for NeuronId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.layer, self.index)
    }
}

impl std::str::FromStr for NeuronId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad neuron id `{s}`"));
        let (l, i) = s.split_once(':').ok_or_else(bad)?;
        Ok(NeuronId::new(
            l.trim().parse().map_err(|_| bad())?,
            i.trim().parse().map_err(|_| bad())?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_lower: Vec<f64>,
    input_upper: Vec<f64>,
    normalization: Option<Normalization>,
    /// `relu_offset[l]` is the flat index of the first ReLU in layer `l`.
    relu_offset: Vec<usize>,
    relus: Vec<NeuronId>,
}

impl Network {
    pub fn new(
        layers: Vec<Layer>,
        input_lower: Vec<f64>,
        input_upper: Vec<f64>,
        normalization: Option<Normalization>,
    ) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::Dimension("network has no layers".into()));
        };
        let input_dim = first.inputs;
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Dimension(format!(
                    "layer {k} has {} outputs but layer {} expects {} inputs",
                    pair[0].outputs,
                    k + 1,
                    pair[1].inputs
                )));
            }
        }
        if layers.last().is_some_and(|l| l.relu) {
            return Err(Error::InvalidArgument(
                "the output layer must not have a ReLU".into(),
            ));
        }
        if input_lower.len() != input_dim || input_upper.len() != input_dim {
            return Err(Error::Dimension(format!(
                "input bounds have {}/{} values, expected {input_dim}",
                input_lower.len(),
                input_upper.len()
            )));
        }
        if let Some(i) = (0..input_dim).find(|&i| !(input_lower[i] <= input_upper[i])) {
            return Err(Error::EmptyBox(format!(
                "input {i}: [{}, {}]",
                input_lower[i], input_upper[i]
            )));
        }
        if let Some(n) = &normalization {
            if n.input_mean.len() != input_dim || n.input_range.len() != input_dim {
                return Err(Error::Dimension(
                    "normalization constants do not match the input size".into(),
                ));
            }
        }
        let mut net = Network {
            layers,
            input_lower,
            input_upper,
            normalization,
            relu_offset: Vec::new(),
            relus: Vec::new(),
        };
        net.index_relus();
        Ok(net)
    }

    fn index_relus(&mut self) {
        self.relu_offset.clear();
        self.relus.clear();
        for (l, layer) in self.layers.iter().enumerate() {
            self.relu_offset.push(self.relus.len());
            if layer.relu {
                self.relus
                    .extend((0..layer.outputs).map(|i| NeuronId::new(l, i)));
            }
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn input_lower(&self) -> &[f64] {
        &self.input_lower
    }

    pub fn input_upper(&self) -> &[f64] {
        &self.input_upper
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// All ReLU positions in flat order.
    pub fn relus(&self) -> &[NeuronId] {
        &self.relus
    }

    pub fn relu_count(&self) -> usize {
        self.relus.len()
    }

    /// Flat index of a ReLU, or `None` if `id` is not a ReLU position.
    pub fn relu_index(&self, id: NeuronId) -> Option<usize> {
        let layer = self.layers.get(id.layer)?;
        (layer.relu && id.index < layer.outputs).then(|| self.relu_offset[id.layer] + id.index)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for layer in &self.layers {
            a = layer.affine(&a);
            if layer.relu {
                a.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(a)
    }

    /// Forward pass that also returns the pre-activation of every layer.
    pub fn evaluate_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for layer in &self.layers {
            let z = layer.affine(&a);
            a = if layer.relu {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        Ok(pre)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Maps a raw input to network coordinates: `(x - mean) / range`.
    pub fn normalize_input(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = self.normalization.as_ref()?;
        Some(
            x.iter()
                .zip(n.input_mean.iter().zip(&n.input_range))
                .map(|(v, (m, r))| (v - m) / r)
                .collect(),
        )
    }

    pub fn denormalize_output(&self, y: &[f64]) -> Option<Vec<f64>> {
        let n = self.normalization.as_ref()?;
        Some(
            y.iter()
                .map(|v| v * n.output_range + n.output_mean)
                .collect(),
        )
    }
}

/// The two-input, two-ReLU running example: `n1 = 2·x1`, `n2 = x1 − x2`,
/// `y = −relu(n1) + relu(n2)` over `x1 ∈ [−1, 1]`, `x2 ∈ [0, 1]`, zero biases.
pub fn toy_network() -> Network {
    let hidden = Layer::new(vec![vec![2.0, 0.0], vec![1.0, -1.0]], vec![0.0, 0.0], true)
        .expect("toy hidden layer");
    let output = Layer::new(vec![vec![-1.0, 1.0]], vec![0.0], false).expect("toy output layer");
    Network::new(vec![hidden, output], vec![-1.0, 0.0], vec![1.0, 1.0], None).expect("toy network")
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct NnetLines<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> NnetLines<'a> {
    fn new(text: &'a str) -> Self {
        let mut lines = text.lines().enumerate().peekable();
        while lines
            .peek()
            .is_some_and(|(_, l)| l.trim_start().starts_with("//"))
        {
            lines.next();
        }
        NnetLines { lines }
    }

    /// Next non-blank line as `(1-based line number, values)`.
    fn values(&mut self, what: &str) -> Result<(usize, Vec<f64>)> {
        for (idx, line) in self.lines.by_ref() {
            let line_no = idx + 1;
            let fields: Vec<&str> = line
                .split(',')
                .map(str::trim)
                .filter(|f| !f.is_empty())
                .collect();
            if fields.is_empty() {
                continue;
            }
            let values = fields
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::parse(line_no, format!("non-numeric token {f:?} in {what}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok((line_no, values));
        }
        Err(Error::parse(
            0,
            format!("unexpected end of file while reading {what}"),
        ))
    }

    fn exact(&mut self, n: usize, what: &str) -> Result<(usize, Vec<f64>)> {
        let (line, values) = self.values(what)?;
        if values.len() != n {
            return Err(Error::parse(
                line,
                format!(
                    "dimension mismatch in {what}: expected {n} values, found {}",
                    values.len()
                ),
            ));
        }
        Ok((line, values))
    }
}

fn as_count(line: usize, v: f64, what: &str) -> Result<usize> {
    if v.fract() != 0.0 || v < 1.0 {
        return Err(Error::parse(
            line,
            format!("{what} must be a positive integer, got {v}"),
        ));
    }
    Ok(v as usize)
}

/// Parses NNet text. Every hidden layer carries a ReLU; the last layer is
/// linear.
pub fn load_nnet(text: &str) -> Result<Network> {
    let mut lines = NnetLines::new(text);
    let (line, header) = lines.values("header")?;
    if header.len() < 3 {
        return Err(Error::parse(
            line,
            "malformed header: expected layer count, input size, output size",
        ));
    }
    let num_layers = as_count(line, header[0], "layer count")?;
    let input_size = as_count(line, header[1], "input size")?;
    let output_size = as_count(line, header[2], "output size")?;

    let (line, sizes) = lines.exact(num_layers + 1, "layer sizes")?;
    let sizes = sizes
        .into_iter()
        .map(|s| as_count(line, s, "layer size"))
        .collect::<Result<Vec<_>>>()?;
    if sizes[0] != input_size || sizes[num_layers] != output_size {
        return Err(Error::parse(
            line,
            "malformed header: layer sizes disagree with declared input/output size",
        ));
    }

    // symmetric flag, unused
    lines.values("symmetric flag")?;
    let (_, mins) = lines.exact(input_size, "input minimums")?;
    let (_, maxes) = lines.exact(input_size, "input maximums")?;
    let (_, means) = lines.exact(input_size + 1, "means")?;
    let (_, ranges) = lines.exact(input_size + 1, "ranges")?;

    let mut layers = Vec::with_capacity(num_layers);
    for k in 0..num_layers {
        let (rows, cols) = (sizes[k + 1], sizes[k]);
        let mut weights = Vec::with_capacity(rows);
        for r in 0..rows {
            let (_, row) = lines.exact(cols, &format!("weights of layer {k}, row {r}"))?;
            weights.push(row);
        }
        let mut bias = Vec::with_capacity(rows);
        for r in 0..rows {
            let (_, b) = lines.exact(1, &format!("bias of layer {k}, row {r}"))?;
            bias.push(b[0]);
        }
        layers.push(Layer::new(weights, bias, k + 1 < num_layers)?);
    }

    let normalization = Normalization {
        input_mean: means[..input_size].to_vec(),
        input_range: ranges[..input_size].to_vec(),
        output_mean: means[input_size],
        output_range: ranges[input_size],
    };
    Network::new(layers, mins, maxes, Some(normalization))
}

/// Writes NNet text. Floats use the shortest representation that parses back
/// to the same value, so `load_nnet(emit_nnet(net))` is exact.
pub fn emit_nnet(net: &Network) -> String {
    let mut out = String::new();
    let sizes: Vec<usize> = std::iter::once(net.input_dim())
        .chain(net.layers.iter().map(|l| l.outputs))
        .collect();
    let max_size = sizes.iter().copied().max().unwrap_or(0);
    let join = |vals: &mut dyn Iterator<Item = String>| vals.collect::<Vec<_>>().join(",") + ",";

    out.push_str("// emitted by phasebranch\n");
    let _ = writeln!(
        out,
        "{},{},{},{},",
        net.layers.len(),
        net.input_dim(),
        net.output_dim(),
        max_size
    );
    let _ = writeln!(out, "{}", join(&mut sizes.iter().map(|s| s.to_string())));
    out.push_str("0,\n");
    let _ = writeln!(
        out,
        "{}",
        join(&mut net.input_lower.iter().map(|v| v.to_string()))
    );
    let _ = writeln!(
        out,
        "{}",
        join(&mut net.input_upper.iter().map(|v| v.to_string()))
    );
    let (means, ranges) = match &net.normalization {
        Some(n) => (
            n.input_mean
                .iter()
                .copied()
                .chain([n.output_mean])
                .collect::<Vec<_>>(),
            n.input_range
                .iter()
                .copied()
                .chain([n.output_range])
                .collect::<Vec<_>>(),
        ),
        None => (
            vec![0.0; net.input_dim() + 1],
            vec![1.0; net.input_dim() + 1],
        ),
    };
    let _ = writeln!(out, "{}", join(&mut means.iter().map(|v| v.to_string())));
    let _ = writeln!(out, "{}", join(&mut ranges.iter().map(|v| v.to_string())));
    for layer in &net.layers {
        for r in 0..layer.outputs {
            let _ = writeln!(
                out,
                "{}",
                join(&mut layer.row(r).iter().map(|v| v.to_string()))
            );
        }
        for b in &layer.bias {
            let _ = writeln!(out, "{b},");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TWO_THREE_ONE: &str = "// hand-written 2-3-1 network
// second comment line
2,2,1,3,
2,3,1,
0,
-1,-2,
1,2,
0,0,0,
1,1,1,
1,2,
-1,0.5,
0,-3,
0.1,
0.2,
-0.3,
1,-1,2,
0.5,
";

    #[test]
    fn parses_hand_written_nnet() {
        let net = load_nnet(TWO_THREE_ONE).unwrap();
        assert_eq!(net.layers().len(), 2);
        let (h, o) = (&net.layers()[0], &net.layers()[1]);
        assert_eq!((h.outputs(), h.inputs()), (3, 2));
        assert_eq!((o.outputs(), o.inputs()), (1, 3));
        assert_eq!(h.row(0), &[1.0, 2.0]);
        assert_eq!(h.row(1), &[-1.0, 0.5]);
        assert_eq!(h.row(2), &[0.0, -3.0]);
        assert_eq!(h.bias(), &[0.1, 0.2, -0.3]);
        assert_eq!(o.row(0), &[1.0, -1.0, 2.0]);
        assert_eq!(o.bias(), &[0.5]);
        assert!(h.has_relu() && !o.has_relu());
        assert_eq!(net.input_lower(), &[-1.0, -2.0]);
        assert_eq!(net.input_upper(), &[1.0, 2.0]);
        assert_eq!(net.relu_count(), 3);

        // x = (1, 1): pre = (3.1, -0.3, -3.3) -> post (3.1, 0, 0) -> y = 3.6
        let y = net.evaluate(&[1.0, 1.0]).unwrap();
        assert!((y[0] - 3.6).abs() < 1e-12);
    }

    #[test]
    fn short_weight_row_is_a_dimension_error_with_line() {
        let bad = TWO_THREE_ONE.replace("1,2,\n-1,0.5,", "1,2,\n-1,");
        match load_nnet(&bad) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 11);
                assert!(message.contains("dimension mismatch"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn row_with_two_values_for_three_inputs() {
        let text = "3,3,1,3,\n3,3,3,1,\n0,\n0,0,0,\n1,1,1,\n0,0,0,0,\n1,1,1,1,\n1,2,\n";
        let err = load_nnet(text).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 8, .. }), "{err}");
    }

    #[test]
    fn non_numeric_token_reports_line() {
        let bad = TWO_THREE_ONE.replace("0.2,", "zero,");
        match load_nnet(&bad) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 14);
                assert!(message.contains("non-numeric"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_header() {
        assert!(matches!(load_nnet("2,2,\n"), Err(Error::Parse { .. })));
        assert!(matches!(
            load_nnet("// only comments\n"),
            Err(Error::Parse { .. })
        ));
        let bad_sizes = TWO_THREE_ONE.replace("2,3,1,", "2,3,2,");
        assert!(matches!(
            load_nnet(&bad_sizes),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn toy_network_matches_running_example() {
        let toy = toy_network();
        assert_eq!(toy.relu_count(), 2);
        assert_eq!(toy.layers()[0].row(0), &[2.0, 0.0]);
        assert_eq!(toy.layers()[0].row(1), &[1.0, -1.0]);
        assert_eq!(toy.layers()[1].row(0), &[-1.0, 1.0]);

        let pre = toy.evaluate_trace(&[0.3, 0.7]).unwrap();
        assert!((pre[0][0].max(0.0) - 0.6).abs() < 1e-12);
        assert_eq!(pre[0][1].max(0.0), 0.0);
        assert!((pre[1][0] + 0.6).abs() < 1e-12);

        assert_eq!(toy.evaluate(&[0.0, 0.0]).unwrap(), vec![0.0]);
        assert_eq!(toy.evaluate(&[1.0, 1.0]).unwrap(), vec![-2.0]);
    }

    #[test]
    fn evaluate_rejects_wrong_width() {
        assert!(matches!(
            toy_network().evaluate(&[1.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn toy_round_trips_through_nnet() {
        let toy = toy_network();
        let reloaded = load_nnet(&emit_nnet(&toy)).unwrap();
        assert_eq!(reloaded.layers(), toy.layers());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..=1.0), rng.gen_range(0.0..=1.0)];
            assert_eq!(toy.evaluate(&x).unwrap(), reloaded.evaluate(&x).unwrap());
        }
    }

    #[test]
    fn invariants_are_enforced() {
        let l1 = Layer::new(vec![vec![1.0, 1.0]], vec![0.0], true).unwrap();
        let l2 = Layer::new(vec![vec![1.0, 1.0]], vec![0.0], false).unwrap();
        assert!(matches!(
            Network::new(vec![l1.clone(), l2], vec![0.0; 2], vec![1.0; 2], None),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Network::new(vec![l1.clone()], vec![0.0; 2], vec![1.0; 2], None),
            Err(Error::InvalidArgument(_))
        ));
        let lin = Layer::new(vec![vec![1.0, 1.0]], vec![0.0], false).unwrap();
        assert!(matches!(
            Network::new(vec![lin], vec![0.0, 2.0], vec![1.0, 1.0], None),
            Err(Error::EmptyBox(_))
        ));
    }

    #[test]
    fn normalization_is_explicit() {
        let net = load_nnet(TWO_THREE_ONE).unwrap();
        let n = net.normalization().unwrap();
        assert_eq!(n.input_mean, vec![0.0, 0.0]);
        assert_eq!(net.normalize_input(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        assert!(toy_network().normalize_input(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn relu_indexing() {
        let toy = toy_network();
        assert_eq!(toy.relu_index(NeuronId::new(0, 1)), Some(1));
        assert_eq!(toy.relu_index(NeuronId::new(1, 0)), None);
        assert_eq!(toy.relus(), &[NeuronId::new(0, 0), NeuronId::new(0, 1)]);
    }
}
