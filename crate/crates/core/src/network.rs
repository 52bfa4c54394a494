//! Dense ReLU feedforward networks: evaluation, margin gradients and the
//! plain-text weight format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::work;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn keyword(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

/// One affine layer `z = A x + b`, optionally followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    rows: usize,
    cols: usize,
    weights: Vec<S>,
    bias: Vec<S>,
    activation: Activation,
}

impl<S: Scalar> Layer<S> {
    /// `weights` is given row by row; every row must have the same length.
    pub fn new(weights: Vec<Vec<S>>, bias: Vec<S>, activation: Activation) -> Result<Self> {
        let rows = weights.len();
        if rows == 0 {
            return Err(Error::InvalidNetwork("layer with zero neurons".into()));
        }
        let cols = weights[0].len();
        if cols == 0 {
            return Err(Error::InvalidNetwork("layer with zero inputs".into()));
        }
        if let Some((i, r)) = weights.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::InvalidNetwork(format!(
                "weight row {i} has {} entries, expected {cols}",
                r.len()
            )));
        }
        if bias.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                got: bias.len(),
            });
        }
        let flat: Vec<S> = weights.into_iter().flatten().collect();
        if flat.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidNetwork("non-finite weight or bias".into()));
        }
        Ok(Layer {
            rows,
            cols,
            weights: flat,
            bias,
            activation,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.rows
    }

    pub fn in_dim(&self) -> usize {
        self.cols
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn row(&self, j: usize) -> &[S] {
        &self.weights[j * self.cols..(j + 1) * self.cols]
    }

    pub fn weight(&self, j: usize, k: usize) -> S {
        self.weights[j * self.cols + k]
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    pub fn affine(&self, x: &[S]) -> Vec<S> {
        (0..self.rows)
            .map(|j| {
                self.row(j)
                    .iter()
                    .zip(x)
                    .fold(self.bias[j], |acc, (&w, &v)| acc + w * v)
            })
            .collect()
    }
}

/// Pre- and post-activation values of every layer for one input.
///
/// `pre[i]` and `post[i]` belong to layer `i` (zero based); the logits are
/// `pre.last()`, which for the identity output layer equals `post.last()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<S> {
    pub pre: Vec<Vec<S>>,
    pub post: Vec<Vec<S>>,
}

impl<S: Scalar> Trace<S> {
    pub fn logits(&self) -> &[S] {
        self.pre.last().expect("network has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    input_dim: usize,
    layers: Vec<Layer<S>>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `[v]_target - max_{y != target} [v]_y` together with the maximizing rival
/// (lowest index among ties).
pub fn margin_of<S: Scalar>(v: &[S], target: usize) -> (S, usize) {
    let mut rival = usize::MAX;
    for (y, &x) in v.iter().enumerate() {
        if y != target && (rival == usize::MAX || x > v[rival]) {
            rival = y;
        }
    }
    (v[target] - v[rival], rival)
}

impl<S: Scalar> Network<S> {
    pub fn new(layers: Vec<Layer<S>>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidNetwork("no layers".into()))?;
        let input_dim = first.in_dim();
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} expects {} inputs but layer {} has {} outputs",
                    i + 2,
                    pair[1].in_dim(),
                    i + 1,
                    pair[0].out_dim()
                )));
            }
        }
        if layers.last().map(Layer::activation) != Some(Activation::Identity) {
            return Err(Error::InvalidNetwork(
                "final layer must use the identity activation".into(),
            ));
        }
        if layers.len() > 1
            && layers[..layers.len() - 1]
                .iter()
                .any(|l| l.activation != Activation::Relu)
        {
            return Err(Error::InvalidNetwork(
                "hidden layers must use the relu activation".into(),
            ));
        }
        if layers.last().map(Layer::out_dim).unwrap_or(0) < 2 {
            return Err(Error::InvalidNetwork("need at least two output classes".into()));
        }
        Ok(Network { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Layer::out_dim).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    /// Number of ReLU neurons.
    pub fn relu_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.activation == Activation::Relu)
            .map(Layer::out_dim)
            .sum()
    }

    fn check_input(&self, x: &[S]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[S]) -> Result<Trace<S>> {
        self.check_input(x)?;
        work::add_evals(1);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<S>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map(Vec::as_slice).unwrap_or(x);
            let z = layer.affine(input);
            let r = match layer.activation {
                Activation::Relu => z.iter().map(|&v| v.max(S::zero())).collect(),
                Activation::Identity => z.clone(),
            };
            pre.push(z);
            post.push(r);
        }
        Ok(Trace { pre, post })
    }

    pub fn logits(&self, x: &[S]) -> Result<Vec<S>> {
        Ok(self.forward(x)?.pre.pop().expect("nonempty"))
    }

    pub fn classify(&self, x: &[S]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// True iff the network's prediction at `x` is `target`.
    pub fn is_adversarial(&self, x: &[S], target: usize) -> Result<bool> {
        Ok(self.classify(x)? == target)
    }

    /// Concrete margin `[f(x)]_t - max_{y != t} [f(x)]_y`.
    pub fn margin(&self, x: &[S], target: usize) -> Result<S> {
        Ok(margin_of(&self.logits(x)?, target).0)
    }

    /// Gradient of the concrete margin with respect to the input. The ReLU
    /// derivative at exactly zero is taken as zero.
    pub fn margin_gradient(&self, x: &[S], target: usize) -> Result<Vec<S>> {
        let trace = self.forward(x)?;
        let (_, rival) = margin_of(trace.logits(), target);
        let mut grad = vec![S::zero(); self.output_dim()];
        grad[target] = S::one();
        grad[rival] = grad[rival] - S::one();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                for (g, &z) in grad.iter_mut().zip(&trace.pre[i]) {
                    if z <= S::zero() {
                        *g = S::zero();
                    }
                }
            }
            let mut back = vec![S::zero(); layer.in_dim()];
            for (j, &g) in grad.iter().enumerate() {
                if g == S::zero() {
                    continue;
                }
                for (b, &w) in back.iter_mut().zip(layer.row(j)) {
                    *b = *b + g * w;
                }
            }
            grad = back;
        }
        Ok(grad)
    }

    /// Canonical text form; values are written with 17 significant digits so
    /// that reloading reproduces them bit for bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "relu-ffn v1 {} {}", self.input_dim, self.layers.len());
        for layer in &self.layers {
            let _ = writeln!(out, "layer {} {}", layer.rows, layer.activation.keyword());
            for j in 0..layer.rows {
                push_row(&mut out, layer.row(j));
            }
            push_row(&mut out, &layer.bias);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        parse_network(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::region::write_atomic(path, self.to_text().as_bytes())
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row<S: Scalar>(out: &mut String, row: &[S]) {
    let line: Vec<String> = row.iter().map(|v| fmt_f64(v.to_f64_lossy())).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

fn parse_network<S: Scalar>(text: &str) -> Result<Network<S>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty network file".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "relu-ffn" || fields[1] != "v1" {
        return Err(Error::Parse {
            line: hline,
            msg: "expected header `relu-ffn v1 <inputs> <layers>`".into(),
        });
    }
    let input_dim = parse_count(fields[2], hline)?;
    let n_layers = parse_count(fields[3], hline)?;

    let mut layers = Vec::with_capacity(n_layers);
    let mut prev = input_dim;
    for li in 1..=n_layers {
        let (lline, decl) = lines.next().ok_or(Error::Parse {
            line: hline,
            msg: format!("missing declaration of layer {li}"),
        })?;
        let fields: Vec<&str> = decl.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != "layer" {
            return Err(Error::Parse {
                line: lline,
                msg: format!("expected `layer <neurons> <activation>` for layer {li}"),
            });
        }
        let rows = parse_count(fields[1], lline)?;
        let activation = match fields[2] {
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            other => {
                return Err(Error::Parse {
                    line: lline,
                    msg: format!("layer {li}: unknown activation `{other}`"),
                })
            }
        };
        let mut weights = Vec::with_capacity(rows);
        for r in 0..=rows {
            let expected = if r < rows { prev } else { rows };
            let what = if r < rows {
                format!("weight row {}", r + 1)
            } else {
                "bias row".to_string()
            };
            let (nline, row) = lines.next().ok_or(Error::Parse {
                line: lline,
                msg: format!("layer {li}: missing {what}"),
            })?;
            let vals = row
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map(S::lit).map_err(|_| Error::Parse {
                        line: nline,
                        msg: format!("layer {li}: `{tok}` is not a number"),
                    })
                })
                .collect::<Result<Vec<S>>>()?;
            if vals.len() != expected {
                return Err(Error::Parse {
                    line: nline,
                    msg: format!("layer {li}: {what} has {} values, expected {expected}", vals.len()),
                });
            }
            weights.push(vals);
        }
        let bias = weights.pop().expect("bias row pushed");
        let layer = Layer::new(weights, bias, activation).map_err(|e| Error::Parse {
            line: lline,
            msg: format!("layer {li}: {e}"),
        })?;
        prev = rows;
        layers.push(layer);
    }
    if let Some((line, _)) = lines.next() {
        return Err(Error::Parse {
            line,
            msg: "trailing content after last layer".into(),
        });
    }
    Network::new(layers).map_err(|e| Error::Parse {
        line: hline,
        msg: e.to_string(),
    })
}

fn parse_count(tok: &str, line: usize) -> Result<usize> {
    match tok.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Error::Parse {
            line,
            msg: format!("`{tok}` is not a positive integer"),
        }),
    }
}

/// A point to attack, its correct label, the label to reach and the L∞
/// radius of the search ball.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQuery<S> {
    pub x_o: Vec<S>,
    pub y_c: usize,
    pub y_t: usize,
    pub epsilon: S,
}

impl<S: Scalar> LabeledQuery<S> {
    pub fn new(x_o: Vec<S>, y_c: usize, y_t: usize, epsilon: S) -> Result<Self> {
        if y_c == y_t {
            return Err(Error::InvalidParameter("target label equals correct label".into()));
        }
        if !(epsilon > S::zero()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if x_o.iter().any(|v| !(*v >= S::zero() && *v <= S::one())) {
            return Err(Error::InvalidParameter("input must lie in [0, 1]".into()));
        }
        Ok(LabeledQuery { x_o, y_c, y_t, epsilon })
    }

    /// Check the query against a network's dimensions.
    pub fn validate(&self, net: &Network<S>) -> Result<()> {
        if self.x_o.len() != net.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.input_dim(),
                got: self.x_o.len(),
            });
        }
        let n = net.output_dim();
        if self.y_c >= n || self.y_t >= n {
            return Err(Error::InvalidParameter(format!("label out of range for {n} classes")));
        }
        Ok(())
    }

    /// The ε-ball around `x_o` clipped to the unit cube.
    pub fn ball(&self) -> (Vec<S>, Vec<S>) {
        let lo = self.x_o.iter().map(|&v| (v - self.epsilon).max(S::zero())).collect();
        let hi = self.x_o.iter().map(|&v| (v + self.epsilon).min(S::one())).collect();
        (lo, hi)
    }
}
