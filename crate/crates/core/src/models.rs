//! The classifiers being explained: a 3-layer GCN and a 3-layer GIN over
//! soft weighted adjacencies, split into an encoder (node embeddings Z)
//! and a classifier head (per-layer mean and max readouts into a linear
//! layer).
//!
//! Both architectures accept continuous adjacency entries in [0, 1], so a
//! relaxed edge mask can be pushed through the same forward pass that
//! discrete graphs use; edge weights feed sum aggregation directly.

use crate::autodiff::{Tape, Var};
use crate::datasets::Dataset;
use crate::graph::{EdgeMask, Graph};
use crate::optim::Adam;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature width {got} does not match model input dim {expected}")]
    FeatureWidthMismatch { got: usize, expected: usize },
    #[error("adjacency is {rows}x{cols} but features have {n} rows")]
    AdjacencyShapeMismatch { rows: usize, cols: usize, n: usize },
    #[error(
        "training diverged: best validation accuracy {best:.3} below chance + margin {threshold:.3} after {epochs} epochs"
    )]
    Diverged {
        best: f64,
        threshold: f64,
        epochs: usize,
    },
    #[error("dataset has an empty {split} split")]
    EmptySplit { split: &'static str },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Gcn3,
    Gin3,
}

impl std::str::FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcn3" => Ok(Self::Gcn3),
            "gin3" => Ok(Self::Gin3),
            other => Err(format!("unknown architecture '{other}', expected gcn3 or gin3")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct GcnParams {
    w1: Array2<f64>,
    b1: Array2<f64>,
    w2: Array2<f64>,
    b2: Array2<f64>,
    w3: Array2<f64>,
    b3: Array2<f64>,
    wc: Array2<f64>,
    bc: Array2<f64>,
}

/// One GIN layer: learnable epsilon and a two-layer MLP.
#[derive(Debug, Clone, PartialEq)]
struct GinLayer {
    eps: Array2<f64>,
    wa: Array2<f64>,
    ba: Array2<f64>,
    wb: Array2<f64>,
    bb: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct GinParams {
    layers: [GinLayer; 3],
    wc: Array2<f64>,
    bc: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Gcn(GcnParams),
    Gin(GinParams),
}

/// A trained (or freshly initialized) classifier with its architecture,
/// dimensions, and parameters. Immutable once training finishes; share
/// read-only across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    architecture: Architecture,
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    seed: u64,
    params: Params,
}

pub(crate) fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-s..s))
}

/// Uniform bias in +-1/sqrt(fan_in). Nonzero bias matters here: with
/// constant node features a zero-bias ReLU stack collapses every layer to
/// rank one and training stalls at chance.
pub(crate) fn bias_init(rng: &mut ChaCha8Rng, fan_in: usize, cols: usize) -> Array2<f64> {
    let s = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((1, cols), |_| rng.random_range(-s..s))
}

const INIT_STREAM: u64 = 0x4d4f44454c; // distinct stream tag for init draws

impl ModelBundle {
    pub fn new(
        architecture: Architecture,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Self {
        assert!(input_dim > 0 && hidden_dim > 0 && num_classes > 0);
        let mut rng = crate::seed::stream_rng(seed, INIT_STREAM);
        let (d, f, c) = (input_dim, hidden_dim, num_classes);
        let params = match architecture {
            Architecture::Gcn3 => Params::Gcn(GcnParams {
                w1: glorot(&mut rng, d, f),
                b1: bias_init(&mut rng, d, f),
                w2: glorot(&mut rng, f, f),
                b2: bias_init(&mut rng, f, f),
                w3: glorot(&mut rng, f, f),
                b3: bias_init(&mut rng, f, f),
                wc: glorot(&mut rng, 6 * f, c),
                bc: bias_init(&mut rng, 6 * f, c),
            }),
            Architecture::Gin3 => {
                let layer = |rng: &mut ChaCha8Rng, din: usize| GinLayer {
                    eps: Array2::zeros((1, 1)),
                    wa: glorot(rng, din, f),
                    ba: bias_init(rng, din, f),
                    wb: glorot(rng, f, f),
                    bb: bias_init(rng, f, f),
                };
                Params::Gin(GinParams {
                    layers: [
                        layer(&mut rng, d),
                        layer(&mut rng, f),
                        layer(&mut rng, f),
                    ],
                    wc: glorot(&mut rng, 6 * f, c),
                    bc: bias_init(&mut rng, 6 * f, c),
                })
            }
        };
        Self {
            architecture,
            input_dim,
            hidden_dim,
            num_classes,
            seed,
            params,
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Parameters in canonical order, shared by init, optimizer steps, and
    /// checkpoints.
    fn named_params(&self) -> Vec<(&'static str, &Array2<f64>)> {
        match &self.params {
            Params::Gcn(p) => vec![
                ("w1", &p.w1),
                ("b1", &p.b1),
                ("w2", &p.w2),
                ("b2", &p.b2),
                ("w3", &p.w3),
                ("b3", &p.b3),
                ("wc", &p.wc),
                ("bc", &p.bc),
            ],
            Params::Gin(p) => {
                let mut out = Vec::new();
                let names = [
                    ["eps1", "w1a", "b1a", "w1b", "b1b"],
                    ["eps2", "w2a", "b2a", "w2b", "b2b"],
                    ["eps3", "w3a", "b3a", "w3b", "b3b"],
                ];
                for (layer, ns) in p.layers.iter().zip(names) {
                    out.push((ns[0], &layer.eps));
                    out.push((ns[1], &layer.wa));
                    out.push((ns[2], &layer.ba));
                    out.push((ns[3], &layer.wb));
                    out.push((ns[4], &layer.bb));
                }
                out.push(("wc", &p.wc));
                out.push(("bc", &p.bc));
                out
            }
        }
    }

    fn named_params_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        match &mut self.params {
            Params::Gcn(p) => vec![
                ("w1", &mut p.w1),
                ("b1", &mut p.b1),
                ("w2", &mut p.w2),
                ("b2", &mut p.b2),
                ("w3", &mut p.w3),
                ("b3", &mut p.b3),
                ("wc", &mut p.wc),
                ("bc", &mut p.bc),
            ],
            Params::Gin(p) => {
                let mut out = Vec::new();
                let names = [
                    ["eps1", "w1a", "b1a", "w1b", "b1b"],
                    ["eps2", "w2a", "b2a", "w2b", "b2b"],
                    ["eps3", "w3a", "b3a", "w3b", "b3b"],
                ];
                for (layer, ns) in p.layers.iter_mut().zip(names) {
                    out.push((ns[0], &mut layer.eps));
                    out.push((ns[1], &mut layer.wa));
                    out.push((ns[2], &mut layer.ba));
                    out.push((ns[3], &mut layer.wb));
                    out.push((ns[4], &mut layer.bb));
                }
                out.push(("wc", &mut p.wc));
                out.push(("bc", &mut p.bc));
                out
            }
        }
    }

    /// Parameter shapes in canonical order, for sizing an optimizer.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.named_params().iter().map(|(_, p)| p.dim()).collect()
    }

    /// One optimizer step over all parameters; gradients must be in
    /// canonical order (the order of `vars_on_tape`).
    pub fn apply_gradients(&mut self, opt: &mut Adam, grads: &[Array2<f64>]) {
        let mut params = self.named_params_mut();
        let mut refs: Vec<&mut Array2<f64>> = params.iter_mut().map(|(_, p)| &mut **p).collect();
        opt.step(&mut refs, grads);
    }

    /// Registers every parameter on the tape, as leaves when `trainable`
    /// (classifier training) or constants otherwise (explanation training,
    /// where f stays frozen).
    pub fn vars_on_tape(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.named_params()
            .iter()
            .map(|(_, p)| {
                if trainable {
                    tape.leaf((*p).clone())
                } else {
                    tape.constant((*p).clone())
                }
            })
            .collect()
    }

    /// Node embeddings and logits on the tape. `vars` must come from
    /// `vars_on_tape`. The monolithic pass is exactly
    /// `classify_on_tape(encode_layers_on_tape(...))`, sharing every node.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: Var, a: Var, vars: &[Var]) -> (Var, Var) {
        let layers = self.encode_layers_on_tape(tape, x, a, vars);
        let z = layers[2];
        let logits = self.classify_on_tape(tape, &layers, vars);
        (z, logits)
    }

    /// The encoder f_enc: three message-passing layers producing Z (n x F),
    /// the last layer's node embeddings.
    pub fn encode_on_tape(&self, tape: &mut Tape, x: Var, a: Var, vars: &[Var]) -> Var {
        self.encode_layers_on_tape(tape, x, a, vars)[2]
    }

    /// All three layer outputs; the classifier head reads every one.
    fn encode_layers_on_tape(&self, tape: &mut Tape, x: Var, a: Var, vars: &[Var]) -> [Var; 3] {
        let mut layers = [x; 3];
        match self.architecture {
            Architecture::Gcn3 => {
                // Sum aggregation with a self loop: relu((A + I) H W + b).
                // The unnormalized sum keeps edge weights and degrees in the
                // activation magnitudes, which carries the structural signal
                // a constant feature matrix would otherwise hide.
                let n = tape.value(x).nrows();
                let eye = tape.constant(Array2::eye(n));
                let s = tape.add(a, eye);
                let mut h = x;
                for layer in 0..3 {
                    let (w, b) = (vars[2 * layer], vars[2 * layer + 1]);
                    let sh = tape.matmul(s, h);
                    let shw = tape.matmul(sh, w);
                    let pre = tape.add_row_vec(shw, b);
                    h = tape.relu(pre);
                    layers[layer] = h;
                }
            }
            Architecture::Gin3 => {
                let mut h = x;
                for layer in 0..3 {
                    let base = 5 * layer;
                    let (eps, wa, ba, wb, bb) = (
                        vars[base],
                        vars[base + 1],
                        vars[base + 2],
                        vars[base + 3],
                        vars[base + 4],
                    );
                    // agg = A H + (1 + eps) H with eps learnable.
                    let ah = tape.matmul(a, h);
                    let eh = tape.mul_scalar_var(h, eps);
                    let sum1 = tape.add(ah, h);
                    let agg = tape.add(sum1, eh);
                    let l1 = tape.matmul(agg, wa);
                    let l1b = tape.add_row_vec(l1, ba);
                    let l1a = tape.relu(l1b);
                    let l2 = tape.matmul(l1a, wb);
                    let l2b = tape.add_row_vec(l2, bb);
                    h = tape.relu(l2b);
                    layers[layer] = h;
                }
            }
        }
        layers
    }

    /// The head f_cls: mean and max readouts of every layer's output,
    /// concatenated, then a linear layer. Reading all three layers keeps the
    /// first layer's degree signal visible to the head undiluted by further
    /// propagation; the max channel reads motif-selective units at full
    /// strength where the mean would average them over the whole graph.
    fn classify_on_tape(&self, tape: &mut Tape, layers: &[Var; 3], vars: &[Var]) -> Var {
        let n_enc = vars.len() - 2;
        let (wc, bc) = (vars[n_enc], vars[n_enc + 1]);
        let mut pooled: Option<Var> = None;
        for &h in layers {
            let mean = tape.col_mean(h);
            let max = tape.col_max(h);
            let mm = tape.hstack(mean, max);
            pooled = Some(match pooled {
                None => mm,
                Some(p) => tape.hstack(p, mm),
            });
        }
        let lin = tape.matmul(pooled.expect("three layers"), wc);
        tape.add(lin, bc)
    }

    fn check_inputs(&self, x: &Array2<f64>, a: &Array2<f64>) -> Result<(), ModelError> {
        if x.ncols() != self.input_dim {
            return Err(ModelError::FeatureWidthMismatch {
                got: x.ncols(),
                expected: self.input_dim,
            });
        }
        if a.nrows() != x.nrows() || a.ncols() != x.nrows() {
            return Err(ModelError::AdjacencyShapeMismatch {
                rows: a.nrows(),
                cols: a.ncols(),
                n: x.nrows(),
            });
        }
        Ok(())
    }

    /// Plain forward pass: node embeddings Z and class logits.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        a: &Array2<f64>,
    ) -> Result<(Array2<f64>, Vec<f64>), ModelError> {
        self.check_inputs(x, a)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let av = tape.constant(a.clone());
        let vars = self.vars_on_tape(&mut tape, false);
        let (z, logits) = self.forward_on_tape(&mut tape, xv, av, &vars);
        let logits = tape.value(logits).row(0).to_vec();
        Ok((tape.value(z).clone(), logits))
    }

    /// The class f assigns to the (optionally masked) graph.
    pub fn predict(&self, g: &Graph) -> Result<usize, ModelError> {
        let (_, logits) = self.forward(g.features(), g.adjacency())?;
        Ok(argmax(&logits))
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable -ln softmax(logits)[target].
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Mean-pooled encoder output under the graph's own adjacency or a mask's
/// weighted adjacency. Produces the h / h' / h-tilde vectors the embedding
/// diagnostics compare.
pub fn graph_embedding(
    bundle: &ModelBundle,
    g: &Graph,
    mask: Option<&EdgeMask>,
) -> Result<Array1<f64>, ModelError> {
    let adjacency = match mask {
        Some(m) => m.weights(),
        None => g.adjacency(),
    };
    let (z, _) = bundle.forward(g.features(), adjacency)?;
    Ok(z.mean_axis(Axis(0)).expect("nonempty graph"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub architecture: Architecture,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Gcn3,
            hidden_dim: 20,
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

/// Accuracy and loss record from classifier training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStats {
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
}

/// Fraction of graphs at `indices` whose predicted class matches the label.
pub fn accuracy(bundle: &ModelBundle, ds: &Dataset, indices: &[usize]) -> f64 {
    assert!(!indices.is_empty(), "accuracy over an empty index set");
    let correct = indices
        .iter()
        .filter(|&&i| {
            let g = ds.graph(i);
            bundle.predict(g).map(Some).unwrap_or(None) == g.label()
        })
        .count();
    correct as f64 / indices.len() as f64
}

const SHUFFLE_STREAM: u64 = 0x434c5346;

/// Trains a classifier with Adam, early stopping on validation accuracy
/// (train accuracy when the validation split is empty), restoring the best
/// epoch's parameters. Ending below chance + 0.05 is reported as
/// divergence rather than returned silently.
pub fn train_classifier(
    ds: &Dataset,
    cfg: &ClassifierConfig,
) -> Result<(ModelBundle, TrainStats), ModelError> {
    if ds.splits().train.is_empty() {
        return Err(ModelError::EmptySplit { split: "train" });
    }
    let mut bundle = ModelBundle::new(
        cfg.architecture,
        ds.feature_dim(),
        cfg.hidden_dim,
        ds.num_classes(),
        cfg.seed,
    );
    let mut opt = Adam::new(cfg.learning_rate, cfg.weight_decay, &bundle.param_shapes());
    let mut rng = crate::seed::stream_rng(cfg.seed, SHUFFLE_STREAM);

    let monitor: &[usize] = if ds.splits().val.is_empty() {
        &ds.splits().train
    } else {
        &ds.splits().val
    };

    let mut order: Vec<usize> = ds.splits().train.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_params = bundle.params.clone();
    let mut since_best = 0usize;
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut epochs_run = 0usize;

    for _ in 0..cfg.epochs {
        epochs_run += 1;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &gi in &order {
            let g = ds.graph(gi);
            bundle.check_inputs(g.features(), g.adjacency())?;
            let mut tape = Tape::new();
            let x = tape.constant(g.features().clone());
            let a = tape.constant(g.adjacency().clone());
            let vars = bundle.vars_on_tape(&mut tape, true);
            let (_, logits) = bundle.forward_on_tape(&mut tape, x, a, &vars);
            let loss = tape.cross_entropy_logits(logits, g.label().expect("labeled dataset"));
            epoch_loss += tape.value(loss)[(0, 0)];
            tape.backward(loss);
            let grads: Vec<Array2<f64>> = vars.iter().map(|&v| tape.grad(v)).collect();
            bundle.apply_gradients(&mut opt, &grads);
        }
        train_loss.push(epoch_loss / order.len() as f64);

        let acc = accuracy(&bundle, ds, monitor);
        if acc > best_acc {
            best_acc = acc;
            best_params = bundle.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    // Divergence is only a verdict once the run was long enough for the
    // patience window to have meant anything.
    let threshold = 1.0 / ds.num_classes() as f64 + 0.05;
    if best_acc < threshold && epochs_run >= cfg.patience {
        return Err(ModelError::Diverged {
            best: best_acc,
            threshold,
            epochs: epochs_run,
        });
    }
    bundle.params = best_params;

    let stats = TrainStats {
        train_acc: accuracy(&bundle, ds, &ds.splits().train),
        val_acc: if ds.splits().val.is_empty() {
            f64::NAN
        } else {
            accuracy(&bundle, ds, &ds.splits().val)
        },
        test_acc: if ds.splits().test.is_empty() {
            f64::NAN
        } else {
            accuracy(&bundle, ds, &ds.splits().test)
        },
        epochs_run,
        train_loss,
    };
    Ok((bundle, stats))
}

/// One named parameter matrix in a checkpoint file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub(crate) fn records_from_named(named: &[(&'static str, &Array2<f64>)]) -> Vec<ParamRecord> {
    named
        .iter()
        .map(|(name, p)| ParamRecord {
            name: name.to_string(),
            rows: p.nrows(),
            cols: p.ncols(),
            data: p.iter().cloned().collect(),
        })
        .collect()
}

/// Writes checkpoint records into matching parameter slots, by name, with
/// shape validation. Every expected name must appear exactly once.
pub(crate) fn records_into_named(
    records: &[ParamRecord],
    named: &mut [(&'static str, &mut Array2<f64>)],
) -> Result<(), String> {
    if records.len() != named.len() {
        return Err(format!(
            "expected {} parameters, found {}",
            named.len(),
            records.len()
        ));
    }
    for (name, param) in named.iter_mut() {
        let rec = records
            .iter()
            .find(|r| r.name == *name)
            .ok_or_else(|| format!("missing parameter '{name}'"))?;
        if rec.rows != param.nrows() || rec.cols != param.ncols() {
            return Err(format!(
                "parameter '{name}' has shape {}x{}, expected {}x{}",
                rec.rows,
                rec.cols,
                param.nrows(),
                param.ncols()
            ));
        }
        if rec.data.len() != rec.rows * rec.cols {
            return Err(format!(
                "parameter '{name}' has {} values for a {}x{} shape",
                rec.data.len(),
                rec.rows,
                rec.cols
            ));
        }
        **param = Array2::from_shape_vec((rec.rows, rec.cols), rec.data.clone())
            .expect("validated shape");
    }
    Ok(())
}

pub(crate) const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelCheckpoint {
    format_version: u32,
    kind: String,
    architecture: Architecture,
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    seed: u64,
    params: Vec<ParamRecord>,
}

/// Serializes a model to a self-describing JSON checkpoint.
pub fn save_model(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let ckpt = ModelCheckpoint {
        format_version: CHECKPOINT_VERSION,
        kind: "model".to_string(),
        architecture: bundle.architecture,
        input_dim: bundle.input_dim,
        hidden_dim: bundle.hidden_dim,
        num_classes: bundle.num_classes,
        seed: bundle.seed,
        params: records_from_named(&bundle.named_params()),
    };
    let json = serde_json::to_string(&ckpt).expect("checkpoint serializes");
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: ModelCheckpoint =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if ckpt.format_version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format_version {}",
            ckpt.format_version
        )));
    }
    if ckpt.kind != "model" {
        return Err(ModelError::Checkpoint(format!(
            "kind '{}' is not a model checkpoint",
            ckpt.kind
        )));
    }
    let mut bundle = ModelBundle::new(
        ckpt.architecture,
        ckpt.input_dim,
        ckpt.hidden_dim,
        ckpt.num_classes,
        ckpt.seed,
    );
    records_into_named(&ckpt.params, &mut bundle.named_params_mut())
        .map_err(ModelError::Checkpoint)?;
    Ok(bundle)
}
