//! Feed-forward classifier with a shared trunk and one independent softmax
//! head per taxonomy level.
//!
//! The trunk is a plain ReLU net; the activations of its last layer are the
//! embedding used by every analysis. Heads are linear layers on top of the
//! embedding, unconnected to each other. Training supports four regimes:
//! single-level supervision on either head, or pretraining on one level
//! followed by a tuning phase that optimizes the convex joint loss
//! `alpha * L_basic + (1 - alpha) * L_sub` with every trunk layer except the
//! last one frozen.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::rng::{hash64, Rng};

/// Taxonomy level a head classifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Basic,
    Sub,
}

/// Supervision schedule.
///
/// * `Sub` / `Basic` - single head, single phase.
/// * `SubPreBasic` - pretrained on basic, then tuned with subordinate labels
///   through the joint loss.
/// * `BasicPreSub` - pretrained on subordinate, then tuned with basic labels
///   through the joint loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Sub,
    Basic,
    SubPreBasic,
    BasicPreSub,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Sub,
        Regime::Basic,
        Regime::SubPreBasic,
        Regime::BasicPreSub,
    ];

    /// Level trained alone in phase 1.
    pub fn pretrain_level(self) -> Level {
        match self {
            Regime::Sub | Regime::BasicPreSub => Level::Sub,
            Regime::Basic | Regime::SubPreBasic => Level::Basic,
        }
    }

    /// Whether a joint tuning phase follows the pretraining phase.
    pub fn has_tune_phase(self) -> bool {
        matches!(self, Regime::SubPreBasic | Regime::BasicPreSub)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Sub => "sub",
            Regime::Basic => "basic",
            Regime::SubPreBasic => "sub-pre-basic",
            Regime::BasicPreSub => "basic-pre-sub",
        }
    }

    pub fn parse(s: &str) -> Result<Regime> {
        match s {
            "sub" => Ok(Regime::Sub),
            "basic" => Ok(Regime::Basic),
            "sub-pre-basic" => Ok(Regime::SubPreBasic),
            "basic-pre-sub" => Ok(Regime::BasicPreSub),
            other => Err(Error::InvalidConfig(format!("unknown regime `{other}`"))),
        }
    }
}

/// Architecture description. `layer_sizes` runs from the input dimension
/// through the hidden layers to the embedding dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub layer_sizes: Vec<usize>,
    pub n_basic: usize,
    pub n_sub: usize,
    pub init_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "layer_sizes needs at least input and embedding entries".into(),
            ));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        if self.n_basic == 0 || self.n_sub == 0 {
            return Err(Error::InvalidConfig("head sizes must be positive".into()));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::InvalidConfig("init_scale must be > 0".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn head_size(&self, level: Level) -> usize {
        match level {
            Level::Basic => self.n_basic,
            Level::Sub => self.n_sub,
        }
    }
}

/// One dense layer. Weights are row-major over `[input][output]`:
/// `w[i * out_dim + j]` connects input `i` to output `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub frozen: bool,
}

impl Dense {
    fn new(in_dim: usize, out_dim: usize, init_scale: f64, rng: &mut Rng) -> Dense {
        // He-style init: sd = init_scale * sqrt(2 / fan_in), biases zero.
        let sd = init_scale * (2.0 / in_dim as f64).sqrt();
        Dense {
            in_dim,
            out_dim,
            w: (0..in_dim * out_dim).map(|_| sd * rng.normal()).collect(),
            b: vec![0.0; out_dim],
            frozen: false,
        }
    }

    /// z = W^T x + b
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.b.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.w[i * self.out_dim..(i + 1) * self.out_dim];
            for (j, &wij) in row.iter().enumerate() {
                z[j] += xi * wij;
            }
        }
        z
    }
}

/// The classifier: trunk layers, then one linear head per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub cfg: NetConfig,
    pub trunk: Vec<Dense>,
    pub head_basic: Dense,
    pub head_sub: Dense,
}

/// Tensor address used by the gradient checker and the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorId {
    TrunkW(usize),
    TrunkB(usize),
    HeadW(Level),
    HeadB(Level),
}

impl Network {
    pub fn tensor_ids(&self) -> Vec<TensorId> {
        let mut ids = Vec::new();
        for l in 0..self.trunk.len() {
            ids.push(TensorId::TrunkW(l));
            ids.push(TensorId::TrunkB(l));
        }
        for level in [Level::Basic, Level::Sub] {
            ids.push(TensorId::HeadW(level));
            ids.push(TensorId::HeadB(level));
        }
        ids
    }

    pub fn tensor(&self, id: TensorId) -> &Vec<f64> {
        match id {
            TensorId::TrunkW(l) => &self.trunk[l].w,
            TensorId::TrunkB(l) => &self.trunk[l].b,
            TensorId::HeadW(Level::Basic) => &self.head_basic.w,
            TensorId::HeadB(Level::Basic) => &self.head_basic.b,
            TensorId::HeadW(Level::Sub) => &self.head_sub.w,
            TensorId::HeadB(Level::Sub) => &self.head_sub.b,
        }
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut Vec<f64> {
        match id {
            TensorId::TrunkW(l) => &mut self.trunk[l].w,
            TensorId::TrunkB(l) => &mut self.trunk[l].b,
            TensorId::HeadW(Level::Basic) => &mut self.head_basic.w,
            TensorId::HeadB(Level::Basic) => &mut self.head_basic.b,
            TensorId::HeadW(Level::Sub) => &mut self.head_sub.w,
            TensorId::HeadB(Level::Sub) => &mut self.head_sub.b,
        }
    }

    fn tensor_frozen(&self, id: TensorId) -> bool {
        match id {
            TensorId::TrunkW(l) | TensorId::TrunkB(l) => self.trunk[l].frozen,
            TensorId::HeadW(Level::Basic) | TensorId::HeadB(Level::Basic) => {
                self.head_basic.frozen
            }
            TensorId::HeadW(Level::Sub) | TensorId::HeadB(Level::Sub) => self.head_sub.frozen,
        }
    }

    /// Freezes every trunk layer except the last; both heads stay trainable.
    /// This is the tuning-phase mask.
    pub fn freeze_all_but_last_trunk_layer(&mut self) {
        let last = self.trunk.len() - 1;
        for (l, layer) in self.trunk.iter_mut().enumerate() {
            layer.frozen = l != last;
        }
        self.head_basic.frozen = false;
        self.head_sub.frozen = false;
    }

    pub fn unfreeze_all(&mut self) {
        for layer in &mut self.trunk {
            layer.frozen = false;
        }
        self.head_basic.frozen = false;
        self.head_sub.frozen = false;
    }

    /// Trunk activations for one stimulus; the last entry is the embedding.
    fn trunk_forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.cfg.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "stimulus has {} features, network expects {}",
                x.len(),
                self.cfg.input_dim()
            )));
        }
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.trunk.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.trunk {
            let mut z = layer.affine(acts.last().unwrap());
            for v in &mut z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Embedding plus per-level logits for one stimulus.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let acts = self.trunk_forward(x)?;
        let emb = acts.last().unwrap();
        let logits_basic = self.head_basic.affine(emb);
        let logits_sub = self.head_sub.affine(emb);
        Ok((emb.clone(), logits_basic, logits_sub))
    }

    /// Embedding rows for a stimulus list, in order.
    pub fn embed(&self, stimuli: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        stimuli
            .iter()
            .map(|x| Ok(self.trunk_forward(x)?.pop().unwrap()))
            .collect()
    }

    /// Embeds a whole dataset, carrying the labels along.
    pub fn embed_dataset(&self, data: &Dataset) -> Result<EmbeddingMatrix> {
        Ok(EmbeddingMatrix {
            rows: self.embed(&data.stimuli)?,
            sub_labels: data.sub_labels.clone(),
            basic_labels: data.basic_labels.clone(),
        })
    }
}

/// Embedding rows aligned with their stimulus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: Vec<Vec<f64>>,
    pub sub_labels: Vec<usize>,
    pub basic_labels: Vec<usize>,
}

impl EmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Draws initial parameters with the documented rule: for every layer,
/// weights ~ N(0, (init_scale * sqrt(2 / fan_in))^2) in row-major order,
/// biases zero. Trunk layers are drawn first, then the basic head, then the
/// subordinate head.
pub fn init_network(cfg: &NetConfig) -> Result<Network> {
    cfg.validate()?;
    let mut rng = Rng::seed_from(hash64(cfg.seed, "init", 0));
    let trunk: Vec<Dense> = cfg
        .layer_sizes
        .windows(2)
        .map(|w| Dense::new(w[0], w[1], cfg.init_scale, &mut rng))
        .collect();
    let emb = cfg.embedding_dim();
    let head_basic = Dense::new(emb, cfg.n_basic, cfg.init_scale, &mut rng);
    let head_sub = Dense::new(emb, cfg.n_sub, cfg.init_scale, &mut rng);
    Ok(Network {
        cfg: cfg.clone(),
        trunk,
        head_basic,
        head_sub,
    })
}

/// Numerically stabilized softmax cross-entropy.
///
/// Returns `(-log softmax(logits)[target], softmax(logits) - onehot(target))`.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[target] - max);
    let mut grad: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Softmax probabilities (no loss), stabilized the same way.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// The convex combination `alpha * loss_basic + (1 - alpha) * loss_sub`.
pub fn joint_loss(loss_basic: f64, loss_sub: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok(alpha * loss_basic + (1.0 - alpha) * loss_sub)
}

/// Loss the optimizer minimizes in a given phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSel {
    Basic,
    Sub,
    /// Joint loss with the contained alpha weight on the basic head.
    Joint(f64),
}

impl LossSel {
    fn uses_basic(self) -> bool {
        !matches!(self, LossSel::Sub)
    }

    fn uses_sub(self) -> bool {
        !matches!(self, LossSel::Basic)
    }
}

/// Per-tensor gradients, same shapes as the network parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub trunk: Vec<(Vec<f64>, Vec<f64>)>,
    pub head_basic: (Vec<f64>, Vec<f64>),
    pub head_sub: (Vec<f64>, Vec<f64>),
}

impl Gradients {
    fn zeros(net: &Network) -> Gradients {
        Gradients {
            trunk: net
                .trunk
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
            head_basic: (
                vec![0.0; net.head_basic.w.len()],
                vec![0.0; net.head_basic.b.len()],
            ),
            head_sub: (
                vec![0.0; net.head_sub.w.len()],
                vec![0.0; net.head_sub.b.len()],
            ),
        }
    }

    pub fn tensor(&self, id: TensorId) -> &Vec<f64> {
        match id {
            TensorId::TrunkW(l) => &self.trunk[l].0,
            TensorId::TrunkB(l) => &self.trunk[l].1,
            TensorId::HeadW(Level::Basic) => &self.head_basic.0,
            TensorId::HeadB(Level::Basic) => &self.head_basic.1,
            TensorId::HeadW(Level::Sub) => &self.head_sub.0,
            TensorId::HeadB(Level::Sub) => &self.head_sub.1,
        }
    }

    fn scale(&mut self, factor: f64) {
        let apply = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= factor);
        for (w, b) in &mut self.trunk {
            apply(w);
            apply(b);
        }
        apply(&mut self.head_basic.0);
        apply(&mut self.head_basic.1);
        apply(&mut self.head_sub.0);
        apply(&mut self.head_sub.1);
    }
}

/// A labeled minibatch view.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub stimuli: &'a [Vec<f64>],
    pub basic_targets: &'a [usize],
    pub sub_targets: &'a [usize],
}

/// Mean loss and mean parameter gradients of `sel` over the batch.
/// Also returns the mean per-head losses that were actually evaluated.
pub fn batch_loss_and_grad(
    net: &Network,
    batch: &Batch,
    sel: LossSel,
) -> Result<(f64, Option<f64>, Option<f64>, Gradients)> {
    let n = batch.stimuli.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if let LossSel::Joint(alpha) = sel {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
    }
    let mut grads = Gradients::zeros(net);
    let mut loss_sum = 0.0;
    let mut basic_sum = 0.0;
    let mut sub_sum = 0.0;
    for idx in 0..n {
        let acts = net.trunk_forward(&batch.stimuli[idx])?;
        let emb = acts.last().unwrap();
        // dL/d(embedding), summed over active heads.
        let mut demb = vec![0.0; emb.len()];
        let mut sample_loss = 0.0;
        for (level, active, weight, target) in [
            (
                Level::Basic,
                sel.uses_basic(),
                match sel {
                    LossSel::Basic => 1.0,
                    LossSel::Joint(a) => a,
                    LossSel::Sub => 0.0,
                },
                batch.basic_targets[idx],
            ),
            (
                Level::Sub,
                sel.uses_sub(),
                match sel {
                    LossSel::Sub => 1.0,
                    LossSel::Joint(a) => 1.0 - a,
                    LossSel::Basic => 0.0,
                },
                batch.sub_targets[idx],
            ),
        ] {
            if !active {
                continue;
            }
            let head = match level {
                Level::Basic => &net.head_basic,
                Level::Sub => &net.head_sub,
            };
            if target >= head.out_dim {
                return Err(Error::LabelHeadMismatch(format!(
                    "target {} exceeds {:?} head size {}",
                    target, level, head.out_dim
                )));
            }
            let logits = head.affine(emb);
            let (loss, mut glogits) = softmax_xent(&logits, target)?;
            match level {
                Level::Basic => basic_sum += loss,
                Level::Sub => sub_sum += loss,
            }
            sample_loss += weight * loss;
            for g in &mut glogits {
                *g *= weight;
            }
            let (gw, gb) = match level {
                Level::Basic => &mut grads.head_basic,
                Level::Sub => &mut grads.head_sub,
            };
            for (j, &ej) in emb.iter().enumerate() {
                let row = &mut gw[j * head.out_dim..(j + 1) * head.out_dim];
                for (k, &gk) in glogits.iter().enumerate() {
                    row[k] += ej * gk;
                }
            }
            for (k, &gk) in glogits.iter().enumerate() {
                gb[k] += gk;
                let wrow_stride = head.out_dim;
                for j in 0..emb.len() {
                    demb[j] += head.w[j * wrow_stride + k] * gk;
                }
            }
        }
        loss_sum += sample_loss;
        // Backprop through the trunk. delta starts as dL/d(post-relu last).
        let mut delta = demb;
        for l in (0..net.trunk.len()).rev() {
            let layer = &net.trunk[l];
            let a_out = &acts[l + 1];
            let a_in = &acts[l];
            // ReLU mask: activation 0 means the unit was clamped.
            let dz: Vec<f64> = delta
                .iter()
                .zip(a_out)
                .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
                .collect();
            let (gw, gb) = &mut grads.trunk[l];
            for (i, &ai) in a_in.iter().enumerate() {
                let row = &mut gw[i * layer.out_dim..(i + 1) * layer.out_dim];
                for (j, &dj) in dz.iter().enumerate() {
                    row[j] += ai * dj;
                }
            }
            for (j, &dj) in dz.iter().enumerate() {
                gb[j] += dj;
            }
            let mut dprev = vec![0.0; layer.in_dim];
            for (i, dp) in dprev.iter_mut().enumerate() {
                let row = &layer.w[i * layer.out_dim..(i + 1) * layer.out_dim];
                *dp = row.iter().zip(&dz).map(|(&w, &d)| w * d).sum();
            }
            delta = dprev;
        }
    }
    grads.scale(1.0 / n as f64);
    let mean = loss_sum / n as f64;
    let mean_basic = sel.uses_basic().then(|| basic_sum / n as f64);
    let mean_sub = sel.uses_sub().then(|| sub_sum / n as f64);
    Ok((mean, mean_basic, mean_sub, grads))
}

/// One SGD step; frozen tensors are not touched at all.
fn sgd_step(net: &mut Network, grads: &Gradients, lr: f64) {
    for id in net.tensor_ids() {
        if net.tensor_frozen(id) {
            continue;
        }
        let g = grads.tensor(id).clone();
        let p = net.tensor_mut(id);
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= lr * gi;
        }
    }
}

/// Training schedule parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs_pretrain: usize,
    pub epochs_tune: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    Tune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Tune => "tune",
        }
    }
}

/// End-of-epoch statistics evaluated over the full training set in index
/// order, so they are independent of the minibatch partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub phase: Phase,
    pub loss_basic: Option<f64>,
    pub loss_sub: Option<f64>,
    pub loss_joint: Option<f64>,
    pub acc_basic: Option<f64>,
    pub acc_sub: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub history: Vec<EpochStats>,
}

fn accuracy(net: &Network, data: &Dataset, level: Level) -> Result<f64> {
    let mut hits = 0usize;
    for i in 0..data.len() {
        let (_, lb, ls) = net.forward(&data.stimuli[i])?;
        let (logits, target) = match level {
            Level::Basic => (lb, data.basic_labels[i]),
            Level::Sub => (ls, data.sub_labels[i]),
        };
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if pred == target {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

fn epoch_stats(
    net: &Network,
    data: &Dataset,
    sel: LossSel,
    epoch: usize,
    phase: Phase,
) -> Result<EpochStats> {
    let full = Batch {
        stimuli: &data.stimuli,
        basic_targets: &data.basic_labels,
        sub_targets: &data.sub_labels,
    };
    let (_, mean_basic, mean_sub, _) = batch_loss_and_grad(net, &full, sel)?;
    let loss_joint = match (sel, mean_basic, mean_sub) {
        (LossSel::Joint(alpha), Some(lb), Some(ls)) => Some(joint_loss(lb, ls, alpha)?),
        _ => None,
    };
    for loss in [mean_basic, mean_sub, loss_joint].into_iter().flatten() {
        if !loss.is_finite() {
            return Err(Error::DivergenceDetected { epoch });
        }
    }
    let acc_basic = match sel.uses_basic() {
        true => Some(accuracy(net, data, Level::Basic)?),
        false => None,
    };
    let acc_sub = match sel.uses_sub() {
        true => Some(accuracy(net, data, Level::Sub)?),
        false => None,
    };
    Ok(EpochStats {
        epoch,
        phase,
        loss_basic: mean_basic,
        loss_sub: mean_sub,
        loss_joint,
        acc_basic,
        acc_sub,
    })
}

fn run_phase(
    net: &mut Network,
    data: &Dataset,
    tcfg: &TrainConfig,
    sel: LossSel,
    epochs: usize,
    phase: Phase,
    epoch_offset: usize,
    rng: &mut Rng,
    history: &mut Vec<EpochStats>,
) -> Result<()> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    for e in 0..epochs {
        let epoch = epoch_offset + e + 1;
        rng.shuffle(&mut order);
        for chunk in order.chunks(tcfg.batch_size) {
            let stimuli: Vec<Vec<f64>> = chunk.iter().map(|&i| data.stimuli[i].clone()).collect();
            let basics: Vec<usize> = chunk.iter().map(|&i| data.basic_labels[i]).collect();
            let subs: Vec<usize> = chunk.iter().map(|&i| data.sub_labels[i]).collect();
            let batch = Batch {
                stimuli: &stimuli,
                basic_targets: &basics,
                sub_targets: &subs,
            };
            let (loss, _, _, grads) = batch_loss_and_grad(net, &batch, sel)?;
            if !loss.is_finite() {
                return Err(Error::DivergenceDetected { epoch });
            }
            sgd_step(net, &grads, tcfg.learning_rate);
        }
        history.push(epoch_stats(net, data, sel, epoch, phase)?);
    }
    Ok(())
}

/// Runs the regime's schedule on `data` and returns the trained network plus
/// the per-epoch loss history. Deterministic given the config seeds.
pub fn train(mut net: Network, data: &Dataset, tcfg: &TrainConfig) -> Result<TrainedModel> {
    tcfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if data.dim() != net.cfg.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dataset dim {} != network input dim {}",
            data.dim(),
            net.cfg.input_dim()
        )));
    }
    let max_basic = data.basic_labels.iter().max().copied().unwrap_or(0);
    let max_sub = data.sub_labels.iter().max().copied().unwrap_or(0);
    if max_basic >= net.cfg.n_basic || max_sub >= net.cfg.n_sub {
        return Err(Error::LabelHeadMismatch(format!(
            "labels up to ({max_basic}, {max_sub}) but heads sized ({}, {})",
            net.cfg.n_basic, net.cfg.n_sub
        )));
    }

    let mut rng = Rng::seed_from(hash64(tcfg.seed, "shuffle", 0));
    let mut history = Vec::new();

    let pretrain_sel = match tcfg.regime.pretrain_level() {
        Level::Basic => LossSel::Basic,
        Level::Sub => LossSel::Sub,
    };
    net.unfreeze_all();
    run_phase(
        &mut net,
        data,
        tcfg,
        pretrain_sel,
        tcfg.epochs_pretrain,
        Phase::Pretrain,
        0,
        &mut rng,
        &mut history,
    )?;

    if tcfg.regime.has_tune_phase() {
        net.freeze_all_but_last_trunk_layer();
        run_phase(
            &mut net,
            data,
            tcfg,
            LossSel::Joint(tcfg.alpha),
            tcfg.epochs_tune,
            Phase::Tune,
            tcfg.epochs_pretrain,
            &mut rng,
            &mut history,
        )?;
    }

    Ok(TrainedModel {
        network: net,
        history,
    })
}

/// Compares analytic gradients against central finite differences of the
/// selected loss, parameter by parameter, and returns the maximum relative
/// error `|a - f| / max(|a|, |f|, 1e-8)`.
pub fn grad_check(net: &Network, batch: &Batch, sel: LossSel, epsilon: f64) -> Result<f64> {
    assert!(epsilon > 0.0);
    let (_, _, _, analytic) = batch_loss_and_grad(net, batch, sel)?;
    let mut probe = net.clone();
    let mut max_rel = 0.0f64;
    for id in net.tensor_ids() {
        for k in 0..net.tensor(id).len() {
            let original = probe.tensor(id)[k];
            probe.tensor_mut(id)[k] = original + epsilon;
            let (lp, _, _, _) = batch_loss_and_grad(&probe, batch, sel)?;
            probe.tensor_mut(id)[k] = original - epsilon;
            let (lm, _, _, _) = batch_loss_and_grad(&probe, batch, sel)?;
            probe.tensor_mut(id)[k] = original;
            let numeric = (lp - lm) / (2.0 * epsilon);
            let a = analytic.tensor(id)[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
