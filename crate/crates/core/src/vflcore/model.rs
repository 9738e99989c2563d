use crate::error::{Error, Result};
use crate::numkit::{mse_loss, softmax_rows, softmax_xent, Activation, DenseNet, Mat};
use crate::streams::{Labels, Task};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Architecture of the feature extractors and the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden widths of every feature extractor.
    pub feature_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    /// Embedding width `d_k` (same for every sensor).
    pub embedding_width: usize,
    pub embedding_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_hidden: vec![16, 4],
            hidden_activation: Activation::Tanh,
            embedding_width: 8,
            embedding_activation: Activation::Linear,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_width == 0 || self.feature_hidden.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }
}

/// Head `θ_0` plus one feature extractor `θ_k` per sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub head: DenseNet,
    pub features: Vec<DenseNet>,
    pub task: Task,
}

impl GlobalModel {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, sensor_widths: &[usize], task: Task, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut features = Vec::with_capacity(sensor_widths.len());
        for &p in sensor_widths {
            let mut widths = vec![p];
            widths.extend(&cfg.feature_hidden);
            widths.push(cfg.embedding_width);
            let mut acts = vec![cfg.hidden_activation; cfg.feature_hidden.len()];
            acts.push(cfg.embedding_activation);
            features.push(DenseNet::init(&widths, &acts, rng)?);
        }
        let head = DenseNet::init(
            &[cfg.embedding_width * sensor_widths.len(), task_outputs(task)],
            &[Activation::Linear],
            rng,
        )?;
        GlobalModel::from_parts(head, features, task)
    }

    pub fn from_parts(head: DenseNet, features: Vec<DenseNet>, task: Task) -> Result<Self> {
        let total: usize = features.iter().map(DenseNet::output_width).sum();
        if head.input_width() != total {
            return Err(Error::dim(format!(
                "head expects {} inputs but extractors emit {total}",
                head.input_width()
            )));
        }
        if head.output_width() != task_outputs(task) {
            return Err(Error::dim("head output width does not match the task"));
        }
        Ok(GlobalModel { head, features, task })
    }

    pub fn sensors(&self) -> usize {
        self.features.len()
    }

    /// Total parameter count `D`.
    pub fn param_count(&self) -> usize {
        self.head.param_count() + self.features.iter().map(DenseNet::param_count).sum::<usize>()
    }

    pub fn embedding_widths(&self) -> Vec<usize> {
        self.features.iter().map(DenseNet::output_width).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.head.is_finite() && self.features.iter().all(DenseNet::is_finite)
    }

    pub fn embeddings(&self, blocks: &[Mat]) -> Result<Vec<Mat>> {
        if blocks.len() != self.sensors() {
            return Err(Error::dim(format!(
                "{} blocks for {} sensors",
                blocks.len(),
                self.sensors()
            )));
        }
        self.features
            .iter()
            .zip(blocks)
            .map(|(net, x)| extract_embedding(net, x))
            .collect()
    }

    /// Loss `F_t(Θ)` on clean embeddings.
    pub fn loss(&self, blocks: &[Mat], labels: &Labels) -> Result<f64> {
        let emb = self.embeddings(blocks)?;
        head_loss(&self.head, &emb, labels)
    }

    /// Every parameter, head first then sensors in order.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.head.params();
        for f in &self.features {
            p.extend(f.params());
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim("parameter vector length mismatch"));
        }
        let mut off = self.head.param_count();
        self.head.set_params(&params[..off])?;
        for f in &mut self.features {
            let n = f.param_count();
            f.set_params(&params[off..off + n])?;
            off += n;
        }
        Ok(())
    }

    pub fn zeroed(&self) -> GlobalModel {
        GlobalModel {
            head: self.head.zeroed(),
            features: self.features.iter().map(DenseNet::zeroed).collect(),
            task: self.task,
        }
    }
}

pub fn task_outputs(task: Task) -> usize {
    match task {
        Task::Classification { classes } => classes,
        Task::Regression => 1,
    }
}

/// `h_k(θ_k; x_k)`: the final activation of the extractor.
pub fn extract_embedding(net: &DenseNet, block: &Mat) -> Result<Mat> {
    net.predict(block)
}

/// Task loss of head outputs and its gradient w.r.t. those outputs.
pub fn task_loss(pred: &Mat, labels: &Labels) -> Result<(f64, Mat)> {
    match labels {
        Labels::Class(y) => softmax_xent(pred, y),
        Labels::Real(y) => {
            let target = Mat::from_vec(y.len(), 1, y.clone())?;
            mse_loss(pred, &target)
        }
    }
}

/// Task loss with per-sample weights (weights need not sum to one).
pub fn weighted_task_loss(pred: &Mat, labels: &Labels, weights: &[f64]) -> Result<(f64, Mat)> {
    let n = pred.rows();
    if labels.len() != n || weights.len() != n {
        return Err(Error::dim("weighted loss length mismatch"));
    }
    let mut grad = Mat::zeros(n, pred.cols());
    let mut loss = 0.0;
    match labels {
        Labels::Class(y) => {
            if let Some(&bad) = y.iter().find(|&&c| c >= pred.cols()) {
                return Err(Error::Domain(format!("label {bad} outside [0, {})", pred.cols())));
            }
            let probs = softmax_rows(pred);
            for i in 0..n {
                let row = pred.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += weights[i] * (lse - row[y[i]]);
                for c in 0..pred.cols() {
                    let onehot = if c == y[i] { 1.0 } else { 0.0 };
                    grad[(i, c)] = weights[i] * (probs[(i, c)] - onehot);
                }
            }
        }
        Labels::Real(y) => {
            if pred.cols() != 1 {
                return Err(Error::dim("regression head must have one output"));
            }
            for i in 0..n {
                let d = pred[(i, 0)] - y[i];
                loss += weights[i] * d * d;
                grad[(i, 0)] = weights[i] * 2.0 * d;
            }
        }
    }
    Ok((loss, grad))
}

pub fn head_loss(head: &DenseNet, embeddings: &[Mat], labels: &Labels) -> Result<f64> {
    let refs: Vec<&Mat> = embeddings.iter().collect();
    let pred = head.predict(&Mat::hcat(&refs)?)?;
    Ok(task_loss(&pred, labels)?.0)
}

/// Classification: fraction correct. Regression: `1 − RMSE/std(y)` clipped
/// to `[0, 1]`.
pub fn accuracy(pred: &Mat, labels: &Labels) -> Result<f64> {
    if pred.rows() != labels.len() {
        return Err(Error::dim("prediction/label count mismatch"));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    Ok(match labels {
        Labels::Class(y) => {
            let correct = y
                .iter()
                .enumerate()
                .filter(|&(i, &c)| {
                    let row = pred.row(i);
                    let mut best = 0;
                    for (j, v) in row.iter().enumerate() {
                        if *v > row[best] {
                            best = j;
                        }
                    }
                    best == c
                })
                .count();
            correct as f64 / y.len() as f64
        }
        Labels::Real(y) => {
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let rmse = (y
                .iter()
                .enumerate()
                .map(|(i, v)| (pred[(i, 0)] - v).powi(2))
                .sum::<f64>()
                / n)
                .sqrt();
            if std > 0.0 {
                (1.0 - rmse / std).clamp(0.0, 1.0)
            } else {
                0.0
            }
        }
    })
}

/// Which party's block: the head (`0`) or sensor `k ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Head,
    Sensor(usize),
}

/// Round snapshot `{θ_0, ĥ_1, …, ĥ_K}` broadcast to every party.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRepresentation {
    head: DenseNet,
    embeddings: Vec<Mat>,
}

/// `Φ̂_{-k}`: the representation with party `k` left out.
#[derive(Debug, Clone, Copy)]
pub struct ReducedView<'a> {
    rep: &'a ModelRepresentation,
    excluded: usize,
}

pub fn assemble_representation(head: &DenseNet, embeddings: Vec<Mat>, sensors: usize) -> Result<ModelRepresentation> {
    if embeddings.len() != sensors {
        return Err(Error::Protocol(format!(
            "representation needs {sensors} embedding blocks, got {}",
            embeddings.len()
        )));
    }
    let rows = embeddings.first().map_or(0, Mat::rows);
    if embeddings.iter().any(|e| e.rows() != rows) {
        return Err(Error::Protocol("embedding blocks are not row-aligned".into()));
    }
    let total: usize = embeddings.iter().map(Mat::cols).sum();
    if total != head.input_width() {
        return Err(Error::Protocol(format!(
            "embeddings span {total} columns, head expects {}",
            head.input_width()
        )));
    }
    Ok(ModelRepresentation {
        head: head.clone(),
        embeddings,
    })
}

impl ModelRepresentation {
    pub fn head(&self) -> &DenseNet {
        &self.head
    }

    pub fn embeddings(&self) -> &[Mat] {
        &self.embeddings
    }

    pub fn sensors(&self) -> usize {
        self.embeddings.len()
    }

    /// Reduced view for party `k` (0 = head, 1..=K sensors).
    pub fn without(&self, k: usize) -> Result<ReducedView<'_>> {
        if k > self.sensors() {
            return Err(Error::Protocol(format!(
                "no party {k} in a {}-sensor round",
                self.sensors()
            )));
        }
        Ok(ReducedView { rep: self, excluded: k })
    }

    /// FNV-1a over the bit patterns of every value in the snapshot.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        self.head.params().into_iter().for_each(&mut eat);
        for e in &self.embeddings {
            e.as_slice().iter().copied().for_each(&mut eat);
        }
        h
    }
}

impl<'a> ReducedView<'a> {
    pub fn excluded(&self) -> usize {
        self.excluded
    }

    pub fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        if self.excluded != 0 {
            out.push(Block::Head);
        }
        for k in 1..=self.rep.sensors() {
            if k != self.excluded {
                out.push(Block::Sensor(k));
            }
        }
        out
    }

    pub fn head(&self) -> Option<&'a DenseNet> {
        (self.excluded != 0).then_some(&self.rep.head)
    }

    /// Embedding of sensor `k` (1-based), unless it is the excluded block.
    pub fn embedding(&self, k: usize) -> Option<&'a Mat> {
        if k == 0 || k == self.excluded {
            None
        } else {
            self.rep.embeddings.get(k - 1)
        }
    }

    fn head_input_with(&self, own: &Mat) -> Result<Mat> {
        let mut refs: Vec<&Mat> = Vec::with_capacity(self.rep.sensors());
        for k in 1..=self.rep.sensors() {
            refs.push(if k == self.excluded {
                own
            } else {
                &self.rep.embeddings[k - 1]
            });
        }
        Mat::hcat(&refs)
    }
}

/// Gradient of `F_t(Φ̂_{-k}, h_k(θ_k))` w.r.t. `θ_k` for a sensor `k ≥ 1`.
///
/// Returns the loss and the gradient bundle.
pub fn sensor_gradient(
    view: &ReducedView<'_>,
    net: &DenseNet,
    block: &Mat,
    labels: &Labels,
) -> Result<(f64, crate::numkit::GradBundle)> {
    let k = view.excluded();
    if k == 0 {
        return Err(Error::Protocol("sensor update needs a sensor-excluded view".into()));
    }
    let head = view.head().expect("sensor views keep the head");
    let acts = net.forward(block)?;
    let input = view.head_input_with(acts.output())?;
    let head_acts = head.forward(&input)?;
    let (loss, grad) = task_loss(head_acts.output(), labels)?;
    let (_, input_grad) = head.backward(&head_acts, &grad)?;
    let offset: usize = view.rep.embeddings[..k - 1].iter().map(Mat::cols).sum();
    let own_grad = input_grad.col_block(offset, acts.output().cols())?;
    let (grads, _) = net.backward(&acts, &own_grad)?;
    Ok((loss, grads))
}

/// Gradient of `F_t` w.r.t. the head with every embedding fixed.
pub fn head_gradient(head: &DenseNet, embeddings: &[Mat], labels: &Labels) -> Result<(f64, crate::numkit::GradBundle)> {
    let refs: Vec<&Mat> = embeddings.iter().collect();
    let acts = head.forward(&Mat::hcat(&refs)?)?;
    let (loss, grad) = task_loss(acts.output(), labels)?;
    let (grads, _) = head.backward(&acts, &grad)?;
    Ok((loss, grads))
}

fn check_iterations(iterations: usize) -> Result<()> {
    if iterations < 1 {
        return Err(Error::Contract(
            "every party performs at least one local iteration".into(),
        ));
    }
    Ok(())
}

/// `iterations` OGD steps on sensor `k`'s extractor against a fixed view.
///
/// The own embedding is recomputed every step; the head snapshot and the
/// other sensors' blocks stay as distributed. Returns the loss seen at each
/// step (before that step's update).
pub fn sensor_local_update(
    view: &ReducedView<'_>,
    net: &mut DenseNet,
    block: &Mat,
    labels: &Labels,
    iterations: usize,
    eta: f64,
) -> Result<Vec<f64>> {
    check_iterations(iterations)?;
    let mut losses = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (loss, grads) = sensor_gradient(view, net, block, labels)?;
        net.ogd_step(&grads, eta)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// `iterations` OGD steps on the head with every embedding block frozen.
pub fn head_local_update(
    head: &mut DenseNet,
    embeddings: &[Mat],
    labels: &Labels,
    iterations: usize,
    eta: f64,
) -> Result<Vec<f64>> {
    check_iterations(iterations)?;
    let mut losses = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (loss, grads) = head_gradient(head, embeddings, labels)?;
        head.ogd_step(&grads, eta)?;
        losses.push(loss);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Layer;
    use crate::rng::{stream, Purpose};

    fn scalar(w: f64) -> DenseNet {
        DenseNet::from_layers(vec![Layer::new(
            Mat::from_vec(1, 1, vec![w]).unwrap(),
            vec![0.0],
            Activation::Linear,
        )
        .unwrap()])
        .unwrap()
    }

    fn toy() -> (GlobalModel, Vec<Mat>, Labels) {
        // two linear scalar extractors and a linear 2→1 head
        let head = DenseNet::from_layers(vec![Layer::new(
            Mat::from_vec(2, 1, vec![0.5, -1.0]).unwrap(),
            vec![0.1],
            Activation::Linear,
        )
        .unwrap()])
        .unwrap();
        let m = GlobalModel::from_parts(head, vec![scalar(2.0), scalar(0.5)], Task::Regression).unwrap();
        let x1 = Mat::from_vec(3, 1, vec![1.0, -1.0, 2.0]).unwrap();
        let x2 = Mat::from_vec(3, 1, vec![0.5, 1.5, -1.0]).unwrap();
        (m, vec![x1, x2], Labels::Real(vec![1.0, 0.0, -0.5]))
    }

    #[test]
    fn zero_extractor_gives_zero_embedding() {
        let net = scalar(0.0);
        let x = Mat::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(extract_embedding(&net, &x)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn representation_counts_and_exclusion() {
        let mut rng = stream(1, Purpose::ModelInit);
        let m = GlobalModel::init(
            &ModelConfig::default(),
            &[4, 4, 4],
            Task::Classification { classes: 3 },
            &mut rng,
        )
        .unwrap();
        let blocks = vec![Mat::filled(5, 4, 0.2); 3];
        let emb = m.embeddings(&blocks).unwrap();
        assert_eq!(emb[0], extract_embedding(&m.features[0], &blocks[0]).unwrap());
        assert_eq!(emb[0].cols(), m.head.input_width() / 3);
        let rep = assemble_representation(&m.head, emb.clone(), 3).unwrap();
        assert_eq!(rep.sensors(), 3);
        assert_eq!(
            rep.without(2).unwrap().blocks(),
            vec![Block::Head, Block::Sensor(1), Block::Sensor(3)]
        );
        assert_eq!(
            rep.without(0).unwrap().blocks(),
            vec![Block::Sensor(1), Block::Sensor(2), Block::Sensor(3)]
        );
        assert!(rep.without(2).unwrap().embedding(2).is_none());
        assert_eq!(rep.embeddings(), &emb[..]);
        assert!(matches!(
            assemble_representation(&m.head, emb[..2].to_vec(), 3),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn single_sensor_step_matches_hand_gradient() {
        // pred = 0.5·(w1 x1) − 1.0·(w2 x2) + 0.1, loss = mean (pred − y)²
        // dL/dw1 = mean 2(pred − y)·0.5·x1
        let (m, blocks, labels) = toy();
        let Labels::Real(y) = &labels else { unreachable!() };
        let emb = m.embeddings(&blocks).unwrap();
        let rep = assemble_representation(&m.head, emb, 2).unwrap();
        let view = rep.without(1).unwrap();
        let mut net = m.features[0].clone();
        let eta = 0.1;
        sensor_local_update(&view, &mut net, &blocks[0], &labels, 1, eta).unwrap();

        let mut g = 0.0;
        for n in 0..3 {
            let x1 = blocks[0][(n, 0)];
            let x2 = blocks[1][(n, 0)];
            let pred = 0.5 * 2.0 * x1 - 1.0 * 0.5 * x2 + 0.1;
            g += 2.0 * (pred - y[n]) * 0.5 * x1 / 3.0;
        }
        let expected = 2.0 - eta * g;
        assert!((net.layers()[0].weight[(0, 0)] - expected).abs() < 1e-14);
    }

    #[test]
    fn head_step_matches_hand_gradient() {
        let (m, blocks, labels) = toy();
        let Labels::Real(y) = &labels else { unreachable!() };
        let emb = m.embeddings(&blocks).unwrap();
        let mut head = m.head.clone();
        let before = emb.clone();
        head_local_update(&mut head, &emb, &labels, 1, 0.05).unwrap();
        assert_eq!(emb, before);
        // gradient of mean squared error for linear head: (2/N) Hᵀ (H w + b − y)
        let mut gw = [0.0; 2];
        let mut gb = 0.0;
        for n in 0..3 {
            let h = [emb[0][(n, 0)], emb[1][(n, 0)]];
            let r = 0.5 * h[0] - 1.0 * h[1] + 0.1 - y[n];
            gw[0] += 2.0 * r * h[0] / 3.0;
            gw[1] += 2.0 * r * h[1] / 3.0;
            gb += 2.0 * r / 3.0;
        }
        let w = head.layers()[0].weight.as_slice();
        assert!((w[0] - (0.5 - 0.05 * gw[0])).abs() < 1e-14);
        assert!((w[1] - (-1.0 - 0.05 * gw[1])).abs() < 1e-14);
        assert!((head.layers()[0].bias[0] - (0.1 - 0.05 * gb)).abs() < 1e-14);
    }

    #[test]
    fn zero_rate_and_zero_iterations() {
        let (m, blocks, labels) = toy();
        let emb = m.embeddings(&blocks).unwrap();
        let rep = assemble_representation(&m.head, emb, 2).unwrap();
        let view = rep.without(2).unwrap();
        let mut net = m.features[1].clone();
        sensor_local_update(&view, &mut net, &blocks[1], &labels, 5, 0.0).unwrap();
        assert_eq!(net, m.features[1]);
        assert!(matches!(
            sensor_local_update(&view, &mut net, &blocks[1], &labels, 0, 0.1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn local_updates_descend_on_convex_toy() {
        let (m, blocks, labels) = toy();
        let emb = m.embeddings(&blocks).unwrap();
        let rep = assemble_representation(&m.head, emb.clone(), 2).unwrap();
        let mut net = m.features[0].clone();
        let losses = sensor_local_update(&rep.without(1).unwrap(), &mut net, &blocks[0], &labels, 10, 0.05).unwrap();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
        let mut head = m.head.clone();
        let losses = head_local_update(&mut head, &emb, &labels, 10, 0.05).unwrap();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    }

    #[test]
    fn weighted_loss_with_uniform_weights_matches_mean_loss() {
        let pred = Mat::from_rows(&[vec![0.2, -0.1, 0.4], vec![1.0, 0.0, -1.0]]).unwrap();
        let labels = Labels::Class(vec![2, 0]);
        let (a, ga) = task_loss(&pred, &labels).unwrap();
        let (b, gb) = weighted_task_loss(&pred, &labels, &[0.5, 0.5]).unwrap();
        assert!((a - b).abs() < 1e-14);
        for (x, y) in ga.as_slice().iter().zip(gb.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
        let pred = Mat::from_vec(2, 1, vec![0.3, -0.2]).unwrap();
        let labels = Labels::Real(vec![0.0, 1.0]);
        let (a, _) = task_loss(&pred, &labels).unwrap();
        let (b, _) = weighted_task_loss(&pred, &labels, &[0.5, 0.5]).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn accuracy_definitions() {
        let pred = Mat::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        assert!((accuracy(&pred, &Labels::Class(vec![0, 1, 1])).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let pred = Mat::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
        assert_eq!(accuracy(&pred, &Labels::Real(vec![1.0, -1.0])).unwrap(), 1.0);
        let far = Mat::from_vec(2, 1, vec![10.0, -10.0]).unwrap();
        assert_eq!(accuracy(&far, &Labels::Real(vec![-1.0, 1.0])).unwrap(), 0.0);
    }
}
