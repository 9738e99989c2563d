//! Server-side denoising autoencoders, one per sensor.
//!
//! During the denoising learning period the server sees both the clean and
//! the quantized embedding of every upload and trains the autoencoder to map
//! the latter back to the former. Afterwards the model is frozen and only used
//! for inference.

use crate::codec;
use crate::error::{Error, Result};
use crate::numkit::{adam_step, mse_loss, Activation, AdamState, DenseNet, Mat};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub lr: f64,
    /// Mini-batch size within one training pass over a round's pair.
    pub batch_size: usize,
    /// Passes over the round's pair per training round.
    pub epochs_per_round: usize,
}

impl Default for DaeConfig {
    fn default() -> Self {
        DaeConfig {
            hidden: 16,
            latent: 4,
            lr: 0.01,
            batch_size: 32,
            epochs_per_round: 1,
        }
    }
}

impl DaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.latent == 0 || self.batch_size == 0 || self.epochs_per_round == 0 {
            return Err(Error::Config("autoencoder sizes and counts must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("autoencoder learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// A (noisy, clean) embedding pair observed during the learning period.
#[derive(Debug, Clone)]
pub struct DaePair {
    pub noisy: Mat,
    pub clean: Mat,
}

#[derive(Debug, Clone)]
pub struct DaeModel {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    enc_opt: AdamState,
    dec_opt: AdamState,
    cfg: DaeConfig,
    learning_period: usize,
    trained_rounds: usize,
    frozen: bool,
    shuffle: ChaCha8Rng,
}

impl DaeModel {
    /// `width` is the embedding width `d_k`; the model freezes itself after
    /// `learning_period` training rounds.
    pub fn new(width: usize, learning_period: usize, cfg: &DaeConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let encoder = DenseNet::init(
            &[width, cfg.hidden, cfg.latent],
            &[Activation::Tanh, Activation::Tanh],
            &mut rng,
        )?;
        let decoder = DenseNet::init(
            &[cfg.latent, cfg.hidden, width],
            &[Activation::Tanh, Activation::Linear],
            &mut rng,
        )?;
        Ok(DaeModel {
            encoder,
            decoder,
            enc_opt: AdamState::default(),
            dec_opt: AdamState::default(),
            cfg: cfg.clone(),
            learning_period,
            trained_rounds: 0,
            frozen: learning_period == 0,
            shuffle: rng,
        })
    }

    pub fn width(&self) -> usize {
        self.encoder.input_width()
    }

    pub fn trained_rounds(&self) -> usize {
        self.trained_rounds
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn learning_period(&self) -> usize {
        self.learning_period
    }

    fn check_width(&self, m: &Mat) -> Result<()> {
        if m.cols() != self.width() {
            return Err(Error::dim(format!(
                "embedding width {} for an autoencoder of width {}",
                m.cols(),
                self.width()
            )));
        }
        Ok(())
    }

    /// Forward pass; never touches the weights.
    pub fn denoise(&self, noisy: &Mat) -> Result<Mat> {
        self.check_width(noisy)?;
        let code = self.encoder.predict(noisy)?;
        self.decoder.predict(&code)
    }

    /// Reconstruction MSE of `denoise(noisy)` against `clean`.
    pub fn reconstruction_mse(&self, pair: &DaePair) -> Result<f64> {
        self.denoise(&pair.noisy)?.mse(&pair.clean)
    }

    fn step(&mut self, noisy: &Mat, clean: &Mat) -> Result<f64> {
        let enc = self.encoder.forward(noisy)?;
        let dec = self.decoder.forward(enc.output())?;
        let (loss, grad) = mse_loss(dec.output(), clean)?;
        let (dec_grads, code_grad) = self.decoder.backward(&dec, &grad)?;
        let (enc_grads, _) = self.encoder.backward(&enc, &code_grad)?;
        adam_step(&mut self.decoder, &dec_grads, &mut self.dec_opt, self.cfg.lr)?;
        adam_step(&mut self.encoder, &enc_grads, &mut self.enc_opt, self.cfg.lr)?;
        Ok(loss)
    }

    /// One training round on the current pair: `epochs_per_round` shuffled
    /// mini-batch passes. Returns the mean mini-batch loss of the round.
    pub fn train_round(&mut self, pair: &DaePair) -> Result<f64> {
        if self.frozen {
            return Err(Error::State(format!(
                "autoencoder is frozen after {} rounds",
                self.trained_rounds
            )));
        }
        pair.noisy.check_same_shape(&pair.clean, "autoencoder pair")?;
        self.check_width(&pair.noisy)?;
        let n = pair.noisy.rows();
        let mut total = 0.0;
        let mut batches = 0usize;
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..self.cfg.epochs_per_round {
            order.shuffle(&mut self.shuffle);
            for chunk in order.chunks(self.cfg.batch_size) {
                let noisy = pair.noisy.select_rows(chunk);
                let clean = pair.clean.select_rows(chunk);
                total += self.step(&noisy, &clean)?;
                batches += 1;
            }
        }
        if !self.encoder.is_finite() || !self.decoder.is_finite() {
            return Err(Error::Numeric("autoencoder weights diverged".into()));
        }
        self.trained_rounds += 1;
        if self.trained_rounds >= self.learning_period {
            self.frozen = true;
        }
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        codec::save(path, &[&self.encoder, &self.decoder])
    }

    /// Loads weights into a frozen model.
    pub fn load(path: &Path, cfg: &DaeConfig) -> Result<Self> {
        let mut nets = codec::load(path)?;
        if nets.len() != 2 {
            return Err(Error::Input(format!(
                "expected 2 networks in {}, found {}",
                path.display(),
                nets.len()
            )));
        }
        let decoder = nets.pop().expect("two");
        let encoder = nets.pop().expect("two");
        DaeModel::from_nets(encoder, decoder, cfg)
    }

    /// Wraps trained networks in a frozen model.
    pub fn from_nets(encoder: DenseNet, decoder: DenseNet, cfg: &DaeConfig) -> Result<Self> {
        if encoder.output_width() != decoder.input_width() || encoder.input_width() != decoder.output_width() {
            return Err(Error::dim("encoder/decoder widths do not mirror"));
        }
        Ok(DaeModel {
            encoder,
            decoder,
            enc_opt: AdamState::default(),
            dec_opt: AdamState::default(),
            cfg: cfg.clone(),
            learning_period: 0,
            trained_rounds: 0,
            frozen: true,
            shuffle: crate::rng::stream(0, crate::rng::Purpose::DaeShuffle),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelSpec;
    use crate::rng::{stream, Purpose};
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Embeddings on a 3-dimensional affine subspace of R^8, like the outputs
    /// of a feature extractor with a narrow final hidden layer.
    fn embeddings(rng: &mut ChaCha8Rng, basis: &Mat, n: usize) -> Mat {
        let data: Vec<f64> = (0..n * basis.rows())
            .map(|_| rng.sample::<f64, _>(StandardNormal).tanh())
            .collect();
        let u = Mat::from_vec(n, basis.rows(), data).unwrap();
        u.matmul(basis).unwrap()
    }

    fn basis(rng: &mut ChaCha8Rng) -> Mat {
        let data = (0..3 * 8).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        Mat::from_vec(3, 8, data).unwrap()
    }

    #[test]
    fn untrained_preserves_shape() {
        let dae = DaeModel::new(8, 10, &DaeConfig::default(), stream(1, Purpose::DaeInit)).unwrap();
        let x = Mat::filled(5, 8, 0.3);
        let y = dae.denoise(&x).unwrap();
        assert_eq!(y.shape(), (5, 8));
        assert!(y.is_finite());
        assert_eq!(dae.denoise(&x).unwrap(), y);
        assert!(matches!(dae.denoise(&Mat::zeros(5, 7)), Err(Error::Dimension(_))));
    }

    #[test]
    fn identity_pairs_converge() {
        let mut rng = stream(2, Purpose::Probe);
        let b = basis(&mut rng);
        let x = embeddings(&mut rng, &b, 256);
        let pair = DaePair {
            noisy: x.clone(),
            clean: x,
        };
        let mut dae = DaeModel::new(8, 1000, &DaeConfig::default(), stream(2, Purpose::DaeInit)).unwrap();
        let initial = dae.reconstruction_mse(&pair).unwrap();
        for _ in 0..50 {
            dae.train_round(&pair).unwrap();
        }
        let fin = dae.reconstruction_mse(&pair).unwrap();
        assert!(fin < 0.1 * initial, "initial {initial} final {fin}");
    }

    #[test]
    fn beats_raw_quantization_after_learning_period() {
        let mut rng = stream(3, Purpose::Probe);
        let b = basis(&mut rng);
        let first = embeddings(&mut rng, &b, 256);
        let clip = crate::channel::calibrate_clip(&[&first], 0.999).unwrap();
        let ch = ChannelSpec::quantizer(8, clip).unwrap();
        let mut dae = DaeModel::new(8, 40, &DaeConfig::default(), stream(3, Purpose::DaeInit)).unwrap();
        for _ in 0..40 {
            let clean = embeddings(&mut rng, &b, 256);
            let noisy = ch.transmit(&clean).unwrap();
            dae.train_round(&DaePair { noisy, clean }).unwrap();
        }
        assert!(dae.is_frozen());
        let clean = embeddings(&mut rng, &b, 512);
        let noisy = ch.transmit(&clean).unwrap();
        let pair = DaePair {
            noisy: noisy.clone(),
            clean: clean.clone(),
        };
        let rec = dae.reconstruction_mse(&pair).unwrap();
        let raw = noisy.mse(&clean).unwrap();
        assert!(rec < raw, "denoised {rec} vs raw {raw}");
    }

    #[test]
    fn frozen_model_refuses_training_and_inference_is_read_only() {
        let mut dae = DaeModel::new(4, 1, &DaeConfig::default(), stream(4, Purpose::DaeInit)).unwrap();
        let x = Mat::filled(8, 4, 0.1);
        let pair = DaePair {
            noisy: x.clone(),
            clean: x.clone(),
        };
        dae.train_round(&pair).unwrap();
        assert!(dae.is_frozen());
        assert!(matches!(dae.train_round(&pair), Err(Error::State(_))));
        let (enc, dec) = (dae.encoder.clone(), dae.decoder.clone());
        dae.denoise(&x).unwrap();
        assert_eq!(dae.encoder, enc);
        assert_eq!(dae.decoder, dec);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dae.bin");
        let dae = DaeModel::new(6, 3, &DaeConfig::default(), stream(5, Purpose::DaeInit)).unwrap();
        dae.save(&path).unwrap();
        let back = DaeModel::load(&path, &DaeConfig::default()).unwrap();
        let x = Mat::filled(3, 6, -0.2);
        assert_eq!(back.denoise(&x).unwrap(), dae.denoise(&x).unwrap());
        assert!(back.is_frozen());
    }
}
