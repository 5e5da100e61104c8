//! Convolutional autoencoder over hourly transaction windows.
//!
//! The model sees a window as a `[channels, W]` signal. In the multimodal
//! variant a contract's code embedding is projected to a few channels by a
//! trainable dense layer and tiled across all timesteps, so every hour is
//! reconstructed together with the contract's structural fingerprint.
//! Windows whose reconstruction error exceeds a percentile cutoff of the
//! training errors are anomalous; a contract with more than 30% anomalous
//! windows is judged illicit.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{WindowTensor, N_FEATURES};
use crate::ingest::Label;
use crate::nn::{self, LayerSpec, Network, Optimizer, Params, Tensor};
use crate::stats;

/// A contract is illicit when strictly more than this share of its windows is anomalous.
pub const ILLICIT_RATIO: f64 = 0.30;
/// Layers up to and including the bottleneck dense layer.
const ENCODER_LAYERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    TransactionOnly,
    Multimodal,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::TransactionOnly => "transaction-only",
            Variant::Multimodal => "multimodal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaeConfig {
    pub window: usize,
    pub features: usize,
    pub variant: Variant,
    pub embedding_dim: usize,
    pub projection_width: usize,
    pub bottleneck: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CaeConfig {
    fn default() -> Self {
        CaeConfig {
            window: 24,
            features: N_FEATURES,
            variant: Variant::TransactionOnly,
            embedding_dim: 50,
            projection_width: 8,
            bottleneck: 8,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl CaeConfig {
    pub fn channels(&self) -> usize {
        match self.variant {
            Variant::TransactionOnly => self.features,
            Variant::Multimodal => self.features + self.projection_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.window == 0 || !self.window.is_multiple_of(4) {
            return bad(format!("window {} must be a positive multiple of 4", self.window));
        }
        if self.features == 0 || self.bottleneck == 0 || self.batch_size == 0 {
            return bad("features, bottleneck and batch_size must be >= 1".into());
        }
        if self.variant == Variant::Multimodal && (self.embedding_dim == 0 || self.projection_width == 0) {
            return bad("multimodal variant needs embedding_dim and projection_width >= 1".into());
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be >= 0".into());
        }
        Ok(())
    }

    /// Encoder: two stride-2 convolutions and a dense bottleneck. Decoder:
    /// dense, reshape, then two nearest-neighbour upsamplings each followed
    /// by a same-length convolution.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let c = self.channels();
        let quarter = self.window / 4;
        let conv = |i, o, stride| LayerSpec::Conv1d {
            in_channels: i,
            out_channels: o,
            kernel: 3,
            stride,
            padding: 1,
        };
        let dense = |i, o| LayerSpec::Dense {
            inputs: i,
            outputs: o,
            bias: true,
        };
        vec![
            conv(c, 16, 2),
            LayerSpec::Relu,
            conv(16, 8, 2),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            dense(8 * quarter, self.bottleneck),
            dense(self.bottleneck, 8 * quarter),
            LayerSpec::Relu,
            LayerSpec::Reshape { shape: vec![8, quarter] },
            LayerSpec::Upsample1d { factor: 2 },
            conv(8, 16, 1),
            LayerSpec::Relu,
            LayerSpec::Upsample1d { factor: 2 },
            conv(16, c, 1),
        ]
    }
}

pub type EmbeddingLookup = HashMap<String, Vec<f64>>;

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: CaeConfig,
    pub network: Network,
    /// Embedding projection, present only in the multimodal variant.
    pub projection: Option<Network>,
    pub loss_history: Vec<f64>,
}

impl Params for Autoencoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.network.visit_params(f);
        if let Some(p) = &mut self.projection {
            p.visit_params(f);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CaeHeader {
    kind: String,
    config: CaeConfig,
    layers: Vec<LayerSpec>,
    loss_history: Vec<f64>,
}

impl Autoencoder {
    pub fn new(config: CaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let network = Network::new(vec![config.channels(), config.window], config.layer_specs(), &mut rng)?;
        let projection = match config.variant {
            Variant::TransactionOnly => None,
            Variant::Multimodal => Some(Network::new(
                vec![config.embedding_dim],
                vec![LayerSpec::Dense {
                    inputs: config.embedding_dim,
                    outputs: config.projection_width,
                    bias: true,
                }],
                &mut rng,
            )?),
        };
        Ok(Autoencoder {
            config,
            network,
            projection,
            loss_history: Vec::new(),
        })
    }

    fn embedding_for<'a>(&self, window: &WindowTensor, embeddings: &'a EmbeddingLookup) -> Result<Option<&'a [f64]>> {
        match self.config.variant {
            Variant::TransactionOnly => Ok(None),
            Variant::Multimodal => embeddings
                .get(&window.contract_address)
                .map(|v| Some(v.as_slice()))
                .ok_or_else(|| Error::MissingEmbedding(window.contract_address.clone())),
        }
    }

    fn check_window(&self, window: &WindowTensor) -> Result<()> {
        let ok = window.window.len() == self.config.window
            && window.window.iter().all(|r| r.len() == self.config.features);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: format!("{}x{} window", self.config.window, self.config.features),
                actual: format!(
                    "{}x{}",
                    window.window.len(),
                    window.window.first().map_or(0, Vec::len)
                ),
            })
        }
    }

    /// `[channels, W]` model input; projected embedding channels follow the
    /// transaction features.
    pub fn fuse(&self, window: &WindowTensor, embedding: Option<&[f64]>) -> Result<Tensor> {
        self.check_window(window)?;
        let w = self.config.window;
        let mut data = window.channels();
        if let Some(proj) = &self.projection {
            let e = embedding.ok_or_else(|| Error::MissingEmbedding(window.contract_address.clone()))?;
            let p = proj.predict(&Tensor::vector(e.to_vec()))?;
            for &v in p.data() {
                data.extend(std::iter::repeat_n(v, w));
            }
        }
        Tensor::new(vec![self.config.channels(), w], data)
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.network.predict(x)
    }

    /// Mean squared reconstruction error over all `W × channels` entries.
    pub fn score(&self, window: &WindowTensor, embedding: Option<&[f64]>) -> Result<f64> {
        let x = self.fuse(window, embedding)?;
        nn::mse_loss(&x, &self.network.predict(&x)?)
    }

    pub fn score_all(&self, windows: &[WindowTensor], embeddings: &EmbeddingLookup) -> Result<Vec<f64>> {
        windows
            .par_iter()
            .map(|w| self.score(w, self.embedding_for(w, embeddings)?))
            .collect()
    }

    /// Bottleneck activations for one window.
    pub fn encode(&self, window: &WindowTensor, embedding: Option<&[f64]>) -> Result<Vec<f64>> {
        let x = self.fuse(window, embedding)?;
        Ok(self.network.predict_prefix(&x, ENCODER_LAYERS)?.into_data())
    }

    /// Loss against a fixed `target` with gradients accumulated into every
    /// parameter, including the projection via the input path. `scale`
    /// multiplies the gradient (e.g. `1/batch`).
    pub fn accumulate(
        &mut self,
        window: &WindowTensor,
        embedding: Option<&[f64]>,
        target: &Tensor,
        scale: f64,
    ) -> Result<f64> {
        self.check_window(window)?;
        let w = self.config.window;
        let mut data = window.channels();
        if let Some(proj) = &mut self.projection {
            let e = embedding.ok_or_else(|| Error::MissingEmbedding(window.contract_address.clone()))?;
            let p = proj.forward(&Tensor::vector(e.to_vec()))?;
            for &v in p.data() {
                data.extend(std::iter::repeat_n(v, w));
            }
        }
        let x = Tensor::new(vec![self.config.channels(), w], data)?;
        let out = self.network.forward(&x)?;
        let loss = nn::mse_loss(target, &out)?;
        let n = out.len() as f64;
        let grad: Vec<f64> = out
            .data()
            .iter()
            .zip(target.data())
            .map(|(o, t)| scale * 2.0 * (o - t) / n)
            .collect();
        let grad_in = self.network.backward(&Tensor::new(out.shape().to_vec(), grad)?)?;
        if let Some(proj) = &mut self.projection {
            let f = self.config.features;
            let gp: Vec<f64> = (0..self.config.projection_width)
                .map(|j| grad_in.data()[(f + j) * w..(f + j + 1) * w].iter().sum())
                .collect();
            proj.backward(&Tensor::vector(gp))?;
        }
        Ok(loss)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = CaeHeader {
            kind: "cae".into(),
            config: self.config.clone(),
            layers: self.network.specs(),
            loss_history: self.loss_history.clone(),
        };
        let mut params = self.network.flat_params();
        if let Some(p) = &self.projection {
            params.extend(p.flat_params());
        }
        nn::io::save(path, &header, &params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (h, params): (CaeHeader, Vec<f64>) = nn::io::load(path)?;
        if h.kind != "cae" {
            return Err(Error::ModelFormat(format!("expected cae, found {}", h.kind)));
        }
        let mut model = Autoencoder::new(h.config)?;
        if model.network.specs() != h.layers {
            return Err(Error::ModelFormat("layer list does not match config".into()));
        }
        let split = model.network.param_count();
        if params.len() != split + model.projection.as_ref().map_or(0, Network::param_count) {
            return Err(Error::ModelFormat("parameter count mismatch".into()));
        }
        model.network.load_flat_params(&params[..split])?;
        if let Some(p) = &mut model.projection {
            p.load_flat_params(&params[split..])?;
        }
        model.loss_history = h.loss_history;
        Ok(model)
    }
}

/// Trains on reputable windows only; any window from a contract labelled
/// illicit is rejected. Returns the model with its per-epoch mean loss.
pub fn train_cae(
    windows: &[WindowTensor],
    labels: &HashMap<String, Label>,
    embeddings: &EmbeddingLookup,
    cfg: &CaeConfig,
) -> Result<Autoencoder> {
    if let Some(w) = windows
        .iter()
        .find(|w| labels.get(&w.contract_address) == Some(&Label::Illicit))
    {
        return Err(Error::IllicitInTraining(w.contract_address.clone()));
    }
    if windows.is_empty() {
        return Err(Error::InsufficientData("no training windows".into()));
    }
    let mut model = Autoencoder::new(cfg.clone())?;
    let embs = windows
        .iter()
        .map(|w| model.embedding_for(w, embeddings))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = Optimizer::adam(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..windows.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            nn::zero_grads(&mut model);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                // the reconstruction target is the fused input at the
                // current parameters, held fixed for this step
                let target = model.fuse(&windows[i], embs[i])?;
                total += model.accumulate(&windows[i], embs[i], &target, scale)?;
            }
            opt.step(&mut model);
        }
        let mean = total / windows.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}")));
        }
        model.loss_history.push(mean);
    }
    model.network.clear_cache();
    if let Some(p) = &mut model.projection {
        p.clear_cache();
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyThreshold {
    pub percentile: f64,
    pub cutoff: f64,
    /// Identifies the error distribution the cutoff was fitted on.
    pub provenance: String,
}

/// Cutoff at the `p`-th percentile (linear interpolation) of training errors.
pub fn fit_threshold(training_errors: &[f64], p: f64, provenance: &str) -> Result<AnomalyThreshold> {
    if !(75.0..=90.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside [75, 90]")));
    }
    Ok(AnomalyThreshold {
        percentile: p,
        cutoff: stats::percentile(training_errors, p)?,
        provenance: provenance.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub contract_address: String,
    pub errors: Vec<f64>,
    pub threshold: AnomalyThreshold,
    pub anomalous: usize,
    pub anomaly_ratio: f64,
    pub verdict: Label,
}

/// A window is anomalous when its error is strictly above the cutoff.
pub fn classify_contract(address: &str, errors: &[f64], threshold: &AnomalyThreshold) -> Result<AnomalyReport> {
    if errors.is_empty() {
        return Err(Error::InsufficientData(format!("{address} has no windows")));
    }
    let anomalous = errors.iter().filter(|&&e| e > threshold.cutoff).count();
    let anomaly_ratio = anomalous as f64 / errors.len() as f64;
    Ok(AnomalyReport {
        contract_address: address.to_string(),
        errors: errors.to_vec(),
        threshold: threshold.clone(),
        anomalous,
        anomaly_ratio,
        verdict: if anomaly_ratio > ILLICIT_RATIO {
            Label::Illicit
        } else {
            Label::Reputable
        },
    })
}

/// Groups window errors by contract (first-seen order) and classifies each.
pub fn classify_all(windows: &[WindowTensor], errors: &[f64], threshold: &AnomalyThreshold) -> Result<Vec<AnomalyReport>> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (w, &e) in windows.iter().zip(errors) {
        let i = *index.entry(&w.contract_address).or_insert_with(|| {
            groups.push((w.contract_address.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[i].1.push(e);
    }
    groups
        .iter()
        .map(|(a, errs)| classify_contract(a, errs, threshold))
        .collect()
}

pub fn write_reports_jsonl<W: Write>(mut w: W, reports: &[AnomalyReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub points: Vec<[f64; 2]>,
    /// Variance along each of the two components.
    pub explained_variance: [f64; 2],
    pub components: [Vec<f64>; 2],
}

/// Projection onto the two leading principal components (population
/// covariance). Each component's largest-magnitude loading is made positive.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Pca2> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InsufficientData("PCA of empty matrix".into()));
    }
    let d = rows[0].len();
    if d < 2 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape {
            expected: "rows of equal width >= 2".into(),
            actual: format!("width {d}"),
        });
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let component = |k: usize| -> Vec<f64> {
        let col = eig.eigenvectors.column(order[k]);
        let mut v: Vec<f64> = col.iter().copied().collect();
        let lead = (0..d).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let components = [component(0), component(1)];
    let points = (0..n)
        .map(|i| {
            let p = |c: &Vec<f64>| (0..d).map(|j| centered[(i, j)] * c[j]).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    Ok(Pca2 {
        points,
        explained_variance: [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)],
        components,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentExport {
    pub window_latents: Vec<(String, u64, Vec<f64>)>,
    /// Mean latent per contract, sorted by address.
    pub contract_latents: Vec<(String, Vec<f64>)>,
    /// Two-dimensional projection of `contract_latents`, when there are at least two contracts.
    pub projection: Option<Pca2>,
}

pub fn export_latents(model: &Autoencoder, windows: &[WindowTensor], embeddings: &EmbeddingLookup) -> Result<LatentExport> {
    let window_latents = windows
        .par_iter()
        .map(|w| {
            let z = model.encode(w, model.embedding_for(w, embeddings)?)?;
            Ok((w.contract_address.clone(), w.start_hour, z))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sums: std::collections::BTreeMap<&str, (Vec<f64>, usize)> = Default::default();
    for (a, _, z) in &window_latents {
        let e = sums.entry(a).or_insert_with(|| (vec![0.0; z.len()], 0));
        e.0.iter_mut().zip(z).for_each(|(s, v)| *s += v);
        e.1 += 1;
    }
    let contract_latents: Vec<(String, Vec<f64>)> = sums
        .into_iter()
        .map(|(a, (s, c))| (a.to_string(), s.into_iter().map(|v| v / c as f64).collect()))
        .collect();
    let projection = if contract_latents.len() >= 2 {
        Some(pca_2d(&contract_latents.iter().map(|(_, z)| z.clone()).collect::<Vec<_>>())?)
    } else {
        None
    };
    Ok(LatentExport {
        window_latents,
        contract_latents,
        projection,
    })
}

impl LatentExport {
    pub fn write_window_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let dim = self.window_latents.first().map_or(0, |r| r.2.len());
        let mut header = vec!["address".to_string(), "start_hour".to_string()];
        header.extend((0..dim).map(|i| format!("z{i}")));
        wtr.write_record(&header)?;
        for (a, h, z) in &self.window_latents {
            let mut rec = vec![a.clone(), h.to_string()];
            rec.extend(z.iter().map(|v| format!("{v:.17e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// `address,label,z0..,pc1,pc2` per contract.
    pub fn write_contract_csv<W: Write>(&self, w: W, labels: &HashMap<String, Label>) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let dim = self.contract_latents.first().map_or(0, |r| r.1.len());
        let mut header = vec!["address".to_string(), "label".to_string()];
        header.extend((0..dim).map(|i| format!("z{i}")));
        header.extend(["pc1".to_string(), "pc2".to_string()]);
        wtr.write_record(&header)?;
        for (i, (a, z)) in self.contract_latents.iter().enumerate() {
            let label = labels.get(a).copied().unwrap_or(Label::Unlabelled);
            let mut rec = vec![a.clone(), label.as_str().to_string()];
            rec.extend(z.iter().map(|v| format!("{v:.17e}")));
            let p = self.projection.as_ref().map_or([0.0, 0.0], |p| p.points[i]);
            rec.extend(p.iter().map(|v| format!("{v:.17e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
