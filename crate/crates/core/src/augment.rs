//! Minority-class oversampling in embedding space: SMOTE, ADASYN and a GAN,
//! plus distribution-similarity metrics for synthetic data.

use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, LayerSpec, LossFn, Network, Optimizer, OptimizerKind, Params, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Smote,
    Adasyn,
    Gan,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Smote => "smote",
            Method::Adasyn => "adasyn",
            Method::Gan => "gan",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam first-moment decay for both networks. With 0.9 the two players
    /// cycle around the data instead of settling.
    pub beta1: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            noise_dim: 16,
            hidden: 64,
            learning_rate: 2e-4,
            epochs: 2000,
            batch_size: 32,
            beta1: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub method: Method,
    /// Minority size after augmentation.
    pub target_count: usize,
    pub k_neighbors: usize,
    pub seed: u64,
    #[serde(default)]
    pub gan: GanConfig,
}

impl AugmentationConfig {
    pub fn new(method: Method, target_count: usize, seed: u64) -> Self {
        AugmentationConfig {
            method,
            target_count,
            k_neighbors: 5,
            seed,
            gan: GanConfig::default(),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest points to `points[i]` (excluding `i`), ordered
/// by distance then index.
fn nearest(points: &[&[f64]], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| (sq_dist(points[i], p), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

pub fn interpolate(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + lambda * (y - x)).collect()
}

fn check_matrix(m: &[Vec<f64>], what: &str) -> Result<usize> {
    let dim = m.first().map_or(0, Vec::len);
    if m.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape {
            expected: format!("{what} rows of width {dim}"),
            actual: "ragged rows".into(),
        });
    }
    Ok(dim)
}

fn deficit(n: usize, target: usize) -> Result<usize> {
    target
        .checked_sub(n)
        .ok_or_else(|| Error::InvalidArgument(format!("target_count {target} below minority count {n}")))
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || n <= k {
        return Err(Error::InsufficientData(format!(
            "{n} minority samples cannot supply {k} neighbours"
        )));
    }
    Ok(())
}

/// Splits `total` across `weights` proportionally with largest-remainder
/// rounding, so the result sums to exactly `total`.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn generate(
    minority: &[Vec<f64>],
    counts: &[usize],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let refs: Vec<&[f64]> = minority.iter().map(Vec::as_slice).collect();
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let nbrs = nearest(&refs, i, k);
        for _ in 0..c {
            let j = *nbrs.choose(rng).expect("k >= 1");
            let lambda: f64 = rng.gen();
            out.push(interpolate(&minority[i], &minority[j], lambda));
        }
    }
    out
}

/// SMOTE: synthetic points interpolated between a random minority point and
/// one of its `k` nearest minority neighbours, until the minority reaches
/// `target_count`.
pub fn smote(minority: &[Vec<f64>], target_count: usize, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_matrix(minority, "minority")?;
    check_k(minority.len(), k)?;
    let needed = deficit(minority.len(), target_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; minority.len()];
    for _ in 0..needed {
        counts[rng.gen_range(0..minority.len())] += 1;
    }
    Ok(generate(minority, &counts, k, &mut rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdasynAllocation {
    /// Majority share among each minority point's k neighbours.
    pub ratios: Vec<f64>,
    pub counts: Vec<usize>,
    /// Set when no minority point had majority neighbours.
    pub fallback: bool,
}

pub fn adasyn_allocation(
    minority: &[Vec<f64>],
    majority: &[Vec<f64>],
    k: usize,
    deficit: usize,
) -> Result<AdasynAllocation> {
    let combined: Vec<&[f64]> = minority.iter().chain(majority).map(Vec::as_slice).collect();
    let n_min = minority.len();
    let ratios: Vec<f64> = (0..n_min)
        .map(|i| {
            let nb = nearest(&combined, i, k);
            nb.iter().filter(|&&j| j >= n_min).count() as f64 / k as f64
        })
        .collect();
    let fallback = ratios.iter().all(|&r| r == 0.0);
    let counts = if fallback {
        warn!("ADASYN: no minority point borders the majority class; using uniform weights");
        largest_remainder(&vec![1.0; n_min], deficit)
    } else {
        largest_remainder(&ratios, deficit)
    };
    Ok(AdasynAllocation {
        ratios,
        counts,
        fallback,
    })
}

/// ADASYN: like SMOTE, but generation per minority point is proportional to
/// the share of majority points among its neighbours.
pub fn adasyn(
    minority: &[Vec<f64>],
    majority: &[Vec<f64>],
    target_count: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let dim = check_matrix(minority, "minority")?;
    if majority.is_empty() {
        return Err(Error::InsufficientData("ADASYN needs majority samples".into()));
    }
    if check_matrix(majority, "majority")? != dim {
        return Err(Error::Shape {
            expected: format!("majority width {dim}"),
            actual: format!("{}", majority[0].len()),
        });
    }
    check_k(minority.len(), k)?;
    let needed = deficit(minority.len(), target_count)?;
    let alloc = adasyn_allocation(minority, majority, k, needed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(generate(minority, &alloc.counts, k, &mut rng))
}

fn generator_specs(noise: usize, hidden: usize, dim: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense {
            inputs: noise,
            outputs: hidden,
            bias: true,
        },
        LayerSpec::Tanh,
        LayerSpec::Dense {
            inputs: hidden,
            outputs: hidden,
            bias: true,
        },
        LayerSpec::Tanh,
        LayerSpec::Dense {
            inputs: hidden,
            outputs: dim,
            bias: true,
        },
    ]
}

fn discriminator_specs(dim: usize, hidden: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense {
            inputs: dim,
            outputs: hidden,
            bias: true,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: hidden,
            outputs: hidden,
            bias: true,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: hidden,
            outputs: 1,
            bias: true,
        },
        LayerSpec::Sigmoid,
    ]
}

/// Generator and discriminator pair.
#[derive(Debug, Clone)]
pub struct Gan {
    pub generator: Network,
    pub discriminator: Network,
    pub noise_dim: usize,
}

impl Gan {
    pub fn new(dim: usize, cfg: &GanConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Gan {
            generator: Network::new(vec![cfg.noise_dim], generator_specs(cfg.noise_dim, cfg.hidden, dim), rng)?,
            discriminator: Network::new(vec![dim], discriminator_specs(dim, cfg.hidden), rng)?,
            noise_dim: cfg.noise_dim,
        })
    }

    /// Non-saturating generator loss `−ln D(G(z))` for one noise vector,
    /// accumulating gradients into the generator only when `accumulate`.
    pub fn generator_loss(&mut self, z: &Tensor, accumulate: bool) -> Result<f64> {
        let ones = Tensor::vector(vec![1.0]);
        if !accumulate {
            let fake = self.generator.predict(z)?;
            return LossFn::BinaryCrossEntropy.value(&self.discriminator.predict(&fake)?, &ones);
        }
        let fake = self.generator.forward(z)?;
        let d = self.discriminator.forward(&fake)?;
        let l = LossFn::BinaryCrossEntropy.value(&d, &ones)?;
        let g_fake = self.discriminator.backward(&LossFn::BinaryCrossEntropy.grad(&d, &ones)?)?;
        self.generator.backward(&g_fake)?;
        Ok(l)
    }
}

/// Trained generator half of a GAN.
#[derive(Debug, Clone)]
pub struct Generator {
    pub network: Network,
    pub noise_dim: usize,
    pub hidden: usize,
    /// Discriminator loss after every step.
    pub d_loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GeneratorHeader {
    kind: String,
    noise_dim: usize,
    hidden: usize,
    dim: usize,
    layers: Vec<LayerSpec>,
}

impl Generator {
    pub fn dim(&self) -> usize {
        self.network.output_shape()[0]
    }

    /// `n` samples from standard-normal noise seeded by `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z = noise(self.noise_dim, &mut rng);
                Ok(self.network.predict(&z)?.into_data())
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = GeneratorHeader {
            kind: "gan_generator".into(),
            noise_dim: self.noise_dim,
            hidden: self.hidden,
            dim: self.dim(),
            layers: self.network.specs(),
        };
        nn::io::save(path, &header, &self.network.flat_params())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (h, params): (GeneratorHeader, Vec<f64>) = nn::io::load(path)?;
        if h.kind != "gan_generator" {
            return Err(Error::ModelFormat(format!("expected gan_generator, found {}", h.kind)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut network = Network::new(vec![h.noise_dim], h.layers, &mut rng)?;
        network.load_flat_params(&params)?;
        Ok(Generator {
            network,
            noise_dim: h.noise_dim,
            hidden: h.hidden,
            d_loss_history: Vec::new(),
        })
    }
}

fn noise(dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::vector((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

const DIVERGENCE_LOSS: f64 = 1e-4;
const DIVERGENCE_STEPS: usize = 100;

/// Trains a GAN on the minority rows with alternating discriminator and
/// generator steps under binary cross-entropy.
pub fn train_gan(minority: &[Vec<f64>], cfg: &GanConfig, seed: u64) -> Result<Generator> {
    let dim = check_matrix(minority, "minority")?;
    if cfg.batch_size == 0 || minority.len() < cfg.batch_size {
        return Err(Error::InsufficientData(format!(
            "{} minority samples for batch size {}",
            minority.len(),
            cfg.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gan = Gan::new(dim, cfg, &mut rng)?;
    let kind = OptimizerKind::Adam {
        beta1: cfg.beta1,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut d_opt = Optimizer::new(kind, cfg.learning_rate);
    let mut g_opt = Optimizer::new(kind, cfg.learning_rate);
    let real: Vec<Tensor> = minority.iter().map(|r| Tensor::vector(r.clone())).collect();
    let ones = Tensor::vector(vec![1.0]);
    let zeros = Tensor::vector(vec![0.0]);
    let mut order: Vec<usize> = (0..real.len()).collect();
    let mut history = Vec::new();
    let mut low_streak = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks_exact(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;

            // discriminator: real → 1, fake → 0
            nn::zero_grads(&mut gan.discriminator);
            let mut d_loss = 0.0;
            for &i in batch {
                let d = gan.discriminator.forward(&real[i])?;
                d_loss += LossFn::BinaryCrossEntropy.value(&d, &ones)? * scale;
                let mut g = LossFn::BinaryCrossEntropy.grad(&d, &ones)?;
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
                gan.discriminator.backward(&g)?;

                let fake = gan.generator.predict(&noise(gan.noise_dim, &mut rng))?;
                let d = gan.discriminator.forward(&fake)?;
                d_loss += LossFn::BinaryCrossEntropy.value(&d, &zeros)? * scale;
                let mut g = LossFn::BinaryCrossEntropy.grad(&d, &zeros)?;
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
                gan.discriminator.backward(&g)?;
            }
            d_opt.step(&mut gan.discriminator);
            history.push(d_loss);

            // generator: fool the discriminator
            nn::zero_grads(&mut gan.generator);
            for _ in batch {
                let z = noise(gan.noise_dim, &mut rng);
                let fake = gan.generator.forward(&z)?;
                let d = gan.discriminator.forward(&fake)?;
                let mut g = LossFn::BinaryCrossEntropy.grad(&d, &ones)?;
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
                let g_fake = gan.discriminator.backward(&g)?;
                gan.generator.backward(&g_fake)?;
            }
            g_opt.step(&mut gan.generator);

            if d_loss < DIVERGENCE_LOSS {
                low_streak += 1;
                if low_streak >= DIVERGENCE_STEPS {
                    return Err(Error::Diverged(format!(
                        "discriminator loss below {DIVERGENCE_LOSS} for {DIVERGENCE_STEPS} consecutive steps \
                         (epoch {epoch}, last loss {d_loss:.3e}); generator is not learning"
                    )));
                }
            } else {
                low_streak = 0;
            }
        }
    }
    gan.generator.clear_cache();
    Ok(Generator {
        network: gan.generator,
        noise_dim: cfg.noise_dim,
        hidden: cfg.hidden,
        d_loss_history: history,
    })
}

impl Params for Gan {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.generator.visit_params(f);
        self.discriminator.visit_params(f);
    }
}

/// Synthetic minority rows for the configured method.
pub fn oversample(
    minority: &[Vec<f64>],
    majority: &[Vec<f64>],
    cfg: &AugmentationConfig,
) -> Result<Vec<Vec<f64>>> {
    match cfg.method {
        Method::Smote => smote(minority, cfg.target_count, cfg.k_neighbors, cfg.seed),
        Method::Adasyn => adasyn(minority, majority, cfg.target_count, cfg.k_neighbors, cfg.seed),
        Method::Gan => {
            let needed = deficit(minority.len(), cfg.target_count)?;
            let generator = train_gan(minority, &cfg.gan, cfg.seed)?;
            generator.sample(needed, cfg.seed.wrapping_add(1))
        }
    }
}

pub const CORRELATION_DEFINITION: &str =
    "Pearson correlation between the per-dimension mean vectors of real and synthetic data";
pub const VARIANCE_RATIO_DEFINITION: &str =
    "mean over dimensions of var(synthetic)/var(real) (population variance), skipping zero-variance real dimensions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub correlation_coefficient: f64,
    pub variance_ratio: f64,
    pub correlation_definition: String,
    pub variance_ratio_definition: String,
}

fn column_stats(m: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = m.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in m {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n);
    let mut var = vec![0.0; dim];
    for r in m {
        for d in 0..dim {
            let c = r[d] - mean[d];
            var[d] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        // constant mean vectors: correlation is undefined, report agreement
        return if a == b { 1.0 } else { 0.0 };
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

pub fn quality_metrics(real: &[Vec<f64>], synthetic: &[Vec<f64>]) -> Result<QualityReport> {
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::InsufficientData("quality metrics need non-empty sets".into()));
    }
    let dim = check_matrix(real, "real")?;
    let sdim = check_matrix(synthetic, "synthetic")?;
    if dim != sdim {
        return Err(Error::Shape {
            expected: format!("synthetic width {dim}"),
            actual: format!("{sdim}"),
        });
    }
    let (rm, rv) = column_stats(real, dim);
    let (sm, sv) = column_stats(synthetic, dim);
    let ratios: Vec<f64> = rv
        .iter()
        .zip(&sv)
        .filter(|(r, _)| **r > 0.0)
        .map(|(r, s)| s / r)
        .collect();
    let variance_ratio = if ratios.is_empty() {
        // every real dimension is constant
        if sv.iter().all(|&s| s == 0.0) {
            1.0
        } else {
            return Err(Error::InsufficientData(
                "variance ratio undefined: real data has zero variance in every dimension".into(),
            ));
        }
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    };
    Ok(QualityReport {
        correlation_coefficient: pearson(&rm, &sm),
        variance_ratio,
        correlation_definition: CORRELATION_DEFINITION.into(),
        variance_ratio_definition: VARIANCE_RATIO_DEFINITION.into(),
    })
}

/// Writes `provenance,d0,…` rows.
pub fn write_matrix_csv<W: Write>(w: W, dim: usize, rows: &[(&str, &[f64])]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["provenance".to_string()];
    header.extend((0..dim).map(|d| format!("d{d}")));
    wtr.write_record(&header)?;
    for (prov, row) in rows {
        let mut rec = vec![prov.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:.16e}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_smote_stays_on_segment() {
        let minority = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let syn = smote(&minority, 50, 1, 4).unwrap();
        assert_eq!(syn.len(), 48);
        for p in syn {
            assert!((p[0] - p[1]).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&p[0]));
        }
    }

    #[test]
    fn lambda_zero_duplicates_base() {
        assert_eq!(interpolate(&[1.0, 2.0], &[5.0, -1.0], 0.0), vec![1.0, 2.0]);
    }

    #[test]
    fn too_few_minority() {
        let m = vec![vec![0.0], vec![1.0]];
        assert!(matches!(smote(&m, 10, 2, 0), Err(Error::InsufficientData(_))));
        assert!(smote(&m, 1, 1, 0).is_err());
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[0.2, 0.8], 10), vec![2, 8]);
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.0, 0.5], 3), vec![0, 3]);
    }

    #[test]
    fn adasyn_targets_boundary_points() {
        // minority cluster near 0 with one point next to the majority at 10
        let minority = vec![vec![0.0], vec![0.1], vec![0.2], vec![9.0]];
        let majority = vec![vec![10.0], vec![10.1], vec![10.2]];
        let alloc = adasyn_allocation(&minority, &majority, 2, 12).unwrap();
        assert!(!alloc.fallback);
        assert_eq!(alloc.counts[..3], [0, 0, 0]);
        assert_eq!(alloc.counts[3], 12);
    }

    #[test]
    fn adasyn_fallback_when_no_boundary() {
        let minority = vec![vec![0.0], vec![0.1], vec![0.2]];
        let majority = vec![vec![100.0]];
        let alloc = adasyn_allocation(&minority, &majority, 1, 6).unwrap();
        assert!(alloc.fallback);
        assert_eq!(alloc.counts, vec![2, 2, 2]);
        assert!(adasyn(&minority, &[], 6, 1, 0).is_err());
    }

    #[test]
    fn quality_identity_and_scaling() {
        let real = vec![vec![1.0, 2.0, 0.5], vec![3.0, -1.0, 0.7], vec![0.0, 4.0, 1.9]];
        let q = quality_metrics(&real, &real).unwrap();
        assert_eq!((q.correlation_coefficient, q.variance_ratio), (1.0, 1.0));
        let doubled: Vec<Vec<f64>> = real.iter().map(|r| r.iter().map(|v| v * 2.0).collect()).collect();
        let q = quality_metrics(&real, &doubled).unwrap();
        assert!((q.correlation_coefficient - 1.0).abs() < 1e-12);
        assert!((q.variance_ratio - 4.0).abs() < 1e-12);
        assert!(quality_metrics(&real, &[vec![1.0]]).is_err());
    }

    #[test]
    fn gan_batch_precondition() {
        let m = vec![vec![0.0; 3]; 4];
        assert!(matches!(
            train_gan(&m, &GanConfig::default(), 0),
            Err(Error::InsufficientData(_))
        ));
    }
}
