//! Opcode-category embeddings with mean pooling.
//!
//! The table is trained as the bias-free first layer of a small logistic
//! classifier. Feeding the classifier a sequence's normalized category counts
//! makes that first layer compute exactly the mean of the sequence's rows.

use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::disasm::{CategorySequence, OpcodeCategory};
use crate::error::{Error, Result};
use crate::nn::{self, LayerSpec, LossFn, Network, Optimizer, Tensor};

pub const DEFAULT_DIM: usize = 50;

/// `vocab × dim` matrix, one row per opcode category.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: usize,
    dim: usize,
    rows: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(vocab: usize, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != vocab * dim {
            return Err(Error::Shape {
                expected: format!("{vocab}x{dim} table"),
                actual: format!("{} values", rows.len()),
            });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding table".into()));
        }
        Ok(EmbeddingTable { vocab, dim, rows })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id * self.dim..(id + 1) * self.dim]
    }

    /// Reads the table out of the first (bias-free, `vocab → dim`) layer.
    fn from_layer(vocab: usize, dim: usize, weight: &[f64]) -> Self {
        // weight is [dim][vocab]; the table is its transpose
        let mut rows = vec![0.0; vocab * dim];
        for d in 0..dim {
            for v in 0..vocab {
                rows[v * dim + d] = weight[d * vocab + v];
            }
        }
        EmbeddingTable { vocab, dim, rows }
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64) -> Result<()> {
        let header = TableHeader {
            kind: "embedding_table".into(),
            vocab: self.vocab,
            dim: self.dim,
            category_names: (0..self.vocab)
                .map(|i| {
                    OpcodeCategory::from_id(i as u8)
                        .map(|c| c.name().to_string())
                        .unwrap_or_else(|| format!("category_{i}"))
                })
                .collect(),
            seed,
        };
        nn::io::save(path, &header, &self.rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, rows): (TableHeader, Vec<f64>) = nn::io::load(path)?;
        if header.kind != "embedding_table" {
            return Err(Error::ModelFormat(format!("expected embedding_table, found {}", header.kind)));
        }
        EmbeddingTable::new(header.vocab, header.dim, rows)
    }
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    kind: String,
    vocab: usize,
    dim: usize,
    category_names: Vec<String>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractEmbedding {
    pub contract_address: String,
    pub vector: Vec<f64>,
}

/// Mean of the table rows selected by the sequence. Empty sequences yield
/// the zero vector.
pub fn embed_sequence(seq: &CategorySequence, table: &EmbeddingTable) -> Result<ContractEmbedding> {
    let mut acc = vec![0.0; table.dim];
    for &id in &seq.categories {
        let id = id as usize;
        if id >= table.vocab {
            return Err(Error::InvalidArgument(format!(
                "category id {id} out of range for vocabulary of {}",
                table.vocab
            )));
        }
        for (a, r) in acc.iter_mut().zip(table.row(id)) {
            *a += r;
        }
    }
    if seq.categories.is_empty() {
        warn!("empty opcode sequence for {}; using zero embedding", seq.contract_address);
    } else {
        let n = seq.categories.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(ContractEmbedding {
        contract_address: seq.contract_address.clone(),
        vector: acc,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub vocab: usize,
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            vocab: OpcodeCategory::COUNT,
            dim: DEFAULT_DIM,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Normalized category counts; the classifier's input representation.
pub fn frequency_vector(seq: &CategorySequence, vocab: usize) -> Result<Tensor> {
    let mut freq = vec![0.0; vocab];
    for &id in &seq.categories {
        let slot = freq.get_mut(id as usize).ok_or_else(|| {
            Error::InvalidArgument(format!("category id {id} out of range for vocabulary of {vocab}"))
        })?;
        *slot += 1.0;
    }
    if !seq.categories.is_empty() {
        let n = seq.categories.len() as f64;
        freq.iter_mut().for_each(|f| *f /= n);
    }
    Ok(Tensor::vector(freq))
}

/// Table plus logistic head, as a single network over frequency vectors.
pub fn classifier_network(cfg: &EmbeddingConfig, rng: &mut ChaCha8Rng) -> Result<Network> {
    Network::new(
        vec![cfg.vocab],
        vec![
            LayerSpec::Dense {
                inputs: cfg.vocab,
                outputs: cfg.dim,
                bias: false,
            },
            LayerSpec::Dense {
                inputs: cfg.dim,
                outputs: 1,
                bias: true,
            },
            LayerSpec::Sigmoid,
        ],
        rng,
    )
}

#[derive(Debug, Clone)]
pub struct TrainedEmbeddings {
    pub table: EmbeddingTable,
    /// Full classifier (table layer + head), kept for diagnostics.
    pub classifier: Network,
    /// Mean binary cross-entropy over the training set after each epoch.
    pub loss_history: Vec<f64>,
}

impl TrainedEmbeddings {
    /// Probability that a sequence is illicit, according to the diagnostic head.
    pub fn predict(&self, seq: &CategorySequence) -> Result<f64> {
        let x = frequency_vector(seq, self.table.vocab)?;
        Ok(self.classifier.predict(&x)?.data()[0])
    }
}

/// Trains the table against binary labels (`true` = illicit).
pub fn train_embeddings(
    seqs: &[CategorySequence],
    labels: &[bool],
    cfg: &EmbeddingConfig,
) -> Result<TrainedEmbeddings> {
    if seqs.len() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} labels", seqs.len()),
            actual: format!("{} labels", labels.len()),
        });
    }
    if !(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)) {
        return Err(Error::SingleClass);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let inputs = seqs
        .iter()
        .map(|s| frequency_vector(s, cfg.vocab))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Tensor> = labels
        .iter()
        .map(|&l| Tensor::vector(vec![if l { 1.0 } else { 0.0 }]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = classifier_network(cfg, &mut rng)?;
    let mut opt = Optimizer::adam(cfg.learning_rate);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            nn::zero_grads(&mut net);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let out = net.forward(&inputs[i])?;
                let mut g = LossFn::BinaryCrossEntropy.grad(&out, &targets[i])?;
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
                net.backward(&g)?;
            }
            opt.step(&mut net);
        }
        history.push(dataset_loss(&net, &inputs, &targets)?);
    }
    net.clear_cache();

    let table = EmbeddingTable::from_layer(cfg.vocab, cfg.dim, &net.layers()[0].weight);
    Ok(TrainedEmbeddings {
        table,
        classifier: net,
        loss_history: history,
    })
}

fn dataset_loss(net: &Network, inputs: &[Tensor], targets: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        total += LossFn::BinaryCrossEntropy.value(&net.predict(x)?, t)?;
    }
    Ok(total / inputs.len() as f64)
}

/// Writes `address,d0,…` rows; values use 17 significant digits.
pub fn export_embeddings<W: Write>(w: W, dim: usize, embeddings: &[ContractEmbedding]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["address".to_string()];
    header.extend((0..dim).map(|d| format!("d{d}")));
    wtr.write_record(&header)?;
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(Error::Shape {
                expected: format!("{dim} values"),
                actual: format!("{} values for {}", e.vector.len(), e.contract_address),
            });
        }
        let mut rec = vec![e.contract_address.clone()];
        rec.extend(e.vector.iter().map(|v| format!("{v:.16e}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn import_embeddings<R: Read>(r: R) -> Result<Vec<ContractEmbedding>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut it = rec.iter();
        let address = it.next().unwrap_or_default().to_string();
        let vector = it
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad value {v:?} for {address}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ContractEmbedding {
            contract_address: address,
            vector,
        });
    }
    Ok(out)
}
