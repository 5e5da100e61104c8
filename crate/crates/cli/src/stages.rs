//! Stage implementations. Each stage reads the artifacts of earlier stages
//! from the output directory and writes its own under `<out>/<stage>/`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reputa::augment::{self, AugmentationConfig, Method};
use reputa::cae::{self, Autoencoder, CaeConfig, EmbeddingLookup, Variant};
use reputa::disasm::{self, CategorySequence};
use reputa::embeddings::{self, ContractEmbedding, EmbeddingConfig};
use reputa::eval::{self, MetricsReport, SweepTable, VariantScores};
use reputa::features::{self, WindowTensor};
use reputa::gbdt::{self, BoostedModel, Dataset};
use reputa::ingest::{self, ContractRecord, EtherscanClient, Label};
use serde::{Deserialize, Serialize};

use crate::{io_err, CliError, Context, Outcome};

pub const STAGES: [&str; 10] = [
    "ingest",
    "disasm",
    "embed",
    "augment",
    "train-gbdt",
    "tx-features",
    "train-cae",
    "score",
    "evaluate",
    "sweep",
];

pub const CONTRACTS_DIR: &str = "ingest/contracts";
pub const SPLIT: &str = "ingest/split.csv";
pub const CATEGORIES: &str = "disasm/categories.jsonl";
pub const EMBEDDINGS: &str = "embed/embeddings.csv";
pub const PREDICTIONS: &str = "train-gbdt/predictions.csv";
pub const TRAIN_WINDOWS: &str = "tx-features/train_windows.jsonl";
pub const EVAL_WINDOWS: &str = "tx-features/eval_windows.jsonl";
pub const VARIANTS: [Variant; 2] = [Variant::TransactionOnly, Variant::Multimodal];
/// Name of the unaugmented GBDT model.
pub const ORIGINAL: &str = "original";

pub fn run(ctx: &Context, stage: &str) -> Result<Outcome, CliError> {
    match stage {
        "ingest" => ingest(ctx),
        "disasm" => disasm(ctx),
        "embed" => embed(ctx),
        "augment" => augment(ctx),
        "train-gbdt" => train_gbdt(ctx),
        "tx-features" => tx_features(ctx),
        "train-cae" => train_cae(ctx),
        "score" => score(ctx),
        "evaluate" => evaluate(ctx),
        "sweep" => sweep(ctx),
        other => Err(CliError::Config {
            field: "stage".into(),
            msg: format!("unknown stage {other}"),
        }),
    }
}

pub fn run_all(ctx: &Context) -> Result<(), CliError> {
    for s in STAGES {
        run(ctx, s)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(reputa::Error::from)? + "\n";
    write_text(path, &text)
}

// ---------------------------------------------------------------- split ---

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    /// Contracts without a label: scored, never trained on or evaluated.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRow {
    pub address: String,
    pub label: Label,
    pub split: Split,
}

/// Stratified split: each class is shuffled and `round(n * fraction)` of
/// it (at least one when the class has two or more members) goes to test.
pub fn stratified_split(records: &[(String, Label)], test_fraction: f64, seed: u64) -> Vec<SplitRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split: HashMap<&str, Split> = HashMap::new();
    for class in [Label::Reputable, Label::Illicit] {
        let mut members: Vec<&str> = records.iter().filter(|r| r.1 == class).map(|r| r.0.as_str()).collect();
        members.sort_unstable();
        members.shuffle(&mut rng);
        let mut n_test = (members.len() as f64 * test_fraction).round() as usize;
        if members.len() >= 2 {
            n_test = n_test.clamp(1, members.len() - 1);
        }
        for (i, m) in members.into_iter().enumerate() {
            split.insert(m, if i < n_test { Split::Test } else { Split::Train });
        }
    }
    let mut rows: Vec<SplitRow> = records
        .iter()
        .map(|(a, l)| SplitRow {
            address: a.clone(),
            label: *l,
            split: split.get(a.as_str()).copied().unwrap_or(Split::None),
        })
        .collect();
    rows.sort_by(|a, b| a.address.cmp(&b.address));
    rows
}

pub fn read_split(path: &Path) -> Result<Vec<SplitRow>, CliError> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    Ok(rdr
        .deserialize()
        .collect::<Result<Vec<SplitRow>, _>>()
        .map_err(reputa::Error::from)?)
}

fn write_split(path: &Path, rows: &[SplitRow]) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    for r in rows {
        wtr.serialize(r).map_err(reputa::Error::from)?;
    }
    wtr.flush().map_err(io_err(path))?;
    Ok(())
}

fn labels_of(rows: &[SplitRow]) -> HashMap<String, Label> {
    rows.iter().map(|r| (r.address.clone(), r.label)).collect()
}

// --------------------------------------------------------------- ingest ---

fn external_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Deserialize)]
struct FetchRow {
    address: String,
    label: String,
}

fn fetch_records(ctx: &Context, list: &Path) -> Result<Vec<ContractRecord>, CliError> {
    let key = std::env::var(ingest::API_KEY_ENV).map_err(|_| CliError::Config {
        field: "data.fetch_list".into(),
        msg: format!("{} must be set to download contracts", ingest::API_KEY_ENV),
    })?;
    let d = &ctx.config.data;
    let client = EtherscanClient::new(
        ingest::ReqwestTransport::new(Duration::from_secs(30))?,
        key,
        ingest::ClientConfig {
            base_url: d.base_url.clone(),
            requests_per_second: d.requests_per_second,
            ..Default::default()
        },
    );
    let mut rdr = csv::Reader::from_reader(open(list)?);
    let mut out = Vec::new();
    for row in rdr.deserialize::<FetchRow>() {
        let row = row.map_err(reputa::Error::from)?;
        out.push(client.fetch_contract(&row.address, Label::parse(&row.label)?)?);
    }
    out.sort_by(|a, b| a.address.cmp(&b.address));
    Ok(out)
}

pub fn ingest(ctx: &Context) -> Result<Outcome, CliError> {
    let d = &ctx.config.data;
    let inputs = match (&d.fixture_dir, &d.fetch_list) {
        (Some(dir), _) => external_files(dir)?,
        (None, Some(list)) => vec![list.clone()],
        (None, None) => unreachable!("validated"),
    };
    let fragment = (d.test_fraction, d.fetch_list.is_some());
    ctx.run_stage("ingest", &fragment, &inputs, |dir| {
        let records = match (&d.fixture_dir, &d.fetch_list) {
            (Some(f), _) => ingest::load_fixture_dir(f)?,
            (None, Some(list)) => fetch_records(ctx, list)?,
            (None, None) => unreachable!("validated"),
        };
        let contracts = dir.join("contracts");
        ingest::write_fixture_dir(&contracts, &records)?;
        let pairs: Vec<(String, Label)> = records.iter().map(|r| (r.address.clone(), r.label)).collect();
        let rows = stratified_split(&pairs, d.test_fraction, ctx.config.seed());
        let split = dir.join("split.csv");
        write_split(&split, &rows)?;
        let mut out = external_files(&contracts)?;
        out.push(split);
        Ok(out)
    })
}

fn contract_inputs(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let split = ctx.require(SPLIT)?;
    let contracts = ctx.require(CONTRACTS_DIR)?;
    let mut inputs = external_files(&contracts)?;
    inputs.push(split);
    Ok(inputs)
}

// --------------------------------------------------------------- disasm ---

pub fn disasm(ctx: &Context) -> Result<Outcome, CliError> {
    let inputs = contract_inputs(ctx)?;
    ctx.run_stage("disasm", &(), &inputs, |dir| {
        let records = ingest::load_fixture_dir(&ctx.out.join(CONTRACTS_DIR))?;
        let seqs: Vec<CategorySequence> = records
            .iter()
            .map(|r| disasm::simplify(&r.address, &disasm::disassemble(&r.bytecode)))
            .collect();
        let path = dir.join("categories.jsonl");
        let mut w = create(&path)?;
        disasm::write_category_jsonl(&mut w, &seqs)?;
        w.flush().map_err(io_err(&path))?;
        Ok(vec![path])
    })
}

// ---------------------------------------------------------------- embed ---

fn read_categories(ctx: &Context) -> Result<Vec<CategorySequence>, CliError> {
    Ok(disasm::read_category_jsonl(open(&ctx.require(CATEGORIES)?)?)?)
}

pub fn embed(ctx: &Context) -> Result<Outcome, CliError> {
    let inputs = vec![ctx.require(CATEGORIES)?, ctx.require(SPLIT)?];
    let e = &ctx.config.embedding;
    ctx.run_stage("embed", e, &inputs, |dir| {
        let seqs = read_categories(ctx)?;
        let split: HashMap<String, SplitRow> = read_split(&ctx.out.join(SPLIT))?
            .into_iter()
            .map(|r| (r.address.clone(), r))
            .collect();
        let (mut train, mut labels) = (Vec::new(), Vec::new());
        for s in &seqs {
            if let Some(r) = split.get(&s.contract_address).filter(|r| r.split == Split::Train) {
                train.push(s.clone());
                labels.push(r.label.is_illicit());
            }
        }
        let cfg = EmbeddingConfig {
            dim: e.dim,
            learning_rate: e.learning_rate,
            epochs: e.epochs,
            batch_size: e.batch_size,
            seed: ctx.config.seed(),
            ..Default::default()
        };
        let trained = embeddings::train_embeddings(&train, &labels, &cfg)?;
        let table = dir.join("table.rptnn");
        trained.table.save(&table, cfg.seed)?;
        let all = seqs
            .iter()
            .map(|s| embeddings::embed_sequence(s, &trained.table))
            .collect::<reputa::Result<Vec<_>>>()?;
        let emb = dir.join("embeddings.csv");
        let mut w = create(&emb)?;
        embeddings::export_embeddings(&mut w, e.dim, &all)?;
        w.flush().map_err(io_err(&emb))?;
        let loss = dir.join("loss.csv");
        let mut w = create(&loss)?;
        writeln!(w, "epoch,loss").map_err(io_err(&loss))?;
        for (i, l) in trained.loss_history.iter().enumerate() {
            writeln!(w, "{},{l}", i + 1).map_err(io_err(&loss))?;
        }
        w.flush().map_err(io_err(&loss))?;
        Ok(vec![table, emb, loss])
    })
}

fn read_embeddings(ctx: &Context) -> Result<Vec<ContractEmbedding>, CliError> {
    Ok(embeddings::import_embeddings(open(&ctx.require(EMBEDDINGS)?)?)?)
}

/// Embedding rows and labels of the labelled contracts in one split.
fn split_matrix(
    emb: &[ContractEmbedding],
    split: &[SplitRow],
    which: Split,
) -> (Vec<String>, Vec<Vec<f64>>, Vec<bool>) {
    let by_addr: HashMap<&str, &SplitRow> = split.iter().map(|r| (r.address.as_str(), r)).collect();
    let (mut a, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for e in emb {
        if let Some(r) = by_addr.get(e.contract_address.as_str()).filter(|r| r.split == which) {
            a.push(e.contract_address.clone());
            x.push(e.vector.clone());
            y.push(r.label.is_illicit());
        }
    }
    (a, x, y)
}

// -------------------------------------------------------------- augment ---

fn augmentation_config(ctx: &Context, method: Method, minority: usize, target: usize, seed: u64) -> AugmentationConfig {
    let a = &ctx.config.augmentation;
    let mut cfg = AugmentationConfig::new(method, target, seed);
    // small (in-fold) minority sets cannot supply k neighbours
    cfg.k_neighbors = a.k_neighbors.min(minority.saturating_sub(1)).max(1);
    if cfg.k_neighbors < a.k_neighbors && method != Method::Gan {
        log::warn!("{}: k_neighbors reduced to {} for {minority} minority rows", method.name(), cfg.k_neighbors);
    }
    cfg.gan = a.gan.clone();
    // one batch per epoch when the minority class is smaller than a batch
    cfg.gan.batch_size = cfg.gan.batch_size.min(minority).max(1);
    cfg
}

fn partition(x: &[Vec<f64>], y: &[bool]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let minority = x.iter().zip(y).filter(|(_, &l)| l).map(|(r, _)| r.clone()).collect();
    let majority = x.iter().zip(y).filter(|(_, &l)| !l).map(|(r, _)| r.clone()).collect();
    (minority, majority)
}

/// Synthetic illicit rows for one method; the GAN generator is returned so
/// it can be persisted.
fn synthesize(
    ctx: &Context,
    method: Method,
    minority: &[Vec<f64>],
    majority: &[Vec<f64>],
    target: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Option<augment::Generator>), CliError> {
    let cfg = augmentation_config(ctx, method, minority.len(), target, seed);
    if method == Method::Gan {
        let needed = target.saturating_sub(minority.len());
        let generator = augment::train_gan(minority, &cfg.gan, seed)?;
        let rows = generator.sample(needed, seed.wrapping_add(1))?;
        Ok((rows, Some(generator)))
    } else {
        Ok((augment::oversample(minority, majority, &cfg)?, None))
    }
}

pub fn augment(ctx: &Context) -> Result<Outcome, CliError> {
    let inputs = vec![ctx.require(EMBEDDINGS)?, ctx.require(SPLIT)?];
    ctx.run_stage("augment", &ctx.config.augmentation, &inputs, |dir| {
        let emb = read_embeddings(ctx)?;
        let split = read_split(&ctx.out.join(SPLIT))?;
        let (_, x, y) = split_matrix(&emb, &split, Split::Train);
        let (minority, majority) = partition(&x, &y);
        let target = ctx.config.augmentation.target_count.unwrap_or(majority.len());
        let dim = x.first().map_or(0, Vec::len);
        let mut out = Vec::new();
        for &m in &ctx.config.augmentation.methods {
            let (synthetic, generator) = synthesize(ctx, m, &minority, &majority, target, ctx.config.seed())?;
            if let Some(g) = generator {
                let p = dir.join("gan_generator.rptnn");
                g.save(&p)?;
                out.push(p);
            }
            let rows: Vec<(&str, &[f64])> = minority
                .iter()
                .map(|r| ("real", r.as_slice()))
                .chain(synthetic.iter().map(|r| (m.name(), r.as_slice())))
                .collect();
            let p = dir.join(format!("{}_synthetic.csv", m.name()));
            let mut w = create(&p)?;
            augment::write_matrix_csv(&mut w, dim, &rows)?;
            w.flush().map_err(io_err(&p))?;
            out.push(p);
            let p = dir.join(format!("{}_quality.json", m.name()));
            write_json(&p, &augment::quality_metrics(&minority, &synthetic)?)?;
            out.push(p);
        }
        Ok(out)
    })
}

/// Synthetic (non-`real`) rows from an augmentation matrix CSV.
fn read_synthetic(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(reputa::Error::from)?;
        if rec.get(0) == Some("real") {
            continue;
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| reputa::Error::Data(format!("{}: {e}", path.display())))?;
        out.push(row);
    }
    Ok(out)
}

// ----------------------------------------------------------- train-gbdt ---

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionRow {
    pub model: String,
    pub address: String,
    pub label: Label,
    pub probability: f64,
}

pub fn train_gbdt(ctx: &Context) -> Result<Outcome, CliError> {
    let methods = ctx.config.augmentation.methods.clone();
    let mut inputs = vec![ctx.require(EMBEDDINGS)?, ctx.require(SPLIT)?];
    for m in &methods {
        inputs.push(ctx.require(&format!("augment/{}_synthetic.csv", m.name()))?);
    }
    let fragment = (&ctx.config.gbdt, &ctx.config.augmentation);
    ctx.run_stage("train-gbdt", &fragment, &inputs, |dir| {
        let seed = ctx.config.seed();
        let emb = read_embeddings(ctx)?;
        let split = read_split(&ctx.out.join(SPLIT))?;
        let (_, x, y) = split_matrix(&emb, &split, Split::Train);
        let (test_addr, test_x, test_y) = split_matrix(&emb, &split, Split::Test);
        let grid = ctx.config.gbdt.grid(seed);
        let n_train = x.len();
        let target_count = ctx.config.augmentation.target_count;

        let mut out = Vec::new();
        let mut predictions = Vec::new();
        let models: Vec<(String, Option<Method>)> = std::iter::once((ORIGINAL.to_string(), None))
            .chain(methods.iter().map(|m| (m.name().to_string(), Some(*m))))
            .collect();
        for (name, method) in models {
            log::info!("train-gbdt: {name}");
            let hook = |fx: &[Vec<f64>], fy: &[bool], fold: usize| -> reputa::Result<Dataset> {
                let m = method.expect("hook only installed with a method");
                let (minority, majority) = partition(fx, fy);
                // a configured absolute target is scaled to the fold size
                let target = target_count.map_or(majority.len(), |t| {
                    ((t as f64 * fx.len() as f64 / n_train as f64).ceil() as usize).max(minority.len())
                });
                let (synthetic, _) = synthesize(ctx, m, &minority, &majority, target, seed.wrapping_add(fold as u64 + 1))
                    .map_err(|e| match e {
                        CliError::Core(e) => e,
                        other => reputa::Error::InvalidArgument(other.to_string()),
                    })?;
                let mut ax = fx.to_vec();
                let mut ay = fy.to_vec();
                ay.extend(std::iter::repeat_n(true, synthetic.len()));
                ax.extend(synthetic);
                Ok((ax, ay))
            };
            let cv = gbdt::grid_search_cv(
                &x,
                &y,
                &grid,
                ctx.config.gbdt.cv_folds,
                seed,
                method.is_some().then_some(&hook as &gbdt::FoldAugment),
            )?;
            let p = dir.join(format!("{name}_cv.csv"));
            let mut w = create(&p)?;
            cv.write_csv(&mut w)?;
            w.flush().map_err(io_err(&p))?;
            out.push(p);

            let (mut fx, mut fy) = (x.clone(), y.clone());
            if let Some(m) = method {
                let synthetic = read_synthetic(&ctx.out.join(format!("augment/{}_synthetic.csv", m.name())))?;
                fy.extend(std::iter::repeat_n(true, synthetic.len()));
                fx.extend(synthetic);
            }
            let model = gbdt::fit(&fx, &fy, cv.best())?;
            let p = dir.join(format!("{name}_model.json"));
            write_text(&p, &model.to_json()?)?;
            out.push(p);
            let p = dir.join(format!("{name}_training.csv"));
            let mut w = create(&p)?;
            model.write_training_report(&mut w)?;
            w.flush().map_err(io_err(&p))?;
            out.push(p);

            if !test_x.is_empty() {
                let probs = model.predict_proba(&test_x)?;
                for ((a, &t), p) in test_addr.iter().zip(&test_y).zip(probs) {
                    predictions.push(PredictionRow {
                        model: name.clone(),
                        address: a.clone(),
                        label: if t { Label::Illicit } else { Label::Reputable },
                        probability: p,
                    });
                }
            }
        }
        let p = dir.join("predictions.csv");
        let mut wtr = csv::Writer::from_writer(create(&p)?);
        for r in &predictions {
            wtr.serialize(r).map_err(reputa::Error::from)?;
        }
        wtr.flush().map_err(io_err(&p))?;
        out.push(p);
        Ok(out)
    })
}

pub fn load_gbdt(path: &Path) -> Result<BoostedModel, CliError> {
    Ok(BoostedModel::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)?)
}

// ---------------------------------------------------------- tx-features ---

pub fn tx_features(ctx: &Context) -> Result<Outcome, CliError> {
    let inputs = contract_inputs(ctx)?;
    let f = &ctx.config.features;
    ctx.run_stage("tx-features", f, &inputs, |dir| {
        let records = ingest::load_fixture_dir(&ctx.out.join(CONTRACTS_DIR))?;
        let split: HashMap<String, SplitRow> = read_split(&ctx.out.join(SPLIT))?
            .into_iter()
            .map(|r| (r.address.clone(), r))
            .collect();
        let hourly: Vec<Vec<features::HourlyWindow>> = records
            .iter()
            .map(|r| features::aggregate_hourly(&r.address, &ingest::merge_transactions(r)))
            .collect();
        let hourly_path = dir.join("hourly.csv");
        let mut w = create(&hourly_path)?;
        features::write_hourly_csv(&mut w, &hourly.concat())?;
        w.flush().map_err(io_err(&hourly_path))?;

        let is_training = |r: &ContractRecord| {
            split
                .get(&r.address)
                .is_some_and(|s| s.split == Split::Train && s.label == Label::Reputable)
        };
        let train_series: Vec<Vec<features::HourlyWindow>> = records
            .iter()
            .zip(&hourly)
            .filter(|(r, _)| is_training(r))
            .map(|(_, h)| h.clone())
            .collect();
        let train_series = features::remove_outliers_scoped(&train_series, f.outlier_k, f.outlier_scope);
        let standardizer = features::Standardizer::fit_windows(&train_series.concat())?;
        let std_path = dir.join("standardizer.json");
        write_json(&std_path, &standardizer)?;

        let mut train_windows = Vec::new();
        for s in &train_series {
            train_windows.extend(features::windowize(&standardizer.apply(s), f.window, f.stride)?);
        }
        let mut eval_windows = Vec::new();
        for (r, h) in records.iter().zip(&hourly) {
            if !is_training(r) && split.get(&r.address).is_some_and(|s| s.split != Split::Train || s.label == Label::Illicit) {
                eval_windows.extend(features::windowize(&standardizer.apply(h), f.window, f.stride)?);
            }
        }
        let mut out = vec![hourly_path, std_path];
        for (name, windows) in [("train_windows.jsonl", &train_windows), ("eval_windows.jsonl", &eval_windows)] {
            let p = dir.join(name);
            let mut w = create(&p)?;
            features::write_tensors_jsonl(&mut w, windows)?;
            w.flush().map_err(io_err(&p))?;
            out.push(p);
        }
        Ok(out)
    })
}

fn read_windows(path: &Path) -> Result<Vec<WindowTensor>, CliError> {
    Ok(features::read_tensors_jsonl(open(path)?)?)
}

// ------------------------------------------------------------ train-cae ---

fn cae_config(ctx: &Context, variant: Variant, embedding_dim: usize) -> CaeConfig {
    let c = &ctx.config.cae;
    CaeConfig {
        window: ctx.config.features.window,
        features: features::N_FEATURES,
        variant,
        embedding_dim,
        projection_width: c.projection_width,
        bottleneck: c.bottleneck,
        learning_rate: c.learning_rate,
        epochs: c.epochs,
        batch_size: c.batch_size,
        seed: ctx.config.seed(),
    }
}

fn embedding_lookup(ctx: &Context) -> Result<EmbeddingLookup, CliError> {
    Ok(read_embeddings(ctx)?
        .into_iter()
        .map(|e| (e.contract_address, e.vector))
        .collect())
}

pub fn model_path(variant: Variant) -> String {
    format!("train-cae/{}.rptnn", variant.name())
}

pub fn train_cae(ctx: &Context) -> Result<Outcome, CliError> {
    let inputs = vec![ctx.require(TRAIN_WINDOWS)?, ctx.require(EMBEDDINGS)?, ctx.require(SPLIT)?];
    let fragment = (&ctx.config.cae, ctx.config.features.window);
    ctx.run_stage("train-cae", &fragment, &inputs, |dir| {
        let windows = read_windows(&ctx.out.join(TRAIN_WINDOWS))?;
        let lookup = embedding_lookup(ctx)?;
        let labels = labels_of(&read_split(&ctx.out.join(SPLIT))?);
        let dim = lookup.values().next().map_or(0, Vec::len);
        let mut out = Vec::new();
        for v in VARIANTS {
            log::info!("train-cae: {}", v.name());
            let model = cae::train_cae(&windows, &labels, &lookup, &cae_config(ctx, v, dim))?;
            let p = ctx.out.join(model_path(v));
            model.save(&p)?;
            out.push(p);
            let p = dir.join(format!("{}_loss.csv", v.name()));
            let mut w = create(&p)?;
            writeln!(w, "epoch,loss").map_err(io_err(&p))?;
            for (i, l) in model.loss_history.iter().enumerate() {
                writeln!(w, "{},{l}", i + 1).map_err(io_err(&p))?;
            }
            w.flush().map_err(io_err(&p))?;
            out.push(p);
        }
        Ok(out)
    })
}

// ---------------------------------------------------------------- score ---

fn write_errors(path: &Path, windows: &[WindowTensor], errors: &[f64]) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "address,start_hour,error").map_err(io_err(path))?;
    for (win, e) in windows.iter().zip(errors) {
        writeln!(w, "{},{},{e}", win.contract_address, win.start_hour).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Per-window errors in file order; `to_string` output parses back exactly.
pub fn read_errors(path: &Path) -> Result<Vec<(String, u64, f64)>, CliError> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    Ok(rdr
        .deserialize()
        .collect::<Result<Vec<(String, u64, f64)>, _>>()
        .map_err(reputa::Error::from)?)
}

pub fn errors_path(variant: Variant, set: &str) -> String {
    format!("score/{}_{set}_errors.csv", variant.name())
}

pub fn reports_path(variant: Variant) -> String {
    format!("score/{}_reports.jsonl", variant.name())
}

pub fn score(ctx: &Context) -> Result<Outcome, CliError> {
    let mut inputs = Vec::new();
    for v in VARIANTS {
        inputs.push(ctx.require(&model_path(v))?);
    }
    inputs.extend([
        ctx.require(TRAIN_WINDOWS)?,
        ctx.require(EVAL_WINDOWS)?,
        ctx.require(EMBEDDINGS)?,
        ctx.require(SPLIT)?,
    ]);
    let p = ctx.config.evaluation.percentile;
    ctx.run_stage("score", &p, &inputs, |dir| {
        let train = read_windows(&ctx.out.join(TRAIN_WINDOWS))?;
        let eval = read_windows(&ctx.out.join(EVAL_WINDOWS))?;
        let lookup = embedding_lookup(ctx)?;
        let labels = labels_of(&read_split(&ctx.out.join(SPLIT))?);
        let mut out = Vec::new();
        let mut thresholds = BTreeMap::new();
        for v in VARIANTS {
            let model = Autoencoder::load(ctx.out.join(model_path(v)))?;
            let train_err = model.score_all(&train, &lookup)?;
            let eval_err = model.score_all(&eval, &lookup)?;
            for (set, w, e) in [("train", &train, &train_err), ("eval", &eval, &eval_err)] {
                let path = ctx.out.join(errors_path(v, set));
                write_errors(&path, w, e)?;
                out.push(path);
            }
            let t = cae::fit_threshold(&train_err, p, &format!("{} training windows", v.name()))?;
            let reports = cae::classify_all(&eval, &eval_err, &t)?;
            let path = ctx.out.join(reports_path(v));
            let mut w = create(&path)?;
            cae::write_reports_jsonl(&mut w, &reports)?;
            w.flush().map_err(io_err(&path))?;
            out.push(path);
            thresholds.insert(v.name(), t);

            let all: Vec<WindowTensor> = train.iter().chain(&eval).cloned().collect();
            let latents = cae::export_latents(&model, &all, &lookup)?;
            let path = dir.join(format!("{}_window_latents.csv", v.name()));
            let mut w = create(&path)?;
            latents.write_window_csv(&mut w)?;
            w.flush().map_err(io_err(&path))?;
            out.push(path);
            let path = dir.join(format!("{}_contract_latents.csv", v.name()));
            let mut w = create(&path)?;
            latents.write_contract_csv(&mut w, &labels)?;
            w.flush().map_err(io_err(&path))?;
            out.push(path);
        }
        let path = dir.join("thresholds.json");
        write_json(&path, &thresholds)?;
        out.push(path);
        Ok(out)
    })
}

fn read_reports(path: &Path) -> Result<Vec<cae::AnomalyReport>, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Core(e.into())))
        .collect()
}

// ------------------------------------------------------------- evaluate ---

#[derive(Debug, Serialize, Deserialize)]
pub struct ContractErrorRow {
    pub variant: String,
    pub address: String,
    pub label: Label,
    pub split: Split,
    pub windows: usize,
    pub mean_error: f64,
    pub anomaly_ratio: f64,
    pub verdict: Label,
}

pub fn evaluate(ctx: &Context) -> Result<Outcome, CliError> {
    let mut inputs = vec![ctx.require(PREDICTIONS)?, ctx.require(SPLIT)?];
    for v in VARIANTS {
        inputs.push(ctx.require(&reports_path(v))?);
    }
    ctx.run_stage("evaluate", &(), &inputs, |dir| {
        let split = read_split(&ctx.out.join(SPLIT))?;
        let by_addr: HashMap<&str, &SplitRow> = split.iter().map(|r| (r.address.as_str(), r)).collect();
        let mut rdr = csv::Reader::from_reader(open(&ctx.out.join(PREDICTIONS))?);
        let preds: Vec<PredictionRow> = rdr
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(reputa::Error::from)?;
        let mut reports: Vec<(String, MetricsReport)> = Vec::new();
        let mut names: Vec<&str> = Vec::new();
        for p in &preds {
            if !names.contains(&p.model.as_str()) {
                names.push(&p.model);
            }
        }
        for name in names {
            let rows: Vec<&PredictionRow> = preds.iter().filter(|p| p.model == name).collect();
            let y: Vec<bool> = rows.iter().map(|r| r.label.is_illicit()).collect();
            let prob: Vec<f64> = rows.iter().map(|r| r.probability).collect();
            let pred: Vec<bool> = prob.iter().map(|&p| p > 0.5).collect();
            reports.push((format!("gbdt-{name}"), eval::compute_metrics(&y, &pred, Some(&prob))?));
        }

        let mut contract_rows = Vec::new();
        for v in VARIANTS {
            let (mut y, mut pred) = (Vec::new(), Vec::new());
            for r in read_reports(&ctx.out.join(reports_path(v)))? {
                let Some(s) = by_addr.get(r.contract_address.as_str()) else {
                    continue;
                };
                contract_rows.push(ContractErrorRow {
                    variant: v.name().to_string(),
                    address: r.contract_address.clone(),
                    label: s.label,
                    split: s.split,
                    windows: r.errors.len(),
                    mean_error: reputa::stats::mean(&r.errors),
                    anomaly_ratio: r.anomaly_ratio,
                    verdict: r.verdict,
                });
                if s.label != Label::Unlabelled {
                    y.push(s.label.is_illicit());
                    pred.push(r.verdict == Label::Illicit);
                }
            }
            reports.push((format!("cae-{}", v.name()), eval::compute_metrics(&y, &pred, None)?));
        }

        let metrics = dir.join("metrics.csv");
        let mut w = create(&metrics)?;
        eval::write_metrics_csv(&mut w, &reports)?;
        w.flush().map_err(io_err(&metrics))?;
        let md = dir.join("metrics.md");
        write_text(&md, &eval::metrics_markdown(&reports))?;
        let errors = dir.join("contract_errors.csv");
        let mut wtr = csv::Writer::from_writer(create(&errors)?);
        for r in &contract_rows {
            wtr.serialize(r).map_err(reputa::Error::from)?;
        }
        wtr.flush().map_err(io_err(&errors))?;
        Ok(vec![metrics, md, errors])
    })
}

// ---------------------------------------------------------------- sweep ---

pub fn sweep(ctx: &Context) -> Result<Outcome, CliError> {
    let mut inputs = vec![ctx.require(EVAL_WINDOWS)?, ctx.require(SPLIT)?];
    for v in VARIANTS {
        inputs.push(ctx.require(&errors_path(v, "train"))?);
        inputs.push(ctx.require(&errors_path(v, "eval"))?);
    }
    ctx.run_stage("sweep", &ctx.config.evaluation.sweep, &inputs, |dir| {
        let eval_windows = read_windows(&ctx.out.join(EVAL_WINDOWS))?;
        let truth = labels_of(&read_split(&ctx.out.join(SPLIT))?);
        let mut scores = Vec::new();
        for v in VARIANTS {
            let train: Vec<f64> = read_errors(&ctx.out.join(errors_path(v, "train")))?.into_iter().map(|r| r.2).collect();
            let eval: Vec<f64> = read_errors(&ctx.out.join(errors_path(v, "eval")))?.into_iter().map(|r| r.2).collect();
            scores.push((v.name(), train, eval));
        }
        let variants: Vec<VariantScores> = scores
            .iter()
            .map(|(name, train, eval)| VariantScores {
                variant: name,
                training_errors: train,
                eval_windows: &eval_windows,
                eval_errors: eval,
            })
            .collect();
        let table = eval::threshold_sweep(&variants, &ctx.config.evaluation.sweep, &truth)?;
        let csv_path = dir.join("sweep.csv");
        let mut w = create(&csv_path)?;
        table.write_csv(&mut w)?;
        w.flush().map_err(io_err(&csv_path))?;
        let md = dir.join("sweep.md");
        write_text(&md, &table.to_markdown())?;
        Ok(vec![csv_path, md])
    })
}

pub fn read_sweep(path: &Path) -> Result<SweepTable, CliError> {
    Ok(SweepTable::read_csv(open(path)?)?)
}
