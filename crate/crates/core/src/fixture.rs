//! Synthetic contract corpus for desk-scale experiments.
//!
//! Reputable contracts get smooth, diurnally modulated Poisson traffic and
//! bytecode dominated by arithmetic, memory and control flow. Illicit
//! contracts get sparse traffic punctuated by bursts, a high failure rate and
//! bytecode skewed toward external calls and storage writes. Every generated
//! illicit contract has at least one hour whose transaction count exceeds
//! five times its own median hourly count.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::disasm::{Bytecode, OpcodeCategory};
use crate::error::{Error, Result};
use crate::features::HOUR;
use crate::ingest::{write_fixture_dir, ContractRecord, Label, TxRecord};

/// Generator parameters; written to the fixture manifest so experiments on
/// a fixture can be reproduced from it alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureParams {
    pub n_reputable: usize,
    pub n_illicit: usize,
    pub seed: u64,
    /// Relative category frequencies, indexed by category id.
    pub reputable_category_weights: [f64; OpcodeCategory::COUNT],
    pub illicit_category_weights: [f64; OpcodeCategory::COUNT],
    /// Blend of the illicit profile into illicit bytecode: 1 uses it as is,
    /// 0 makes illicit bytecode indistinguishable from reputable bytecode.
    pub illicit_code_mix: f64,
    /// Log-normal jitter applied per contract to each category weight.
    pub category_jitter: f64,
    pub opcodes_min: usize,
    pub opcodes_max: usize,
    pub hours_min: u64,
    pub hours_max: u64,
    pub reputable_rate: (f64, f64),
    pub reputable_diurnal_amplitude: f64,
    pub reputable_failure_rate: f64,
    pub illicit_rate: (f64, f64),
    pub illicit_bursts: (usize, usize),
    pub illicit_burst_multiplier: f64,
    pub illicit_failure_rate: f64,
    pub internal_fraction: f64,
    pub min_burst_ratio: f64,
}

impl FixtureParams {
    pub fn new(n_reputable: usize, n_illicit: usize, seed: u64) -> Self {
        FixtureParams {
            n_reputable,
            n_illicit,
            seed,
            //                            Ari  Cmp  Cry  Env  Blk  Pop  Mem  Sto  Flw  Psh  Dup  Swp  Log  Sys  Inv
            reputable_category_weights: [12.0, 8.0, 1.0, 4.0, 1.0, 4.0, 12.0, 2.0, 12.0, 20.0, 10.0, 8.0, 1.0, 1.5, 0.2],
            illicit_category_weights: [6.0, 7.0, 1.0, 6.0, 1.5, 4.0, 6.0, 8.0, 8.0, 18.0, 8.0, 6.0, 0.5, 8.0, 0.5],
            illicit_code_mix: 1.0,
            category_jitter: 0.35,
            opcodes_min: 200,
            opcodes_max: 600,
            hours_min: 72,
            hours_max: 120,
            reputable_rate: (10.0, 20.0),
            reputable_diurnal_amplitude: 0.5,
            reputable_failure_rate: 0.02,
            illicit_rate: (0.5, 2.0),
            illicit_bursts: (2, 5),
            illicit_burst_multiplier: 15.0,
            illicit_failure_rate: 0.4,
            internal_fraction: 0.2,
            min_burst_ratio: 5.0,
        }
    }
}

fn random_address(rng: &mut ChaCha8Rng) -> String {
    let bytes: [u8; 20] = rng.gen();
    format!("0x{}", hex::encode(bytes))
}

fn pick_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn bytecode(base: &[f64], p: &FixtureParams, rng: &mut ChaCha8Rng) -> Bytecode {
    let jitter = LogNormal::new(0.0, p.category_jitter).expect("valid jitter");
    let weights: Vec<f64> = base.iter().map(|w| w * jitter.sample(rng)).collect();
    let members: Vec<Vec<u8>> = OpcodeCategory::ALL.iter().map(|c| c.members()).collect();
    let n = rng.gen_range(p.opcodes_min..=p.opcodes_max);
    let mut code = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let cat = pick_weighted(&weights, rng);
        let op = members[cat][rng.gen_range(0..members[cat].len())];
        code.push(op);
        let imm = crate::disasm::immediate_len(op);
        code.extend((0..imm).map(|_| rng.gen::<u8>()));
    }
    Bytecode(code)
}

struct TxSpec<'a> {
    contract: &'a str,
    users: &'a [String],
    failure_rate: f64,
    internal_fraction: f64,
    value: LogNormal<f64>,
    gas_used: Normal<f64>,
    gas_price: LogNormal<f64>,
}

impl TxSpec<'_> {
    fn make(&self, hour_start: u64, rng: &mut ChaCha8Rng) -> TxRecord {
        let timestamp = hour_start + rng.gen_range(0..HOUR);
        let user = self.users[rng.gen_range(0..self.users.len())].clone();
        let internal = rng.gen_bool(self.internal_fraction);
        let (from_addr, to_addr) = if internal {
            (self.contract.to_string(), user)
        } else {
            (user, self.contract.to_string())
        };
        TxRecord {
            block_number: 14_000_000 + (timestamp - 1_600_000_000) / 12,
            timestamp,
            from_addr,
            to_addr,
            value: self.value.sample(rng) as u128,
            gas_used: self.gas_used.sample(rng).max(21_000.0) as u64,
            gas_price: if internal { 0 } else { self.gas_price.sample(rng) as u128 },
            is_error: rng.gen_bool(self.failure_rate),
            is_internal: internal,
        }
    }
}

fn hourly_counts(txs: &[TxRecord]) -> BTreeMap<u64, usize> {
    let mut counts = BTreeMap::new();
    if let (Some(lo), Some(hi)) = (
        txs.iter().map(|t| t.timestamp / HOUR).min(),
        txs.iter().map(|t| t.timestamp / HOUR).max(),
    ) {
        for h in lo..=hi {
            counts.insert(h, 0);
        }
        for t in txs {
            *counts.get_mut(&(t.timestamp / HOUR)).expect("hour in range") += 1;
        }
    }
    counts
}

fn median(v: &mut [usize]) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// Largest hourly count divided by the median hourly count (silent hours
/// included); infinite when the median is zero.
pub fn burst_ratio(txs: &[TxRecord]) -> f64 {
    let counts = hourly_counts(txs);
    let mut v: Vec<usize> = counts.values().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    let max = *v.iter().max().expect("non-empty") as f64;
    let med = median(&mut v);
    if med == 0.0 {
        f64::INFINITY
    } else {
        max / med
    }
}

fn contract(label: Label, p: &FixtureParams, rng: &mut ChaCha8Rng) -> ContractRecord {
    let address = random_address(rng);
    let illicit = label == Label::Illicit;
    let base: Vec<f64> = if illicit {
        p.reputable_category_weights
            .iter()
            .zip(&p.illicit_category_weights)
            .map(|(r, i)| (1.0 - p.illicit_code_mix) * r + p.illicit_code_mix * i)
            .collect()
    } else {
        p.reputable_category_weights.to_vec()
    };
    let code = bytecode(&base, p, rng);
    let n_users = if illicit { 10 } else { 30 };
    let users: Vec<String> = (0..n_users).map(|_| random_address(rng)).collect();
    let spec = TxSpec {
        contract: &address,
        users: &users,
        failure_rate: if illicit {
            p.illicit_failure_rate
        } else {
            p.reputable_failure_rate
        },
        internal_fraction: p.internal_fraction,
        value: LogNormal::new((2e17f64).ln(), if illicit { 2.0 } else { 0.5 }).expect("valid"),
        gas_used: if illicit {
            Normal::new(90_000.0, 40_000.0)
        } else {
            Normal::new(60_000.0, 10_000.0)
        }
        .expect("valid"),
        gas_price: LogNormal::new((30e9f64).ln(), if illicit { 0.8 } else { 0.2 }).expect("valid"),
    };

    let start = (1_650_000_000 / HOUR + rng.gen_range(0..24 * 30)) * HOUR;
    let hours = rng.gen_range(p.hours_min..=p.hours_max);
    let mut txs = Vec::new();
    if illicit {
        let rate = rng.gen_range(p.illicit_rate.0..p.illicit_rate.1);
        let n_bursts = rng.gen_range(p.illicit_bursts.0..=p.illicit_bursts.1);
        let bursts: Vec<u64> = (0..n_bursts).map(|_| rng.gen_range(0..hours)).collect();
        for h in 0..hours {
            let lambda = if bursts.contains(&h) {
                rate * p.illicit_burst_multiplier
            } else {
                rate
            };
            let n = Poisson::new(lambda).expect("positive rate").sample(rng) as usize;
            txs.extend((0..n).map(|_| spec.make(start + h * HOUR, rng)));
        }
        // burst guarantee: top up the busiest hour if the draw came out tame
        let counts = hourly_counts(&txs);
        let mut v: Vec<usize> = counts.values().copied().collect();
        let (busiest, max) = counts
            .iter()
            .max_by_key(|(h, c)| (**c, std::cmp::Reverse(**h)))
            .map(|(h, c)| (*h, *c))
            .unwrap_or((start / HOUR, 0));
        let need = (p.min_burst_ratio * median(&mut v)).floor() as usize + 1;
        if max < need {
            txs.extend((0..need - max).map(|_| spec.make(busiest * HOUR, rng)));
        }
    } else {
        let rate = rng.gen_range(p.reputable_rate.0..p.reputable_rate.1);
        let phase = rng.gen_range(0.0..24.0);
        for h in 0..hours {
            let lambda = rate
                * (1.0 + p.reputable_diurnal_amplitude * (std::f64::consts::TAU * (h as f64 + phase) / 24.0).sin());
            let n = Poisson::new(lambda.max(1e-3)).expect("positive rate").sample(rng) as usize;
            txs.extend((0..n).map(|_| spec.make(start + h * HOUR, rng)));
        }
    }
    txs.sort_by_key(|t| (t.timestamp, t.block_number));
    let (internal, normal): (Vec<TxRecord>, Vec<TxRecord>) = txs.into_iter().partition(|t| t.is_internal);
    ContractRecord {
        address,
        bytecode: code,
        label,
        transactions: normal,
        internal_transactions: internal,
    }
}

/// Generates the corpus in memory, sorted by address.
pub fn generate(p: &FixtureParams) -> Result<Vec<ContractRecord>> {
    if p.n_reputable == 0 || p.n_illicit == 0 {
        return Err(Error::InvalidArgument("fixture needs at least one contract of each class".into()));
    }
    if !(0.0..=1.0).contains(&p.illicit_code_mix) {
        return Err(Error::InvalidArgument("illicit_code_mix must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let labels = std::iter::repeat_n(Label::Reputable, p.n_reputable)
        .chain(std::iter::repeat_n(Label::Illicit, p.n_illicit));
    let mut out: Vec<ContractRecord> = labels.map(|l| contract(l, p, &mut rng)).collect();
    out.sort_by(|a, b| a.address.cmp(&b.address));
    Ok(out)
}

pub const FIXTURE_MANIFEST: &str = "manifest.json";

/// Writes the contract files, `labels.csv` and a manifest holding the generator parameters.
pub fn make_fixture(dir: &Path, p: &FixtureParams) -> Result<Vec<ContractRecord>> {
    let records = generate(p)?;
    write_fixture_dir(dir, &records)?;
    let manifest = serde_json::json!({
        "generator": "reputa synthetic fixture",
        "contracts": records.len(),
        "params": p,
    });
    std::fs::write(dir.join(FIXTURE_MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(records)
}
