//! Contract records in the Etherscan account/contract API shape.
//!
//! Fixture files use the API field names verbatim so recorded responses can
//! be dropped in unchanged:
//!
//! ```json
//! {"address": "0x…", "bytecode": "0x…", "txlist": [...], "txlistinternal": [...]}
//! ```
//!
//! Numeric fields arrive as decimal strings, as the API sends them.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::disasm::Bytecode;
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "ETHERSCAN_API_KEY";
pub const DEFAULT_BASE_URL: &str = "https://api.etherscan.io/api";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Reputable,
    Illicit,
    Unlabelled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Reputable => "reputable",
            Label::Illicit => "illicit",
            Label::Unlabelled => "unlabelled",
        }
    }

    /// Accepts the label names (any case) or `0`/`1` with illicit = 1.
    pub fn parse(s: &str) -> Result<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reputable" | "0" => Ok(Label::Reputable),
            "illicit" | "1" => Ok(Label::Illicit),
            "unlabelled" | "unlabeled" | "" => Ok(Label::Unlabelled),
            other => Err(Error::Data(format!("unknown label {other:?}"))),
        }
    }

    pub fn is_illicit(self) -> bool {
        self == Label::Illicit
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub block_number: u64,
    pub timestamp: u64,
    pub from_addr: String,
    pub to_addr: String,
    pub value: u128,
    pub gas_used: u64,
    pub gas_price: u128,
    pub is_error: bool,
    pub is_internal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractRecord {
    pub address: String,
    pub bytecode: Bytecode,
    pub label: Label,
    pub transactions: Vec<TxRecord>,
    pub internal_transactions: Vec<TxRecord>,
}

/// One transaction object as the API returns it. Unknown fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RawTx {
    pub block_number: String,
    pub time_stamp: String,
    pub from: String,
    #[serde(default)]
    pub to: String,
    pub value: String,
    #[serde(default)]
    pub gas_used: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gas_price: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub address: String,
    pub bytecode: String,
    #[serde(default)]
    pub txlist: Vec<RawTx>,
    #[serde(default)]
    pub txlistinternal: Vec<RawTx>,
}

/// Lowercase, `0x`-prefixed, 20-byte hex.
pub fn normalize_address(addr: &str) -> Result<String> {
    let a = addr.trim();
    let body = a.strip_prefix("0x").or_else(|| a.strip_prefix("0X")).unwrap_or(a);
    if body.len() != 40 || !body.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::Data(format!("not a 20-byte hex address: {addr:?}")));
    }
    Ok(format!("0x{}", body.to_ascii_lowercase()))
}

fn num<T: std::str::FromStr>(field: &str, s: &str) -> Result<T> {
    // optional numeric fields come back as "" for some record kinds
    let s = match s.trim() {
        "" => "0",
        t => t,
    };
    s.parse()
        .map_err(|_| Error::Data(format!("{field}: not a non-negative integer: {s:?}")))
}

impl RawTx {
    pub fn to_record(&self, is_internal: bool) -> Result<TxRecord> {
        let timestamp: u64 = num("timeStamp", &self.time_stamp)?;
        if timestamp == 0 {
            return Err(Error::Data("timeStamp must be > 0".into()));
        }
        Ok(TxRecord {
            block_number: num("blockNumber", &self.block_number)?,
            timestamp,
            from_addr: self.from.to_ascii_lowercase(),
            to_addr: self.to.to_ascii_lowercase(),
            value: num("value", &self.value)?,
            gas_used: num("gasUsed", &self.gas_used)?,
            gas_price: match &self.gas_price {
                Some(p) => num("gasPrice", p)?,
                None => 0,
            },
            is_error: matches!(self.is_error.as_deref().map(str::trim), Some("1")),
            is_internal,
        })
    }

    pub fn from_record(tx: &TxRecord) -> RawTx {
        RawTx {
            block_number: tx.block_number.to_string(),
            time_stamp: tx.timestamp.to_string(),
            from: tx.from_addr.clone(),
            to: tx.to_addr.clone(),
            value: tx.value.to_string(),
            gas_used: tx.gas_used.to_string(),
            gas_price: (!tx.is_internal).then(|| tx.gas_price.to_string()),
            is_error: Some(if tx.is_error { "1" } else { "0" }.to_string()),
        }
    }
}

impl FixtureFile {
    pub fn to_record(&self, label: Label) -> Result<ContractRecord> {
        let address = normalize_address(&self.address)?;
        let ctx = |e: Error| Error::Data(format!("{address}: {e}"));
        let bytecode = Bytecode::from_hex(&self.bytecode).map_err(ctx)?;
        let transactions = self
            .txlist
            .iter()
            .map(|t| t.to_record(false))
            .collect::<Result<Vec<_>>>()
            .map_err(ctx)?;
        let internal_transactions = self
            .txlistinternal
            .iter()
            .map(|t| t.to_record(true))
            .collect::<Result<Vec<_>>>()
            .map_err(ctx)?;
        Ok(ContractRecord {
            address,
            bytecode,
            label,
            transactions,
            internal_transactions,
        })
    }

    /// Canonical form: normalized address, lowercase `0x` bytecode, decimal fields.
    pub fn from_record(rec: &ContractRecord) -> FixtureFile {
        FixtureFile {
            address: rec.address.clone(),
            bytecode: format!("0x{}", rec.bytecode.to_hex()),
            txlist: rec.transactions.iter().map(RawTx::from_record).collect(),
            txlistinternal: rec.internal_transactions.iter().map(RawTx::from_record).collect(),
        }
    }
}

/// File name used for a contract inside a fixture directory.
pub fn fixture_file_name(address: &str) -> String {
    format!("{address}.json")
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, Label>> {
    let mut out = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(path)?;
    for row in rdr.records() {
        let row = row?;
        let (Some(addr), Some(label)) = (row.get(0), row.get(1)) else {
            return Err(Error::Data(format!("{}: expected address,label", path.display())));
        };
        let addr = normalize_address(addr)?;
        if out.insert(addr.clone(), Label::parse(label)?).is_some() {
            return Err(Error::DuplicateAddress(addr));
        }
    }
    Ok(out)
}

pub fn write_labels(path: &Path, records: &[ContractRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["address", "label"])?;
    for r in records {
        wtr.write_record([r.address.as_str(), r.label.as_str()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Loads every `*.json` contract file in `dir` (other files are ignored),
/// labelled from the `labels.csv` sidecar. Records come back sorted by address.
pub fn load_fixture_dir(dir: &Path) -> Result<Vec<ContractRecord>> {
    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() {
        read_labels(&labels_path)?
    } else {
        log::warn!("{} not found; all contracts unlabelled", labels_path.display());
        BTreeMap::new()
    };
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json") && p.file_name().is_some_and(|n| n != "manifest.json"));
    paths.sort();

    let mut records: Vec<ContractRecord> = Vec::with_capacity(paths.len());
    let mut seen = HashSet::new();
    for p in paths {
        let file: FixtureFile = serde_json::from_str(&fs::read_to_string(&p)?)
            .map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
        let address = normalize_address(&file.address)?;
        if !seen.insert(address.clone()) {
            return Err(Error::DuplicateAddress(address));
        }
        let label = labels.get(&address).copied().unwrap_or_else(|| {
            log::warn!("no label for {address}; marking unlabelled");
            Label::Unlabelled
        });
        records.push(file.to_record(label)?);
    }
    records.sort_by(|a, b| a.address.cmp(&b.address));
    Ok(records)
}

/// Writes one canonical JSON file per record plus `labels.csv`.
pub fn write_fixture_dir(dir: &Path, records: &[ContractRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for r in records {
        let json = serde_json::to_string_pretty(&FixtureFile::from_record(r))?;
        fs::write(dir.join(fixture_file_name(&r.address)), json + "\n")?;
    }
    write_labels(&dir.join(LABELS_FILE), records)
}

/// Normal and internal transactions in one list, stably sorted by
/// `(timestamp, block_number)`.
pub fn merge_transactions(record: &ContractRecord) -> Vec<TxRecord> {
    let mut all: Vec<TxRecord> = record
        .transactions
        .iter()
        .chain(&record.internal_transactions)
        .cloned()
        .collect();
    all.sort_by_key(|t| (t.timestamp, t.block_number));
    all
}

pub trait HttpTransport: Send + Sync {
    /// Body of a successful GET; `Err` carries a transport-level message.
    fn get(&self, url: &str) -> std::result::Result<String, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport {
                endpoint: "client".into(),
                msg: e.to_string(),
            })?;
        Ok(ReqwestTransport { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn get(&self, url: &str) -> std::result::Result<String, String> {
        let resp = self.client.get(url).send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        resp.text().map_err(|e| e.to_string())
    }
}

/// Spaces calls at least `1/rate` seconds apart. Share one instance across
/// clients to enforce a global limit.
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / rate.max(1e-9)),
            next: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub base_url: String,
    pub requests_per_second: f64,
    pub max_attempts: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff: Duration,
    pub page_size: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            base_url: DEFAULT_BASE_URL.to_string(),
            requests_per_second: 5.0,
            max_attempts: 3,
            backoff: Duration::from_millis(500),
            page_size: 10_000,
        }
    }
}

pub struct EtherscanClient<T: HttpTransport> {
    transport: T,
    api_key: String,
    cfg: ClientConfig,
    limiter: std::sync::Arc<RateLimiter>,
}

impl<T: HttpTransport> EtherscanClient<T> {
    pub fn new(transport: T, api_key: impl Into<String>, cfg: ClientConfig) -> Self {
        let limiter = std::sync::Arc::new(RateLimiter::per_second(cfg.requests_per_second));
        Self::with_limiter(transport, api_key, cfg, limiter)
    }

    pub fn with_limiter(
        transport: T,
        api_key: impl Into<String>,
        cfg: ClientConfig,
        limiter: std::sync::Arc<RateLimiter>,
    ) -> Self {
        EtherscanClient {
            transport,
            api_key: api_key.into(),
            cfg,
            limiter,
        }
    }

    fn url(&self, params: &[(&str, String)]) -> String {
        let mut url = format!("{}?", self.cfg.base_url);
        for (k, v) in params {
            url.push_str(k);
            url.push('=');
            url.push_str(v);
            url.push('&');
        }
        url.push_str("apikey=");
        url.push_str(&self.api_key);
        url
    }

    /// GET with rate limiting and exponential-backoff retries; returns the parsed body.
    fn call(&self, endpoint: &str, params: &[(&str, String)]) -> Result<Value> {
        let url = self.url(params);
        let mut last = String::new();
        for attempt in 0..self.cfg.max_attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff * 2u32.pow(attempt - 1));
            }
            self.limiter.acquire();
            match self.transport.get(&url) {
                Ok(body) => {
                    return serde_json::from_str(&body).map_err(|e| Error::Transport {
                        endpoint: endpoint.to_string(),
                        msg: format!("malformed JSON: {e}"),
                    })
                }
                Err(e) => {
                    log::warn!("{endpoint}: attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(Error::Transport {
            endpoint: endpoint.to_string(),
            msg: format!("gave up after {} attempts: {last}", self.cfg.max_attempts),
        })
    }

    /// Unwraps the `{status, message, result}` envelope. "No transactions
    /// found" is an empty list rather than an error.
    fn list_result(endpoint: &str, body: Value) -> Result<Vec<Value>> {
        let status = body.get("status").and_then(Value::as_str).unwrap_or("");
        let message = body.get("message").and_then(Value::as_str).unwrap_or("");
        if status == "1" {
            return match body.get("result") {
                Some(Value::Array(items)) => Ok(items.clone()),
                _ => Err(Error::Api {
                    endpoint: endpoint.into(),
                    msg: "result is not a list".into(),
                }),
            };
        }
        if message.starts_with("No transactions found") || message.starts_with("No records found") {
            return Ok(Vec::new());
        }
        let detail = body.get("result").map(|r| r.to_string()).unwrap_or_default();
        Err(Error::Api {
            endpoint: endpoint.into(),
            msg: format!("status {status:?}: {message} {detail}").trim_end().to_string(),
        })
    }

    /// All pages of `txlist` or `txlistinternal`. Pages advance by start
    /// block; the last (possibly partial) block of a full page is refetched
    /// on the next request so no transaction is skipped or duplicated.
    pub fn transactions(&self, address: &str, action: &str) -> Result<Vec<RawTx>> {
        let endpoint = format!("account/{action}");
        let mut out: Vec<RawTx> = Vec::new();
        let mut start_block: u64 = 0;
        loop {
            let body = self.call(
                &endpoint,
                &[
                    ("module", "account".into()),
                    ("action", action.into()),
                    ("address", address.into()),
                    ("startblock", start_block.to_string()),
                    ("endblock", "99999999".into()),
                    ("page", "1".into()),
                    ("offset", self.cfg.page_size.to_string()),
                    ("sort", "asc".into()),
                ],
            )?;
            let page: Vec<RawTx> = Self::list_result(&endpoint, body)?
                .into_iter()
                .map(|v| {
                    serde_json::from_value(v).map_err(|e| Error::Api {
                        endpoint: endpoint.clone(),
                        msg: format!("unexpected transaction shape: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            if page.len() < self.cfg.page_size {
                out.extend(page);
                return Ok(out);
            }
            let last_block: u64 = num("blockNumber", &page[page.len() - 1].block_number)?;
            let kept: Vec<RawTx> = page
                .into_iter()
                .filter(|t| num::<u64>("blockNumber", &t.block_number).is_ok_and(|b| b < last_block))
                .collect();
            if kept.is_empty() {
                return Err(Error::Api {
                    endpoint,
                    msg: format!("block {last_block} alone exceeds page size {}", self.cfg.page_size),
                });
            }
            out.extend(kept);
            start_block = last_block;
        }
    }

    /// Deployed runtime bytecode via the JSON-RPC proxy.
    pub fn bytecode(&self, address: &str) -> Result<String> {
        let endpoint = "proxy/eth_getCode";
        let body = self.call(
            endpoint,
            &[
                ("module", "proxy".into()),
                ("action", "eth_getCode".into()),
                ("address", address.into()),
                ("tag", "latest".into()),
            ],
        )?;
        match body.get("result") {
            Some(Value::String(code)) if code.starts_with("0x") => Ok(code.clone()),
            other => Err(Error::Api {
                endpoint: endpoint.into(),
                msg: format!("unexpected result {other:?}"),
            }),
        }
    }

    /// Verified-source metadata (`SourceCode`, `ContractName`, compiler settings).
    pub fn source_code(&self, address: &str) -> Result<Value> {
        let endpoint = "contract/getsourcecode";
        let body = self.call(
            endpoint,
            &[
                ("module", "contract".into()),
                ("action", "getsourcecode".into()),
                ("address", address.into()),
            ],
        )?;
        Self::list_result(endpoint, body)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Api {
                endpoint: endpoint.into(),
                msg: "empty result".into(),
            })
    }

    pub fn fetch_fixture(&self, address: &str) -> Result<FixtureFile> {
        let address = normalize_address(address)?;
        Ok(FixtureFile {
            bytecode: self.bytecode(&address)?,
            txlist: self.transactions(&address, "txlist")?,
            txlistinternal: self.transactions(&address, "txlistinternal")?,
            address,
        })
    }

    pub fn fetch_contract(&self, address: &str, label: Label) -> Result<ContractRecord> {
        self.fetch_fixture(address)?.to_record(label)
    }
}
