//! Transaction acquisition: Etherscan-compatible HTTP client, the local
//! transaction CSV format and fraud label lists.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::par::*;

pub const TX_HEADER: [&str; 8] = [
    "tx_hash",
    "timestamp",
    "from",
    "to",
    "value_wei",
    "gas_price_wei",
    "gas_limit",
    "is_error",
];

pub const LABEL_HEADER: [&str; 2] = ["address", "label"];

pub const API_KEY_ENV: &str = "ETHERSCAN_API_KEY";

/// One normal (non-token) value transfer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_hash: String,
    /// Unix seconds.
    pub timestamp: u64,
    pub sender: String,
    /// Empty for contract creation.
    pub recipient: String,
    pub value_wei: u128,
    pub gas_price_wei: u128,
    pub gas_limit: u64,
    pub is_error: bool,
}

impl Transaction {
    pub fn involves(&self, address: &str) -> bool {
        self.sender == address || self.recipient == address
    }

    /// Checks field-level invariants; the message names the offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.timestamp == 0 {
            return Err("timestamp must be positive".into());
        }
        if !is_address(&self.sender) {
            return Err(format!("malformed sender address {:?}", self.sender));
        }
        if !self.recipient.is_empty() && !is_address(&self.recipient) {
            return Err(format!("malformed recipient address {:?}", self.recipient));
        }
        Ok(())
    }
}

/// `true` for a lowercase `0x`-prefixed 40-hex-digit string.
pub fn is_address(s: &str) -> bool {
    s.len() == 42
        && s.starts_with("0x")
        && s[2..]
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Lowercases and validates an address.
pub fn normalize_address(s: &str) -> Result<String> {
    let lower = s.trim().to_ascii_lowercase();
    if is_address(&lower) {
        Ok(lower)
    } else {
        Err(Error::input(format!("malformed address {s:?}")))
    }
}

/// Transactions per account, ascending by timestamp.
pub type TxMap = BTreeMap<String, Vec<Transaction>>;

/// Groups transactions under every account that sent or received them.
/// Self-transfers appear once. Sorting is stable, so equal timestamps keep
/// their input order.
pub fn group_by_account<'a, I>(txs: I) -> TxMap
where
    I: IntoIterator<Item = &'a Transaction>,
{
    let mut map = TxMap::new();
    for tx in txs {
        map.entry(tx.sender.clone()).or_default().push(tx.clone());
        if !tx.recipient.is_empty() && tx.recipient != tx.sender {
            map.entry(tx.recipient.clone())
                .or_default()
                .push(tx.clone());
        }
    }
    for list in map.values_mut() {
        list.sort_by_key(|t| t.timestamp);
    }
    map
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "0" | "false" => Some(false),
        "1" | "true" => Some(true),
        _ => None,
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<bool> {
    let headers = rdr.headers()?;
    if headers.is_empty() {
        return Ok(false);
    }
    if headers.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: format!("expected header {:?}", expected.join(",")),
        });
    }
    Ok(true)
}

/// Reads the transaction CSV as a flat list in file order.
pub fn read_transactions(path: impl AsRef<Path>) -> Result<Vec<Transaction>> {
    let path = path.as_ref();
    let file = open(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    if !check_header(path, &mut rdr, &TX_HEADER)? {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        if record.len() != TX_HEADER.len() {
            return Err(err(format!(
                "expected {} fields, found {}",
                TX_HEADER.len(),
                record.len()
            )));
        }
        let field = |i: usize| record[i].trim();
        let tx = Transaction {
            tx_hash: field(0).to_ascii_lowercase(),
            timestamp: field(1)
                .parse()
                .map_err(|e| err(format!("timestamp {:?}: {e}", field(1))))?,
            sender: field(2).to_ascii_lowercase(),
            recipient: field(3).to_ascii_lowercase(),
            value_wei: field(4)
                .parse()
                .map_err(|e| err(format!("value_wei {:?}: {e}", field(4))))?,
            gas_price_wei: field(5)
                .parse()
                .map_err(|e| err(format!("gas_price_wei {:?}: {e}", field(5))))?,
            gas_limit: field(6)
                .parse()
                .map_err(|e| err(format!("gas_limit {:?}: {e}", field(6))))?,
            is_error: parse_bool(field(7))
                .ok_or_else(|| err(format!("is_error {:?}: expected 0/1", field(7))))?,
        };
        tx.validate().map_err(err)?;
        out.push(tx);
    }
    Ok(out)
}

/// Loads the transaction CSV grouped per participating account.
pub fn load_transactions_file(path: impl AsRef<Path>) -> Result<TxMap> {
    let txs = read_transactions(path)?;
    Ok(group_by_account(&txs))
}

/// Like [`load_transactions_file`] but keeps only the requested accounts.
pub fn load_transactions_for(path: impl AsRef<Path>, accounts: &HashSet<String>) -> Result<TxMap> {
    let txs = read_transactions(path)?;
    let mut map = group_by_account(
        txs.iter()
            .filter(|t| accounts.contains(&t.sender) || accounts.contains(&t.recipient)),
    );
    map.retain(|k, _| accounts.contains(k));
    Ok(map)
}

pub fn write_transactions<'a, W, I>(writer: W, txs: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Transaction>,
{
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(TX_HEADER)?;
    for tx in txs {
        wtr.write_record([
            tx.tx_hash.as_str(),
            &tx.timestamp.to_string(),
            &tx.sender,
            &tx.recipient,
            &tx.value_wei.to_string(),
            &tx.gas_price_wei.to_string(),
            &tx.gas_limit.to_string(),
            if tx.is_error { "1" } else { "0" },
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<transactions>", e))?;
    Ok(())
}

pub fn write_transactions_file<'a, I>(path: impl AsRef<Path>, txs: I) -> Result<()>
where
    I: IntoIterator<Item = &'a Transaction>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_transactions(std::io::BufWriter::new(file), txs)
}

/// Address → label. Ordered so every downstream table is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    labels: BTreeMap<String, Label>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a label. Re-inserting the same label is a no-op; a
    /// conflicting label is an error.
    pub fn insert(&mut self, address: &str, label: Label) -> Result<()> {
        let address = normalize_address(address)?;
        match self.labels.get(&address) {
            Some(&existing) if existing != label => Err(Error::input(format!(
                "conflicting labels for {address}: {existing} and {label}"
            ))),
            _ => {
                self.labels.insert(address, label);
                Ok(())
            }
        }
    }

    pub fn get(&self, address: &str) -> Option<Label> {
        self.labels.get(address).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Label)> {
        self.labels.iter().map(|(a, l)| (a.as_str(), *l))
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.values().filter(|&&l| l == label).count()
    }

    /// Training needs at least one account of each class.
    pub fn require_both_classes(&self) -> Result<()> {
        if self.count(Label::Fraud) == 0 || self.count(Label::NonFraud) == 0 {
            return Err(Error::input(
                "label set must contain both fraud and nonfraud addresses",
            ));
        }
        Ok(())
    }
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    let path = path.as_ref();
    let file = open(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let mut set = LabelSet::new();
    if !check_header(path, &mut rdr, &LABEL_HEADER)? {
        return Ok(set);
    }
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        if record.len() != 2 {
            return Err(err(format!("expected 2 fields, found {}", record.len())));
        }
        let label: Label = record[1]
            .trim()
            .parse()
            .map_err(|e: Error| err(e.to_string()))?;
        set.insert(&record[0], label)
            .map_err(|e| err(e.to_string()))?;
    }
    Ok(set)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelSet) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(std::io::BufWriter::new(file));
    wtr.write_record(LABEL_HEADER)?;
    for (address, label) in labels.iter() {
        wtr.write_record([address, label.as_str()])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads an address list: one address per line, or the first column of a
/// CSV whose header starts with `address`. Blank lines are skipped.
pub fn load_address_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let first = line.split(',').next().unwrap_or("").trim();
        if first.is_empty() || (i == 0 && first.eq_ignore_ascii_case("address")) {
            continue;
        }
        out.push(normalize_address(first).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i as u64 + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub base_url: String,
    pub api_key: String,
    pub max_requests_per_second: f64,
    pub page_size: usize,
    pub max_retries: u32,
    pub retry_backoff: Duration,
    pub timeout: Duration,
}

impl ClientConfig {
    /// Etherscan's free tier allows 5 requests per second and 10,000
    /// records per query.
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            max_requests_per_second: 5.0,
            page_size: 10_000,
            max_retries: 3,
            retry_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(30),
        }
    }

    /// Reads the API key from `ETHERSCAN_API_KEY`.
    pub fn from_env(base_url: impl Into<String>) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::input(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(base_url, key))
    }

    fn validate(&self) -> Result<()> {
        if !(self.max_requests_per_second.is_finite() && self.max_requests_per_second > 0.0) {
            return Err(Error::input("max_requests_per_second must be positive"));
        }
        if self.page_size == 0 {
            return Err(Error::input("page_size must be positive"));
        }
        Ok(())
    }
}

/// Shared request pacer. Each `acquire` reserves the next free slot, so
/// consecutive requests are at least `1 / rate` seconds apart regardless of
/// how many threads call it.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(max_per_second: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(1.0 / max_per_second),
            next_slot: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut slot = self.next_slot.lock().unwrap_or_else(|p| p.into_inner());
            let now = Instant::now();
            let start = match *slot {
                Some(t) if t > now => t,
                _ => now,
            };
            *slot = Some(start + self.interval);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Deserialize)]
struct ApiResponse {
    status: String,
    message: String,
    result: serde_json::Value,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawTx {
    block_number: String,
    time_stamp: String,
    hash: String,
    from: String,
    to: String,
    value: String,
    gas_price: String,
    gas: String,
    #[serde(default)]
    is_error: String,
}

impl RawTx {
    fn convert(self) -> Result<(u64, Transaction)> {
        let bad = |what: &str, v: &str| Error::Remote(format!("unparseable {what} {v:?}"));
        let block = self
            .block_number
            .parse()
            .map_err(|_| bad("blockNumber", &self.block_number))?;
        let tx = Transaction {
            timestamp: self
                .time_stamp
                .parse()
                .map_err(|_| bad("timeStamp", &self.time_stamp))?,
            value_wei: self.value.parse().map_err(|_| bad("value", &self.value))?,
            gas_price_wei: self
                .gas_price
                .parse()
                .map_err(|_| bad("gasPrice", &self.gas_price))?,
            gas_limit: self.gas.parse().map_err(|_| bad("gas", &self.gas))?,
            is_error: self.is_error == "1",
            tx_hash: self.hash.to_ascii_lowercase(),
            sender: self.from.to_ascii_lowercase(),
            recipient: self.to.to_ascii_lowercase(),
        };
        tx.validate().map_err(Error::Remote)?;
        Ok((block, tx))
    }
}

#[derive(Debug)]
enum Attempt {
    Retry(Error),
    Fatal(Error),
}

/// Blocking client for the `account/txlist` endpoint.
pub struct EtherscanClient {
    cfg: ClientConfig,
    agent: ureq::Agent,
    limiter: Arc<RateLimiter>,
}

impl EtherscanClient {
    pub fn new(cfg: ClientConfig) -> Result<Self> {
        cfg.validate()?;
        let limiter = Arc::new(RateLimiter::new(cfg.max_requests_per_second));
        Ok(Self::with_limiter(cfg, limiter))
    }

    /// Builds a client that shares `limiter` with other clients.
    pub fn with_limiter(cfg: ClientConfig, limiter: Arc<RateLimiter>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            cfg,
            agent,
            limiter,
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    /// All normal transactions of `address`, ascending by timestamp.
    ///
    /// Pages are requested by block range: the next page starts at the last
    /// block seen, and the overlap is removed by transaction hash (first
    /// occurrence wins). A page made entirely of one block advances the
    /// `page` parameter instead.
    pub fn fetch_transactions(&self, address: &str) -> Result<Vec<Transaction>> {
        let address = normalize_address(address)?;
        let mut seen = HashSet::new();
        let mut out: Vec<Transaction> = Vec::new();
        let mut start_block = 0u64;
        let mut page = 1u32;
        loop {
            let batch = self.request_page(&address, start_block, page)?;
            let full = batch.len() >= self.cfg.page_size;
            let first_block = batch.first().map(|(b, _)| *b);
            let last_block = batch.last().map(|(b, _)| *b);
            for (_, tx) in batch {
                if seen.insert(tx.tx_hash.clone()) {
                    out.push(tx);
                }
            }
            if !full {
                break;
            }
            match (first_block, last_block) {
                (Some(first), Some(last)) if first == last && last == start_block => page += 1,
                (_, Some(last)) if last > start_block => {
                    start_block = last;
                    page = 1;
                }
                _ => page += 1,
            }
        }
        out.sort_by_key(|t| t.timestamp);
        Ok(out)
    }

    /// Fetches several accounts concurrently; results are in input order.
    pub fn fetch_many(&self, addresses: &[String]) -> Vec<Result<Vec<Transaction>>> {
        addresses
            .par_iter()
            .map(|a| self.fetch_transactions(a))
            .collect()
    }

    fn request_page(
        &self,
        address: &str,
        start_block: u64,
        page: u32,
    ) -> Result<Vec<(u64, Transaction)>> {
        let mut attempt = 0;
        loop {
            match self.try_request(address, start_block, page) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if attempt >= self.cfg.max_retries {
                        return Err(e);
                    }
                    attempt += 1;
                    log::warn!("{address}: attempt {attempt} failed ({e}); retrying");
                    std::thread::sleep(self.cfg.retry_backoff * attempt);
                }
            }
        }
    }

    fn try_request(
        &self,
        address: &str,
        start_block: u64,
        page: u32,
    ) -> std::result::Result<Vec<(u64, Transaction)>, Attempt> {
        self.limiter.acquire();
        let response = self
            .agent
            .get(&self.cfg.base_url)
            .query("module", "account")
            .query("action", "txlist")
            .query("address", address)
            .query("startblock", start_block.to_string())
            .query("endblock", "99999999")
            .query("page", page.to_string())
            .query("offset", self.cfg.page_size.to_string())
            .query("sort", "asc")
            .query("apikey", &self.cfg.api_key)
            .call();
        let mut response = match response {
            Ok(r) => r,
            Err(e) => return Err(Attempt::Retry(Error::Transport(e.to_string()))),
        };
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(Error::Transport(format!("HTTP {status}"))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(Error::Transport(format!("HTTP {status}"))));
        }
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(Error::Transport(e.to_string())))?;
        parse_txlist(&body)
    }
}

fn parse_txlist(body: &str) -> std::result::Result<Vec<(u64, Transaction)>, Attempt> {
    let parsed: ApiResponse = serde_json::from_str(body)
        .map_err(|e| Attempt::Fatal(Error::Remote(format!("invalid response: {e}"))))?;
    if parsed.status != "1" {
        if parsed.message.starts_with("No transactions found") {
            return Ok(Vec::new());
        }
        let detail = match &parsed.result {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let err = Error::Remote(format!("{}: {}", parsed.message, detail));
        return Err(if detail.to_ascii_lowercase().contains("rate limit") {
            Attempt::Retry(err)
        } else {
            Attempt::Fatal(err)
        });
    }
    let raw: Vec<RawTx> = serde_json::from_value(parsed.result)
        .map_err(|e| Attempt::Fatal(Error::Remote(format!("invalid result list: {e}"))))?;
    raw.into_iter()
        .map(|r| r.convert().map_err(Attempt::Fatal))
        .collect()
}
