//! Per-account transaction aggregates.

use std::collections::{BTreeSet, HashSet};

use serde::Serialize;

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::ingest::{LabelSet, Transaction, TxMap};
use crate::par::*;

pub const FEATURE_NAMES: [&str; 13] = [
    "IT", "OT", "UIT", "UOT", "AVIT", "AVOT", "VIT", "VOT", "ATIT", "ATOT", "AGP", "AGL", "DUR",
];

const WEI_PER_ETHER: f64 = 1e18;
const WEI_PER_GWEI: f64 = 1e9;
const SECONDS_PER_DAY: f64 = 86_400.0;

/// The thirteen aggregates of one account. Values are in ether, gas
/// prices in gwei, inter-arrival times in seconds and duration in days.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FeatureVector {
    /// incoming transaction count
    pub it: u64,
    /// outgoing transaction count
    pub ot: u64,
    /// distinct senders of incoming transactions
    pub uit: u64,
    /// distinct recipients of outgoing transactions
    pub uot: u64,
    pub avit: f64,
    pub avot: f64,
    pub vit: f64,
    pub vot: f64,
    pub atit: f64,
    pub atot: f64,
    pub agp: f64,
    pub agl: f64,
    pub dur: f64,
}

impl FeatureVector {
    /// Values in `FEATURE_NAMES` order.
    pub fn to_array(&self) -> [f64; 13] {
        [
            self.it as f64,
            self.ot as f64,
            self.uit as f64,
            self.uot as f64,
            self.avit,
            self.avot,
            self.vit,
            self.vot,
            self.atit,
            self.atot,
            self.agp,
            self.agl,
            self.dur,
        ]
    }
}

#[derive(Default)]
struct Direction<'a> {
    count: u64,
    counterparties: HashSet<&'a str>,
    value_wei: u128,
    first: Option<u64>,
    last: u64,
}

impl<'a> Direction<'a> {
    fn add(&mut self, counterparty: &'a str, tx: &Transaction) {
        self.count += 1;
        self.counterparties.insert(counterparty);
        self.value_wei = self.value_wei.saturating_add(tx.value_wei);
        self.first.get_or_insert(tx.timestamp);
        self.last = tx.timestamp;
    }

    fn total_ether(&self) -> f64 {
        self.value_wei as f64 / WEI_PER_ETHER
    }

    fn mean_ether(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.total_ether() / self.count as f64
        }
    }

    /// Mean of consecutive gaps, which telescopes to (last - first) / (n - 1).
    fn mean_gap(&self) -> f64 {
        match self.first {
            Some(first) if self.count >= 2 => (self.last - first) as f64 / (self.count - 1) as f64,
            _ => 0.0,
        }
    }
}

/// Aggregates the (sorted, successful) transactions of `address`.
///
/// Self-transfers count as both incoming and outgoing. Gas price and gas
/// limit are averaged over every transaction of the account; contract
/// creations (empty recipient) are never incoming.
pub fn extract_features(address: &str, txs: &[Transaction]) -> Result<FeatureVector> {
    if txs.is_empty() {
        return Err(Error::input(format!("{address} has no transactions")));
    }
    let mut incoming = Direction::default();
    let mut outgoing = Direction::default();
    // integer sums keep the result independent of transaction order
    let mut gas_price = 0u128;
    let mut gas_limit = 0u128;
    let mut prev = 0u64;
    for (i, tx) in txs.iter().enumerate() {
        if tx.timestamp < prev {
            return Err(Error::input(format!(
                "{address}: transactions not sorted by timestamp at position {i}"
            )));
        }
        prev = tx.timestamp;
        if tx.is_error {
            return Err(Error::input(format!(
                "{address}: failed transaction {} must be filtered before extraction",
                tx.tx_hash
            )));
        }
        let is_in = tx.recipient == address;
        let is_out = tx.sender == address;
        if !is_in && !is_out {
            return Err(Error::input(format!(
                "transaction {} does not involve {address}",
                tx.tx_hash
            )));
        }
        if is_in {
            incoming.add(&tx.sender, tx);
        }
        if is_out {
            outgoing.add(&tx.recipient, tx);
        }
        gas_price = gas_price.saturating_add(tx.gas_price_wei);
        gas_limit += tx.gas_limit as u128;
    }
    let n = txs.len() as f64;
    let span = txs[txs.len() - 1].timestamp - txs[0].timestamp;
    Ok(FeatureVector {
        it: incoming.count,
        ot: outgoing.count,
        uit: incoming.counterparties.len() as u64,
        uot: outgoing.counterparties.len() as u64,
        avit: incoming.mean_ether(),
        avot: outgoing.mean_ether(),
        vit: incoming.total_ether(),
        vot: outgoing.total_ether(),
        atit: incoming.mean_gap(),
        atot: outgoing.mean_gap(),
        agp: gas_price as f64 / n / WEI_PER_GWEI,
        agl: gas_limit as f64 / n,
        dur: span as f64 / SECONDS_PER_DAY,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// No successful transaction on record.
    NoTransactions,
    /// Listed in the caller's exclusion set (e.g. token-trade wallets).
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub address: String,
    pub label: Label,
    pub reason: SkipReason,
}

/// One row per usable labeled account, ordered by address, with columns in
/// `FEATURE_NAMES` order. Failed transactions are dropped before
/// aggregation. Accounts that cannot be featurized are reported, not
/// silently lost.
pub fn build_feature_table(
    txs: &TxMap,
    labels: &LabelSet,
    exclude: &BTreeSet<String>,
) -> Result<(Dataset, Vec<Skipped>)> {
    let entries: Vec<(&str, Label)> = labels.iter().collect();
    let extracted: Vec<std::result::Result<FeatureVector, SkipReason>> = entries
        .par_iter()
        .map(|&(address, _)| {
            if exclude.contains(address) {
                return Ok(Err(SkipReason::Excluded));
            }
            let usable: Vec<Transaction> = txs
                .get(address)
                .map(|list| list.iter().filter(|t| !t.is_error).cloned().collect())
                .unwrap_or_default();
            if usable.is_empty() {
                return Ok(Err(SkipReason::NoTransactions));
            }
            extract_features(address, &usable).map(Ok)
        })
        .collect::<Result<_>>()?;

    let mut addresses = Vec::new();
    let mut row_labels = Vec::new();
    let mut values = Vec::new();
    let mut skipped = Vec::new();
    for ((address, label), result) in entries.into_iter().zip(extracted) {
        match result {
            Ok(fv) => {
                addresses.push(address.to_string());
                row_labels.push(label);
                values.extend_from_slice(&fv.to_array());
            }
            Err(reason) => skipped.push(Skipped {
                address: address.to_string(),
                label,
                reason,
            }),
        }
    }
    let names = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    Ok((Dataset::new(names, addresses, row_labels, values)?, skipped))
}

pub fn write_skip_report(path: impl AsRef<std::path::Path>, skipped: &[Skipped]) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["address", "label", "reason"])?;
    for s in skipped {
        let reason = match s.reason {
            SkipReason::NoTransactions => "no_transactions",
            SkipReason::Excluded => "excluded",
        };
        wtr.write_record([s.address.as_str(), s.label.as_str(), reason])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
