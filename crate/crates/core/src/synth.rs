//! Seeded generator of labeled transaction corpora with a planted
//! behavioral difference between fraud and non-fraud accounts.
//!
//! Every account is drawn from a mixture component. A component is a
//! `blend` between the `normal` profile (0) and the `fraud` profile (1);
//! profile parameters are interpolated linearly, pool sizes in log space.
//! Both classes may share components, which is what limits attainable
//! recall. The distributions are generator conventions only.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::{Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::ingest::{LabelSet, Transaction, TxMap};
use crate::par::*;
use crate::rng::{self, streams};

/// Start of the generated timeline (unix seconds) and its length.
const EPOCH: u64 = 1_500_000_000;
const SPAN_SECONDS: u64 = 3 * 365 * 86_400;
const WEI_PER_ETHER: f64 = 1e18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    /// Incoming transfer count: `round(lognormal)`, at least 1.
    pub incoming_log_mean: f64,
    pub incoming_log_sigma: f64,
    /// Distinct addresses that send to the account.
    pub sender_pool: usize,
    /// Distinct addresses the account sends to.
    pub recipient_pool: usize,
    /// Incoming value in ether.
    pub value_log_mean: f64,
    pub value_log_sigma: f64,
    /// Activity window in days. Incoming arrivals are exponential with
    /// mean gap `duration / count`.
    pub duration_log_mean: f64,
    pub duration_log_sigma: f64,
    /// Chance that an incoming transfer is followed by an outgoing one.
    pub sweep_probability: f64,
}

impl Profile {
    pub fn normal() -> Self {
        Self {
            incoming_log_mean: 6f64.ln(),
            incoming_log_sigma: 0.9,
            sender_pool: 4,
            recipient_pool: 4,
            value_log_mean: 0.5f64.ln(),
            value_log_sigma: 1.2,
            duration_log_mean: 300f64.ln(),
            duration_log_sigma: 0.8,
            sweep_probability: 0.7,
        }
    }

    pub fn fraud() -> Self {
        Self {
            incoming_log_mean: 12f64.ln(),
            incoming_log_sigma: 0.8,
            sender_pool: 60,
            recipient_pool: 1,
            value_log_mean: 1.5f64.ln(),
            value_log_sigma: 1.2,
            duration_log_mean: 20f64.ln(),
            duration_log_sigma: 0.8,
            sweep_probability: 0.15,
        }
    }

    fn blend(a: &Profile, b: &Profile, t: f64) -> Profile {
        let lin = |x: f64, y: f64| x + (y - x) * t;
        let pool = |x: usize, y: usize| {
            lin((x as f64).ln(), (y as f64).ln()).exp().round().max(1.0) as usize
        };
        Profile {
            incoming_log_mean: lin(a.incoming_log_mean, b.incoming_log_mean),
            incoming_log_sigma: lin(a.incoming_log_sigma, b.incoming_log_sigma),
            sender_pool: pool(a.sender_pool, b.sender_pool),
            recipient_pool: pool(a.recipient_pool, b.recipient_pool),
            value_log_mean: lin(a.value_log_mean, b.value_log_mean),
            value_log_sigma: lin(a.value_log_sigma, b.value_log_sigma),
            duration_log_mean: lin(a.duration_log_mean, b.duration_log_mean),
            duration_log_sigma: lin(a.duration_log_sigma, b.duration_log_sigma),
            sweep_probability: lin(a.sweep_probability, b.sweep_probability),
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = [
            self.incoming_log_mean,
            self.value_log_mean,
            self.duration_log_mean,
        ];
        let sigmas = [
            self.incoming_log_sigma,
            self.value_log_sigma,
            self.duration_log_sigma,
        ];
        if finite.iter().any(|v| !v.is_finite())
            || sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::input(
                "profile log means must be finite and sigmas positive",
            ));
        }
        if self.sender_pool == 0 || self.recipient_pool == 0 {
            return Err(Error::input("counterparty pools must be non-empty"));
        }
        if !(0.0..=1.0).contains(&self.sweep_probability) {
            return Err(Error::input("sweep_probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    /// 0 is the normal profile, 1 the fraud profile.
    pub blend: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_nonfraud: usize,
    pub n_fraud: usize,
    pub seed: u64,
    pub normal: Profile,
    pub fraud: Profile,
    pub fraud_components: Vec<Component>,
    pub nonfraud_components: Vec<Component>,
    /// Chance that a non-first transaction is marked failed.
    pub error_rate: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_nonfraud: 5000,
            n_fraud: 250,
            seed: 42,
            normal: Profile::normal(),
            fraud: Profile::fraud(),
            fraud_components: vec![
                Component {
                    weight: 0.45,
                    blend: 1.0,
                },
                Component {
                    weight: 0.35,
                    blend: 0.35,
                },
                Component {
                    weight: 0.20,
                    blend: 0.0,
                },
            ],
            nonfraud_components: vec![
                Component {
                    weight: 0.997,
                    blend: 0.0,
                },
                Component {
                    weight: 0.003,
                    blend: 0.35,
                },
            ],
            error_rate: 0.01,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_nonfraud == 0 || self.n_fraud == 0 {
            return Err(Error::input("both class counts must be at least 1"));
        }
        if self.n_nonfraud + self.n_fraud > u32::MAX as usize {
            return Err(Error::input("too many accounts"));
        }
        self.normal.validate()?;
        self.fraud.validate()?;
        for mix in [&self.fraud_components, &self.nonfraud_components] {
            if mix.is_empty() {
                return Err(Error::input("each class needs at least one component"));
            }
            for c in mix {
                if !(c.weight > 0.0 && c.weight.is_finite()) || !(0.0..=1.0).contains(&c.blend) {
                    return Err(Error::input(
                        "component weights must be positive and blends in [0, 1]",
                    ));
                }
            }
        }
        if !(0.0..1.0).contains(&self.error_rate) {
            return Err(Error::input("error_rate must lie in [0, 1)"));
        }
        Ok(())
    }

    fn mixture(&self, label: Label) -> &[Component] {
        match label {
            Label::Fraud => &self.fraud_components,
            Label::NonFraud => &self.nonfraud_components,
        }
    }

    /// Posterior fraud probability of an account from component `blend`,
    /// given the class sizes and mixtures.
    pub fn posterior_fraud(&self, blend: f64) -> f64 {
        let mass = |mix: &[Component]| -> f64 {
            let total: f64 = mix.iter().map(|c| c.weight).sum();
            mix.iter()
                .filter(|c| c.blend == blend)
                .map(|c| c.weight)
                .sum::<f64>()
                / total
        };
        let f = self.n_fraud as f64 * mass(&self.fraud_components);
        let n = self.n_nonfraud as f64 * mass(&self.nonfraud_components);
        if f + n == 0.0 {
            0.0
        } else {
            f / (f + n)
        }
    }

    /// Label assigned by the component-aware oracle: fraud iff the
    /// posterior of the generating component is at least one half.
    pub fn oracle_label(&self, blend: f64) -> Label {
        if self.posterior_fraud(blend) >= 0.5 {
            Label::Fraud
        } else {
            Label::NonFraud
        }
    }
}

/// One generated account.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthAccount {
    pub address: String,
    pub label: Label,
    /// Blend of the generating component.
    pub blend: f64,
    pub transactions: Vec<Transaction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub accounts: Vec<SynthAccount>,
}

impl SynthCorpus {
    pub fn labels(&self) -> LabelSet {
        let mut ls = LabelSet::new();
        for a in &self.accounts {
            ls.insert(&a.address, a.label).expect("unique addresses");
        }
        ls
    }

    /// Transactions keyed by labeled account. Counterparties are omitted.
    pub fn tx_map(&self) -> TxMap {
        self.accounts
            .iter()
            .map(|a| (a.address.clone(), a.transactions.clone()))
            .collect()
    }

    /// Every transaction once, in account order then time order.
    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.accounts.iter().flat_map(|a| a.transactions.iter())
    }
}

pub fn generate(p: &SynthParams) -> Result<(TxMap, LabelSet)> {
    let c = generate_corpus(p)?;
    Ok((c.tx_map(), c.labels()))
}

/// Accounts `0..n_nonfraud` are non-fraud, the rest fraud. Account `i`
/// draws from its own rng stream, so the output does not depend on
/// thread count.
pub fn generate_corpus(p: &SynthParams) -> Result<SynthCorpus> {
    p.validate()?;
    let n = p.n_nonfraud + p.n_fraud;
    let accounts = (0..n)
        .into_par_iter()
        .map(|i| {
            let label = if i < p.n_nonfraud {
                Label::NonFraud
            } else {
                Label::Fraud
            };
            generate_account(p, i, label)
        })
        .collect();
    Ok(SynthCorpus { accounts })
}

fn address(prefix: u32, sub: u64) -> String {
    format!("0x{prefix:08x}{sub:032x}")
}

fn generate_account(p: &SynthParams, index: usize, label: Label) -> SynthAccount {
    let mut rng = rng::stream(p.seed, streams::SYNTH + index as u64);
    let mix = p.mixture(label);
    let chooser = WeightedIndex::new(mix.iter().map(|c| c.weight)).expect("validated weights");
    let blend = mix[chooser.sample(&mut rng)].blend;
    let prof = Profile::blend(&p.normal, &p.fraud, blend);

    let prefix = (index as u32).wrapping_mul(0x9E37_79B1);
    let me = address(prefix, 0);
    let lognormal = |m: f64, s: f64| LogNormal::new(m, s).expect("validated sigma");

    let n_in = lognormal(prof.incoming_log_mean, prof.incoming_log_sigma)
        .sample(&mut rng)
        .round()
        .max(1.0) as usize;
    let days = lognormal(prof.duration_log_mean, prof.duration_log_sigma).sample(&mut rng);
    let mean_gap = (days * 86_400.0 / n_in as f64).max(1.0);
    let gaps = Exp::new(1.0 / mean_gap).expect("positive rate");
    let values = lognormal(prof.value_log_mean, prof.value_log_sigma);
    let gas_price = lognormal(20f64.ln(), 0.3);

    let mut t = EPOCH + rng.random_range(0..SPAN_SECONDS);
    let mut txs = Vec::new();
    let mut next_hash = 0u64;
    let mut push = |rng: &mut rand_chacha::ChaCha8Rng,
                    ts: u64,
                    sender: String,
                    recipient: String,
                    ether: f64| {
        let gas_limit = if rng.random_bool(0.8) {
            21_000
        } else {
            rng.random_range(21_000..200_000)
        };
        let tx = Transaction {
            tx_hash: format!("0x{prefix:08x}{next_hash:056x}"),
            timestamp: ts,
            sender,
            recipient,
            value_wei: (ether * WEI_PER_ETHER).round() as u128,
            gas_price_wei: (gas_price.sample(rng) * 1e9).round() as u128,
            gas_limit,
            is_error: false,
        };
        next_hash += 1;
        txs.push(tx);
    };

    for k in 0..n_in {
        if k > 0 {
            t += gaps.sample(&mut rng).round() as u64;
        }
        let from = address(prefix, 1 + rng.random_range(0..prof.sender_pool) as u64);
        let v = values.sample(&mut rng);
        push(&mut rng, t, from, me.clone(), v);
        if rng.random_bool(prof.sweep_probability) {
            let delay = (gaps.sample(&mut rng) / 2.0).round() as u64 + 1;
            let to = address(
                prefix,
                1 + (prof.sender_pool + rng.random_range(0..prof.recipient_pool)) as u64,
            );
            let out = v * rng.random_range(0.5..1.0);
            push(&mut rng, t + delay, me.clone(), to, out);
        }
    }
    txs.sort_by_key(|tx| tx.timestamp);
    for tx in txs.iter_mut().skip(1) {
        tx.is_error = rng.random_bool(p.error_rate);
    }
    SynthAccount {
        address: me,
        label,
        blend,
        transactions: txs,
    }
}
