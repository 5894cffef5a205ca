//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's algorithms.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

/// Exact non-negative rational, kept unreduced; compared by cross products.
#[derive(Debug, Clone, Copy)]
pub struct Ratio {
    pub num: i128,
    pub den: i128,
}

impl Ratio {
    pub fn cmp(&self, o: &Ratio) -> std::cmp::Ordering {
        (self.num * o.den).cmp(&(o.num * self.den))
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Ratio {
    fn eq(&self, o: &Ratio) -> bool {
        self.cmp(o).is_eq()
    }
}

/// Gini decrease of splitting `(pf, pn)` into `(lf, ln)` and the rest,
/// as an exact fraction: 2pf*pn/N^2 - 2(lf*ln/nl + rf*rn/nr)/N.
pub fn gini_decrease(parent: (i128, i128), left: (i128, i128)) -> Ratio {
    let (pf, pn) = parent;
    let (lf, ln) = left;
    let (rf, rn) = (pf - lf, pn - ln);
    let (n, nl, nr) = (pf + pn, lf + ln, rf + rn);
    // common denominator N^2 * nl * nr
    let num = 2 * pf * pn * nl * nr - 2 * n * (lf * ln * nr + rf * rn * nl);
    Ratio {
        num,
        den: n * n * nl * nr,
    }
}

#[derive(Debug, Clone)]
pub struct OracleSplit {
    pub feature: usize,
    /// Membership of each row (in input order) in the left child.
    pub left: Vec<bool>,
    pub decrease: Ratio,
}

/// Enumerates every feature and every cut between consecutive distinct
/// values; keeps the first strictly best in (feature, value) order.
pub fn brute_force_split(
    x: &[Vec<f64>],
    fraud: &[bool],
    features: &[usize],
    min_node_size: usize,
) -> Option<OracleSplit> {
    let n = x.len();
    if n < 2 || n <= min_node_size {
        return None;
    }
    let pf = fraud.iter().filter(|&&f| f).count() as i128;
    let parent = (pf, n as i128 - pf);
    if parent.0 == 0 || parent.1 == 0 {
        return None;
    }
    let mut feats = features.to_vec();
    feats.sort();
    feats.dedup();
    let mut best: Option<OracleSplit> = None;
    for &f in &feats {
        let mut distinct: Vec<f64> = x.iter().map(|r| r[f]).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for &cut in distinct.iter().take(distinct.len().saturating_sub(1)) {
            let left: Vec<bool> = x.iter().map(|r| r[f] <= cut).collect();
            let lf = (0..n).filter(|&i| left[i] && fraud[i]).count() as i128;
            let ln = (0..n).filter(|&i| left[i] && !fraud[i]).count() as i128;
            let dec = gini_decrease(parent, (lf, ln));
            if best.as_ref().is_none_or(|b| dec.cmp(&b.decrease).is_gt()) {
                best = Some(OracleSplit {
                    feature: f,
                    left,
                    decrease: dec,
                });
            }
        }
    }
    best
}

/// Logistic loss for y in {0, 1}: `ln(1 + e^-m)` for y = 1 and
/// `ln(1 + e^m)` for y = 0, each evaluated without cancellation.
pub fn logistic_loss(y: f64, m: f64) -> f64 {
    let softplus = |t: f64| t.max(0.0) + (-t.abs()).exp().ln_1p();
    if y == 1.0 {
        softplus(-m)
    } else {
        softplus(m)
    }
}

/// Derivative of [`logistic_loss`] evaluated in a cancellation-free form.
pub fn logistic_grad(y: f64, m: f64) -> f64 {
    let p = 1.0 / (1.0 + (-m).exp());
    let q = 1.0 / (1.0 + m.exp());
    if y == 1.0 {
        -q
    } else {
        p
    }
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(a.abs()).max(f64::MIN_POSITIVE)
}

pub fn rbf(x: &[f64], z: &[f64], gamma: f64) -> f64 {
    (-gamma * x.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).exp()
}

/// Soft-margin SVM dual solved by accelerated projected gradient on
/// `min 1/2 a'Qa - 1'a` over `{0 <= a <= c, y'a = 0}`. The projection
/// bisects on the multiplier of the equality constraint.
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
}

fn project(z: &[f64], y: &[f64], c: &[f64]) -> Vec<f64> {
    let at = |nu: f64| -> Vec<f64> {
        z.iter()
            .zip(y)
            .zip(c)
            .map(|((&zi, &yi), &ci)| (zi - nu * yi).clamp(0.0, ci))
            .collect()
    };
    let residual = |a: &[f64]| a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    // residual is non-increasing in nu
    let (mut lo, mut hi) = (-1.0, 1.0);
    while residual(&at(lo)) < 0.0 {
        lo *= 2.0;
    }
    while residual(&at(hi)) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

pub fn solve_dual(
    x: &[Vec<f64>],
    y: &[f64],
    c: &[f64],
    gamma: f64,
    iterations: usize,
) -> DualSolution {
    let n = x.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| y[i] * y[j] * rbf(&x[i], &x[j], gamma))
                .collect()
        })
        .collect();
    // Gershgorin bound on the largest eigenvalue
    let lipschitz = q
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| q[i].iter().zip(a).map(|(qij, aj)| qij * aj).sum::<f64>() - 1.0)
            .collect()
    };
    let mut a = vec![0.0; n];
    let mut v = a.clone();
    let mut t = 1.0f64;
    for _ in 0..iterations {
        let g = grad(&v);
        let z: Vec<f64> = v.iter().zip(&g).map(|(vi, gi)| vi - step * gi).collect();
        let next = project(&z, y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        v = next
            .iter()
            .zip(&a)
            .map(|(ni, ai)| ni + (t - 1.0) / t_next * (ni - ai))
            .collect();
        a = next;
        t = t_next;
    }
    // bias from the free multipliers: y_i f(x_i) = 1
    let g = grad(&a);
    let scale = c.iter().cloned().fold(0.0, f64::max);
    let free: Vec<usize> = (0..n)
        .filter(|&i| a[i] > 1e-7 * scale && a[i] < c[i] - 1e-7 * scale)
        .collect();
    let bias = if free.is_empty() {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in 0..n {
            // -y_i g_i is the bias that puts row i exactly on its margin
            let b = -y[i] * g[i];
            let at_lower = a[i] <= 1e-7 * scale;
            if (at_lower && y[i] > 0.0) || (!at_lower && y[i] < 0.0) {
                lo = lo.max(b);
            } else {
                hi = hi.min(b);
            }
        }
        0.5 * (lo + hi)
    } else {
        free.iter().map(|&i| -y[i] * g[i]).sum::<f64>() / free.len() as f64
    };
    DualSolution { alpha: a, bias }
}

pub fn dual_decision(x: &[Vec<f64>], y: &[f64], s: &DualSolution, gamma: f64, z: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(&s.alpha)
        .map(|((xi, yi), ai)| ai * yi * rbf(xi, z, gamma))
        .sum::<f64>()
        + s.bias
}

/// Minimal transaction record for the feature oracle.
#[derive(Debug, Clone)]
pub struct Tx {
    pub timestamp: u64,
    pub from: String,
    pub to: String,
    pub value_wei: u128,
    pub gas_price_wei: u128,
    pub gas_limit: u64,
}

/// Thirteen aggregates in the fixed order
/// IT OT UIT UOT AVIT AVOT VIT VOT ATIT ATOT AGP AGL DUR, computed by
/// sorting and looping over the account's transactions directly.
pub fn account_features(address: &str, txs: &[Tx]) -> [f64; 13] {
    let mut sorted: Vec<&Tx> = txs.iter().collect();
    sorted.sort_by_key(|t| t.timestamp);
    let incoming: Vec<&&Tx> = sorted.iter().filter(|t| t.to == address).collect();
    let outgoing: Vec<&&Tx> = sorted.iter().filter(|t| t.from == address).collect();
    let ether = |ts: &[&&Tx]| ts.iter().map(|t| t.value_wei).sum::<u128>() as f64 / 1e18;
    let mean = |total: f64, k: usize| if k == 0 { 0.0 } else { total / k as f64 };
    let gaps = |ts: &[&&Tx]| {
        if ts.len() < 2 {
            0.0
        } else {
            let diffs: Vec<u64> = ts
                .windows(2)
                .map(|w| w[1].timestamp - w[0].timestamp)
                .collect();
            diffs.iter().sum::<u64>() as f64 / diffs.len() as f64
        }
    };
    let senders: HashSet<&str> = incoming.iter().map(|t| t.from.as_str()).collect();
    let recipients: HashSet<&str> = outgoing.iter().map(|t| t.to.as_str()).collect();
    let n = sorted.len() as f64;
    let vit = ether(&incoming);
    let vot = ether(&outgoing);
    [
        incoming.len() as f64,
        outgoing.len() as f64,
        senders.len() as f64,
        recipients.len() as f64,
        mean(vit, incoming.len()),
        mean(vot, outgoing.len()),
        vit,
        vot,
        gaps(&incoming),
        gaps(&outgoing),
        sorted.iter().map(|t| t.gas_price_wei).sum::<u128>() as f64 / n / 1e9,
        sorted.iter().map(|t| t.gas_limit as u128).sum::<u128>() as f64 / n,
        (sorted.last().unwrap().timestamp - sorted[0].timestamp) as f64 / 86_400.0,
    ]
}

/// Component posterior table of a two-class mixture: for each component
/// key, the fraction of its expected members that are fraud.
pub fn mixture_posterior(
    n_fraud: f64,
    fraud_mix: &[(f64, f64)],
    n_nonfraud: f64,
    nonfraud_mix: &[(f64, f64)],
) -> BTreeMap<u64, f64> {
    let mut mass: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    let tf: f64 = fraud_mix.iter().map(|c| c.0).sum();
    let tn: f64 = nonfraud_mix.iter().map(|c| c.0).sum();
    for &(w, key) in fraud_mix {
        mass.entry(key.to_bits()).or_default().0 += n_fraud * w / tf;
    }
    for &(w, key) in nonfraud_mix {
        mass.entry(key.to_bits()).or_default().1 += n_nonfraud * w / tn;
    }
    mass.into_iter()
        .map(|(k, (f, n))| (k, f / (f + n)))
        .collect()
}
