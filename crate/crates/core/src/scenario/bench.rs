//! Per-report cost of the hash-authenticated DL path against a baseline
//! that carries the sender's public key and a signature.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::codec::Writer;
use crate::crypto::{keygen, sign, verify, PublicKey, Signature};
use crate::disco::{DiscoConfig, DiscoNode};
use crate::identity::{NodeCredentials, NodeId, SecretValue};
use crate::policy::PassivePolicy;
use crate::transactions::{make_dl, DlFlag, NodeRole};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub path: String,
    pub samples: u64,
    pub median_ns: u64,
    pub p95_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub iterations: u64,
    pub warmup: u64,
    pub rows: Vec<BenchRow>,
    /// Signature-path median over hash-path median.
    pub ratio: Option<f64>,
}

impl BenchReport {
    pub fn table(&self) -> String {
        if self.rows.is_empty() {
            return "no samples".into();
        }
        let mut out = format!(
            "{:<10} {:>8} {:>12} {:>12}\n",
            "path", "n", "median_ns", "p95_ns"
        );
        for r in &self.rows {
            out += &format!(
                "{:<10} {:>8} {:>12} {:>12}\n",
                r.path, r.samples, r.median_ns, r.p95_ns
            );
        }
        if let Some(ratio) = self.ratio {
            out += &format!("ratio signature/hash: {ratio:.2}\n");
        }
        out
    }
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[u64], p: f64) -> u64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn row(path: &str, mut samples: Vec<u64>) -> BenchRow {
    samples.sort_unstable();
    BenchRow {
        path: path.into(),
        samples: samples.len() as u64,
        median_ns: percentile(&samples, 0.5),
        p95_ns: percentile(&samples, 0.95),
    }
}

/// Signed baseline report: `pk || id || data || flag || signature`.
fn signed_report(
    key: &crate::crypto::KeyPair,
    id: u128,
    data: u64,
    flag: DlFlag,
) -> (Vec<u8>, Signature) {
    let mut w = Writer::new();
    w.public_key(&key.public())
        .u128(id)
        .u64(data)
        .u8(flag as u8);
    let body = w.into_bytes();
    let sig = sign(key, &body);
    (body, sig)
}

fn hash_path(n: u64, warmup: u64, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let owner = keygen(&rng.gen::<[u8; 32]>()).expect("32-byte seed");
    let mut disco = DiscoNode::new(
        keygen(&rng.gen::<[u8; 32]>()).expect("32-byte seed"),
        Box::new(PassivePolicy),
        DiscoConfig::default(),
        seed,
    );
    disco
        .admit(NodeRole::Producer, owner.public(), "bench")
        .expect("producer admission");
    let mut creds = NodeCredentials::new(
        NodeId(rng.gen()),
        rng.gen::<u128>() | 1,
        SecretValue(rng.gen()),
    );
    disco
        .register_reporter(
            owner.public(),
            creds.current_id,
            creds.pattern_delta,
            creds.secret_value,
        )
        .expect("fresh registry");
    disco.commit_period();
    let mut samples = Vec::with_capacity(n as usize);
    for i in 0..warmup + n {
        let data = rng.gen_range(0..10_000);
        let start = Instant::now();
        let tx = make_dl(&creds, data, DlFlag::Load);
        creds = creds.advance();
        let ok = disco.verify_dl(&tx).is_accept();
        let elapsed = start.elapsed().as_nanos() as u64;
        assert!(ok, "benchmark report rejected");
        if i >= warmup {
            samples.push(elapsed);
        }
    }
    samples
}

fn signature_path(n: u64, warmup: u64, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let key = keygen(&rng.gen::<[u8; 32]>()).expect("32-byte seed");
    let mut id: u128 = rng.gen();
    let mut samples = Vec::with_capacity(n as usize);
    for i in 0..warmup + n {
        let data = rng.gen_range(0..10_000);
        let start = Instant::now();
        let (body, sig) = signed_report(&key, id, data, DlFlag::Load);
        let pk = PublicKey::from_bytes(&body[..32]).expect("32-byte key");
        let ok = verify(&pk, &body, &sig);
        let elapsed = start.elapsed().as_nanos() as u64;
        assert!(ok, "baseline signature rejected");
        id = id.wrapping_add(1);
        if i >= warmup {
            samples.push(elapsed);
        }
    }
    samples
}

/// Times `iterations` generate+verify rounds per path after `warmup`
/// discarded rounds. `iterations == 0` yields an empty table.
pub fn bench(iterations: u64, warmup: u64, seed: u64) -> BenchReport {
    if iterations == 0 {
        return BenchReport {
            iterations,
            warmup,
            rows: Vec::new(),
            ratio: None,
        };
    }
    let hash = row("hash", hash_path(iterations, warmup, seed));
    let sig = row("signature", signature_path(iterations, warmup, seed));
    let ratio = (hash.median_ns > 0).then(|| sig.median_ns as f64 / hash.median_ns as f64);
    BenchReport {
        iterations,
        warmup,
        rows: vec![hash, sig],
        ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_iterations_is_an_empty_table() {
        let r = bench(0, 10, 1);
        assert!(r.rows.is_empty());
        assert_eq!(r.ratio, None);
        assert_eq!(r.table(), "no samples");
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let s: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&s, 0.5), 50);
        assert_eq!(percentile(&s, 0.95), 95);
        assert_eq!(percentile(&[7], 0.95), 7);
    }

    #[test]
    fn small_run_fills_both_rows() {
        let r = bench(50, 5, 3);
        assert_eq!(r.rows.len(), 2);
        assert!(r
            .rows
            .iter()
            .all(|row| row.samples == 50 && row.p95_ns >= row.median_ns));
        assert!(r.ratio.is_some());
    }
}
