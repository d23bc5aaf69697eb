//! Seeded universal hashing of categorical items into table rows.
//!
//! Each of the `K` embedding hash functions and the single weight-table hash
//! function is FNV-1a (64 bit) over the big-endian seed bytes followed by the
//! UTF-8 item bytes, reduced modulo the table height. The map is a pure
//! function of `(seed, item)`, so indices are stable across processes and
//! platforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::splitmix64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn seeded_hash(seed: u64, item: &str) -> u64 {
    fnv1a64(seed.to_be_bytes().into_iter().chain(item.bytes()))
}

/// Index space of a hashed embedding: `B` rows of `E` (width `d`), `K` hash
/// functions, and `P` rows of the aggregation-weight table `W` (width `K`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawHashSpec")]
pub struct HashSpec {
    bucket_count: usize,
    num_hashes: usize,
    weight_buckets: usize,
    embed_dim: usize,
    /// `K` seeds for the rows of `E` followed by one seed for `W`.
    seeds: Vec<u64>,
}

#[derive(Deserialize)]
struct RawHashSpec {
    bucket_count: usize,
    num_hashes: usize,
    weight_buckets: usize,
    embed_dim: usize,
    seeds: Vec<u64>,
}

impl TryFrom<RawHashSpec> for HashSpec {
    type Error = Error;

    fn try_from(raw: RawHashSpec) -> Result<Self> {
        HashSpec::with_seeds(raw.bucket_count, raw.num_hashes, raw.weight_buckets, raw.embed_dim, raw.seeds)
    }
}

impl HashSpec {
    /// Builds a spec whose `K + 1` seeds are drawn from splitmix64 started at `seed`.
    pub fn new(
        bucket_count: usize,
        num_hashes: usize,
        weight_buckets: usize,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut state = seed;
        let mut seeds: Vec<u64> = Vec::with_capacity(num_hashes + 1);
        while seeds.len() < num_hashes + 1 {
            let s = splitmix64(&mut state);
            if !seeds.contains(&s) {
                seeds.push(s);
            }
        }
        Self::with_seeds(bucket_count, num_hashes, weight_buckets, embed_dim, seeds)
    }

    pub fn with_seeds(
        bucket_count: usize,
        num_hashes: usize,
        weight_buckets: usize,
        embed_dim: usize,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        for (field, value) in [
            ("bucket_count", bucket_count),
            ("num_hashes", num_hashes),
            ("weight_buckets", weight_buckets),
            ("embed_dim", embed_dim),
        ] {
            if value == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if seeds.len() != num_hashes + 1 {
            return Err(Error::config(
                "seeds",
                format!("expected {} seeds (K + 1), got {}", num_hashes + 1, seeds.len()),
            ));
        }
        for (i, s) in seeds.iter().enumerate() {
            if seeds[..i].contains(s) {
                return Err(Error::config("seeds", format!("seed {s} appears twice")));
            }
        }
        Ok(Self {
            bucket_count,
            num_hashes,
            weight_buckets,
            embed_dim,
            seeds,
        })
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_count
    }

    pub fn num_hashes(&self) -> usize {
        self.num_hashes
    }

    pub fn weight_buckets(&self) -> usize {
        self.weight_buckets
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    /// Row of `E` selected by the `k`-th hash function.
    pub fn hash_item(&self, k: usize, item: &str) -> Result<usize> {
        if k >= self.num_hashes {
            return Err(Error::invalid(format!(
                "hash index {k} out of range for K = {}",
                self.num_hashes
            )));
        }
        Ok((seeded_hash(self.seeds[k], item) % self.bucket_count as u64) as usize)
    }

    /// Row of `W` holding the item's aggregation weights.
    pub fn hash_weight(&self, item: &str) -> usize {
        (seeded_hash(self.seeds[self.num_hashes], item) % self.weight_buckets as u64) as usize
    }

    pub fn hash_signature(&self, item: &str) -> Signature {
        let rows = (0..self.num_hashes)
            .map(|k| (seeded_hash(self.seeds[k], item) % self.bucket_count as u64) as usize)
            .collect();
        Signature {
            rows,
            weight_row: self.hash_weight(item),
        }
    }
}

/// The `K` rows of `E` (in hash order) and the row of `W` for one item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub rows: Vec<usize>,
    pub weight_row: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_strings(n: usize, seed: u64) -> Vec<String> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                let len = rng.random_range(1..12);
                (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
            })
            .collect()
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(*b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(*b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(*b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn deterministic_and_in_range() {
        let spec = HashSpec::new(7, 3, 11, 20, 42).unwrap();
        let a = spec.hash_item(0, "edu").unwrap();
        assert_eq!(a, spec.hash_item(0, "edu").unwrap());
        assert!(a < 7);
        let sig = spec.hash_signature("");
        assert_eq!(sig.rows.len(), 3);
        assert!(sig.weight_row < 11);
        assert_eq!(sig, spec.hash_signature(""));
    }

    #[test]
    fn single_bucket_maps_to_zero() {
        let spec = HashSpec::new(1, 2, 1, 4, 9).unwrap();
        for s in ["", "x", "long item name"] {
            assert_eq!(spec.hash_item(0, s).unwrap(), 0);
            assert_eq!(spec.hash_item(1, s).unwrap(), 0);
            assert_eq!(spec.hash_weight(s), 0);
        }
    }

    #[test]
    fn hash_index_out_of_range() {
        let spec = HashSpec::new(7, 3, 11, 20, 42).unwrap();
        assert!(matches!(spec.hash_item(3, "a"), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(HashSpec::new(0, 3, 11, 20, 1).is_err());
        assert!(HashSpec::new(7, 0, 11, 20, 1).is_err());
        assert!(HashSpec::new(7, 3, 0, 20, 1).is_err());
        assert!(HashSpec::new(7, 3, 11, 0, 1).is_err());
        assert!(HashSpec::with_seeds(7, 2, 1, 1, vec![1, 2, 2]).is_err());
        assert!(HashSpec::with_seeds(7, 2, 1, 1, vec![1, 2]).is_err());
    }

    #[test]
    fn pairwise_hash_agreement_rate_is_one_over_b() {
        let b = 7usize;
        let n = 10_000usize;
        let spec = HashSpec::new(b, 2, 1, 1, 3).unwrap();
        let same = random_strings(n, 11)
            .iter()
            .filter(|s| spec.hash_item(0, s).unwrap() == spec.hash_item(1, s).unwrap())
            .count();
        let p = 1.0 / b as f64;
        let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        let rate = same as f64 / n as f64;
        assert!((rate - p).abs() < tol, "rate {rate} vs {p} +- {tol}");
    }

    #[test]
    fn weight_hash_is_uniform() {
        let p = 11usize;
        let n = 10_000usize;
        let spec = HashSpec::new(7, 3, p, 20, 5).unwrap();
        let mut counts = vec![0usize; p];
        for s in random_strings(n, 12) {
            counts[spec.hash_weight(&s)] += 1;
        }
        let q = 1.0 / p as f64;
        let expected = n as f64 * q;
        let sd = (n as f64 * q * (1.0 - q)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 5.0 * sd, "count {c}");
        }
    }

    #[test]
    fn full_collision_rate_is_b_to_minus_k() {
        // Random distinct pairs; all three hashes must agree for a full collision.
        let (b, k) = (7usize, 3usize);
        let spec = HashSpec::new(b, k, 1, 1, 77).unwrap();
        let items = random_strings(200_000, 13);
        let trials = items.len() / 2;
        let mut full = 0usize;
        let mut distinct = 0usize;
        for pair in items.chunks(2) {
            if pair[0] == pair[1] {
                continue;
            }
            distinct += 1;
            if spec.hash_signature(&pair[0]).rows == spec.hash_signature(&pair[1]).rows {
                full += 1;
            }
        }
        assert!(distinct > trials * 9 / 10);
        let p = (b as f64).powi(-(k as i32));
        let rate = full as f64 / distinct as f64;
        let tol = 4.0 * (p * (1.0 - p) / distinct as f64).sqrt();
        assert!((rate - p).abs() < tol, "rate {rate} vs {p} +- {tol}");
    }

    #[test]
    fn seed_change_moves_some_item() {
        let a = HashSpec::new(7, 3, 11, 20, 1).unwrap();
        for other in 2..20u64 {
            let b = HashSpec::new(7, 3, 11, 20, other).unwrap();
            let vocab = random_strings(1000, other);
            assert!(vocab.iter().any(|s| a.hash_signature(s) != b.hash_signature(s)));
        }
    }

    #[test]
    fn serde_round_trip() {
        let spec = HashSpec::new(7, 3, 11, 20, 42).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: HashSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
