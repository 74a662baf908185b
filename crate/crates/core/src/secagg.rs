//! Pairwise-mask secure aggregation.
//!
//! Participants `0..L-1` agree on Diffie-Hellman secrets through the
//! coordinator (participant `L-1`), then hide their fixed-point inputs under
//! per-round masks that cancel in the sum. The coordinator adds its own input
//! in the clear. The protocol assumes honest-but-curious parties that never
//! drop out; a collusion threshold appears only in the security argument and
//! has no runtime role here.
//!
//! All residues live in `Z_N` with `N` a power of two, so modular arithmetic
//! is a wrapping `u64` operation followed by a mask.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const DEFAULT_MODULUS: u64 = 1 << 62;
pub const DEFAULT_SCALE: u64 = 1 << 16;
const MILLER_RABIN_ROUNDS: usize = 64;

/// 2048-bit MODP group from RFC 3526 (group 14), generator 2.
const MODP_2048_HEX: &str = concat!(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1",
    "29024E088A67CC74020BBEA63B139B22514A08798E3404DD",
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245",
    "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED",
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D",
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F",
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D",
    "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B",
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9",
    "DE2BCBF6955817183995497CEA956AE515D2261898FA0510",
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
);

/// Prime-order Diffie-Hellman group: `p = 2q + 1` with `p`, `q` prime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupParams {
    p: BigUint,
    g: BigUint,
}

impl GroupParams {
    /// Validates a safe prime and a generator of a large subgroup.
    pub fn new(p: BigUint, g: BigUint) -> Result<Self> {
        if p < BigUint::from(5u32) || !is_probable_prime(&p, MILLER_RABIN_ROUNDS) {
            return Err(Error::InvalidGroup("p is not prime".into()));
        }
        let q = (&p - 1u32) >> 1;
        if !is_probable_prime(&q, MILLER_RABIN_ROUNDS) {
            return Err(Error::InvalidGroup("p is not a safe prime".into()));
        }
        let p_minus_one = &p - 1u32;
        if g <= BigUint::one() || g >= p_minus_one {
            return Err(Error::InvalidGroup("generator must lie in 2..p-1".into()));
        }
        // In a safe-prime group every element other than ±1 has order q or 2q.
        Ok(Self { p, g })
    }

    /// The RFC 3526 2048-bit group. Validation runs once per process.
    pub fn modp2048() -> Arc<Self> {
        static GROUP: OnceLock<Arc<GroupParams>> = OnceLock::new();
        GROUP
            .get_or_init(|| {
                let p = BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).expect("valid hex");
                Arc::new(Self::new(p, BigUint::from(2u32)).expect("RFC 3526 group is valid"))
            })
            .clone()
    }

    /// 64-bit safe prime for fast tests. Offers no security.
    #[cfg(any(test, feature = "test-group"))]
    pub fn insecure_test_group() -> Arc<Self> {
        static GROUP: OnceLock<Arc<GroupParams>> = OnceLock::new();
        GROUP
            .get_or_init(|| {
                Arc::new(
                    Self::new(
                        BigUint::from(0xffff_ffff_ffff_fa43u64),
                        BigUint::from(4u32),
                    )
                    .expect("test group is valid"),
                )
            })
            .clone()
    }

    pub fn prime(&self) -> &BigUint {
        &self.p
    }

    pub fn generator(&self) -> &BigUint {
        &self.g
    }

    pub fn bits(&self) -> u64 {
        self.p.bits()
    }
}

/// Miller-Rabin with bases drawn from a fixed-seed stream.
pub fn is_probable_prime(n: &BigUint, rounds: usize) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for small in [2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let s = BigUint::from(small);
        if *n == s {
            return true;
        }
        if (n % &s).is_zero() {
            return false;
        }
    }
    let n_minus_one = n - 1u32;
    let twos = n_minus_one.trailing_zeros().expect("n > 1");
    let d = &n_minus_one >> twos;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..twos {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Everything the participants agree on before aggregating.
#[derive(Debug, Clone)]
pub struct AggregationParams {
    group: Arc<GroupParams>,
    modulus: u64,
    scale: u64,
    participants: usize,
}

impl AggregationParams {
    pub fn new(group: Arc<GroupParams>, modulus: u64, scale: u64, participants: usize) -> Result<Self> {
        if !modulus.is_power_of_two() || modulus < 4 {
            return Err(Error::InvalidArgument(format!(
                "modulus {modulus} must be a power of two of at least 4"
            )));
        }
        if scale == 0 || scale >= modulus / 2 {
            return Err(Error::InvalidArgument(format!(
                "scale {scale} must lie in 1..N/2"
            )));
        }
        if participants < 2 {
            return Err(Error::InvalidArgument(
                "secure aggregation needs at least 2 participants".into(),
            ));
        }
        Ok(Self {
            group,
            modulus,
            scale,
            participants,
        })
    }

    /// 2048-bit group, `N = 2^62`, `F = 2^16`.
    pub fn standard(participants: usize) -> Result<Self> {
        Self::new(GroupParams::modp2048(), DEFAULT_MODULUS, DEFAULT_SCALE, participants)
    }

    pub fn group(&self) -> &Arc<GroupParams> {
        &self.group
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn participants(&self) -> usize {
        self.participants
    }

    /// Index of the participant that relays keys and sums the inputs.
    pub fn coordinator(&self) -> usize {
        self.participants - 1
    }

    pub fn encode(&self, x: f64) -> Result<u64> {
        encode(x, self.scale, self.modulus)
    }

    pub fn decode(&self, r: u64) -> f64 {
        decode(r, self.scale, self.modulus)
    }

    /// Encodes one of `L` summands, leaving room for the sum of all of them.
    pub fn encode_summand(&self, x: f64) -> Result<u64> {
        let limit = self.modulus / 2 / self.participants as u64;
        if !x.is_finite() || x.abs() * self.scale as f64 >= limit as f64 {
            return Err(Error::EncodingRange { value: x, limit });
        }
        encode(x, self.scale, self.modulus)
    }
}

/// `round(x * F) mod N`.
pub fn encode(x: f64, scale: u64, modulus: u64) -> Result<u64> {
    let limit = modulus / 2;
    let scaled = x * scale as f64;
    if !scaled.is_finite() || scaled.abs() >= limit as f64 {
        return Err(Error::EncodingRange { value: x, limit });
    }
    let v = scaled.round() as i64;
    Ok((v as i128).rem_euclid(modulus as i128) as u64)
}

/// Inverse of [`encode`]; residues in the upper half are negative.
pub fn decode(r: u64, scale: u64, modulus: u64) -> f64 {
    let r = r & (modulus - 1);
    let signed = if r >= modulus / 2 {
        r as i128 - modulus as i128
    } else {
        r as i128
    };
    signed as f64 / scale as f64
}

/// A participant's Diffie-Hellman state.
#[derive(Clone)]
pub struct ParticipantKeys {
    index: usize,
    secret: BigUint,
    public: BigUint,
    shared: BTreeMap<usize, BigUint>,
}

impl std::fmt::Debug for ParticipantKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParticipantKeys")
            .field("index", &self.index)
            .field("peers", &self.shared.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl ParticipantKeys {
    /// Draws a secret uniformly from `Z_p` (excluding 0) using `seed`.
    pub fn generate(index: usize, group: &GroupParams, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let secret = rng.gen_biguint_range(&BigUint::one(), &group.p);
        Self::from_secret(index, group, secret)
    }

    pub fn from_secret(index: usize, group: &GroupParams, secret: BigUint) -> Self {
        let public = group.g.modpow(&secret, &group.p);
        Self {
            index,
            secret,
            public,
            shared: BTreeMap::new(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn public(&self) -> &BigUint {
        &self.public
    }

    /// Derives the shared key with `peer` from its public key.
    pub fn add_peer(&mut self, peer: usize, public: &BigUint, group: &GroupParams) -> Result<()> {
        if peer == self.index {
            return Err(Error::InvalidArgument("a participant cannot pair with itself".into()));
        }
        if public <= &BigUint::one() || public >= &(&group.p - 1u32) {
            return Err(Error::InvalidGroup(format!(
                "public key of participant {peer} is degenerate"
            )));
        }
        self.shared.insert(peer, public.modpow(&self.secret, &group.p));
        Ok(())
    }

    pub fn shared_with(&self, peer: usize) -> Option<&BigUint> {
        self.shared.get(&peer)
    }

    pub fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        self.shared.keys().copied()
    }
}

/// Runs key agreement for `L` participants in-process, relaying every public
/// key through the coordinator. `seeds[i]` drives participant `i`'s secret.
pub fn setup(params: &AggregationParams, seeds: &[u64]) -> Result<Vec<ParticipantKeys>> {
    let l = params.participants();
    if seeds.len() != l {
        return Err(Error::InvalidArgument(format!(
            "{} seeds for {l} participants",
            seeds.len()
        )));
    }
    let group = params.group();
    let mut keys: Vec<_> = (0..l)
        .map(|i| ParticipantKeys::generate(i, group, seeds[i]))
        .collect();
    let coordinator = params.coordinator();
    // Step 1: everyone sends S_i to the coordinator.
    let relayed: Vec<BigUint> = keys.iter().map(|k| k.public.clone()).collect();
    // Step 2: the coordinator pairs with everyone and forwards the table.
    for j in 0..l {
        if j != coordinator {
            keys[coordinator].add_peer(j, &relayed[j], group)?;
        }
    }
    for i in 0..l {
        if i == coordinator {
            continue;
        }
        for j in 0..l {
            if j != i {
                keys[i].add_peer(j, &relayed[j], group)?;
            }
        }
    }
    Ok(keys)
}

/// A participant's masked input for one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedVector {
    pub round: u64,
    pub owner: u32,
    pub values: Vec<u64>,
}

impl MaskedVector {
    /// `(round u64, owner u32, len u64)` prefix, then little-endian entries.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.values.len());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.owner.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take = |at: usize, len: usize| {
            bytes
                .get(at..at + len)
                .ok_or_else(|| Error::Wire("masked vector truncated".into()))
        };
        let round = u64::from_le_bytes(take(0, 8)?.try_into().expect("8 bytes"));
        let owner = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes"));
        let len = u64::from_le_bytes(take(12, 8)?.try_into().expect("8 bytes")) as usize;
        if bytes.len() != 20 + 8 * len {
            return Err(Error::Wire(format!(
                "masked vector declares {len} entries but carries {} bytes",
                bytes.len() - 20
            )));
        }
        let values = bytes[20..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            round,
            owner,
            values,
        })
    }
}

/// Length-prefixed (u32 big-endian) minimal big-endian encoding of a key.
pub fn public_key_to_bytes(key: &BigUint) -> Vec<u8> {
    let body = key.to_bytes_be();
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn public_key_from_bytes(bytes: &[u8]) -> Result<BigUint> {
    let len = bytes
        .get(..4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize)
        .ok_or_else(|| Error::Wire("public key truncated".into()))?;
    let body = bytes
        .get(4..4 + len)
        .filter(|_| bytes.len() == 4 + len)
        .ok_or_else(|| Error::Wire("public key length mismatch".into()))?;
    Ok(BigUint::from_bytes_be(body))
}

/// Keyed mask stream for one pair and round: ChaCha20 seeded with
/// `SHA-256(round_be || key_be)`, each draw reduced mod `N`.
pub fn mask_stream(shared: &BigUint, round: u64, len: usize, modulus: u64) -> Vec<u64> {
    let mut h = Sha256::new();
    h.update(round.to_be_bytes());
    h.update(shared.to_bytes_be());
    let mut rng = ChaCha20Rng::from_seed(h.finalize().into());
    (0..len).map(|_| rng.next_u64() & (modulus - 1)).collect()
}

/// `r_{i,j}`: the stream for the pair, negated when `i > j`.
pub fn pair_mask(keys: &ParticipantKeys, peer: usize, round: u64, len: usize, modulus: u64) -> Result<Vec<u64>> {
    let shared = keys
        .shared_with(peer)
        .ok_or(Error::UnknownEndpoint(peer))?;
    let stream = mask_stream(shared, round, len, modulus);
    Ok(if keys.index < peer {
        stream
    } else {
        stream
            .into_iter()
            .map(|v| v.wrapping_neg() & (modulus - 1))
            .collect()
    })
}

/// Masks an encoded input against every other non-coordinator.
pub fn mask(
    x_enc: &[u64],
    keys: &ParticipantKeys,
    params: &AggregationParams,
    round: u64,
) -> Result<MaskedVector> {
    let n_mod = params.modulus();
    let coordinator = params.coordinator();
    if keys.index == coordinator {
        return Err(Error::Protocol("the coordinator does not mask its input".into()));
    }
    let mut values: Vec<u64> = x_enc.iter().map(|v| v & (n_mod - 1)).collect();
    for peer in 0..params.participants() {
        if peer == keys.index || peer == coordinator {
            continue;
        }
        let r = pair_mask(keys, peer, round, x_enc.len(), n_mod)?;
        for (v, m) in values.iter_mut().zip(r) {
            *v = v.wrapping_add(m) & (n_mod - 1);
        }
    }
    Ok(MaskedVector {
        round,
        owner: keys.index as u32,
        values,
    })
}

/// Coordinator side: sums the masked inputs and its own encoded input.
pub fn aggregate(masked: &[MaskedVector], own: &[u64], params: &AggregationParams) -> Result<Vec<u64>> {
    let expected = params.participants() - 1;
    if masked.len() != expected {
        return Err(Error::AggregationMismatch(format!(
            "{} masked inputs, expected {expected}",
            masked.len()
        )));
    }
    let mut owners: Vec<u32> = masked.iter().map(|m| m.owner).collect();
    owners.sort_unstable();
    if owners != (0..expected as u32).collect::<Vec<_>>() {
        return Err(Error::AggregationMismatch(format!(
            "inputs from owners {owners:?}"
        )));
    }
    if let Some(first) = masked.first() {
        if masked.iter().any(|m| m.round != first.round) {
            return Err(Error::AggregationMismatch("inputs from different rounds".into()));
        }
    }
    if masked.iter().any(|m| m.values.len() != own.len()) {
        return Err(Error::AggregationMismatch("inputs of different lengths".into()));
    }
    let n_mod = params.modulus();
    let mut sum: Vec<u64> = own.iter().map(|v| v & (n_mod - 1)).collect();
    for m in masked {
        for (s, v) in sum.iter_mut().zip(&m.values) {
            *s = s.wrapping_add(*v) & (n_mod - 1);
        }
    }
    Ok(sum)
}

/// A participant's keys plus a monotone round counter.
#[derive(Debug, Clone)]
pub struct AggregationSession {
    params: AggregationParams,
    keys: ParticipantKeys,
    round: u64,
}

impl AggregationSession {
    pub fn new(params: AggregationParams, keys: ParticipantKeys) -> Self {
        Self {
            params,
            keys,
            round: 0,
        }
    }

    pub fn params(&self) -> &AggregationParams {
        &self.params
    }

    pub fn keys(&self) -> &ParticipantKeys {
        &self.keys
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn is_coordinator(&self) -> bool {
        self.keys.index == self.params.coordinator()
    }

    /// Encodes and masks `values` under the next round number.
    pub fn mask_next(&mut self, values: &[f64]) -> Result<MaskedVector> {
        let enc = values
            .iter()
            .map(|v| self.params.encode_summand(*v))
            .collect::<Result<Vec<_>>>()?;
        self.round += 1;
        mask(&enc, &self.keys, &self.params, self.round)
    }

    /// Coordinator side of the round started by the others' `mask_next`.
    pub fn aggregate_next(&mut self, masked: &[MaskedVector], own: &[f64]) -> Result<Vec<f64>> {
        let enc = own
            .iter()
            .map(|v| self.params.encode_summand(*v))
            .collect::<Result<Vec<_>>>()?;
        self.round += 1;
        if let Some(m) = masked.iter().find(|m| m.round != self.round) {
            return Err(Error::AggregationMismatch(format!(
                "input for round {} while expecting round {}",
                m.round, self.round
            )));
        }
        let sum = aggregate(masked, &enc, &self.params)?;
        Ok(sum.into_iter().map(|r| self.params.decode(r)).collect())
    }
}

/// Sum reduced modulo `N`, for tests and audits.
pub fn mod_sum(values: impl IntoIterator<Item = u64>, modulus: u64) -> u64 {
    values
        .into_iter()
        .fold(0u64, |a, v| a.wrapping_add(v) & (modulus - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn test_params(l: usize) -> AggregationParams {
        AggregationParams::new(GroupParams::insecure_test_group(), DEFAULT_MODULUS, DEFAULT_SCALE, l).unwrap()
    }

    #[test]
    fn standard_group_validates() {
        let g = GroupParams::modp2048();
        assert_eq!(g.bits(), 2048);
        assert_eq!(g.generator(), &BigUint::from(2u32));
    }

    #[test]
    fn rejects_bad_groups() {
        assert!(GroupParams::new(BigUint::from(21u32), BigUint::from(2u32)).is_err());
        // 29 is prime but 14 is not
        assert!(GroupParams::new(BigUint::from(29u32), BigUint::from(2u32)).is_err());
        assert!(GroupParams::new(BigUint::from(23u32), BigUint::from(22u32)).is_err());
        assert!(GroupParams::new(BigUint::from(23u32), BigUint::from(5u32)).is_ok());
    }

    #[test]
    fn miller_rabin_agrees_with_trial_division() {
        let trial = |n: u64| n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0);
        for n in 0u64..3000 {
            assert_eq!(is_probable_prime(&BigUint::from(n), 16), trial(n), "{n}");
        }
    }

    #[test]
    fn two_party_keys_agree() {
        let keys = setup(&test_params(2), &[1, 2]).unwrap();
        assert_eq!(keys[0].shared_with(1), keys[1].shared_with(0));
        let again = setup(&test_params(2), &[1, 2]).unwrap();
        assert_eq!(keys[0].shared_with(1), again[0].shared_with(1));
    }

    #[test]
    fn tiny_group_matches_hand_computation() {
        let group = GroupParams::new(BigUint::from(23u32), BigUint::from(5u32)).unwrap();
        let secrets = [6u32, 15, 13];
        let mut keys: Vec<_> = secrets
            .iter()
            .enumerate()
            .map(|(i, s)| ParticipantKeys::from_secret(i, &group, BigUint::from(*s)))
            .collect();
        // 5^6 = 8, 5^15 = 19, 5^13 = 21 (mod 23)
        let publics: Vec<u32> = vec![8, 19, 21];
        for (k, p) in keys.iter().zip(&publics) {
            assert_eq!(k.public(), &BigUint::from(*p));
        }
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let pj = keys[j].public().clone();
                    keys[i].add_peer(j, &pj, &group).unwrap();
                }
            }
        }
        // 5^(6*15) = 5^90, 5^(6*13) = 5^78, 5^(15*13) = 5^195; 5 has order 22
        let expect = |e: u32| BigUint::from(5u32).modpow(&BigUint::from(e % 22), &BigUint::from(23u32));
        assert_eq!(keys[0].shared_with(1).unwrap(), &expect(90));
        assert_eq!(keys[0].shared_with(2).unwrap(), &expect(78));
        assert_eq!(keys[1].shared_with(2).unwrap(), &expect(195));
        assert_eq!(expect(90), BigUint::from(2u32));
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(keys[i].shared_with(j), keys[j].shared_with(i));
                }
            }
        }
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode(0.0, DEFAULT_SCALE, DEFAULT_MODULUS).unwrap(), 0);
        let r = encode(-1.5, DEFAULT_SCALE, DEFAULT_MODULUS).unwrap();
        assert_eq!(r, DEFAULT_MODULUS - 98304);
        assert_eq!(decode(r, DEFAULT_SCALE, DEFAULT_MODULUS), -1.5);
        let limit = (DEFAULT_MODULUS / 2) as f64 / DEFAULT_SCALE as f64;
        assert!(encode(limit, DEFAULT_SCALE, DEFAULT_MODULUS).is_err());
        assert!(encode(-limit, DEFAULT_SCALE, DEFAULT_MODULUS).is_err());
        assert!(encode(f64::NAN, DEFAULT_SCALE, DEFAULT_MODULUS).is_err());
    }

    #[test]
    fn round_trip_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-100.0..100.0);
            let back = decode(encode(x, DEFAULT_SCALE, DEFAULT_MODULUS).unwrap(), DEFAULT_SCALE, DEFAULT_MODULUS);
            assert!((back - x).abs() <= 2f64.powi(-17));
        }
    }

    #[test]
    fn largest_positive_value_survives_aggregation() {
        let params = test_params(3);
        let keys = setup(&params, &[1, 2, 3]).unwrap();
        // the largest residue below N/2, carried by one party
        let top = DEFAULT_MODULUS / 2 - 1;
        let m0 = mask(&[top], &keys[0], &params, 1).unwrap();
        let m1 = mask(&[0], &keys[1], &params, 1).unwrap();
        let sum = aggregate(&[m0, m1], &[0], &params).unwrap();
        assert_eq!(sum, vec![top]);
        assert_eq!(params.decode(sum[0]), top as f64 / DEFAULT_SCALE as f64);
    }

    #[test]
    fn pair_masks_cancel_and_change_per_round() {
        let params = test_params(4);
        let keys = setup(&params, &[5, 6, 7, 8]).unwrap();
        for round in 0..5 {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        let a = pair_mask(&keys[i], j, round, 16, DEFAULT_MODULUS).unwrap();
                        let b = pair_mask(&keys[j], i, round, 16, DEFAULT_MODULUS).unwrap();
                        assert!(a.iter().zip(&b).all(|(x, y)| x.wrapping_add(*y) & (DEFAULT_MODULUS - 1) == 0));
                    }
                }
            }
        }
        let r1 = pair_mask(&keys[0], 1, 1, 8, DEFAULT_MODULUS).unwrap();
        let r2 = pair_mask(&keys[0], 1, 2, 8, DEFAULT_MODULUS).unwrap();
        assert_ne!(r1, r2);
    }

    #[test]
    fn two_parties_zero_inputs_sum_to_zero() {
        let params = test_params(2);
        let keys = setup(&params, &[1, 2]).unwrap();
        let m = mask(&[0, 0], &keys[0], &params, 1).unwrap();
        assert_eq!(aggregate(&[m], &[0, 0], &params).unwrap(), vec![0, 0]);
    }

    #[test]
    fn four_parties_decode_to_plain_sum() {
        let params = test_params(4);
        let keys = setup(&params, &[11, 12, 13, 14]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs: Vec<Vec<f64>> = (0..4).map(|_| (0..32).map(|_| rng.gen_range(-50.0..50.0)).collect()).collect();
        let enc: Vec<Vec<u64>> = inputs.iter().map(|v| v.iter().map(|x| params.encode(*x).unwrap()).collect()).collect();
        let masked: Vec<_> = (0..3).map(|i| mask(&enc[i], &keys[i], &params, 9).unwrap()).collect();
        let sum = aggregate(&masked, &enc[3], &params).unwrap();
        for (e, s) in sum.iter().enumerate() {
            let plain: f64 = inputs.iter().map(|v| v[e]).sum();
            assert!((params.decode(*s) - plain).abs() <= 4.0 * 2f64.powi(-17));
        }
    }

    #[test]
    fn aggregate_rejects_mismatched_inputs() {
        let params = test_params(3);
        let keys = setup(&params, &[1, 2, 3]).unwrap();
        let a = mask(&[1, 2], &keys[0], &params, 1).unwrap();
        let b = mask(&[1, 2], &keys[1], &params, 2).unwrap();
        assert!(aggregate(&[a.clone(), b], &[0, 0], &params).is_err());
        let short = mask(&[1], &keys[1], &params, 1).unwrap();
        assert!(aggregate(&[a.clone(), short], &[0, 0], &params).is_err());
        assert!(aggregate(&[a.clone(), a], &[0, 0], &params).is_err());
        assert!(mask(&[1], &keys[2], &params, 1).is_err());
    }

    #[test]
    fn wire_formats_round_trip() {
        let v = MaskedVector { round: 7, owner: 2, values: vec![1, u64::MAX >> 2, 0] };
        let bytes = v.to_bytes();
        assert_eq!(&bytes[..8], &7u64.to_le_bytes());
        assert_eq!(MaskedVector::from_bytes(&bytes).unwrap(), v);
        assert!(MaskedVector::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let key = BigUint::from(0x0102_0304u32);
        let kb = public_key_to_bytes(&key);
        assert_eq!(kb, vec![0, 0, 0, 4, 1, 2, 3, 4]);
        assert_eq!(public_key_from_bytes(&kb).unwrap(), key);
    }

    #[test]
    fn sessions_advance_rounds_together() {
        let params = test_params(3);
        let keys = setup(&params, &[1, 2, 3]).unwrap();
        let mut sessions: Vec<_> = keys.into_iter().map(|k| AggregationSession::new(params.clone(), k)).collect();
        for step in 0..3 {
            let x = [step as f64, -0.25];
            let masked: Vec<_> = sessions[..2].iter_mut().map(|s| s.mask_next(&x).unwrap()).collect();
            let sum = sessions[2].aggregate_next(&masked, &x).unwrap();
            assert_eq!(sum, vec![3.0 * step as f64, -0.75]);
        }
        assert!(sessions.iter().all(|s| s.round() == 3));
    }

    #[test]
    fn masked_bytes_look_uniform() {
        // Participant 0's masked zero vector, viewed without the mask key.
        let params = test_params(3);
        let keys = setup(&params, &[21, 22, 23]).unwrap();
        let mut counts = [0u64; 256];
        let trials = 100_000u64;
        for round in 0..trials {
            let m = mask(&[0], &keys[0], &params, round).unwrap();
            for b in &m.values[0].to_le_bytes()[..7] {
                counts[*b as usize] += 1;
            }
        }
        let expected = (trials * 7) as f64 / 256.0;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
        // chi-square critical value, 255 degrees of freedom, significance 0.01
        assert!(chi2 < 310.457, "chi2 = {chi2}");
    }
}
