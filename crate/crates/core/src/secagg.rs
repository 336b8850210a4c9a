//! Hybrid masking secure aggregation.
//!
//! Each user `u` sends, for every entry `j` of its vector,
//!
//! ```text
//! [[x_u]]_j = (1 + (x_{u,j} + Y_{u,j}) N) * pk_S^(r_u * phi(g^r_u))  mod N^2
//! ```
//!
//! where `Y_{u,j}` is the signed sum of pairwise PRF masks shared with every
//! other registered user. The masks cancel only over the full user set, and
//! the Bresson blinding can only be removed once every active user's seed
//! `g^r_u` is known, so the server learns nothing useful unless it multiplies
//! all active contributions together. Masks of users that drop before seeds
//! are revealed are rebuilt from their Shamir-escrowed mask keys.
//!
//! One `r_u` serves all `m` entries of a vector; the pairwise masks are
//! diversified per entry and per aggregation session.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_traits::Zero;

use crate::bresson::{key_agree, open_plaintext_slot, KeyPair};
use crate::codec::{decode, encode, FixedPointConfig};
use crate::error::{Error, Result};
use crate::group_math::{mod_exp, mod_inverse, GroupParams};
use crate::shamir::{self, KeyShare};
use crate::transport::Prf;
use crate::UserId;

/// A user's masked contribution: one `Z*_{N^2}` element per entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedVector {
    pub sender: UserId,
    pub entries: Vec<BigUint>,
}

/// Second-round message: the user's seed and its shares of dropped users' keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedReveal {
    pub sender: UserId,
    pub seed: BigUint,
    pub dropout_shares: Vec<KeyShare>,
}

/// The PRF that expands the shared mask key of a pair for one session.
pub fn pair_prf(params: &GroupParams, shared: &BigUint, session: u64) -> Prf {
    let mut input = params.encode_element(shared);
    input.extend_from_slice(&session.to_be_bytes());
    Prf::new(&input)
}

/// `phi(g^r)`: the exponent multiplier derived from a user's seed.
pub fn seed_exponent(params: &GroupParams, seed: &BigUint) -> BigUint {
    let mut input = b"seed-exponent".to_vec();
    input.extend(params.encode_element(seed));
    Prf::new(&input).eval(0, &params.n)
}

/// `Y_{me,j}` for `j < m`: `+phi` for peers with a larger index, `-phi` for
/// smaller ones, modulo `N`.
pub fn pairwise_mask_sum(
    params: &GroupParams,
    me: UserId,
    pair_keys: &BTreeMap<UserId, BigUint>,
    session: u64,
    m: usize,
) -> Vec<BigUint> {
    let n = &params.n;
    let mut acc = vec![BigUint::zero(); m];
    for (&peer, shared) in pair_keys {
        if peer == me {
            continue;
        }
        let stream = pair_prf(params, shared, session).stream(m, n);
        for (a, s) in acc.iter_mut().zip(stream) {
            *a = if me < peer { (&*a + s) % n } else { (&*a + n - s) % n };
        }
    }
    acc
}

/// Masks a real vector: encodes each entry and delegates to [`mask_encoded`].
#[allow(clippy::too_many_arguments)]
pub fn mask_vector(
    params: &GroupParams,
    cfg: &FixedPointConfig,
    me: UserId,
    x: &[f64],
    r_u: &BigUint,
    pair_keys: &BTreeMap<UserId, BigUint>,
    server_public: &BigUint,
    session: u64,
) -> Result<MaskedVector> {
    let encoded = x.iter().map(|&v| encode(v, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(mask_encoded(params, me, &encoded, r_u, pair_keys, server_public, session))
}

/// Masks a vector that is already in `Z_N`.
pub fn mask_encoded(
    params: &GroupParams,
    me: UserId,
    x: &[BigUint],
    r_u: &BigUint,
    pair_keys: &BTreeMap<UserId, BigUint>,
    server_public: &BigUint,
    session: u64,
) -> MaskedVector {
    let seed = mod_exp(&params.g, r_u, &params.n2);
    let exponent = r_u * seed_exponent(params, &seed);
    let blind = mod_exp(server_public, &exponent, &params.n2);
    let masks = pairwise_mask_sum(params, me, pair_keys, session, x.len());
    let entries = x
        .iter()
        .zip(masks)
        .map(|(xj, mask)| {
            let y = (xj + mask) % &params.n;
            let slot = (BigUint::from(1u32) + y * &params.n) % &params.n2;
            slot * &blind % &params.n2
        })
        .collect();
    MaskedVector { sender: me, entries }
}

/// Answers the server's active list. `stored_shares` maps owner to the share
/// this user holds for it.
pub fn open_seed(
    params: &GroupParams,
    me: UserId,
    r_u: &BigUint,
    registered: &[UserId],
    active: &[UserId],
    stored_shares: &BTreeMap<UserId, KeyShare>,
) -> Result<SeedReveal> {
    if !active.contains(&me) {
        return Err(Error::NotActive(me));
    }
    let active: BTreeSet<_> = active.iter().copied().collect();
    let dropout_shares = registered
        .iter()
        .filter(|u| **u != me && !active.contains(u))
        .filter_map(|u| stored_shares.get(u).cloned())
        .collect();
    Ok(SeedReveal { sender: me, seed: mod_exp(&params.g, r_u, &params.n2), dropout_shares })
}

/// Rebuilds a dropped user's private mask key from at least `t` shares.
pub fn recover_dropped_key(shares: &[KeyShare], t: usize, p: &BigUint) -> Result<BigUint> {
    shamir::reconstruct(shares, t, p)
}

/// `R = prod_u seed_u^phi(seed_u) mod N^2`.
pub fn blinding_product<'a>(params: &GroupParams, seeds: impl IntoIterator<Item = &'a BigUint>) -> BigUint {
    seeds.into_iter().fold(BigUint::from(1u32), |acc, seed| {
        acc * mod_exp(seed, &seed_exponent(params, seed), &params.n2) % &params.n2
    })
}

/// Strips the Bresson blinding from a product of entries:
/// `(product * R^{-sk} - 1) / N`. A result that is not of the form `1 + yN`
/// means the product and `R` do not cover the same users.
pub fn unblind(
    params: &GroupParams,
    unblinder: &BigUint,
    product: &BigUint,
    entry: usize,
) -> Result<BigUint> {
    let slot = product * unblinder % &params.n2;
    open_plaintext_slot(params, &slot).ok_or(Error::ForcedAggregationViolation { entry })
}

/// `R^{-sk} mod N^2`.
pub fn unblinder(params: &GroupParams, server_private: &BigUint, r: &BigUint) -> Result<BigUint> {
    mod_inverse(&mod_exp(r, server_private, &params.n2), &params.n2)
        .ok_or(Error::ForcedAggregationViolation { entry: 0 })
}

/// The residual masks left by dropped users, as seen from the active set:
/// `sum_{u0} (sum_{v > u0} phi(k_{u0,v}) - sum_{v < u0} phi(k_{u0,v}))`
/// with `v` ranging over active users only.
pub fn dropout_correction(
    params: &GroupParams,
    dropped_keys: &BTreeMap<UserId, BigUint>,
    active: &[UserId],
    mask_publics: &BTreeMap<UserId, BigUint>,
    session: u64,
    m: usize,
) -> Result<Vec<BigUint>> {
    let mut acc = vec![BigUint::zero(); m];
    for (&u0, private) in dropped_keys {
        let mut pair_keys = BTreeMap::new();
        for v in active {
            let public = mask_publics
                .get(v)
                .ok_or_else(|| Error::ProtocolIncomplete(format!("no mask public key for {v}")))?;
            pair_keys.insert(*v, key_agree(params, private, public));
        }
        for (a, y) in acc.iter_mut().zip(pairwise_mask_sum(params, u0, &pair_keys, session, m)) {
            *a = (&*a + y) % &params.n;
        }
    }
    Ok(acc)
}

/// Server-side view of one aggregation session.
#[derive(Clone, Debug)]
pub struct AggregationState {
    pub params: GroupParams,
    pub server_keys: KeyPair,
    /// Users that took part in mask key sharing (`U`).
    pub registered: Vec<UserId>,
    /// Users whose masked vectors arrived (`U'`).
    pub active: Vec<UserId>,
    pub threshold: usize,
    pub mask_publics: BTreeMap<UserId, BigUint>,
    pub session: u64,
    pub codec: FixedPointConfig,
}

impl AggregationState {
    pub fn dropped(&self) -> Vec<UserId> {
        self.registered.iter().filter(|u| !self.active.contains(u)).copied().collect()
    }

    /// Active users that have not yet sent a [`SeedReveal`].
    pub fn missing_reveals(&self, reveals: &[SeedReveal]) -> Vec<UserId> {
        self.active.iter().filter(|u| !reveals.iter().any(|r| r.sender == **u)).copied().collect()
    }
}

/// Result of unmasking: exact sums in `Z_N` and their decoded reals.
#[derive(Clone, Debug)]
pub struct Aggregate {
    pub sums: Vec<BigUint>,
    pub values: Vec<f64>,
    pub recovered_keys: BTreeMap<UserId, BigUint>,
}

pub fn aggregate_unmask(
    state: &AggregationState,
    vectors: &[MaskedVector],
    reveals: &[SeedReveal],
) -> Result<Aggregate> {
    let params = &state.params;
    if state.active.len() < state.threshold.max(1) {
        return Err(Error::RoundAbort { active: state.active.len(), threshold: state.threshold });
    }

    let mut ordered = Vec::with_capacity(state.active.len());
    for u in &state.active {
        let v = vectors
            .iter()
            .find(|v| v.sender == *u)
            .ok_or_else(|| Error::ProtocolIncomplete(format!("no masked vector from {u}")))?;
        ordered.push(v);
    }
    let m = ordered[0].entries.len();
    if m == 0 || ordered.iter().any(|v| v.entries.len() != m) {
        return Err(Error::ProtocolIncomplete("masked vectors differ in length".into()));
    }
    let missing = state.missing_reveals(reveals);
    if !missing.is_empty() {
        return Err(Error::ProtocolIncomplete(format!("no seed reveal from {missing:?}")));
    }

    let active_reveals: Vec<&SeedReveal> = state
        .active
        .iter()
        .map(|u| reveals.iter().find(|r| r.sender == *u).expect("checked above"))
        .collect();
    let r = blinding_product(params, active_reveals.iter().map(|r| &r.seed));
    let unblinder = unblinder(params, &state.server_keys.private, &r)?;

    let mut recovered_keys = BTreeMap::new();
    for u0 in state.dropped() {
        let shares: Vec<KeyShare> = active_reveals
            .iter()
            .flat_map(|r| r.dropout_shares.iter())
            .filter(|s| s.owner == u0)
            .cloned()
            .collect();
        let key = recover_dropped_key(&shares, state.threshold, &params.p)?;
        match state.mask_publics.get(&u0) {
            Some(public) if mod_exp(&params.g, &key, &params.n2) == *public => {}
            _ => return Err(Error::RecoveredKeyMismatch(u0)),
        }
        recovered_keys.insert(u0, key);
    }
    let correction =
        dropout_correction(params, &recovered_keys, &state.active, &state.mask_publics, state.session, m)?;

    let mut sums = Vec::with_capacity(m);
    for (j, corr) in correction.into_iter().enumerate() {
        let product = ordered.iter().fold(BigUint::from(1u32), |acc, v| acc * &v.entries[j] % &params.n2);
        let y = unblind(params, &unblinder, &product, j)?;
        sums.push((y + corr) % &params.n);
    }
    let values = sums.iter().map(|s| decode(s, &state.codec)).collect();
    Ok(Aggregate { sums, values, recovered_keys })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bresson::key_gen;
    use crate::group_math::{generate_group, rand_unit};
    use crate::seeded_rng;
    use rand::Rng;
    use rand_chacha::ChaCha20Rng;

    /// Everything a test round needs, built without the message bus.
    struct Round {
        params: GroupParams,
        server: KeyPair,
        users: Vec<UserId>,
        mask_keys: BTreeMap<UserId, KeyPair>,
        /// holder -> owner -> share
        held: BTreeMap<UserId, BTreeMap<UserId, KeyShare>>,
        t: usize,
        codec: FixedPointConfig,
    }

    impl Round {
        fn new(params: GroupParams, n: u32, t: usize, frac_bits: u32, rng: &mut ChaCha20Rng) -> Self {
            let server = key_gen(&params, rng);
            let users: Vec<UserId> = (1..=n).map(UserId).collect();
            let mask_keys: BTreeMap<_, _> = users.iter().map(|u| (*u, key_gen(&params, rng))).collect();
            let mut held: BTreeMap<UserId, BTreeMap<UserId, KeyShare>> = BTreeMap::new();
            for (owner, kp) in &mask_keys {
                for s in shamir::share(*owner, &kp.private, t, &users, &params.p, rng).unwrap() {
                    held.entry(s.holder).or_default().insert(*owner, s);
                }
            }
            let codec = FixedPointConfig::new(frac_bits, params.n.clone());
            Round { params, server, users, mask_keys, held, t, codec }
        }

        fn pair_keys(&self, me: UserId) -> BTreeMap<UserId, BigUint> {
            self.users
                .iter()
                .filter(|v| **v != me)
                .map(|v| {
                    (*v, key_agree(&self.params, &self.mask_keys[&me].private, &self.mask_keys[v].public))
                })
                .collect()
        }

        fn state(&self, active: &[UserId], session: u64) -> AggregationState {
            AggregationState {
                params: self.params.clone(),
                server_keys: self.server.clone(),
                registered: self.users.clone(),
                active: active.to_vec(),
                threshold: self.t,
                mask_publics: self.mask_keys.iter().map(|(u, k)| (*u, k.public.clone())).collect(),
                session,
                codec: self.codec.clone(),
            }
        }

        /// Runs one session where `dropped` never send their vector.
        fn run(
            &self,
            inputs: &BTreeMap<UserId, Vec<f64>>,
            dropped: &[UserId],
            session: u64,
            rng: &mut ChaCha20Rng,
        ) -> Result<Aggregate> {
            let active: Vec<UserId> = self.users.iter().filter(|u| !dropped.contains(u)).copied().collect();
            let mut vectors = Vec::new();
            let mut rs = BTreeMap::new();
            for u in &active {
                let r = rand_unit(&self.params.n, rng);
                vectors.push(
                    mask_vector(
                        &self.params,
                        &self.codec,
                        *u,
                        &inputs[u],
                        &r,
                        &self.pair_keys(*u),
                        &self.server.public,
                        session,
                    )
                    .unwrap(),
                );
                rs.insert(*u, r);
            }
            let reveals: Vec<_> = active
                .iter()
                .map(|u| open_seed(&self.params, *u, &rs[u], &self.users, &active, &self.held[u]).unwrap())
                .collect();
            aggregate_unmask(&self.state(&active, session), &vectors, &reveals)
        }
    }

    fn plaintext_sum(codec: &FixedPointConfig, rows: &[&Vec<f64>]) -> Vec<BigUint> {
        let m = rows[0].len();
        (0..m)
            .map(|j| {
                rows.iter()
                    .fold(BigUint::zero(), |acc, r| (acc + encode(r[j], codec).unwrap()) % &codec.modulus)
            })
            .collect()
    }

    #[test]
    fn masks_cancel_over_full_set() {
        let params = generate_group(32, &mut seeded_rng(1)).unwrap();
        let mut rng = seeded_rng(2);
        let round = Round::new(params, 6, 3, 8, &mut rng);
        let m = 17;
        let total = round.users.iter().fold(vec![BigUint::zero(); m], |acc, u| {
            let y = pairwise_mask_sum(&round.params, *u, &round.pair_keys(*u), 9, m);
            acc.into_iter().zip(y).map(|(a, b)| (a + b) % &round.params.n).collect()
        });
        assert!(total.iter().all(|v| v.is_zero()));
    }

    #[test]
    fn single_user_no_peers() {
        let params = generate_group(32, &mut seeded_rng(3)).unwrap();
        let mut rng = seeded_rng(4);
        let round = Round::new(params, 1, 1, 8, &mut rng);
        let inputs = BTreeMap::from([(UserId(1), vec![2.5, -1.0])]);
        let agg = round.run(&inputs, &[], 0, &mut rng).unwrap();
        assert_eq!(agg.values, vec![2.5, -1.0]);
    }

    #[test]
    fn two_users_sum() {
        let params = generate_group(16, &mut seeded_rng(5)).unwrap();
        let mut rng = seeded_rng(6);
        let round = Round::new(params, 2, 2, 4, &mut rng);
        let inputs = BTreeMap::from([(UserId(1), vec![3.0]), (UserId(2), vec![4.0])]);
        let agg = round.run(&inputs, &[], 1, &mut rng).unwrap();
        assert_eq!(agg.values, vec![7.0]);
    }

    #[test]
    fn five_users_vector_roundtrip() {
        let params = generate_group(64, &mut seeded_rng(7)).unwrap();
        let mut rng = seeded_rng(8);
        let round = Round::new(params, 5, 3, 20, &mut rng);
        let inputs: BTreeMap<_, _> =
            round.users.iter().map(|u| (*u, (0..3).map(|_| rng.gen_range(-50.0..50.0)).collect())).collect();
        let agg = round.run(&inputs, &[], 2, &mut rng).unwrap();
        let rows: Vec<_> = inputs.values().collect();
        assert_eq!(agg.sums, plaintext_sum(&round.codec, &rows));
    }

    #[test]
    fn dropped_user_recovered() {
        let params = generate_group(32, &mut seeded_rng(9)).unwrap();
        let mut rng = seeded_rng(10);
        let round = Round::new(params, 3, 2, 8, &mut rng);
        let inputs =
            BTreeMap::from([(UserId(1), vec![1.25]), (UserId(2), vec![-3.5]), (UserId(3), vec![100.0])]);
        let agg = round.run(&inputs, &[UserId(3)], 3, &mut rng).unwrap();
        assert_eq!(agg.values, vec![-2.25]);
        assert_eq!(agg.recovered_keys[&UserId(3)], round.mask_keys[&UserId(3)].private);
    }

    #[test]
    fn too_many_dropouts_abort() {
        let params = generate_group(32, &mut seeded_rng(11)).unwrap();
        let mut rng = seeded_rng(12);
        let round = Round::new(params, 5, 3, 8, &mut rng);
        let inputs: BTreeMap<_, _> = round.users.iter().map(|u| (*u, vec![1.0])).collect();
        let err = round.run(&inputs, &[UserId(1), UserId(2), UserId(3)], 4, &mut rng);
        assert!(matches!(err, Err(Error::RoundAbort { active: 2, threshold: 3 })));
    }

    #[test]
    fn open_seed_contract() {
        let params = generate_group(16, &mut seeded_rng(13)).unwrap();
        let mut rng = seeded_rng(14);
        let round = Round::new(params, 4, 2, 4, &mut rng);
        let r = rand_unit(&round.params.n, &mut rng);
        let all = round.users.clone();
        let reveal = open_seed(&round.params, UserId(1), &r, &all, &all, &round.held[&UserId(1)]).unwrap();
        assert!(reveal.dropout_shares.is_empty());
        let active = [UserId(1), UserId(2), UserId(4)];
        let reveal = open_seed(&round.params, UserId(1), &r, &all, &active, &round.held[&UserId(1)]).unwrap();
        assert_eq!(reveal.dropout_shares.len(), 1);
        assert_eq!(reveal.dropout_shares[0].owner, UserId(3));
        assert!(matches!(
            open_seed(&round.params, UserId(3), &r, &all, &active, &round.held[&UserId(3)]),
            Err(Error::NotActive(UserId(3)))
        ));
    }

    #[test]
    fn recovery_threshold() {
        let params = generate_group(32, &mut seeded_rng(15)).unwrap();
        let mut rng = seeded_rng(16);
        let key = key_gen(&params, &mut rng);
        let holders: Vec<_> = (1..=5).map(UserId).collect();
        let shares = shamir::share(UserId(9), &key.private, 3, &holders, &params.p, &mut rng).unwrap();
        assert_eq!(recover_dropped_key(&shares[..3], 3, &params.p).unwrap(), key.private);
        assert_eq!(recover_dropped_key(&shares[1..5], 3, &params.p).unwrap(), key.private);
        assert!(matches!(
            recover_dropped_key(&shares[..2], 3, &params.p),
            Err(Error::InsufficientShares { .. })
        ));
    }

    #[test]
    fn missing_vector_is_incomplete() {
        let params = generate_group(16, &mut seeded_rng(17)).unwrap();
        let mut rng = seeded_rng(18);
        let round = Round::new(params, 2, 1, 4, &mut rng);
        let state = round.state(&round.users, 0);
        assert!(matches!(aggregate_unmask(&state, &[], &[]), Err(Error::ProtocolIncomplete(_))));
    }

    #[test]
    fn skipping_a_user_does_not_decrypt_to_partial_sum() {
        let params = generate_group(16, &mut seeded_rng(19)).unwrap();
        let mut rng = seeded_rng(20);
        let round = Round::new(params.clone(), 4, 2, 4, &mut rng);
        let inputs: BTreeMap<_, _> = round.users.iter().map(|u| (*u, vec![1.0])).collect();
        let mut vectors = Vec::new();
        let mut seeds = Vec::new();
        for u in &round.users {
            let r = rand_unit(&params.n, &mut rng);
            vectors.push(
                mask_vector(
                    &params,
                    &round.codec,
                    *u,
                    &inputs[u],
                    &r,
                    &round.pair_keys(*u),
                    &round.server.public,
                    0,
                )
                .unwrap(),
            );
            seeds.push(mod_exp(&params.g, &r, &params.n2));
        }
        // server multiplies users 1..3 only, with R over the same subset
        let product = vectors[..3].iter().fold(BigUint::from(1u32), |a, v| a * &v.entries[0] % &params.n2);
        let unb = unblinder(&params, &round.server.private, &blinding_product(&params, &seeds[..3])).unwrap();
        let y = unblind(&params, &unb, &product, 0).unwrap();
        let honest =
            plaintext_sum(&round.codec, &[&inputs[&UserId(1)], &inputs[&UserId(2)], &inputs[&UserId(3)]]);
        assert_ne!(y, honest[0]);
        // with R over everyone the slot is not even well formed
        let unb_all = unblinder(&params, &round.server.private, &blinding_product(&params, &seeds)).unwrap();
        assert!(matches!(
            unblind(&params, &unb_all, &product, 0),
            Err(Error::ForcedAggregationViolation { .. })
        ));
    }
}
