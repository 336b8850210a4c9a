//! Byte encodings of every message that crosses the bus.
//!
//! Integers are big-endian `u32`; group elements use the fixed width of
//! `Z_{N^2}`; reals are IEEE-754 `f64`. The enum below is the complete list
//! of what users and the server ever send each other: key material,
//! encrypted shares, public trees and candidate thresholds, masked vectors,
//! active lists and seed reveals. None of them carries rows, labels or an
//! unmasked per-user statistic.

use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::group_math::GroupParams;
use crate::secagg::{MaskedVector, SeedReveal};
use crate::shamir::{self, KeyShare};
use crate::simnet::MessageKind;
use crate::transport::sealed_len;
use crate::UserId;

#[derive(Clone, Debug, PartialEq)]
pub struct KeyEntry {
    pub user: UserId,
    pub transport: BigUint,
    pub mask: BigUint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeStage {
    /// Tree still growing; users route rows through it.
    Partial,
    /// Finished tree; users add it to their margins.
    Final,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatsRequest {
    /// `[W, H, W_L, H_L, ...]` for the open nodes of the last partial tree.
    Level,
    /// `[row count, positive count]`.
    LabelPrior,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    PublicKeys(KeyEntry),
    KeyDirectory {
        server_mask: BigUint,
        threshold: u32,
        entries: Vec<KeyEntry>,
    },
    /// Sealed share of `owner`'s mask key for `holder`, relayed by the server.
    ShareCiphertext {
        owner: UserId,
        holder: UserId,
        sealed: Vec<u8>,
    },
    PublishedTree {
        stage: TreeStage,
        index: u32,
        text: String,
    },
    BaseMargin(f64),
    CandidateList {
        request: StatsRequest,
        candidates: Vec<(u32, f64)>,
    },
    MaskedVector(MaskedVector),
    ActiveList(Vec<UserId>),
    SeedReveal(SeedReveal),
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::PublicKeys(_) => MessageKind::PublicKeys,
            Message::KeyDirectory { .. } => MessageKind::KeyDirectory,
            Message::ShareCiphertext { .. } => MessageKind::ShareCiphertext,
            Message::PublishedTree { .. } | Message::BaseMargin(_) => MessageKind::PublishedTree,
            Message::CandidateList { .. } => MessageKind::CandidateList,
            Message::MaskedVector(_) => MessageKind::MaskedVector,
            Message::ActiveList(_) => MessageKind::ActiveList,
            Message::SeedReveal(_) => MessageKind::SeedReveal,
        }
    }

    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::PublicKeys(e) => put_entry(&mut out, params, e),
            Message::KeyDirectory { server_mask, threshold, entries } => {
                out.extend(params.encode_element(server_mask));
                put_u32(&mut out, *threshold);
                put_u32(&mut out, entries.len() as u32);
                for e in entries {
                    put_entry(&mut out, params, e);
                }
            }
            Message::ShareCiphertext { owner, holder, sealed } => {
                put_u32(&mut out, owner.0);
                put_u32(&mut out, holder.0);
                out.extend(sealed);
            }
            Message::PublishedTree { stage, index, text } => {
                out.push(match stage {
                    TreeStage::Partial => 0,
                    TreeStage::Final => 1,
                });
                put_u32(&mut out, *index);
                put_u32(&mut out, text.len() as u32);
                out.extend(text.as_bytes());
            }
            Message::BaseMargin(v) => {
                out.push(2);
                out.extend(v.to_be_bytes());
            }
            Message::CandidateList { request, candidates } => {
                out.push(match request {
                    StatsRequest::Level => 0,
                    StatsRequest::LabelPrior => 1,
                });
                put_u32(&mut out, candidates.len() as u32);
                for (f, t) in candidates {
                    put_u32(&mut out, *f);
                    out.extend(t.to_be_bytes());
                }
            }
            Message::MaskedVector(v) => {
                put_u32(&mut out, v.sender.0);
                put_u32(&mut out, v.entries.len() as u32);
                for e in &v.entries {
                    out.extend(params.encode_element(e));
                }
            }
            Message::ActiveList(ids) => {
                put_u32(&mut out, ids.len() as u32);
                for u in ids {
                    put_u32(&mut out, u.0);
                }
            }
            Message::SeedReveal(r) => {
                put_u32(&mut out, r.sender.0);
                out.extend(params.encode_element(&r.seed));
                put_u32(&mut out, r.dropout_shares.len() as u32);
                for s in &r.dropout_shares {
                    out.extend(s.to_bytes(&params.p));
                }
            }
        }
        out
    }

    pub fn decode(kind: MessageKind, bytes: &[u8], params: &GroupParams) -> Result<Message> {
        let mut r = Reader { bytes, pos: 0 };
        let e = params.element_bytes();
        let msg = match kind {
            MessageKind::PublicKeys => Message::PublicKeys(r.entry(e)?),
            MessageKind::KeyDirectory => {
                let server_mask = r.element(e)?;
                let threshold = r.u32()?;
                let count = r.u32()? as usize;
                r.expect_remaining(count * (4 + 2 * e))?;
                let entries = (0..count).map(|_| r.entry(e)).collect::<Result<_>>()?;
                Message::KeyDirectory { server_mask, threshold, entries }
            }
            MessageKind::ShareCiphertext => Message::ShareCiphertext {
                owner: UserId(r.u32()?),
                holder: UserId(r.u32()?),
                sealed: r.take(sealed_len(shamir::encoded_len(&params.p)))?.to_vec(),
            },
            MessageKind::PublishedTree => match r.u8()? {
                2 => Message::BaseMargin(r.f64()?),
                stage @ (0 | 1) => Message::PublishedTree {
                    stage: if stage == 0 { TreeStage::Partial } else { TreeStage::Final },
                    index: r.u32()?,
                    text: {
                        let len = r.u32()? as usize;
                        String::from_utf8(r.take(len)?.to_vec())
                            .map_err(|_| Error::Decode("tree text is not UTF-8".into()))?
                    },
                },
                other => return Err(Error::Decode(format!("unknown tree stage {other}"))),
            },
            MessageKind::CandidateList => {
                let request = match r.u8()? {
                    0 => StatsRequest::Level,
                    1 => StatsRequest::LabelPrior,
                    other => return Err(Error::Decode(format!("unknown stats request {other}"))),
                };
                let count = r.u32()? as usize;
                r.expect_remaining(count * 12)?;
                let candidates = (0..count).map(|_| Ok((r.u32()?, r.f64()?))).collect::<Result<_>>()?;
                Message::CandidateList { request, candidates }
            }
            MessageKind::MaskedVector => {
                let sender = UserId(r.u32()?);
                let m = r.u32()? as usize;
                r.expect_remaining(m * e)?;
                let entries = (0..m).map(|_| r.element(e)).collect::<Result<_>>()?;
                Message::MaskedVector(MaskedVector { sender, entries })
            }
            MessageKind::ActiveList => {
                let count = r.u32()? as usize;
                r.expect_remaining(count * 4)?;
                Message::ActiveList((0..count).map(|_| r.u32().map(UserId)).collect::<Result<_>>()?)
            }
            MessageKind::SeedReveal => {
                let sender = UserId(r.u32()?);
                let seed = r.element(e)?;
                let count = r.u32()? as usize;
                let width = shamir::encoded_len(&params.p);
                r.expect_remaining(count * width)?;
                let dropout_shares = (0..count)
                    .map(|_| KeyShare::from_bytes(r.take(width)?, &params.p))
                    .collect::<Result<_>>()?;
                Message::SeedReveal(SeedReveal { sender, seed, dropout_shares })
            }
            MessageKind::Compute => return Err(Error::Decode("compute is not a message".into())),
        };
        if r.pos != bytes.len() {
            return Err(Error::Decode(format!("{} trailing bytes in {}", bytes.len() - r.pos, kind.name())));
        }
        Ok(msg)
    }
}

/// Encoded size of a masked vector of `m` entries.
pub fn masked_vector_len(params: &GroupParams, m: usize) -> usize {
    8 + m * params.element_bytes()
}

/// Encoded size of a seed reveal carrying `shares` dropout shares.
pub fn seed_reveal_len(params: &GroupParams, shares: usize) -> usize {
    8 + params.element_bytes() + shares * shamir::encoded_len(&params.p)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend(v.to_be_bytes());
}

fn put_entry(out: &mut Vec<u8>, params: &GroupParams, e: &KeyEntry) {
    put_u32(out, e.user.0);
    out.extend(params.encode_element(&e.transport));
    out.extend(params.encode_element(&e.mask));
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Decode("message truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn expect_remaining(&self, n: usize) -> Result<()> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Decode("message truncated".into()));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn element(&mut self, width: usize) -> Result<BigUint> {
        Ok(BigUint::from_bytes_be(self.take(width)?))
    }

    fn entry(&mut self, width: usize) -> Result<KeyEntry> {
        Ok(KeyEntry {
            user: UserId(self.u32()?),
            transport: self.element(width)?,
            mask: self.element(width)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_math::generate_group;
    use crate::seeded_rng;

    #[test]
    fn every_message_roundtrips() {
        let params = generate_group(32, &mut seeded_rng(1)).unwrap();
        let el = |v: u64| BigUint::from(v);
        let entry = KeyEntry { user: UserId(3), transport: el(12345), mask: el(999) };
        let share = KeyShare { owner: UserId(2), holder: UserId(5), x: 5, y: el(77) };
        let msgs = vec![
            Message::PublicKeys(entry.clone()),
            Message::KeyDirectory { server_mask: el(4), threshold: 3, entries: vec![entry.clone(), entry] },
            Message::ShareCiphertext {
                owner: UserId(1),
                holder: UserId(2),
                sealed: vec![9; sealed_len(shamir::encoded_len(&params.p))],
            },
            Message::PublishedTree {
                stage: TreeStage::Final,
                index: 7,
                text: "tree max_depth=0 lambda=1 gamma=0\n0 leaf weight=0.5\n".into(),
            },
            Message::BaseMargin(-1.25),
            Message::CandidateList { request: StatsRequest::Level, candidates: vec![(0, 0.5), (4, 1e-3)] },
            Message::MaskedVector(MaskedVector { sender: UserId(4), entries: vec![el(1), el(2), el(3)] }),
            Message::ActiveList(vec![UserId(1), UserId(4)]),
            Message::SeedReveal(SeedReveal { sender: UserId(1), seed: el(8), dropout_shares: vec![share] }),
        ];
        for msg in msgs {
            let bytes = msg.encode(&params);
            assert_eq!(Message::decode(msg.kind(), &bytes, &params).unwrap(), msg);
            assert!(Message::decode(msg.kind(), &bytes[..bytes.len() - 1], &params).is_err());
        }
    }

    #[test]
    fn declared_lengths() {
        let params = generate_group(32, &mut seeded_rng(2)).unwrap();
        let v = MaskedVector { sender: UserId(1), entries: vec![BigUint::from(5u32); 10] };
        assert_eq!(Message::MaskedVector(v).encode(&params).len(), masked_vector_len(&params, 10));
        let r = SeedReveal { sender: UserId(1), seed: BigUint::from(3u32), dropout_shares: vec![] };
        assert_eq!(Message::SeedReveal(r).encode(&params).len(), seed_reveal_len(&params, 0));
    }
}
