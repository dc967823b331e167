//! Signed consensus messages and quorum certificates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::channel::{NodeId, Payload};
use crate::crypto::{self, Keyring, Signature, SigningKey};

use super::Protocol;

/// Opaque value hash.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    /// The client value a leader proposes for `sequence`. Every
    /// `(sequence, view, leader)` gets a distinct value.
    pub fn fresh(sequence: u64, view: u64, leader: NodeId) -> Self {
        Digest(crypto::hash(&[
            b"value",
            &sequence.to_le_bytes(),
            &view.to_le_bytes(),
            &leader.0.to_le_bytes(),
        ]))
    }

    /// A value nobody proposed, used by conflicting voters.
    pub fn conflicting(sequence: u64, view: u64, voter: NodeId) -> Self {
        Digest(crypto::hash(&[
            b"conflict",
            &sequence.to_le_bytes(),
            &view.to_le_bytes(),
            &voter.0.to_le_bytes(),
        ]))
    }

    pub fn short(&self) -> String {
        format!("{:02x}{:02x}", self.0[0], self.0[1])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MsgKind {
    Proposal,
    Prepare,
    Commit,
    Vote,
    VoteSet,
    ViewChange,
}

impl MsgKind {
    fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusMessage {
    pub protocol: Protocol,
    pub kind: MsgKind,
    /// Voting stage, 1-based; 0 for proposals and view changes.
    pub stage: u8,
    pub view: u64,
    pub sequence: u64,
    pub digest: Digest,
    pub sender: NodeId,
    pub signature: Signature,
    /// Certificate carried along: a proposal's lock proof, a vote set, or a
    /// view-change message's lock.
    pub justify: Option<Arc<QuorumCertificate>>,
}

/// Bytes covered by a signature.
#[allow(clippy::too_many_arguments)]
fn body_hash(
    protocol: Protocol,
    kind: MsgKind,
    stage: u8,
    view: u64,
    sequence: u64,
    digest: &Digest,
    sender: NodeId,
    justify: Option<&QuorumCertificate>,
) -> [u8; 32] {
    let cert = justify.map(|qc| qc.binding()).unwrap_or([0; 32]);
    crypto::hash(&[
        b"msg",
        &[protocol.code(), kind.code(), stage],
        &view.to_le_bytes(),
        &sequence.to_le_bytes(),
        &digest.0,
        &sender.0.to_le_bytes(),
        &cert,
    ])
}

/// Fields that identify a message before it is signed.
#[derive(Debug, Clone, Copy)]
pub struct MsgHeader {
    pub protocol: Protocol,
    pub kind: MsgKind,
    pub stage: u8,
    pub view: u64,
    pub sequence: u64,
}

impl ConsensusMessage {
    pub fn signed(
        key: &SigningKey,
        header: MsgHeader,
        digest: Digest,
        justify: Option<Arc<QuorumCertificate>>,
    ) -> Self {
        let sender = key.node();
        let body = body_hash(
            header.protocol,
            header.kind,
            header.stage,
            header.view,
            header.sequence,
            &digest,
            sender,
            justify.as_deref(),
        );
        ConsensusMessage {
            protocol: header.protocol,
            kind: header.kind,
            stage: header.stage,
            view: header.view,
            sequence: header.sequence,
            digest,
            sender,
            signature: crypto::sign(key, &body),
            justify,
        }
    }

    fn body(&self) -> [u8; 32] {
        body_hash(
            self.protocol,
            self.kind,
            self.stage,
            self.view,
            self.sequence,
            &self.digest,
            self.sender,
            self.justify.as_deref(),
        )
    }

    /// Signature check only; certificates are checked by [`qc_verify`].
    pub fn verify(&self, keys: &Keyring) -> bool {
        self.signature.signer == self.sender && keys.verify(&self.body(), &self.signature)
    }

    pub fn header(&self) -> MsgHeader {
        MsgHeader {
            protocol: self.protocol,
            kind: self.kind,
            stage: self.stage,
            view: self.view,
            sequence: self.sequence,
        }
    }
}

impl Payload for ConsensusMessage {
    /// Votes match on everything but the sender. View changes match on the
    /// target view alone, whatever lock they carry.
    fn quorum_key(&self) -> u64 {
        let digest = match self.kind {
            MsgKind::ViewChange => Digest::default(),
            _ => self.digest,
        };
        let h = crypto::hash(&[
            &[self.protocol.code(), self.kind.code(), self.stage],
            &self.view.to_le_bytes(),
            &self.sequence.to_le_bytes(),
            &digest.0,
        ]);
        u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
    }

    fn brief(&self) -> String {
        let kind = match self.kind {
            MsgKind::Proposal => "prop",
            MsgKind::Prepare => "prep",
            MsgKind::Commit => "cmt",
            MsgKind::Vote => "vote",
            MsgKind::VoteSet => "qc",
            MsgKind::ViewChange => "vc",
        };
        let stage = if self.stage > 0 { self.stage.to_string() } else { String::new() };
        format!("{kind}{stage} v{} s{} {}", self.view, self.sequence, self.digest.short())
    }
}

/// `2f + 1` matching signed votes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuorumCertificate {
    pub protocol: Protocol,
    pub kind: MsgKind,
    pub stage: u8,
    pub view: u64,
    pub sequence: u64,
    pub digest: Digest,
    pub votes: Vec<ConsensusMessage>,
}

impl QuorumCertificate {
    pub fn senders(&self) -> BTreeSet<NodeId> {
        self.votes.iter().map(|v| v.sender).collect()
    }

    /// Hash binding the certificate into messages that carry it.
    pub fn binding(&self) -> [u8; 32] {
        let mut tags: Vec<u8> = Vec::with_capacity(self.votes.len() * 20);
        for v in &self.votes {
            tags.extend_from_slice(&v.sender.0.to_le_bytes());
            tags.extend_from_slice(&v.signature.tag);
        }
        crypto::hash(&[
            b"qc",
            &[self.protocol.code(), self.kind.code(), self.stage],
            &self.view.to_le_bytes(),
            &self.sequence.to_le_bytes(),
            &self.digest.0,
            &tags,
        ])
    }
}

pub fn quorum_size(f: usize) -> usize {
    2 * f + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("insufficient votes: best tally {best} of {needed}")]
pub struct Insufficient {
    pub best: usize,
    pub needed: usize,
}

/// Forms a certificate from individually verified votes. Duplicate senders
/// count once (first occurrence wins); the largest matching group must
/// reach `2f + 1`.
pub fn qc_form(votes: &[ConsensusMessage], f: usize) -> Result<QuorumCertificate, Insufficient> {
    let needed = quorum_size(f);
    let mut seen = BTreeSet::new();
    let mut groups: BTreeMap<(u8, u8, u64, u64, Digest), Vec<&ConsensusMessage>> = BTreeMap::new();
    for v in votes {
        if !seen.insert(v.sender) {
            continue;
        }
        let key = (v.kind.code(), v.stage, v.view, v.sequence, v.digest);
        groups.entry(key).or_default().push(v);
    }
    let best = groups.values().max_by_key(|g| g.len());
    let Some(group) = best.filter(|g| g.len() >= needed) else {
        return Err(Insufficient {
            best: best.map_or(0, |g| g.len()),
            needed,
        });
    };
    let mut chosen: Vec<ConsensusMessage> = group.iter().map(|v| (*v).clone()).collect();
    chosen.sort_by_key(|v| v.sender);
    let head = &chosen[0];
    Ok(QuorumCertificate {
        protocol: head.protocol,
        kind: head.kind,
        stage: head.stage,
        view: head.view,
        sequence: head.sequence,
        digest: head.digest,
        votes: chosen,
    })
}

/// Full check of a received certificate.
pub fn qc_verify(qc: &QuorumCertificate, keys: &Keyring, f: usize) -> bool {
    let senders = qc.senders();
    senders.len() == qc.votes.len()
        && senders.len() >= quorum_size(f)
        && qc.votes.iter().all(|v| {
            v.protocol == qc.protocol
                && v.kind == qc.kind
                && v.stage == qc.stage
                && v.view == qc.view
                && v.sequence == qc.sequence
                && v.digest == qc.digest
                && v.verify(keys)
        })
}
