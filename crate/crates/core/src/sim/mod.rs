//! In-process simulation of the five parties: owners, the cloud server,
//! the key management center, group organizers and users. Every
//! interaction is a [`Message`] on a FIFO bus, logged with a payload digest.

mod cs;
mod eval;
mod kmc;
mod message;
mod parties;
mod store;

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cs::CloudServer;
pub use eval::{eval_precision, partition, EvalRun, LabeledImage};
pub use kmc::Kmc;
pub use message::{
    DeliveredKey, EntityId, KeyDelivery, KeyItem, LogEntry, Message, MsgKind, Payload, ResultItem, Rounds, Source,
};
pub use parties::{Grant, MemberKeys, Organizer, OwnedImage, Owner, QueryHit, User};

use crate::cipher::{
    alphabet_chi2, encrypt_coeffs, gen_val_key, log2_factorial, PosSeeds, SecurityStrength, ValKey, ValSeeds, ALPHABET,
    DC_LEN_DOMAIN, PAPER_FEATURE_BITS,
};
use crate::codec::{decode_jpeg, CoeffImage};
use crate::error::{Error, Result};
use crate::keys::UserKey;
use crate::Weights;

/// Scheme parameters shared by every party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_pmt1: usize,
    pub n_pmt2: usize,
    pub k_owner: usize,
    pub k_group: usize,
    pub k_g: usize,
    pub weights: Weights,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { n_pmt1: 5, n_pmt2: 5, k_owner: 50, k_group: 50, k_g: 50, weights: Weights::default() }
    }
}

/// What a handler may use besides its own state.
pub struct Cx<'a> {
    pub rng: &'a mut ChaCha20Rng,
    pub config: &'a SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub qid: String,
    pub hits: Vec<QueryHit>,
    pub rounds: Rounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub owner: String,
    pub iid: String,
    pub block_counts: [usize; 3],
    pub strength: SecurityStrength,
    pub chi2_n1: f64,
    pub chi2_n5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub images: Vec<ImageReport>,
    pub feature_bits: f64,
    pub paper_feature_bits: f64,
    pub mean_total_bits: f64,
    /// Images whose histogram is flatter with five tables than with one.
    pub flatter_at_n5: usize,
}

/// Ids double as file names.
pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Range(format!("bad id '{id}': use letters, digits, '-', '_' and '.'")))
    }
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub config: SimConfig,
    seed: u64,
    ops: u64,
    pub cs: CloudServer,
    pub kmc: Kmc,
    pub owners: BTreeMap<String, Owner>,
    pub organizers: BTreeMap<String, Organizer>,
    pub users: BTreeMap<String, User>,
    pub log: Vec<LogEntry>,
}

impl Simulator {
    pub fn new(config: SimConfig, seed: u64) -> Simulator {
        Simulator {
            config,
            seed,
            ops: 0,
            cs: CloudServer::default(),
            kmc: Kmc::default(),
            owners: BTreeMap::new(),
            organizers: BTreeMap::new(),
            users: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of operations run so far; it feeds each operation's RNG.
    pub fn ops(&self) -> u64 {
        self.ops
    }

    fn rng_for(&self, counter: u64, label: &str) -> ChaCha20Rng {
        let mut h = Sha256::new();
        h.update(b"coeffcrypt sim");
        h.update(self.seed.to_le_bytes());
        h.update(counter.to_le_bytes());
        h.update(label.as_bytes());
        ChaCha20Rng::from_seed(h.finalize().into())
    }

    /// Runs one operation; on any error (including a boundary violation
    /// afterwards) the whole state is rolled back.
    fn transact<T>(&mut self, label: &str, f: impl FnOnce(&mut Self, &mut ChaCha20Rng) -> Result<T>) -> Result<T> {
        let backup = self.clone();
        self.ops += 1;
        let mut rng = self.rng_for(self.ops, label);
        let out = f(self, &mut rng).and_then(|v| match self.boundary_violations().first() {
            Some(v) => Err(Error::contract(format!("knowledge boundary violated: {v}"))),
            None => Ok(v),
        });
        if out.is_err() {
            *self = backup;
        }
        out
    }

    /// Delivers messages in FIFO order, queueing replies behind them.
    fn run(&mut self, msgs: Vec<Message>, rng: &mut ChaCha20Rng) -> Result<()> {
        let mut queue: VecDeque<Message> = msgs.into();
        while let Some(msg) = queue.pop_front() {
            self.log.push(LogEntry {
                seq: self.log.len() as u64 + 1,
                op: self.ops,
                qid: msg.qid.clone(),
                sender: msg.sender.clone(),
                receiver: msg.receiver.clone(),
                kind: msg.kind,
                digest: msg.digest(),
            });
            let mut cx = Cx { rng, config: &self.config };
            let missing = || Error::NotFound(format!("entity {}", msg.receiver));
            let replies = match msg.receiver.clone() {
                EntityId::Cs => self.cs.handle(msg, &mut cx)?,
                EntityId::Kmc => self.kmc.handle(msg, &mut cx)?,
                EntityId::Owner(o) => self.owners.get_mut(&o).ok_or_else(missing)?.handle(msg, &mut cx)?,
                EntityId::Organizer(g) => self.organizers.get_mut(&g).ok_or_else(missing)?.handle(msg, &mut cx)?,
                EntityId::User(u) => self.users.get_mut(&u).ok_or_else(missing)?.handle(msg, &mut cx)?,
            };
            queue.extend(replies);
        }
        Ok(())
    }

    /// Injects a hand-built message, as a misbehaving party would.
    pub fn send(&mut self, msg: Message) -> Result<()> {
        self.transact("send", |s, rng| s.run(vec![msg], rng))
    }

    fn owner_mut(&mut self, oid: &str) -> Result<&mut Owner> {
        self.owners.get_mut(oid).ok_or_else(|| Error::NotFound(format!("owner {oid}")))
    }

    fn organizer_mut(&mut self, gid: &str) -> Result<&mut Organizer> {
        self.organizers.get_mut(gid).ok_or_else(|| Error::NotFound(format!("group {gid}")))
    }

    fn need_user(&self, uid: &str) -> Result<()> {
        if self.users.contains_key(uid) {
            Ok(())
        } else {
            Err(Error::NotFound(format!("user {uid}")))
        }
    }

    pub fn add_owner(&mut self, oid: &str) -> Result<()> {
        check_id(oid)?;
        if self.owners.contains_key(oid) {
            return Err(Error::Duplicate(format!("owner {oid}")));
        }
        self.transact("owner", |s, rng| {
            let owner = Owner::new(oid, &mut Cx { rng, config: &s.config })?;
            s.owners.insert(oid.to_string(), owner);
            Ok(())
        })
    }

    pub fn add_user(&mut self, uid: &str) -> Result<()> {
        check_id(uid)?;
        if self.users.contains_key(uid) {
            return Err(Error::Duplicate(format!("user {uid}")));
        }
        self.transact("user", |s, _| {
            s.users.insert(uid.to_string(), User::new(uid));
            Ok(())
        })
    }

    fn ship(&mut self, oid: &str, batch: Vec<(String, Vec<u8>)>, kind: MsgKind) -> Result<()> {
        for (iid, _) in &batch {
            check_id(iid)?;
        }
        self.transact("outsource", |s, rng| {
            let config = s.config.clone();
            let msgs = s.owner_mut(oid)?.outsource(batch, kind, &mut Cx { rng, config: &config })?;
            s.run(msgs, rng)
        })
    }

    /// Encrypts and uploads a batch of `(iid, jpeg)` pairs.
    pub fn outsource(&mut self, oid: &str, batch: Vec<(String, Vec<u8>)>) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::contract("nothing to outsource"));
        }
        self.ship(oid, batch, MsgKind::Outsource)
    }

    pub fn image_add(&mut self, oid: &str, iid: &str, jpeg: Vec<u8>) -> Result<()> {
        self.ship(oid, vec![(iid.to_string(), jpeg)], MsgKind::ImageAdd)
    }

    pub fn image_delete(&mut self, oid: &str, iid: &str) -> Result<()> {
        self.transact("delete", |s, rng| {
            let msgs = s.owner_mut(oid)?.delete(iid)?;
            s.run(msgs, rng)
        })
    }

    pub fn authorize(&mut self, oid: &str, uid: &str) -> Result<()> {
        self.need_user(uid)?;
        self.transact("authorize", |s, rng| {
            let config = s.config.clone();
            let msgs = s.owner_mut(oid)?.authorize(uid, &mut Cx { rng, config: &config })?;
            s.run(msgs, rng)
        })
    }

    pub fn group_create(&mut self, gid: &str) -> Result<()> {
        check_id(gid)?;
        if self.organizers.contains_key(gid) {
            return Err(Error::Duplicate(format!("group {gid}")));
        }
        self.transact("group-create", |s, rng| {
            let (org, msgs) = Organizer::new(gid, &mut Cx { rng, config: &s.config })?;
            s.organizers.insert(gid.to_string(), org);
            s.run(msgs, rng)
        })
    }

    pub fn group_join(&mut self, gid: &str, oid: &str) -> Result<()> {
        if !self.owners.contains_key(oid) {
            return Err(Error::NotFound(format!("owner {oid}")));
        }
        self.transact("group-join", |s, rng| {
            let msgs = s.organizer_mut(gid)?.admit(oid)?;
            s.run(msgs, rng)
        })
    }

    pub fn group_leave(&mut self, gid: &str, oid: &str) -> Result<()> {
        self.organizer_mut(gid)?;
        self.transact("group-leave", |s, rng| {
            let msgs = s.owner_mut(oid)?.leave(gid)?;
            s.run(msgs, rng)
        })
    }

    pub fn group_authorize(&mut self, gid: &str, uid: &str) -> Result<()> {
        self.need_user(uid)?;
        self.transact("group-authorize", |s, rng| {
            let config = s.config.clone();
            let msgs = s.organizer_mut(gid)?.authorize(uid, &mut Cx { rng, config: &config })?;
            s.run(msgs, rng)
        })
    }

    /// One retrieval: a single query to the CS, one key request to the KMC,
    /// one result back; the user then decrypts every hit.
    pub fn query(&mut self, uid: &str, query: &CoeffImage, sources: &[Source], m: usize) -> Result<QueryOutcome> {
        self.need_user(uid)?;
        if m == 0 {
            return Err(Error::Range("m must be at least 1".into()));
        }
        self.transact("query", |s, rng| {
            let qid = format!("q{}", s.ops);
            let msg = s.users[uid].query(&qid, query, sources, m, &mut Cx { rng, config: &s.config })?;
            s.run(vec![msg], rng)?;
            let user = s.users.get_mut(uid).expect("checked above");
            let items = user.inbox.remove(&qid).ok_or_else(|| Error::contract(format!("query {qid} got no result")))?;
            let hits = user.open(&items)?;
            Ok(QueryOutcome { rounds: s.rounds(&qid), qid, hits })
        })
    }

    pub fn rounds(&self, qid: &str) -> Rounds {
        Rounds::from_log(self.log.iter().filter(|e| e.qid.as_deref() == Some(qid)))
    }

    fn value_keys(&self) -> Vec<(String, &ValKey)> {
        let mut out: Vec<(String, &ValKey)> = Vec::new();
        out.extend(self.owners.values().map(|o| (format!("owner {}", o.oid), &o.val_key)));
        out.extend(self.organizers.values().map(|g| (format!("group {}", g.gid), &g.val_key)));
        out
    }

    fn user_keys(&self) -> Vec<(String, Option<&str>, &UserKey)> {
        let mut out: Vec<(String, Option<&str>, &UserKey)> = Vec::new();
        for o in self.owners.values() {
            out.push((format!("user key of owner {}", o.oid), None, &o.user_key));
            for (uid, k) in &o.issued {
                out.push((format!("key of {uid} from {}", o.oid), Some(uid), k));
            }
        }
        for g in self.organizers.values() {
            out.push((format!("user key of group {}", g.gid), None, &g.user_key));
            for (uid, k) in &g.issued {
                out.push((format!("key of {uid} from {}", g.gid), Some(uid), k));
            }
        }
        for (src, links) in &self.kmc.links {
            for (uid, k) in links {
                out.push((format!("link {src}→{uid}"), None, k));
            }
        }
        for (gid, incs) in &self.kmc.inc_usr {
            for (oid, k) in incs {
                out.push((format!("increment {oid}→{gid}"), None, k));
            }
        }
        out
    }

    /// Checks who knows what on the current state:
    /// the KMC holds no value key, the CS holds no user key,
    /// no user holds another user's key, and no user ever talked to the KMC.
    pub fn boundary_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let kmc = serde_json::to_string(&self.kmc).expect("state serializes");
        for (who, vk) in self.value_keys() {
            let leaked = vk.pmtv.iter().flatten().chain(vk.pmt_dcl.iter().flatten()).any(|t| {
                let t = serde_json::to_string(t).expect("permutation serializes");
                kmc.contains(&t)
            });
            if leaked {
                out.push(format!("KMC state holds the value key of {who}"));
            }
        }
        let cs = self.cs.scan_text();
        let users: Vec<(&String, String)> =
            self.users.iter().map(|(u, x)| (u, serde_json::to_string(x).expect("state serializes"))).collect();
        for (who, holder, key) in self.user_keys() {
            let markers = key.markers();
            if markers.iter().any(|m| cs.contains(m)) {
                out.push(format!("CS state holds the {who}"));
            }
            if let Some(holder) = holder {
                for (uid, text) in &users {
                    if uid.as_str() != holder && markers.iter().any(|m| text.contains(m)) {
                        out.push(format!("user {uid} holds the {who}"));
                    }
                }
            }
        }
        for e in &self.log {
            let pair = [&e.sender, &e.receiver];
            if pair.contains(&&EntityId::Kmc) && pair.iter().any(|x| matches!(x, EntityId::User(_))) {
                out.push(format!("message {} between {} and {}", e.seq, e.sender, e.receiver));
            }
        }
        out
    }

    /// Bit strengths of every outsourced image, and how flat the value
    /// histogram gets with one table against five. Uses fresh throwaway
    /// keys derived from the seed; the state is not touched.
    pub fn security_report(&self) -> Result<SecurityReport> {
        let mut rng = self.rng_for(u64::MAX, "security-report");
        let mut images = Vec::new();
        for o in self.owners.values() {
            for (iid, rec) in &o.images {
                let bytes = o.plain.get(iid).ok_or_else(|| Error::NotFound(format!("plaintext of {iid}")))?;
                let img = decode_jpeg(bytes)?;
                let mut chi = [0.0; 2];
                for (slot, n) in chi.iter_mut().zip([1, 5]) {
                    let vk = gen_val_key(&ValSeeds::generate(&mut rng), n, self.config.n_pmt2)?;
                    let (enc, _) = encrypt_coeffs(&img, iid, &vk, &PosSeeds::generate(&mut rng))?;
                    *slot = alphabet_chi2(&enc);
                }
                images.push(ImageReport {
                    owner: o.oid.clone(),
                    iid: iid.clone(),
                    block_counts: rec.block_counts,
                    strength: rec.strength.clone(),
                    chi2_n1: chi[0],
                    chi2_n5: chi[1],
                });
            }
        }
        let mean_total_bits = if images.is_empty() {
            0.0
        } else {
            images.iter().map(|r| r.strength.total).sum::<f64>() / images.len() as f64
        };
        Ok(SecurityReport {
            flatter_at_n5: images.iter().filter(|r| r.chi2_n5 < r.chi2_n1).count(),
            images,
            feature_bits: 3.0 * self.config.n_pmt1 as f64 * log2_factorial(ALPHABET.len())
                + 3.0 * self.config.n_pmt2 as f64 * log2_factorial(DC_LEN_DOMAIN),
            paper_feature_bits: PAPER_FEATURE_BITS,
            mean_total_bits,
        })
    }
}
