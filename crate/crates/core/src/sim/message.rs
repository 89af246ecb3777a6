use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cipher::{EncryptedImage, ValKey};
use crate::error::{Error, Result};
use crate::keys::{EncPosKey, IncValKey, UserKey, UserSeeds, WrapKey};

/// Where images and keys come from: a single owner or a group.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Source {
    Owner(String),
    Group(String),
}

impl Source {
    pub fn id(&self) -> &str {
        match self {
            Source::Owner(s) | Source::Group(s) => s,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Owner(o) => write!(f, "owner:{o}"),
            Source::Group(g) => write!(f, "group:{g}"),
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Source> {
        match s.split_once(':') {
            Some(("owner", o)) => Ok(Source::Owner(o.to_string())),
            Some(("group", g)) => Ok(Source::Group(g.to_string())),
            _ => Err(Error::contract(format!("bad source '{s}'"))),
        }
    }
}

impl From<Source> for String {
    fn from(s: Source) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Source {
    type Error = Error;

    fn try_from(s: String) -> Result<Source> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum EntityId {
    Owner(String),
    Cs,
    Kmc,
    Organizer(String),
    User(String),
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityId::Owner(o) => write!(f, "owner:{o}"),
            EntityId::Cs => f.write_str("cs"),
            EntityId::Kmc => f.write_str("kmc"),
            EntityId::Organizer(g) => write!(f, "organizer:{g}"),
            EntityId::User(u) => write!(f, "user:{u}"),
        }
    }
}

impl FromStr for EntityId {
    type Err = Error;

    fn from_str(s: &str) -> Result<EntityId> {
        match s.split_once(':') {
            None if s == "cs" => Ok(EntityId::Cs),
            None if s == "kmc" => Ok(EntityId::Kmc),
            Some(("owner", x)) => Ok(EntityId::Owner(x.to_string())),
            Some(("organizer", x)) => Ok(EntityId::Organizer(x.to_string())),
            Some(("user", x)) => Ok(EntityId::User(x.to_string())),
            _ => Err(Error::contract(format!("bad entity '{s}'"))),
        }
    }
}

impl From<EntityId> for String {
    fn from(e: EntityId) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for EntityId {
    type Error = Error;

    fn try_from(s: String) -> Result<EntityId> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MsgKind {
    Outsource,
    AuthGrant,
    Query,
    KeyRequest,
    KeyResponse,
    Result,
    GroupCreate,
    GroupJoin,
    GroupLeave,
    ImageAdd,
    ImageDelete,
}

/// A position key as the KMC hands it out: readable only by the user
/// (owner path) or sealed for the group (group path).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeliveredKey {
    Plain(EncPosKey),
    Wrapped(#[serde(with = "hex::serde")] Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyItem {
    pub source: Source,
    pub owner: String,
    pub iid: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyDelivery {
    pub iid: String,
    pub source: Source,
    pub key: DeliveredKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub rank: usize,
    pub iid: String,
    pub source: Source,
    pub distance: f64,
    pub image: EncryptedImage,
    pub key: DeliveredKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    /// Owner → CS: ciphertexts to store and index.
    Images { owner: String, images: Vec<EncryptedImage> },
    /// Owner → KMC: position keys under the owner's user key.
    PosKeys { owner: String, keys: Vec<EncPosKey> },
    /// Owner or organizer → user: what the user needs to query and decrypt.
    UserGrant { source: Source, val_key: ValKey, user_key: UserKey, wrap_key: Option<WrapKey> },
    /// Owner or organizer → KMC: link key (or an extension of one).
    LinkKey { source: Source, uid: String, link: UserKey },
    /// Owner or organizer → CS: authorization record.
    Grant { source: Source, uid: String },
    /// Organizer → KMC: the group's envelope key.
    GroupWrapKey { gid: String, key: WrapKey },
    /// Organizer → owner: group key material for computing increments.
    GroupKeys { gid: String, user_seeds: UserSeeds, val_key: ValKey },
    /// Owner → KMC: increment user key (or an extension of one).
    IncUsr { gid: String, owner: String, inc: UserKey },
    /// Owner → CS: increment value key.
    IncVal { gid: String, owner: String, inc: IncValKey },
    /// Owner → organizer: block counts of the owner's images.
    MemberSizes { gid: String, owner: String, counts: BTreeSet<[usize; 3]> },
    /// Owner → CS / KMC / organizer: membership ends.
    Leave { gid: String, owner: String },
    /// User → CS.
    Query { qid: String, uid: String, trapdoors: Vec<(Source, EncryptedImage)>, m: usize },
    /// CS → KMC.
    KeyRequest { qid: String, uid: String, items: Vec<KeyItem> },
    /// KMC → CS.
    KeyResponse { qid: String, keys: Vec<KeyDelivery> },
    /// CS → user.
    Results { qid: String, items: Vec<ResultItem> },
    /// Owner → CS / KMC.
    Delete { owner: String, iid: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: EntityId,
    pub receiver: EntityId,
    pub kind: MsgKind,
    pub qid: Option<String>,
    pub payload: Payload,
}

impl Message {
    pub fn new(sender: EntityId, receiver: EntityId, kind: MsgKind, payload: Payload) -> Self {
        Message { sender, receiver, kind, qid: None, payload }
    }

    pub fn digest(&self) -> String {
        let body = serde_json::to_vec(&self.payload).expect("payload serializes");
        hex::encode(Sha256::digest(body))
    }
}

/// One line of `log/messages.jsonl`; payloads appear only as digests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub op: u64,
    pub qid: Option<String>,
    pub sender: EntityId,
    pub receiver: EntityId,
    pub kind: MsgKind,
    pub digest: String,
}

/// Interaction rounds of one query, by party pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rounds {
    pub cs_kmc: usize,
    pub cs_user: usize,
    pub kmc_user: usize,
}

impl Rounds {
    /// A round is a request and its reply; a lone message counts as one.
    pub fn from_log<'a>(entries: impl Iterator<Item = &'a LogEntry>) -> Rounds {
        let (mut cs_kmc, mut cs_user, mut kmc_user) = (0usize, 0usize, 0usize);
        for e in entries {
            let pair = [&e.sender, &e.receiver];
            let has = |f: fn(&EntityId) -> bool| pair.iter().any(|x| f(x));
            let is_cs = |x: &EntityId| *x == EntityId::Cs;
            let is_kmc = |x: &EntityId| *x == EntityId::Kmc;
            let is_user = |x: &EntityId| matches!(x, EntityId::User(_));
            if has(is_cs) && has(is_kmc) {
                cs_kmc += 1;
            } else if has(is_cs) && has(is_user) {
                cs_user += 1;
            } else if has(is_kmc) && has(is_user) {
                kmc_user += 1;
            }
        }
        Rounds { cs_kmc: cs_kmc.div_ceil(2), cs_user: cs_user.div_ceil(2), kmc_user: kmc_user.div_ceil(2) }
    }
}
