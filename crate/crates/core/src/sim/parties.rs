use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::cs::kind_name;
use super::message::{DeliveredKey, EntityId, Message, MsgKind, Payload, ResultItem, Source};
use super::{Cx, SimConfig};
use crate::cipher::{gen_val_key, img_dec, img_enc, security_strength, trap_gen, SecurityStrength, ValKey, ValSeeds};
use crate::codec::{decode_jpeg, CoeffImage};
use crate::error::{Error, Result};
use crate::keys::{
    derive_inc_usr_key, derive_inc_val_key, gen_user_key, img_key_enc, unwrap_for_group, user_key_dec_for,
    user_key_enc, user_key_enc_for, user_recover_pos_key, UserKey, UserSeeds, WrapKey,
};

fn seeded(cx: &mut Cx) -> Result<UserKey> {
    gen_user_key(&UserSeeds::generate(cx.rng))
}

fn val_key(config: &SimConfig, cx: &mut Cx) -> Result<ValKey> {
    gen_val_key(&ValSeeds::generate(cx.rng), config.n_pmt1, config.n_pmt2)
}

/// Group key material a member holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberKeys {
    pub user_key: UserKey,
    pub val_key: ValKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnedImage {
    pub block_counts: [usize; 3],
    pub strength: SecurityStrength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Owner {
    pub oid: String,
    pub val_key: ValKey,
    pub user_key: UserKey,
    /// User keys issued to authorized users, by uid.
    pub issued: BTreeMap<String, UserKey>,
    pub groups: BTreeMap<String, MemberKeys>,
    pub images: BTreeMap<String, OwnedImage>,
    /// The owner's own plaintext JPEGs, kept locally.
    #[serde(skip)]
    pub plain: BTreeMap<String, Vec<u8>>,
}

impl Owner {
    pub fn new(oid: &str, cx: &mut Cx) -> Result<Owner> {
        let config = cx.config.clone();
        Ok(Owner {
            oid: oid.to_string(),
            val_key: val_key(&config, cx)?,
            user_key: seeded(cx)?,
            issued: BTreeMap::new(),
            groups: BTreeMap::new(),
            images: BTreeMap::new(),
            plain: BTreeMap::new(),
        })
    }

    fn me(&self) -> EntityId {
        EntityId::Owner(self.oid.clone())
    }

    fn msg(&self, to: EntityId, kind: MsgKind, payload: Payload) -> Message {
        Message::new(self.me(), to, kind, payload)
    }

    /// Encrypts a batch, keeps the plaintext locally, and ships ciphertexts
    /// to the CS and position keys to the KMC. New block counts trigger
    /// link and increment extensions.
    pub fn outsource(&mut self, batch: Vec<(String, Vec<u8>)>, kind: MsgKind, cx: &mut Cx) -> Result<Vec<Message>> {
        let mut names = BTreeSet::new();
        for (iid, _) in &batch {
            if self.images.contains_key(iid) || !names.insert(iid) {
                return Err(Error::Duplicate(format!("image {iid}")));
            }
        }
        let known: BTreeSet<[usize; 3]> = self.images.values().map(|r| r.block_counts).collect();
        let mut fresh = BTreeSet::new();
        let (mut images, mut keys) = (Vec::new(), Vec::new());
        for (iid, bytes) in batch {
            let img = decode_jpeg(&bytes)?;
            let (enc, pos) = img_enc(&img, &iid, &self.oid, &self.val_key, cx.rng)?;
            let counts = pos.block_counts();
            self.user_key.materialize_counts(counts)?;
            keys.push(img_key_enc(&pos, &iid, &self.user_key)?);
            let strength = security_strength(&pos, self.val_key.n_pmt1(), self.val_key.n_pmt2());
            self.images.insert(iid.clone(), OwnedImage { block_counts: counts, strength });
            self.plain.insert(iid, bytes);
            if !known.contains(&counts) {
                fresh.insert(counts);
            }
            images.push(enc);
        }
        let oid = self.oid.clone();
        let mut out = vec![
            self.msg(EntityId::Cs, kind, Payload::Images { owner: oid.clone(), images }),
            self.msg(EntityId::Kmc, kind, Payload::PosKeys { owner: oid.clone(), keys }),
        ];
        for &counts in &fresh {
            for (uid, uk) in &self.issued {
                let link = user_key_enc_for(&self.user_key, uk, counts)?;
                let p = Payload::LinkKey { source: Source::Owner(oid.clone()), uid: uid.clone(), link };
                out.push(self.msg(EntityId::Kmc, MsgKind::AuthGrant, p));
            }
            for (gid, mk) in &self.groups {
                let inc = user_key_dec_for(&self.user_key, &mk.user_key, counts)?;
                out.push(self.msg(EntityId::Kmc, kind, Payload::IncUsr { gid: gid.clone(), owner: oid.clone(), inc }));
            }
        }
        if !fresh.is_empty() {
            for gid in self.groups.keys() {
                let p = Payload::MemberSizes { gid: gid.clone(), owner: oid.clone(), counts: fresh.clone() };
                out.push(self.msg(EntityId::Organizer(gid.clone()), kind, p));
            }
        }
        Ok(out)
    }

    pub fn authorize(&mut self, uid: &str, cx: &mut Cx) -> Result<Vec<Message>> {
        if self.issued.contains_key(uid) {
            return Err(Error::Duplicate(format!("{uid} is already authorized by {}", self.oid)));
        }
        let uk = seeded(cx)?;
        let link = user_key_enc(&self.user_key, &uk)?;
        let source = Source::Owner(self.oid.clone());
        let out = vec![
            self.msg(
                EntityId::User(uid.to_string()),
                MsgKind::AuthGrant,
                Payload::UserGrant { source: source.clone(), val_key: self.val_key.clone(), user_key: uk.clone(), wrap_key: None },
            ),
            self.msg(EntityId::Kmc, MsgKind::AuthGrant, Payload::LinkKey { source: source.clone(), uid: uid.to_string(), link }),
            self.msg(EntityId::Cs, MsgKind::AuthGrant, Payload::Grant { source, uid: uid.to_string() }),
        ];
        self.issued.insert(uid.to_string(), uk);
        Ok(out)
    }

    pub fn delete(&mut self, iid: &str) -> Result<Vec<Message>> {
        if self.images.remove(iid).is_none() {
            return Err(Error::NotFound(format!("image {iid} of {}", self.oid)));
        }
        self.plain.remove(iid);
        let p = Payload::Delete { owner: self.oid.clone(), iid: iid.to_string() };
        Ok(vec![
            self.msg(EntityId::Cs, MsgKind::ImageDelete, p.clone()),
            self.msg(EntityId::Kmc, MsgKind::ImageDelete, p),
        ])
    }

    pub fn leave(&mut self, gid: &str) -> Result<Vec<Message>> {
        if self.groups.remove(gid).is_none() {
            return Err(Error::NotFound(format!("{} is not a member of {gid}", self.oid)));
        }
        let p = Payload::Leave { gid: gid.to_string(), owner: self.oid.clone() };
        Ok([EntityId::Cs, EntityId::Kmc, EntityId::Organizer(gid.to_string())]
            .into_iter()
            .map(|to| self.msg(to, MsgKind::GroupLeave, p.clone()))
            .collect())
    }

    pub fn handle(&mut self, msg: Message, _cx: &mut Cx) -> Result<Vec<Message>> {
        match msg.payload {
            Payload::GroupKeys { gid, user_seeds, val_key } => {
                if self.groups.contains_key(&gid) {
                    return Err(Error::Duplicate(format!("{} is already in {gid}", self.oid)));
                }
                let ug = gen_user_key(&user_seeds)?;
                let inc_usr = derive_inc_usr_key(&self.user_key, &ug)?;
                let inc_val = derive_inc_val_key(&self.val_key, &val_key)?;
                let counts = self.images.values().map(|r| r.block_counts).collect();
                let oid = self.oid.clone();
                let out = vec![
                    self.msg(EntityId::Kmc, MsgKind::GroupJoin, Payload::IncUsr { gid: gid.clone(), owner: oid.clone(), inc: inc_usr }),
                    self.msg(EntityId::Cs, MsgKind::GroupJoin, Payload::IncVal { gid: gid.clone(), owner: oid.clone(), inc: inc_val }),
                    self.msg(
                        EntityId::Organizer(gid.clone()),
                        MsgKind::GroupJoin,
                        Payload::MemberSizes { gid: gid.clone(), owner: oid, counts },
                    ),
                ];
                self.groups.insert(gid, MemberKeys { user_key: ug, val_key });
                Ok(out)
            }
            other => Err(Error::contract(format!("owner cannot handle {}", kind_name(&other)))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Organizer {
    pub gid: String,
    pub user_key: UserKey,
    pub val_key: ValKey,
    pub wrap_key: WrapKey,
    /// Members and the block counts of their images.
    pub members: BTreeMap<String, BTreeSet<[usize; 3]>>,
    pub issued: BTreeMap<String, UserKey>,
}

impl Organizer {
    pub fn new(gid: &str, cx: &mut Cx) -> Result<(Organizer, Vec<Message>)> {
        let config = cx.config.clone();
        let org = Organizer {
            gid: gid.to_string(),
            user_key: seeded(cx)?,
            val_key: val_key(&config, cx)?,
            wrap_key: WrapKey::generate(cx.rng),
            members: BTreeMap::new(),
            issued: BTreeMap::new(),
        };
        let p = Payload::GroupWrapKey { gid: gid.to_string(), key: org.wrap_key.clone() };
        let out = vec![org.msg(EntityId::Kmc, MsgKind::GroupCreate, p)];
        Ok((org, out))
    }

    fn msg(&self, to: EntityId, kind: MsgKind, payload: Payload) -> Message {
        Message::new(EntityId::Organizer(self.gid.clone()), to, kind, payload)
    }

    pub fn admit(&self, oid: &str) -> Result<Vec<Message>> {
        if self.members.contains_key(oid) {
            return Err(Error::Duplicate(format!("{oid} is already in {}", self.gid)));
        }
        let user_seeds = self.user_key.seeds().cloned().ok_or_else(|| Error::contract("group key has no seeds"))?;
        let p = Payload::GroupKeys { gid: self.gid.clone(), user_seeds, val_key: self.val_key.clone() };
        Ok(vec![self.msg(EntityId::Owner(oid.to_string()), MsgKind::GroupJoin, p)])
    }

    pub fn authorize(&mut self, uid: &str, cx: &mut Cx) -> Result<Vec<Message>> {
        if self.issued.contains_key(uid) {
            return Err(Error::Duplicate(format!("{uid} is already authorized by {}", self.gid)));
        }
        let uk = seeded(cx)?;
        let link = user_key_enc(&self.user_key, &uk)?;
        let source = Source::Group(self.gid.clone());
        let grant = Payload::UserGrant {
            source: source.clone(),
            val_key: self.val_key.clone(),
            user_key: uk.clone(),
            wrap_key: Some(self.wrap_key.clone()),
        };
        let out = vec![
            self.msg(EntityId::User(uid.to_string()), MsgKind::AuthGrant, grant),
            self.msg(EntityId::Kmc, MsgKind::AuthGrant, Payload::LinkKey { source: source.clone(), uid: uid.to_string(), link }),
            self.msg(EntityId::Cs, MsgKind::AuthGrant, Payload::Grant { source, uid: uid.to_string() }),
        ];
        self.issued.insert(uid.to_string(), uk);
        Ok(out)
    }

    pub fn handle(&mut self, msg: Message, _cx: &mut Cx) -> Result<Vec<Message>> {
        match msg.payload {
            Payload::MemberSizes { owner, counts, .. } => {
                let known: BTreeSet<[usize; 3]> = self.members.values().flatten().copied().collect();
                self.members.entry(owner).or_default().extend(counts.iter().copied());
                let mut out = Vec::new();
                for c in counts.into_iter().filter(|c| !known.contains(c)) {
                    self.user_key.materialize_counts(c)?;
                    for (uid, uk) in &self.issued {
                        let link = user_key_enc_for(&self.user_key, uk, c)?;
                        let p = Payload::LinkKey { source: Source::Group(self.gid.clone()), uid: uid.clone(), link };
                        out.push(self.msg(EntityId::Kmc, MsgKind::AuthGrant, p));
                    }
                }
                Ok(out)
            }
            Payload::Leave { owner, .. } => {
                self.members.remove(&owner);
                Ok(vec![])
            }
            other => Err(Error::contract(format!("organizer cannot handle {}", kind_name(&other)))),
        }
    }
}

/// What a user receives from an owner or a group organizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub val_key: ValKey,
    pub user_key: UserKey,
    pub wrap_key: Option<WrapKey>,
}

/// One decrypted search result.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryHit {
    pub rank: usize,
    pub iid: String,
    pub owner: String,
    pub source: Source,
    pub distance: f64,
    pub image: CoeffImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub uid: String,
    pub grants: BTreeMap<Source, Grant>,
    #[serde(skip)]
    pub inbox: BTreeMap<String, Vec<ResultItem>>,
}

impl User {
    pub fn new(uid: &str) -> User {
        User { uid: uid.to_string(), grants: BTreeMap::new(), inbox: BTreeMap::new() }
    }

    fn grant(&self, source: &Source) -> Result<&Grant> {
        self.grants.get(source).ok_or_else(|| Error::Authorization(format!("{} holds no keys for {source}", self.uid)))
    }

    /// Builds the single query message: one trapdoor per source.
    pub fn query(&self, qid: &str, query: &CoeffImage, sources: &[Source], m: usize, cx: &mut Cx) -> Result<Message> {
        let mut keyed = Vec::with_capacity(sources.len());
        for s in sources {
            keyed.push((s.to_string(), &self.grant(s)?.val_key));
        }
        let trapdoors = trap_gen(query, &keyed, cx.rng)?;
        let payload = Payload::Query {
            qid: qid.to_string(),
            uid: self.uid.clone(),
            trapdoors: sources.iter().cloned().zip(trapdoors.into_iter().map(|t| t.image)).collect(),
            m,
        };
        let mut msg = Message::new(EntityId::User(self.uid.clone()), EntityId::Cs, MsgKind::Query, payload);
        msg.qid = Some(qid.to_string());
        Ok(msg)
    }

    /// Recovers each position key and decrypts each returned ciphertext.
    pub fn open(&self, items: &[ResultItem]) -> Result<Vec<QueryHit>> {
        let mut out = Vec::with_capacity(items.len());
        for it in items {
            let grant = self.grant(&it.source)?;
            let enc = match &it.key {
                DeliveredKey::Plain(k) => k.clone(),
                DeliveredKey::Wrapped(blob) => {
                    let wk = grant.wrap_key.as_ref().ok_or_else(|| Error::contract("wrapped key without a group key"))?;
                    unwrap_for_group(blob, wk)?
                }
            };
            if enc.iid != it.iid {
                return Err(Error::Tamper(format!("key for {} delivered with {}", enc.iid, it.iid)));
            }
            let pos = user_recover_pos_key(&enc, &grant.user_key)?;
            out.push(QueryHit {
                rank: it.rank,
                iid: it.iid.clone(),
                owner: it.image.owner.clone(),
                source: it.source.clone(),
                distance: it.distance,
                image: img_dec(&it.image, &pos, &grant.val_key)?,
            });
        }
        Ok(out)
    }

    pub fn handle(&mut self, msg: Message, _cx: &mut Cx) -> Result<Vec<Message>> {
        match msg.payload {
            Payload::UserGrant { source, val_key, user_key, wrap_key } => {
                if self.grants.contains_key(&source) {
                    return Err(Error::Duplicate(format!("{} already holds keys for {source}", self.uid)));
                }
                self.grants.insert(source, Grant { val_key, user_key, wrap_key });
                Ok(vec![])
            }
            Payload::Results { qid, items } => {
                self.inbox.insert(qid, items);
                Ok(vec![])
            }
            other => Err(Error::contract(format!("user cannot handle {}", kind_name(&other)))),
        }
    }
}
