use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::cs::kind_name;
use super::message::{DeliveredKey, EntityId, KeyDelivery, KeyItem, Message, MsgKind, Payload, Source};
use super::Cx;
use crate::error::{Error, Result};
use crate::keys::{kmc_transform, wrap_for_group, EncPosKey, UserKey, WrapKey};

/// Key management center: encrypted position keys and conversion keys.
/// It never sees value keys or users.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Kmc {
    /// Position keys under the owner's user key, by owner then iid.
    pub pos_keys: BTreeMap<String, BTreeMap<String, EncPosKey>>,
    /// Link keys, by source then user.
    pub links: BTreeMap<Source, BTreeMap<String, UserKey>>,
    /// Increment user keys, by group then owner.
    pub inc_usr: BTreeMap<String, BTreeMap<String, UserKey>>,
    pub wrap_keys: BTreeMap<String, WrapKey>,
}

fn merge_into(slot: &mut BTreeMap<String, UserKey>, who: String, key: UserKey) -> Result<()> {
    match slot.get_mut(&who) {
        Some(existing) => existing.merge_block_perms(&key),
        None => {
            slot.insert(who, key);
            Ok(())
        }
    }
}

impl Kmc {
    pub fn handle(&mut self, msg: Message, cx: &mut Cx) -> Result<Vec<Message>> {
        match msg.payload {
            Payload::PosKeys { owner, keys } => {
                let slot = self.pos_keys.entry(owner).or_default();
                for k in &keys {
                    if slot.contains_key(&k.iid) {
                        return Err(Error::Duplicate(format!("position key of {}", k.iid)));
                    }
                }
                for k in keys {
                    slot.insert(k.iid.clone(), k);
                }
                Ok(vec![])
            }
            Payload::LinkKey { source, uid, link } => {
                merge_into(self.links.entry(source).or_default(), uid, link)?;
                Ok(vec![])
            }
            Payload::GroupWrapKey { gid, key } => {
                if self.wrap_keys.contains_key(&gid) {
                    return Err(Error::Duplicate(format!("group {gid}")));
                }
                self.wrap_keys.insert(gid, key);
                Ok(vec![])
            }
            Payload::IncUsr { gid, owner, inc } => {
                merge_into(self.inc_usr.entry(gid).or_default(), owner, inc)?;
                Ok(vec![])
            }
            Payload::Leave { gid, owner } => {
                self.inc_usr.get_mut(&gid).and_then(|m| m.remove(&owner));
                Ok(vec![])
            }
            Payload::Delete { owner, iid } => {
                self.pos_keys
                    .get_mut(&owner)
                    .and_then(|m| m.remove(&iid))
                    .ok_or_else(|| Error::NotFound(format!("position key of {iid}")))?;
                Ok(vec![])
            }
            Payload::KeyRequest { qid, uid, items } => {
                let keys = items.iter().map(|it| self.convert(&uid, it, cx)).collect::<Result<Vec<_>>>()?;
                let mut out =
                    Message::new(EntityId::Kmc, msg.sender, MsgKind::KeyResponse, Payload::KeyResponse { qid: qid.clone(), keys });
                out.qid = Some(qid);
                Ok(vec![out])
            }
            other => Err(Error::contract(format!("KMC cannot handle {}", kind_name(&other)))),
        }
    }

    /// Re-keys one stored position key for `uid`; the grant is checked again
    /// here by requiring a link for (source, user).
    fn convert(&self, uid: &str, item: &KeyItem, cx: &mut Cx) -> Result<KeyDelivery> {
        let link = self
            .links
            .get(&item.source)
            .and_then(|m| m.get(uid))
            .ok_or_else(|| Error::Authorization(format!("no link for {uid} at {}", item.source)))?;
        let stored = self
            .pos_keys
            .get(&item.owner)
            .and_then(|m| m.get(&item.iid))
            .ok_or_else(|| Error::NotFound(format!("position key of {}", item.iid)))?;
        let key = match &item.source {
            Source::Owner(o) => {
                if *o != item.owner {
                    return Err(Error::Authorization(format!("{} is not owned by {o}", item.iid)));
                }
                DeliveredKey::Plain(kmc_transform(stored, link)?)
            }
            Source::Group(g) => {
                let inc = self
                    .inc_usr
                    .get(g)
                    .and_then(|m| m.get(&item.owner))
                    .ok_or_else(|| Error::Authorization(format!("{} is not a member of {g}", item.owner)))?;
                let wrap = self.wrap_keys.get(g).ok_or_else(|| Error::NotFound(format!("group {g}")))?;
                let converted = kmc_transform(&kmc_transform(stored, inc)?, link)?;
                DeliveredKey::Wrapped(wrap_for_group(&converted, wrap, cx.rng)?)
            }
        };
        Ok(KeyDelivery { iid: item.iid.clone(), source: item.source.clone(), key })
    }
}
