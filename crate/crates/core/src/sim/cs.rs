use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::message::{EntityId, KeyDelivery, KeyItem, Message, MsgKind, Payload, ResultItem, Source};
use super::Cx;
use crate::cipher::EncryptedImage;
use crate::error::{Error, Result};
use crate::features::{bow_feature, build_vocabulary, extract_local_hists, ImageHists};
use crate::index::{Hit, IndexRow, Scope};
use crate::keys::{cs_reencrypt_for_group, IncValKey};
use crate::{LinearIndex, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
struct Pending {
    uid: String,
    hits: Vec<(Hit<f64>, Source)>,
}

/// Cloud server: ciphertexts, indexes, increment value keys and grants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CloudServer {
    /// Ciphertexts under their owner's value key, by iid.
    pub images: BTreeMap<String, EncryptedImage>,
    /// Re-encrypted copies, by group then iid.
    pub group_images: BTreeMap<String, BTreeMap<String, EncryptedImage>>,
    pub vocabularies: BTreeMap<Scope, Vocabulary>,
    /// Increment value keys, by group then owner.
    pub inc_val: BTreeMap<String, BTreeMap<String, IncValKey>>,
    /// Sources each user may query.
    pub grants: BTreeMap<String, BTreeSet<Source>>,
    #[serde(skip)]
    pub index: LinearIndex,
    #[serde(skip)]
    pending: BTreeMap<String, Pending>,
}

fn hists(img: &EncryptedImage) -> Result<ImageHists<f64>> {
    Ok(extract_local_hists(&img.coefficients()?))
}

fn source_of(scope: &Scope) -> Source {
    match scope {
        Scope::Owner(o) | Scope::OwnerGlobal(o) => Source::Owner(o.clone()),
        Scope::Group(g) | Scope::GroupGlobal(g) => Source::Group(g.clone()),
    }
}

impl CloudServer {
    pub fn handle(&mut self, msg: Message, cx: &mut Cx) -> Result<Vec<Message>> {
        match msg.payload {
            Payload::Images { owner, images } => self.store(&owner, images, cx),
            Payload::Grant { source, uid } => {
                self.grants.entry(uid).or_default().insert(source);
                Ok(vec![])
            }
            Payload::IncVal { gid, owner, inc } => self.join(&gid, &owner, inc, cx),
            Payload::Leave { gid, owner } => self.leave(&gid, &owner, cx),
            Payload::Delete { owner, iid } => self.delete(&owner, &iid),
            Payload::Query { qid, uid, trapdoors, m } => self.query(qid, uid, trapdoors, m, cx),
            Payload::KeyResponse { qid, keys } => self.respond(qid, keys),
            other => Err(Error::contract(format!("cloud server cannot handle {}", kind_name(&other)))),
        }
    }

    fn owner_images(&self, owner: &str) -> Vec<&EncryptedImage> {
        self.images.values().filter(|e| e.owner == owner).collect()
    }

    fn groups_of(&self, owner: &str) -> Vec<String> {
        self.inc_val.iter().filter(|(_, m)| m.contains_key(owner)).map(|(g, _)| g.clone()).collect()
    }

    fn vocab(&self, scope: &Scope) -> Result<&Vocabulary> {
        self.vocabularies.get(scope).ok_or_else(|| Error::NotFound(format!("no vocabulary for {scope}")))
    }

    fn build(&mut self, scope: Scope, k: usize, data: &[ImageHists<f64>], cx: &mut Cx) -> Result<()> {
        let vocab = build_vocabulary(data, k, cx.rng.next_u64(), &scope.to_string())?;
        self.index.add_scope(scope.clone(), k)?;
        self.vocabularies.insert(scope, vocab);
        Ok(())
    }

    fn store(&mut self, owner: &str, images: Vec<EncryptedImage>, cx: &mut Cx) -> Result<Vec<Message>> {
        for e in &images {
            if self.images.contains_key(&e.iid) {
                return Err(Error::Duplicate(format!("image {}", e.iid)));
            }
            if e.owner != owner {
                return Err(Error::contract(format!("image {} is not owned by {owner}", e.iid)));
            }
        }
        let data = images.iter().map(hists).collect::<Result<Vec<_>>>()?;
        let (local, global) = (Scope::Owner(owner.to_string()), Scope::OwnerGlobal(owner.to_string()));
        if !self.vocabularies.contains_key(&local) {
            self.build(local.clone(), cx.config.k_owner, &data, cx)?;
            self.build(global.clone(), cx.config.k_g, &data, cx)?;
        }
        for e in &images {
            let coeffs = e.coefficients()?;
            let mut features = BTreeMap::new();
            for scope in [&local, &global] {
                features.insert(scope.clone(), bow_feature(&coeffs, self.vocab(scope)?)?);
            }
            self.index.index_add(IndexRow { iid: e.iid.clone(), owner: owner.to_string(), features })?;
        }
        let groups = self.groups_of(owner);
        for e in images {
            self.images.insert(e.iid.clone(), e);
        }
        for gid in groups {
            self.reencrypt_owner(&gid, owner)?;
            self.rebuild_group(&gid, cx)?;
        }
        Ok(vec![])
    }

    fn reencrypt_owner(&mut self, gid: &str, owner: &str) -> Result<()> {
        let inc = &self.inc_val[gid][owner];
        let mut out = Vec::new();
        for e in self.owner_images(owner) {
            if !self.group_images.get(gid).is_some_and(|m| m.contains_key(&e.iid)) {
                out.push(cs_reencrypt_for_group(e, inc, gid)?);
            }
        }
        let slot = self.group_images.entry(gid.to_string()).or_default();
        for e in out {
            slot.insert(e.iid.clone(), e);
        }
        Ok(())
    }

    /// Reclusters the group's ciphertexts and recomputes both group columns.
    fn rebuild_group(&mut self, gid: &str, cx: &mut Cx) -> Result<()> {
        let (local, global) = (Scope::Group(gid.to_string()), Scope::GroupGlobal(gid.to_string()));
        for s in [&local, &global] {
            self.index.remove_scope(s);
            self.vocabularies.remove(s);
        }
        let members: Vec<EncryptedImage> =
            self.group_images.get(gid).map(|m| m.values().cloned().collect()).unwrap_or_default();
        if members.is_empty() {
            return Ok(());
        }
        let data = members.iter().map(hists).collect::<Result<Vec<_>>>()?;
        self.build(local.clone(), cx.config.k_group, &data, cx)?;
        self.build(global.clone(), cx.config.k_g, &data, cx)?;
        for e in &members {
            let coeffs = e.coefficients()?;
            for scope in [&local, &global] {
                let f = bow_feature(&coeffs, self.vocab(scope)?)?;
                self.index.set_feature(&e.iid, scope.clone(), f)?;
            }
        }
        Ok(())
    }

    fn join(&mut self, gid: &str, owner: &str, inc: IncValKey, cx: &mut Cx) -> Result<Vec<Message>> {
        self.inc_val.entry(gid.to_string()).or_default().insert(owner.to_string(), inc);
        self.reencrypt_owner(gid, owner)?;
        self.rebuild_group(gid, cx)?;
        Ok(vec![])
    }

    fn leave(&mut self, gid: &str, owner: &str, cx: &mut Cx) -> Result<Vec<Message>> {
        let members = self.inc_val.get_mut(gid).ok_or_else(|| Error::NotFound(format!("group {gid}")))?;
        if members.remove(owner).is_none() {
            return Err(Error::NotFound(format!("{owner} is not a member of {gid}")));
        }
        if let Some(slot) = self.group_images.get_mut(gid) {
            slot.retain(|_, e| e.owner != owner);
        }
        self.rebuild_group(gid, cx)?;
        Ok(vec![])
    }

    fn delete(&mut self, owner: &str, iid: &str) -> Result<Vec<Message>> {
        match self.images.get(iid) {
            Some(e) if e.owner == owner => {}
            _ => return Err(Error::NotFound(format!("image {iid} of {owner}"))),
        }
        self.images.remove(iid);
        for slot in self.group_images.values_mut() {
            slot.remove(iid);
        }
        self.index.index_delete(iid)?;
        Ok(vec![])
    }

    fn query(
        &mut self,
        qid: String,
        uid: String,
        trapdoors: Vec<(Source, EncryptedImage)>,
        m: usize,
        cx: &mut Cx,
    ) -> Result<Vec<Message>> {
        let granted = self.grants.get(&uid).cloned().unwrap_or_default();
        if trapdoors.is_empty() {
            return Err(Error::contract("query names no source"));
        }
        for (s, _) in &trapdoors {
            if !granted.contains(s) {
                return Err(Error::Authorization(format!("{uid} may not query {s}")));
            }
        }
        let global = trapdoors.len() > 1;
        let scope_for = |s: &Source| match (s, global) {
            (Source::Owner(o), false) => Scope::Owner(o.clone()),
            (Source::Owner(o), true) => Scope::OwnerGlobal(o.clone()),
            (Source::Group(g), false) => Scope::Group(g.clone()),
            (Source::Group(g), true) => Scope::GroupGlobal(g.clone()),
        };
        let mut queries = Vec::with_capacity(trapdoors.len());
        for (s, t) in &trapdoors {
            let scope = scope_for(s);
            queries.push((scope.clone(), bow_feature(&t.coefficients()?, self.vocab(&scope)?)?));
        }
        let result = if global {
            let authorized: BTreeSet<Scope> = granted.iter().map(scope_for).collect();
            self.index.search_multi(&queries, &authorized, m, &cx.config.weights)?
        } else {
            self.index.search_single(&queries[0].1, &queries[0].0, m, &cx.config.weights)?
        };
        let mut items = Vec::new();
        let mut hits = Vec::new();
        for h in result.hits {
            let owner = self.images[&h.iid].owner.clone();
            let source = source_of(&h.scope);
            items.push(KeyItem { source: source.clone(), owner, iid: h.iid.clone() });
            hits.push((h, source));
        }
        self.pending.insert(qid.clone(), Pending { uid: uid.clone(), hits });
        let mut out =
            Message::new(EntityId::Cs, EntityId::Kmc, MsgKind::KeyRequest, Payload::KeyRequest { qid: qid.clone(), uid, items });
        out.qid = Some(qid);
        Ok(vec![out])
    }

    fn respond(&mut self, qid: String, keys: Vec<KeyDelivery>) -> Result<Vec<Message>> {
        let pending = self.pending.remove(&qid).ok_or_else(|| Error::NotFound(format!("query {qid}")))?;
        if keys.len() != pending.hits.len() {
            return Err(Error::contract("key response does not match the request"));
        }
        let mut items = Vec::with_capacity(keys.len());
        for (rank, ((hit, source), k)) in pending.hits.into_iter().zip(keys).enumerate() {
            if k.iid != hit.iid || k.source != source {
                return Err(Error::contract("key response out of order"));
            }
            let image = match &source {
                Source::Owner(_) => self.images.get(&hit.iid),
                Source::Group(g) => self.group_images.get(g).and_then(|m| m.get(&hit.iid)),
            }
            .ok_or_else(|| Error::NotFound(format!("ciphertext {}", hit.iid)))?
            .clone();
            items.push(ResultItem { rank: rank + 1, iid: hit.iid, source, distance: hit.distance, image, key: k.key });
        }
        let mut out = Message::new(
            EntityId::Cs,
            EntityId::User(pending.uid),
            MsgKind::Result,
            Payload::Results { qid: qid.clone(), items },
        );
        out.qid = Some(qid);
        Ok(vec![out])
    }

    /// Serialized state without ciphertext bodies, for boundary scans.
    pub(crate) fn scan_text(&self) -> String {
        let mut stripped = self.clone();
        for e in stripped.images.values_mut().chain(stripped.group_images.values_mut().flat_map(|m| m.values_mut())) {
            e.jpeg.clear();
        }
        serde_json::to_string(&stripped).expect("state serializes")
    }
}

pub(crate) fn kind_name(p: &Payload) -> &'static str {
    match p {
        Payload::Images { .. } => "images",
        Payload::PosKeys { .. } => "pos_keys",
        Payload::UserGrant { .. } => "user_grant",
        Payload::LinkKey { .. } => "link_key",
        Payload::Grant { .. } => "grant",
        Payload::GroupWrapKey { .. } => "group_wrap_key",
        Payload::GroupKeys { .. } => "group_keys",
        Payload::IncUsr { .. } => "inc_usr",
        Payload::IncVal { .. } => "inc_val",
        Payload::MemberSizes { .. } => "member_sizes",
        Payload::Leave { .. } => "leave",
        Payload::Query { .. } => "query",
        Payload::KeyRequest { .. } => "key_request",
        Payload::KeyResponse { .. } => "key_response",
        Payload::Results { .. } => "results",
        Payload::Delete { .. } => "delete",
    }
}
