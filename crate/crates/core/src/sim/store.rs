//! Workspace layout:
//!
//! ```text
//! sim.json                      seed, operation counter, config, party ids
//! cs/state.json                 CS records (ciphertext bodies stripped)
//! cs/index.bin                  linear index
//! cs/images/<iid>.jpg           ciphertexts under owner keys
//! cs/groups/<gid>/<iid>.jpg     ciphertexts re-encrypted for a group
//! kmc/state.json
//! owners/<oid>/state.json
//! owners/<oid>/images/<iid>.jpg plaintexts the owner keeps
//! groups/<gid>/state.json       organizer
//! users/<uid>/state.json
//! log/messages.jsonl
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CloudServer, Kmc, LogEntry, Organizer, Owner, SimConfig, Simulator, User};
use crate::error::{Error, Result};
use crate::LinearIndex;

const FORMAT: &str = "coeffcrypt-workspace";
const VERSION: u32 = 1;
const MANAGED: [&str; 6] = ["cs", "kmc", "owners", "groups", "users", "log"];

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    ops: u64,
    config: SimConfig,
    owners: Vec<String>,
    groups: Vec<String>,
    users: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    fs::write(path, body)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    Ok(serde_json::from_slice(&body)?)
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, body)?;
    Ok(())
}

fn jpg(dir: &Path, iid: &str) -> std::path::PathBuf {
    dir.join(format!("{iid}.jpg"))
}

impl Simulator {
    pub fn is_workspace(dir: &Path) -> bool {
        dir.join("sim.json").is_file()
    }

    /// Writes the full state, replacing whatever the managed
    /// subdirectories held before. Other files in `dir` are left alone.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for sub in MANAGED {
            let p = dir.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p)?;
            }
        }
        write_json(
            &dir.join("sim.json"),
            &Manifest {
                format: FORMAT.into(),
                version: VERSION,
                seed: self.seed,
                ops: self.ops,
                config: self.config.clone(),
                owners: self.owners.keys().cloned().collect(),
                groups: self.organizers.keys().cloned().collect(),
                users: self.users.keys().cloned().collect(),
            },
        )?;

        let cs_dir = dir.join("cs");
        let mut cs = self.cs.clone();
        for e in cs.images.values_mut() {
            write_file(&jpg(&cs_dir.join("images"), &e.iid), &std::mem::take(&mut e.jpeg))?;
        }
        for (gid, slot) in cs.group_images.iter_mut() {
            for e in slot.values_mut() {
                write_file(&jpg(&cs_dir.join("groups").join(gid), &e.iid), &std::mem::take(&mut e.jpeg))?;
            }
        }
        write_json(&cs_dir.join("state.json"), &cs)?;
        write_file(&cs_dir.join("index.bin"), &self.cs.index.to_bytes())?;

        write_json(&dir.join("kmc/state.json"), &self.kmc)?;
        for (oid, o) in &self.owners {
            let d = dir.join("owners").join(oid);
            write_json(&d.join("state.json"), o)?;
            for (iid, bytes) in &o.plain {
                write_file(&jpg(&d.join("images"), iid), bytes)?;
            }
        }
        for (gid, g) in &self.organizers {
            write_json(&dir.join("groups").join(gid).join("state.json"), g)?;
        }
        for (uid, u) in &self.users {
            write_json(&dir.join("users").join(uid).join("state.json"), u)?;
        }

        fs::create_dir_all(dir.join("log"))?;
        let mut log = std::io::BufWriter::new(fs::File::create(dir.join("log/messages.jsonl"))?);
        for e in &self.log {
            serde_json::to_writer(&mut log, e)?;
            log.write_all(b"\n")?;
        }
        log.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Simulator> {
        let m: Manifest = read_json(&dir.join("sim.json"))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::format(0, format!("{}: unknown workspace format {} v{}", dir.display(), m.format, m.version)));
        }
        let mut sim = Simulator::new(m.config, m.seed);
        sim.ops = m.ops;

        let cs_dir = dir.join("cs");
        let mut cs: CloudServer = read_json(&cs_dir.join("state.json"))?;
        for e in cs.images.values_mut() {
            e.jpeg = fs::read(jpg(&cs_dir.join("images"), &e.iid))?;
        }
        for (gid, slot) in cs.group_images.iter_mut() {
            for e in slot.values_mut() {
                e.jpeg = fs::read(jpg(&cs_dir.join("groups").join(gid), &e.iid))?;
            }
        }
        cs.index = LinearIndex::from_bytes(&fs::read(cs_dir.join("index.bin"))?)?;
        sim.cs = cs;

        sim.kmc = read_json::<Kmc>(&dir.join("kmc/state.json"))?;
        for oid in m.owners {
            let d = dir.join("owners").join(&oid);
            let mut o: Owner = read_json(&d.join("state.json"))?;
            for iid in o.images.keys() {
                o.plain.insert(iid.clone(), fs::read(jpg(&d.join("images"), iid))?);
            }
            sim.owners.insert(oid, o);
        }
        for gid in m.groups {
            let g: Organizer = read_json(&dir.join("groups").join(&gid).join("state.json"))?;
            sim.organizers.insert(gid, g);
        }
        for uid in m.users {
            let u: User = read_json(&dir.join("users").join(&uid).join("state.json"))?;
            sim.users.insert(uid, u);
        }

        let log = fs::File::open(dir.join("log/messages.jsonl"))?;
        for line in BufReader::new(log).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                sim.log.push(serde_json::from_str::<LogEntry>(&line)?);
            }
        }
        Ok(sim)
    }
}
