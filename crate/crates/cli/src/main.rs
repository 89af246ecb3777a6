mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coeffcrypt::codec::{decode_jpeg, encode_jpeg};
use coeffcrypt::index::write_csv;
use coeffcrypt::sim::{check_id, eval_precision, LabeledImage, SimConfig, Simulator, Source};
use coeffcrypt::{Error, Result};
use walkdir::WalkDir;

use config::ConfigFile;

/// Encrypted JPEG retrieval: workspace management, protocol flows and evaluation.
#[derive(Parser)]
#[command(name = "coeffcrypt", version)]
struct Cli {
    /// Workspace directory.
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,
    /// Run seed (used by `init` and `eval`; overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Versioned TOML config (used by `init` and `eval`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create an empty workspace.
    Init,
    #[command(subcommand)]
    Owner(OwnerCmd),
    #[command(subcommand)]
    User(UserCmd),
    /// Encrypt and outsource every baseline JPEG under a directory.
    Ingest {
        dir: PathBuf,
        #[arg(long)]
        owner: String,
    },
    /// Let a user query an owner's images.
    Authorize { oid: String, uid: String },
    #[command(subcommand)]
    Group(GroupCmd),
    /// Search with an image; prints rank, iid, owner, source and distance.
    Query {
        uid: String,
        image: PathBuf,
        /// Sources such as `owner:alice,group:g1`; defaults to every grant.
        #[arg(long, value_delimiter = ',')]
        sources: Vec<String>,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Write the decrypted results here as JPEGs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    #[command(subcommand)]
    Eval(EvalCmd),
    #[command(subcommand)]
    Report(ReportCmd),
    #[command(subcommand)]
    Image(ImageCmd),
    /// Verify the knowledge boundaries of the stored state.
    Check,
}

#[derive(Subcommand)]
enum OwnerCmd {
    Add { oid: String },
}

#[derive(Subcommand)]
enum UserCmd {
    Add { uid: String },
}

#[derive(Subcommand)]
enum GroupCmd {
    Create { gid: String },
    Join { gid: String, oid: String },
    Leave { gid: String, oid: String },
    Authorize { gid: String, uid: String },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Precision at m over a directory-per-category corpus.
    Precision {
        data: PathBuf,
        /// Number of synthetic owners the corpus is split over.
        #[arg(long, default_value_t = 1)]
        sources: usize,
        /// Vocabulary size for owner and global scopes.
        #[arg(long)]
        kg: Option<usize>,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Query with this many images instead of all of them.
        #[arg(long)]
        queries: Option<usize>,
        /// Write per-hit rows here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Per-image bit strength and histogram flattening, as CSV.
    Security,
}

#[derive(Subcommand)]
enum ImageCmd {
    Add { oid: String, iid: String, path: PathBuf },
    Delete { oid: String, iid: String },
}

fn settings(cli: &Cli) -> Result<(SimConfig, u64)> {
    let file = cli.config.as_deref().map(ConfigFile::read).transpose()?;
    let config = match &file {
        Some(f) => f.apply(SimConfig::default())?,
        None => SimConfig::default(),
    };
    let seed = cli.seed.or(file.as_ref().and_then(|f| f.seed())).unwrap_or(0);
    Ok((config, seed))
}

fn open(ws: &Path) -> Result<Simulator> {
    if !Simulator::is_workspace(ws) {
        return Err(Error::NotFound(format!("no workspace at {} (run init first)", ws.display())));
    }
    Simulator::load(ws)
}

fn mutate(ws: &Path, f: impl FnOnce(&mut Simulator) -> Result<()>) -> Result<()> {
    let mut sim = open(ws)?;
    f(&mut sim)?;
    sim.save(ws)
}

/// `cat/sub/img.jpg` → `cat-sub-img`, with anything else replaced by `_`.
fn iid_for(rel: &Path) -> String {
    let stem = rel.with_extension("");
    let parts: Vec<String> = stem
        .components()
        .map(|c| {
            c.as_os_str()
                .to_string_lossy()
                .chars()
                .map(|ch| if ch.is_ascii_alphanumeric() || matches!(ch, '_' | '.') { ch } else { '_' })
                .collect()
        })
        .collect();
    parts.join("-").trim_start_matches('.').to_string()
}

fn is_jpeg(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("jpg") || e.eq_ignore_ascii_case("jpeg"))
}

/// Baseline JPEGs under `dir` as (iid, relative path, bytes), sorted by path.
/// Files the codec does not support are reported and skipped.
fn scan(dir: &Path) -> Result<Vec<(String, PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        let path = entry.path();
        if !entry.file_type().is_file() || !is_jpeg(path) {
            continue;
        }
        let bytes = fs::read(path)?;
        match decode_jpeg(&bytes) {
            Ok(_) => {}
            Err(e @ (Error::Unsupported(_) | Error::Format { .. })) => {
                eprintln!("skipped {}: {e}", path.display());
                continue;
            }
            Err(e) => return Err(e),
        }
        let rel = path.strip_prefix(dir).unwrap_or(path).to_path_buf();
        out.push((iid_for(&rel), rel, bytes));
    }
    if out.is_empty() {
        return Err(Error::NotFound(format!("no baseline JPEGs under {}", dir.display())));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let ws = cli.workspace.as_path();
    let stdout = std::io::stdout();
    match &cli.cmd {
        Cmd::Init => {
            if Simulator::is_workspace(ws) {
                return Err(Error::Duplicate(format!("workspace at {}", ws.display())));
            }
            let (config, seed) = settings(&cli)?;
            Simulator::new(config, seed).save(ws)?;
            println!("initialized {} (seed {seed})", ws.display());
        }
        Cmd::Owner(OwnerCmd::Add { oid }) => mutate(ws, |s| s.add_owner(oid))?,
        Cmd::User(UserCmd::Add { uid }) => mutate(ws, |s| s.add_user(uid))?,
        Cmd::Ingest { dir, owner } => {
            let found = scan(dir)?;
            let mut w = csv::Writer::from_writer(stdout.lock());
            w.write_record(["iid", "path"]).map_err(csv_err)?;
            for (iid, rel, _) in &found {
                check_id(iid)?;
                w.write_record([iid.as_str(), &rel.to_string_lossy()]).map_err(csv_err)?;
            }
            w.flush()?;
            let batch = found.into_iter().map(|(iid, _, bytes)| (iid, bytes)).collect();
            mutate(ws, |s| s.outsource(owner, batch))?;
        }
        Cmd::Authorize { oid, uid } => mutate(ws, |s| {
            if !s.users.contains_key(uid) {
                s.add_user(uid)?;
            }
            s.authorize(oid, uid)
        })?,
        Cmd::Group(g) => match g {
            GroupCmd::Create { gid } => mutate(ws, |s| s.group_create(gid))?,
            GroupCmd::Join { gid, oid } => mutate(ws, |s| s.group_join(gid, oid))?,
            GroupCmd::Leave { gid, oid } => mutate(ws, |s| s.group_leave(gid, oid))?,
            GroupCmd::Authorize { gid, uid } => mutate(ws, |s| {
                if !s.users.contains_key(uid) {
                    s.add_user(uid)?;
                }
                s.group_authorize(gid, uid)
            })?,
        },
        Cmd::Query { uid, image, sources, top, out } => {
            let query = decode_jpeg(&fs::read(image)?)?;
            let mut sim = open(ws)?;
            let sources: Vec<Source> = if sources.is_empty() {
                let user = sim.users.get(uid).ok_or_else(|| Error::NotFound(format!("user {uid}")))?;
                user.grants.keys().cloned().collect()
            } else {
                sources.iter().map(|s| s.parse()).collect::<Result<_>>()?
            };
            let result = sim.query(uid, &query, &sources, *top)?;
            sim.save(ws)?;
            let mut w = csv::Writer::from_writer(stdout.lock());
            w.write_record(["rank", "iid", "owner", "source", "distance"]).map_err(csv_err)?;
            for h in &result.hits {
                let row = [h.rank.to_string(), h.iid.clone(), h.owner.clone(), h.source.to_string(), format!("{:.6}", h.distance)];
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush()?;
            if let Some(dir) = out {
                fs::create_dir_all(dir)?;
                for h in &result.hits {
                    fs::write(dir.join(format!("{:03}-{}.jpg", h.rank, h.iid)), encode_jpeg(&h.image)?)?;
                }
            }
            let r = result.rounds;
            eprintln!("{}: rounds cs-kmc={} cs-user={} kmc-user={}", result.qid, r.cs_kmc, r.cs_user, r.kmc_user);
        }
        Cmd::Eval(EvalCmd::Precision { data, sources, kg, top, queries, csv }) => {
            let (mut config, seed) = settings(&cli)?;
            if let Some(k) = kg {
                config.k_owner = *k;
                config.k_g = *k;
            }
            config::check(&config)?;
            let corpus = scan(data)?
                .into_iter()
                .map(|(iid, rel, jpeg)| {
                    let category = rel
                        .parent()
                        .filter(|p| !p.as_os_str().is_empty())
                        .map(|p| p.to_string_lossy().into_owned())
                        .ok_or_else(|| Error::Contract(format!("{} is not inside a category directory", rel.display())))?;
                    Ok(LabeledImage { category, iid, jpeg })
                })
                .collect::<Result<Vec<_>>>()?;
            let run = eval_precision(&corpus, *sources, *top, config, seed, *queries)?;
            match csv {
                Some(path) => write_csv(fs::File::create(path)?, &run.rows)?,
                None => write_csv(stdout.lock(), &run.rows)?,
            }
            let summary = format!(
                "precision@{top} {:.4} over {} queries, {sources} source(s), constant rounds: {}",
                run.mean_precision,
                run.per_query.len(),
                run.constant_rounds
            );
            if csv.is_some() {
                println!("{summary}");
            } else {
                eprintln!("{summary}");
            }
        }
        Cmd::Report(ReportCmd::Security) => {
            let rep = open(ws)?.security_report()?;
            let mut w = csv::Writer::from_writer(stdout.lock());
            w.write_record([
                "owner", "iid", "blocks_y", "blocks_u", "blocks_v", "value_tables", "block_perm", "intra_perm",
                "length_tables", "dc_mask", "total_bits", "chi2_n1", "chi2_n5",
            ])
            .map_err(csv_err)?;
            for r in &rep.images {
                let s = &r.strength;
                let mut row = vec![r.owner.clone(), r.iid.clone()];
                row.extend(r.block_counts.iter().map(|n| n.to_string()));
                row.extend(
                    [s.value_tables, s.block_perm, s.intra_perm, s.length_tables, s.dc_mask, s.total, r.chi2_n1, r.chi2_n5]
                        .iter()
                        .map(|x| format!("{x:.2}")),
                );
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush()?;
            eprintln!(
                "feature bits: {:.2} recomputed, {:.0} quoted; mean total {:.1} bits; flatter with 5 tables on {}/{} images",
                rep.feature_bits,
                rep.paper_feature_bits,
                rep.mean_total_bits,
                rep.flatter_at_n5,
                rep.images.len()
            );
        }
        Cmd::Image(ImageCmd::Add { oid, iid, path }) => {
            let bytes = fs::read(path)?;
            mutate(ws, |s| s.image_add(oid, iid, bytes))?;
        }
        Cmd::Image(ImageCmd::Delete { oid, iid }) => mutate(ws, |s| s.image_delete(oid, iid))?,
        Cmd::Check => {
            let v = open(ws)?.boundary_violations();
            if !v.is_empty() {
                return Err(Error::Contract(v.join("; ")));
            }
            println!("ok");
        }
    }
    std::io::stdout().flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
