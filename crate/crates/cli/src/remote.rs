//! `serve` and `audit-remote`: exposing an encoder over HTTP and auditing a
//! remote one.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use encodermi::classifiers::InferenceClassifier;
use encodermi::data::loaders::read_image;
use encodermi::encoder::{connect_remote, load_local, BlackBoxEncoder, EncoderServer};
use encodermi::eval::BackgroundKnowledge;
use encodermi::membership::extract_many;
use encodermi::{Error, Result};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::context::Ctx;
use crate::stages::write_json;

pub const TOKEN_ENV: &str = "ENCODERMI_TOKEN";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditDecision {
    pub image: String,
    pub member_score: f64,
    pub member: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub endpoint: String,
    pub classifier: String,
    pub method: String,
    pub seed: u64,
    pub decisions: Vec<AuditDecision>,
}

fn token(explicit: Option<String>) -> Option<String> {
    explicit.or_else(|| std::env::var(TOKEN_ENV).ok()).filter(|t| !t.is_empty())
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", dir.display())));
    }
    let mut files: Vec<PathBuf> = WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset(format!("no PNG or JPEG images under {}", dir.display())));
    }
    Ok(files)
}

pub struct AuditRequest {
    pub endpoint: String,
    pub token: Option<String>,
    pub classifier: PathBuf,
    pub images: PathBuf,
    /// Knowledge setting whose query pipeline the classifier was trained with.
    pub knowledge: BackgroundKnowledge,
}

/// Queries the remote encoder with augmented views of every image under
/// `images` and records the classifier's decision for each.
pub fn audit_remote(ctx: &Ctx, req: &AuditRequest) -> Result<AuditReport> {
    let clf = InferenceClassifier::load(&req.classifier)?;
    let resolution = ctx.manifest.target.pretrain.encoder.resolution;
    let enc = connect_remote(&req.endpoint, token(req.token.clone()).as_deref(), resolution)?;
    let files = image_files(&req.images)?;
    let images = files
        .iter()
        .map(|f| {
            let img = read_image(f)?;
            Ok(if (img.height(), img.width()) == resolution { img } else { img.resize_bilinear(resolution.0, resolution.1) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = ctx.extraction(req.knowledge);
    cfg.n = clf.n();
    cfg.metric = clf.metric();
    let ids: Vec<usize> = (0..files.len()).collect();
    let seed = ctx.seed_for(0, "audit");
    let feats = extract_many(&images, "audit", &ids, &enc, &cfg, seed)?;
    let scores = clf.member_scores(&feats)?;
    let decisions = clf.predict(&feats)?;
    let report = AuditReport {
        endpoint: req.endpoint.clone(),
        classifier: req.classifier.display().to_string(),
        method: clf.kind().method_id().to_string(),
        seed,
        decisions: files
            .iter()
            .zip(scores.into_iter().zip(decisions))
            .map(|(f, (member_score, member))| AuditDecision {
                image: f.strip_prefix(&req.images).unwrap_or(f).display().to_string(),
                member_score,
                member,
            })
            .collect(),
    };
    write_json(&ctx.run.path("reports/audit.json"), &report)?;
    Ok(report)
}

/// Serves a checkpoint (the final target by default) until killed.
pub fn serve(ctx: &Ctx, bind: &str, checkpoint: Option<&Path>, token_arg: Option<String>) -> Result<()> {
    let enc: Arc<dyn BlackBoxEncoder> = match checkpoint {
        Some(p) => Arc::new(load_local(p)?),
        None => Arc::new(ctx.target_encoder()?),
    };
    let server = EncoderServer::serve(bind, token(token_arg), enc)?;
    println!("serving on {}", server.url());
    server.join();
    Ok(())
}
