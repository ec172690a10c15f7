//! Dataset ingestion and serving commands.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use trustgate_core::backend::formats::parse_row;
use trustgate_core::{Rank, Taxonomy};
use trustgate_ingest::{
    build_manifest, download, filter_taxa, read_photos, verify, DownloadConfig, ManifestStore,
    QualityFilter,
};
use trustgate_service::{predict_features, predict_pipeline, Bundle, ServiceConfig};

use crate::io;

#[derive(Subcommand)]
pub enum IngestCmd {
    /// Build a manifest of photos under a clade.
    Plan {
        #[arg(long)]
        taxa: PathBuf,
        #[arg(long)]
        photos: PathBuf,
        /// Taxon id of the clade root.
        #[arg(long)]
        clade: i64,
        #[arg(long, default_value = "species")]
        rank: Rank,
        /// `research`, `needs_id`, `casual` or `any`.
        #[arg(long, default_value = "research")]
        quality: QualityFilter,
        #[arg(long)]
        out: PathBuf,
    },
    /// Download pending records; safe to interrupt and rerun.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dest: PathBuf,
        #[arg(long, default_value_t = 8)]
        concurrency: usize,
        /// Requests per second.
        #[arg(long, default_value_t = 20.0)]
        rate: f64,
        #[arg(long, default_value_t = 3)]
        max_attempts: u32,
        /// Overrides the base URL from the environment.
        #[arg(long)]
        base_url: Option<String>,
        /// URL template with `{base}`, `{photo_id}`, `{taxon_id}`, `{ext}`.
        #[arg(long)]
        url_template: Option<String>,
    },
    /// Recompute checksums of downloaded files.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dest: PathBuf,
    },
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// File holding one logit row (JSON array or comma separated).
    #[arg(long, conflicts_with = "features_row", required_unless_present = "features_row")]
    logits_row: Option<PathBuf>,
    /// File holding one feature row; the bundle must include a head.
    #[arg(long)]
    features_row: Option<PathBuf>,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Program (and arguments) that reads an image on stdin and prints a
    /// logit row on stdout.
    #[arg(long, num_args = 1.., allow_hyphen_values = true, value_terminator = ";")]
    image_command: Option<Vec<String>>,
    /// Seconds to wait for the image command.
    #[arg(long, default_value_t = 60)]
    image_timeout: u64,
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

pub fn ingest(cmd: IngestCmd) -> Result<()> {
    match cmd {
        IngestCmd::Plan {
            taxa,
            photos,
            clade,
            rank,
            quality,
            out,
        } => {
            let taxonomy = Taxonomy::read_csv(std::fs::File::open(&taxa).with_context(|| taxa.display().to_string())?)
                .with_context(|| taxa.display().to_string())?;
            let selected = filter_taxa(&taxonomy, clade, rank)?;
            let rows = read_photos(std::fs::File::open(&photos).with_context(|| photos.display().to_string())?)
                .with_context(|| photos.display().to_string())?;
            let mut built = build_manifest(&rows, &selected, quality);
            built.manifest.filter.clade = Some(clade);
            built.manifest.filter.rank = Some(rank);
            ManifestStore::create(&out, built.manifest.clone())?;
            io::println(&format!(
                "taxa={} records={} duplicates={} unsupported_extensions={}",
                selected.len(),
                built.manifest.len(),
                built.duplicates,
                built.unsupported_extensions
            ))
        }
        IngestCmd::Run {
            manifest,
            dest,
            concurrency,
            rate,
            max_attempts,
            base_url,
            url_template,
        } => {
            let mut cfg = DownloadConfig::from_env();
            if let Some(b) = base_url {
                cfg.base_url = b;
            }
            if let Some(t) = url_template {
                cfg.url_template = t;
            }
            cfg.concurrency = concurrency;
            cfg.rate_limit = rate;
            cfg.max_attempts = max_attempts;
            let mut store = ManifestStore::open(&manifest)?;
            let summary = runtime()?.block_on(download(&mut store, &dest, &cfg))?;
            io::println(&serde_json::to_string(&summary)?)
        }
        IngestCmd::Verify { manifest, dest } => {
            let m = ManifestStore::open(&manifest)?.into_manifest();
            let report = verify(&m, &dest);
            io::println(&serde_json::to_string(&report)?)?;
            if !report.is_clean() {
                bail!("{} missing, {} corrupt", report.missing, report.corrupt);
            }
            Ok(())
        }
    }
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let bundle = Bundle::load(&args.bundle)?;
    let report = match (&args.logits_row, &args.features_row) {
        (Some(p), _) => predict_pipeline(&parse_row(&io::text(p)?)?, &bundle)?,
        (None, Some(p)) => predict_features(&parse_row(&io::text(p)?)?, &bundle)?,
        (None, None) => bail!("one of --logits-row or --features-row is required"),
    };
    io::println(&report.render())
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let bundle = Arc::new(Bundle::load(&args.bundle).context("loading bundle")?);
    let config = ServiceConfig {
        image_command: args.image_command,
        image_timeout: Some(Duration::from_secs(args.image_timeout)),
    };
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        trustgate_service::serve(listener, bundle, config).await?;
        Ok(())
    })
}
