use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Context;
use ctdiff_study::{serve, StudyDefinition, StudyService, StudyStore};
use serde_json::json;

use crate::args::ServeArgs;
use crate::manifest::RunRecord;

pub fn run(args: &ServeArgs, write_manifest: impl FnOnce(&RunRecord) -> anyhow::Result<()>) -> anyhow::Result<RunRecord> {
    let study = StudyDefinition::load(&args.study_config)?;
    let log = args.log.clone().unwrap_or_else(|| args.data_root.join("ratings.jsonl"));
    let store = StudyStore::open(study, &log)?;
    let service = Arc::new(StudyService::new(store, &args.data_root));
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("invalid address {}:{}", args.host, args.port))?;
    let record = RunRecord {
        config: json!({ "port": args.port, "host": args.host }),
        inputs: vec![args.study_config.clone(), args.data_root.clone()],
        outputs: vec![log.clone()],
        manifest_dir: log.parent().map(|p| p.to_path_buf()),
    };
    // The server runs until interrupted, so record the run up front.
    write_manifest(&record)?;
    tokio::runtime::Runtime::new()?
        .block_on(serve(addr, service))
        .context("study service failed")?;
    Ok(record)
}
