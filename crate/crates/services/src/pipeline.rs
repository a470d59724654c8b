//! Watcher to flow engine glue: every trigger becomes a concurrently running
//! flow whose terminal record goes to the run log.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use picoflow_core::digest::sha256_file;
use picoflow_core::flow::{
    flow_id_for, read_runs, run_flow, FlowDefinition, FlowKind, FlowOptions, FlowRun, FlowServices, FlowState, RunLog,
};
use picoflow_core::watcher::{watch, CheckpointJournal, Trigger, WatchConfig, WatchError};
use tokio::sync::mpsc;
use tokio::task::JoinSet;
use uuid::Uuid;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub watch: WatchConfig,
    pub journal_path: PathBuf,
    pub run_log: PathBuf,
    /// Destination prefix on the transfer server.
    pub dest_root: String,
    pub options: FlowOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PipelineSummary {
    pub triggered: usize,
    pub succeeded: usize,
    pub failed: usize,
    /// Triggers whose file was not a recognized EMD-lite dataset.
    pub skipped: usize,
    /// Journaled flows from an earlier run that had no terminal run-log
    /// line and were started again under their original flow id.
    pub resumed: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Watch(#[from] WatchError),
    #[error("journal {0}: {1}")]
    Journal(PathBuf, std::io::Error),
    #[error("run log {0}: {1}")]
    RunLog(PathBuf, std::io::Error),
    #[error("watcher thread: {0}")]
    Join(String),
}

/// Runs until `stop` is raised, then waits for in-flight flows to finish.
///
/// A journal entry is written before its flow starts, so a crash can leave
/// entries whose flow never reached the run log. Those are resumed first,
/// with the same flow id, provided the file still has the journaled digest.
pub async fn run_pipeline(
    config: PipelineConfig,
    services: FlowServices,
    stop: Arc<AtomicBool>,
) -> Result<PipelineSummary, PipelineError> {
    let run_log = Arc::new(RunLog::open(&config.run_log).map_err(|e| PipelineError::RunLog(config.run_log.clone(), e))?);
    let mut journal =
        CheckpointJournal::open(&config.journal_path).map_err(|e| PipelineError::Journal(config.journal_path.clone(), e))?;
    let finished: HashSet<Uuid> = read_runs(&config.run_log)
        .map_err(|e| PipelineError::RunLog(config.run_log.clone(), e))?
        .iter()
        .map(|r| r.definition.flow_id)
        .collect();
    let unfinished: Vec<Trigger> = journal
        .entries()
        .iter()
        .map(Trigger::from)
        .filter(|t| !finished.contains(&flow_id_for(t)))
        .collect();

    let (tx, mut rx) = mpsc::unbounded_channel::<Trigger>();
    let watch_config = config.watch.clone();
    let watcher = tokio::task::spawn_blocking(move || {
        let mut sink = |t: Trigger| {
            let _ = tx.send(t);
        };
        watch(watch_config, &mut journal, &mut sink, &stop)
    });

    let mut summary = PipelineSummary::default();
    let mut flows: JoinSet<FlowRun> = JoinSet::new();
    let launcher = Launcher {
        services,
        options: Arc::new(config.options),
        run_log,
        dest_root: config.dest_root,
    };
    for trigger in unfinished {
        match still_same(&trigger).await {
            Ok(true) => {}
            Ok(false) => {
                log::warn!("{}: changed since it was journaled, not resumed", trigger.path.display());
                continue;
            }
            Err(e) => return Err(PipelineError::Join(e.to_string())),
        }
        log::info!("resuming interrupted flow for {}", trigger.path.display());
        if launcher.start(&trigger, &mut flows).await? {
            summary.resumed += 1;
        }
    }
    loop {
        tokio::select! {
            trigger = rx.recv() => {
                let Some(trigger) = trigger else { break };
                summary.triggered += 1;
                if !launcher.start(&trigger, &mut flows).await? {
                    summary.skipped += 1;
                }
            }
            Some(done) = flows.join_next(), if !flows.is_empty() => {
                tally(&mut summary, done);
            }
        }
    }
    while let Some(done) = flows.join_next().await {
        tally(&mut summary, done);
    }
    watcher.await.map_err(|e| PipelineError::Join(e.to_string()))??;
    Ok(summary)
}

struct Launcher {
    services: FlowServices,
    options: Arc<FlowOptions>,
    run_log: Arc<RunLog>,
    dest_root: String,
}

impl Launcher {
    /// Starts the flow for `trigger`; false if the file is not a recognized
    /// dataset.
    async fn start(&self, trigger: &Trigger, flows: &mut JoinSet<FlowRun>) -> Result<bool, PipelineError> {
        let path = trigger.path.clone();
        let kind = match tokio::task::spawn_blocking(move || FlowKind::detect(&path)).await {
            Ok(Ok(Some(kind))) => kind,
            Ok(Ok(None)) => {
                log::warn!("{}: no recognized dataset, skipped", trigger.path.display());
                return Ok(false);
            }
            Ok(Err(e)) => {
                log::warn!("{}: {e}, skipped", trigger.path.display());
                return Ok(false);
            }
            Err(e) => return Err(PipelineError::Join(e.to_string())),
        };
        let def = FlowDefinition::for_trigger(trigger, self.dest_root.clone(), kind);
        log::info!("flow {} started for {}", def.flow_id, trigger.path.display());
        let services = self.services.clone();
        let options = self.options.clone();
        let run_log = self.run_log.clone();
        flows.spawn(async move {
            let run = run_flow(def, &services, &options).await;
            if let Err(e) = run_log.append(&run) {
                log::error!("cannot append flow {} to run log: {e}", run.definition.flow_id);
            }
            run
        });
        Ok(true)
    }
}

async fn still_same(trigger: &Trigger) -> Result<bool, tokio::task::JoinError> {
    let path = trigger.path.clone();
    let digest = tokio::task::spawn_blocking(move || sha256_file(&path)).await?;
    Ok(matches!(digest, Ok((hex, size)) if hex == trigger.sha256 && size == trigger.size))
}

fn tally(summary: &mut PipelineSummary, done: Result<FlowRun, tokio::task::JoinError>) {
    match done {
        Ok(run) if run.state == FlowState::Succeeded => {
            log::info!(
                "flow {} succeeded in {:.2}s",
                run.definition.flow_id,
                run.total_runtime().unwrap_or_default()
            );
            summary.succeeded += 1;
        }
        Ok(_) => summary.failed += 1,
        Err(e) => {
            log::error!("flow task panicked: {e}");
            summary.failed += 1;
        }
    }
}
