//! Long-running subcommands and the commands that talk to services.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use picoflow_core::flow::{run_flow, BackoffPolicy, FlowDefinition, FlowKind, FlowOptions, FlowServices, FlowState, RunLog};
use picoflow_core::watcher::WatchConfig;
use picoflow_services::auth::Tokens;
use picoflow_services::catalogd::{self, CatalogClient, CatalogConfig};
use picoflow_services::computed::{self, ComputeClient, ComputeConfig, Registry};
use picoflow_services::http::serve_until;
use picoflow_services::transferd::{self, TransferClient, TransferConfig};
use picoflow_services::{run_pipeline, LocalStack, LocalStackOptions, PipelineConfig};
use tokio::net::TcpListener;

use crate::config::{client_url, seconds, GlobalConfig, CATALOGD_LISTEN, COMPUTED_LISTEN, TRANSFERD_LISTEN};
use crate::{emit, usage, CatalogdArgs, ComputedArgs, FlowClientArgs, FlowRunArgs, LocalArgs, TokenArgs, TransferdArgs, WatchArgs};

const DEFAULT_DATA_ROOT: &str = "picoflow-data";
const DEFAULT_JOURNAL: &str = "picoflow-state/journal.jsonl";
const DEFAULT_RUN_LOG: &str = "picoflow-state/runs.jsonl";
const DEFAULT_DEST_ROOT: &str = "incoming";

/// Resolves on Ctrl-C or SIGTERM.
async fn interrupted() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}

fn tokens(config: &GlobalConfig, args: &TokenArgs) -> anyhow::Result<Tokens> {
    let mut tokens = Tokens::default();
    if args.tokens.is_empty() {
        for (token, principal) in &config.tokens {
            tokens.insert(token, principal);
        }
    } else {
        for spec in &args.tokens {
            let (token, principal) = spec
                .split_once('=')
                .filter(|(t, p)| !t.is_empty() && !p.is_empty())
                .ok_or_else(|| usage(format!("--token expects TOKEN=PRINCIPAL, got {spec:?}")))?;
            tokens.insert(token, principal);
        }
    }
    if tokens.0.is_empty() {
        return Err(usage("no bearer tokens configured: add a [tokens] table or pass --token"));
    }
    Ok(tokens)
}

async fn bind(addr: &str) -> anyhow::Result<TcpListener> {
    let listener = TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    Ok(listener)
}

fn required(value: Option<PathBuf>, flag: &str, key: &str) -> anyhow::Result<PathBuf> {
    value.ok_or_else(|| usage(format!("{flag} is required (or set {key} in the config)")))
}

pub async fn transferd(config: &GlobalConfig, args: &TransferdArgs) -> anyhow::Result<ExitCode> {
    let section = &config.transferd;
    let root = required(args.root.clone().or(section.root.clone()), "--root", "transferd.root")?;
    let mut tc = TransferConfig::new(&root, tokens(config, &args.tokens)?);
    tc.max_bytes_per_second = args.max_bytes_per_second.or(section.max_bytes_per_second);
    if tc.max_bytes_per_second == Some(0) {
        return Err(usage("max_bytes_per_second must be > 0"));
    }
    let router = transferd::router(tc).map_err(|e| usage(e.to_string()))?;
    let listen = args.listen.clone().or(section.listen.clone()).unwrap_or(TRANSFERD_LISTEN.into());
    serve_until(bind(&listen).await?, router, interrupted()).await?;
    Ok(ExitCode::SUCCESS)
}

pub async fn computed(config: &GlobalConfig, args: &ComputedArgs) -> anyhow::Result<ExitCode> {
    let section = &config.computed;
    let data_root = required(args.data_root.clone().or(section.data_root.clone()), "--data-root", "computed.data_root")?;
    if !data_root.is_dir() {
        return Err(usage(format!("data root {} is not a directory", data_root.display())));
    }
    let mut cc = ComputeConfig::new(&data_root, tokens(config, &args.tokens)?);
    if let Some(s) = args.provision_delay.or(section.provision_delay) {
        cc.provision_delay = seconds("provision_delay", s).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(s) = args.idle_timeout.or(section.idle_timeout) {
        cc.idle_timeout = seconds("idle_timeout", s).map_err(|e| usage(e.to_string()))?;
    }
    log::info!("provision delay {:?}, idle timeout {:?}", cc.provision_delay, cc.idle_timeout);
    let router = computed::router(cc, Registry::with_builtins());
    let listen = args.listen.clone().or(section.listen.clone()).unwrap_or(COMPUTED_LISTEN.into());
    serve_until(bind(&listen).await?, router, interrupted()).await?;
    Ok(ExitCode::SUCCESS)
}

pub async fn catalogd(config: &GlobalConfig, args: &CatalogdArgs) -> anyhow::Result<ExitCode> {
    let section = &config.catalogd;
    let log_path = required(args.log.clone().or(section.log.clone()), "--log", "catalogd.log")?;
    let tokens = tokens(config, &args.tokens)?;
    let publishers: BTreeSet<String> = if !args.publishers.is_empty() {
        args.publishers.iter().cloned().collect()
    } else if let Some(p) = &section.publishers {
        p.iter().cloned().collect()
    } else {
        tokens.principals().into_iter().map(str::to_string).collect()
    };
    let mut kc = CatalogConfig::new(log_path, tokens);
    kc.publishers = publishers;
    kc.artifact_root = args.artifact_root.clone().or(section.artifact_root.clone());
    kc.static_dir = args.static_dir.clone().or(section.static_dir.clone());
    kc.cors = args.cors || section.cors.unwrap_or(false);
    let router = catalogd::router(kc).context("loading the record log")?;
    let listen = args.listen.clone().or(section.listen.clone()).unwrap_or(CATALOGD_LISTEN.into());
    serve_until(bind(&listen).await?, router, interrupted()).await?;
    Ok(ExitCode::SUCCESS)
}

fn flow_options(config: &GlobalConfig) -> anyhow::Result<FlowOptions> {
    let f = &config.flow;
    let mut opts = FlowOptions::default();
    let d = BackoffPolicy::default();
    opts.backoff = BackoffPolicy::new(
        f.poll_initial.unwrap_or(d.initial()),
        f.poll_factor.unwrap_or(d.factor()),
        f.poll_cap.unwrap_or(d.cap()),
    )
    .map_err(|e| usage(format!("flow poll settings: {e}")))?;
    if let Some(root) = &f.results_root {
        opts.results_root = root.clone();
    }
    if let Some(v) = &f.visible_to {
        if v.is_empty() {
            return Err(usage("flow.visible_to must not be empty"));
        }
        opts.visible_to = v.clone();
    }
    if let Some(s) = f.analysis_timeout {
        opts.analysis_timeout = seconds("analysis_timeout", s).map_err(|e| usage(e.to_string()))?;
    }
    Ok(opts)
}

/// Either the configured remote services or an in-process stack.
enum Backend {
    Remote(FlowServices),
    Local(LocalStack),
}

impl Backend {
    async fn open(config: &GlobalConfig, client: &FlowClientArgs, local: &LocalArgs) -> anyhow::Result<Self> {
        if local.local {
            let root = local.data_root.clone().unwrap_or(DEFAULT_DATA_ROOT.into());
            let mut opts = LocalStackOptions::new(&root);
            if let Some(s) = local.provision_delay.or(config.computed.provision_delay) {
                opts.provision_delay = seconds("provision_delay", s).map_err(|e| usage(e.to_string()))?;
            }
            if let Some(s) = config.computed.idle_timeout {
                opts.idle_timeout = seconds("idle_timeout", s).map_err(|e| usage(e.to_string()))?;
            }
            opts.max_bytes_per_second = config.transferd.max_bytes_per_second;
            let stack = LocalStack::start(opts).await.context("starting local services")?;
            log::info!(
                "local services: transfer {}, compute {}, catalog {} (data root {})",
                stack.transfer.url(),
                stack.compute.url(),
                stack.catalog.url(),
                root.display()
            );
            return Ok(Backend::Local(stack));
        }
        let token = client
            .token
            .clone()
            .or(config.flow.token.clone())
            .ok_or_else(|| usage("a service token is required: pass --token, set flow.token, or use --local"))?;
        let t = &config.transferd;
        let c = &config.computed;
        let k = &config.catalogd;
        Ok(Backend::Remote(FlowServices {
            transfer: Arc::new(TransferClient::new(client_url(&t.url, &t.listen, TRANSFERD_LISTEN), &token)),
            compute: Arc::new(ComputeClient::new(client_url(&c.url, &c.listen, COMPUTED_LISTEN), &token)),
            catalog: Arc::new(CatalogClient::new(client_url(&k.url, &k.listen, CATALOGD_LISTEN), Some(token))),
        }))
    }

    fn services(&self) -> FlowServices {
        match self {
            Backend::Remote(s) => s.clone(),
            Backend::Local(stack) => stack.services(),
        }
    }

    async fn close(self) -> anyhow::Result<()> {
        if let Backend::Local(stack) = self {
            stack.shutdown().await?;
        }
        Ok(())
    }
}

fn dest_root(config: &GlobalConfig, client: &FlowClientArgs) -> String {
    client
        .dest_root
        .clone()
        .or(config.flow.dest_root.clone())
        .unwrap_or(DEFAULT_DEST_ROOT.into())
}

pub async fn watch(config: &GlobalConfig, args: &WatchArgs) -> anyhow::Result<ExitCode> {
    let w = &config.watcher;
    let watch_dir = required(args.watch_dir.clone().or(w.watch_dir.clone()), "--watch-dir", "watcher.watch_dir")?;
    let mut wc = WatchConfig::new(watch_dir);
    if let Some(g) = args.glob.clone().or(w.glob.clone()) {
        wc.glob = g;
    }
    if let Some(s) = args.stability_window.or(w.stability_window) {
        wc.stability_window = seconds("stability_window", s).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(s) = args.poll_period.or(w.poll_period) {
        wc.poll_period = seconds("poll_period", s).map_err(|e| usage(e.to_string()))?;
    }
    wc.validate().map_err(|e| usage(e.to_string()))?;
    let pipeline = PipelineConfig {
        watch: wc,
        journal_path: args.journal.clone().or(w.journal.clone()).unwrap_or(DEFAULT_JOURNAL.into()),
        run_log: args.run_log.clone().or(w.run_log.clone()).unwrap_or(DEFAULT_RUN_LOG.into()),
        dest_root: dest_root(config, &args.client),
        options: flow_options(config)?,
    };
    let backend = Backend::open(config, &args.client, &args.local).await?;
    log::info!(
        "watching {} for {} (journal {}, run log {})",
        pipeline.watch.watch_dir.display(),
        pipeline.watch.glob,
        pipeline.journal_path.display(),
        pipeline.run_log.display()
    );

    let stop = Arc::new(AtomicBool::new(false));
    let trip = stop.clone();
    tokio::spawn(async move {
        interrupted().await;
        log::info!("finishing in-flight flows");
        trip.store(true, Ordering::SeqCst);
    });
    let result = run_pipeline(pipeline, backend.services(), stop).await;
    backend.close().await?;
    let summary = result?;
    log::info!(
        "{} triggered, {} resumed, {} succeeded, {} failed, {} skipped",
        summary.triggered,
        summary.resumed,
        summary.succeeded,
        summary.failed,
        summary.skipped
    );
    Ok(ExitCode::SUCCESS)
}

fn detect(file: &Path) -> anyhow::Result<FlowKind> {
    FlowKind::detect(file)
        .with_context(|| format!("reading {}", file.display()))?
        .with_context(|| format!("{} holds no hyperspectral or spatiotemporal dataset", file.display()))
}

pub async fn flow_run(config: &GlobalConfig, args: &FlowRunArgs) -> anyhow::Result<ExitCode> {
    let kind = detect(&args.file)?;
    let options = flow_options(config)?;
    let run_log = args
        .run_log
        .as_ref()
        .map(RunLog::open)
        .transpose()
        .context("opening run log")?;
    let backend = Backend::open(config, &args.client, &args.local).await?;
    let def = FlowDefinition::new(&args.file, dest_root(config, &args.client), kind);
    let run = run_flow(def, &backend.services(), &options).await;
    backend.close().await?;
    if let Some(log) = run_log {
        log.append(&run).context("appending to run log")?;
    }
    emit(&format!("{}\n", serde_json::to_string_pretty(&run)?))?;
    Ok(match run.state {
        FlowState::Succeeded => ExitCode::SUCCESS,
        _ => ExitCode::from(1),
    })
}
