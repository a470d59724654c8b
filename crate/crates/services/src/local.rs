//! All three services on loopback ports over one shared data root, for tests
//! and `flow run --local`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use picoflow_core::flow::FlowServices;
use tokio::net::TcpListener;

use crate::auth::Tokens;
use crate::catalogd::{self, CatalogClient, CatalogConfig};
use crate::computed::{self, ComputeClient, ComputeConfig, Registry};
use crate::http::{spawn_server, RetryPolicy, RunningServer};
use crate::transferd::{self, TransferClient, TransferConfig};

pub const LOCAL_TOKEN: &str = "local-token";
pub const LOCAL_PRINCIPAL: &str = "picoflow";

#[derive(Debug, Clone)]
pub struct LocalStackOptions {
    pub data_root: PathBuf,
    pub provision_delay: Duration,
    pub idle_timeout: Duration,
    pub max_bytes_per_second: Option<u64>,
}

impl LocalStackOptions {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        Self {
            data_root: data_root.into(),
            provision_delay: Duration::ZERO,
            idle_timeout: Duration::from_secs(300),
            max_bytes_per_second: None,
        }
    }
}

#[derive(Debug)]
pub struct LocalStack {
    pub data_root: PathBuf,
    pub transfer: RunningServer,
    pub compute: RunningServer,
    pub catalog: RunningServer,
}

async fn loopback() -> std::io::Result<TcpListener> {
    TcpListener::bind("127.0.0.1:0").await
}

impl LocalStack {
    /// Transfer root, compute data root and catalog artifact root are all
    /// `data_root`; the catalog log lives in `data_root/catalog`.
    pub async fn start(opts: LocalStackOptions) -> std::io::Result<Self> {
        std::fs::create_dir_all(&opts.data_root)?;
        let tokens = Tokens::single(LOCAL_TOKEN, LOCAL_PRINCIPAL);

        let mut tc = TransferConfig::new(&opts.data_root, tokens.clone());
        tc.max_bytes_per_second = opts.max_bytes_per_second;
        let transfer_router = transferd::router(tc).map_err(std::io::Error::other)?;

        let mut cc = ComputeConfig::new(&opts.data_root, tokens.clone());
        cc.provision_delay = opts.provision_delay;
        cc.idle_timeout = opts.idle_timeout;
        let compute_router = computed::router(cc, Registry::with_builtins());

        let mut kc = CatalogConfig::new(opts.data_root.join("catalog").join("records.jsonl"), tokens);
        kc.publishers = BTreeSet::from([LOCAL_PRINCIPAL.to_string()]);
        kc.artifact_root = Some(opts.data_root.clone());
        let catalog_router = catalogd::router(kc).map_err(std::io::Error::other)?;

        Ok(Self {
            data_root: opts.data_root,
            transfer: spawn_server(loopback().await?, transfer_router)?,
            compute: spawn_server(loopback().await?, compute_router)?,
            catalog: spawn_server(loopback().await?, catalog_router)?,
        })
    }

    pub fn data_root(&self) -> &Path {
        &self.data_root
    }

    pub fn transfer_client(&self) -> TransferClient {
        TransferClient::new(self.transfer.url(), LOCAL_TOKEN)
    }

    pub fn compute_client(&self) -> ComputeClient {
        ComputeClient::new(self.compute.url(), LOCAL_TOKEN)
    }

    pub fn catalog_client(&self) -> CatalogClient {
        CatalogClient::new(self.catalog.url(), Some(LOCAL_TOKEN.to_string()))
    }

    pub fn services(&self) -> FlowServices {
        FlowServices {
            transfer: Arc::new(self.transfer_client()),
            compute: Arc::new(self.compute_client()),
            catalog: Arc::new(self.catalog_client()),
        }
    }

    /// Same as [`LocalStack::services`] but without client retries, so
    /// failures surface immediately.
    pub fn services_without_retry(&self) -> FlowServices {
        FlowServices {
            transfer: Arc::new(self.transfer_client().with_retry(RetryPolicy::none())),
            compute: Arc::new(self.compute_client().with_retry(RetryPolicy::none())),
            catalog: Arc::new(self.catalog_client().with_retry(RetryPolicy::none())),
        }
    }

    pub async fn shutdown(self) -> std::io::Result<()> {
        self.transfer.shutdown().await?;
        self.compute.shutdown().await?;
        self.catalog.shutdown().await
    }
}
