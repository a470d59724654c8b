use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

/// TCP proxy that flips one bit of one byte in the first HTTP request body it
/// forwards, then relays everything else untouched.
#[derive(Debug)]
pub struct CorruptingProxy {
    pub addr: SocketAddr,
    flipped: Arc<AtomicBool>,
    task: tokio::task::JoinHandle<()>,
}

impl CorruptingProxy {
    /// `body_offset` is the index, within the request body, of the byte to
    /// corrupt. `None` makes a transparent proxy.
    pub async fn start(upstream: SocketAddr, body_offset: Option<u64>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        // A transparent proxy counts as already spent.
        let flipped = Arc::new(AtomicBool::new(body_offset.is_none()));
        let spent = flipped.clone();
        let task = tokio::spawn(async move {
            while let Ok((client, _)) = listener.accept().await {
                let spent = spent.clone();
                tokio::spawn(async move {
                    if let Ok(server) = TcpStream::connect(upstream).await {
                        let _ = relay(client, server, body_offset.unwrap_or(0), spent).await;
                    }
                });
            }
        });
        Ok(Self { addr, flipped, task })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// True once a byte has been corrupted.
    pub fn has_corrupted(&self) -> bool {
        self.flipped.load(Ordering::SeqCst)
    }
}

impl Drop for CorruptingProxy {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn relay(client: TcpStream, server: TcpStream, offset: u64, spent: Arc<AtomicBool>) -> std::io::Result<()> {
    let (mut cr, mut cw) = client.into_split();
    let (mut sr, mut sw) = server.into_split();
    let upstream = async move {
        let mut buf = vec![0u8; 64 * 1024];
        let mut head = Vec::new();
        let mut body_seen: Option<u64> = None;
        loop {
            let n = cr.read(&mut buf).await?;
            if n == 0 {
                return sw.shutdown().await;
            }
            let chunk = &mut buf[..n];
            if !spent.load(Ordering::SeqCst) {
                let mut start = 0usize;
                if body_seen.is_none() {
                    head.extend_from_slice(chunk);
                    if let Some(pos) = head.windows(4).position(|w| w == b"\r\n\r\n") {
                        let body_in_head = head.len() - (pos + 4);
                        start = n - body_in_head;
                        body_seen = Some(0);
                    }
                }
                if let Some(seen) = body_seen {
                    let here = (n - start) as u64;
                    if offset >= seen && offset < seen + here && !spent.swap(true, Ordering::SeqCst) {
                        chunk[start + (offset - seen) as usize] ^= 0x01;
                    }
                    body_seen = Some(seen + here);
                }
            }
            sw.write_all(chunk).await?;
        }
    };
    let downstream = async move {
        tokio::io::copy(&mut sr, &mut cw).await?;
        cw.shutdown().await
    };
    let (a, b) = tokio::join!(upstream, downstream);
    a.and(b)
}
