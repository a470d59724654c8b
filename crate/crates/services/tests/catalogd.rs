use std::collections::BTreeSet;
use std::path::Path;

use picoflow_core::analysis::{Artifact, ArtifactKind, ArtifactManifest};
use picoflow_core::emdlite::ExperimentMetadata;
use picoflow_core::protocol::{CatalogRecord, SearchPage, PUBLIC};
use picoflow_services::auth::Tokens;
use picoflow_services::catalogd::{router, CatalogClient, CatalogConfig, SearchParams};
use picoflow_services::http::{spawn_server, RetryPolicy, RunningServer};
use picoflow_testkit::{oracle_search, random_corpus, random_query, PRINCIPALS};
use rand::SeedableRng;
use uuid::Uuid;

const PUBLISHER: &str = "pub-token";

fn tokens() -> Tokens {
    let mut t = Tokens::single(PUBLISHER, "flows");
    for p in PRINCIPALS {
        t.insert(format!("{p}-token"), p);
    }
    t
}

async fn server(dir: &Path) -> RunningServer {
    let mut c = CatalogConfig::new(dir.join("records.jsonl"), tokens());
    c.publishers = BTreeSet::from(["flows".to_string()]);
    c.artifact_root = Some(dir.join("data"));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    spawn_server(listener, router(c).unwrap()).unwrap()
}

fn publisher(srv: &RunningServer) -> CatalogClient {
    CatalogClient::new(srv.url(), Some(PUBLISHER.into())).with_retry(RetryPolicy::none())
}

fn as_principal(srv: &RunningServer, p: Option<&str>) -> CatalogClient {
    CatalogClient::new(srv.url(), p.map(|p| format!("{p}-token")))
}

fn record(desc: &str, when: &str, visible: &[&str]) -> CatalogRecord {
    let mut m = ExperimentMetadata::example(when);
    m.sample.description = desc.into();
    CatalogRecord {
        record_id: Uuid::new_v4(),
        flow_id: Uuid::new_v4(),
        flow_kind: None,
        acquisition_datetime: when.into(),
        metadata: serde_json::to_value(&m).unwrap(),
        artifacts: ArtifactManifest::default(),
        visible_to: visible.iter().map(|s| s.to_string()).collect(),
        published_at: chrono::Utc::now(),
    }
}

fn text(t: &str) -> SearchParams {
    SearchParams {
        text: Some(t.into()),
        ..Default::default()
    }
}

#[tokio::test]
async fn publish_then_find() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let r = record("gold nanoparticles on a carbon background", "2023-05-01T10:00:00Z", &[PUBLIC]);
    publisher(&srv).publish_record(&r).await.unwrap();

    let anon = as_principal(&srv, None);
    let page = anon.search(&text(&r.record_id.to_string())).await.unwrap();
    assert_eq!(page.total, 1);
    assert_eq!(page.records[0], r);
    assert_eq!(anon.search(&text("Gold Nanoparticles")).await.unwrap().total, 1);
    assert_eq!(anon.search(&text("gold silver")).await.unwrap().total, 0);
    assert_eq!(anon.get(r.record_id).await.unwrap(), Some(r));
}

#[tokio::test]
async fn publish_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let p = publisher(&srv);
    let r = record("x", "2023-05-01T10:00:00Z", &[PUBLIC]);
    p.publish_record(&r).await.unwrap();
    let dup = p.publish_record(&r).await.unwrap_err();
    assert!(dup.detail.contains("409"), "{dup}");

    let mut bad = record("x", "2023-05-01T10:00:00Z", &[PUBLIC]);
    bad.metadata["stage_position"]["z"] = serde_json::json!("up");
    let err = p.publish_record(&bad).await.unwrap_err();
    assert!(err.detail.contains("400") && err.detail.contains("metadata.stage_position.z"), "{err}");

    let http = reqwest::Client::new();
    let url = format!("{}/records", srv.url());
    let raw = http.post(&url).bearer_auth(PUBLISHER).body("{\"record_id\": 5}").send().await.unwrap();
    assert_eq!(raw.status(), 400);
    let text = raw.text().await.unwrap();
    assert!(text.contains("record_id"), "{text}");

    let ok = record("y", "2023-05-01T10:00:00Z", &[PUBLIC]);
    assert_eq!(http.post(&url).json(&ok).send().await.unwrap().status(), 401);
    assert_eq!(http.post(&url).bearer_auth("alice-token").json(&ok).send().await.unwrap().status(), 403);

    assert_eq!(as_principal(&srv, None).search(&SearchParams::default()).await.unwrap().total, 1);
}

#[tokio::test]
async fn restart_replays_log() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let mut ids = Vec::new();
    for i in 0..5 {
        let r = record("persist", &format!("2023-05-0{}T00:00:00Z", i + 1), &[PUBLIC]);
        ids.push(r.record_id);
        publisher(&srv).publish_record(&r).await.unwrap();
    }
    srv.shutdown().await.unwrap();
    // a crash mid-append leaves a torn tail
    use std::io::Write;
    std::fs::OpenOptions::new()
        .append(true)
        .open(dir.path().join("records.jsonl"))
        .unwrap()
        .write_all(b"{\"record_id\":\"")
        .unwrap();

    let srv = server(dir.path()).await;
    let page = as_principal(&srv, None).search(&text("persist")).await.unwrap();
    assert_eq!(page.total, 5);
    ids.reverse();
    assert_eq!(page.records.iter().map(|r| r.record_id).collect::<Vec<_>>(), ids);
}

#[tokio::test]
async fn ack_lost_then_retry_counts_as_success() {
    // Simulates a publish whose ack never arrived: the record is already in
    // the log when the client retries.
    let dir = tempfile::tempdir().unwrap();
    let r = record("lost ack", "2023-05-01T10:00:00Z", &[PUBLIC]);
    std::fs::write(dir.path().join("records.jsonl"), format!("{}\n", serde_json::to_string(&r).unwrap())).unwrap();
    let srv = server(dir.path()).await;

    // first attempt goes to a dead port, the retry reaches the server
    let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = probe.local_addr().unwrap();
    drop(probe);
    let proxy_swap = tokio::spawn({
        let target = srv.addr;
        async move {
            tokio::time::sleep(std::time::Duration::from_millis(100)).await;
            let l = tokio::net::TcpListener::bind(dead).await.unwrap();
            loop {
                let (mut c, _) = l.accept().await.unwrap();
                let mut s = tokio::net::TcpStream::connect(target).await.unwrap();
                tokio::spawn(async move {
                    let _ = tokio::io::copy_bidirectional(&mut c, &mut s).await;
                });
            }
        }
    });
    let client = CatalogClient::new(format!("http://{dead}"), Some(PUBLISHER.into())).with_retry(RetryPolicy {
        delays: vec![std::time::Duration::from_millis(300)],
    });
    client.publish_record(&r).await.unwrap();
    proxy_swap.abort();
    assert_eq!(as_principal(&srv, None).search(&text("lost")).await.unwrap().total, 1);
}

#[tokio::test]
async fn visibility_on_records_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let data = dir.path().join("data/results/f1");
    std::fs::create_dir_all(&data).unwrap();
    std::fs::write(data.join("spectrum.csv"), "channel_index,counts\n0,1\n").unwrap();
    let mut r = record("private", "2023-05-01T10:00:00Z", &["alice"]);
    r.artifacts = ArtifactManifest {
        entries: vec![Artifact {
            kind: ArtifactKind::Spectrum,
            path: "results/f1/spectrum.csv".into(),
        }],
    };
    publisher(&srv).publish_record(&r).await.unwrap();

    let http = reqwest::Client::new();
    let rec_url = format!("{}/records/{}", srv.url(), r.record_id);
    let art_url = format!("{}/artifacts/{}/spectrum.csv", srv.url(), r.record_id);
    assert_eq!(http.get(&rec_url).send().await.unwrap().status(), 401);
    assert_eq!(http.get(&rec_url).bearer_auth("bob-token").send().await.unwrap().status(), 404);
    assert_eq!(http.get(&rec_url).bearer_auth("nobody").send().await.unwrap().status(), 401);
    assert_eq!(http.get(&rec_url).bearer_auth("alice-token").send().await.unwrap().status(), 200);
    assert_eq!(http.get(&art_url).send().await.unwrap().status(), 401);
    let art = http.get(&art_url).bearer_auth("alice-token").send().await.unwrap();
    assert_eq!(art.status(), 200);
    assert_eq!(art.headers()["content-type"], "text/csv");
    assert_eq!(art.text().await.unwrap(), "channel_index,counts\n0,1\n");
    let missing = format!("{}/artifacts/{}/nope.csv", srv.url(), r.record_id);
    assert_eq!(http.get(&missing).bearer_auth("alice-token").send().await.unwrap().status(), 404);

    assert_eq!(as_principal(&srv, None).search(&text("private")).await.unwrap().total, 0);
    assert_eq!(as_principal(&srv, Some("bob")).search(&text("private")).await.unwrap().total, 0);
    assert_eq!(as_principal(&srv, Some("alice")).search(&text("private")).await.unwrap().total, 1);
}

#[tokio::test]
async fn bad_dates_are_400() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let http = reqwest::Client::new();
    for q in ["from=yesterday", "to=2023-02-30", "from=2023-05-02&to=2023-05-01", "limit=x"] {
        let resp = http.get(format!("{}/search?{q}", srv.url())).send().await.unwrap();
        assert_eq!(resp.status(), 400, "{q}");
    }
}

#[tokio::test]
async fn randomized_search_matches_linear_scan() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let corpus = random_corpus(300, &mut rng);
    let p = publisher(&srv);
    for r in &corpus {
        p.publish_record(r).await.unwrap();
    }
    for _ in 0..60 {
        let q = random_query(&mut rng);
        let expected = oracle_search(&corpus, &q);
        let page: SearchPage = as_principal(&srv, q.principal)
            .search(&SearchParams {
                text: q.text.clone(),
                from: q.from.clone(),
                to: q.to.clone(),
                limit: Some(1000),
                offset: None,
            })
            .await
            .unwrap();
        let got: Vec<Uuid> = page.records.iter().map(|r| r.record_id).collect();
        assert_eq!(page.total, expected.len(), "{q:?}");
        assert_eq!(got, expected, "{q:?}");
        for r in &page.records {
            assert!(r.is_visible_to(q.principal));
        }
    }
}
