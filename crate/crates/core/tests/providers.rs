//! Embedding store and HTTP provider behaviour against a local stub server.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use lemole::prompts::{
    self, embed, EmbeddingCache, EmbeddingProvider, FileProvider, Manifest, PromptKind, PromptText, RemoteProvider, RetryPolicy, BLOB_FILE,
    MANIFEST_FILE,
};
use lemole::{Error, Matrix};

use common::{embedding_body, StubServer};

fn fast_policy() -> RetryPolicy {
    RetryPolicy { retries: 3, base_delay: Duration::from_millis(1) }
}

#[test]
fn store_layout_and_multiple_entries() {
    let dir = tempfile::tempdir().unwrap();
    let a = Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64 * 0.25);
    let b = Matrix::from_fn(4, 3, |i, j| -((i + j) as f64));
    prompts::write_embedding_store(dir.path(), &[("first".into(), a.clone()), ("second".into(), b.clone())]).unwrap();
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.entries.len(), 2);
    let blob = std::fs::metadata(dir.path().join(BLOB_FILE)).unwrap().len();
    assert_eq!(blob, (6 + 12) * 4);
    let fp = FileProvider::load(dir.path()).unwrap();
    assert_eq!(*fp.get(&prompts::prompt_hash_hex("second")).unwrap(), b);
    assert_eq!(fp.encode("first").unwrap(), a);
    assert!(matches!(fp.encode("third"), Err(Error::CacheMiss(_))));
}

#[test]
fn store_detects_hash_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    prompts::write_embedding_store(dir.path(), &[("alpha".into(), Matrix::filled(1, 2, 1.0))]).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    // Relabel the entry so its key no longer hashes its recorded text.
    let text = std::fs::read_to_string(&path).unwrap().replace(&prompts::prompt_hash_hex("alpha"), &prompts::prompt_hash_hex("beta"));
    std::fs::write(&path, text).unwrap();
    assert!(matches!(FileProvider::load(dir.path()), Err(Error::HashMismatch { .. })));
}

#[test]
fn store_without_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(FileProvider::load(dir.path()).is_err());
}

#[test]
fn remote_round_trip_sends_the_text() {
    let (body, vals) = embedding_body(2, 768);
    let srv = StubServer::start(vec![(200, body)]);
    let p = RemoteProvider::new(srv.url.clone());
    let prompt = PromptText::new("two tokens", PromptKind::Dynamic).unwrap();
    let e = embed(&p, &prompt).unwrap();
    assert_eq!((e.rows(), e.dim()), (2, 768));
    assert_eq!(e.matrix.as_slice(), vals.as_slice());
    assert_eq!(e.prompt_hash, prompt.hash());
    assert!(e.provider_id.starts_with("remote:"));
    let sent: serde_json::Value = serde_json::from_str(&srv.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(sent["text"], "two tokens");
}

#[test]
fn remote_results_are_memoized() {
    let (body, _) = embedding_body(1, 4);
    let srv = StubServer::start(vec![(200, body)]);
    let p = RemoteProvider::new(srv.url.clone());
    let a = p.encode("same").unwrap();
    let b = p.encode("same").unwrap();
    assert_eq!(a, b);
    assert_eq!(srv.hits(), 1);
    p.encode("other").unwrap();
    assert_eq!(srv.hits(), 2);
}

#[test]
fn retries_use_exponential_backoff() {
    let (body, _) = embedding_body(1, 2);
    let srv = StubServer::start(vec![(503, String::new()), (429, String::new()), (200, body)]);
    let started = Instant::now();
    RemoteProvider::new(srv.url.clone()).fetch("x").unwrap();
    // 100 + 200 ms before the second and third attempts.
    assert!(started.elapsed() >= Duration::from_millis(300));
    assert_eq!(srv.hits(), 3);
    assert_eq!(RetryPolicy::default().delays(), [100, 200, 400].map(Duration::from_millis));
}

#[test]
fn client_errors_and_bad_bodies_are_malformed() {
    let srv = StubServer::start(vec![(404, "{}".into())]);
    let p = RemoteProvider::with_policy(srv.url.clone(), fast_policy());
    assert!(matches!(p.fetch("x"), Err(Error::MalformedResponse(_))));
    assert_eq!(srv.hits(), 1, "client errors are not retried");

    for bad in ["not json", "{\"embedding\": []}", "{\"embedding\": [[1.0], [1.0, 2.0]]}", "{\"vectors\": [[1.0]]}"] {
        let srv = StubServer::start(vec![(200, bad.into())]);
        let p = RemoteProvider::with_policy(srv.url.clone(), fast_policy());
        assert!(matches!(p.fetch("x"), Err(Error::MalformedResponse(_))), "{bad}");
    }
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    // Bind then drop to get a port nobody listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let p = RemoteProvider::with_policy(format!("http://127.0.0.1:{port}/embed"), fast_policy());
    assert!(matches!(p.fetch("x"), Err(Error::ProviderUnavailable { retries: 3, .. })));
}

#[test]
fn cache_is_shared_across_threads() {
    let (body, _) = embedding_body(3, 8);
    let srv = StubServer::start(vec![(200, body)]);
    let p = RemoteProvider::new(srv.url.clone());
    let cache = EmbeddingCache::new(&p);
    let prompt = PromptText::new("shared prompt", PromptKind::Static).unwrap();
    let first = cache.get(&prompt).unwrap();
    let got: Vec<Arc<Matrix>> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..8).map(|_| s.spawn(|| cache.get(&prompt).unwrap())).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(got.iter().all(|m| Arc::ptr_eq(m, &first)));
    assert_eq!(cache.len(), 1);
    assert_eq!(srv.hits(), 1);
}
