//! Static and dynamic prompt rendering and frozen text embeddings.
//!
//! Embeddings come from an [`EmbeddingProvider`]: the offline
//! [`HashEncoder`], a precomputed on-disk [`FileProvider`], or an HTTP
//! [`RemoteProvider`]. Whatever the source, an embedding is immutable once
//! produced and the same provider returns the same matrix for the same text.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::format_iso;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    pub kind: PromptKind,
    pub token_hint: Option<usize>,
}

impl PromptText {
    pub fn new(text: impl Into<String>, kind: PromptKind) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let token_hint = Some(tokenize(&text).len());
        Ok(Self { text, kind, token_hint })
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(self.text.as_bytes())
    }
}

/// Description of where a dataset comes from and what its variables mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub description: String,
    /// `(channel name, meaning)` pairs.
    pub channels: Vec<(String, String)>,
}

impl DatasetMeta {
    /// Metadata for the electricity-transformer (ETT) benchmark family.
    pub fn ett() -> Self {
        let ch = [
            ("HUFL", "high useful load"),
            ("HULL", "high useless load"),
            ("MUFL", "middle useful load"),
            ("MULL", "middle useless load"),
            ("LUFL", "low useful load"),
            ("LULL", "low useless load"),
            ("OT", "oil temperature of the transformer, the forecasting target"),
        ];
        Self {
            name: "ETT".into(),
            description: "Electricity transformer records gathered from two stations in two \
                          counties in China between July 2016 and July 2018, logged \
                          automatically by sensors on the transformer as load readings and oil \
                          temperature."
                .into(),
            channels: ch.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    /// Generic metadata naming every channel with a placeholder meaning.
    pub fn generic(name: &str, channel_names: &[String]) -> Self {
        Self {
            name: name.to_string(),
            description: format!("Time series dataset {name} with {} variables.", channel_names.len()),
            channels: channel_names
                .iter()
                .map(|c| (c.clone(), "recorded measurement".to_string()))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.description.trim().is_empty() || self.name.trim().is_empty() {
            return Err(Error::Config("dataset name and description must be non-empty".into()));
        }
        Ok(())
    }
}

/// `Dataset: {name}. {description} Variables: {a: meaning; b: meaning}.`
pub fn render_static_prompt(meta: &DatasetMeta) -> Result<PromptText> {
    meta.validate()?;
    let vars = meta
        .channels
        .iter()
        .map(|(n, m)| format!("{n}: {m}"))
        .collect::<Vec<_>>()
        .join("; ");
    let text = format!("Dataset: {}. {} Variables: {}.", meta.name, meta.description.trim(), vars);
    PromptText::new(text, PromptKind::Static)
}

/// Timestamp prompt for one lookback span. The template has a constant token
/// count for any timestamps with four-digit years.
pub fn render_dynamic_prompt(lookback_timestamps: &[i64], freq_seconds: i64) -> Result<PromptText> {
    let (first, last) = match (lookback_timestamps.first(), lookback_timestamps.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(Error::EmptyTimestamps),
    };
    let text = format!(
        "The input series spans {} to {}, sampled every {} seconds; forecast begins {}.",
        format_iso(first),
        format_iso(last),
        freq_seconds,
        format_iso(last + freq_seconds)
    );
    PromptText::new(text, PromptKind::Dynamic)
}

/// Splits on Unicode whitespace and ASCII punctuation, lowercases, and keeps
/// each punctuation character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_ascii_punctuation() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else {
            cur.extend(ch.to_lowercase());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// 16-character lowercase hex of the FNV-1a 64 hash of the UTF-8 text.
pub fn prompt_hash_hex(text: &str) -> String {
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

/// Frozen `L x d_llm` representation of one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    pub matrix: Arc<Matrix>,
    pub kind: PromptKind,
    pub provider_id: String,
    pub prompt_hash: u64,
}

impl PromptEmbedding {
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

/// A frozen text encoder. Implementations must be deterministic per text and
/// safe to call from several threads.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> String;
    fn encode(&self, text: &str) -> Result<Matrix>;
}

fn validate_embedding(m: &Matrix) -> Result<()> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::EmbeddingShapeInvalid(format!("{}x{}", m.rows(), m.cols())));
    }
    if !m.is_finite() {
        return Err(Error::EmbeddingShapeInvalid("non-finite entries".into()));
    }
    Ok(())
}

pub fn embed(provider: &dyn EmbeddingProvider, prompt: &PromptText) -> Result<PromptEmbedding> {
    let m = provider.encode(&prompt.text)?;
    validate_embedding(&m)?;
    Ok(PromptEmbedding {
        matrix: Arc::new(m),
        kind: prompt.kind,
        provider_id: provider.id(),
        prompt_hash: prompt.hash(),
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic unit vector for one token. Pure integer mixing plus IEEE
/// `sqrt`, so identical on every platform.
fn token_vector(token_hash: u64, d_llm: usize, seed: u64) -> Vec<f64> {
    let key = splitmix64(seed ^ 0x5851_f42d_4c95_7f2d) ^ token_hash;
    let mut v: Vec<f64> = (0..d_llm as u64)
        .map(|i| {
            let bits = splitmix64(key.wrapping_add(i.wrapping_mul(0xd1b5_4a32_d192_ed03)));
            (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    } else {
        v[0] = 1.0;
    }
    v
}

/// One unit-norm row per token.
pub fn hash_encoder(text: &str, d_llm: usize, seed: u64) -> Result<Matrix> {
    if d_llm == 0 {
        return Err(Error::EmbeddingShapeInvalid("d_llm must be >= 1".into()));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    let mut data = Vec::with_capacity(tokens.len() * d_llm);
    for t in &tokens {
        data.extend(token_vector(fnv1a64(t.as_bytes()), d_llm, seed));
    }
    Matrix::from_vec(tokens.len(), d_llm, data)
}

/// Offline stand-in for a frozen language model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashEncoder {
    pub d_llm: usize,
    pub seed: u64,
}

impl HashEncoder {
    pub fn new(d_llm: usize, seed: u64) -> Self {
        Self { d_llm, seed }
    }
}

impl EmbeddingProvider for HashEncoder {
    fn id(&self) -> String {
        format!("hash:d{}:s{}", self.d_llm, self.seed)
    }

    fn encode(&self, text: &str) -> Result<Matrix> {
        hash_encoder(text, self.d_llm, self.seed)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "embeddings.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub rows: usize,
    pub cols: usize,
    /// Byte offset into the blob.
    pub offset: u64,
    pub byte_length: u64,
    /// Source text, when recorded; checked against the key on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub blob: String,
    /// Keyed by 16-hex-digit prompt hash.
    pub entries: BTreeMap<String, ManifestEntry>,
}

/// Writes embeddings as `manifest.json` plus a little-endian f32 row-major
/// blob. Values are narrowed to f32.
pub fn write_embedding_store(dir: &Path, items: &[(String, Matrix)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob_path = dir.join(BLOB_FILE);
    let mut blob = std::io::BufWriter::new(std::fs::File::create(&blob_path).map_err(|e| Error::io(&blob_path, e))?);
    let mut entries = BTreeMap::new();
    let mut offset = 0u64;
    for (text, m) in items {
        validate_embedding(m)?;
        let byte_length = (m.rows() * m.cols() * 4) as u64;
        for v in m.as_slice() {
            blob.write_all(&(*v as f32).to_le_bytes())
                .map_err(|e| Error::io(&blob_path, e))?;
        }
        entries.insert(
            prompt_hash_hex(text),
            ManifestEntry {
                rows: m.rows(),
                cols: m.cols(),
                offset,
                byte_length,
                text: Some(text.clone()),
            },
        );
        offset += byte_length;
    }
    blob.flush().map_err(|e| Error::io(&blob_path, e))?;
    let manifest = Manifest {
        version: 1,
        blob: BLOB_FILE.into(),
        entries,
    };
    let mpath = dir.join(MANIFEST_FILE);
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

/// Precomputed embeddings loaded from a store directory.
#[derive(Debug, Clone)]
pub struct FileProvider {
    dir: PathBuf,
    entries: HashMap<String, Arc<Matrix>>,
}

impl FileProvider {
    /// Reads and validates the whole store. See [`write_embedding_store`].
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        if !mpath.exists() {
            return Err(Error::MissingArtifact(mpath));
        }
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let bpath = dir.join(&manifest.blob);
        let blob = std::fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let mut entries = HashMap::new();
        for (key, e) in &manifest.entries {
            if let Some(t) = &e.text {
                let got = prompt_hash_hex(t);
                if &got != key {
                    return Err(Error::HashMismatch {
                        expected: key.clone(),
                        got,
                    });
                }
            }
            if e.byte_length != (e.rows * e.cols * 4) as u64 {
                return Err(Error::EmbeddingShapeInvalid(format!(
                    "entry {key}: {} bytes for {}x{}",
                    e.byte_length, e.rows, e.cols
                )));
            }
            let start = e.offset as usize;
            let end = start + e.byte_length as usize;
            let bytes = blob.get(start..end).ok_or_else(|| {
                Error::EmbeddingShapeInvalid(format!("entry {key} runs past the blob end"))
            })?;
            let data: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            let m = Matrix::from_vec(e.rows, e.cols, data)?;
            validate_embedding(&m)?;
            entries.insert(key.clone(), Arc::new(m));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            entries,
        })
    }

    pub fn get(&self, hash_hex: &str) -> Result<Arc<Matrix>> {
        self.entries
            .get(hash_hex)
            .cloned()
            .ok_or_else(|| Error::CacheMiss(hash_hex.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl EmbeddingProvider for FileProvider {
    fn id(&self) -> String {
        format!("file:{}", self.dir.display())
    }

    fn encode(&self, text: &str) -> Result<Matrix> {
        Ok((*self.get(&prompt_hash_hex(text))?).clone())
    }
}

/// Retry policy for the HTTP provider: `retries` extra attempts after the
/// first, sleeping `base * 2^i` before retry `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay: Duration::from_millis(100),
        }
    }
}

impl RetryPolicy {
    pub fn delays(&self) -> Vec<Duration> {
        (0..self.retries).map(|i| self.base_delay * (1u32 << i)).collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<Vec<f64>>,
}

/// Parses the `{"embedding": [[...], ...]}` response body.
pub fn parse_embedding_response(body: &str) -> Result<Matrix> {
    let resp: EmbedResponse =
        serde_json::from_str(body).map_err(|e| Error::MalformedResponse(e.to_string()))?;
    let rows = resp.embedding.len();
    let cols = resp.embedding.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || resp.embedding.iter().any(|r| r.len() != cols) {
        return Err(Error::MalformedResponse(format!(
            "embedding must be a non-empty rectangular matrix, got {rows} rows"
        )));
    }
    let m = Matrix::from_vec(rows, cols, resp.embedding.into_iter().flatten().collect())?;
    if !m.is_finite() {
        return Err(Error::MalformedResponse("non-finite values".into()));
    }
    Ok(m)
}

/// HTTP embedding service: `POST {"text": ...}` returning
/// `{"embedding": [[f, ...], ...]}`. Results are memoized by prompt hash.
pub struct RemoteProvider {
    endpoint: String,
    policy: RetryPolicy,
    agent: ureq::Agent,
    cache: RwLock<HashMap<u64, Arc<Matrix>>>,
}

pub const ENDPOINT_ENV: &str = "LEMOLE_EMBED_ENDPOINT";

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self::with_policy(endpoint, RetryPolicy::default())
    }

    pub fn with_policy(endpoint: impl Into<String>, policy: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build();
        Self {
            endpoint: endpoint.into(),
            policy,
            agent: config.into(),
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, text: &str) -> std::result::Result<Matrix, Attempt> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { text })
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(Error::MalformedResponse(format!("HTTP {status}"))));
        }
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Fatal(Error::MalformedResponse(e.to_string())))?;
        parse_embedding_response(&body).map_err(Attempt::Fatal)
    }

    /// Fetches without consulting the cache.
    pub fn fetch(&self, text: &str) -> Result<Matrix> {
        let delays = self.policy.delays();
        let mut last = String::new();
        for attempt in 0..=delays.len() {
            if attempt > 0 {
                std::thread::sleep(delays[attempt - 1]);
            }
            match self.attempt(text) {
                Ok(m) => return Ok(m),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(reason)) => last = reason,
            }
        }
        Err(Error::ProviderUnavailable {
            retries: delays.len(),
            reason: last,
        })
    }
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl EmbeddingProvider for RemoteProvider {
    fn id(&self) -> String {
        format!("remote:{}", self.endpoint)
    }

    fn encode(&self, text: &str) -> Result<Matrix> {
        let key = fnv1a64(text.as_bytes());
        if let Some(m) = self.cache.read().expect("cache lock").get(&key) {
            return Ok((**m).clone());
        }
        let m = self.fetch(text)?;
        self.cache
            .write()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| Arc::new(m.clone()));
        Ok(m)
    }
}

/// Memo of embeddings by rendered prompt text; many readers, one writer.
pub struct EmbeddingCache<'p> {
    provider: &'p dyn EmbeddingProvider,
    memo: RwLock<HashMap<String, Arc<Matrix>>>,
}

impl<'p> EmbeddingCache<'p> {
    pub fn new(provider: &'p dyn EmbeddingProvider) -> Self {
        Self {
            provider,
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub fn provider(&self) -> &'p dyn EmbeddingProvider {
        self.provider
    }

    pub fn get(&self, prompt: &PromptText) -> Result<Arc<Matrix>> {
        if let Some(m) = self.memo.read().expect("memo lock").get(&prompt.text) {
            return Ok(Arc::clone(m));
        }
        let e = embed(self.provider, prompt)?;
        let mut w = self.memo.write().expect("memo lock");
        Ok(Arc::clone(w.entry(prompt.text.clone()).or_insert(e.matrix)))
    }

    pub fn len(&self) -> usize {
        self.memo.read().expect("memo lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pads with zero rows or truncates so the embedding has exactly `rows` rows,
/// matching a generator's fixed token axis.
pub fn fit_token_rows(z: &Matrix, rows: usize) -> Matrix {
    if z.rows() == rows {
        return z.clone();
    }
    Matrix::from_fn(rows, z.cols(), |i, j| if i < z.rows() { z[(i, j)] } else { 0.0 })
}

/// Content hash of an embedding's exact bits.
pub fn matrix_bits_hash(m: &Matrix) -> u64 {
    let mut bytes = Vec::with_capacity(m.as_slice().len() * 8 + 16);
    bytes.extend((m.rows() as u64).to_le_bytes());
    bytes.extend((m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        bytes.extend(v.to_bits().to_le_bytes());
    }
    fnv1a64(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Hello, World!"), vec!["hello", ",", "world", "!"]);
        assert_eq!(tokenize("  a  b\tc "), vec!["a", "b", "c"]);
        assert_eq!(tokenize("2016-07-01T00:00:00Z").len(), 9);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(prompt_hash_hex("foobar"), "85944171f73967e8");
    }

    #[test]
    fn hash_encoder_contract() {
        let m = hash_encoder("a b c", 16, 7).unwrap();
        assert_eq!(m.shape(), (3, 16));
        let m2 = hash_encoder("a b c", 16, 7).unwrap();
        assert_eq!(m, m2);
        let hh = hash_encoder("hello hello", 8, 0).unwrap();
        assert_eq!(hh.row(0), hh.row(1));
        for i in 0..m.rows() {
            let n: f64 = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        assert_ne!(hash_encoder("a b c", 16, 8).unwrap(), m);
        assert!(matches!(hash_encoder("   ", 4, 0).unwrap_err(), Error::EmptyText));
    }

    #[test]
    fn hash_encoder_is_platform_independent() {
        // Frozen bits from the integer-only generator.
        let m = hash_encoder("x", 2, 0).unwrap();
        let again = token_vector(fnv1a64(b"x"), 2, 0);
        assert_eq!(m.as_slice(), again.as_slice());
        assert_eq!(matrix_bits_hash(&m), matrix_bits_hash(&hash_encoder("X", 2, 0).unwrap()));
    }

    #[test]
    fn static_prompt_lists_every_variable() {
        let p = render_static_prompt(&DatasetMeta::ett()).unwrap();
        assert!(p.text.starts_with("Dataset: ETT."));
        for (name, meaning) in DatasetMeta::ett().channels {
            assert!(p.text.contains(&format!("{name}: {meaning}")), "{name}");
        }
        assert_eq!(p, render_static_prompt(&DatasetMeta::ett()).unwrap());
        let one = DatasetMeta {
            name: "s".into(),
            description: "One sensor.".into(),
            channels: vec![("value".into(), "sensor reading".into())],
        };
        assert_eq!(
            render_static_prompt(&one).unwrap().text,
            "Dataset: s. One sensor. Variables: value: sensor reading."
        );
    }

    #[test]
    fn dynamic_prompt_template() {
        let start = 1_467_331_200; // 2016-07-01T00:00:00Z
        let ts: Vec<i64> = (0..8).map(|i| start + 3600 * i).collect();
        let p = render_dynamic_prompt(&ts, 3600).unwrap();
        assert_eq!(
            p.text,
            "The input series spans 2016-07-01T00:00:00Z to 2016-07-01T07:00:00Z, sampled every 3600 seconds; forecast begins 2016-07-01T08:00:00Z."
        );
        let single = render_dynamic_prompt(&ts[..1], 3600).unwrap();
        assert!(single.text.contains("spans 2016-07-01T00:00:00Z to 2016-07-01T00:00:00Z"));
        assert!(matches!(render_dynamic_prompt(&[], 3600).unwrap_err(), Error::EmptyTimestamps));
    }

    #[test]
    fn adjacent_dynamic_prompts_differ_only_in_timestamps() {
        let ts: Vec<i64> = (0..9).map(|i| 1_467_331_200 + 3600 * i).collect();
        let a = render_dynamic_prompt(&ts[..8], 3600).unwrap();
        let b = render_dynamic_prompt(&ts[1..], 3600).unwrap();
        let ta: Vec<&str> = a.text.split(' ').collect();
        let tb: Vec<&str> = b.text.split(' ').collect();
        assert_eq!(ta.len(), tb.len());
        let differing: Vec<usize> = (0..ta.len()).filter(|&i| ta[i] != tb[i]).collect();
        assert_eq!(differing.len(), 3);
        for i in differing {
            assert!(ta[i].starts_with("2016-07-01T"));
        }
        assert_eq!(tokenize(&a.text).len(), tokenize(&b.text).len());
    }

    #[test]
    fn response_parsing() {
        let m = parse_embedding_response(r#"{"embedding": [[1.0, 2.0], [3.0, 4.5]]}"#).unwrap();
        assert_eq!(m, Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.5]]));
        for bad in [r#"{"embedding": []}"#, r#"{"embedding": [[1.0], [1.0, 2.0]]}"#, "nope", r#"{"x": 1}"#] {
            assert!(matches!(parse_embedding_response(bad).unwrap_err(), Error::MalformedResponse(_)));
        }
    }

    #[test]
    fn retry_delays() {
        let d = RetryPolicy::default().delays();
        assert_eq!(d, vec![Duration::from_millis(100), Duration::from_millis(200), Duration::from_millis(400)]);
    }

    #[test]
    fn fit_rows_pads_and_truncates() {
        let z = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(fit_token_rows(&z, 3).row(2), &[0.0, 0.0]);
        assert_eq!(fit_token_rows(&z, 1), Matrix::from_rows(&[[1.0, 2.0]]));
    }

    #[test]
    fn cache_memoizes() {
        let enc = HashEncoder::new(4, 1);
        let cache = EmbeddingCache::new(&enc);
        let p = PromptText::new("abc def", PromptKind::Dynamic).unwrap();
        let a = cache.get(&p).unwrap();
        let b = cache.get(&p).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
    }
}
