//! Wikipedia retrieval: page search with suggestion fallback, an on-disk
//! response cache, sentence ranking and evidence selection.

pub mod bm25;
pub mod coref;
pub mod evidence;
pub mod select;
pub mod sentences;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use bm25::{bm25_rank, Candidate, ScoredSentence};
pub use coref::{resolve_coreferences, CorefResolver, IdentityResolver, LlmCorefResolver};
pub use evidence::{gather_evidence, EvidenceBundle};
pub use select::{select_evidence, SelectionConfig, Strategy};
pub use sentences::{sentence_spans, split_sentences};

use crate::llm::{write_atomic, RetryPolicy, TransportError};
use crate::text::normalize_key;

pub const DEFAULT_BASE_URL: &str = "https://en.wikipedia.org/w/api.php";
const USER_AGENT: &str = "mikani/0.1 (token-level hallucination annotator)";
/// Suggestion pages kept per term when no exact title exists.
pub const MAX_SUGGESTIONS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum WikiError {
    #[error("wikipedia request failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: TransportError },
    #[error("unexpected wikipedia response: {0}")]
    Protocol(String),
    #[error("wiki cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitKind {
    Exact,
    Suggestion,
}

/// A retrieved page, already split into sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageHit {
    pub title: String,
    pub source_term: String,
    pub kind: HitKind,
    pub sentences: Vec<String>,
    /// The first `intro_len` sentences come from the lead section.
    pub intro_len: usize,
}

impl PageHit {
    pub fn intro(&self) -> &[String] {
        &self.sentences[..self.intro_len]
    }
}

/// Issues one GET against the MediaWiki action API.
pub trait WikiTransport: Send + Sync {
    fn get(&self, params: &[(&str, &str)]) -> Result<String, TransportError>;
}

/// Minimum spacing between requests.
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        let interval = if rate > 0.0 { Duration::from_secs_f64(1.0 / rate) } else { Duration::ZERO };
        Self { interval, next: Mutex::new(Instant::now()) }
    }

    pub fn wait(&self) {
        let mut next = self.next.lock().expect("rate limiter");
        let now = Instant::now();
        if *next > now {
            std::thread::sleep(*next - now);
        }
        *next = Instant::now().max(*next) + self.interval;
    }
}

pub struct HttpWikiTransport {
    agent: ureq::Agent,
    base_url: String,
    limiter: RateLimiter,
}

impl HttpWikiTransport {
    pub fn new(base_url: impl Into<String>, requests_per_second: f64, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .user_agent(USER_AGENT)
            .build()
            .into();
        Self { agent, base_url: base_url.into(), limiter: RateLimiter::per_second(requests_per_second) }
    }
}

impl WikiTransport for HttpWikiTransport {
    fn get(&self, params: &[(&str, &str)]) -> Result<String, TransportError> {
        self.limiter.wait();
        let mut resp = self
            .agent
            .get(&self.base_url)
            .query_pairs(params.iter().copied())
            .call()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let code = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| TransportError::Network(e.to_string()))?;
        if (200..300).contains(&code) {
            Ok(body)
        } else {
            Err(TransportError::Status { code, body })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HitRef {
    title: String,
    kind: HitKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SearchEntry {
    term: String,
    hits: Vec<HitRef>,
}

fn hash_key(key: &str) -> String {
    hex::encode(Sha256::digest(key.as_bytes()))
}

/// Search results keyed by normalized term and page text keyed by title.
/// Layout on disk: `searches/<sha256>.json`, `pages/<sha256>.txt`.
pub struct WikiCache {
    dir: Option<PathBuf>,
    searches: RwLock<HashMap<String, Vec<HitRef>>>,
    pages: RwLock<HashMap<String, String>>,
    write_lock: Mutex<()>,
}

impl WikiCache {
    pub fn in_memory() -> Self {
        Self { dir: None, searches: RwLock::default(), pages: RwLock::default(), write_lock: Mutex::new(()) }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()), ..Self::in_memory() }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn search_path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("searches").join(format!("{}.json", hash_key(key))))
    }

    fn page_path(&self, title: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("pages").join(format!("{}.txt", hash_key(title))))
    }

    fn cache_err(path: &Path, e: impl ToString) -> WikiError {
        WikiError::Cache { path: path.to_path_buf(), message: e.to_string() }
    }

    fn get_search(&self, key: &str) -> Result<Option<Vec<HitRef>>, WikiError> {
        if let Some(hits) = self.searches.read().expect("cache lock").get(key) {
            return Ok(Some(hits.clone()));
        }
        let Some(path) = self.search_path(key).filter(|p| p.exists()) else {
            return Ok(None);
        };
        let text = fs::read_to_string(&path).map_err(|e| Self::cache_err(&path, e))?;
        let entry: SearchEntry = serde_json::from_str(&text).map_err(|e| Self::cache_err(&path, e))?;
        self.searches.write().expect("cache lock").insert(key.to_string(), entry.hits.clone());
        Ok(Some(entry.hits))
    }

    fn put_search(&self, key: &str, hits: &[HitRef]) -> Result<(), WikiError> {
        let _g = self.write_lock.lock().expect("cache write lock");
        if let Some(path) = self.search_path(key) {
            let entry = SearchEntry { term: key.to_string(), hits: hits.to_vec() };
            let body = serde_json::to_string_pretty(&entry).expect("search entry serializes");
            write_atomic(&path, body.as_bytes()).map_err(|e| Self::cache_err(&path, e))?;
        }
        self.searches.write().expect("cache lock").insert(key.to_string(), hits.to_vec());
        Ok(())
    }

    fn get_page(&self, title: &str) -> Result<Option<String>, WikiError> {
        if let Some(text) = self.pages.read().expect("cache lock").get(title) {
            return Ok(Some(text.clone()));
        }
        let Some(path) = self.page_path(title).filter(|p| p.exists()) else {
            return Ok(None);
        };
        let text = fs::read_to_string(&path).map_err(|e| Self::cache_err(&path, e))?;
        self.pages.write().expect("cache lock").insert(title.to_string(), text.clone());
        Ok(Some(text))
    }

    fn put_page(&self, title: &str, text: &str) -> Result<(), WikiError> {
        let _g = self.write_lock.lock().expect("cache write lock");
        if let Some(path) = self.page_path(title) {
            write_atomic(&path, text.as_bytes()).map_err(|e| Self::cache_err(&path, e))?;
        }
        self.pages.write().expect("cache lock").insert(title.to_string(), text.to_string());
        Ok(())
    }

    /// Seed a search result and its pages, as a live lookup would have.
    /// Used to build offline fixtures.
    pub fn seed(&self, term: &str, exact: bool, pages: &[(&str, &str)]) -> Result<(), WikiError> {
        let kind = if exact { HitKind::Exact } else { HitKind::Suggestion };
        let hits: Vec<HitRef> = pages.iter().map(|(t, _)| HitRef { title: t.to_string(), kind }).collect();
        for (title, text) in pages {
            self.put_page(title, text)?;
        }
        self.put_search(&normalize_key(term), &hits)
    }
}

/// Client for page lookup with caching and coreference preprocessing.
pub struct WikiClient {
    transport: Arc<dyn WikiTransport>,
    cache: WikiCache,
    coref: Arc<dyn CorefResolver>,
    retry: RetryPolicy,
    requests: AtomicUsize,
}

#[derive(Deserialize)]
struct PageJson {
    title: String,
    #[serde(default)]
    missing: bool,
    #[serde(default)]
    invalid: bool,
    #[serde(default)]
    extract: Option<String>,
}

impl WikiClient {
    pub fn new(transport: Arc<dyn WikiTransport>, cache: WikiCache) -> Self {
        Self {
            transport,
            cache,
            coref: Arc::new(IdentityResolver),
            retry: RetryPolicy::default(),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn with_coref(mut self, coref: Arc<dyn CorefResolver>) -> Self {
        self.coref = coref;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn cache(&self) -> &WikiCache {
        &self.cache
    }

    /// Requests sent to the transport so far, retries included.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn get_json(&self, params: &[(&str, &str)]) -> Result<Value, WikiError> {
        let mut attempt = 0;
        let body = loop {
            self.requests.fetch_add(1, Ordering::SeqCst);
            match self.transport.get(params) {
                Ok(b) => break b,
                Err(e) if !e.is_retryable() || attempt >= self.retry.max_retries => {
                    return Err(WikiError::Transport { attempts: attempt + 1, last: e });
                }
                Err(e) => {
                    log::warn!("wikipedia request failed ({e}); retrying");
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
            }
        };
        serde_json::from_str(&body).map_err(|e| WikiError::Protocol(e.to_string()))
    }

    /// Page extract by title, following redirects. `None` if the page does not exist.
    fn fetch_extract(&self, title: &str) -> Result<Option<(String, String)>, WikiError> {
        let v = self.get_json(&[
            ("action", "query"),
            ("format", "json"),
            ("formatversion", "2"),
            ("prop", "extracts"),
            ("explaintext", "1"),
            ("redirects", "1"),
            ("titles", title),
        ])?;
        let pages = v.pointer("/query/pages").and_then(Value::as_array);
        let Some(first) = pages.and_then(|p| p.first()) else {
            return Ok(None);
        };
        let page: PageJson = serde_json::from_value(first.clone()).map_err(|e| WikiError::Protocol(e.to_string()))?;
        if page.missing || page.invalid {
            return Ok(None);
        }
        Ok(Some((page.title, page.extract.unwrap_or_default())))
    }

    fn search_titles(&self, query: &str) -> Result<(Vec<String>, Option<String>), WikiError> {
        let v = self.get_json(&[
            ("action", "query"),
            ("format", "json"),
            ("formatversion", "2"),
            ("list", "search"),
            ("srsearch", query),
            ("srinfo", "suggestion"),
            ("srprop", ""),
            ("srlimit", "2"),
        ])?;
        let titles = v
            .pointer("/query/search")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|r| r.get("title")?.as_str().map(str::to_string)).collect())
            .unwrap_or_default();
        let suggestion = v.pointer("/query/searchinfo/suggestion").and_then(Value::as_str).map(str::to_string);
        Ok((titles, suggestion))
    }

    fn lookup(&self, term: &str) -> Result<Vec<HitRef>, WikiError> {
        if let Some((title, text)) = self.fetch_extract(term)? {
            self.cache.put_page(&title, &text)?;
            return Ok(vec![HitRef { title, kind: HitKind::Exact }]);
        }
        let (mut titles, suggestion) = self.search_titles(term)?;
        if titles.is_empty() {
            if let Some(s) = suggestion {
                titles = self.search_titles(&s)?.0;
            }
        }
        titles.truncate(MAX_SUGGESTIONS);
        Ok(titles.into_iter().map(|title| HitRef { title, kind: HitKind::Suggestion }).collect())
    }

    fn page_text(&self, title: &str) -> Result<Option<String>, WikiError> {
        if let Some(t) = self.cache.get_page(title)? {
            return Ok(Some(t));
        }
        match self.fetch_extract(title)? {
            Some((_, text)) => {
                self.cache.put_page(title, &text)?;
                Ok(Some(text))
            }
            None => Ok(None),
        }
    }

    /// Pages for `term`: one exact-title hit, else up to two suggestions.
    pub fn search_page(&self, term: &str) -> Result<Vec<PageHit>, WikiError> {
        let key = normalize_key(term);
        if key.is_empty() {
            return Ok(Vec::new());
        }
        let refs = match self.cache.get_search(&key)? {
            Some(r) => r,
            None => {
                let r = self.lookup(term.trim())?;
                self.cache.put_search(&key, &r)?;
                r
            }
        };
        let mut hits = Vec::with_capacity(refs.len());
        for r in refs {
            let Some(text) = self.page_text(&r.title)? else { continue };
            let resolved = resolve_coreferences(&text, self.coref.as_ref());
            let (intro, body) = split_intro(&resolved);
            let mut sentences = split_sentences(&intro);
            let intro_len = sentences.len();
            sentences.extend(split_sentences(&body));
            if sentences.is_empty() {
                continue;
            }
            hits.push(PageHit { title: r.title, source_term: term.to_string(), kind: r.kind, sentences, intro_len });
        }
        Ok(hits)
    }
}

fn is_heading(line: &str) -> bool {
    let t = line.trim();
    t.len() >= 4 && t.starts_with("==") && t.ends_with("==")
}

/// Lead section and remaining body of a plain-text extract, headings removed.
pub fn split_intro(extract: &str) -> (String, String) {
    let mut intro = Vec::new();
    let mut body = Vec::new();
    let mut in_body = false;
    for line in extract.lines() {
        if is_heading(line) {
            in_body = true;
            continue;
        }
        if in_body { &mut body } else { &mut intro }.push(line);
    }
    (intro.join("\n"), body.join("\n"))
}
