//! Uniform access to text-completion providers.
//!
//! A [`Gateway`] renders a template, looks each sample up in a
//! [`CompletionCache`] keyed by a content hash of the request, and only calls
//! the [`Provider`] on a miss. Transport failures are retried a bounded
//! number of times; protocol failures surface immediately.

pub mod mock;
pub mod parse;
pub mod template;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use spin::Mutex;

use crate::error::{invalid, Error, Result};
use crate::hash::ContentHash;

pub use parse::{
    format_block, parse_fusion, parse_gradient_blocks, AgentRole, FusionParse, GradientBlock, ParsedBlocks,
};
pub use template::{Template, TemplateSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template_id: String,
    pub bindings: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub n_samples: u32,
}

impl CompletionRequest {
    pub fn new(template_id: &str) -> Self {
        Self {
            template_id: template_id.to_string(),
            bindings: BTreeMap::new(),
            temperature: 0.0,
            max_tokens: 1024,
            n_samples: 1,
        }
    }

    pub fn bind(mut self, name: &str, value: impl Into<String>) -> Self {
        self.bindings.insert(name.to_string(), value.into());
        self
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn samples(mut self, n: u32) -> Self {
        self.n_samples = n;
        self
    }
}

/// What a provider sees for one sample.
#[derive(Clone, Copy, Debug)]
pub struct ProviderCall<'a> {
    pub template_id: &'a str,
    pub bindings: &'a BTreeMap<String, String>,
    pub rendered: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
    pub sample_index: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProviderError {
    /// Timeouts, refused connections, 5xx: worth retrying.
    Transport(String),
    /// The provider answered but the body was unusable.
    Malformed(String),
}

pub trait Provider {
    /// Stable identifier; part of every cache key.
    fn id(&self) -> &str;
    fn complete(&self, call: &ProviderCall<'_>) -> Result<String, ProviderError>;
}

impl<T: Provider + ?Sized> Provider for &T {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, call: &ProviderCall<'_>) -> Result<String, ProviderError> {
        (**self).complete(call)
    }
}

impl<T: Provider + ?Sized> Provider for Box<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, call: &ProviderCall<'_>) -> Result<String, ProviderError> {
        (**self).complete(call)
    }
}

impl<T: Provider + ?Sized> Provider for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, call: &ProviderCall<'_>) -> Result<String, ProviderError> {
        (**self).complete(call)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CacheKey(pub ContentHash);

impl CacheKey {
    /// Hash over (provider id, template id, bindings, temperature,
    /// max_tokens, sample index).
    pub fn for_sample(provider_id: &str, request: &CompletionRequest, sample_index: u32) -> Self {
        let temp = request.temperature.to_bits().to_le_bytes();
        let max_tokens = request.max_tokens.to_le_bytes();
        let sample = sample_index.to_le_bytes();
        let n_bindings = (request.bindings.len() as u64).to_le_bytes();
        let mut fields: Vec<&[u8]> = Vec::with_capacity(6 + 2 * request.bindings.len());
        fields.push(provider_id.as_bytes());
        fields.push(request.template_id.as_bytes());
        fields.push(&n_bindings);
        for (k, v) in &request.bindings {
            fields.push(k.as_bytes());
            fields.push(v.as_bytes());
        }
        fields.push(&temp);
        fields.push(&max_tokens);
        fields.push(&sample);
        CacheKey(ContentHash::of_fields(fields))
    }
}

impl core::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        self.0.fmt(f)
    }
}

pub trait CompletionCache {
    fn get(&self, key: &CacheKey) -> Option<String>;
    /// Store a completion. Storing an existing key is a no-op.
    fn put(&self, key: &CacheKey, text: &str);
}

impl<T: CompletionCache + ?Sized> CompletionCache for &T {
    fn get(&self, key: &CacheKey) -> Option<String> {
        (**self).get(key)
    }
    fn put(&self, key: &CacheKey, text: &str) {
        (**self).put(key, text)
    }
}

#[derive(Debug, Default)]
pub struct MemoryCache {
    entries: Mutex<BTreeMap<CacheKey, String>>,
}

impl MemoryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CompletionCache for MemoryCache {
    fn get(&self, key: &CacheKey) -> Option<String> {
        self.entries.lock().get(key).cloned()
    }

    fn put(&self, key: &CacheKey, text: &str) {
        self.entries.lock().entry(*key).or_insert_with(|| text.to_string());
    }
}

/// A cache that never hits.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoCache;

impl CompletionCache for NoCache {
    fn get(&self, _key: &CacheKey) -> Option<String> {
        None
    }
    fn put(&self, _key: &CacheKey, _text: &str) {}
}

/// Delay between retries. `attempt` starts at 0.
pub trait Backoff {
    fn wait(&self, attempt: u32);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoBackoff;

impl Backoff for NoBackoff {
    fn wait(&self, _attempt: u32) {}
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    /// Samples requested per template id, cached or not.
    pub requested: BTreeMap<String, u64>,
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
    pub failures: u64,
}

impl GatewayStats {
    pub fn total_requested(&self) -> u64 {
        self.requested.values().sum()
    }

    pub fn requested_for(&self, template_id: &str) -> u64 {
        self.requested.get(template_id).copied().unwrap_or(0)
    }

    pub fn requested_matching(&self, pred: impl Fn(&str) -> bool) -> u64 {
        self.requested.iter().filter(|(k, _)| pred(k)).map(|(_, v)| *v).sum()
    }

    /// Counters accumulated since `earlier`.
    pub fn since(&self, earlier: &GatewayStats) -> GatewayStats {
        let requested = self
            .requested
            .iter()
            .map(|(k, v)| (k.clone(), v - earlier.requested_for(k)))
            .filter(|(_, v)| *v > 0)
            .collect();
        GatewayStats {
            requested,
            provider_calls: self.provider_calls - earlier.provider_calls,
            cache_hits: self.cache_hits - earlier.cache_hits,
            retries: self.retries - earlier.retries,
            failures: self.failures - earlier.failures,
        }
    }
}

/// Object-safe completion interface used by every pipeline stage.
pub trait Completer {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>>;
    fn stats(&self) -> GatewayStats;
}

pub struct Gateway<P, C = MemoryCache, B = NoBackoff> {
    provider: P,
    templates: TemplateSet,
    cache: C,
    backoff: B,
    max_retries: u32,
    stats: Mutex<GatewayStats>,
}

impl<P: Provider> Gateway<P> {
    pub fn new(provider: P, templates: TemplateSet) -> Self {
        Self {
            provider,
            templates,
            cache: MemoryCache::new(),
            backoff: NoBackoff,
            max_retries: 3,
            stats: Mutex::new(GatewayStats::default()),
        }
    }
}

impl<P: Provider, C: CompletionCache, B: Backoff> Gateway<P, C, B> {
    pub fn with_cache<C2: CompletionCache>(self, cache: C2) -> Gateway<P, C2, B> {
        Gateway {
            provider: self.provider,
            templates: self.templates,
            cache,
            backoff: self.backoff,
            max_retries: self.max_retries,
            stats: self.stats,
        }
    }

    pub fn with_backoff<B2: Backoff>(self, backoff: B2) -> Gateway<P, C, B2> {
        Gateway {
            provider: self.provider,
            templates: self.templates,
            cache: self.cache,
            backoff,
            max_retries: self.max_retries,
            stats: self.stats,
        }
    }

    pub fn with_max_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    pub fn cache(&self) -> &C {
        &self.cache
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// Check a request and render its template without calling anything.
    pub fn render(&self, request: &CompletionRequest) -> Result<String> {
        if request.n_samples == 0 {
            return Err(invalid("n_samples must be at least 1"));
        }
        if !request.temperature.is_finite() || request.temperature < 0.0 {
            return Err(invalid(format!("temperature {} is invalid", request.temperature)));
        }
        if request.max_tokens == 0 {
            return Err(invalid("max_tokens must be positive"));
        }
        let template = self
            .templates
            .get(&request.template_id)
            .ok_or_else(|| invalid(format!("unknown template {}", request.template_id)))?;
        template.render(&request.bindings)
    }

    fn call_with_retry(&self, call: &ProviderCall<'_>) -> Result<String> {
        let mut attempt = 0;
        loop {
            self.stats.lock().provider_calls += 1;
            match self.provider.complete(call) {
                Ok(text) => return Ok(text),
                Err(ProviderError::Transport(_)) if attempt < self.max_retries => {
                    self.stats.lock().retries += 1;
                    self.backoff.wait(attempt);
                    attempt += 1;
                }
                Err(ProviderError::Transport(msg)) => {
                    self.stats.lock().failures += 1;
                    return Err(Error::Transport(msg));
                }
                Err(ProviderError::Malformed(msg)) => {
                    self.stats.lock().failures += 1;
                    return Err(Error::Protocol(msg));
                }
            }
        }
    }
}

impl<P: Provider, C: CompletionCache, B: Backoff> Completer for Gateway<P, C, B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>> {
        let rendered = self.render(request)?;
        let mut out = Vec::with_capacity(request.n_samples as usize);
        for sample_index in 0..request.n_samples {
            *self
                .stats
                .lock()
                .requested
                .entry(request.template_id.clone())
                .or_insert(0) += 1;
            let key = CacheKey::for_sample(self.provider.id(), request, sample_index);
            if let Some(hit) = self.cache.get(&key) {
                self.stats.lock().cache_hits += 1;
                out.push(hit);
                continue;
            }
            let call = ProviderCall {
                template_id: &request.template_id,
                bindings: &request.bindings,
                rendered: &rendered,
                temperature: request.temperature,
                max_tokens: request.max_tokens,
                sample_index,
            };
            let text = self.call_with_retry(&call)?;
            self.cache.put(&key, &text);
            out.push(text);
        }
        Ok(out)
    }

    fn stats(&self) -> GatewayStats {
        self.stats.lock().clone()
    }
}

impl<T: Completer + ?Sized> Completer for &T {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>> {
        (**self).complete(request)
    }
    fn stats(&self) -> GatewayStats {
        (**self).stats()
    }
}

#[cfg(test)]
mod tests {
    use super::mock::MockProvider;
    use super::*;
    use core::sync::atomic::{AtomicU32, Ordering};

    fn gateway() -> Gateway<MockProvider> {
        Gateway::new(MockProvider::new(7), TemplateSet::builtin())
    }

    fn paraphrase(text: &str) -> CompletionRequest {
        CompletionRequest::new("paraphrase").bind("prompt", text)
    }

    #[test]
    fn second_identical_request_is_served_from_cache() {
        let gw = gateway();
        let a = gw.complete(&paraphrase("Classify the claim.")).unwrap();
        let calls = gw.provider().call_count();
        let b = gw.complete(&paraphrase("Classify the claim.")).unwrap();
        assert_eq!(a, b);
        assert_eq!(gw.provider().call_count(), calls);
        let stats = gw.stats();
        assert_eq!(stats.cache_hits, 1);
        assert_eq!(stats.provider_calls, 1);
        assert_eq!(stats.requested_for("paraphrase"), 2);
    }

    #[test]
    fn unbound_placeholder_fails_before_any_call() {
        let gw = gateway();
        let err = gw.complete(&CompletionRequest::new("paraphrase")).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert_eq!(gw.provider().call_count(), 0);
        assert_eq!(gw.stats().total_requested(), 0);
    }

    #[test]
    fn n_samples_are_distinct_and_reproducible() {
        let gw = gateway();
        let req = paraphrase("Label the post.").samples(3).temperature(0.9);
        let out = gw.complete(&req).unwrap();
        assert_eq!(out.len(), 3);
        // Recompute each sample directly from the mock's pure function.
        let provider = MockProvider::new(7);
        let rendered = gw.render(&req).unwrap();
        for (i, text) in out.iter().enumerate() {
            let call = ProviderCall {
                template_id: "paraphrase",
                bindings: &req.bindings,
                rendered: &rendered,
                temperature: 0.9,
                max_tokens: req.max_tokens,
                sample_index: i as u32,
            };
            assert_eq!(&provider.complete(&call).unwrap(), text);
        }
        assert_ne!(out[0], out[1]);
    }

    #[test]
    fn request_validation() {
        let gw = gateway();
        assert!(gw.complete(&paraphrase("x").samples(0)).is_err());
        assert!(gw.complete(&paraphrase("x").temperature(-1.0)).is_err());
        assert!(gw.complete(&paraphrase("x").max_tokens(0)).is_err());
        assert!(gw.complete(&CompletionRequest::new("nope")).is_err());
    }

    struct Flaky {
        failures_left: AtomicU32,
        malformed: bool,
    }

    impl Provider for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _call: &ProviderCall<'_>) -> Result<String, ProviderError> {
            if self.malformed {
                return Err(ProviderError::Malformed("bad json".into()));
            }
            let left = self.failures_left.load(Ordering::SeqCst);
            if left > 0 {
                self.failures_left.store(left - 1, Ordering::SeqCst);
                Err(ProviderError::Transport("timeout".into()))
            } else {
                Ok("ok".into())
            }
        }
    }

    struct CountingBackoff(AtomicU32);

    impl Backoff for CountingBackoff {
        fn wait(&self, _attempt: u32) {
            self.0.fetch_add(1, Ordering::SeqCst);
        }
    }

    #[test]
    fn transport_errors_are_retried_then_surfaced() {
        let flaky = Flaky {
            failures_left: AtomicU32::new(2),
            malformed: false,
        };
        let gw = Gateway::new(flaky, TemplateSet::builtin())
            .with_backoff(CountingBackoff(AtomicU32::new(0)))
            .with_max_retries(3);
        assert_eq!(gw.complete(&paraphrase("x")).unwrap(), ["ok"]);
        assert_eq!(gw.stats().retries, 2);
        assert_eq!(gw.stats().provider_calls, 3);

        let always = Flaky {
            failures_left: AtomicU32::new(100),
            malformed: false,
        };
        let gw = Gateway::new(always, TemplateSet::builtin()).with_max_retries(2);
        assert!(matches!(gw.complete(&paraphrase("x")), Err(Error::Transport(_))));
        assert_eq!(gw.stats().provider_calls, 3);
        assert!(gw.cache().is_empty());
    }

    #[test]
    fn malformed_response_is_a_protocol_error_without_retry() {
        let bad = Flaky {
            failures_left: AtomicU32::new(0),
            malformed: true,
        };
        let gw = Gateway::new(bad, TemplateSet::builtin());
        assert!(matches!(gw.complete(&paraphrase("x")), Err(Error::Protocol(_))));
        assert_eq!(gw.stats().provider_calls, 1);
    }

    #[test]
    fn cache_key_covers_every_field() {
        let base = paraphrase("x");
        let k = |r: &CompletionRequest, s| CacheKey::for_sample("mock", r, s);
        let k0 = k(&base, 0);
        assert_ne!(k0, k(&base, 1));
        assert_ne!(k0, CacheKey::for_sample("other", &base, 0));
        assert_ne!(k0, k(&base.clone().temperature(0.5), 0));
        assert_ne!(k0, k(&base.clone().max_tokens(7), 0));
        assert_ne!(k0, k(&base.clone().bind("prompt", "y"), 0));
        assert_ne!(k0, k(&base.clone().bind("z", ""), 0));
        assert_eq!(k0, k(&paraphrase("x"), 0));
    }

    #[test]
    fn stats_delta() {
        let gw = gateway();
        gw.complete(&paraphrase("a")).unwrap();
        let before = gw.stats();
        gw.complete(&paraphrase("b").samples(2)).unwrap();
        let d = gw.stats().since(&before);
        assert_eq!(d.requested_for("paraphrase"), 2);
        assert_eq!(d.provider_calls, 2);
    }
}
