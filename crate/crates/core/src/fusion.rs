//! Language fusion: prompt construction, caption validation, and the
//! completion backends (HTTP chat service or an offline mock).

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bow::BagOfWords;

const PROMPT_HEAD: &str = "Without elaborating, describe a person with all of the following characteristics: ";
const PROMPT_MIDDLE: &str = ". They have the following attributes: ";
const PROMPT_TAIL: &str = ". Combine specific characteristics to produce a coherent description. \
You are encouraged to use synonyms for the provided attributes but not to add information other than what is provided. \
It is important to use all provided characteristics. \
Do not repeat characteristics that are provided more than once. \
Do not repeat these instructions.";
const BLURRY_SUFFIX: &str = " The image is blurry.";
const MONOCHROME_SUFFIX: &str = " The image is black and white.";

pub const MIN_CAPTION_WORDS: usize = 15;
pub const MAX_CAPTION_WORDS: usize = 120;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionPrompt {
    pub text: String,
    pub bag: BagOfWords,
}

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("bag has no primary descriptors")]
    EmptyBag,
    #[error("LLM service unreachable after {attempts} attempts: {last_error}")]
    ServiceUnreachable { attempts: u32, last_error: String },
    #[error("LLM service returned HTTP {status}: {body}")]
    ServiceError { status: u16, body: String },
    #[error("malformed LLM response: {0}")]
    BadResponse(String),
    #[error("no valid caption for `{image_id}` after {attempts} attempts")]
    NoValidCaption {
        image_id: String,
        attempts: usize,
        rejected: Vec<RejectedCaption>,
    },
}

impl FusionError {
    pub fn kind(&self) -> &'static str {
        match self {
            FusionError::EmptyBag => "empty_bag",
            FusionError::ServiceUnreachable { .. } => "service_unreachable",
            FusionError::ServiceError { .. } => "service_error",
            FusionError::BadResponse(_) => "bad_response",
            FusionError::NoValidCaption { .. } => "no_valid_caption",
        }
    }
}

/// Fills the fusion template. Lists are joined with `", "`; image-quality
/// suffixes follow the last instruction sentence.
pub fn build_prompt(bag: &BagOfWords) -> Result<FusionPrompt, FusionError> {
    if bag.f1.is_empty() {
        return Err(FusionError::EmptyBag);
    }
    let mut text = String::with_capacity(PROMPT_HEAD.len() + PROMPT_TAIL.len() + 256);
    text.push_str(PROMPT_HEAD);
    text.push_str(&bag.f1.join(", "));
    text.push_str(PROMPT_MIDDLE);
    text.push_str(&bag.f2.join(", "));
    text.push_str(PROMPT_TAIL);
    if bag.flags.blurry {
        text.push_str(BLURRY_SUFFIX);
    }
    if bag.flags.monochrome {
        text.push_str(MONOCHROME_SUFFIX);
    }
    Ok(FusionPrompt {
        text,
        bag: bag.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionReject {
    Refusal,
    InstructionEcho,
    TooShort,
    TooLong,
    MissingGenderTerm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedCaption {
    pub text: String,
    pub reason: CaptionReject,
}

const REFUSAL_PREFIXES: &[&str] = &[
    "i cannot",
    "i can't",
    "i can not",
    "i'm unable",
    "i am unable",
    "i'm sorry",
    "i am sorry",
    "i apologize",
    "sorry,",
    "as an ai",
];

/// Lower-cased pieces of the instruction text that should never survive
/// into a caption.
const ECHO_FRAGMENTS: &[&str] = &[
    "without elaborating",
    "all of the following characteristics",
    "the following attributes",
    "combine specific characteristics",
    "coherent description",
    "you are encouraged to use synonyms",
    "not to add information",
    "use all provided characteristics",
    "do not repeat",
    "these instructions",
];

const GENDER_LEXICON: &[&str] = &[
    "man", "men", "woman", "women", "male", "female", "boy", "girl", "gentleman", "lady", "guy",
    "he", "she", "his", "her", "him", "himself", "herself", "masculine", "feminine",
];

/// Checks one candidate caption. The bag is accepted for symmetry with
/// stricter checks; only the gender lexicon is enforced, since the prompt
/// invites synonyms for everything else.
pub fn validate_caption(caption: &str, _bag: &BagOfWords) -> Result<(), CaptionReject> {
    let lower = caption.trim().to_lowercase();
    if REFUSAL_PREFIXES.iter().any(|p| lower.starts_with(p)) {
        return Err(CaptionReject::Refusal);
    }
    if ECHO_FRAGMENTS.iter().any(|f| lower.contains(f)) {
        return Err(CaptionReject::InstructionEcho);
    }
    let words = lower.split_whitespace().count();
    if words < MIN_CAPTION_WORDS {
        return Err(CaptionReject::TooShort);
    }
    if words > MAX_CAPTION_WORDS {
        return Err(CaptionReject::TooLong);
    }
    let has_gender = lower
        .split(|c: char| !c.is_alphabetic())
        .any(|w| GENDER_LEXICON.contains(&w));
    if !has_gender {
        return Err(CaptionReject::MissingGenderTerm);
    }
    Ok(())
}

const MOCK_FILLERS: &[&str] = &[
    "The face is shown in a clear, front-facing portrait.",
    "The photo is a plain, close-up head shot.",
    "This is a simple portrait focused on the face.",
];

const MOCK_OPENINGS: &[&str] = &["A", "A photo of a", "A portrait of a"];

/// Offline stand-in for the LLM: `"{opening} {f1...} with {f2, ...}."`
/// followed by at least one filler sentence, padded to the minimum caption
/// length. Every bag phrase appears verbatim.
pub fn mock_fuse(bag: &BagOfWords, rng: &mut dyn RngCore) -> String {
    let opening = MOCK_OPENINGS.choose(rng).expect("opening list is non-empty");
    let mut text = format!("{opening} {}", bag.f1.join(" "));
    if !bag.f2.is_empty() {
        text.push_str(" with ");
        text.push_str(&bag.f2.join(", "));
    }
    text.push('.');
    if bag.flags.blurry {
        text.push_str(" The photo is blurry.");
    }
    if bag.flags.monochrome {
        text.push_str(" The photo is black and white.");
    }
    loop {
        let filler = MOCK_FILLERS.choose(rng).expect("filler list is non-empty");
        text.push(' ');
        text.push_str(filler);
        if text.split_whitespace().count() >= MIN_CAPTION_WORDS {
            break text;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 160,
        }
    }
}

/// Something that turns a fusion prompt into one candidate caption.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &FusionPrompt, rng: &mut dyn RngCore) -> Result<String, FusionError>;
    fn model_id(&self) -> &str;
    fn decode_params(&self) -> DecodeParams;
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend;

pub const MOCK_MODEL_ID: &str = "mock-fuser";

impl CompletionBackend for MockBackend {
    fn complete(&self, prompt: &FusionPrompt, rng: &mut dyn RngCore) -> Result<String, FusionError> {
        Ok(mock_fuse(&prompt.bag, rng))
    }

    fn model_id(&self) -> &str {
        MOCK_MODEL_ID
    }

    fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            temperature: 0.0,
            max_tokens: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    /// Retries after the first failed try.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 1_000,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(1u64 << retry.min(20)))
    }
}

/// Counting semaphore bounding concurrent in-flight requests.
#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cond.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cond.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpClientConfig {
    pub endpoint: String,
    pub model: String,
    pub token: Option<String>,
    pub decode: DecodeParams,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    n: u32,
}

/// Chat-completion client for any service accepting
/// `{model, messages, temperature, max_tokens, n}`.
pub struct HttpChatClient {
    config: HttpClientConfig,
    agent: ureq::Agent,
    in_flight: Semaphore,
}

enum Attempt {
    Transient(String),
    Fatal(FusionError),
}

impl HttpChatClient {
    pub fn new(config: HttpClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = Semaphore::new(config.max_in_flight);
        Self {
            config,
            agent,
            in_flight,
        }
    }

    fn try_once(&self, prompt: &str) -> Result<String, Attempt> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.config.decode.temperature,
            max_tokens: self.config.decode.max_tokens,
            n: 1,
        };
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(token) = &self.config.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Attempt::Fatal(FusionError::ServiceError { status, body }));
        }
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(FusionError::BadResponse(e.to_string())))?;
        extract_completion(&value).map_err(Attempt::Fatal)
    }
}

/// Pulls the first choice's text out of a chat- or text-completion body.
pub fn extract_completion(value: &serde_json::Value) -> Result<String, FusionError> {
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| FusionError::BadResponse("no choices in response".into()))?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(|t| t.as_str())
        .map(|t| t.trim().to_string())
        .ok_or_else(|| FusionError::BadResponse("choice has no text content".into()))
}

impl CompletionBackend for HttpChatClient {
    fn complete(&self, prompt: &FusionPrompt, _rng: &mut dyn RngCore) -> Result<String, FusionError> {
        let _permit = self.in_flight.acquire();
        let policy = self.config.retry;
        let mut last_error = String::new();
        for attempt in 0..=policy.max_retries {
            if attempt > 0 {
                let delay = policy.backoff(attempt - 1);
                log::warn!(
                    "LLM request failed ({last_error}); retry {attempt}/{} in {:?}",
                    policy.max_retries,
                    delay
                );
                std::thread::sleep(delay);
            }
            match self.try_once(&prompt.text) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(e)) => last_error = e,
            }
        }
        Err(FusionError::ServiceUnreachable {
            attempts: policy.max_retries + 1,
            last_error,
        })
    }

    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn decode_params(&self) -> DecodeParams {
        self.config.decode
    }
}

/// Validated captions for one image plus what it took to get them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionSet {
    pub image_id: String,
    pub captions: Vec<String>,
    pub rejected: Vec<RejectedCaption>,
    pub decode_params: DecodeParams,
    pub llm_model_id: String,
    pub attempts: usize,
    /// Set when the attempt budget ran out before `n` captions were accepted.
    pub incomplete: bool,
}

/// Requests completions until `n` captions validate or `budget` requests
/// have been spent.
pub fn fuse_captions(
    image_id: &str,
    prompt: &FusionPrompt,
    n: usize,
    budget: usize,
    backend: &dyn CompletionBackend,
    rng: &mut dyn RngCore,
) -> Result<CaptionSet, FusionError> {
    let n = n.max(1);
    let mut captions = Vec::with_capacity(n);
    let mut rejected = Vec::new();
    let mut attempts = 0;
    while captions.len() < n && attempts < budget {
        let text = backend.complete(prompt, rng)?;
        attempts += 1;
        match validate_caption(&text, &prompt.bag) {
            Ok(()) => captions.push(text),
            Err(reason) => rejected.push(RejectedCaption { text, reason }),
        }
    }
    if captions.is_empty() {
        return Err(FusionError::NoValidCaption {
            image_id: image_id.to_string(),
            attempts,
            rejected,
        });
    }
    let incomplete = captions.len() < n;
    if incomplete {
        log::warn!(
            "{image_id}: only {} of {n} captions after {attempts} attempts",
            captions.len()
        );
    }
    Ok(CaptionSet {
        image_id: image_id.to_string(),
        captions,
        rejected,
        decode_params: backend.decode_params(),
        llm_model_id: backend.model_id().to_string(),
        attempts,
        incomplete,
    })
}
