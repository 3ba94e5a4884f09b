//! C ABI over the softprompt engine.
//!
//! Every fallible call returns an [`SpStatus`]; on failure the message is
//! available from [`sp_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use softprompt::generation::{generate, GenerationConfig};
use softprompt::metrics;
use softprompt::model::TransformerWeights;
use softprompt::prompt::PromptEncoderState;
use softprompt::tokenizer::Vocab;
use softprompt::{checkpoint, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    InvalidArgument = 5,
    Runtime = 6,
    Panic = 7,
}

/// Tokenizer handle.
pub struct SpVocab(Vocab);

/// Frozen transformer handle.
pub struct SpModel(TransformerWeights<f32>);

/// Trained prompt-encoder handle.
pub struct SpPrompt(PromptEncoderState<f32>);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpGenerationConfig {
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub use_kv_cache: bool,
}

impl From<SpGenerationConfig> for GenerationConfig {
    fn from(c: SpGenerationConfig) -> Self {
        GenerationConfig {
            top_k: c.top_k,
            top_p: c.top_p,
            temperature: c.temperature,
            max_new_tokens: c.max_new_tokens,
            seed: c.seed,
            use_kv_cache: c.use_kv_cache,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn status_of(e: &Error) -> SpStatus {
    match e {
        Error::Io { .. } => SpStatus::Io,
        Error::Json(_) | Error::Csv(_) | Error::Checkpoint(_) => SpStatus::Format,
        Error::Config(_) | Error::Usage(_) | Error::LengthMismatch(..) | Error::EmptyInput(_) => {
            SpStatus::InvalidArgument
        }
        _ => SpStatus::Runtime,
    }
}

struct Fail(SpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside softprompt");
            SpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SpStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SpStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

fn null(name: &str) -> Fail {
    Fail(SpStatus::NullPointer, format!("`{name}` is null"))
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Greedy decoding settings with a 64-token budget.
#[no_mangle]
pub extern "C" fn sp_generation_config_default() -> SpGenerationConfig {
    let g = GenerationConfig::default();
    SpGenerationConfig {
        top_k: g.top_k,
        top_p: g.top_p,
        temperature: g.temperature,
        max_new_tokens: g.max_new_tokens,
        seed: g.seed,
        use_kv_cache: g.use_kv_cache,
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_vocab_load(path: *const c_char, out: *mut *mut SpVocab) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = str_arg(path, "path")?;
        let v = Vocab::load(Path::new(p))?;
        *out = Box::into_raw(Box::new(SpVocab(v)));
        Ok(())
    })
}

/// # Safety
/// `vocab` must come from [`sp_vocab_load`] and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn sp_vocab_free(vocab: *mut SpVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Number of token ids in the vocabulary.
///
/// # Safety
/// `vocab` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn sp_vocab_size(vocab: *const SpVocab) -> usize {
    vocab.as_ref().map_or(0, |v| v.0.len())
}

/// Encodes `text` into `ids`. `len` receives the full token count even when
/// it exceeds `capacity`; in that case nothing past `capacity` is written.
///
/// # Safety
/// `ids` must have room for `capacity` values; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_vocab_encode(
    vocab: *const SpVocab,
    text: *const c_char,
    ids: *mut u32,
    capacity: usize,
    len: *mut usize,
) -> SpStatus {
    guard(|| {
        let v = vocab.as_ref().ok_or_else(|| null("vocab"))?;
        if len.is_null() {
            return Err(null("len"));
        }
        let encoded = v.0.encode(str_arg(text, "text")?);
        *len = encoded.len();
        if !ids.is_null() {
            let n = encoded.len().min(capacity);
            ptr::copy_nonoverlapping(encoded.as_ptr(), ids, n);
        }
        Ok(())
    })
}

/// Loads a transformer checkpoint. The model is frozen.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_model_load(path: *const c_char, out: *mut *mut SpModel) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mut w = checkpoint::load_transformer(Path::new(str_arg(path, "path")?))?;
        w.frozen = true;
        *out = Box::into_raw(Box::new(SpModel(w)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`sp_model_load`] and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn sp_model_free(model: *mut SpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_prompt_load(path: *const c_char, out: *mut *mut SpPrompt) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = checkpoint::load_prompt(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(SpPrompt(p)));
        Ok(())
    })
}

/// # Safety
/// `prompt` must come from [`sp_prompt_load`] and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn sp_prompt_free(prompt: *mut SpPrompt) {
    if !prompt.is_null() {
        drop(Box::from_raw(prompt));
    }
}

/// Summarizes `dialogue`. `prompt` and `config` may be NULL (bare frame,
/// default settings). The summary must be released with [`sp_string_free`].
///
/// # Safety
/// Handles must be live; `dialogue` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_generate(
    model: *const SpModel,
    prompt: *const SpPrompt,
    vocab: *const SpVocab,
    dialogue: *const c_char,
    config: *const SpGenerationConfig,
    out: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let v = vocab.as_ref().ok_or_else(|| null("vocab"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: GenerationConfig = config.as_ref().map_or_else(GenerationConfig::default, |c| (*c).into());
        let d = str_arg(dialogue, "dialogue")?;
        let s = generate(&m.0, prompt.as_ref().map(|p| &p.0), &v.0, d, &cfg)?;
        *out = CString::new(s.replace('\0', " "))
            .expect("nul bytes removed")
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// ROUGE-N of one candidate against one reference.
///
/// # Safety
/// Strings must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_rouge_n(
    candidate: *const c_char,
    reference: *const c_char,
    n: usize,
    out: *mut SpScore,
) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n == 0 {
            return Err(Fail(SpStatus::InvalidArgument, "n must be at least 1".into()));
        }
        let s = metrics::rouge_n(str_arg(candidate, "candidate")?, str_arg(reference, "reference")?, n);
        *out = SpScore {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        };
        Ok(())
    })
}

/// ROUGE-L of one candidate against one reference.
///
/// # Safety
/// Strings must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_rouge_l(candidate: *const c_char, reference: *const c_char, out: *mut SpScore) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = metrics::rouge_l(str_arg(candidate, "candidate")?, str_arg(reference, "reference")?);
        *out = SpScore {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        };
        Ok(())
    })
}

/// Corpus BLEU over `count` aligned candidate/reference pairs.
///
/// # Safety
/// Both arrays must hold `count` NUL-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_bleu(
    candidates: *const *const c_char,
    references: *const *const c_char,
    count: usize,
    out: *mut f64,
) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if count > 0 && (candidates.is_null() || references.is_null()) {
            return Err(null("candidates/references"));
        }
        let mut c = Vec::with_capacity(count);
        let mut r = Vec::with_capacity(count);
        for i in 0..count {
            c.push(str_arg(*candidates.add(i), "candidate")?);
            r.push(str_arg(*references.add(i), "reference")?);
        }
        *out = metrics::bleu(&c, &r)?;
        Ok(())
    })
}

/// Mean of the four metrics, plus BERTScore when `has_bertscore` is set.
#[no_mangle]
pub extern "C" fn sp_aggregate(
    rouge1: f64,
    rouge2: f64,
    rouge_l: f64,
    bleu: f64,
    bertscore: f64,
    has_bertscore: bool,
) -> f64 {
    metrics::aggregate(rouge1, rouge2, rouge_l, bleu, has_bertscore.then_some(bertscore))
}
