//! C ABI over the planner.
//!
//! Corpora and models are opaque heap handles created by `lp_*_new`,
//! `lp_*_generate` or `lp_*_load` and released with the matching `_free`.
//! Every fallible call returns an [`LpStatus`]; on failure the message is
//! kept per thread and can be copied out with [`lp_last_error_message`].
//! Panics never cross the boundary; they surface as `LP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use latplan::geom::Point2;
use latplan::grpo;
use latplan::harness::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use latplan::harness::corpus::{read_corpus, write_corpus};
use latplan::harness::eval::evaluate;
use latplan::harness::metrics::PdmsScore;
use latplan::imitation::laplace_nll;
use latplan::model::{ModelConfig, PolicySnapshot};
use latplan::planner::{plan, TargetRegion};
use latplan::world::{generate_corpus, Difficulty, Scenario};
use latplan::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Shape = 6,
    Domain = 7,
    Numeric = 8,
    Checkpoint = 9,
    Architecture = 10,
    Generation = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// A scenario corpus.
pub struct LpCorpus {
    scenarios: Vec<Scenario>,
}

/// A planner with its parameters.
pub struct LpModel {
    policy: PolicySnapshot,
}

/// Held-out metrics of a model on a corpus.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LpEvalSummary {
    pub ade_1s: f64,
    pub ade_2s: f64,
    pub ade_3s: f64,
    pub ade_avg: f64,
    /// Percent, mean over the 1/2/3 s horizons.
    pub collision_rate: f64,
}

pub const LP_DIFFICULTY_EASY: u32 = 0;
pub const LP_DIFFICULTY_MEDIUM: u32 = 1;
pub const LP_DIFFICULTY_HARD: u32 = 2;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Fail {
    status: LpStatus,
    message: String,
}

impl Fail {
    fn new(status: LpStatus, message: impl Into<String>) -> Self {
        Fail { status, message: message.into() }
    }

    fn null(what: &str) -> Self {
        Fail::new(LpStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidGeometry(_) | Error::Argument(_) | Error::Usage(_) => LpStatus::InvalidArgument,
            Error::Shape(_) => LpStatus::Shape,
            Error::Domain(_) => LpStatus::Domain,
            Error::NonFinite(_) | Error::Diverged(_) => LpStatus::Numeric,
            Error::Generation { .. } => LpStatus::Generation,
            Error::Corrupt(_) | Error::Version { .. } => LpStatus::Checkpoint,
            Error::Architecture(_) => LpStatus::Architecture,
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => LpStatus::Parse,
            Error::Config(_) => LpStatus::Config,
            Error::Io(_) => LpStatus::Io,
        };
        Fail::new(status, e.to_string())
    }
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LpStatus::Ok
        }
        Ok(Err(fail)) => {
            set_error(fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LpStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail::new(LpStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::null(what))
}

unsafe fn matrix_arg(p: *const f64, g: usize, t: usize) -> Result<Vec<Vec<f64>>, Fail> {
    if p.is_null() {
        return Err(Fail::null("matrix"));
    }
    let flat = std::slice::from_raw_parts(p, g * t);
    Ok(flat.chunks(t.max(1)).take(g).map(|r| r.to_vec()).collect())
}

unsafe fn write_matrix(out: *mut f64, m: &[Vec<f64>]) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::null("output matrix"));
    }
    let mut k = 0;
    for row in m {
        for &v in row {
            *out.add(k) = v;
            k += 1;
        }
    }
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (always
/// NUL-terminated when `len > 0`). Returns the full message length in
/// bytes, excluding the terminator; 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Generates `count` scenarios with seeds `base_seed, base_seed + 1, …`.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn lp_corpus_generate(
    count: usize,
    difficulty: u32,
    base_seed: u64,
    out: *mut *mut LpCorpus,
) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let d = match difficulty {
            LP_DIFFICULTY_EASY => Difficulty::Easy,
            LP_DIFFICULTY_MEDIUM => Difficulty::Medium,
            LP_DIFFICULTY_HARD => Difficulty::Hard,
            other => return Err(Fail::new(LpStatus::InvalidArgument, format!("unknown difficulty {other}"))),
        };
        let scenarios = generate_corpus(count, d, base_seed)?;
        *out = Box::into_raw(Box::new(LpCorpus { scenarios }));
        Ok(())
    })
}

/// Reads a JSON-lines corpus.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lp_corpus_load(path: *const c_char, out: *mut *mut LpCorpus) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let scenarios = read_corpus(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(LpCorpus { scenarios }));
        Ok(())
    })
}

/// Writes a corpus as JSON lines.
///
/// # Safety
/// `corpus` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lp_corpus_save(corpus: *const LpCorpus, path: *const c_char) -> LpStatus {
    guard(|| {
        let c = ref_arg(corpus, "corpus")?;
        write_corpus(&path_arg(path)?, &c.scenarios)?;
        Ok(())
    })
}

/// # Safety
/// `corpus` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lp_corpus_len(corpus: *const LpCorpus, out: *mut usize) -> LpStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(corpus, "corpus")?.scenarios.len();
        Ok(())
    })
}

/// Releases a corpus. Null is ignored.
///
/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lp_corpus_free(corpus: *mut LpCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// A freshly initialized model with the compact experiment architecture.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lp_model_new_default(seed: u64, out: *mut *mut LpModel) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let policy = PolicySnapshot::new(ModelConfig::compact(), seed)?;
        *out = Box::into_raw(Box::new(LpModel { policy }));
        Ok(())
    })
}

/// Loads a model from a checkpoint written by the CLI or [`lp_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lp_model_load(path: *const c_char, out: *mut *mut LpModel) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let policy = load_checkpoint(&path_arg(path)?)?.policy;
        *out = Box::into_raw(Box::new(LpModel { policy }));
        Ok(())
    })
}

/// Saves parameters and architecture (no optimizer state).
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lp_model_save(model: *const LpModel, path: *const c_char) -> LpStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let ck = Checkpoint { policy: m.policy.clone(), optimizer: None, rng: None, step: 0 };
        save_checkpoint(&path_arg(path)?, &ck)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lp_model_free(model: *mut LpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Plans scenario `index` and writes the trajectory as interleaved world
/// `x, y` pairs. `capacity` is the number of doubles `out_xy` can hold;
/// `written` receives the number needed (2·T) even when it is too small.
///
/// # Safety
/// Handles must be live; `out_xy` must hold `capacity` doubles; `written`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lp_model_plan(
    model: *const LpModel,
    corpus: *const LpCorpus,
    index: usize,
    out_xy: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> LpStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let c = ref_arg(corpus, "corpus")?;
        let written = out_arg(written, "written")?;
        let s = c.scenarios.get(index).ok_or_else(|| {
            Fail::new(LpStatus::InvalidArgument, format!("index {index} out of {}", c.scenarios.len()))
        })?;
        let cache = m.policy.encode(s)?;
        let out = plan(&m.policy.layout.planner, &m.policy.params, &cache.ctx)?;
        let pts = s.points_to_world(&out.trajectory().points);
        *written = 2 * pts.len();
        if capacity < 2 * pts.len() {
            return Err(Fail::new(LpStatus::BufferTooSmall, format!("need {} doubles, got {capacity}", 2 * pts.len())));
        }
        if out_xy.is_null() {
            return Err(Fail::null("out_xy"));
        }
        for (k, p) in pts.iter().enumerate() {
            *out_xy.add(2 * k) = p.x;
            *out_xy.add(2 * k + 1) = p.y;
        }
        Ok(())
    })
}

/// ADE at 1/2/3 s and the collision rate of `model` over `corpus`.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lp_evaluate(
    model: *const LpModel,
    corpus: *const LpCorpus,
    out: *mut LpEvalSummary,
) -> LpStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let c = ref_arg(corpus, "corpus")?;
        let out = out_arg(out, "out")?;
        let r = evaluate(&m.policy, &c.scenarios, None)?;
        *out = LpEvalSummary {
            ade_1s: r.ade_1s,
            ade_2s: r.ade_2s,
            ade_3s: r.ade_3s,
            ade_avg: r.ade_avg,
            collision_rate: r.collision_rate,
        };
        Ok(())
    })
}

/// `nc·dac·(5·ep + 5·ttc + 2·comf)/12`; every subscore must lie in [0, 1].
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lp_pdms_compose(nc: f64, dac: f64, ttc: f64, comf: f64, ep: f64, out: *mut f64) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = PdmsScore::new(nc, dac, ttc, comf, ep)?.pdms;
        Ok(())
    })
}

/// Two-axis Laplace negative log-likelihood `Σ log(2b) + |y−μ|/b`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lp_laplace_nll(
    y_x: f64,
    y_y: f64,
    mu_x: f64,
    mu_y: f64,
    b_x: f64,
    b_y: f64,
    out: *mut f64,
) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let region = TargetRegion { mu: Point2::new(mu_x, mu_y), b: [b_x, b_y] };
        *out = laplace_nll(Point2::new(y_x, y_y), &region)?;
        Ok(())
    })
}

/// Column-wise group normalization of a row-major `g×t` reward matrix.
///
/// # Safety
/// `raw` and `out` must each hold `g·t` doubles; they may alias.
#[no_mangle]
pub unsafe extern "C" fn lp_normalize_rewards(raw: *const f64, g: usize, t: usize, out: *mut f64) -> LpStatus {
    guard(|| {
        let m = matrix_arg(raw, g, t)?;
        let n = grpo::normalize_rewards(&m)?;
        write_matrix(out, &n)
    })
}

/// Per-point suffix sums of a row-major `g×t` matrix of normalized rewards.
///
/// # Safety
/// `rtilde` and `out` must each hold `g·t` doubles; they may alias.
#[no_mangle]
pub unsafe extern "C" fn lp_advantages(rtilde: *const f64, g: usize, t: usize, out: *mut f64) -> LpStatus {
    guard(|| {
        if t == 0 {
            return Err(Fail::new(LpStatus::InvalidArgument, "matrix needs at least one column"));
        }
        let m = matrix_arg(rtilde, g, t)?;
        write_matrix(out, &grpo::advantages(&m))
    })
}
