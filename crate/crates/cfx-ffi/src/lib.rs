//! C ABI over the metric core, so other languages can bind the toolkit's
//! measurements without driving the CLI.
//!
//! Conventions: every function returns a [`CfxStatus`]; results come back
//! through out-pointers; strings are NUL-terminated UTF-8; the score
//! accumulator is an opaque handle created and freed here. Undefined
//! results (empty inputs, constant rank vectors) are a status, never a
//! sentinel value.

use cfx::analysis::{average_scores, spearman};
use cfx::judge::{distribution_from_scores, Aspect};
use cfx::metrics::{pair_similarity, perplexity, TokenizedText};
use cfx::providers::TokenLogprobs;
use libc::{c_char, c_double, c_int};
use std::ffi::CStr;

/// Result of every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfxStatus {
    /// The out-parameters hold the result.
    CfxOk = 0,
    /// A required pointer argument was NULL.
    CfxNullPointer = 1,
    /// A string argument was not valid UTF-8.
    CfxInvalidUtf8 = 2,
    /// An argument was out of range (score outside 1..=4, zero length).
    CfxInvalidArgument = 3,
    /// The quantity is undefined for this input (empty set, constant
    /// ranks, zero-token factual).
    CfxUndefined = 4,
}

unsafe fn text_arg<'a>(ptr: *const c_char) -> Result<&'a str, CfxStatus> {
    if ptr.is_null() {
        return Err(CfxStatus::CfxNullPointer);
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| CfxStatus::CfxInvalidUtf8)
}

/// Token-level Levenshtein distance between two whitespace-tokenized
/// strings.
///
/// # Safety
/// `a` and `b` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cfx_token_levenshtein(
    a: *const c_char,
    b: *const c_char,
    out: *mut usize,
) -> CfxStatus {
    if out.is_null() {
        return CfxStatus::CfxNullPointer;
    }
    let (a, b) = match (text_arg(a), text_arg(b)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(status), _) | (_, Err(status)) => return status,
    };
    let a = TokenizedText::new(a);
    let b = TokenizedText::new(b);
    *out = cfx::metrics::token_distance(&a, &b);
    CfxStatus::CfxOk
}

/// Normalized token distance `d(factual, counterfactual) / |factual|`.
/// Undefined when the factual tokenizes to nothing.
///
/// # Safety
/// `factual` and `counterfactual` must be NUL-terminated strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn cfx_pair_textual_similarity(
    factual: *const c_char,
    counterfactual: *const c_char,
    out: *mut c_double,
) -> CfxStatus {
    if out.is_null() {
        return CfxStatus::CfxNullPointer;
    }
    let (factual, counterfactual) = match (text_arg(factual), text_arg(counterfactual)) {
        (Ok(f), Ok(c)) => (f, c),
        (Err(status), _) | (_, Err(status)) => return status,
    };
    match pair_similarity(factual, counterfactual) {
        Some(value) => {
            *out = value;
            CfxStatus::CfxOk
        }
        None => CfxStatus::CfxUndefined,
    }
}

/// Perplexity from conditional token log-probabilities:
/// `exp(-mean(logprobs))`. Log-probabilities must be finite and <= 0.
///
/// # Safety
/// `logprobs` must point to `len` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cfx_perplexity(
    logprobs: *const c_double,
    len: usize,
    out: *mut c_double,
) -> CfxStatus {
    if logprobs.is_null() || out.is_null() {
        return CfxStatus::CfxNullPointer;
    }
    if len == 0 {
        return CfxStatus::CfxUndefined;
    }
    let values = std::slice::from_raw_parts(logprobs, len);
    let tokens = (0..len).map(|i| format!("t{i}")).collect();
    let lp = match TokenLogprobs::new(tokens, values.to_vec()) {
        Ok(lp) => lp,
        Err(_) => return CfxStatus::CfxInvalidArgument,
    };
    match perplexity(&lp) {
        Ok(value) => {
            *out = value;
            CfxStatus::CfxOk
        }
        Err(_) => CfxStatus::CfxUndefined,
    }
}

/// Spearman rank correlation with fractional tied ranks. Undefined when
/// either input is constant.
///
/// # Safety
/// `xs` and `ys` must each point to `len` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cfx_spearman(
    xs: *const c_double,
    ys: *const c_double,
    len: usize,
    out: *mut c_double,
) -> CfxStatus {
    if xs.is_null() || ys.is_null() || out.is_null() {
        return CfxStatus::CfxNullPointer;
    }
    if len < 2 {
        return CfxStatus::CfxInvalidArgument;
    }
    let xs = std::slice::from_raw_parts(xs, len);
    let ys = std::slice::from_raw_parts(ys, len);
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return CfxStatus::CfxInvalidArgument;
    }
    match spearman(xs, ys) {
        Ok(Some(rho)) => {
            *out = rho;
            CfxStatus::CfxOk
        }
        Ok(None) => CfxStatus::CfxUndefined,
        Err(_) => CfxStatus::CfxInvalidArgument,
    }
}

/// Whether a counterfactual reproduces the untouched counterpart field
/// verbatim after trimming, whitespace collapsing and case folding.
///
/// # Safety
/// `untouched` and `counterfactual` must be NUL-terminated strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn cfx_is_copy_paste(
    untouched: *const c_char,
    counterfactual: *const c_char,
    out: *mut bool,
) -> CfxStatus {
    if out.is_null() {
        return CfxStatus::CfxNullPointer;
    }
    let (untouched, counterfactual) = match (text_arg(untouched), text_arg(counterfactual)) {
        (Ok(u), Ok(c)) => (u, c),
        (Err(status), _) | (_, Err(status)) => return status,
    };
    let normalize = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    *out = normalize(untouched) == normalize(counterfactual);
    CfxStatus::CfxOk
}

/// Mean of the three judge aspect scores. Each must lie in [1, 4].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cfx_average_scores(
    fl: c_double,
    ua: c_double,
    rs: c_double,
    out: *mut c_double,
) -> CfxStatus {
    if out.is_null() {
        return CfxStatus::CfxNullPointer;
    }
    for value in [fl, ua, rs] {
        if !(1.0..=4.0).contains(&value) {
            return CfxStatus::CfxInvalidArgument;
        }
    }
    *out = average_scores(fl, ua, rs);
    CfxStatus::CfxOk
}

/// Opaque accumulator of judge scores in 1..=4.
pub struct CfxScoreDist {
    scores: Vec<u8>,
}

/// Summary of an accumulated score distribution: per-score percentages,
/// the disagreement and agreement bins, the mean and the count.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CfxScoreDistSummary {
    pub pct_1: c_double,
    pub pct_2: c_double,
    pub pct_3: c_double,
    pub pct_4: c_double,
    pub pct_12: c_double,
    pub pct_34: c_double,
    pub avg: c_double,
    pub n: usize,
}

/// Create an empty score accumulator. Free with [`cfx_score_dist_free`].
#[no_mangle]
pub extern "C" fn cfx_score_dist_new() -> *mut CfxScoreDist {
    Box::into_raw(Box::new(CfxScoreDist { scores: Vec::new() }))
}

/// Add one score in 1..=4.
///
/// # Safety
/// `dist` must be a live handle from [`cfx_score_dist_new`].
#[no_mangle]
pub unsafe extern "C" fn cfx_score_dist_push(dist: *mut CfxScoreDist, score: c_int) -> CfxStatus {
    let Some(dist) = dist.as_mut() else {
        return CfxStatus::CfxNullPointer;
    };
    if !(1..=4).contains(&score) {
        return CfxStatus::CfxInvalidArgument;
    }
    dist.scores.push(score as u8);
    CfxStatus::CfxOk
}

/// Summarize the accumulated scores. Undefined while empty.
///
/// # Safety
/// `dist` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cfx_score_dist_summary(
    dist: *const CfxScoreDist,
    out: *mut CfxScoreDistSummary,
) -> CfxStatus {
    let Some(dist) = dist.as_ref() else {
        return CfxStatus::CfxNullPointer;
    };
    if out.is_null() {
        return CfxStatus::CfxNullPointer;
    }
    match distribution_from_scores(&dist.scores, Aspect::FlipLabel) {
        Ok(summary) => {
            *out = CfxScoreDistSummary {
                pct_1: summary.pct_1,
                pct_2: summary.pct_2,
                pct_3: summary.pct_3,
                pct_4: summary.pct_4,
                pct_12: summary.pct_12,
                pct_34: summary.pct_34,
                avg: summary.avg,
                n: summary.n,
            };
            CfxStatus::CfxOk
        }
        Err(_) => CfxStatus::CfxUndefined,
    }
}

/// Release a handle from [`cfx_score_dist_new`]. NULL is a no-op.
///
/// # Safety
/// `dist` must be NULL or a live handle, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cfx_score_dist_free(dist: *mut CfxScoreDist) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn levenshtein_through_the_abi() {
        let a = c("the movie was great");
        let b = c("the movie was terrible");
        let mut out = 0usize;
        let status = unsafe { cfx_token_levenshtein(a.as_ptr(), b.as_ptr(), &mut out) };
        assert_eq!(status, CfxStatus::CfxOk);
        assert_eq!(out, 1);

        let status = unsafe { cfx_token_levenshtein(std::ptr::null(), b.as_ptr(), &mut out) };
        assert_eq!(status, CfxStatus::CfxNullPointer);
    }

    #[test]
    fn similarity_and_undefined_cases() {
        let factual = c("the movie was great");
        let cf = c("the movie was terrible");
        let mut out = 0.0;
        let status =
            unsafe { cfx_pair_textual_similarity(factual.as_ptr(), cf.as_ptr(), &mut out) };
        assert_eq!(status, CfxStatus::CfxOk);
        assert_eq!(out, 0.25);

        let empty = c("   ");
        let status = unsafe { cfx_pair_textual_similarity(empty.as_ptr(), cf.as_ptr(), &mut out) };
        assert_eq!(status, CfxStatus::CfxUndefined);
    }

    #[test]
    fn perplexity_through_the_abi() {
        let ln2 = (2.0f64).ln();
        let lps = [-ln2, -ln2];
        let mut out = 0.0;
        let status = unsafe { cfx_perplexity(lps.as_ptr(), lps.len(), &mut out) };
        assert_eq!(status, CfxStatus::CfxOk);
        assert!((out - 2.0).abs() < 1e-12);

        let bad = [0.5];
        let status = unsafe { cfx_perplexity(bad.as_ptr(), 1, &mut out) };
        assert_eq!(status, CfxStatus::CfxInvalidArgument);

        let status = unsafe { cfx_perplexity(lps.as_ptr(), 0, &mut out) };
        assert_eq!(status, CfxStatus::CfxUndefined);
    }

    #[test]
    fn spearman_through_the_abi() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.0, 1.0, 4.0, 3.0];
        let mut rho = 0.0;
        let status = unsafe { cfx_spearman(xs.as_ptr(), ys.as_ptr(), 4, &mut rho) };
        assert_eq!(status, CfxStatus::CfxOk);
        assert!((rho - 0.6).abs() < 1e-12);

        let constant = [5.0, 5.0, 5.0, 5.0];
        let status = unsafe { cfx_spearman(constant.as_ptr(), ys.as_ptr(), 4, &mut rho) };
        assert_eq!(status, CfxStatus::CfxUndefined);

        let status = unsafe { cfx_spearman(xs.as_ptr(), ys.as_ptr(), 1, &mut rho) };
        assert_eq!(status, CfxStatus::CfxInvalidArgument);
    }

    #[test]
    fn copy_paste_through_the_abi() {
        let untouched = c("a person is outside");
        let copy = c("  A Person   IS outside ");
        let other = c("a person is inside");
        let mut flag = false;
        let status = unsafe { cfx_is_copy_paste(untouched.as_ptr(), copy.as_ptr(), &mut flag) };
        assert_eq!(status, CfxStatus::CfxOk);
        assert!(flag);
        let status = unsafe { cfx_is_copy_paste(untouched.as_ptr(), other.as_ptr(), &mut flag) };
        assert_eq!(status, CfxStatus::CfxOk);
        assert!(!flag);
    }

    #[test]
    fn average_scores_through_the_abi() {
        let mut avg = 0.0;
        let status = unsafe { cfx_average_scores(3.79, 3.15, 2.91, &mut avg) };
        assert_eq!(status, CfxStatus::CfxOk);
        assert!((avg - 3.2833333333).abs() < 1e-9);
        let status = unsafe { cfx_average_scores(0.5, 3.0, 3.0, &mut avg) };
        assert_eq!(status, CfxStatus::CfxInvalidArgument);
    }

    #[test]
    fn score_dist_handle_lifecycle() {
        let dist = cfx_score_dist_new();
        let mut summary = CfxScoreDistSummary {
            pct_1: 0.0,
            pct_2: 0.0,
            pct_3: 0.0,
            pct_4: 0.0,
            pct_12: 0.0,
            pct_34: 0.0,
            avg: 0.0,
            n: 0,
        };
        unsafe {
            assert_eq!(cfx_score_dist_summary(dist, &mut summary), CfxStatus::CfxUndefined);
            for score in [1, 1, 3, 4] {
                assert_eq!(cfx_score_dist_push(dist, score), CfxStatus::CfxOk);
            }
            assert_eq!(cfx_score_dist_push(dist, 5), CfxStatus::CfxInvalidArgument);
            assert_eq!(cfx_score_dist_summary(dist, &mut summary), CfxStatus::CfxOk);
            assert_eq!(summary.pct_12, 50.0);
            assert_eq!(summary.pct_34, 50.0);
            assert_eq!(summary.avg, 2.25);
            assert_eq!(summary.n, 4);
            cfx_score_dist_free(dist);
            cfx_score_dist_free(std::ptr::null_mut());
        }
    }
}
