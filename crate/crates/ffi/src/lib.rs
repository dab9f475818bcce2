//! C ABI over the overlap metrics and statistics.
//!
//! Conventions:
//! * every function returns a [`MoelabStatus`] and writes results through
//!   out-pointers; `MOELAB_STATUS_OK` (0) means every out-pointer was filled
//! * pointers must be non-null and arrays as long as their stated lengths;
//!   violations return an error status instead of being dereferenced
//! * the activation-overlap accumulator is an opaque handle created by
//!   `moelab_act_mso_new` and released by `moelab_act_mso_free` or consumed
//!   by `moelab_act_mso_finish`
//!
//! The header `include/moelab.h` is regenerated by the build script.

use std::ffi::c_char;
use std::slice;

use moelab::metrics;
use moelab::model::{RoutingTrace, TokenRouting};
use moelab::stats;

/// Result code of every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoelabStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 2,
    /// The inputs are degenerate (e.g. a zero-norm weight vector).
    Degenerate = 3,
    /// The quantity is undefined for these inputs (e.g. fewer than two
    /// experts, or an empty evaluation stream).
    Undefined = 4,
    /// Too few samples for the requested statistic.
    SampleTooSmall = 5,
    /// A constant series has no defined correlation.
    ConstantSeries = 6,
}

fn map_metric(e: metrics::MetricError) -> MoelabStatus {
    match e {
        metrics::MetricError::Degenerate(_) => MoelabStatus::Degenerate,
        metrics::MetricError::Undefined(_) => MoelabStatus::Undefined,
        metrics::MetricError::Tensor(_) => MoelabStatus::InvalidArgument,
    }
}

fn map_stats(e: stats::StatsError) -> MoelabStatus {
    match e {
        stats::StatsError::SampleSize(_) => MoelabStatus::SampleTooSmall,
        stats::StatsError::ConstantSeries(_) => MoelabStatus::ConstantSeries,
        stats::StatsError::Degenerate(_) => MoelabStatus::Degenerate,
    }
}

/// Crate version as a NUL-terminated static string.
#[no_mangle]
pub extern "C" fn moelab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn moelab_status_message(status: MoelabStatus) -> *const c_char {
    let msg: &'static str = match status {
        MoelabStatus::Ok => "ok\0",
        MoelabStatus::NullArgument => "null pointer argument\0",
        MoelabStatus::InvalidArgument => "invalid argument\0",
        MoelabStatus::Degenerate => "degenerate input\0",
        MoelabStatus::Undefined => "undefined for these inputs\0",
        MoelabStatus::SampleTooSmall => "too few samples\0",
        MoelabStatus::ConstantSeries => "constant series\0",
    };
    msg.as_ptr() as *const c_char
}

unsafe fn expert_rows<'a>(
    experts: *const f64,
    n_experts: usize,
    weight_len: usize,
) -> Option<Vec<&'a [f64]>> {
    if experts.is_null() || weight_len == 0 {
        return None;
    }
    let all = slice::from_raw_parts(experts, n_experts * weight_len);
    Some(all.chunks_exact(weight_len).collect())
}

/// Mean squared overlap of one layer's expert weights.
///
/// `experts` is row-major `[n_experts][weight_len]` (each row one
/// flattened up-projection).
///
/// # Safety
/// `experts` must point to `n_experts * weight_len` doubles; `out` must be
/// a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn moelab_weight_mso(
    experts: *const f64,
    n_experts: usize,
    weight_len: usize,
    out: *mut f64,
) -> MoelabStatus {
    if out.is_null() {
        return MoelabStatus::NullArgument;
    }
    let Some(rows) = expert_rows(experts, n_experts, weight_len) else {
        return if experts.is_null() {
            MoelabStatus::NullArgument
        } else {
            MoelabStatus::InvalidArgument
        };
    };
    match metrics::weight_mso(&[rows]) {
        Ok(v) => {
            *out = v[0];
            MoelabStatus::Ok
        }
        Err(e) => map_metric(e),
    }
}

/// Unnormalized orthogonality penalty (pair sum of squared cosines) of one
/// layer's expert weights.
///
/// # Safety
/// Same contract as [`moelab_weight_mso`].
#[no_mangle]
pub unsafe extern "C" fn moelab_orthogonality_loss(
    experts: *const f64,
    n_experts: usize,
    weight_len: usize,
    out: *mut f64,
) -> MoelabStatus {
    if out.is_null() {
        return MoelabStatus::NullArgument;
    }
    let Some(rows) = expert_rows(experts, n_experts, weight_len) else {
        return if experts.is_null() {
            MoelabStatus::NullArgument
        } else {
            MoelabStatus::InvalidArgument
        };
    };
    match metrics::orthogonality_loss_value(&[rows]) {
        Ok(v) => {
            *out = v[0];
            MoelabStatus::Ok
        }
        Err(e) => map_metric(e),
    }
}

/// Pearson correlation with significance.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MoelabCorrelation {
    pub r: f64,
    pub p_two_sided: f64,
    pub n: usize,
    /// Nonzero when the Fisher interval below is defined (n >= 4).
    pub has_ci: u8,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

/// Pearson r between two equal-length series, two-sided p, and the Fisher
/// 95% interval when n >= 4.
///
/// # Safety
/// `xs` and `ys` must each point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moelab_pearson(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    out: *mut MoelabCorrelation,
) -> MoelabStatus {
    if xs.is_null() || ys.is_null() || out.is_null() {
        return MoelabStatus::NullArgument;
    }
    let xs = slice::from_raw_parts(xs, n);
    let ys = slice::from_raw_parts(ys, n);
    match stats::pearson(xs, ys) {
        Ok(r) => {
            *out = MoelabCorrelation {
                r: r.r,
                p_two_sided: r.p_two_sided,
                n: r.n,
                has_ci: u8::from(r.ci95_low.is_some()),
                ci95_low: r.ci95_low.unwrap_or(f64::NAN),
                ci95_high: r.ci95_high.unwrap_or(f64::NAN),
            };
            MoelabStatus::Ok
        }
        Err(e) => map_stats(e),
    }
}

/// Two-sided paired t-test result.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MoelabPairedT {
    pub mean_diff: f64,
    pub t_statistic: f64,
    pub p_two_sided: f64,
    pub degrees_freedom: usize,
    /// Nonzero when the differences had zero variance with nonzero mean
    /// (t reported as +/- infinity, p as 0).
    pub saturated: u8,
}

/// Paired t-test on same-index pairs of `a` and `b`.
///
/// # Safety
/// `a` and `b` must each point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moelab_paired_t_test(
    a: *const f64,
    b: *const f64,
    n: usize,
    out: *mut MoelabPairedT,
) -> MoelabStatus {
    if a.is_null() || b.is_null() || out.is_null() {
        return MoelabStatus::NullArgument;
    }
    let a = slice::from_raw_parts(a, n);
    let b = slice::from_raw_parts(b, n);
    match stats::paired_t_test(a, b) {
        Ok(r) => {
            *out = MoelabPairedT {
                mean_diff: r.mean_diff,
                t_statistic: r.t_statistic,
                p_two_sided: r.p_two_sided,
                degrees_freedom: r.degrees_freedom,
                saturated: u8::from(r.saturated),
            };
            MoelabStatus::Ok
        }
        Err(e) => map_stats(e),
    }
}

/// CDF of Student's t with `df` degrees of freedom.
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn moelab_student_t_cdf(t: f64, df: usize, out: *mut f64) -> MoelabStatus {
    if out.is_null() {
        return MoelabStatus::NullArgument;
    }
    if df == 0 {
        return MoelabStatus::InvalidArgument;
    }
    *out = stats::student_t_cdf(t, df);
    MoelabStatus::Ok
}

/// Report of the trace-orthogonality demonstration.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MoelabGapReport {
    pub flat_inner_product: f64,
    pub mean_sq_cos: f64,
    pub max_abs_cos: f64,
    pub control_mean_sq_cos: f64,
    pub control_max_abs_cos: f64,
}

/// Builds a weight pair with zero flattened inner product but nonzero
/// matrix product and measures the activation cosine empirically, next to
/// a disjoint-support control pair.
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn moelab_gap_demo(
    d_model: usize,
    d_ffn: usize,
    trials: usize,
    seed: u64,
    out: *mut MoelabGapReport,
) -> MoelabStatus {
    if out.is_null() {
        return MoelabStatus::NullArgument;
    }
    if trials == 0 {
        return MoelabStatus::InvalidArgument;
    }
    match metrics::gap_oracle(d_model, d_ffn, trials, seed) {
        Ok(r) => {
            *out = MoelabGapReport {
                flat_inner_product: r.flat_inner_product,
                mean_sq_cos: r.mean_sq_cos,
                max_abs_cos: r.max_abs_cos,
                control_mean_sq_cos: r.control_mean_sq_cos,
                control_max_abs_cos: r.control_max_abs_cos,
            };
            MoelabStatus::Ok
        }
        Err(e) => map_metric(e),
    }
}

/// Opaque streaming accumulator for activation overlap.
pub struct MoelabActMso {
    inner: metrics::ActivationMsoAccumulator,
    n_layers: usize,
    top_k: usize,
}

/// Create an accumulator over `n_layers` layers with `top_k` selected
/// experts per token. Returns null when the configuration is invalid
/// (`top_k < 2` or `n_layers == 0`).
#[no_mangle]
pub extern "C" fn moelab_act_mso_new(n_layers: usize, top_k: usize) -> *mut MoelabActMso {
    if n_layers == 0 {
        return std::ptr::null_mut();
    }
    match metrics::ActivationMsoAccumulator::new(n_layers, top_k) {
        Ok(inner) => Box::into_raw(Box::new(MoelabActMso { inner, n_layers, top_k })),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Push one token's selected-expert outputs: `outputs` is row-major
/// `[top_k][dim]`.
///
/// # Safety
/// `acc` must come from [`moelab_act_mso_new`] and not yet be finished or
/// freed; `outputs` must point to `top_k * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn moelab_act_mso_push(
    acc: *mut MoelabActMso,
    layer: usize,
    outputs: *const f64,
    dim: usize,
) -> MoelabStatus {
    if acc.is_null() || outputs.is_null() {
        return MoelabStatus::NullArgument;
    }
    let acc = &mut *acc;
    if layer >= acc.n_layers || dim == 0 {
        return MoelabStatus::InvalidArgument;
    }
    let flat = slice::from_raw_parts(outputs, acc.top_k * dim);
    let token = TokenRouting {
        experts: (0..acc.top_k).collect(),
        gates: vec![1.0 / acc.top_k as f64; acc.top_k],
        outputs: flat.chunks_exact(dim).map(|c| c.to_vec()).collect(),
    };
    acc.inner.push_trace(&RoutingTrace { layer, tokens: vec![token] });
    MoelabStatus::Ok
}

/// Finish the accumulator, writing per-layer activation MSO into
/// `per_layer_out` (length `n_layers` as given at creation) and the skip
/// diagnostics into the remaining out-pointers. The handle is consumed on
/// success and on any status except `NullArgument`.
///
/// # Safety
/// `acc` must come from [`moelab_act_mso_new`]; `per_layer_out` must hold
/// `n_layers` doubles; the other out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn moelab_act_mso_finish(
    acc: *mut MoelabActMso,
    per_layer_out: *mut f64,
    skipped_pairs_out: *mut u64,
    total_pairs_out: *mut u64,
    flagged_out: *mut u8,
) -> MoelabStatus {
    if acc.is_null()
        || per_layer_out.is_null()
        || skipped_pairs_out.is_null()
        || total_pairs_out.is_null()
        || flagged_out.is_null()
    {
        return MoelabStatus::NullArgument;
    }
    let acc = Box::from_raw(acc);
    match acc.inner.finish() {
        Ok(r) => {
            let out = slice::from_raw_parts_mut(per_layer_out, acc.n_layers);
            out.copy_from_slice(&r.per_layer);
            *skipped_pairs_out = r.skipped_pairs;
            *total_pairs_out = r.total_pairs;
            *flagged_out = u8::from(r.flagged);
            MoelabStatus::Ok
        }
        Err(e) => map_metric(e),
    }
}

/// Release an accumulator without finishing it. Null is ignored.
///
/// # Safety
/// `acc` must come from [`moelab_act_mso_new`] and not already be finished
/// or freed.
#[no_mangle]
pub unsafe extern "C" fn moelab_act_mso_free(acc: *mut MoelabActMso) {
    if !acc.is_null() {
        drop(Box::from_raw(acc));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_nul_terminated() {
        let p = moelab_version();
        let s = unsafe { std::ffi::CStr::from_ptr(p) };
        assert_eq!(s.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn weight_mso_identical_experts() {
        let experts = [1.0, 2.0, 1.0, 2.0]; // two identical rows
        let mut out = 0.0;
        let st = unsafe { moelab_weight_mso(experts.as_ptr(), 2, 2, &mut out) };
        assert_eq!(st, MoelabStatus::Ok);
        assert!((out - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_mso_rejects_null_and_single_expert() {
        let mut out = 0.0;
        let st = unsafe { moelab_weight_mso(std::ptr::null(), 2, 2, &mut out) };
        assert_eq!(st, MoelabStatus::NullArgument);
        let experts = [1.0, 2.0];
        let st = unsafe { moelab_weight_mso(experts.as_ptr(), 1, 2, &mut out) };
        assert_eq!(st, MoelabStatus::Undefined);
    }

    #[test]
    fn zero_norm_expert_is_degenerate() {
        let experts = [0.0, 0.0, 1.0, 2.0];
        let mut out = 0.0;
        let st = unsafe { moelab_orthogonality_loss(experts.as_ptr(), 2, 2, &mut out) };
        assert_eq!(st, MoelabStatus::Degenerate);
    }

    #[test]
    fn pearson_matches_core() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let ys = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0, 8.0];
        let mut out = MoelabCorrelation {
            r: 0.0,
            p_two_sided: 0.0,
            n: 0,
            has_ci: 0,
            ci95_low: 0.0,
            ci95_high: 0.0,
        };
        let st = unsafe { moelab_pearson(xs.as_ptr(), ys.as_ptr(), 7, &mut out) };
        assert_eq!(st, MoelabStatus::Ok);
        let reference = stats::pearson(&xs, &ys).unwrap();
        assert_eq!(out.r.to_bits(), reference.r.to_bits());
        assert_eq!(out.n, 7);
        assert_eq!(out.has_ci, 1);
        assert_eq!(out.ci95_low.to_bits(), reference.ci95_low.unwrap().to_bits());
    }

    #[test]
    fn pearson_constant_series_status() {
        let xs = [1.0; 5];
        let ys = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mut out = MoelabCorrelation {
            r: 0.0,
            p_two_sided: 0.0,
            n: 0,
            has_ci: 0,
            ci95_low: 0.0,
            ci95_high: 0.0,
        };
        let st = unsafe { moelab_pearson(xs.as_ptr(), ys.as_ptr(), 5, &mut out) };
        assert_eq!(st, MoelabStatus::ConstantSeries);
    }

    #[test]
    fn paired_t_round_trip() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.4, 2.1, 3.5, 4.2];
        let mut out = MoelabPairedT {
            mean_diff: 0.0,
            t_statistic: 0.0,
            p_two_sided: 0.0,
            degrees_freedom: 0,
            saturated: 0,
        };
        let st = unsafe { moelab_paired_t_test(a.as_ptr(), b.as_ptr(), 4, &mut out) };
        assert_eq!(st, MoelabStatus::Ok);
        let r = stats::paired_t_test(&a, &b).unwrap();
        assert_eq!(out.t_statistic.to_bits(), r.t_statistic.to_bits());
        assert_eq!(out.degrees_freedom, 3);
        assert_eq!(out.saturated, 0);
    }

    #[test]
    fn t_cdf_midpoint_and_bad_df() {
        let mut out = 0.0;
        assert_eq!(unsafe { moelab_student_t_cdf(0.0, 5, &mut out) }, MoelabStatus::Ok);
        assert_eq!(out, 0.5);
        assert_eq!(
            unsafe { moelab_student_t_cdf(1.0, 0, &mut out) },
            MoelabStatus::InvalidArgument
        );
    }

    #[test]
    fn gap_demo_matches_core_oracle() {
        let mut out = MoelabGapReport {
            flat_inner_product: 0.0,
            mean_sq_cos: 0.0,
            max_abs_cos: 0.0,
            control_mean_sq_cos: 0.0,
            control_max_abs_cos: 0.0,
        };
        let st = unsafe { moelab_gap_demo(16, 16, 500, 9, &mut out) };
        assert_eq!(st, MoelabStatus::Ok);
        let r = metrics::gap_oracle(16, 16, 500, 9).unwrap();
        assert_eq!(out.mean_sq_cos.to_bits(), r.mean_sq_cos.to_bits());
        assert_eq!(out.control_mean_sq_cos, 0.0);
    }

    #[test]
    fn act_mso_accumulator_lifecycle() {
        let acc = moelab_act_mso_new(1, 2);
        assert!(!acc.is_null());
        // identical outputs -> squared cosine 1
        let outputs = [1.0, 2.0, 1.0, 2.0];
        let st = unsafe { moelab_act_mso_push(acc, 0, outputs.as_ptr(), 2) };
        assert_eq!(st, MoelabStatus::Ok);
        let mut per_layer = [0.0];
        let (mut skipped, mut total, mut flagged) = (0u64, 0u64, 0u8);
        let st = unsafe {
            moelab_act_mso_finish(acc, per_layer.as_mut_ptr(), &mut skipped, &mut total, &mut flagged)
        };
        assert_eq!(st, MoelabStatus::Ok);
        assert!((per_layer[0] - 1.0).abs() < 1e-12);
        assert_eq!((skipped, total, flagged), (0, 1, 0));
    }

    #[test]
    fn act_mso_rejects_bad_config_and_layer() {
        assert!(moelab_act_mso_new(0, 2).is_null());
        assert!(moelab_act_mso_new(1, 1).is_null());
        let acc = moelab_act_mso_new(1, 2);
        let outputs = [1.0, 0.0, 0.0, 1.0];
        let st = unsafe { moelab_act_mso_push(acc, 5, outputs.as_ptr(), 2) };
        assert_eq!(st, MoelabStatus::InvalidArgument);
        unsafe { moelab_act_mso_free(acc) };
    }

    #[test]
    fn finish_on_empty_stream_is_undefined() {
        let acc = moelab_act_mso_new(1, 2);
        let mut per_layer = [0.0];
        let (mut skipped, mut total, mut flagged) = (0u64, 0u64, 0u8);
        let st = unsafe {
            moelab_act_mso_finish(acc, per_layer.as_mut_ptr(), &mut skipped, &mut total, &mut flagged)
        };
        assert_eq!(st, MoelabStatus::Undefined);
    }
}
