//! C ABI for checkpoint loading and pose prediction.
//!
//! Every function is panic-safe: panics are caught at the boundary and
//! reported as `VOT_STATUS_PANIC`. Failing calls store a message retrievable
//! with `vot_last_error` until the next failing call on the same thread.
//!
//! Pose buffers use the TUM component order `tx ty tz qx qy qz qw`, seven
//! doubles per pose, with unit quaternions and `qw >= 0`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use vot::ckpt::{load_checkpoint, CkptError};
use vot::config::RunConfig;
use vot::data::Raster;
use vot::geometry::{compose_poses, rot_to_quat, Pose};
use vot::model::VotModel;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VotStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument value was rejected; see vot_last_error.
    InvalidArgument = 2,
    /// The checkpoint file could not be read.
    Io = 3,
    /// The checkpoint file exists but does not parse.
    BadCheckpoint = 4,
    /// The model rejected the input frames.
    Model = 5,
    /// A panic was caught at the FFI boundary.
    Panic = 6,
}

/// Loaded model plus the config it was trained with. Opaque to C.
pub struct VotModelHandle {
    cfg: RunConfig,
    model: VotModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap());
}

fn fail(status: VotStatus, msg: &str) -> VotStatus {
    set_error(msg);
    status
}

/// Message for the most recent failing call on this thread. Never null;
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vot_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static library version string.
#[no_mangle]
pub extern "C" fn vot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn guarded(f: impl FnOnce() -> VotStatus) -> VotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            fail(VotStatus::Panic, &msg)
        }
    }
}

/// Loads a checkpoint written by `vot train` and returns an owned handle
/// through `out`. The handle must be released with `vot_model_free`.
///
/// # Safety
/// `path` must be a nul-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vot_model_load(
    path: *const c_char,
    out: *mut *mut VotModelHandle,
) -> VotStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(VotStatus::NullArgument, "path and out must be non-null");
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail(VotStatus::InvalidArgument, "path is not valid UTF-8"),
        };
        match load_checkpoint(Path::new(path)) {
            Ok((cfg, trainer)) => {
                let handle = Box::new(VotModelHandle { cfg, model: trainer.into_model() });
                unsafe { *out = Box::into_raw(handle) };
                VotStatus::Ok
            }
            Err(e @ CkptError::Io { .. }) => fail(VotStatus::Io, &e.to_string()),
            Err(e) => fail(VotStatus::BadCheckpoint, &e.to_string()),
        }
    })
}

/// Releases a handle returned by `vot_model_load`. Null is a no-op.
///
/// # Safety
/// `handle` must be null or a pointer obtained from `vot_model_load` that
/// has not been freed already.
#[no_mangle]
pub unsafe extern "C" fn vot_model_free(handle: *mut VotModelHandle) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

unsafe fn handle_ref<'a>(handle: *const VotModelHandle) -> Option<&'a VotModelHandle> {
    unsafe { handle.as_ref() }
}

/// Expected frame height in pixels; 0 if `handle` is null.
///
/// # Safety
/// `handle` must be null or a live pointer from `vot_model_load`.
#[no_mangle]
pub unsafe extern "C" fn vot_model_frame_height(handle: *const VotModelHandle) -> usize {
    unsafe { handle_ref(handle) }.map_or(0, |h| h.cfg.image.height)
}

/// Expected frame width in pixels; 0 if `handle` is null.
///
/// # Safety
/// `handle` must be null or a live pointer from `vot_model_load`.
#[no_mangle]
pub unsafe extern "C" fn vot_model_frame_width(handle: *const VotModelHandle) -> usize {
    unsafe { handle_ref(handle) }.map_or(0, |h| h.cfg.image.width)
}

/// Expected channels per pixel (1 or 3); 0 if `handle` is null.
///
/// # Safety
/// `handle` must be null or a live pointer from `vot_model_load`.
#[no_mangle]
pub unsafe extern "C" fn vot_model_frame_channels(handle: *const VotModelHandle) -> usize {
    unsafe { handle_ref(handle) }.map_or(0, |h| h.cfg.image.channels)
}

/// Frames per attention window; longer inputs are processed in overlapping
/// windows of this size. 0 if `handle` is null.
///
/// # Safety
/// `handle` must be null or a live pointer from `vot_model_load`.
#[no_mangle]
pub unsafe extern "C" fn vot_model_window(handle: *const VotModelHandle) -> usize {
    unsafe { handle_ref(handle) }.map_or(0, |h| h.cfg.data.views)
}

fn write_pose(pose: &Pose, out: &mut [f64]) {
    let [w, x, y, z] = rot_to_quat(&pose.rotation);
    out[..3].copy_from_slice(&pose.translation);
    out[3..7].copy_from_slice(&[x, y, z, w]);
}

unsafe fn predict_common(
    handle: *const VotModelHandle,
    frames: *const f64,
    n_frames: usize,
) -> Result<Vec<Pose>, VotStatus> {
    let handle = match unsafe { handle_ref(handle) } {
        Some(h) => h,
        None => return Err(fail(VotStatus::NullArgument, "handle must be non-null")),
    };
    if frames.is_null() {
        return Err(fail(VotStatus::NullArgument, "frames must be non-null"));
    }
    if n_frames < 2 {
        return Err(fail(
            VotStatus::InvalidArgument,
            &format!("need at least 2 frames, got {n_frames}"),
        ));
    }
    let img = handle.cfg.image;
    let per_frame = img.height * img.width * img.channels;
    let flat = unsafe { std::slice::from_raw_parts(frames, n_frames * per_frame) };
    let rasters: Vec<Raster> = flat
        .chunks_exact(per_frame)
        .map(|chunk| Raster {
            height: img.height,
            width: img.width,
            channels: img.channels,
            data: chunk.to_vec(),
        })
        .collect();
    handle
        .model
        .predict_chunked(&rasters, handle.cfg.data.views)
        .map_err(|e| fail(VotStatus::Model, &e.to_string()))
}

/// Predicts the relative pose of each consecutive frame pair.
///
/// `frames` holds `n_frames` images back to back, each
/// `height * width * channels` doubles in [0,1], row-major with channels
/// innermost. `out_poses` receives `(n_frames - 1) * 7` doubles.
///
/// # Safety
/// `frames` and `out_poses` must point to buffers of the sizes above.
#[no_mangle]
pub unsafe extern "C" fn vot_predict_relative(
    handle: *const VotModelHandle,
    frames: *const f64,
    n_frames: usize,
    out_poses: *mut f64,
) -> VotStatus {
    guarded(|| {
        if out_poses.is_null() {
            return fail(VotStatus::NullArgument, "out_poses must be non-null");
        }
        let rels = match unsafe { predict_common(handle, frames, n_frames) } {
            Ok(r) => r,
            Err(status) => return status,
        };
        let out = unsafe { std::slice::from_raw_parts_mut(out_poses, rels.len() * 7) };
        for (pose, chunk) in rels.iter().zip(out.chunks_exact_mut(7)) {
            write_pose(pose, chunk);
        }
        VotStatus::Ok
    })
}

/// Predicts the absolute trajectory from an identity start by composing the
/// relative poses. `out_poses` receives `n_frames * 7` doubles; the first
/// pose is always the identity.
///
/// # Safety
/// `frames` and `out_poses` must point to buffers of the sizes above.
#[no_mangle]
pub unsafe extern "C" fn vot_predict_absolute(
    handle: *const VotModelHandle,
    frames: *const f64,
    n_frames: usize,
    out_poses: *mut f64,
) -> VotStatus {
    guarded(|| {
        if out_poses.is_null() {
            return fail(VotStatus::NullArgument, "out_poses must be non-null");
        }
        let rels = match unsafe { predict_common(handle, frames, n_frames) } {
            Ok(r) => r,
            Err(status) => return status,
        };
        let poses = compose_poses(&Pose::identity(), &rels);
        let out = unsafe { std::slice::from_raw_parts_mut(out_poses, poses.len() * 7) };
        for (pose, chunk) in poses.iter().zip(out.chunks_exact_mut(7)) {
            write_pose(pose, chunk);
        }
        VotStatus::Ok
    })
}
