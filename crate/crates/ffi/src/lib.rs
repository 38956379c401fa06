//! C interface.
//!
//! Every fallible function returns an [`SgStatus`]; on failure the message
//! is kept per thread and can be copied out with [`sg_last_error`]. Scenes
//! and correctors are opaque handles released with their `_free` function.
//! Transforms are 12 doubles: row-major rotation, then translation.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use silgrad::baseline::{optimize_frame, BaselineConfig};
use silgrad::corrector::{load_weights, parametrize, Corrector, CorrectorInput, CORRECTION_DIM};
use silgrad::kinematics::{RigidTransform, VISIBLE_JOINTS};
use silgrad::metrics::hand_eye;
use silgrad::render::{default_sigma, Keypoint2D, MaskKind, PinholeCamera, SilhouetteImage};
use silgrad::scene::Scene;
use silgrad::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    SgOk = 0,
    SgNullPointer = 1,
    SgInvalidArgument = 2,
    SgIo = 3,
    SgFormat = 4,
    SgPanic = 5,
}

/// A chain, its meshes and a square pinhole camera.
pub struct SgScene(Scene);

/// A trained correction network.
pub struct SgCorrector(Corrector);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(SgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => SgStatus::SgIo,
            Error::Format(_) => SgStatus::SgFormat,
            Error::At { inner, .. } if matches!(**inner, Error::Format(_)) => SgStatus::SgFormat,
            _ => SgStatus::SgInvalidArgument,
        };
        Failure(code, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SgStatus::SgInvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SgStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (SgStatus::SgOk, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            (SgStatus::SgPanic, format!("internal panic: {}", m.unwrap_or_default()))
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure(SgStatus::SgNullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure(SgStatus::SgNullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(SgStatus::SgNullPointer, format!("{what} is null")))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure(SgStatus::SgNullPointer, "path is null".into()));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(Path::new(s))
}

unsafe fn transform(p: *const f64) -> Result<RigidTransform, Failure> {
    let a: &[f64; 12] = slice(p, 12, "transform")?.try_into().unwrap();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(invalid("transform is not finite"));
    }
    Ok(RigidTransform::from_array(a))
}

unsafe fn joints<'a>(scene: &Scene, q: *const f64, n: usize) -> Result<&'a [f64], Failure> {
    if n != scene.chain.len() {
        return Err(invalid(format!("chain has {} joints, got {n}", scene.chain.len())));
    }
    slice(q, n, "joint vector")
}

unsafe fn mask(scene: &Scene, pixels: *const f32) -> Result<SilhouetteImage, Failure> {
    let (w, h) = (scene.camera.width, scene.camera.height);
    let px = slice(pixels, w * h, "mask")?;
    Ok(SilhouetteImage { width: w, height: h, kind: MaskKind::Hard, pixels: px.to_vec() })
}

unsafe fn store<T>(out: *mut *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(SgStatus::SgNullPointer, "output handle is null".into()));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sg_last_error(buf: *mut c_char, len: usize) -> usize {
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

/// Built-in reference chain observed by a `size`×`size` camera.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sg_scene_reference(size: usize, out: *mut *mut SgScene) -> SgStatus {
    guard(|| {
        PinholeCamera::square(size).validate()?;
        store(out, SgScene(Scene::reference(size)))
    })
}

/// Chain and meshes from an asset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sg_scene_load(dir: *const c_char, size: usize, out: *mut *mut SgScene) -> SgStatus {
    guard(|| {
        let camera = PinholeCamera::square(size);
        camera.validate()?;
        let scene = Scene::load_assets(path(dir)?, camera)?;
        store(out, SgScene(scene))
    })
}

/// # Safety
/// `scene` must come from `sg_scene_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_scene_free(scene: *mut SgScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Number of joints of the chain, 0 for a null handle.
///
/// # Safety
/// `scene` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_scene_joint_count(scene: *const SgScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.chain.len())
}

/// Image width in pixels, 0 for a null handle.
///
/// # Safety
/// `scene` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_scene_image_size(scene: *const SgScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.camera.width)
}

/// Render the chain at `base`, `q` into `out` (width·height floats, row
/// major). `sigma > 0` gives the soft silhouette, otherwise the hard mask.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sg_scene_render(
    scene: *const SgScene,
    base: *const f64,
    q: *const f64,
    q_len: usize,
    sigma: f64,
    out: *mut f32,
    out_len: usize,
) -> SgStatus {
    guard(|| {
        let s = &handle(scene, "scene")?.0;
        let base = transform(base)?;
        let q = joints(s, q, q_len)?;
        let n = s.camera.width * s.camera.height;
        if out_len != n {
            return Err(invalid(format!("output holds {out_len} pixels, image has {n}")));
        }
        let img = if sigma > 0.0 { s.render_soft(&base, q, sigma)? } else { s.render_hard(&base, q)? };
        slice_mut(out, n, "output")?.copy_from_slice(&img.pixels);
        Ok(())
    })
}

/// End-effector pose from a base estimate, the noisy leading joints and
/// corrected visible joints (4 values).
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sg_hand_eye(
    scene: *const SgScene,
    base: *const f64,
    q_noisy: *const f64,
    q_len: usize,
    visible: *const f64,
    out: *mut f64,
) -> SgStatus {
    guard(|| {
        let s = &handle(scene, "scene")?.0;
        let base = transform(base)?;
        let q = joints(s, q_noisy, q_len)?;
        let vis: &[f64; VISIBLE_JOINTS] = slice(visible, VISIBLE_JOINTS, "visible joints")?.try_into().unwrap();
        let ee = hand_eye(&s.chain, &base, q, vis)?;
        slice_mut(out, 12, "output")?.copy_from_slice(&ee.to_array());
        Ok(())
    })
}

/// Load a trained model.
///
/// # Safety
/// `file` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sg_corrector_load(file: *const c_char, out: *mut *mut SgCorrector) -> SgStatus {
    guard(|| {
        let c = load_weights(path(file)?)?;
        store(out, SgCorrector(c))
    })
}

/// # Safety
/// `c` must come from `sg_corrector_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_corrector_free(c: *mut SgCorrector) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// One-shot correction of a frame. Writes the corrected parametrization
/// (Euler z, y, x, translation, 4 visible joints) to `out` (10 doubles).
/// `sigma ≤ 0` selects the default temperature.
///
/// # Safety
/// `observed` must hold width·height floats; other pointers as stated.
#[no_mangle]
pub unsafe extern "C" fn sg_corrector_correct(
    c: *const SgCorrector,
    scene: *const SgScene,
    observed: *const f32,
    base_noisy: *const f64,
    q_noisy: *const f64,
    q_len: usize,
    sigma: f64,
    out: *mut f64,
) -> SgStatus {
    guard(|| {
        let c = &handle(c, "corrector")?.0;
        let s = &handle(scene, "scene")?.0;
        let m = mask(s, observed)?;
        let base = transform(base_noisy)?;
        let q = joints(s, q_noisy, q_len)?;
        let sigma = if sigma > 0.0 { sigma } else { default_sigma(s.camera.width) };
        let uncorrected = s.render_soft(&base, q, sigma)?;
        let th = c.infer(&CorrectorInput { observed: &m, uncorrected: &uncorrected, theta_noisy: parametrize(&base, q) })?;
        slice_mut(out, CORRECTION_DIM, "output")?.copy_from_slice(&th);
        Ok(())
    })
}

/// Gradient-descent correction of a frame from `init` (10 doubles).
/// `keypoints` holds 6 (x, y) pairs. Non-positive `max_iterations`,
/// `threshold` or `step` select the defaults. Writes the best parameters to
/// `out` and, when non-null, the iteration count and whether the threshold
/// was reached.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sg_baseline_optimize(
    scene: *const SgScene,
    init: *const f64,
    observed: *const f32,
    keypoints: *const f64,
    q_noisy: *const f64,
    q_len: usize,
    max_iterations: u32,
    threshold: f64,
    step: f64,
    out: *mut f64,
    out_iterations: *mut u32,
    out_converged: *mut bool,
) -> SgStatus {
    guard(|| {
        let s = &handle(scene, "scene")?.0;
        let init: [f64; CORRECTION_DIM] = slice(init, CORRECTION_DIM, "init")?.try_into().unwrap();
        let m = mask(s, observed)?;
        let kp: Vec<Keypoint2D> = slice(keypoints, 12, "keypoints")?.chunks(2).map(|p| Keypoint2D { x: p[0], y: p[1] }).collect();
        let q = joints(s, q_noisy, q_len)?;
        let d = BaselineConfig::for_image(s.camera.width, s.camera.height);
        let cfg = BaselineConfig {
            max_iterations: if max_iterations > 0 { max_iterations as usize } else { d.max_iterations },
            threshold: if threshold > 0.0 { threshold } else { d.threshold },
            step: if step > 0.0 { step } else { d.step },
            ..d
        };
        let r = optimize_frame(s, &init, &m, &kp, q, &cfg)?;
        slice_mut(out, CORRECTION_DIM, "output")?.copy_from_slice(&r.theta);
        if let Some(it) = out_iterations.as_mut() {
            *it = r.iterations;
        }
        if let Some(cv) = out_converged.as_mut() {
            *cv = r.converged;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests;
