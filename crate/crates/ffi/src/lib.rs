//! C ABI over the simulator, task generators and modularity tools.
//!
//! Handles are opaque and owned by the caller until passed to the matching
//! `*_free`. Every function returns an [`Ip2Status`]; on failure
//! [`ip2_last_error`] describes the problem for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use ip2rsnn::analysis::{louvain_optimize, modularity_q, CommunityAssignment, LayeredNetwork};
use ip2rsnn::harness::Model;
use ip2rsnn::plasticity::mask_for_family;
use ip2rsnn::snn::ForwardOptions;
use ip2rsnn::tasks::{self, PeriodSchedule, TaskFamily, TaskInstance};
use ip2rsnn::tensor::Matrix;
use ip2rsnn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ip2Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    Config = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A trained network loaded from a checkpoint.
pub struct Ip2Network {
    model: Model,
}

/// A generated task: a fixed set of trials.
pub struct Ip2Task {
    task: TaskInstance,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> Ip2Status {
    match e {
        Error::Shape { .. } => Ip2Status::ShapeMismatch,
        Error::InvalidArgument(_) | Error::UnknownFamily(_) | Error::NonFiniteGradient(_) => Ip2Status::InvalidArgument,
        Error::Config(_) => Ip2Status::Config,
        Error::Format(_) => Ip2Status::Format,
        Error::Io { .. } => Ip2Status::Io,
    }
}

struct Fail(Ip2Status, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type FfiResult = Result<(), Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> Ip2Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Ip2Status::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            Ip2Status::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(Ip2Status::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(Ip2Status::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len < need {
        return Err(Fail(Ip2Status::BufferTooSmall, format!("`{what}` holds {len}, needs {need}")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Message for the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ip2_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ip2_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- networks ----

/// Loads a checkpoint written by the trainer.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ip2_network_load(path: *const c_char, out: *mut *mut Ip2Network) -> Ip2Status {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = Model::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(Ip2Network { model }));
        Ok(())
    })
}

/// Reports neuron count and input/output widths.
///
/// # Safety
/// `net` must come from `ip2_network_load`; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ip2_network_dims(
    net: *const Ip2Network,
    n_neurons: *mut usize,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> Ip2Status {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let w = &net.model.weights;
        *out_arg(n_neurons, "n_neurons")? = w.n_neurons();
        *out_arg(input_dim, "input_dim")? = w.n_inputs();
        *out_arg(output_dim, "output_dim")? = w.n_outputs();
        Ok(())
    })
}

/// Runs one noise-free trial. `input` is row-major `steps x input_dim`;
/// `output` receives row-major `steps x output_dim`.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ip2_network_forward(
    net: *const Ip2Network,
    input: *const f64,
    steps: usize,
    input_dim: usize,
    output: *mut f64,
    output_len: usize,
) -> Ip2Status {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let n_out = net.model.weights.n_outputs();
        let data = in_slice(input, steps * input_dim, "input")?;
        let out = out_slice(output, output_len, steps * n_out, "output")?;
        let x = Matrix::from_vec(steps, input_dim, data.to_vec())?;
        let rec = net.model.forward(&x, &ForwardOptions::noiseless())?;
        out[..steps * n_out].copy_from_slice(rec.output.as_slice());
        Ok(())
    })
}

/// # Safety
/// `net` must come from `ip2_network_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ip2_network_free(net: *mut Ip2Network) {
    if !net.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(net))));
    }
}

// ---- tasks ----

fn family(name: &str) -> Result<TaskFamily, Fail> {
    name.parse::<TaskFamily>().map_err(Fail::from)
}

/// Generates task `index` of a family, e.g. `"DMS"` or `"GNG-DR-2"`.
///
/// # Safety
/// `family_name` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ip2_task_generate(
    family_name: *const c_char,
    index: u64,
    seed: u64,
    dt_ms: f64,
    out: *mut *mut Ip2Task,
) -> Ip2Status {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let f = family(str_arg(family_name, "family_name")?)?;
        let schedule = PeriodSchedule::from_dt(dt_ms)?;
        let task = tasks::generate(f, index, &schedule, seed)?;
        *out = Box::into_raw(Box::new(Ip2Task { task }));
        Ok(())
    })
}

/// # Safety
/// `task` must come from `ip2_task_generate`; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ip2_task_dims(
    task: *const Ip2Task,
    n_trials: *mut usize,
    steps: *mut usize,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> Ip2Status {
    guard(|| {
        let t = &task.as_ref().ok_or_else(|| null("task"))?.task;
        let spec = t.spec();
        *out_arg(n_trials, "n_trials")? = t.trials.len();
        *out_arg(steps, "steps")? = t.schedule.total();
        *out_arg(input_dim, "input_dim")? = spec.input_dim();
        *out_arg(output_dim, "output_dim")? = spec.output_dim();
        Ok(())
    })
}

/// Copies trial `trial`'s input and target, both row-major.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ip2_task_copy_trial(
    task: *const Ip2Task,
    trial: usize,
    input: *mut f64,
    input_len: usize,
    target: *mut f64,
    target_len: usize,
) -> Ip2Status {
    guard(|| {
        let t = &task.as_ref().ok_or_else(|| null("task"))?.task;
        let tr = t.trials.get(trial).ok_or_else(|| {
            Fail(Ip2Status::InvalidArgument, format!("trial {trial} of {}", t.trials.len()))
        })?;
        let x = out_slice(input, input_len, tr.input.len(), "input")?;
        x[..tr.input.len()].copy_from_slice(tr.input.as_slice());
        let y = out_slice(target, target_len, tr.target.len(), "target")?;
        y[..tr.target.len()].copy_from_slice(tr.target.as_slice());
        Ok(())
    })
}

/// # Safety
/// `task` must come from `ip2_task_generate` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ip2_task_free(task: *mut Ip2Task) {
    if !task.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(task))));
    }
}

/// Learnability of (tau_d, tau_s, theta) for a family as three 0/1 bytes.
///
/// # Safety
/// `family_name` must be NUL-terminated; `bits` must hold three bytes.
#[no_mangle]
pub unsafe extern "C" fn ip2_mask_for_family(family_name: *const c_char, bits: *mut u8) -> Ip2Status {
    guard(|| {
        let f = family(str_arg(family_name, "family_name")?)?;
        let out = out_slice(bits, 3, 3, "bits")?;
        out.copy_from_slice(&mask_for_family(f).bits());
        Ok(())
    })
}

// ---- modularity ----

unsafe fn layered(
    adjacency: *const f64,
    n_layers: usize,
    n_nodes: usize,
    gamma: f64,
    coupling: f64,
) -> Result<LayeredNetwork, Fail> {
    if n_layers == 0 || n_nodes == 0 {
        return Err(Fail(Ip2Status::InvalidArgument, "empty multilayer network".into()));
    }
    let data = in_slice(adjacency, n_layers * n_nodes * n_nodes, "adjacency")?;
    let layers = data
        .chunks(n_nodes * n_nodes)
        .map(|c| Matrix::from_vec(n_nodes, n_nodes, c.to_vec()))
        .collect::<ip2rsnn::Result<Vec<_>>>()?;
    Ok(LayeredNetwork::new(layers, gamma, coupling)?)
}

/// Multilayer modularity of a labeling. `adjacency` is `n_layers` row-major
/// `n_nodes x n_nodes` blocks; `labels` is `n_layers x n_nodes`.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ip2_modularity(
    adjacency: *const f64,
    n_layers: usize,
    n_nodes: usize,
    gamma: f64,
    coupling: f64,
    labels: *const usize,
    q: *mut f64,
) -> Ip2Status {
    guard(|| {
        let net = layered(adjacency, n_layers, n_nodes, gamma, coupling)?;
        let flat = in_slice(labels, n_layers * n_nodes, "labels")?;
        let asg = CommunityAssignment {
            labels: flat.chunks(n_nodes).map(<[usize]>::to_vec).collect(),
        };
        *out_arg(q, "q")? = modularity_q(&net, &asg)?;
        Ok(())
    })
}

/// Generalized Louvain. Writes `n_layers x n_nodes` labels and the
/// resulting modularity.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ip2_louvain(
    adjacency: *const f64,
    n_layers: usize,
    n_nodes: usize,
    gamma: f64,
    coupling: f64,
    seed: u64,
    labels: *mut usize,
    labels_len: usize,
    q: *mut f64,
) -> Ip2Status {
    guard(|| {
        let net = layered(adjacency, n_layers, n_nodes, gamma, coupling)?;
        let out = out_slice(labels, labels_len, n_layers * n_nodes, "labels")?;
        let q = out_arg(q, "q")?;
        let asg = louvain_optimize(&net, seed)?;
        for (dst, src) in out.iter_mut().zip(asg.labels.concat()) {
            *dst = src;
        }
        *q = modularity_q(&net, &asg)?;
        Ok(())
    })
}
