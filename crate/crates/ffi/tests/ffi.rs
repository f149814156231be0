use std::ffi::{CStr, CString};
use std::ptr;

use ip2rsnn_ffi::*;

fn last_error() -> String {
    let p = ip2_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn task_round_trip() {
    let fam = CString::new("CD-DMS").unwrap();
    let mut task = ptr::null_mut();
    assert_eq!(unsafe { ip2_task_generate(fam.as_ptr(), 2, 5, 20.0, &mut task) }, Ip2Status::Ok);
    let (mut n, mut steps, mut din, mut dout) = (0, 0, 0, 0);
    assert_eq!(unsafe { ip2_task_dims(task, &mut n, &mut steps, &mut din, &mut dout) }, Ip2Status::Ok);
    assert_eq!(n, 4);
    let mut x = vec![0.0; steps * din];
    let mut y = vec![0.0; steps * dout];
    let st = unsafe { ip2_task_copy_trial(task, 0, x.as_mut_ptr(), x.len(), y.as_mut_ptr(), y.len()) };
    assert_eq!(st, Ip2Status::Ok);
    // fixation channel is on at the first step
    assert_eq!(x[din - 1], 1.0);
    let st = unsafe { ip2_task_copy_trial(task, 0, x.as_mut_ptr(), 1, y.as_mut_ptr(), y.len()) };
    assert_eq!(st, Ip2Status::BufferTooSmall);
    let st = unsafe { ip2_task_copy_trial(task, 9, x.as_mut_ptr(), x.len(), y.as_mut_ptr(), y.len()) };
    assert_eq!(st, Ip2Status::InvalidArgument);
    unsafe { ip2_task_free(task) };
}

#[test]
fn errors_are_reported() {
    let bad = CString::new("XYZ").unwrap();
    let mut task = ptr::null_mut();
    assert_eq!(unsafe { ip2_task_generate(bad.as_ptr(), 0, 0, 20.0, &mut task) }, Ip2Status::InvalidArgument);
    assert!(task.is_null());
    assert!(last_error().contains("XYZ"));
    assert_eq!(unsafe { ip2_task_generate(ptr::null(), 0, 0, 20.0, &mut task) }, Ip2Status::NullPointer);

    let missing = CString::new("/nonexistent/model.ip2t").unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { ip2_network_load(missing.as_ptr(), &mut net) }, Ip2Status::Io);
    assert!(net.is_null());
    unsafe { ip2_network_free(ptr::null_mut()) };
}

#[test]
fn masks() {
    let mut bits = [9u8; 3];
    for (name, want) in [("DMS", [1, 0, 0]), ("CD-DMS", [1, 0, 1]), ("GNG-DR-2", [1, 1, 0]), ("GNG-DR-4", [1, 1, 1])] {
        let f = CString::new(name).unwrap();
        assert_eq!(unsafe { ip2_mask_for_family(f.as_ptr(), bits.as_mut_ptr()) }, Ip2Status::Ok);
        assert_eq!(bits, want, "{name}");
    }
}

#[test]
fn two_triangles() {
    let mut a = vec![0.0; 36];
    for i in 0..6 {
        for j in 0..6 {
            if i != j && i / 3 == j / 3 {
                a[i * 6 + j] = 1.0;
            }
        }
    }
    let mut labels = [0usize; 6];
    let mut q = 0.0;
    let st = unsafe { ip2_louvain(a.as_ptr(), 1, 6, 1.0, 0.0, 3, labels.as_mut_ptr(), 6, &mut q) };
    assert_eq!(st, Ip2Status::Ok);
    assert!((q - 0.5).abs() < 1e-12);
    assert_eq!(labels[0], labels[2]);
    assert_ne!(labels[0], labels[3]);

    let split = [0usize, 0, 0, 1, 1, 1];
    let mut q2 = 0.0;
    assert_eq!(unsafe { ip2_modularity(a.as_ptr(), 1, 6, 1.0, 0.0, split.as_ptr(), &mut q2) }, Ip2Status::Ok);
    assert!((q2 - 0.5).abs() < 1e-12);
    let st = unsafe { ip2_louvain(a.as_ptr(), 1, 6, 1.0, 0.0, 3, labels.as_mut_ptr(), 5, &mut q) };
    assert_eq!(st, Ip2Status::BufferTooSmall);
}

#[test]
fn header_declares_every_entry_point() {
    let h = include_str!("../include/ip2rsnn.h");
    for f in [
        "ip2_last_error", "ip2_version", "ip2_network_load", "ip2_network_dims", "ip2_network_forward",
        "ip2_network_free", "ip2_task_generate", "ip2_task_dims", "ip2_task_copy_trial", "ip2_task_free",
        "ip2_mask_for_family", "ip2_modularity", "ip2_louvain",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f}");
    }
    let v = unsafe { CStr::from_ptr(ip2_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn forward_matches_rust() {
    use ip2rsnn::harness::{ExperimentConfig, Model};
    use ip2rsnn::snn::ForwardOptions;
    use ip2rsnn::tasks::{self, TaskFamily};

    let mut cfg = ExperimentConfig::for_family(TaskFamily::GngDr2);
    cfg.network.n_neurons = 10;
    cfg.network.dt_ms = 50.0;
    let model = Model::new(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ip2t");
    model.save(&path).unwrap();
    let task = tasks::generate(TaskFamily::GngDr2, 0, &cfg.schedule().unwrap(), 1).unwrap();
    let x = &task.trials[0].input;
    let want = model.forward(x, &ForwardOptions::noiseless()).unwrap().output;

    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { ip2_network_load(c.as_ptr(), &mut net) }, Ip2Status::Ok, "{}", last_error());
    let (mut n, mut din, mut dout) = (0, 0, 0);
    assert_eq!(unsafe { ip2_network_dims(net, &mut n, &mut din, &mut dout) }, Ip2Status::Ok);
    assert_eq!((n, din), (10, x.cols()));
    let (steps, _) = x.shape();
    let mut y = vec![0.0; steps * dout];
    let st = unsafe { ip2_network_forward(net, x.as_slice().as_ptr(), steps, din, y.as_mut_ptr(), y.len()) };
    assert_eq!(st, Ip2Status::Ok);
    assert_eq!(y, want.as_slice());
    let st = unsafe { ip2_network_forward(net, x.as_slice().as_ptr(), steps, din + 1, y.as_mut_ptr(), y.len()) };
    assert_ne!(st, Ip2Status::Ok);
    unsafe { ip2_network_free(net) };
}
