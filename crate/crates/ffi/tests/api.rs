use std::ffi::{CStr, CString};
use std::ptr;

use quomerge::bundle::write_bundle;
use quomerge::merge::{merge_bundles, MergeOptions};
use quomerge::synth::{regauge, synth_family, SynthConfig};
use quomerge_ffi::*;

fn family(dir: &std::path::Path, tasks: usize) -> Vec<CString> {
    let bundles = synth_family(&SynthConfig::uniform(2, 8, 2, tasks, 7)).unwrap();
    bundles
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let p = dir.join(format!("t{i}"));
            write_bundle(b, &p).unwrap();
            CString::new(p.to_str().unwrap()).unwrap()
        })
        .collect()
}

fn read(path: &CStr) -> *mut QmBundle {
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { qm_bundle_read(path.as_ptr(), &mut b) }, QmStatus::Ok);
    assert!(!b.is_null());
    b
}

fn last_error() -> String {
    let p = qm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(qm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn bundle_accessors() {
    let dir = tempfile::tempdir().unwrap();
    let paths = family(dir.path(), 1);
    let b = read(&paths[0]);
    unsafe {
        let mut n = 0;
        assert_eq!(qm_bundle_layer_count(b, &mut n), QmStatus::Ok);
        assert_eq!(n, 2);

        let mut needed = 0;
        let mut small = [0 as std::ffi::c_char; 3];
        assert_eq!(qm_bundle_layer_name(b, 0, small.as_mut_ptr(), small.len(), &mut needed), QmStatus::BufferTooSmall);
        assert_eq!(needed, "layer0".len() + 1);
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(qm_bundle_layer_name(b, 0, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), QmStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "layer0");

        let (mut d_out, mut d_in, mut r) = (0, 0, 0);
        assert_eq!(qm_bundle_layer_shape(b, 1, &mut d_out, &mut d_in, &mut r), QmStatus::Ok);
        assert_eq!((d_out, d_in, r), (8, 8, 2));

        let mut dense = vec![0.0; 64];
        assert_eq!(qm_bundle_layer_dense(b, 1, dense.as_mut_ptr(), dense.len()), QmStatus::Ok);
        assert!(dense.iter().any(|&x| x != 0.0));
        assert_eq!(qm_bundle_layer_dense(b, 1, dense.as_mut_ptr(), 63), QmStatus::BufferTooSmall);
        assert_eq!(qm_bundle_layer_dense(b, 5, dense.as_mut_ptr(), 64), QmStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));

        let out = dir.path().join("copy");
        let out_c = CString::new(out.to_str().unwrap()).unwrap();
        assert_eq!(qm_bundle_write(b, out_c.as_ptr()), QmStatus::Ok);
        let copy = read(&out_c);
        let mut dist = [f64::NAN; 2];
        assert_eq!(qm_bundle_distance(b, copy, false, dist.as_mut_ptr(), 2), QmStatus::Ok);
        assert!(dist.iter().all(|&d| d < 1e-9), "{dist:?}");
        qm_bundle_free(copy);
        qm_bundle_free(b);
    }
}

#[test]
fn merge_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let paths = family(dir.path(), 3);
    let handles: Vec<*const QmBundle> = paths.iter().map(|p| read(p) as *const _).collect();
    let weights = [0.5, 0.3, 0.2];
    let opts = qm_merge_options_default();
    let mut merged = ptr::null_mut();
    let status = unsafe { qm_merge(handles.as_ptr(), 3, weights.as_ptr(), &opts, &mut merged) };
    assert_eq!(status, QmStatus::Ok);

    let inputs = synth_family(&SynthConfig::uniform(2, 8, 2, 3, 7)).unwrap();
    let direct = merge_bundles(
        &inputs,
        &MergeOptions {
            weights: Some(weights.to_vec()),
            ..MergeOptions::default()
        },
    )
    .unwrap();
    let expected = direct.bundle.layers[0].to_dense();
    let mut got = vec![0.0; 64];
    unsafe {
        assert_eq!(qm_bundle_layer_dense(merged, 0, got.as_mut_ptr(), 64), QmStatus::Ok);
    }
    let err = got.iter().zip(expected.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-12, "{err}");

    unsafe {
        qm_bundle_free(merged);
        for h in handles {
            qm_bundle_free(h as *mut _);
        }
    }
}

#[test]
fn merge_errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let paths = family(dir.path(), 2);
    let a = read(&paths[0]);
    let other = synth_family(&SynthConfig::uniform(3, 8, 2, 1, 9)).unwrap();
    let p = dir.path().join("other");
    write_bundle(&other[0], &p).unwrap();
    let b = read(&CString::new(p.to_str().unwrap()).unwrap());
    let mut out = ptr::null_mut();
    unsafe {
        let pair = [a as *const _, b as *const _];
        assert_eq!(qm_merge(pair.as_ptr(), 2, ptr::null(), ptr::null(), &mut out), QmStatus::LayerMismatch);
        assert!(out.is_null());

        let bad = [0.7, 0.7];
        let pair = [a as *const _, a as *const _];
        assert_eq!(qm_merge(pair.as_ptr(), 2, bad.as_ptr(), ptr::null(), &mut out), QmStatus::InvalidArgument);

        let mut opts = qm_merge_options_default();
        opts.max_iter = 1;
        opts.tol = 1e-300;
        let two = [a as *const _, read(&paths[1]) as *const _];
        assert_eq!(qm_merge(two.as_ptr(), 2, ptr::null(), &opts, &mut out), QmStatus::NotConverged);
        assert!(last_error().contains("did not converge"));
        opts.allow_nonconverged = true;
        assert_eq!(qm_merge(two.as_ptr(), 2, ptr::null(), &opts, &mut out), QmStatus::Ok);
        assert!(qm_last_error().is_null());
        qm_bundle_free(out);
        qm_bundle_free(two[1] as *mut _);

        let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(qm_bundle_read(missing.as_ptr(), &mut h), QmStatus::Io);
        assert_eq!(qm_bundle_read(ptr::null(), &mut h), QmStatus::NullPointer);
        assert_eq!(qm_bundle_layer_count(ptr::null(), ptr::null_mut()), QmStatus::NullPointer);

        qm_bundle_free(a);
        qm_bundle_free(b);
        qm_bundle_free(ptr::null_mut());
    }
}

#[test]
fn regauged_bundle_is_at_distance_zero() {
    let dir = tempfile::tempdir().unwrap();
    let bundles = synth_family(&SynthConfig::uniform(2, 8, 2, 1, 3)).unwrap();
    let pa = dir.path().join("a");
    let pb = dir.path().join("b");
    write_bundle(&bundles[0], &pa).unwrap();
    write_bundle(&regauge(&bundles[0], 11).unwrap(), &pb).unwrap();
    let a = read(&CString::new(pa.to_str().unwrap()).unwrap());
    let b = read(&CString::new(pb.to_str().unwrap()).unwrap());
    let mut d = [1.0; 2];
    unsafe {
        assert_eq!(qm_bundle_distance(a, b, true, d.as_mut_ptr(), 2), QmStatus::Ok);
        qm_bundle_free(a);
        qm_bundle_free(b);
    }
    assert!(d.iter().all(|&x| x < 1e-6), "{d:?}");
}

#[test]
fn points_and_frechet_mean() {
    // G Hᵀ and (G A)(H A⁻ᵀ)ᵀ are the same update.
    let g = [1.0, 0.0, 0.0, 2.0, 1.0, 1.0];
    let h = [3.0, 0.0, 0.0, 1.0, 0.5, 0.5, 1.0, -1.0];
    let a = [2.0, 1.0, 0.0, 1.0];
    let ainv_t = [0.5, 0.0, -0.5, 1.0];
    let mm = |x: &[f64], rows: usize, m: &[f64; 4]| -> Vec<f64> {
        (0..rows)
            .flat_map(|i| (0..2).map(move |j| x[2 * i] * m[j] + x[2 * i + 1] * m[2 + j]))
            .collect()
    };
    let g2 = mm(&g, 3, &a);
    let h2 = mm(&h, 4, &ainv_t);
    unsafe {
        let mut p = ptr::null_mut();
        let mut q = ptr::null_mut();
        assert_eq!(qm_point_from_lowrank(g.as_ptr(), 3, h.as_ptr(), 4, 2, &mut p), QmStatus::Ok);
        assert_eq!(qm_point_from_lowrank(g2.as_ptr(), 3, h2.as_ptr(), 4, 2, &mut q), QmStatus::Ok);

        let (mut d_out, mut d_in, mut r) = (0, 0, 0);
        assert_eq!(qm_point_shape(p, &mut d_out, &mut d_in, &mut r), QmStatus::Ok);
        assert_eq!((d_out, d_in, r), (3, 4, 2));

        let mut dense = [0.0; 12];
        assert_eq!(qm_point_dense(p, dense.as_mut_ptr(), 12), QmStatus::Ok);
        for i in 0..3 {
            for j in 0..4 {
                let want = g[2 * i] * h[2 * j] + g[2 * i + 1] * h[2 * j + 1];
                assert!((dense[4 * i + j] - want).abs() < 1e-12);
            }
        }

        let mut d = 1.0;
        assert_eq!(qm_point_distance(p, q, &mut d), QmStatus::Ok);
        assert!(d < 1e-7, "{d}");

        let pts = [p as *const _, q as *const _];
        let mut mean = ptr::null_mut();
        let mut iters = 0;
        assert_eq!(qm_frechet_mean(pts.as_ptr(), 2, ptr::null(), &mut iters, &mut mean), QmStatus::Ok);
        assert!(iters >= 1);
        assert_eq!(qm_point_distance(mean, p, &mut d), QmStatus::Ok);
        assert!(d < 1e-6, "{d}");

        let rank_deficient = [0.0; 6];
        let mut bad = ptr::null_mut();
        assert_ne!(qm_point_from_lowrank(rank_deficient.as_ptr(), 3, h.as_ptr(), 4, 2, &mut bad), QmStatus::Ok);
        assert!(bad.is_null());
        assert_eq!(qm_frechet_mean(pts.as_ptr(), 0, ptr::null(), ptr::null_mut(), &mut mean), QmStatus::InvalidArgument);

        qm_point_free(mean);
        qm_point_free(p);
        qm_point_free(q);
    }
}
