use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ndistill::cache::write_container;
use ndistill::data::{gen_synthetic, Split, SyntheticSpec};
use ndistill::distill::{train_supervised, LrSchedule, TrainConfig};
use ndistill::network::{build_resnet, save_checkpoint, Model, Preset};
use ndistill::rng::{gaussian_sample, Rng};
use ndistill::tensor::Tensor;
use ndistill_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(nd_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn model() -> Model {
    let spec = build_resnet(
        Preset::MiniResnet8,
        &Preset::MiniResnet8.default_widths(),
        10,
        None,
    )
    .unwrap();
    let mut m = Model::init(spec, &mut Rng::new(4)).unwrap();
    // a couple of steps so the norms carry running statistics
    let data = gen_synthetic(
        &SyntheticSpec {
            n_per_class: 4,
            classes: 10,
            channels: 3,
            height: 12,
            width: 12,
            noise_level: 1.0,
        },
        Split::Train,
        0,
    )
    .unwrap();
    let cfg = TrainConfig {
        steps: 2,
        batch_size: 8,
        lr: LrSchedule::Constant { lr: 0.01 },
        momentum: 0.9,
        weight_decay: 0.0,
        augment_shift: 0,
    };
    train_supervised(&mut m, &data, &cfg, 0.0, &Rng::new(5)).unwrap();
    m
}

#[test]
fn model_roundtrip_and_forward_match_the_core() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ndck");
    let m = model();
    save_checkpoint(&m, &path).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { nd_model_load(cstr(&path).as_ptr(), &mut h) },
        NdStatus::Ok
    );
    unsafe {
        assert_eq!(nd_model_param_count(h), m.param_count() as u64);
        assert_eq!(nd_model_class_count(h), 10);
        assert_eq!(nd_model_neighbourhood_count(h), 3);
        let mut shape = [0u64; 3];
        assert_eq!(nd_model_input_shape(h, shape.as_mut_ptr()), NdStatus::Ok);
        assert_eq!(shape, [3, 12, 12]);
    }
    let x: Tensor = gaussian_sample(&mut Rng::new(1), &[2, 3, 12, 12], 0.0, 1.0);
    let want = m.forward(&x).unwrap();
    let mut got = vec![0f32; 20];
    let s = unsafe { nd_model_forward(h, x.data().as_ptr(), 2, got.as_mut_ptr(), 20) };
    assert_eq!(s, NdStatus::Ok);
    assert_eq!(got, want.data());
    let s = unsafe { nd_model_forward(h, x.data().as_ptr(), 2, got.as_mut_ptr(), 19) };
    assert_eq!(s, NdStatus::BufferTooSmall);
    assert!(last_error().contains("20"), "{}", last_error());

    let again = dir.path().join("again.ndck");
    assert_eq!(
        unsafe { nd_model_save(h, cstr(&again).as_ptr()) },
        NdStatus::Ok
    );
    assert_eq!(
        std::fs::read(&again).unwrap(),
        std::fs::read(&path).unwrap()
    );
    assert!(last_error().is_empty());
    unsafe { nd_model_free(h) };
}

#[test]
fn load_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = ptr::null_mut();
    let missing = dir.path().join("none.ndck");
    assert_eq!(
        unsafe { nd_model_load(cstr(&missing).as_ptr(), &mut h) },
        NdStatus::Io
    );
    let junk = dir.path().join("junk.ndck");
    std::fs::write(&junk, b"XXXX\x01\x00\x00\x00rest").unwrap();
    assert_eq!(
        unsafe { nd_model_load(cstr(&junk).as_ptr(), &mut h) },
        NdStatus::BadMagic
    );
    assert!(!last_error().is_empty());
    assert!(h.is_null());
    assert_eq!(
        unsafe { nd_model_load(ptr::null(), &mut h) },
        NdStatus::NullPointer
    );
    assert_eq!(
        unsafe { nd_model_load(cstr(&junk).as_ptr(), ptr::null_mut()) },
        NdStatus::NullPointer
    );
    assert_eq!(unsafe { nd_model_param_count(ptr::null()) }, 0);
    unsafe { nd_model_free(ptr::null_mut()) };
}

#[test]
fn cache_access_and_fingerprint_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b0.ndac");
    let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    write_container(&path, &t, 0xfeed).unwrap();
    let mut c = ptr::null_mut();
    let p = cstr(&path);
    assert_eq!(
        unsafe { nd_cache_open(p.as_ptr(), true, 0xbeef, &mut c) },
        NdStatus::FingerprintMismatch
    );
    assert_eq!(
        unsafe { nd_cache_open(p.as_ptr(), true, 0xfeed, &mut c) },
        NdStatus::Ok
    );
    unsafe {
        assert_eq!(nd_cache_fingerprint(c), 0xfeed);
        let mut rank = 0;
        assert_eq!(
            nd_cache_dims(c, ptr::null_mut(), 0, &mut rank),
            NdStatus::Ok
        );
        assert_eq!(rank, 2);
        let mut dims = [0u64; 2];
        assert_eq!(
            nd_cache_dims(c, dims.as_mut_ptr(), 1, &mut rank),
            NdStatus::BufferTooSmall
        );
        assert_eq!(
            nd_cache_dims(c, dims.as_mut_ptr(), 2, &mut rank),
            NdStatus::Ok
        );
        assert_eq!(dims, [2, 3]);
        let mut buf = [0f32; 6];
        assert_eq!(nd_cache_read(c, buf.as_mut_ptr(), 6), NdStatus::Ok);
        assert_eq!(&buf, t.data());
        nd_cache_free(c);
    }
    // version bump
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4] = 9;
    std::fs::write(&path, &bytes).unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(
        unsafe { nd_cache_open(p.as_ptr(), false, 0, &mut c) },
        NdStatus::VersionMismatch
    );
}

#[test]
fn pure_helpers() {
    assert_eq!(nd_sparsity_at_step(0.8, 10, 0, 0), 0.0);
    assert_eq!(nd_sparsity_at_step(0.8, 10, 0, 10), 0.8);
    assert_eq!(nd_sparsity_at_step(0.8, 10, 0, 50), 0.8);
    assert!((nd_sparsity_at_step(0.8, 10, 0, 5) - 0.8 * (1.0 - 0.125)).abs() < 1e-12);
    assert!(nd_sparsity_at_step(1.5, 10, 0, 5).is_nan());
    let sizes = [4u64, 4, 4];
    assert_eq!(unsafe { nd_search_space_size(sizes.as_ptr(), 3) }, 64);
    assert_eq!(unsafe { nd_search_space_size(ptr::null(), 0) }, 1);
    let big = [u64::MAX, 2];
    assert_eq!(unsafe { nd_search_space_size(big.as_ptr(), 2) }, u64::MAX);
    let v = unsafe { CStr::from_ptr(nd_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // tests/ffi-<hash> lives in <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("ndistill.h").exists());
    let lib = target_dir().join("libndistill_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler");
    assert!(status.success());
    let path = dir.path().join("m.ndck");
    let m = model();
    save_checkpoint(&m, &path).unwrap();
    let out = Command::new(&exe).arg(&path).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields[0], m.param_count().to_string());
    assert_eq!(fields[1], "10");
}
