use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ftcnkit::arch::{build_canonical_scaled, output_shape, CanonicalName};
use ftcnkit::model::{save_checkpoint, HeadConfig, Model};
use ftcnkit::Tensor;
use ftcnkit_ffi::*;

const INPUT: [usize; 4] = [3, 16, 32, 32];

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> Option<String> {
    let p = ftcn_last_error_message();
    if p.is_null() {
        return None;
    }
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { ftcn_string_free(p) };
    Some(s)
}

fn canonical(name: &str) -> *mut FtcnArch {
    let mut out = ptr::null_mut();
    let st = unsafe { ftcn_arch_canonical(c(name).as_ptr(), 16, INPUT.as_ptr(), &mut out) };
    assert_eq!(st, FtcnStatus::Ok, "{:?}", last_error());
    out
}

#[test]
fn arch_round_trip_through_text() {
    let r50 = canonical("r50");
    let mut ftcn = ptr::null_mut();
    assert_eq!(unsafe { ftcn_arch_transform(r50, c("ftcn").as_ptr(), &mut ftcn) }, FtcnStatus::Ok);
    assert!(last_error().is_none());

    let mut text = ptr::null_mut();
    assert_eq!(unsafe { ftcn_arch_render(ftcn, &mut text) }, FtcnStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { ftcn_arch_parse(text, &mut back) }, FtcnStatus::Ok);
    unsafe { ftcn_string_free(text) };

    let (mut a, mut b) = ([0usize; 4], [0usize; 4]);
    assert_eq!(unsafe { ftcn_arch_output_shape(ftcn, a.as_mut_ptr()) }, FtcnStatus::Ok);
    assert_eq!(unsafe { ftcn_arch_output_shape(back, b.as_mut_ptr()) }, FtcnStatus::Ok);
    assert_eq!(a, b);
    let expected = output_shape(&build_canonical_scaled(CanonicalName::Ftcn, 16, INPUT)).unwrap();
    assert_eq!(a, expected);

    let (mut pa, mut pb) = (0u64, 0u64);
    assert_eq!(unsafe { ftcn_arch_count_params(ftcn, &mut pa) }, FtcnStatus::Ok);
    assert_eq!(unsafe { ftcn_arch_count_params(back, &mut pb) }, FtcnStatus::Ok);
    assert_eq!(pa, pb);
    assert!(pa > 0);

    unsafe {
        ftcn_arch_free(back);
        ftcn_arch_free(ftcn);
        ftcn_arch_free(r50);
    }
}

#[test]
fn shapes_report_needed_capacity() {
    let arch = canonical("ftcn");
    let mut layers = 0usize;
    let st = unsafe { ftcn_arch_shapes(arch, ptr::null_mut(), 0, &mut layers) };
    assert_eq!(st, FtcnStatus::BufferTooSmall);
    assert!(layers > 0);
    assert!(last_error().unwrap().contains(&format!("{}", 4 * layers)));

    let mut buf = vec![0usize; 4 * layers];
    let st = unsafe { ftcn_arch_shapes(arch, buf.as_mut_ptr(), buf.len(), &mut layers) };
    assert_eq!(st, FtcnStatus::Ok);
    let mut out = [0usize; 4];
    unsafe { ftcn_arch_output_shape(arch, out.as_mut_ptr()) };
    assert_eq!(&buf[buf.len() - 4..], &out);
    unsafe { ftcn_arch_free(arch) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut out = ptr::null_mut();
    let st = unsafe { ftcn_arch_parse(c("input 3x4x8x8\nconv bogus").as_ptr(), &mut out) };
    assert_eq!(st, FtcnStatus::Parse);
    assert!(out.is_null());
    assert!(last_error().unwrap().starts_with("line "));

    let st = unsafe { ftcn_arch_canonical(c("vgg").as_ptr(), 1, ptr::null(), &mut out) };
    assert_eq!(st, FtcnStatus::InvalidArgument);
    let st = unsafe { ftcn_arch_canonical(c("ftcn").as_ptr(), 0, ptr::null(), &mut out) };
    assert_eq!(st, FtcnStatus::InvalidArgument);

    assert_eq!(unsafe { ftcn_arch_parse(ptr::null(), &mut out) }, FtcnStatus::NullPointer);
    let bad = [0xffu8, 0];
    assert_eq!(unsafe { ftcn_arch_parse(bad.as_ptr().cast(), &mut out) }, FtcnStatus::Utf8);

    let mut m = ptr::null_mut();
    let st = unsafe { ftcn_model_load(c("/nonexistent/ckpt").as_ptr(), &mut m) };
    assert_eq!(st, FtcnStatus::Io);

    unsafe {
        ftcn_arch_free(ptr::null_mut());
        ftcn_model_free(ptr::null_mut());
        ftcn_string_free(ptr::null_mut());
    }
}

#[test]
fn auc_and_schedule() {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    let mut a = 0.0;
    assert_eq!(unsafe { ftcn_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut a) }, FtcnStatus::Ok);
    assert_eq!(a, 0.75);
    let labels = [0u8, 0, 0, 0];
    assert_eq!(unsafe { ftcn_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut a) }, FtcnStatus::InvalidArgument);

    let mut lr = 0.0;
    assert_eq!(unsafe { ftcn_lr_schedule(0, 10, 100, 0.01, 0.1, &mut lr) }, FtcnStatus::Ok);
    assert!((lr - 0.01).abs() < 1e-12);
    assert_eq!(unsafe { ftcn_lr_schedule(10, 10, 100, 0.01, 0.1, &mut lr) }, FtcnStatus::Ok);
    assert!((lr - 0.1).abs() < 1e-12);
    assert_eq!(unsafe { ftcn_lr_schedule(55, 10, 100, 0.01, 0.1, &mut lr) }, FtcnStatus::Ok);
    assert!((lr - 0.05).abs() < 1e-12);
    assert_eq!(unsafe { ftcn_lr_schedule(101, 10, 100, 0.01, 0.1, &mut lr) }, FtcnStatus::InvalidArgument);
}

#[test]
fn model_predictions_match_library() {
    let arch = build_canonical_scaled(CanonicalName::Ftcn, 16, [3, 8, 16, 16]);
    let out = output_shape(&arch).unwrap();
    let model = Model::new(arch, HeadConfig::Linear { feature_dim: out[0] }, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&model, dir.path()).unwrap();

    let mut handle = ptr::null_mut();
    let path = c(dir.path().to_str().unwrap());
    assert_eq!(unsafe { ftcn_model_load(path.as_ptr(), &mut handle) }, FtcnStatus::Ok);
    let mut shape = [0usize; 4];
    assert_eq!(unsafe { ftcn_model_input_shape(handle, shape.as_mut_ptr()) }, FtcnStatus::Ok);
    assert_eq!(shape, [3, 8, 16, 16]);

    let n = 2;
    let clips = Tensor::from_fn(vec![n, 3, 8, 16, 16], |i| ((i * 7919) % 251) as f32 / 250.0);
    let mut probs = vec![0f32; n];
    let st = unsafe { ftcn_model_predict(handle, clips.data().as_ptr(), n, probs.as_mut_ptr()) };
    assert_eq!(st, FtcnStatus::Ok, "{:?}", last_error());
    assert_eq!(probs, model.predict(&clips).unwrap());
    unsafe { ftcn_model_free(handle) };
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let lib = target_dir().join("libftcnkit_ffi.a");
    if !lib.exists() {
        panic!("static library not built at {}", lib.display());
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap_or_else(|e| panic!("cannot run {cc}: {e}"));
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = String::from_utf8(run.stdout).unwrap();
    let expected = output_shape(&build_canonical_scaled(CanonicalName::Ftcn, 16, INPUT)).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    let shape: Vec<usize> = fields[..4].iter().map(|f| f.parse().unwrap()).collect();
    assert_eq!(shape, expected);
    assert_eq!(fields[5], "0.75");
}
