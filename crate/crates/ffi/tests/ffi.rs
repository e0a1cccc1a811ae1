use std::ffi::{c_char, CString};
use std::ptr;

use scalelink_ffi::*;

const BANK: &str = "\
id,format,model_family,K,a1,a2,a3,d,c,delta1,delta2,anchor
M1,MC,SimpleStructure,2,1.2,0,,0.3,0.2,,,1
M2,MC,SimpleStructure,2,0.8,0,,-0.5,0.15,,,1
M3,MC,SimpleStructure,2,1.5,0,,1.1,0.1,,,1
M4,MC,SimpleStructure,2,1.0,0,,-1.2,0.25,,,1
C1,CR,SimpleStructure,3,0,1.1,,,,-0.4,0.6,1
C2,CR,SimpleStructure,3,0,0.9,,,,-1.0,0.2,1
";

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { slk_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&b| b as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn form(text: &str) -> *mut SlkForm {
    let text = CString::new(text).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { slk_form_from_csv_text(text.as_ptr(), &mut out) };
    assert_eq!(status, SlkStatus::Ok, "{}", last_error());
    out
}

#[test]
fn identical_banks_link_to_identity() {
    let base = form(BANK);
    let new = form(BANK);
    unsafe {
        assert_eq!(slk_form_len(base), 6);
        assert_eq!(slk_form_dim(base), 2);
        let mut result = ptr::null_mut();
        assert_eq!(slk_link_estimate(base, new, SlkScenario::McCr, &mut result), SlkStatus::Ok);
        assert_eq!(slk_link_result_dim(result), 2);
        let mut a = [0.0; 4];
        let mut b = [0.0; 2];
        assert_eq!(slk_link_result_matrix(result, a.as_mut_ptr(), 4), SlkStatus::Ok);
        assert_eq!(slk_link_result_location(result, b.as_mut_ptr(), 2), SlkStatus::Ok);
        for (got, want) in a.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-3, "{a:?}");
        }
        assert!(b.iter().all(|v| v.abs() < 1e-3), "{b:?}");
        assert!(slk_link_result_loss(result) < 1e-10);
        assert!(slk_link_result_converged(result));

        assert_eq!(slk_link_result_matrix(result, a.as_mut_ptr(), 3), SlkStatus::InvalidArgument);
        assert!(last_error().contains("4 needed"), "{}", last_error());

        slk_link_result_free(result);
        slk_form_free(base);
        slk_form_free(new);
    }
}

#[test]
fn null_handles_and_paths() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(slk_form_from_csv(ptr::null(), &mut out), SlkStatus::NullPointer);
        assert!(last_error().contains("path"));
        assert_eq!(slk_form_len(ptr::null()), 0);
        assert!(slk_link_result_loss(ptr::null()).is_nan());
        slk_form_free(ptr::null_mut());
        slk_link_result_free(ptr::null_mut());

        let missing = CString::new("/nonexistent/bank.csv").unwrap();
        assert_eq!(slk_form_from_csv(missing.as_ptr(), &mut out), SlkStatus::Io);
        assert!(out.is_null());
    }
}

#[test]
fn parse_errors_map_to_parse_status() {
    let text = CString::new("id,format\nX,MC\n").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { slk_form_from_csv_text(text.as_ptr(), &mut out) }, SlkStatus::Parse);
    assert!(last_error().contains("missing column"), "{}", last_error());
}

#[test]
fn mc_only_without_mc_anchors_is_rejected() {
    let cr_only: String = BANK.lines().filter(|l| !l.starts_with('M')).collect::<Vec<_>>().join("\n");
    let base = form(&cr_only);
    unsafe {
        let mut result = ptr::null_mut();
        let status = slk_link_estimate(base, base, SlkScenario::McOnly, &mut result);
        assert_ne!(status, SlkStatus::Ok);
        assert!(result.is_null());
        assert!(last_error().contains("MC anchor"), "{}", last_error());
        slk_form_free(base);
    }
}

#[test]
fn response_probabilities() {
    let mut p = 0.0;
    let a = [1.0];
    let theta = [0.0];
    let status = unsafe { slk_prob_3pl(SlkFamily::Uirt, a.as_ptr(), theta.as_ptr(), 1, 0.0, 0.2, &mut p) };
    assert_eq!(status, SlkStatus::Ok);
    assert!((p - 0.6).abs() < 1e-15);

    let deltas = [-0.5, 0.5];
    let mut probs = [0.0; 3];
    let status = unsafe {
        slk_prob_gpc(SlkFamily::Uirt, a.as_ptr(), theta.as_ptr(), 1, deltas.as_ptr(), 2, probs.as_mut_ptr(), 3)
    };
    assert_eq!(status, SlkStatus::Ok);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((probs[0] - probs[2]).abs() < 1e-12);

    // CR loading on the MC dimension violates the simple-structure mask.
    let a2 = [1.0, 0.5];
    let theta2 = [0.0, 0.0];
    let status = unsafe {
        slk_prob_gpc(SlkFamily::SimpleStructure, a2.as_ptr(), theta2.as_ptr(), 2, deltas.as_ptr(), 2, probs.as_mut_ptr(), 3)
    };
    assert_eq!(status, SlkStatus::InvalidArgument);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/scalelink.h")).unwrap();
    for name in [
        "typedef struct SlkForm SlkForm",
        "typedef struct SlkLinkResult SlkLinkResult",
        "SLK_STATUS_PANIC = 7",
        "slk_form_from_csv(",
        "slk_link_estimate(",
        "slk_link_result_matrix(",
        "slk_prob_gpc(",
        "slk_last_error_message(",
    ] {
        assert!(header.contains(name), "header lacks `{name}`");
    }
}
