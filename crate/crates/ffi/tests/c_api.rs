use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use comil::hmm::{HmmPrior, Observations, VariationalHmm};
use comil::mdp::ExpertTeam;
use comil::pursuit::{GridPos, Move, WorldState};
use comil::rng;
use comil_ffi::*;

fn last_error() -> String {
    let p = comil_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Two states with opposite preferences over a 3-symbol alphabet and sticky
/// transitions.
fn sticky_model() -> VariationalHmm {
    let seeds = [
        Observations::Symbols(vec![0; 40]),
        Observations::Symbols(vec![2; 40]),
    ];
    let mut model = VariationalHmm::seeded(
        2,
        &HmmPrior::categorical(3),
        &seeds,
        1.0,
        &mut rng::stream(1, 0),
    )
    .unwrap();
    model.trans = vec![vec![50.0, 1.0], vec![1.0, 50.0]];
    model
}

fn load(model: &VariationalHmm) -> *mut ComilHmm {
    let json = CString::new(model.to_json().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { comil_hmm_from_json(json.as_ptr(), &mut handle) },
        COMIL_OK
    );
    assert!(!handle.is_null());
    handle
}

#[test]
fn hungarian_solves_a_small_matrix() {
    let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
    let mut perm = [0usize; 3];
    let mut total = 0.0;
    assert_eq!(
        unsafe { comil_hungarian(cost.as_ptr(), 3, perm.as_mut_ptr(), &mut total) },
        COMIL_OK
    );
    assert_eq!(perm, [1, 0, 2]);
    assert_eq!(total, 5.0);
}

#[test]
fn hungarian_rejects_bad_input() {
    let mut perm = [0usize; 2];
    assert_eq!(
        unsafe { comil_hungarian(ptr::null(), 2, perm.as_mut_ptr(), ptr::null_mut()) },
        COMIL_NULL_POINTER
    );
    assert!(last_error().contains("cost"));
    let cost = [0.0, f64::NAN, 1.0, 1.0];
    assert_eq!(
        unsafe { comil_hungarian(cost.as_ptr(), 2, perm.as_mut_ptr(), ptr::null_mut()) },
        COMIL_INVALID_ARGUMENT
    );
    assert_eq!(
        unsafe { comil_hungarian(cost.as_ptr(), 0, perm.as_mut_ptr(), ptr::null_mut()) },
        COMIL_INVALID_ARGUMENT
    );
}

#[test]
fn hmm_round_trips_and_decodes() {
    let model = sticky_model();
    let h = load(&model);
    assert_eq!(unsafe { comil_hmm_num_states(h) }, 2);
    let xs = [0usize, 0, 0, 2, 2, 2];
    let mut states = [9usize; 6];
    assert_eq!(
        unsafe { comil_hmm_viterbi(h, xs.as_ptr(), xs.len(), states.as_mut_ptr()) },
        COMIL_OK
    );
    assert_eq!(states, [0, 0, 0, 1, 1, 1]);

    let bad = [0usize, 7];
    assert_eq!(
        unsafe { comil_hmm_viterbi(h, bad.as_ptr(), 2, states.as_mut_ptr()) },
        COMIL_INVALID_ARGUMENT
    );
    assert!(!last_error().is_empty());
    // A categorical model cannot decode vectors.
    let v = [0.0, 1.0];
    assert_ne!(
        unsafe { comil_hmm_viterbi_vectors(h, v.as_ptr(), 1, 2, states.as_mut_ptr()) },
        COMIL_OK
    );
    unsafe { comil_hmm_free(h) };
}

#[test]
fn assignment_orders_sequences_by_role() {
    let h = load(&sticky_model());
    // Sequence 0 looks like state 1, sequence 1 like state 0.
    let symbols = [2usize, 2, 2, 2, 0, 0, 0, 0];
    let mut order = [9usize; 2];
    let mut entropy = f64::NAN;
    assert_eq!(
        unsafe {
            comil_hmm_assign_categorical(
                h,
                symbols.as_ptr(),
                2,
                4,
                order.as_mut_ptr(),
                &mut entropy,
            )
        },
        COMIL_OK
    );
    assert_eq!(order, [1, 0]);
    assert!(entropy.is_finite());
    assert_eq!(
        unsafe {
            comil_hmm_assign_categorical(
                h,
                symbols.as_ptr(),
                3,
                2,
                order.as_mut_ptr(),
                ptr::null_mut(),
            )
        },
        COMIL_INVALID_ARGUMENT
    );
    unsafe { comil_hmm_free(h) };
}

#[test]
fn malformed_json_is_a_parse_error() {
    let text = CString::new("{ not json").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { comil_hmm_from_json(text.as_ptr(), &mut h) },
        COMIL_PARSE_ERROR
    );
    assert!(h.is_null());
    assert!(last_error().contains("hmm"));
}

#[test]
fn null_handles_are_tolerated() {
    unsafe {
        comil_hmm_free(ptr::null_mut());
        comil_experts_free(ptr::null_mut());
        assert_eq!(comil_hmm_num_states(ptr::null()), 0);
        let mut s = [0usize; 1];
        assert_eq!(
            comil_hmm_viterbi(ptr::null(), [0usize].as_ptr(), 1, s.as_mut_ptr()),
            COMIL_NULL_POINTER
        );
    }
}

#[test]
fn experts_match_the_library() {
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { comil_experts_new(10, 0.95, &mut e) }, COMIL_OK);
    let team = ExpertTeam::surround(10, 0.95).unwrap();
    let cells = [1, 1, 8, 2, 5, 9, 0, 6, 4, 4];
    let world = WorldState::new(
        cells[..8]
            .chunks(2)
            .map(|c| GridPos::new(c[0], c[1]))
            .collect(),
        GridPos::new(4, 4),
        10,
    )
    .unwrap();
    for role in 0..4 {
        for predator in 0..4 {
            let mut m = u8::MAX;
            assert_eq!(
                unsafe { comil_experts_action(e, role, cells.as_ptr(), 4, predator, &mut m) },
                COMIL_OK
            );
            assert_eq!(
                Move::from_index(m as usize),
                Some(team.action(role, &world, predator))
            );
        }
    }
    let mut m = 0u8;
    assert_eq!(
        unsafe { comil_experts_action(e, 4, cells.as_ptr(), 4, 0, &mut m) },
        COMIL_INVALID_ARGUMENT
    );
    // Two predators on one cell.
    let clash = [1, 1, 1, 1, 5, 9, 0, 6, 4, 4];
    assert_eq!(
        unsafe { comil_experts_action(e, 0, clash.as_ptr(), 4, 0, &mut m) },
        COMIL_INVALID_ARGUMENT
    );
    unsafe { comil_experts_free(e) };
    assert_eq!(
        unsafe { comil_experts_new(2, 0.95, &mut e) },
        COMIL_INVALID_ARGUMENT
    );
    assert_eq!(
        unsafe { comil_experts_new(10, 1.5, &mut e) },
        COMIL_INVALID_ARGUMENT
    );
}

#[test]
fn header_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/comil.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "comil_hungarian",
        "comil_hmm_from_json",
        "comil_experts_action",
        "comil_last_error_message",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(cc) = which_cc() else { return };
    let src = tempfile_c(
        "#include \"comil.h\"\n\
         int main(void) { ComilHmm *h = 0; size_t perm[2]; double c[4] = {0};\n\
         int s = comil_hungarian(c, 2, perm, 0); comil_hmm_free(h); return s == COMIL_OK ? 0 : 1; }\n",
    );
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .ok_or(())
}

fn tempfile_c(body: &str) -> std::path::PathBuf {
    let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join("header_check.c");
    std::fs::write(&path, body).unwrap();
    path
}
