use std::ffi::CString;
use std::ptr;

use rbf_pearl_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { rp_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take(n.min(255)).map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn rbf_handle_round_trip() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(rp_rbf_new(2, 5, -5.0, 5.0, false, &mut h), RpStatus::Ok);
        assert_eq!(rp_rbf_output_dim(h), 10);
        let z = [-5.0, 2.5];
        let mut out = [0.0; 10];
        assert_eq!(rp_rbf_forward(h, z.as_ptr(), 2, out.as_mut_ptr(), 10), RpStatus::Ok);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[5 + 3], 1.0);
        assert!(out.iter().all(|&v| v > 0.0 && v <= 1.0));

        let mut short = [0.0; 4];
        assert_eq!(rp_rbf_forward(h, z.as_ptr(), 2, short.as_mut_ptr(), 4), RpStatus::Shape);
        assert!(last_error().contains("rbf output"));
        assert_eq!(rp_rbf_forward(h, z.as_ptr(), 3, out.as_mut_ptr(), 10), RpStatus::Shape);
        rp_rbf_free(h);
    }
}

#[test]
fn null_and_invalid_arguments() {
    unsafe {
        assert_eq!(rp_rbf_new(2, 5, -5.0, 5.0, false, ptr::null_mut()), RpStatus::NullPointer);
        let mut h = ptr::null_mut();
        assert_eq!(rp_rbf_new(0, 5, -5.0, 5.0, false, &mut h), RpStatus::Config);
        assert!(h.is_null());
        let mut out = [0.0; 2];
        assert_eq!(rp_rbf_forward(ptr::null(), out.as_ptr(), 1, out.as_mut_ptr(), 2), RpStatus::NullPointer);
        assert_eq!(rp_rbf_output_dim(ptr::null()), 0);
        rp_rbf_free(ptr::null_mut());
        rp_env_free(ptr::null_mut());
    }
}

#[test]
fn encoder_posterior_of_identical_rows_tightens() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(rp_encoder_new(2, 1, 3, 16, 2, 7, &mut h), RpStatus::Ok);
        let w = rp_encoder_input_dim(h);
        assert_eq!(w, 6);
        let row = [0.1, 0.2, -0.3, 1.0, 0.4, 0.5];
        let one: Vec<f64> = row.to_vec();
        let four: Vec<f64> = row.iter().cycle().take(24).copied().collect();
        let (mut m1, mut v1, mut m4, mut v4) = ([0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3]);
        assert_eq!(rp_encoder_posterior(h, one.as_ptr(), 1, m1.as_mut_ptr(), v1.as_mut_ptr(), 3), RpStatus::Ok);
        assert_eq!(rp_encoder_posterior(h, four.as_ptr(), 4, m4.as_mut_ptr(), v4.as_mut_ptr(), 3), RpStatus::Ok);
        for i in 0..3 {
            assert!((m1[i] - m4[i]).abs() < 1e-12);
            assert!((v4[i] - v1[i] / 4.0).abs() < 1e-12);
        }
        assert_eq!(rp_encoder_posterior(h, one.as_ptr(), 0, m1.as_mut_ptr(), v1.as_mut_ptr(), 3), RpStatus::Usage);
        rp_encoder_free(h);
    }
}

#[test]
fn environment_steps_and_rewards() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(rp_env_new(RpEnvKind::Racer, &mut h), RpStatus::Ok);
        let (o, a, c) = (rp_env_obs_dim(h), rp_env_act_dim(h), rp_env_n_components(h));
        assert_eq!((o, a, c), (120, 1, 3));
        let mut obs = vec![0.0; o];
        let mut comps = vec![0.0; c];
        let mut r = 0.0;
        assert_eq!(rp_env_reset(h, 3, obs.as_mut_ptr(), o), RpStatus::Ok);
        let act = [0.0];
        assert_eq!(
            rp_env_step(h, act.as_ptr(), 1, obs.as_mut_ptr(), o, comps.as_mut_ptr(), c, ptr::null_mut()),
            RpStatus::NotReady
        );
        assert_eq!(rp_env_set_task(h, 4), RpStatus::Ok);
        assert_eq!(rp_env_step(h, act.as_ptr(), 1, obs.as_mut_ptr(), o, comps.as_mut_ptr(), c, &mut r), RpStatus::Ok);
        assert!((r - comps.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        let nan = [f64::NAN];
        assert_eq!(
            rp_env_step(h, nan.as_ptr(), 1, obs.as_mut_ptr(), o, comps.as_mut_ptr(), c, &mut r),
            RpStatus::Environment
        );
        rp_env_free(h);
    }
}

#[test]
fn trainer_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
[run]
environment = "constant"

[meta]
n_train_tasks = 2
n_test_tasks = 2
adaptation_steps = 5
episode_length = 5
trajectories_per_task = 1
context_size = 2
meta_batch = 2
updates_per_iter = 1
total_env_steps = 10
recent_window = 5
encoder_hidden = 4
encoder_depth = 1

[meta.sac]
hidden_width = 4
hidden_depth = 1
batch_size = 2
"#,
    )
    .unwrap();
    let path = CString::new(cfg.to_str().unwrap()).unwrap();
    let ckpt = CString::new(dir.path().join("c.cbor").to_str().unwrap()).unwrap();
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(rp_trainer_new(path.as_ptr(), &mut t), RpStatus::Ok);
        assert_eq!(rp_trainer_step(t), RpStatus::Ok);
        assert_eq!(rp_trainer_env_steps(t), 10);
        assert_eq!(rp_trainer_n_test_tasks(t), 2);
        let mut returns = [0.0; 2];
        assert_eq!(rp_trainer_evaluate(t, 1, returns.as_mut_ptr(), 2), RpStatus::Ok);
        assert_eq!(returns, [5.0, 5.0]);
        assert_eq!(rp_trainer_evaluate(t, 1, returns.as_mut_ptr(), 3), RpStatus::Shape);
        assert_eq!(rp_trainer_save(t, ckpt.as_ptr()), RpStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(rp_trainer_load(ckpt.as_ptr(), &mut back), RpStatus::Ok);
        assert_eq!(rp_trainer_env_steps(back), 10);
        rp_trainer_free(t);
        rp_trainer_free(back);

        let missing = CString::new("/nonexistent/run.toml").unwrap();
        let mut t = ptr::null_mut();
        assert_eq!(rp_trainer_new(missing.as_ptr(), &mut t), RpStatus::Io);
        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "[run]\nenvironment = \"racer\"\nbogus = 1\n").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(rp_trainer_new(bad.as_ptr(), &mut t), RpStatus::Config);
        assert!(last_error().contains("line 3"), "{}", last_error());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rbf_pearl.h")).unwrap();
    for f in [
        "rp_last_error",
        "rp_rbf_new",
        "rp_rbf_forward",
        "rp_rbf_free",
        "rp_encoder_new",
        "rp_encoder_posterior",
        "rp_env_new",
        "rp_env_step",
        "rp_trainer_new",
        "rp_trainer_evaluate",
        "rp_trainer_free",
        "RP_STATUS_NOT_READY",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
}
