use std::ffi::{CStr, CString};
use std::ptr;

use valence_core::bayes::sample_posterior;
use valence_core::data::synth_ecg;
use valence_core::nn::{he_normal_init, model_forward, save_model, ModelConfig};
use valence_core::signal::{zero_pad, zscore};
use valence_ffi::*;

fn last_error() -> String {
    let p = valence_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn classify_and_variance() {
    let mut samples = vec![0.8; 930];
    samples.extend(vec![0.2; 70]);
    let (mut zone, mut mass) = (0i32, 0.0);
    unsafe {
        assert_eq!(
            valence_classify(samples.as_ptr(), samples.len(), 0.9, &mut zone, &mut mass),
            ValenceStatus::Ok
        );
        assert_eq!((zone, mass), (1, 0.93));
        assert_eq!(
            valence_classify(samples.as_ptr(), samples.len(), 0.95, &mut zone, &mut mass),
            ValenceStatus::Ok
        );
        assert_eq!(zone, -1);
        assert_eq!(
            valence_classify(samples.as_ptr(), samples.len(), 0.3, &mut zone, &mut mass),
            ValenceStatus::Posterior
        );
        assert!(last_error().contains("0.3"));

        let flat = [0.4; 8];
        let mut var = -1.0;
        assert_eq!(valence_posterior_variance(flat.as_ptr(), 8, &mut var), ValenceStatus::Ok);
        assert_eq!(var, 0.0);
    }
}

#[test]
fn null_arguments_are_reported() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(valence_posterior_variance(ptr::null(), 3, &mut out), ValenceStatus::NullPointer);
        assert!(last_error().contains("samples"));
        let s = [0.1, 0.2];
        assert_eq!(valence_posterior_variance(s.as_ptr(), 2, ptr::null_mut()), ValenceStatus::NullPointer);
        assert_eq!(valence_model_load(ptr::null(), ptr::null_mut()), ValenceStatus::NullPointer);
        assert_eq!(valence_model_input_length(ptr::null()), 0);
        assert_eq!(valence_peak_list_len(ptr::null()), 0);
        assert!(valence_peak_list_data(ptr::null()).is_null());
        valence_model_free(ptr::null_mut());
        valence_peak_list_free(ptr::null_mut());
    }
}

#[test]
fn mann_whitney_example() {
    let (a, b) = ([1.0, 2.0], [3.0, 4.0]);
    let (mut u, mut p) = (-1.0, -1.0);
    unsafe {
        assert_eq!(valence_mann_whitney_u(a.as_ptr(), 2, b.as_ptr(), 2, &mut u, &mut p), ValenceStatus::Ok);
        assert_eq!(u, 0.0);
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            valence_mann_whitney_u(a.as_ptr(), 2, ptr::null(), 0, &mut u, &mut p),
            ValenceStatus::Statistics
        );
    }
}

#[test]
fn prepare_ibi_pads_and_validates() {
    let ibi = [0.8, 0.9, 0.7, 0.85];
    let mut out = [f64::NAN; 6];
    unsafe {
        assert_eq!(valence_prepare_ibi(ibi.as_ptr(), 4, 6, out.as_mut_ptr()), ValenceStatus::Ok);
        assert!(out[..4].iter().sum::<f64>().abs() < 1e-12);
        assert_eq!(&out[4..], &[0.0, 0.0]);
        assert_eq!(
            valence_prepare_ibi(ibi.as_ptr(), 4, 3, out.as_mut_ptr()),
            ValenceStatus::InvalidArgument
        );
        let bad = [0.8, -1.0];
        assert_eq!(
            valence_prepare_ibi(bad.as_ptr(), 2, 4, out.as_mut_ptr()),
            ValenceStatus::InvalidArgument
        );
    }
}

#[test]
fn r_peaks_through_handle() {
    let beats: Vec<f64> = (0..75).map(|k| 0.4 + 0.8 * k as f64).collect();
    let (ecg, truth) = synth_ecg(&beats, 60.0, 256.0, 0.0, 0).unwrap();
    let mut list = ptr::null_mut();
    unsafe {
        assert_eq!(
            valence_detect_r_peaks(ecg.samples.as_ptr(), ecg.samples.len(), 256.0, &mut list),
            ValenceStatus::Ok
        );
        let n = valence_peak_list_len(list);
        assert_eq!(n, truth.len());
        let found = std::slice::from_raw_parts(valence_peak_list_data(list), n);
        for (f, t) in found.iter().zip(&truth.r_peak_indices) {
            assert!(f.abs_diff(*t) <= 10);
        }
        valence_peak_list_free(list);
        let flat = vec![0.0; 100];
        assert_eq!(
            valence_detect_r_peaks(flat.as_ptr(), flat.len(), 256.0, &mut list),
            ValenceStatus::Signal
        );
        assert_eq!(
            valence_detect_r_peaks(flat.as_ptr(), flat.len(), -1.0, &mut list),
            ValenceStatus::Signal
        );
    }
}

#[test]
fn model_handle_matches_core() {
    let config = ModelConfig {
        input_length: 12,
        conv_filters: 3,
        conv_window_sizes: vec![3, 2],
        lstm_hidden_units: 2,
        ..ModelConfig::default()
    };
    let params = he_normal_init(&config, 5);
    let dir = tempfile::tempdir().unwrap();
    save_model(dir.path(), &params, &config, &[]).unwrap();
    let ibi = [0.8, 0.82, 0.79, 0.9, 0.7, 0.85, 0.81, 0.77];
    let z = zscore(&ibi).unwrap();
    let x = zero_pad(&z, 12).unwrap();
    let expected = model_forward(&x, &params, &config, false, 0).unwrap().0;
    let posterior = sample_posterior(&x, &params, &config, 50, 9).unwrap();

    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(valence_model_load(path.as_ptr(), &mut model), ValenceStatus::Ok);
        assert_eq!(valence_model_input_length(model), 12);
        let mut y = f64::NAN;
        assert_eq!(valence_model_predict(model, ibi.as_ptr(), ibi.len(), &mut y), ValenceStatus::Ok);
        assert_eq!(y, expected);
        let mut samples = vec![f64::NAN; 50];
        assert_eq!(
            valence_model_sample_posterior(model, ibi.as_ptr(), ibi.len(), 50, 9, samples.as_mut_ptr()),
            ValenceStatus::Ok
        );
        assert_eq!(samples, posterior.samples());
        assert_eq!(
            valence_model_sample_posterior(model, ibi.as_ptr(), ibi.len(), 0, 9, samples.as_mut_ptr()),
            ValenceStatus::Posterior
        );
        valence_model_free(model);

        let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
        assert_eq!(valence_model_load(missing.as_ptr(), &mut model), ValenceStatus::Io);
        assert!(!last_error().is_empty());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/valence.h")).unwrap();
    for name in [
        "valence_last_error_message",
        "valence_model_load",
        "valence_model_free",
        "valence_model_input_length",
        "valence_model_predict",
        "valence_model_sample_posterior",
        "valence_detect_r_peaks",
        "valence_peak_list_len",
        "valence_peak_list_data",
        "valence_peak_list_free",
        "valence_prepare_ibi",
        "valence_classify",
        "valence_posterior_variance",
        "valence_mann_whitney_u",
        "VALENCE_STATUS_OK = 0",
        "typedef struct ValenceModel ValenceModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
