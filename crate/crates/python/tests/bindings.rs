use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(f: impl FnOnce(&Bound<'_, PyModule>)) {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(_sonoseg::_sonoseg)(py);
        f(m.bind(py));
    });
}

#[test]
fn metrics_cross_the_boundary() {
    with_module(|m| {
        let v: f64 = m.call_method1("psnr", (vec![0.0; 4], vec![0.1; 4])).unwrap().extract().unwrap();
        assert!((v - 20.0).abs() < 1e-12);
        let x: Vec<f64> = (0..256).map(|i| (0.3 * i as f64).sin()).collect();
        let s: f64 = m.call_method1("ssim", (x.clone(), x, 16, 16)).unwrap().extract().unwrap();
        assert_eq!(s, 1.0);
        let u: f64 = m.call_method1("iou", (vec![1u8, 1, 0, 0], vec![1u8, 0, 1, 0])).unwrap().extract().unwrap();
        assert_eq!(u, 1.0 / 3.0);
        let err = m.call_method1("psnr", (vec![0.0], vec![0.0, 1.0])).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(m.py()));
    });
}

#[test]
fn tensor_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.sft");
    with_module(|m| {
        m.call_method1("write_tensor", (&path, vec![3usize], vec![1.0, 2.0, 3.0], r#"{"dx": 0.01}"#))
            .unwrap();
        let t = m.call_method1("read_tensor", (&path,)).unwrap();
        let t = t.cast::<PyDict>().unwrap();
        let data: Vec<f64> = t.get_item("data").unwrap().unwrap().extract().unwrap();
        assert_eq!(data, [1.0, 2.0, 3.0]);
        let err = m.call_method1("read_tensor", (dir.path().join("missing.sft"),)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyIOError>(m.py()));
        assert!(err.to_string().contains("io:"));
    });
}
