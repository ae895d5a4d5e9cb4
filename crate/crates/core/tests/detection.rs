//! Peak fitting on exact surfaces and the trace check on simulated windows.

mod common;

use common::criteria::{min_trace_correlation, peak_errors};

#[test]
fn peak_fit_recovers_random_noiseless_peaks() {
    let e = peak_errors();
    println!("worst center error {:.2e} px, worst amplitude error {:.2e}", e.center_px, e.amplitude_rel);
    assert!(e.all_converged);
    assert!(e.center_px < 1e-3, "center off by {}", e.center_px);
    assert!(e.amplitude_rel < 1e-3, "amplitude off by {}", e.amplitude_rel);
}

#[test]
fn traces_of_simulated_windows_are_gaussian() {
    let c = min_trace_correlation();
    println!("smallest trace correlation {c:.5}");
    assert!(c >= 0.999, "trace correlation {c}");
}
