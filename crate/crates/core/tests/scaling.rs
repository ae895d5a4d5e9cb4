//! Per-sweep cost grows with the number of columns.

mod common;

use common::criteria::sweep_timing;

#[test]
fn sweep_time_scales_with_site_count() {
    let t = sweep_timing();
    let ratio = t.large_s / t.small_s;
    println!(
        "10x10: {:.2} ms/sweep, 14x14: {:.2} ms/sweep, time ratio {ratio:.2}, site ratio {:.2}",
        t.small_s * 1e3,
        t.large_s * 1e3,
        t.site_ratio
    );
    assert!((1.4..=2.6).contains(&ratio), "time ratio {ratio}");
}
