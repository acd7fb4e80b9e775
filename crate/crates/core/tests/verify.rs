use std::time::Instant;

use leaps_core::leqnet::{save_checkpoint, Architecture, FluxNet, FreeEnergyNet, NetSpec};
use leaps_core::rng;
use leaps_core::verify::{checkpoint_equivariance, format_table, run_battery, Level};

#[test]
fn fast_battery_passes_within_budget() {
    let start = Instant::now();
    let results = run_battery(Level::Fast, 0, None);
    let secs = start.elapsed().as_secs_f64();
    println!("{}", format_table(&results));
    assert!(results.iter().all(|r| r.passed), "{}", format_table(&results));
    assert!(secs < 60.0, "fast battery took {secs:.1}s");
}

#[test]
fn tampered_checkpoint_fails_the_equivariance_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let mut r = rng::stream(3, 0, 0);
    let spec = NetSpec { rows: 3, cols: 3, n_tokens: 2, arch: Architecture::Lec { kernel_sizes: vec![3], channels: 4, head_dim: 4 } };
    let net = FluxNet::random(spec, &mut r, 1.0).unwrap();
    save_checkpoint(&path, &net, &FreeEnergyNet::init(4, &mut r).unwrap()).unwrap();
    let (ok, _) = checkpoint_equivariance(&path, 1).unwrap();
    assert!(ok);

    let mut bytes = std::fs::read(&path).unwrap();
    let at = bytes.len() - 100;
    bytes[at] ^= 0x10;
    std::fs::write(&path, &bytes).unwrap();
    assert!(checkpoint_equivariance(&path, 1).is_err());
    let results = run_battery(Level::Fast, 0, Some(&path));
    let last = results.last().unwrap();
    assert_eq!(last.name, "checkpoint_equivariance");
    assert!(!last.passed, "{}", last.detail);
}
