mod common;

use pwnn_core::trainer::SegmentLoss;
use pwnn_core::{registry, LayerSpec};

#[test]
fn loss_gradient_matches_central_differences() {
    let p = registry::get("example1").unwrap();
    let spec = LayerSpec::with_hidden(&[20, 20], 2).unwrap();
    for seed in 0..20 {
        let case = common::random_case(&spec, p.t_end, 16, seed % 2 == 0, 1000 + seed);
        let mut loss = SegmentLoss::new(&case.net, &p, &case.colloc, case.net.interval.0, &case.ic_target).unwrap();
        let ratio = common::fd_gradient_ratio(&mut loss, case.net.params.as_flat(), 1e-5, 1e-5, 1e-8);
        assert!(ratio <= 1.0, "seed {seed}: worst violation ratio {ratio}");
    }
}

#[test]
fn gradient_check_on_every_registry_problem() {
    for name in registry::NAMES {
        let p = registry::get(name).unwrap();
        let spec = LayerSpec::with_hidden(&[8, 8], p.dim()).unwrap();
        let case = common::random_case(&spec, p.t_end, 10, true, 7);
        let mut loss = SegmentLoss::new(&case.net, &p, &case.colloc, case.net.interval.0, &case.ic_target).unwrap();
        let ratio = common::fd_gradient_ratio(&mut loss, case.net.params.as_flat(), 1e-5, 1e-5, 1e-8);
        assert!(ratio <= 1.0, "{name}: {ratio}");
    }
}
