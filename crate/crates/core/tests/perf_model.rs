use crosslayer::model::{all_candidates, validate_region_set, Configuration, RegionClass, RegionDescriptor, RegionTable};
use crosslayer::perf::{calibrate, improvement_over_hare, price, price_config, CostModel};
use crosslayer::resilience::region_transition_count;
use crosslayer::{fixture_dir, manifest, Error};
use proptest::prelude::*;

/// One candidate holding `non_crucial` of the time, the rest crucial.
fn split(non_crucial: f64) -> RegionTable {
    validate_region_set(vec![
        RegionDescriptor::new("nc", "w", RegionClass::NonCrucialCandidate, non_crucial)
            .with_executions(1000)
            .with_checks(100)
            .with_store_fraction(0.02),
        RegionDescriptor::new("c", "w", RegionClass::Crucial, 1.0 - non_crucial),
    ])
    .unwrap()
}

fn cnn_regions() -> RegionTable {
    manifest::load(&fixture_dir().join("cnn_mnist.manifest")).unwrap()
}

#[test]
fn hare_everywhere_prices_at_the_calibration_target() {
    for t in [split(0.87), cnn_regions()] {
        let cm = calibrate(1.63, &t).unwrap();
        assert_eq!(cm.hare_multiplier, 1.63);
        assert_eq!(price_config(&Configuration::all_crucial(&t), &t, &cm).normalized_time, 1.63);
    }
    let free = calibrate(1.0, &split(0.87)).unwrap();
    assert_eq!(price_config(&Configuration::all_crucial(&split(0.87)), &split(0.87), &free).normalized_time, 1.0);
    assert!(matches!(calibrate(0.9, &split(0.5)), Err(Error::InvalidTarget(_))));
}

#[test]
fn identity_model_is_the_baseline() {
    let t = cnn_regions();
    let cm = CostModel::<f64>::identity();
    for c in [Configuration::all_crucial(&t), all_candidates(&t), Configuration::new(&t, ["fc"]).unwrap()] {
        assert_eq!(price_config(&c, &t, &cm).normalized_time, 1.0);
    }
}

#[test]
fn cnn_all_candidates_price_near_the_cross_layer_band() {
    let t = cnn_regions();
    let cm = calibrate(1.63, &t).unwrap();
    let r = price_config(&all_candidates(&t), &t, &cm);
    let f = t.non_crucial_time(&all_candidates(&t));
    let compute = (1.0 - f) * 1.63 + f;
    assert!((1.05..=1.3).contains(&r.normalized_time), "{}", r.normalized_time);
    let shr = r.normalized_time - compute;
    assert!(shr > 0.0 && shr <= 0.02, "SHR overhead {shr}");
    let b = r.breakdown;
    assert!((b.total() - r.normalized_time).abs() <= 1e-12 * r.normalized_time);
}

#[test]
fn improvement_over_hare_examples() {
    let t = split(0.91);
    let cm = calibrate(1.63, &t).unwrap();
    let all = all_candidates(&t);
    let toggles = region_transition_count(&all, &t);
    let imp = improvement_over_hare(&all, &t, &cm, toggles);
    assert!((30.0..=40.0).contains(&imp), "{imp}");
    assert_eq!(improvement_over_hare(&Configuration::all_crucial(&t), &t, &cm, 0), 0.0);

    let (t87, t94) = (split(0.87), split(0.94));
    let cm = CostModel::new(1.63, 0.05, 1e-5, 1e-5).unwrap();
    let i87 = improvement_over_hare(&all_candidates(&t87), &t87, &cm, region_transition_count(&all_candidates(&t87), &t87));
    let i94 = improvement_over_hare(&all_candidates(&t94), &t94, &cm, region_transition_count(&all_candidates(&t94), &t94));
    assert!(i94 >= i87);
}

#[test]
fn cost_model_validation() {
    assert!(matches!(CostModel::new(0.99, 0.0, 0.0, 0.0), Err(Error::InvalidCostModel(_))));
    assert!(CostModel::new(1.2, -1.0, 0.0, 0.0).is_err());
    assert!(CostModel::new(1.2, 0.0, f64::NAN, 0.0).is_err());
    assert!(CostModel::new(1.0, 0.0, 0.0, 0.0).is_ok());
}

proptest! {
    /// Demoting a region never makes the configuration cheaper while HaRE
    /// costs at least what SHR adds per unit of that region's time.
    #[test]
    fn demotion_never_lowers_the_price(
        h in 1.0f64..3.0, store in 0.0f64..0.2, check in 0.0f64..1e-4, switch in 0.0f64..1e-4,
        f in prop::collection::vec(0.05f64..1.0, 2..5),
    ) {
        let total: f64 = f.iter().sum::<f64>() + 0.1;
        let mut regions: Vec<_> = f.iter().enumerate().map(|(i, x)| {
            RegionDescriptor::new(format!("r{i}"), "w", RegionClass::NonCrucialCandidate, x / total)
                .with_executions(10).with_checks(4).with_store_fraction(0.1)
        }).collect();
        regions.push(RegionDescriptor::new("c", "w", RegionClass::Crucial, 0.1 / total));
        let t = validate_region_set(regions);
        prop_assume!(t.is_ok());
        let t = t.unwrap();
        let cm = CostModel::new(h, store, check, switch).unwrap();
        let all = all_candidates(&t);
        let before = price_config(&all, &t, &cm).normalized_time;
        for id in &all.non_crucial {
            let r = t.get(id).unwrap();
            let extra = store * r.store_fraction + (check * r.checks as f64 + switch * 2.0 * r.executions as f64) / r.time_fraction;
            let after = price_config(&all.demote(id).unwrap(), &t, &cm).normalized_time;
            if h >= 1.0 + extra {
                prop_assert!(after >= before - 1e-12, "{after} < {before}");
            }
        }
        let r = price(&all, &t, &cm, region_transition_count(&all, &t));
        prop_assert!((r.breakdown.total() - r.normalized_time).abs() <= 1e-12 * r.normalized_time);
        let unit = CostModel::new(1.0, 0.0, 0.0, 0.0).unwrap();
        prop_assert_eq!(price_config(&all, &t, &unit).normalized_time, 1.0);
    }
}
