use crosslayer::model::{all_candidates, validate_region_set, BoundSpec, Configuration, RegionClass, RegionDescriptor};
use crosslayer::{manifest, Error};
use proptest::prelude::*;

fn region(id: &str, class: RegionClass, f: f64) -> RegionDescriptor {
    RegionDescriptor::new(id, "w", class, f)
}

#[test]
fn region_set_validation() {
    use RegionClass::*;
    assert!(validate_region_set(vec![region("a", Crucial, 0.3), region("b", Crucial, 0.7)]).is_ok());
    assert!(matches!(
        validate_region_set(vec![region("a", Crucial, 0.3), region("b", Crucial, 0.6)]),
        Err(Error::TimeFractionSumMismatch { .. })
    ));
    assert!(matches!(
        validate_region_set(vec![region("a", Crucial, 0.3), region("a", Crucial, 0.7)]),
        Err(Error::DuplicateRegionId(_))
    ));
    assert!(matches!(BoundSpec::clamp(10.0, -90.0), Err(Error::InvalidBound { .. })));
    assert!(matches!(BoundSpec::drop(f64::NAN, 1.0), Err(Error::InvalidBound { .. })));
    let bad = region("a", NonCrucialCandidate, 1.0).with_bound(BoundSpec { lower: 10.0, upper: -90.0, mode: crosslayer::model::BoundMode::Clamp });
    assert!(matches!(validate_region_set(vec![bad]), Err(Error::InvalidBound { .. })));
    assert!(matches!(validate_region_set(vec![]), Err(Error::EmptyRegionSet)));
}

#[test]
fn all_candidates_and_demotion() {
    use RegionClass::*;
    let t = validate_region_set(vec![
        region("C", NonCrucialCandidate, 0.6),
        region("F", NonCrucialCandidate, 0.3),
        region("Out", Crucial, 0.1),
    ])
    .unwrap();
    let all = all_candidates(&t);
    assert_eq!(all.label(), "C+F");
    let c = all.demote("C").unwrap();
    assert_eq!(c.label(), "F");
    assert_eq!(all.label(), "C+F", "demote must not mutate its input");
    let none = c.demote("F").unwrap();
    assert!(none.is_empty());
    assert!(matches!(c.demote("C"), Err(Error::RegionNotInConfiguration(_))));
    assert!(matches!(Configuration::new(&t, ["Out"]), Err(Error::CrucialRegionInConfiguration(_))));
    assert!(matches!(Configuration::new(&t, ["X"]), Err(Error::UnknownRegion(_))));

    let only_crucial = validate_region_set(vec![region("a", Crucial, 1.0)]).unwrap();
    assert!(all_candidates(&only_crucial).is_empty());
}

#[test]
fn shipped_cnn_manifest_has_conv_and_fc_candidates() {
    let t = manifest::load(&crosslayer::fixture_dir().join("cnn_mnist.manifest")).unwrap();
    assert_eq!(all_candidates(&t).label(), "conv+fc");
    assert_eq!(manifest::parse(&manifest::format(&t), "again").unwrap(), t);
}

#[test]
fn manifest_errors_carry_line_numbers() {
    let text = "workload=w\nid=a class=crucial time_fraction=0.5\nid=b class=sometimes time_fraction=0.5\n";
    match manifest::parse(text, "m") {
        Err(Error::Manifest { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #[test]
    fn validation_ignores_order(weights in prop::collection::vec(1u32..100, 1..6), rot in 0usize..6) {
        let total: u32 = weights.iter().sum();
        let mut regions: Vec<_> = weights
            .iter()
            .enumerate()
            .map(|(i, w)| region(&format!("r{i}"), RegionClass::NonCrucialCandidate, *w as f64 / total as f64))
            .collect();
        let a = validate_region_set(regions.clone()).map_err(|e| e.to_string());
        let len = regions.len();
        regions.rotate_left(rot % len);
        regions.reverse();
        let b = validate_region_set(regions).map_err(|e| e.to_string());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn demote_removes_exactly_one(n in 1usize..6, pick in 0usize..6) {
        let regions: Vec<_> = (0..n).map(|i| region(&format!("r{i}"), RegionClass::NonCrucialCandidate, 1.0 / n as f64)).collect();
        let t = validate_region_set(regions);
        prop_assume!(t.is_ok());
        let t = t.unwrap();
        let all = all_candidates(&t);
        let id = format!("r{}", pick % n);
        let next = all.demote(&id).unwrap();
        prop_assert_eq!(next.len() + 1, all.len());
        prop_assert!(!next.contains(&id));
    }
}
