mod common;

use std::collections::BTreeSet;

use crosslayer::fault::{InjectionPlan, Strike, StrikeSchedule};
use crosslayer::mnist::{Origin, IMAGE_PIXELS};
use crosslayer::model::{all_candidates, Configuration, FaultSpec, ValueModel};
use crosslayer::resilience::{bound_check, CheckAction};
use crosslayer::scalar::sigmoid;
use crosslayer::workloads::dense::Dense;
use crosslayer::workloads::{self, cnn, knn, mlp, run_cnn, run_knn, run_mlp, Model};
use crosslayer::{fixture_dir, manifest, Cnn, Dataset, Error, Knn, Sample, WorkloadInstance};
use proptest::prelude::*;

fn test_set() -> Dataset {
    let dir = fixture_dir();
    Dataset::load(&dir.join("test-images.idx3-ubyte"), &dir.join("test-labels.idx1-ubyte")).unwrap()
}

fn train_set() -> Dataset {
    let dir = fixture_dir();
    Dataset::load(&dir.join("train-images.idx3-ubyte"), &dir.join("train-labels.idx1-ubyte")).unwrap()
}

fn sample_at(i: usize) -> Sample {
    test_set().samples()[i].clone()
}

fn load(kind: &str) -> WorkloadInstance {
    let dir = fixture_dir();
    match kind {
        "cnn" => WorkloadInstance::load_cnn(&dir.join("cnn.weights"), &dir.join("cnn_mnist.manifest")).unwrap(),
        "mlp" => WorkloadInstance::load_mlp(&dir.join("mlp.weights"), &dir.join("mlp_mnist.manifest")).unwrap(),
        _ => WorkloadInstance::load_knn(&train_set(), knn::DEFAULT_K, &dir.join("knn_mnist.manifest")).unwrap(),
    }
}

fn dataset(samples: Vec<Sample>) -> Dataset {
    Dataset::new(samples, Origin { digest: "synthetic".into(), subset: None }).unwrap()
}

#[test]
fn fault_free_labels_match_plain_loop_oracles() {
    let test = test_set();
    let images = common::read_images("test-images.idx3-ubyte");
    let cnn_w = common::read_tensors("cnn.weights");
    let mlp_w = common::read_tensors("mlp.weights");
    let train = common::read_images("train-images.idx3-ubyte");
    let train_labels = common::read_labels("train-labels.idx1-ubyte");
    let (c, m, k) = (load("cnn"), load("mlp"), load("knn"));
    for (s, img) in test.samples().iter().zip(&images) {
        assert_eq!(s.pixels, *img);
        assert_eq!(c.classify(s).unwrap(), common::cnn_label(&cnn_w, img));
        assert_eq!(m.classify(s).unwrap(), common::mlp_label(&mlp_w, img));
        assert_eq!(k.classify(s).unwrap(), common::knn_label(&train, &train_labels, knn::DEFAULT_K, img));
    }
}

#[test]
fn fixture_models_are_accurate() {
    let test = test_set();
    for kind in ["cnn", "mlp"] {
        let acc = load(kind).prepare(&test).fault_free_accuracy();
        assert!(acc >= 0.90, "{kind}: {acc}");
    }
}

#[test]
fn shipped_manifests_match_profiling() {
    let test = test_set();
    for kind in ["cnn", "mlp", "knn"] {
        let shipped = load(kind);
        let profiled = WorkloadInstance::profiled(shipped.model().clone(), &test).unwrap();
        let text = std::fs::read_to_string(fixture_dir().join(shipped.kind().manifest_file())).unwrap();
        assert_eq!(manifest::format(profiled.regions()), text, "{kind}");
    }
}

#[test]
fn cnn_candidates_dominate_runtime() {
    let c = load("cnn");
    assert_eq!(all_candidates(c.regions()).label(), "conv+fc");
    let f = c.regions().non_crucial_time(&all_candidates(c.regions()));
    assert!((0.77..=0.97).contains(&f), "{f}");
}

/// One kernel that copies pixel (y, x) into conv cell (y, x), so pooled
/// cell 0 is the max of pixels 0, 1, 28, 29. The dense layers map that
/// value to a label: above ~0.8 -> 1, around 0.7 -> 0, near 0 -> 2.
fn probe_cnn() -> (WorkloadInstance, Sample) {
    let mut kernel = vec![0.0f32; 25];
    kernel[0] = 1.0;
    // Hidden unit 0 reads pooled cell 0; units 1..8 are idle.
    let mut fc_w = vec![0.0f32; 8 * 144];
    fc_w[0] = 10.0;
    let fc = Dense::new(144, 8, fc_w, vec![-8.0; 8], cnn::FC_UNROLL).unwrap();
    let mut out_w = vec![0.0f32; 10 * 8];
    let mut out_b = vec![-10.0f32; 10];
    out_w[8] = 20.0;
    out_b[1] = -10.0;
    out_w[16] = -20.0;
    out_b[2] = 3.0;
    out_b[0] = 0.0;
    let out = Dense::new(8, 10, out_w, out_b, cnn::OUT_UNROLL).unwrap();
    let model = Cnn::new(1, 5, kernel, vec![0.0], fc, out).unwrap();
    let mut pixels = vec![0.0f32; IMAGE_PIXELS];
    pixels[0] = 0.9;
    pixels[1] = 0.2;
    pixels[28] = 0.5;
    pixels[29] = 0.7;
    let sample = Sample { pixels, label: 1 };
    let instance = WorkloadInstance::profiled(Model::Cnn(model), &dataset(vec![sample.clone()])).unwrap();
    (instance, sample)
}

fn conv_strike(value: f32) -> StrikeSchedule<f32> {
    let mut s = StrikeSchedule::none();
    s.push(cnn::CONV, Strike { execution: 0, target: 0, value });
    s
}

#[test]
fn dropped_conv_cell_falls_back_to_next_largest() {
    let (w, sample) = probe_cnn();
    let config = all_candidates(w.regions());
    assert_eq!(run_cnn(&sample, &w, &config, &StrikeSchedule::none()).unwrap().predicted_label, 1);

    for bad in [1.0e6, -3.0, f32::NAN, f32::INFINITY] {
        let trace = run_cnn(&sample, &w, &config, &conv_strike(bad)).unwrap();
        assert_eq!(trace.predicted_label, 0, "{bad}: pool must use 0.7");
        let [e] = trace.events.as_slice() else { panic!("{:?}", trace.events) };
        assert_eq!(e.action, CheckAction::Dropped);
        assert!(!e.committed);
    }
    // An in-range strike is committed and wins the window.
    let trace = run_cnn(&sample, &w, &config, &conv_strike(0.95)).unwrap();
    assert_eq!(trace.predicted_label, 1);
    assert_eq!(trace.events[0].action, CheckAction::Passed);
    assert!(trace.events[0].committed);
}

#[test]
fn whole_pool_window_dropped_yields_zero() {
    let (w, sample) = probe_cnn();
    let side = 24;
    let mut s = StrikeSchedule::none();
    for cell in [0, 1, side, side + 1] {
        s.push(cnn::CONV, Strike { execution: cell as u64 * 5, target: 0, value: 1.0e9 });
    }
    let trace = run_cnn(&sample, &w, &all_candidates(w.regions()), &s).unwrap();
    assert_eq!(trace.predicted_label, 2);
    assert_eq!(trace.events.len(), 4);
}

#[test]
fn fc_strike_is_clamped_before_sigmoid() {
    let out = bound_check(500.0f32, &crosslayer::model::BoundSpec::clamp(-90.0, 10.0).unwrap());
    assert_eq!(out.committed, Some(10.0));
    assert!((sigmoid(out.committed.unwrap()) - 0.999_954_6).abs() < 1e-7);

    let w = load("cnn");
    let sample = &sample_at(0);
    let mut s = StrikeSchedule::none();
    s.push(cnn::FC, Strike { execution: 3, target: 7, value: 500.0 });
    let trace = run_cnn(sample, &w, &all_candidates(w.regions()), &s).unwrap();
    let [e] = trace.events.as_slice() else { panic!() };
    assert_eq!((e.region, e.target, e.new, e.action, e.committed), ("fc", "fc_acc", 500.0, CheckAction::Clamped, true));
}

#[test]
fn mlp_input_layer_is_never_demoted() {
    let w = load("mlp");
    let sample = &sample_at(0);
    let config = Configuration { workload: "mlp_mnist".into(), non_crucial: BTreeSet::from(["input".to_owned()]) };
    assert!(matches!(run_mlp(sample, &w, &config, &StrikeSchedule::none()), Err(Error::AttemptToDemoteInputLayer(_))));
    assert!(matches!(
        Configuration::new(w.regions(), ["input"]),
        Err(Error::CrucialRegionInConfiguration(_))
    ));
    assert_eq!(all_candidates(w.regions()).label(), "i1+i2");
}

#[test]
fn mlp_zero_input_is_a_fixed_vector() {
    let w = load("mlp");
    let zero = Sample { pixels: vec![0.0; IMAGE_PIXELS], label: 0 };
    let tensors = common::read_tensors("mlp.weights");
    let expected = common::mlp_label(&tensors, &zero.pixels);
    for _ in 0..3 {
        assert_eq!(w.classify(&zero).unwrap(), expected);
    }
}

fn knn_fixture() -> (WorkloadInstance, Vec<Sample>) {
    let mut samples = Vec::new();
    for (i, label) in [3u8, 5, 7, 5, 1].into_iter().enumerate() {
        let mut pixels = vec![0.0f32; IMAGE_PIXELS];
        for p in pixels.iter_mut().take(10 * (i + 1)) {
            *p = 1.0;
        }
        samples.push(Sample { pixels, label });
    }
    let model = Knn::new(&dataset(samples.clone()), 1).unwrap();
    let instance = WorkloadInstance::profiled(Model::Knn(model), &dataset(samples.clone())).unwrap();
    (instance, samples)
}

#[test]
fn knn_self_match_and_dropped_neighbour() {
    let (w, samples) = knn_fixture();
    let config = all_candidates(w.regions());
    for s in &samples {
        assert_eq!(run_knn(s, &w, &config, &StrikeSchedule::none()).unwrap().predicted_label, s.label);
    }
    // Query = training sample 0 (distance 0). Knock it out: the next nearest (index 1) votes.
    for value in [1.0e30, f32::NAN, -1.0, 785.0] {
        let mut s = StrikeSchedule::none();
        s.push(knn::DISTANCE, Strike { execution: 0, target: 783, value });
        let trace = run_knn(&samples[0], &w, &config, &s).unwrap();
        assert_eq!(trace.predicted_label, 5, "{value}");
        assert_eq!(trace.events[0].action, CheckAction::Dropped);
    }
    assert!(matches!(Knn::new(&dataset(samples.clone()), 6), Err(Error::KTooLarge { .. })));
    assert!(matches!(Knn::new(&dataset(samples), 0), Err(Error::KTooLarge { .. })));
}

#[test]
fn kernels_reject_mismatched_shapes() {
    let fc = Dense::<f32>::new(144, 8, vec![0.0; 144 * 8], vec![0.0; 8], 8).unwrap();
    let out = Dense::<f32>::new(8, 10, vec![0.0; 80], vec![0.0; 10], 8).unwrap();
    assert!(matches!(Dense::<f32>::new(4, 10, vec![0.0; 40], vec![0.0; 10], 8), Err(Error::ShapeMismatch(_))));
    assert!(matches!(Dense::<f32>::new(8, 10, vec![0.0; 79], vec![0.0; 10], 8), Err(Error::ShapeMismatch(_))));
    assert!(matches!(Cnn::new(2, 5, vec![0.0; 50], vec![0.0; 2], fc.clone(), out.clone()), Err(Error::ShapeMismatch(_))));
    assert!(matches!(Cnn::new(1, 5, vec![0.0; 24], vec![0.0], fc, out), Err(Error::ShapeMismatch(_))));
    let tensors = crosslayer::workloads::weights::load(&fixture_dir().join("cnn.weights")).unwrap();
    assert!(matches!(crosslayer::Mlp::from_tensors(&tensors), Err(Error::ShapeMismatch(_))));
}

#[test]
fn run_functions_check_the_workload_kind() {
    let w = load("mlp");
    let sample = &sample_at(0);
    let config = Configuration::all_crucial(w.regions());
    assert!(run_cnn(sample, &w, &config, &StrikeSchedule::none()).is_err());
    assert!(run_knn(sample, &w, &config, &StrikeSchedule::none()).is_err());
    assert!(run_mlp(sample, &w, &config, &StrikeSchedule::none()).is_ok());
}

fn schedule_for(w: &WorkloadInstance, error_rate: f64, seed: u64, trial: u64) -> StrikeSchedule<f32> {
    let spec = FaultSpec::new(error_rate, seed, ValueModel::RandomBitPattern).unwrap();
    let plan = InjectionPlan::full(&all_candidates(w.regions()), spec, trial);
    plan.draw_schedule(w.regions().iter(), |r| w.targets_per_execution(r), &mut plan.rng())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn crucial_configuration_is_immune(seed in any::<u64>(), which in 0usize..3, sample in 0usize..100) {
        let w = load(["cnn", "mlp", "knn"][which]);
        let s = &sample_at(sample);
        let schedule = schedule_for(&w, 0.2, seed, 0);
        let none = Configuration::all_crucial(w.regions());
        let hit = w.run(s, &none, &schedule).unwrap();
        let clean = w.run(s, &none, &StrikeSchedule::none()).unwrap();
        prop_assert!(hit.events.is_empty());
        prop_assert_eq!(hit, clean);
    }

    #[test]
    fn cached_trials_equal_full_runs(seed in any::<u64>(), which in 0usize..3, e in prop::sample::select(vec![0.001, 0.02, 0.3])) {
        let w = load(["cnn", "mlp", "knn"][which]);
        let test = test_set();
        let prepared = w.prepare(&test);
        let config = all_candidates(w.regions());
        let mut configs = vec![config.clone()];
        configs.extend(config.non_crucial.iter().map(|r| config.demote(r).unwrap()));
        for (i, s) in test.samples().iter().enumerate().step_by(7) {
            let schedule = schedule_for(&w, e, seed, i as u64);
            for c in &configs {
                let full = w.run(s, c, &schedule).unwrap();
                let cached = prepared.run_sample(i, c, &schedule).unwrap();
                prop_assert_eq!(full.predicted_label, cached.predicted_label);
                prop_assert_eq!(format!("{:?}", full.events), format!("{:?}", cached.events));
            }
        }
    }

    /// A struck distance changes only its own neighbour: the label equals a
    /// brute-force vote over the clean distances with that one replaced.
    #[test]
    fn knn_faults_stay_local(j in 0usize..1000, value in 0.0f32..784.0, sample in 0usize..100) {
        let w = load("knn");
        let s = &sample_at(sample);
        let train = common::read_images("train-images.idx3-ubyte");
        let labels = common::read_labels("train-labels.idx1-ubyte");
        let mut sched = StrikeSchedule::none();
        sched.push(knn::DISTANCE, Strike { execution: j as u64, target: 783, value });
        let trace = run_knn(s, &w, &all_candidates(w.regions()), &sched).unwrap();

        let mut d: Vec<(f32, usize)> = train.iter().enumerate().map(|(i, row)| {
            let acc = s.pixels.iter().zip(row).fold(0.0f32, |a, (q, t)| a + (q - t) * (q - t));
            (if i == j { value } else { acc }, i)
        }).collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes = [0; 10];
        for (_, i) in &d[..5] { votes[labels[*i] as usize] += 1; }
        let top = *votes.iter().max().unwrap();
        let expected = d[..5].iter().map(|(_, i)| labels[*i]).find(|l| votes[*l as usize] == top).unwrap();
        prop_assert_eq!(trace.predicted_label, expected);
    }
}

#[test]
fn events_name_only_data_flow_targets() {
    for kind in ["cnn", "mlp", "knn"] {
        let w = load(kind);
        let config = all_candidates(w.regions());
        for (i, s) in test_set().samples().iter().enumerate().take(10) {
            let trace = w.run(s, &config, &schedule_for(&w, 0.05, 9, i as u64)).unwrap();
            for e in &trace.events {
                assert!(config.contains(e.region), "{kind}: {}", e.region);
                assert_eq!(e.target_kind, crosslayer::resilience::TargetKind::DataFlow);
                assert_eq!(e.committed, e.action != CheckAction::Dropped);
            }
            assert_eq!(trace.audit.deviations, 0);
        }
    }
}

#[test]
fn workload_kinds_round_trip() {
    for kind in workloads::WorkloadKind::ALL {
        assert_eq!(kind.name().parse::<workloads::WorkloadKind>().unwrap(), kind);
    }
    assert!("vgg16".parse::<workloads::WorkloadKind>().is_err());
    assert_eq!(mlp::REGIONS.len(), 5);
}
