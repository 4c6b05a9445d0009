use flatbasin::io::{fmt_f64, read_json, Checkpoint, F17};
use flatbasin::landscape::{interpolate, sharpness, SharpnessConfig};
use flatbasin::methods::agem_project;
use flatbasin::metrics::{
    aggregate, average_accuracy, forgetting, learning_accuracy, MeanStd, ScoreMatrix, SequenceMetrics,
};
use flatbasin::model::{Activation, Batch, Dataset, HeadSpec, InitScheme, MlpSpec, ModelState};
use flatbasin::numcore::{Matrix, ParamVector, RngStream};
use flatbasin::sam::sam_perturbation;
use flatbasin::tasks::shuffle_orders;
use proptest::prelude::*;

fn lower_triangular(max_tasks: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_tasks).prop_flat_map(|t| (1..=t).map(|r| prop::collection::vec(0.0f64..=1.0, r)).collect::<Vec<_>>())
}

fn vector_pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_len).prop_flat_map(|n| (prop::collection::vec(-1e3f64..1e3, n), prop::collection::vec(-1e3f64..1e3, n)))
}

fn small_model(seed: u64, activation: Activation) -> (ModelState, Dataset) {
    let mut rng = RngStream::new(seed);
    let spec =
        MlpSpec { input_dim: 3, hidden_dims: vec![4], activation, heads: vec![HeadSpec { task: 0, classes: 3 }] };
    let model = ModelState::init(spec, &mut rng, InitScheme::UniformGlorot).unwrap();
    let inputs = Matrix::new(6, 3, (0..18).map(|_| rng.normal()).collect()).unwrap();
    let labels = (0..6).map(|i| i % 3).collect();
    (model, Dataset::new(inputs, labels).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_stay_in_range(rows in lower_triangular(7)) {
        let s = ScoreMatrix::from_rows(rows.clone()).unwrap();
        for t in 1..=rows.len() {
            let a = average_accuracy(&s, t).unwrap();
            let la = learning_accuracy(&s, t).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((0.0..=1.0).contains(&la));
            if t >= 2 {
                let f = forgetting(&s, t).unwrap();
                prop_assert!((-1.0..=1.0).contains(&f));
            }
        }
        let m = SequenceMetrics::from_scores(&s).unwrap();
        let report = aggregate(std::slice::from_ref(&m)).unwrap();
        prop_assert_eq!(report.final_accuracy.std, 0.0);
        prop_assert_eq!(report.final_accuracy.mean, m.accuracy[rows.len() - 1]);
    }

    #[test]
    fn mean_std_ignores_order(mut v in prop::collection::vec(-10.0f64..10.0, 1..20), seed in any::<u64>()) {
        let a = MeanStd::of(&v);
        RngStream::new(seed).shuffle(&mut v);
        prop_assert_eq!(a, MeanStd::of(&v));
        prop_assert!(a.std >= 0.0);
    }

    #[test]
    fn agem_never_conflicts((g, r) in vector_pair(12)) {
        let g = ParamVector::from_values(g);
        let r = ParamVector::from_values(r);
        let p = agem_project(&g, &r);
        let scale = g.norm() * r.norm();
        prop_assert!(p.dot(&r) >= -1e-12 * scale.max(1.0));
        if g.dot(&r) >= 0.0 {
            prop_assert_eq!(p.values, g.values);
        }
    }

    #[test]
    fn sam_perturbation_has_radius_rho(g in prop::collection::vec(-1e3f64..1e3, 1..16), rho in 0.0f64..2.0) {
        let g = ParamVector::from_values(g);
        prop_assume!(g.norm() > 0.0);
        let e = sam_perturbation(&g, rho);
        prop_assert!((e.norm() - rho).abs() <= 1e-12 * (1.0 + rho));
        prop_assert!(e.dot(&g) >= 0.0);
    }

    #[test]
    fn sharpness_is_nonnegative_and_stays_in_box(
        seed in 0u64..1000,
        eps in 1e-4f64..1e-1,
        iters in 1usize..15,
        relu in any::<bool>(),
    ) {
        let (model, data) = small_model(seed, if relu { Activation::Relu } else { Activation::Tanh });
        let batch = Batch::new(&data, 0);
        let x = model.params();
        let cfg = SharpnessConfig { epsilon: eps, p: 0, max_iters: iters, seed };
        let r = sharpness(|w| model.loss_and_grad_at(w, &batch), x, &cfg).unwrap();
        prop_assert!(r.phi >= 0.0);
        prop_assert!(r.max_loss >= r.base_loss);
        for (z, xi) in r.argmax_z.iter().zip(&x.values) {
            prop_assert!(z.abs() <= eps * (xi.abs() + 1.0) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn interpolation_hits_both_endpoints(seed in 0u64..1000, steps in 2usize..30) {
        let (model, data) = small_model(seed, Activation::Tanh);
        let (other, _) = small_model(seed + 1, Activation::Tanh);
        let loss = |w: &ParamVector| model.loss_at(w, &data, 0);
        let curve = interpolate(model.params(), other.params(), steps, loss).unwrap();
        prop_assert_eq!(curve.len(), steps);
        prop_assert_eq!(curve[0], (0.0, loss(model.params()).unwrap()));
        prop_assert_eq!(curve[steps - 1], (1.0, loss(other.params()).unwrap()));
    }

    #[test]
    fn floats_round_trip_through_json_and_csv(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let text = serde_json::to_string(&F17(v)).unwrap();
        let back: F17 = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.0.to_bits(), v.to_bits());
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn orders_are_permutations(tasks in 1usize..12, orders in 1usize..6, seed in any::<u64>()) {
        let all = shuffle_orders(tasks, orders, seed);
        prop_assert_eq!(all.len(), orders);
        for o in &all {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..tasks).collect::<Vec<_>>());
        }
        prop_assert_eq!(all, shuffle_orders(tasks, orders, seed));
    }
}

#[test]
fn checkpoints_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..20 {
        let (model, data) = small_model(seed, Activation::Relu);
        let path = dir.path().join(format!("{seed}.json"));
        Checkpoint::from_model(&model, Some(0)).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().to_model().unwrap();
        let bits = |m: &ModelState| m.params().values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&model), bits(&back));
        assert_eq!(model.loss_at(model.params(), &data, 0).unwrap(), back.loss_at(back.params(), &data, 0).unwrap());
        let raw: serde_json::Value = read_json(&path).unwrap();
        assert_eq!(raw["task"], 0);
    }
}
