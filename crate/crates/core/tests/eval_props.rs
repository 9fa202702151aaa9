use eids::evalkit::{
    compute_metrics, erde, evaluate, lc, stream_classify, top1, Decision, ErdeCosts, FnModel,
};
use eids::FlowRecord;
use proptest::prelude::*;

/// Confidence table indexed by prefix length: `table[k-1]` is the class
/// distribution after k packets.
fn table_model(table: Vec<Vec<f64>>) -> FnModel<impl Fn(&FlowRecord) -> Vec<f64> + Sync> {
    FnModel {
        classes: table[0].len(),
        f: move |f: &FlowRecord| table[f.rows() - 1].clone(),
    }
}

fn dist(classes: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, classes).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn flow(n: usize, label: usize) -> FlowRecord {
    FlowRecord::new(
        None,
        Some(label),
        1,
        vec![0.0; n],
        (0..n).map(|i| i as f64).collect(),
    )
}

fn decision() -> impl Strategy<Value = Decision> {
    (0usize..4, 0usize..4, 1usize..31, any::<bool>()).prop_map(|(label, predicted, k, crossed)| {
        Decision {
            flow_id: String::new(),
            label: Some(label),
            predicted,
            confidence: 0.5,
            k,
            crossed_threshold: crossed,
            tau: 0.99,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// The decision point is the smallest k whose top-1 reaches τ, else n.
    #[test]
    fn decision_point_is_the_first_crossing(
        table in (1usize..31).prop_flat_map(|n| prop::collection::vec(dist(3), n)),
        tau in 0.34f64..1.0,
    ) {
        let n = table.len();
        let brute = (1..=n).find(|&k| top1(&table[k - 1]).1 >= tau);
        let d = stream_classify(&table_model(table.clone()), &flow(n, 0), "f", tau).unwrap();
        prop_assert_eq!(d.k, brute.unwrap_or(n));
        prop_assert_eq!(d.crossed_threshold, brute.is_some());
        prop_assert_eq!(d.predicted, top1(&table[d.k - 1]).0);
    }

    /// Raising τ never makes a decision earlier.
    #[test]
    fn higher_threshold_never_decides_earlier(
        table in (1usize..31).prop_flat_map(|n| prop::collection::vec(dist(3), n)),
        a in 0.34f64..1.0,
        b in 0.34f64..1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m = table_model(table.clone());
        let f = flow(table.len(), 0);
        prop_assert!(stream_classify(&m, &f, "f", lo).unwrap().k <= stream_classify(&m, &f, "f", hi).unwrap().k);
    }

    #[test]
    fn latency_cost_is_a_monotone_sigmoid(k in 0usize..200, o in 0usize..100) {
        let v = lc(k, o);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(lc(k + 1, o) >= v);
        prop_assert!(lc(k, o + 1) <= v);
    }

    /// Delaying a correct attack detection never lowers ERDE.
    #[test]
    fn erde_grows_with_delay(mut ds in prop::collection::vec(decision(), 1..40), idx in any::<prop::sample::Index>(), o in 1usize..20) {
        let i = idx.index(ds.len());
        ds[i].label = Some(2);
        ds[i].predicted = 2;
        let before = erde(&ds, 0, o, &ErdeCosts::default()).unwrap();
        ds[i].k += 1;
        let after = erde(&ds, 0, o, &ErdeCosts::default()).unwrap();
        prop_assert!(after >= before);
        prop_assert!((0.0..=1.0).contains(&before));
    }

    #[test]
    fn metric_ranges_and_confusion_totals(ds in prop::collection::vec(decision(), 1..60)) {
        let r = compute_metrics(&ds, 4, 0, 0.99, &[5], &ErdeCosts::default()).unwrap();
        let total: usize = r.confusion.iter().flatten().sum();
        prop_assert_eq!(total, ds.len());
        prop_assert_eq!(r.benign_flows + r.attack_flows, ds.len());
        for v in [r.top1_accuracy, r.fnr, r.far] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let diag: usize = (0..4).map(|i| r.confusion[i][i]).sum();
        prop_assert_eq!(r.top1_accuracy, diag as f64 / ds.len() as f64);
        if let Some(m) = r.max_earliness {
            prop_assert!(ds.iter().any(|d| d.k == m && d.crossed_threshold && d.label == Some(d.predicted)));
        }
    }

    /// Parallel evaluation equals flow-by-flow streaming, in input order.
    #[test]
    fn evaluate_matches_sequential(tables in prop::collection::vec((1usize..10).prop_flat_map(|n| prop::collection::vec(dist(2), n)), 1..12)) {
        // One model for all flows: flow i is identified by its first timestamp.
        let tables2 = tables.clone();
        let m = FnModel {
            classes: 2,
            f: move |f: &FlowRecord| {
                let t = &tables2[f.timestamps[0] as usize];
                t[f.rows() - 1].clone()
            },
        };
        let flows: Vec<FlowRecord> = tables
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let n = t.len();
                FlowRecord::new(None, Some(i % 2), 1, vec![0.0; n], (0..n).map(|_| i as f64).collect())
            })
            .collect();
        let r = evaluate(&m, &flows, 0.9, &[5], 0, &ErdeCosts::default()).unwrap();
        for (i, (d, f)) in r.decisions.iter().zip(&flows).enumerate() {
            let s = stream_classify(&m, f, &format!("#{i}"), 0.9).unwrap();
            prop_assert_eq!(d, &s);
        }
    }
}
