use proptest::prelude::*;
use robcomp_harness::metrics::{aggregate_trials, log_checkpoints, read_trace, write_trace, Metric, TraceRecord};

fn record() -> impl Strategy<Value = TraceRecord> {
    let opt = || prop::option::of(prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), Just(0.0)]);
    (any::<u64>(), any::<u64>(), opt(), opt(), opt(), any::<u64>(), any::<u64>()).prop_map(
        |(iter, samples, objective, gap, mse, trunc_y, trunc_z)| TraceRecord {
            iter,
            samples,
            objective,
            gap,
            mse,
            trunc_y,
            trunc_z,
        },
    )
}

fn monotone_trace() -> impl Strategy<Value = Vec<TraceRecord>> {
    prop::collection::vec((1u64..500, 0f64..10.0), 1..30).prop_map(|steps| {
        let mut samples = 0;
        steps
            .into_iter()
            .enumerate()
            .map(|(i, (step, gap))| {
                let r = TraceRecord {
                    iter: i as u64,
                    samples,
                    objective: None,
                    gap: Some(gap),
                    mse: None,
                    trunc_y: 0,
                    trunc_z: 0,
                };
                samples += step;
                r
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn checkpoints_are_distinct_and_end_at_budget(budget in 1u64..10_000_000, count in 1usize..100) {
        let c = log_checkpoints(budget, count);
        prop_assert_eq!(c.len() as u64, (count as u64).min(budget));
        prop_assert!(c.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(c[0] >= 1);
        prop_assert_eq!(*c.last().unwrap(), budget);
    }

    #[test]
    fn trace_csv_round_trips(rows in prop::collection::vec(record(), 0..20)) {
        let mut buf = Vec::new();
        write_trace(&rows, &mut buf).unwrap();
        prop_assert_eq!(read_trace(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn identical_trials_have_zero_spread(trace in monotone_trace(), copies in 1usize..5) {
        let budget = trace.last().unwrap().samples.max(1);
        let grid = log_checkpoints(budget, 30);
        let rows = aggregate_trials(&vec![trace.clone(); copies], &grid, Metric::Gap);
        for r in rows {
            prop_assert_eq!(r.std, 0.0);
            prop_assert!(trace.iter().any(|t| t.gap == Some(r.mean)));
        }
    }
}
