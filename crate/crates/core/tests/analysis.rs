use msrnn::analysis::{
    lifetime_by_tag, recent_proportion, retained_sets, retention_matrix, token_lifetime, HeadSelect,
    TagFile, AVERAGE_TAG,
};
use msrnn::eval::{trace_driven_simulate, ScriptedTrace};
use msrnn::{Action, PolicyKind, PolicySpec, RetentionTrace, TraceEvent};
use msrnn_oracles::{matrix_from_intervals, random_script};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn spec(kind: PolicyKind, k: usize) -> Option<PolicySpec> {
    Some(PolicySpec::new(kind, k).unwrap())
}

/// One head whose positions live exactly `lifetimes[p]` steps, or until the
/// end of the run when `None`.
fn synthetic(lifetimes: &[Option<usize>], steps: usize) -> RetentionTrace {
    let mut events = Vec::new();
    for t in 0..steps {
        events.push(TraceEvent {
            step: t,
            layer: 0,
            head: 0,
            action: Action::Append,
            original_position: t,
            token_id: t as u32,
        });
        for (p, l) in lifetimes.iter().enumerate() {
            if l.is_some_and(|l| p + l == t) {
                events.push(TraceEvent {
                    step: t,
                    layer: 0,
                    head: 0,
                    action: Action::Evict,
                    original_position: p,
                    token_id: p as u32,
                });
            }
        }
    }
    RetentionTrace::new(events)
}

#[test]
fn synthetic_lifetimes_and_tags() {
    let trace = synthetic(&[Some(2), Some(4), Some(6)], 12);
    let got: Vec<f64> = token_lifetime(&trace).unwrap()[..3].iter().map(|l| l.mean_steps).collect();
    assert_eq!(got, vec![2.0, 4.0, 6.0]);

    // Tags {A: 0, 1} -> lifetimes {2, 4}, {B: 2} -> 6; rest UNK.
    let tags = TagFile::new([(0, "A".to_string()), (1, "A".into()), (2, "B".into())]).unwrap();
    let table = lifetime_by_tag(&trace, &tags).unwrap();
    let a = table.iter().find(|r| r.tag == "A").unwrap();
    let b = table.iter().find(|r| r.tag == "B").unwrap();
    assert_eq!((a.mean_steps, a.count), (3.0, 2));
    assert_eq!((b.mean_steps, b.count), (6.0, 1));
    // UNK: positions 3..11 never evicted: lifetimes 12 - p = 9..=1, mean 5.
    let unk = table.iter().find(|r| r.tag == "UNK").unwrap();
    assert_eq!((unk.mean_steps, unk.count), (5.0, 9));
    assert_eq!(table[0].tag, "B");
    let avg = table.last().unwrap();
    assert_eq!(avg.tag, AVERAGE_TAG);
    assert_eq!(avg.mean_steps, (2.0 + 4.0 + 6.0 + 45.0) / 12.0);
}

#[test]
fn window_lifetime_is_min_k_and_remaining() {
    let (k, steps) = (6, 40);
    let trace = trace_driven_simulate(&ScriptedTrace::uniform(steps, 2, 2, k), spec(PolicyKind::Window, k)).unwrap();
    for l in token_lifetime(&trace).unwrap() {
        assert_eq!(l.mean_steps, k.min(steps - l.position) as f64);
    }
}

#[test]
fn unbounded_run_is_lower_triangular() {
    let trace = trace_driven_simulate(&ScriptedTrace::uniform(9, 1, 1, 100), None).unwrap();
    let m = retention_matrix(&trace, 0, HeadSelect::Head(0)).unwrap();
    for t in 0..9 {
        assert_eq!(m.row(t), (0..=t).collect::<Vec<_>>());
    }
    for l in token_lifetime(&trace).unwrap() {
        assert_eq!(l.mean_steps, (9 - l.position) as f64);
    }
}

#[test]
fn matrix_equals_interval_reconstruction() {
    let mut rng = StdRng::seed_from_u64(4);
    for kind in PolicyKind::all(1) {
        let script = random_script(&mut rng, 64, 2, 3, 7);
        let trace = trace_driven_simulate(&script, spec(kind, 7)).unwrap();
        for l in 0..2 {
            for h in 0..3 {
                let m = retention_matrix(&trace, l, HeadSelect::Head(h)).unwrap();
                let oracle = matrix_from_intervals(&trace, l, h);
                for (t, row) in oracle.iter().enumerate() {
                    assert!(m.row(t).len() <= (t + 1).min(7));
                    for (p, &r) in row.iter().enumerate() {
                        assert_eq!(m.is_retained(t, p), r, "{kind} t={t} p={p}");
                    }
                }
            }
        }
    }
}

#[test]
fn recent_proportion_closed_forms() {
    let k = 8;
    let steps = 400;
    let script = ScriptedTrace::uniform(steps, 1, 2, k);
    let window = trace_driven_simulate(&script, spec(PolicyKind::Window, k)).unwrap();
    assert_eq!(recent_proportion(&window, k).unwrap(), 1.0);

    // Window+1 retains position 0 plus k - 1 recent states.
    let pinned = trace_driven_simulate(&script, spec(PolicyKind::WindowPin(1), k)).unwrap();
    let r = recent_proportion(&pinned, k).unwrap();
    // Steps t < k retain t + 1 recent states; from t = k on, k - 1 of k.
    let expected = ((1..=k).sum::<usize>() + (steps - k) * (k - 1)) as f64
        / ((1..=k).sum::<usize>() + (steps - k) * k) as f64;
    assert!((r - expected).abs() < 1e-12);
    assert!((r - (k - 1) as f64 / k as f64).abs() < 0.01);

    // Window+i with the pinned prefix removed is entirely recent.
    let sets = retained_sets(&pinned);
    for (t, layers) in sets.iter().enumerate() {
        for p in layers[0][0].iter().filter(|&&p| p >= 1) {
            assert!(p + k > t);
        }
    }
}
