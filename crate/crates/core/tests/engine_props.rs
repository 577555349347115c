use proptest::prelude::*;
use speedscale::engine::{simulate, Options, Trace};
use speedscale::policy::{compose, Policy, Scheduler, SelectionRule, SpeedRule};
use speedscale::power::PowerFunction;
use speedscale::workload::{Instance, JobSize};

fn instance_strategy(max_jobs: usize) -> impl Strategy<Value = Instance> {
    prop::collection::vec((0.0f64..3.0, 0.1f64..2.0), 1..=max_jobs).prop_map(|v| {
        Instance::from_releases(v.into_iter().map(|(r, p)| (r, JobSize::Finite(p))).collect()).unwrap()
    })
}

fn policies(alpha: f64) -> Vec<Policy> {
    let power = PowerFunction::polynomial(alpha).unwrap();
    vec![
        Policy::laps_theorem1(alpha).unwrap(),
        Policy::laps(0.5, 0.5, alpha).unwrap(),
        Policy::srpt_power_jobs(power, 1).unwrap(),
        Policy::rr_power_jobs(power, 0).unwrap(),
        Policy::rr_fixed(1.3).unwrap(),
        compose(SpeedRule::PowerEqualsJobs { power, offset: 1 }, SelectionRule::Setf, "setf").unwrap(),
    ]
}

fn run(inst: &Instance, p: &Policy, alpha: f64) -> Trace {
    simulate(inst, p, &PowerFunction::polynomial(alpha).unwrap(), &Options::default()).unwrap()
}

fn first_completion(tr: &Trace) -> f64 {
    tr.jobs.iter().filter_map(|j| j.completion).fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn traces_satisfy_invariants(inst in instance_strategy(6), alpha in prop::sample::select(vec![2.0, 2.5, 3.0])) {
        for p in policies(alpha) {
            let tr = run(&inst, &p, alpha);
            prop_assert!(tr.completed_all());
            let bad = tr.check_invariants();
            prop_assert!(bad.is_empty(), "{}: {:?}", p.name(), bad);
            for j in &tr.jobs {
                prop_assert!(j.completion.unwrap() >= j.release);
            }
            let c = tr.cost(None);
            prop_assert!((c.total - c.total_flow - c.total_energy).abs() <= 1e-12 * c.total.max(1.0));
        }
    }

    #[test]
    fn deterministic(inst in instance_strategy(5)) {
        for p in policies(3.0) {
            prop_assert_eq!(run(&inst, &p, 3.0), run(&inst, &p, 3.0));
        }
    }

    #[test]
    fn cost_is_monotone_in_time(inst in instance_strategy(5), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let tr = run(&inst, &Policy::laps_theorem1(3.0).unwrap(), 3.0);
        let (t1, t2) = (a.min(b) * tr.end, a.max(b) * tr.end);
        let (c1, c2) = (tr.cost(Some(t1)), tr.cost(Some(t2)));
        prop_assert!(c1.flow_integral <= c2.flow_integral + 1e-12);
        prop_assert!(c1.total_energy <= c2.total_energy + 1e-12);
    }

    #[test]
    fn nonclairvoyant_runs_agree_until_a_completion(
        jobs in prop::collection::vec((0.0f64..2.0, 0.1f64..2.0, 0.1f64..2.0), 1..6),
        alpha in prop::sample::select(vec![2.0, 3.0]),
    ) {
        let a = Instance::from_releases(jobs.iter().map(|&(r, p, _)| (r, JobSize::Finite(p))).collect()).unwrap();
        let b = Instance::from_releases(jobs.iter().map(|&(r, _, q)| (r, JobSize::Finite(q))).collect()).unwrap();
        for p in policies(alpha).into_iter().filter(|p| !p.requires_clairvoyance()) {
            let (ta, tb) = (run(&a, &p, alpha), run(&b, &p, alpha));
            let cut = first_completion(&ta).min(first_completion(&tb));
            let pa: Vec<_> = ta.intervals.iter().filter(|iv| iv.start < cut).collect();
            let pb: Vec<_> = tb.intervals.iter().filter(|iv| iv.start < cut).collect();
            prop_assert_eq!(pa.len(), pb.len());
            for (x, y) in pa.iter().zip(&pb) {
                prop_assert_eq!(x.start, y.start);
                if x.end < cut || y.end < cut {
                    prop_assert_eq!(x.end, y.end);
                }
                prop_assert_eq!(x.speed, y.speed);
                let sx: Vec<_> = x.jobs.iter().map(|j| (j.id, j.share)).collect();
                let sy: Vec<_> = y.jobs.iter().map(|j| (j.id, j.share)).collect();
                prop_assert_eq!(sx, sy);
            }
        }
    }
}

#[test]
fn flow_identity_on_a_fixed_example() {
    let inst = Instance::from_releases(vec![
        (0.0, JobSize::Finite(1.0)),
        (0.2, JobSize::Finite(0.5)),
        (1.0, JobSize::Finite(2.0)),
    ])
    .unwrap();
    for p in policies(3.0) {
        let tr = run(&inst, &p, 3.0);
        let c = tr.cost(None);
        let sum: f64 = tr.jobs.iter().map(|j| j.flow().unwrap()).sum();
        assert!((c.flow_integral - sum).abs() <= 1e-9 * sum, "{}", p.name());
        assert!((c.total_flow - sum).abs() <= 1e-9 * sum);
    }
}
