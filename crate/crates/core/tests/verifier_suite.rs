use speedscale::analysis::suite::par_map;
use speedscale::analysis::{oracle_opt, random_instance, verify, OracleGrid, PotentialParams};
use speedscale::engine::{simulate, Options};
use speedscale::policy::Policy;
use speedscale::power::PowerFunction;

struct Row {
    seed: u64,
    passed: bool,
    ratio: f64,
    max_violation: f64,
    gap: f64,
}

fn run(alpha: f64, seeds: &[u64]) -> Vec<Row> {
    let power = PowerFunction::polynomial(alpha).unwrap();
    let laps = Policy::laps_theorem1(alpha).unwrap();
    let params = PotentialParams::new(alpha).unwrap();
    par_map(seeds, |&seed| {
        let inst = random_instance(seed, 4).unwrap();
        let a = simulate(&inst, &laps, &power, &Options::default()).unwrap();
        let grid = OracleGrid::default_for(&inst, &power).unwrap();
        let o = oracle_opt(&inst, &power, &grid).unwrap();
        let rep = verify(&a, &o.trace, &params, 16).unwrap();
        Row {
            seed,
            passed: rep.passed(),
            ratio: rep.alg_cost / rep.ref_cost,
            max_violation: rep.max_violation,
            gap: (o.cost - o.search_cost).abs() / o.cost,
        }
    })
}

#[test]
fn laps_is_locally_competitive_against_the_oracle() {
    for alpha in [2.0, 3.0] {
        let seeds: Vec<u64> = (0..24).map(|i| 1000 + i).collect();
        let rows = run(alpha, &seeds);
        for r in &rows {
            assert!(r.passed, "alpha {alpha} seed {}: max violation {}", r.seed, r.max_violation);
            assert!(r.gap < 1e-9, "seed {}: engine and search disagree by {}", r.seed, r.gap);
        }
        let c = PotentialParams::new(alpha).unwrap().c;
        assert!(rows.iter().all(|r| r.ratio <= c));
    }
}

#[test]
fn oracle_is_competitive_with_a_clairvoyant_heuristic() {
    // SRPT at power n+1 is a reasonable schedule; the oracle should rarely lose to it
    let power = PowerFunction::polynomial(3.0).unwrap();
    let srpt = Policy::srpt_power_jobs(power, 1).unwrap();
    let seeds: Vec<u64> = (0..24).map(|i| 500 + i).collect();
    let worse = par_map(&seeds, |&seed| {
        let inst = random_instance(seed, 4).unwrap();
        let h = simulate(&inst, &srpt, &power, &Options::default()).unwrap().cost(None).total;
        let o = oracle_opt(&inst, &power, &OracleGrid::default_for(&inst, &power).unwrap()).unwrap().cost;
        o / h
    });
    let max = worse.iter().copied().fold(0.0, f64::max);
    eprintln!("oracle / srpt(n+1): max {max:.4}");
    assert!(max <= 1.0, "{worse:?}");
}
