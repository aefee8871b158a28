use secfu::bounds::ClusterPlan;
use secfu::montecarlo::{
    estimate_failure, estimate_failure_over, sweep, write_sweep_csv, Requirement, SweepGrid, SWEEP_SCHEMA,
};
use secfu::SystemParams;

/// N = 20, k = 5, s = 4, |A| = 5, t = 3.
fn small() -> (SystemParams, ClusterPlan) {
    let p = SystemParams {
        n_users: 20,
        frac_adversarial: 0.25,
        frac_dropout: 0.1,
        frac_unlearn_per_cluster: 0.2,
        shamir_rate: 0.5,
        security_bits: 8,
        correctness_bits: 8,
    };
    let plan = ClusterPlan::for_cluster_size(&p, 5).unwrap();
    assert_eq!((plan.n_clusters, plan.shamir_threshold), (4, 3));
    (p, plan)
}

#[test]
fn r1_rate_brackets_the_exact_probability() {
    // Probability that some cluster of 5 holds at least 3 of the 5
    // adversaries, counted exactly over all placements.
    let exact = 563.0 / 1938.0;
    let (p, plan) = small();
    let r = estimate_failure(Requirement::R1, &p, &plan, 20_000, 9).unwrap();
    assert!(r.ci95.0 <= exact && exact <= r.ci95.1, "{exact} outside {:?}", r.ci95);
}

#[test]
fn disjoint_ranges_add_up() {
    let (p, plan) = small();
    let whole = estimate_failure_over(Requirement::R1, &p, &plan, 0..4000, 5).unwrap();
    let a = estimate_failure_over(Requirement::R1, &p, &plan, 0..1500, 5).unwrap();
    let b = estimate_failure_over(Requirement::R1, &p, &plan, 1500..4000, 5).unwrap();
    assert_eq!(a.failures + b.failures, whole.failures);
    let again = estimate_failure(Requirement::R1, &p, &plan, 4000, 5).unwrap();
    assert_eq!(again, whole);
}

#[test]
fn sweep_csv_marks_infeasible_rows() {
    let mut g = SweepGrid::around(&SystemParams::reference());
    g.n_users = vec![50, 200];
    g.gamma = vec![0.2];
    let rows = sweep(&g);
    assert!(!rows[0].feasible());
    assert!(rows[1].feasible());
    let mut out = Vec::new();
    write_sweep_csv(&rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_SCHEMA);
    assert_eq!(lines[1], "N,gamma,delta,zeta,xi,sigma,eta,k1,k2,k3,k,s,tau_seq,tau_bat,feasible");
    assert!(lines[2].starts_with("50,0.2,") && lines[2].ends_with(",,,,,,,false"));
    assert!(lines[3].ends_with(",true"));
}
