use hnoma_core::beamforming::{sinr_noma, BeamRoute};
use hnoma_core::benchmarks::{run_benchmark, BenchmarkContext, Scheme};
use hnoma_core::channel::{read_channel_dump, write_channel_dump, ClusterChannels};
use hnoma_core::harness::ExperimentConfig;
use hnoma_core::linalg::CVector;
use hnoma_core::oracle::scalar_pipeline_oracle;
use hnoma_core::protocol::{audit_solution, solve_joint, KOutcome};
use hnoma_core::Error;
use num_complex::Complex64;

fn collinear_clusters(m: usize, gain_s: f64, gain_b: f64) -> Vec<ClusterChannels> {
    let dir: Vec<Complex64> = (0..3)
        .map(|i| Complex64::from_polar(1.0 / 3f64.sqrt(), 0.7 * i as f64))
        .collect();
    let h = CVector::new(dir);
    (0..m)
        .map(|_| ClusterChannels::new(h.scale_re(gain_s.sqrt()), h.scale_re(gain_b.sqrt())).unwrap())
        .collect()
}

#[test]
fn joint_solver_matches_scalar_recomputation() {
    let cfg = ExperimentConfig::default();
    let registry = cfg.load_registry().unwrap();
    let sys = cfg.system();
    for (gs, gb) in [(1e-2, 1e-3), (4e-3, 4e-3), (2e-3, 5e-3)] {
        let channels = collinear_clusters(2, gs, gb);
        let joint = solve_joint(&channels, &cfg.targets, &sys, &registry).unwrap();
        let scalar = scalar_pipeline_oracle(gs, gb, 2, &cfg.targets, &sys, &registry).unwrap();
        assert_eq!(joint.k_opt, scalar.k_opt);
        let gap = (joint.avg_power_w - scalar.avg_power_w).abs() / scalar.avg_power_w;
        assert!(gap < 1e-6, "gains ({gs}, {gb}): relative gap {gap:e}");
        assert!(joint.routes.iter().all(|r| *r == BeamRoute::Collinear));
    }
}

#[test]
fn default_trials_pass_the_constraint_audit() {
    let cfg = ExperimentConfig::default();
    let registry = cfg.load_registry().unwrap();
    let sys = cfg.system();
    for trial in 0..20 {
        let channels = cfg.draw_trial(trial, cfg.m, cfg.n).unwrap();
        let sol = solve_joint(&channels, &cfg.targets, &sys, &registry).unwrap();
        let audit = audit_solution(&channels, &cfg.targets, &sys, &registry, &sol).unwrap();
        assert!(audit.passes(sys.b0_hz), "trial {trial}: {audit:?}");
        assert!(audit.bandwidth_model_gap < 1e-10, "trial {trial}: {audit:?}");

        let best = sol
            .per_k_trace
            .iter()
            .filter_map(|(k, o)| o.power().map(|p| (*k, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best.0, sol.k_opt);
        assert!(sol.per_k_trace.iter().all(|(_, o)| matches!(o, KOutcome::Feasible(_))));
    }
}

#[test]
fn sic_benchmarks_respect_their_constraints() {
    let cfg = ExperimentConfig::default();
    let registry = cfg.load_registry().unwrap();
    let sys = cfg.system();
    for trial in 0..10 {
        let channels = cfg.draw_trial(trial, cfg.m, cfg.n).unwrap();
        let joint = solve_joint(&channels, &cfg.targets, &sys, &registry).unwrap();
        let ctx = BenchmarkContext {
            channels: &channels,
            targets: &cfg.targets,
            sys: &sys,
            k: joint.k_opt,
            gamma_s0: joint.gamma_s0,
        };
        for scheme in [Scheme::Mrt, Scheme::ObRb] {
            let res = run_benchmark(scheme, &ctx, cfg.seed, trial).unwrap();
            let Some(avg) = res.avg_power_w else { continue };
            assert!(
                joint.avg_power_w <= avg * (1.0 + 1e-9),
                "{scheme} beat the joint optimum on trial {trial}"
            );
            for ((ch, sol), &b) in channels.iter().zip(&res.beams).zip(&res.alloc.b_noma) {
                let noise = cfg.n0_w_per_hz * b;
                let gb0 = (cfg.targets.r0 / b * std::f64::consts::LN_2).exp_m1();
                let (b_at_s, s, b_own) = sinr_noma(ch, sol, noise);
                assert!(s >= joint.gamma_s0 * (1.0 - 1e-9));
                assert!(b_at_s >= gb0 * (1.0 - 1e-9));
                assert!(b_own >= gb0 * (1.0 - 1e-9));
            }
        }
    }
}

#[test]
fn channel_dump_replays_harness_draws() {
    let cfg = ExperimentConfig::default();
    let trials: Vec<Vec<ClusterChannels>> = (0..3).map(|t| cfg.draw_trial(t, cfg.m, cfg.n).unwrap()).collect();
    let rows: Vec<(u64, u32, &ClusterChannels)> = trials
        .iter()
        .enumerate()
        .flat_map(|(t, chs)| chs.iter().enumerate().map(move |(c, ch)| (t as u64, c as u32, ch)))
        .collect();
    let mut buf = Vec::new();
    write_channel_dump(&mut buf, &rows).unwrap();
    let back = read_channel_dump(buf.as_slice()).unwrap();
    assert_eq!(back.len(), rows.len());
    for (t, c, ch) in rows {
        let r = &back[&(t, c)];
        assert_eq!(r.h_s, ch.h_s);
        assert_eq!(r.h_b, ch.h_b);
    }
}

#[test]
fn config_file_round_trip_and_rejection() {
    let cfg = ExperimentConfig::from_toml_str("m = 2\nn = 6\n[targets]\neps0 = 0.85\ns0 = 2e4\nr0 = 5e5\n").unwrap();
    assert_eq!((cfg.m, cfg.n), (2, 6));
    assert_eq!(cfg.targets.eps0, 0.85);
    assert_eq!(cfg.trials, ExperimentConfig::default().trials);

    assert!(matches!(
        ExperimentConfig::from_toml_str("antennas = 4\n"),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        ExperimentConfig::from_toml_str("m = 0\n"),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        ExperimentConfig::from_toml_str("distance_s_m = [30.0, 10.0]\n"),
        Err(Error::Config(_))
    ));
}
