use focf::diagnostics::{dissipation_budget, nonsingular_classifier, NonsingularClass};
use focf::flow::{parabolic_rescale, run, RescaleParams};
use focf::presets::Preset;
use focf::snapshot::{load_trajectory, save_trajectory};
use focf::{FlowKind, FlowSpec, GeometryKind, Grid2Chart, TerminationStatus};
use std::f64::consts::TAU;

fn torus(n: usize) -> Grid2Chart {
    Grid2Chart::square(TAU, n).unwrap()
}

#[test]
fn presets_parse_from_toml() {
    let p: Preset = toml::from_str("preset = \"conformal-bump\"\namplitude = 0.1\nmode = 2").unwrap();
    assert_eq!(p, Preset::ConformalBump { amplitude: 0.1, mode: 2 });
    assert!(toml::from_str::<Preset>("preset = \"flat\"\nextra = 1").is_err());
    assert!(toml::from_str::<Preset>("preset = \"sphere\"").is_err());
}

#[test]
fn flat_torus_stays_flat() {
    let spec = FlowSpec::new(FlowKind::L2Flow, GeometryKind::TorusGrid).unwrap();
    let traj = run(&Preset::Flat {}.build(torus(8)).unwrap(), &spec, 1.0).unwrap();
    assert_eq!(traj.status(), TerminationStatus::Completed);
    assert!(traj.records().all(|r| r.f == 0.0));
    assert_eq!(traj.last().state, traj.first().state);
}

#[test]
fn bump_decays_and_round_trips_through_disk() {
    let spec = FlowSpec::new(FlowKind::L2Flow, GeometryKind::TorusGrid).unwrap().with_tolerance(1e-7);
    let init = Preset::ConformalBump { amplitude: 0.05, mode: 1 }.build(torus(16)).unwrap();
    let traj = run(&init, &spec, 0.2).unwrap();
    let f: Vec<f64> = traj.records().map(|r| r.f).collect();
    assert!(f.windows(2).all(|w| w[1] <= w[0]));
    let budget = dissipation_budget(&traj).unwrap();
    assert!(budget.defect.abs() < 1e-4 * budget.initial_energy);

    let dir = std::env::temp_dir().join(format!("focf-pipeline-{}", std::process::id()));
    save_trajectory(&dir, &traj, 1).unwrap();
    let back = load_trajectory(&dir).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(back.times(), traj.times());
    assert_eq!(back.last().state, traj.last().state);
    assert_eq!(back.last().record.f, traj.last().record.f);
}

#[test]
fn rescaling_twice_is_identity() {
    let spec = FlowSpec::new(FlowKind::L2Flow, GeometryKind::TorusGrid).unwrap().with_tolerance(1e-7);
    let init = Preset::ConformalBump { amplitude: 0.05, mode: 1 }.build(torus(16)).unwrap();
    let traj = run(&init, &spec, 0.05).unwrap();
    let there = parabolic_rescale(&traj, RescaleParams { lambda: 2.0, t0: 0.0 }).unwrap();
    let back = parabolic_rescale(&there, RescaleParams { lambda: 0.5, t0: 0.0 }).unwrap();
    for (a, b) in traj.records().zip(back.records()) {
        assert!((a.t - b.t).abs() < 1e-15);
        assert!((a.f - b.f).abs() <= 1e-12 * a.f);
    }
    assert!((there.last().record.sup_rm - 0.5 * traj.last().record.sup_rm).abs() < 1e-12);
}

#[test]
fn milnor_metric_flows_toward_round() {
    let spec = FlowSpec::new(FlowKind::VolumeNormalizedL2, GeometryKind::MilnorFrame).unwrap();
    let init = Preset::Milnor { l1: 1.0, l2: 1.2, l3: 0.9 }.build(torus(8)).unwrap();
    let traj = run(&init, &spec, 5.0).unwrap();
    assert_eq!(traj.status(), TerminationStatus::Completed);
    let v0 = traj.first().record.vol;
    assert!(traj.records().all(|r| (r.vol - v0).abs() < 1e-8 * v0));
    assert!(traj.last().record.ftilde < traj.first().record.ftilde);
    let c = traj.last().state.to_flat();
    let spread = c.iter().cloned().fold(f64::MIN, f64::max) / c.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 1.01, "{c:?}");
}

#[test]
fn product_spheres_reach_the_critical_point() {
    let spec = FlowSpec::new(FlowKind::L2Flow, GeometryKind::ProductSpheres).unwrap();
    let init = Preset::ProductSpheres { a2: 2.0, b2: 1.0 }.build(torus(8)).unwrap();
    let traj = run(&init, &spec, 20.0).unwrap();
    assert_eq!(nonsingular_classifier(&traj).unwrap().class, NonsingularClass::ConvergesToCritical);
}
