use nbs_core::blocks::{phi_grad, phi_hessian_at, DampingD, NbsParams, PotentialPhi};
use nbs_core::controller::{NbsController, PidBaseline, PidGains, ReferenceTrajectory};
use nbs_core::harness::{metrics, rollout, train_controller, Policy, SimConfig, TrainConfig};
use nbs_core::numerics::{lambda_min, SmallMatrix};
use nbs_core::plants::{DisturbanceModel, PlanarArm};

mod common;
use common::small_controller;

#[test]
fn unforced_plant_without_gravity_stays_at_rest() {
    let arm = PlanarArm::new(vec![1.0, 2.0], vec![0.5, 1.0], 0.0).unwrap();
    let q0 = vec![0.3, -0.8];
    let gains = PidGains {
        kp: 0.0,
        ki: 0.0,
        kd: 0.0,
        ..PidGains::default()
    };
    let sim = SimConfig {
        horizon: 5.0,
        q0: q0.clone(),
        ..SimConfig::default()
    };
    let reference = ReferenceTrajectory::Constant { q: vec![0.0, 0.0] };
    let log = rollout::<_, PlanarArm>(
        &arm,
        Policy::Pid(PidBaseline::new(2, &gains)),
        &reference,
        &sim,
    )
    .unwrap();
    assert_eq!(log.rows.len(), 501);
    for row in &log.rows {
        assert_eq!(row.u, vec![0.0, 0.0]);
        assert_eq!(row.q, q0);
        assert_eq!(row.qdot, vec![0.0, 0.0]);
    }
}

#[test]
fn masked_training_changes_nothing() {
    let arm = PlanarArm::uniform(2);
    let init = small_controller(8);
    let cfg = TrainConfig {
        horizon: 0.2,
        epochs: 3,
        train_phi: false,
        train_damping: false,
        ..TrainConfig::default()
    };
    let (trained, report) = train_controller(
        &arm,
        &arm,
        init.clone(),
        &ReferenceTrajectory::default(),
        &cfg,
    )
    .unwrap();
    assert_eq!(trained, init);
    assert!(report.loss.iter().all(|&l| l == report.final_loss));
}

#[test]
fn regularizer_lifts_the_potential_curvature_at_the_origin() {
    let arm = PlanarArm::uniform(2);
    let s = SmallMatrix::from_fn(2, 2, |i, j| if i == j { 0.1 } else { 0.0 });
    let mut init = NbsParams {
        phi: PotentialPhi::new(2, &[8, 8], s, 3),
        damping: DampingD::new(2, &[6], 1.0, 0.0, 4),
    };
    // Shrink ψ so that the requirement starts out violated.
    for w in init.phi.psi.wy_raw.last_mut().unwrap().data.iter_mut() {
        *w *= 0.1;
    }
    let before = lambda_min(&phi_hessian_at(&init.phi, &[0.0, 0.0]).unwrap()).unwrap();
    assert!(before < 0.5, "{before}");
    let cfg = TrainConfig {
        horizon: 0.2,
        epochs: 100,
        lr: 1e-2,
        lr_decay: 1.0,
        alpha: 1.0,
        ..TrainConfig::default()
    };
    let (trained, report) =
        train_controller(&arm, &arm, init, &ReferenceTrajectory::default(), &cfg).unwrap();
    assert!(report.regularizer[0] > 0.5);
    let after = lambda_min(&phi_hessian_at(&trained.phi, &[0.0, 0.0]).unwrap()).unwrap();
    assert!(after >= 1.0 - 1e-6, "{after}");
}

#[test]
fn ridge_damping_bounds_the_steady_potential_gradient() {
    let arm = PlanarArm::uniform(2);
    let tau = vec![1.0, 1.0];
    let d: f64 = tau.iter().map(|t| t * t).sum();
    let params = NbsParams {
        phi: PotentialPhi::new(2, &[16, 16], SmallMatrix::identity(2), 12),
        damping: DampingD::new(2, &[16], 1.0, 0.5, 13),
    };
    let ctrl = NbsController::new(params.clone(), arm.clone()).unwrap();
    let sim = SimConfig {
        disturbance: DisturbanceModel::Constant { tau },
        ..SimConfig::default()
    };
    let log = rollout(
        &arm,
        Policy::Nbs(&ctrl),
        &ReferenceTrajectory::default(),
        &sim,
    )
    .unwrap();
    let end = log.rows.last().unwrap().t;
    let worst = log
        .rows
        .iter()
        .filter(|r| r.t >= end - 30.0)
        .map(|r| {
            phi_grad(&params.phi, &r.z1)
                .unwrap()
                .iter()
                .map(|g| g * g)
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    assert!(worst <= 0.5 * d + 1e-3, "{worst}");
    assert!(metrics(&log).unwrap().steady_state_error > 0.0);
}
