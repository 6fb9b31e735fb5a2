//! Property suites shared by the per-area test files and the acceptance run.
//!
//! Each suite drives proptest with a fixed RNG and returns a one-line
//! summary on success or the first counterexample on failure.

#![allow(dead_code)]

use nbs_core::autodiff::{self, hessian_directional, Real, ScalarFn, Tape, Var};
use nbs_core::blocks::{
    damping_matrix, phi_hessian_at, phi_value, DampingD, NbsParams, PotentialPhi, SRELU_D,
};
use nbs_core::controller::ReferenceTrajectory;
use nbs_core::harness::{bptt_loss, TrainConfig};
use nbs_core::lnn::LagrangianNet;
use nbs_core::nets::{ficnn_forward, picnn_forward, Activation, FicnnParams, Network, PicnnParams};
use nbs_core::numerics::{lambda_min, rk4_step, solve_spd, OdeState, SmallMatrix};
use nbs_core::plants::{coriolis, forward_dynamics, mass_matrix_rate, PlanarArm};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Suite = fn() -> Result<String, String>;

pub fn runner(cases: u32) -> TestRunner {
    let cfg = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

fn vec_in(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-r..r, n)
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if ok {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

fn sym_part_max(a: &SmallMatrix) -> f64 {
    let n = a.rows();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            m = m.max((a[(i, j)] + a[(j, i)]).abs());
        }
    }
    m
}

// ---------------------------------------------------------------- convexity

pub const CONVEX_SLACK: f64 = 1e-9;

/// Midpoint convexity of FICNN(x) and of PICNN(c, ·) for fixed context c,
/// 10⁴ checks in total.
pub fn convexity() -> Result<String, String> {
    let ficnns: Vec<FicnnParams> = (0..5)
        .flat_map(|s| {
            [
                FicnnParams::init(
                    3,
                    &[16, 16, 1],
                    Activation::Srelu(SRELU_D),
                    Activation::Srelu(SRELU_D),
                    false,
                    s,
                ),
                FicnnParams::init(
                    3,
                    &[8, 8, 8, 1],
                    Activation::Softplus,
                    Activation::Identity,
                    true,
                    s + 100,
                ),
            ]
        })
        .collect();
    let picnns: Vec<PicnnParams> = (0..10)
        .map(|s| {
            PicnnParams::init(
                2,
                3,
                &[16, 16, 1],
                Activation::Softplus,
                Activation::Identity,
                s,
            )
        })
        .collect();
    let strat = (0..ficnns.len(), vec_in(3, 3.0), vec_in(3, 3.0));
    run(5000, strat, |(k, x, y)| {
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let f = |v: &[f64]| ficnn_forward(&ficnns[k], v).unwrap();
        let (fm, fx, fy) = (f(&mid), f(&x), f(&y));
        check(fm <= 0.5 * (fx + fy) + CONVEX_SLACK, || {
            format!("FICNN {k}: f(mid) = {fm}, avg = {}", 0.5 * (fx + fy))
        })
    })?;
    let strat = (
        0..picnns.len(),
        vec_in(2, 3.0),
        vec_in(3, 3.0),
        vec_in(3, 3.0),
    );
    run(5000, strat, |(k, c, x, y)| {
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let f = |v: &[f64]| picnn_forward(&picnns[k], &c, v).unwrap();
        let (fm, fx, fy) = (f(&mid), f(&x), f(&y));
        check(fm <= 0.5 * (fx + fy) + CONVEX_SLACK, || {
            format!("PICNN {k}: f(mid) = {fm}, avg = {}", 0.5 * (fx + fy))
        })
    })?;
    Ok("10000 midpoint checks within 1e-9".into())
}

// ------------------------------------------------------------ potential Φ

fn spd(n: usize) -> impl Strategy<Value = SmallMatrix> {
    (vec_in(n * n, 1.0), 0.05f64..2.0).prop_map(move |(a, shift)| {
        let a = SmallMatrix::from_vec(n, n, a);
        a.transpose()
            .matmul(&a)
            .add(&SmallMatrix::identity(n).scale(shift))
    })
}

/// Φ(0) = 0 and λ_min(HΦ(z)) ≥ 2λ_min(S) − 1e-8.
pub fn potential() -> Result<String, String> {
    let strat = (1usize..=3).prop_flat_map(|n| (spd(n), any::<u64>(), vec_in(n, 3.0)));
    run(300, strat, |(s, seed, z)| {
        let n = s.rows();
        let lam_s = lambda_min(&s).unwrap();
        let phi = PotentialPhi::new(n, &[8, 8], s, seed % 1000);
        let at0 = phi_value(&phi, &vec![0.0; n]).unwrap();
        check(at0 == 0.0, || format!("Φ(0) = {at0}"))?;
        for point in [vec![0.0; n], z] {
            let h = phi_hessian_at(&phi, &point).unwrap();
            let lam = lambda_min(&h).unwrap();
            check(lam >= 2.0 * lam_s - 1e-8, || {
                format!("λ_min(HΦ) = {lam} < 2·{lam_s} at {point:?}")
            })?;
        }
        Ok(())
    })?;
    Ok("Φ(0) = 0, HΦ ⪰ 2λ_min(S) − 1e-8 on 300 draws".into())
}

// ---------------------------------------------------------------- damping D

/// D symmetric with λ_min(D) ≥ ε under ridge ε.
pub fn damping() -> Result<String, String> {
    let strat = (1usize..=4).prop_flat_map(|n| {
        (
            Just(n),
            any::<u64>(),
            0.01f64..1.0,
            0.0f64..1.0,
            vec_in(n, 5.0),
        )
    });
    run(500, strat, |(n, seed, m, ridge, z)| {
        let d = DampingD::new(n, &[8, 8], m, ridge, seed % 1000);
        let dm = damping_matrix(&d, &z).unwrap();
        check(dm.max_asymmetry() <= 1e-12, || {
            format!("asymmetry {}", dm.max_asymmetry())
        })?;
        let lam = lambda_min(&dm).unwrap();
        check(lam >= ridge - 1e-12 && lam > 0.0, || {
            format!("λ_min(D) = {lam} with ridge {ridge}")
        })
    })?;
    Ok("symmetric, λ_min ≥ ε on 500 draws".into())
}

// ------------------------------------------------------------------- plants

fn arm(n: usize) -> impl Strategy<Value = PlanarArm> {
    (
        proptest::collection::vec(0.2f64..3.0, n),
        proptest::collection::vec(0.2f64..2.0, n),
    )
        .prop_map(|(m, l)| PlanarArm::new(m, l, 9.8).unwrap())
}

/// ‖(Ṁ − 2C) + (Ṁ − 2C)ᵀ‖∞ ≤ 1e-8 on random arms and states.
pub fn plant_skew() -> Result<String, String> {
    let strat = (1usize..=5).prop_flat_map(|n| (arm(n), vec_in(n, 3.2), vec_in(n, 5.0)));
    run(500, strat, |(arm, q, qd)| {
        let md = mass_matrix_rate(&arm, &q, &qd).unwrap();
        let c = coriolis(&arm, &q, &qd).unwrap();
        let r = sym_part_max(&md.sub(&c.scale(2.0)));
        check(r <= 1e-8, || format!("skew residual {r}"))
    })?;
    Ok("skew residual ≤ 1e-8 on 500 draws".into())
}

/// Energy drift of free motion over 10 s at dt = 1e-3 under RK4.
pub fn energy_drift() -> Result<String, String> {
    let strat = (2usize..=3).prop_flat_map(|n| (arm(n), vec_in(n, 1.5), vec_in(n, 1.0)));
    let worst = std::cell::Cell::new(0.0f64);
    run(4, strat, |(arm, q0, qd0)| {
        let n = arm.dim();
        let zero = vec![0.0; n];
        let mut s = OdeState {
            t: 0.0,
            y: q0.iter().chain(&qd0).copied().collect(),
        };
        let e0 = arm.energy(&q0, &qd0);
        for _ in 0..10_000 {
            s = rk4_step(
                |_, y: &[f64]| {
                    let a = forward_dynamics(&arm, &y[..n], &y[n..], &zero, &zero)?;
                    Ok(y[n..].iter().copied().chain(a).collect())
                },
                &s,
                1e-3,
            )
            .unwrap();
        }
        let drift = (arm.energy(&s.y[..n], &s.y[n..]) - e0).abs();
        worst.set(worst.get().max(drift));
        check(drift <= 1e-6, || format!("energy drift {drift}"))
    })?;
    Ok(format!("max drift {:.1e} ≤ 1e-6", worst.get()))
}

// ---------------------------------------------------------------------- LNN

/// Skew-symmetry of Ṁ̂ − 2Ĉ, pair consistency Ĉq̇ + Ĝ = Ṁ̂q̇ − ∂L/∂q and
/// λ_min(M̂) ≥ ε_M on random learned models.
pub fn lnn_identities() -> Result<String, String> {
    let strat =
        (1usize..=3).prop_flat_map(|n| (Just(n), any::<u64>(), vec_in(n, 2.0), vec_in(n, 3.0)));
    run(200, strat, |(n, seed, q, qd)| {
        let net = LagrangianNet::new(n, &[8, 8], 1e-3, seed % 1000);
        let p = net.point(&q, &qd).unwrap();
        let c = p.coriolis();
        let g = p.gravity(&qd);
        let skew = sym_part_max(&p.mdot.sub(&c.scale(2.0)));
        check(skew <= 1e-10, || format!("skew residual {skew}"))?;
        let cq = c.matvec(&qd);
        let mq = p.mdot.matvec(&qd);
        let pair = (0..n)
            .map(|i| (cq[i] + g[i] - (mq[i] - p.dl_dq[i])).abs())
            .fold(0.0, f64::max);
        check(pair <= 1e-10, || format!("pair residual {pair}"))?;
        let lam = lambda_min(&p.mass).unwrap();
        check(lam >= net.eps_m - 1e-9, || format!("λ_min(M̂) = {lam}"))
    })?;
    Ok("skew and pair residuals ≤ 1e-10, M̂ ⪰ ε_M on 200 draws".into())
}

// ---------------------------------------------------------------- autodiff

/// Random smooth expression over a few inputs.
#[derive(Clone, Debug)]
pub enum Expr {
    X(usize),
    C(f64),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Tanh(Box<Expr>),
    Softplus(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

impl Expr {
    pub fn eval<T: Real>(&self, x: &[T]) -> T {
        match self {
            Expr::X(i) => x[*i],
            Expr::C(c) => T::cst(*c),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Tanh(a) => a.eval(x).tanh(),
            Expr::Softplus(a) => a.eval(x).softplus(),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
        }
    }
}

impl ScalarFn for Expr {
    fn eval<T: Real>(&self, x: &[T]) -> T {
        Expr::eval(self, x)
    }
}

pub fn expr(inputs: usize) -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0..inputs).prop_map(Expr::X),
        (-2.0f64..2.0).prop_map(Expr::C)
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            inner.clone().prop_map(|a| Expr::Tanh(Box::new(a))),
            inner.clone().prop_map(|a| Expr::Softplus(Box::new(a))),
            inner.clone().prop_map(|a| Expr::Sin(Box::new(a))),
            inner.prop_map(|a| Expr::Cos(Box::new(a))),
        ]
    })
}

fn close(ad: f64, fd: f64, rel: f64) -> bool {
    (ad - fd).abs() <= rel * ad.abs().max(fd.abs()).max(1.0)
}

fn grad_fd(f: &Expr, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            (f.eval(&a) - f.eval(&b)) / (2.0 * h)
        })
        .collect()
}

/// Gradient (1e-5), Hessian (1e-4) and block-Hessian directional derivative
/// (1e-3) against central differences on 200 random expressions each.
pub fn autodiff_fd() -> Result<String, String> {
    const N: usize = 4;
    run(200, (expr(N), vec_in(N, 1.5)), |(f, x)| {
        let g = autodiff::grad(&f, &x).unwrap();
        let fd = grad_fd(&f, &x, 1e-5);
        for j in 0..N {
            check(close(g[j], fd[j], 1e-5), || {
                format!("grad[{j}] ad {} fd {} for {f:?}", g[j], fd[j])
            })?;
        }
        Ok(())
    })?;
    run(200, (expr(N), vec_in(N, 1.5)), |(f, x)| {
        let h = autodiff::hessian(&f, &x).unwrap();
        check(h.max_asymmetry() == 0.0, || "hessian not symmetric".into())?;
        let hs = 1e-5;
        for j in 0..N {
            let mut a = x.clone();
            let mut b = x.clone();
            a[j] += hs;
            b[j] -= hs;
            let (ga, gb) = (
                autodiff::grad(&f, &a).unwrap(),
                autodiff::grad(&f, &b).unwrap(),
            );
            for i in 0..N {
                let fd = (ga[i] - gb[i]) / (2.0 * hs);
                check(close(h[(i, j)], fd, 1e-4), || {
                    format!("H[{i},{j}] ad {} fd {fd} for {f:?}", h[(i, j)])
                })?;
            }
        }
        Ok(())
    })?;
    run(
        200,
        (expr(N), vec_in(N, 1.5), vec_in(2, 1.0)),
        |(f, x, v)| {
            let d = hessian_directional(&f, &x, 0..2, 2..4, &v).unwrap();
            let hs = 1e-4;
            let shifted = |s: f64| {
                let mut y = x.clone();
                y[0] += s * v[0];
                y[1] += s * v[1];
                autodiff::hessian(&f, &y).unwrap()
            };
            let (ha, hb) = (shifted(hs), shifted(-hs));
            for i in 0..2 {
                for j in 0..2 {
                    let fd = (ha[(2 + i, 2 + j)] - hb[(2 + i, 2 + j)]) / (2.0 * hs);
                    check(close(d[(i, j)], fd, 1e-3), || {
                        format!("dH[{i},{j}] ad {} fd {fd} for {f:?}", d[(i, j)])
                    })?;
                }
            }
            Ok(())
        },
    )?;
    through_solvers()?;
    Ok("grad 1e-5, Hessian 1e-4, third order 1e-3 on 200 expressions each".into())
}

/// Gradients through `solve_spd` and `rk4_step` against central differences.
fn solver_chain<'t>(p: &[Var<'t>]) -> Var<'t> {
    let a = SmallMatrix::from_fn(2, 2, |i, j| {
        let base = if i == j { 3.0 } else { 0.5 };
        p[0] * (0.3 * (i + j) as f64) + base
    });
    let x = solve_spd(&a, &[p[1], p[2] * p[0]]).unwrap();
    let s = OdeState { t: 0.0, y: x };
    let s = rk4_step(
        |_, y: &[Var<'t>]| Ok(vec![y[1] * p[1], (y[0] * p[2]).sin()]),
        &s,
        0.1,
    )
    .unwrap();
    s.y[0] * s.y[0] + s.y[1]
}

pub fn through_solvers() -> Result<(), String> {
    let f = solver_chain;
    let fv = |p: &[f64]| -> f64 {
        let tape = Tape::new();
        let xs: Vec<Var> = p.iter().map(|&v| tape.var(v)).collect();
        f(&xs).value()
    };
    let p0 = [0.4, -0.7, 1.3];
    let tape = Tape::new();
    let xs: Vec<Var> = p0.iter().map(|&v| tape.var(v)).collect();
    let y = f(&xs);
    let g = tape.backward(y);
    for j in 0..3 {
        let (mut a, mut b) = (p0, p0);
        a[j] += 1e-6;
        b[j] -= 1e-6;
        let fd = (fv(&a) - fv(&b)) / 2e-6;
        let ad = g.wrt(xs[j]);
        if !close(ad, fd, 1e-4) {
            return Err(format!("solver chain d/dp{j}: ad {ad} fd {fd}"));
        }
    }
    Ok(())
}

// --------------------------------------------------------------------- BPTT

pub fn small_controller(seed: u64) -> NbsParams {
    NbsParams {
        phi: PotentialPhi::new(2, &[8, 8], SmallMatrix::identity(2), seed),
        damping: DampingD::new(2, &[6], 1.0, 0.0, seed + 1),
    }
}

/// BPTT gradient over 10 steps against central differences on 20 parameter
/// coordinates, 1e-3 relative.
pub fn bptt_gradient() -> Result<String, String> {
    let arm = PlanarArm::uniform(2);
    let reference = ReferenceTrajectory::default();
    let cfg = TrainConfig {
        horizon: 0.1,
        dt: 0.01,
        alpha: 25.0,
        q0: vec![0.3, -0.2],
        qd0: vec![0.1, 0.4],
        ..TrainConfig::default()
    };
    assert_eq!(cfg.steps(), 10);
    let params = small_controller(5);
    let mut tape = Tape::new();
    let lg = bptt_loss(&arm, &arm, &params, &reference, &cfg, 0, &mut tape)
        .map_err(|e| e.to_string())?;
    if !(lg.regularizer > 0.0) {
        return Err("regularizer inactive; gradient check would not cover it".into());
    }
    let sizes: Vec<usize> = params.params().iter().map(|p| p.data.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let flat = rng.random_range(0..total);
        let (mut blk, mut idx) = (0, flat);
        while idx >= sizes[blk] {
            idx -= sizes[blk];
            blk += 1;
        }
        let h = 1e-6;
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.params_mut()[blk].data[idx] += delta;
            let mut t = Tape::new();
            bptt_loss(&arm, &arm, &p, &reference, &cfg, 0, &mut t)
                .unwrap()
                .loss
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let ad = lg.grads[blk][idx];
        let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(err);
        if err > 1e-3 {
            return Err(format!("block {blk} index {idx}: ad {ad} fd {fd}"));
        }
    }
    Ok(format!("20 coordinates, worst relative error {worst:.1e}"))
}

// -------------------------------------------------------------- determinism

/// Identical seeds give bit-identical initializations, training runs and
/// rollouts.
pub fn determinism() -> Result<String, String> {
    use nbs_core::controller::NbsController;
    use nbs_core::harness::{rollout, train_controller, Policy, SimConfig};
    use nbs_core::lnn::{generate_free_motion, train_lnn, LnnTrainConfig};

    let arm = PlanarArm::uniform(2);
    let reference = ReferenceTrajectory::default();
    let cfg = TrainConfig {
        horizon: 0.2,
        epochs: 3,
        ..TrainConfig::default()
    };
    let train = || train_controller(&arm, &arm, small_controller(11), &reference, &cfg).unwrap();
    let (p1, r1) = train();
    let (p2, r2) = train();
    if p1 != p2 || r1 != r2 {
        return Err("controller training differs between identical runs".into());
    }
    let sim = SimConfig {
        horizon: 2.0,
        ..SimConfig::default()
    };
    let c = NbsController::new(p1, arm.clone()).unwrap();
    let l1 = rollout(&arm, Policy::Nbs(&c), &reference, &sim).unwrap();
    let l2 = rollout(&arm, Policy::Nbs(&c), &reference, &sim).unwrap();
    let bits = |l: &nbs_core::harness::RolloutLog| -> Vec<u64> {
        l.rows
            .iter()
            .flat_map(|r| r.u.iter().chain(&r.q).map(|v| v.to_bits()))
            .collect()
    };
    if bits(&l1) != bits(&l2) {
        return Err("rollouts differ".into());
    }
    let data = generate_free_motion(&arm, 200, 1e-3, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
    let lcfg = LnnTrainConfig {
        epochs: 1,
        seed: 4,
        ..LnnTrainConfig::default()
    };
    let fit = || train_lnn(LagrangianNet::new(2, &[8, 8], 1e-3, 9), &data, &lcfg).unwrap();
    let (n1, h1) = fit();
    let (n2, h2) = fit();
    if n1 != n2 || h1 != h2 {
        return Err("learned-model training differs between identical runs".into());
    }
    if LagrangianNet::new(2, &[8], 1e-3, 1) == LagrangianNet::new(2, &[8], 1e-3, 2) {
        return Err("different seeds gave identical models".into());
    }
    Ok("training, rollout and model fitting bit-identical".into())
}

pub const SUITES: [(&str, Suite); 9] = [
    ("convexity", convexity),
    ("potential", potential),
    ("damping", damping),
    ("plant skew", plant_skew),
    ("energy drift", energy_drift),
    ("lnn identities", lnn_identities),
    ("autodiff vs finite differences", autodiff_fd),
    ("bptt gradient", bptt_gradient),
    ("determinism", determinism),
];

/// Band of the srelu pair used to make exact quadratics; far wider than any
/// pre-activation in these tests.
const BAND: f64 = 1e3;

/// L_T = ½ Σₖ gₖ(q) (cₖ·q̇)² where gₖ(q) = relu(1 + aₖ·q), built from srelu
/// pairs inside a two-layer PICNN; potential part zero.
pub fn quadratic_net(n: usize, cs: &[Vec<f64>], gates: &[Vec<f64>], eps_m: f64) -> LagrangianNet {
    let k = cs.len();
    let mut net = LagrangianNet::zeros(n, &[2 * k], eps_m);
    let p = &mut net.kinetic;
    p.hidden = Activation::Srelu(BAND);
    p.ctx_act = Activation::Identity;
    for (j, c) in cs.iter().enumerate() {
        for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
            let row = 2 * j + s;
            for i in 0..n {
                p.wx[0].data[row * n + i] = sign * c[i];
                p.ctx_w[0].data[row * n + i] = gates[j][i];
            }
            p.wy_raw[0].data[row] = BAND;
            p.by[0].data[row] = 1.0;
            p.wyv[0].data[row * 2 * k + row] = 1.0;
        }
    }
    p.bx[0].data.fill(1.0);
    net.validate().unwrap();
    net
}
