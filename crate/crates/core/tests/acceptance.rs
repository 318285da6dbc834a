//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use natflow_core::diffcalc::{self, finite_diff, ScalarField};
use natflow_core::flows::{
    accelerated_flow, covariant_hessian, fisher_matrix, ggn_matrix, identity_preconditioner,
    nesterov_flow, Algorithm, XI_MIN,
};
use natflow_core::geometry::{
    pullback_connection, sampling, Diffeomorphism, Family, OptimizerState,
};
use natflow_core::harness::{
    classify_equivariance, naturality_residual, reproduce_table, standard_problem, ClassifyConfig,
    FlowBuilder, Objective, TableConfig, Verdict,
};
use natflow_core::integrate::{equivariance_drift, integrate, Scheme, DEFAULT_H_LIST};
use natflow_core::models::{
    dataset_loss, network_jacobian, Dataset, GaussianHead, Model, ParametricModel, QuadraticLoss,
};

type Check = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn table_reproduction() -> Check {
    let start = Instant::now();
    let report = reproduce_table(&TableConfig::default()).map_err(err)?;
    let elapsed = start.elapsed();
    let cells = report.entries.len();
    let ok = cells == 3 * 9 * 5 && report.is_clean() && elapsed < Duration::from_secs(300);
    let mut detail = format!(
        "{cells} cells, {} mismatches, {:.1}s",
        report.mismatches.len(),
        elapsed.as_secs_f64()
    );
    for m in &report.mismatches {
        detail.push_str("; ");
        detail.push_str(m);
    }
    Ok((ok, detail))
}

fn corpus_models() -> Vec<(Model, Dataset)> {
    [2, 3, 4, 8]
        .into_iter()
        .map(|n| {
            let p = standard_problem(n).unwrap();
            (p.model, p.data)
        })
        .collect()
}

fn gradient_oracle() -> Check {
    const TOL: f64 = 1e-5;
    let h = finite_diff::STEP;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut rng = sampling::rng_for(2, 0);
    for (model, data) in corpus_models() {
        let n = model.param_dim();
        let loss = dataset_loss(model.clone(), &data).map_err(err)?;
        for _ in 0..10 {
            let theta = sampling::uniform_vector(n, -1.5, 1.5, &mut rng);
            let g = diffcalc::gradient(&*loss, &theta).map_err(err)?;
            let fd = finite_diff::gradient(&*loss, &theta, h);
            worst = worst.max(finite_diff::max_rel_error(g.as_slice(), fd.as_slice()));
            let hess = diffcalc::hessian(&*loss, &theta).map_err(err)?;
            let fd =
                finite_diff::jacobian_of(|t| diffcalc::gradient(&*loss, t).unwrap(), &theta, h);
            worst = worst.max(finite_diff::max_rel_error(hess.as_slice(), fd.as_slice()));
            let jacs = network_jacobian(&model, &data, &theta).map_err(err)?;
            for (s, j) in data.samples().iter().zip(&jacs) {
                let fd = finite_diff::jacobian_of(
                    |t| DVector::from_vec(model.forward::<f64>(&s.x, t.as_slice())),
                    &theta,
                    h,
                );
                worst = worst.max(finite_diff::max_rel_error(j.as_slice(), fd.as_slice()));
            }
            checked += 1;
        }
    }
    for family in Family::ALL {
        for n in [2, 4, 8] {
            let g = sampling::catalog(family, n, 5).map_err(err)?;
            for _ in 0..10 {
                let theta = sampling::uniform_vector(n, -1.5, 1.5, &mut rng);
                let j = diffcalc::jacobian(&g, &theta).map_err(err)?;
                let fd = finite_diff::jacobian(&g, &theta, h);
                worst = worst.max(finite_diff::max_rel_error(j.as_slice(), fd.as_slice()));
                let jt = diffcalc::jacobian(&g.inverse_map(), &theta).map_err(err)?;
                let fd = finite_diff::jacobian(&g.inverse_map(), &theta, h);
                worst = worst.max(finite_diff::max_rel_error(jt.as_slice(), fd.as_slice()));
                checked += 1;
            }
        }
    }
    Ok((
        worst <= TOL,
        format!("{checked} points, worst relative error {worst:.2e} (≤ {TOL:e})"),
    ))
}

fn hand_derived_residuals() -> Check {
    let loss: Arc<dyn ScalarField> = Arc::new(QuadraticLoss::isotropic(1));
    let b = FlowBuilder::new(Algorithm::Gd, Objective::Loss(loss)).map_err(err)?;
    let g = Diffeomorphism::scaling(2.0, 1).map_err(err)?;
    let s = OptimizerState::first_order(DVector::from_vec(vec![1.0]));
    let gd = naturality_residual(&b, &g, &s).map_err(err)?;
    let mut ok = (gd - 1.5).abs() <= 1e-9;
    let mut detail = format!("gd doubling residual {gd:.12}");

    let n = 4;
    let loss: Arc<dyn ScalarField> = Arc::new(QuadraticLoss::isotropic(n));
    let b = FlowBuilder::new(Algorithm::Adam, Objective::Loss(loss)).map_err(err)?;
    let g = Diffeomorphism::scaling(0.5, n).map_err(err)?;
    for k in 1..=n {
        let theta = DVector::from_fn(n, |i, _| if i < k { 0.3 + 0.4 * i as f64 } else { 0.0 });
        let r = naturality_residual(&b, &g, &OptimizerState::first_order(theta)).map_err(err)?;
        let expected = 0.5 * (k as f64).sqrt();
        ok &= (r - expected).abs() <= 1e-3;
        detail.push_str(&format!("; adam k={k}: {r:.6} vs {expected:.6}"));
    }
    Ok((ok, detail))
}

fn fisher_ggn_identity() -> Check {
    let mlp = |input_dim, hidden, output_dim, hidden_bias, output_bias| Model::MlpTanh {
        input_dim,
        hidden,
        output_dim,
        hidden_bias,
        output_bias,
    };
    let pairs = [
        (mlp(1, 1, 1, false, false), "sine", 12, 1.0),
        (mlp(1, 1, 1, true, true), "sine", 7, 0.3),
        (mlp(2, 2, 1, true, false), "sine", 12, 2.5),
        (mlp(2, 2, 2, true, true), "linear", 9, 0.7),
        (
            Model::Linear {
                input_dim: 3,
                output_dim: 2,
            },
            "linear",
            10,
            4.0,
        ),
    ];
    let mut rng = sampling::rng_for(4, 0);
    let mut ok = true;
    for (model, dataset, len, variance) in pairs {
        let data =
            Dataset::builtin(dataset, model.input_dim(), model.output_dim(), len).map_err(err)?;
        let theta = sampling::uniform_vector(model.param_dim(), -1.5, 1.5, &mut rng);
        let p = model.output_dim();
        let head = GaussianHead::new(model.clone(), variance).map_err(err)?;
        let f = fisher_matrix(&head, &data, &theta).map_err(err)?;
        let m = DMatrix::identity(p, p) / variance;
        let g = ggn_matrix(&model, &data, &m, &theta).map_err(err)?;
        ok &= f.matrix == g.matrix && f.factor == g.factor;
    }
    Ok((ok, "5 model/dataset pairs compared bit for bit".into()))
}

fn covariant_hessian_tensoriality() -> Check {
    const GATE: f64 = 1e-2;
    let mut worst_cov: f64 = 0.0;
    let mut least_plain = f64::INFINITY;
    let mut skipped = 0;
    for k in 0..16u64 {
        let n = [2, 4, 8][k as usize % 3];
        let problem = standard_problem(n).map_err(err)?;
        let loss = dataset_loss(problem.model.clone(), &problem.data).map_err(err)?;
        let g = sampling::catalog(Family::Shear, n, 100 + k).map_err(err)?;
        let mut rng = sampling::rng_for(100 + k, 1);
        let theta = sampling::uniform_vector(n, -1.5, 1.5, &mut rng);
        let theta_bar = g.apply(&theta);
        let loss_bar = natflow_core::geometry::pullback_loss(&g, loss.clone()).map_err(err)?;
        let k_mat = diffcalc::jacobian(&g.inverse_map(), &theta_bar).map_err(err)?;
        let h = covariant_hessian(&*loss, None, &theta).map_err(err)?;
        let transported = k_mat.transpose() * &h * &k_mat;
        let conn = pullback_connection(&g);
        let cov = covariant_hessian(&*loss_bar, Some(&conn), &theta_bar).map_err(err)?;
        worst_cov = worst_cov.max((&cov - &transported).amax());
        let plain = diffcalc::hessian(&*loss_bar, &theta_bar).map_err(err)?;
        // The defect is ∇L contracted with the chart's second derivatives,
        // so it is only bounded below where both are appreciable.
        let curvature = diffcalc::second_derivatives(&g.inverse_map(), &theta_bar)
            .map_err(err)?
            .max_abs();
        let grad = diffcalc::gradient(&*loss, &theta).map_err(err)?.norm();
        if grad >= GATE && curvature >= GATE {
            least_plain = least_plain.min((&plain - &transported).amax());
        } else {
            skipped += 1;
        }
    }
    let ok = worst_cov <= 1e-7 && least_plain >= 1e-3;
    Ok((
        ok,
        format!(
            "covariant worst {worst_cov:.2e} (≤ 1e-7), plain least {least_plain:.2e} (≥ 1e-3), gated out as locally flat or stationary: {skipped}"
        ),
    ))
}

fn discretization_drift() -> Check {
    let start = Instant::now();
    let n = 3;
    let problem = Arc::new(standard_problem(n).map_err(err)?);
    let g = sampling::catalog(Family::Shear, n, 0).map_err(err)?;
    let mut rng = sampling::rng_for(0, 99);
    let s0 = OptimizerState::first_order(sampling::uniform_vector(n, -1.0, 1.0, &mut rng));
    let mut ok = true;
    let mut detail = Vec::new();
    for a in [Algorithm::Ngd, Algorithm::Ggn] {
        let b = FlowBuilder::new(a, Objective::Supervised(problem.clone())).map_err(err)?;
        let euler =
            equivariance_drift(&b, &g, &s0, &DEFAULT_H_LIST, 1.0, Scheme::Euler).map_err(err)?;
        let rk4 =
            equivariance_drift(&b, &g, &s0, &DEFAULT_H_LIST, 1.0, Scheme::Rk4).map_err(err)?;
        let slope = euler.slope.unwrap_or(f64::NAN);
        ok &= (0.8..=1.3).contains(&slope);
        let below = euler
            .points
            .iter()
            .zip(&rk4.points)
            .all(|(e, r)| match (e.defect, r.defect) {
                (Some(e), Some(r)) => r < e,
                _ => false,
            });
        ok &= below;
        detail.push(format!(
            "{a}: euler slope {slope:.3}, rk4 below euler at every h: {below}"
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(120);
    detail.push(format!("{:.1}s", elapsed.as_secs_f64()));
    Ok((ok, detail.join("; ")))
}

fn accelerated_reduction() -> Check {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let n = 4;
        let problem = standard_problem(n).map_err(err)?;
        let loss = dataset_loss(problem.model, &problem.data).map_err(err)?;
        let acc =
            accelerated_flow(loss.clone(), identity_preconditioner(n), 3.0, None).map_err(err)?;
        let nes = nesterov_flow(loss);
        let mut rng = sampling::rng_for(seed, 7);
        let s0 = OptimizerState::second_order(
            XI_MIN,
            sampling::uniform_vector(n, -1.5, 1.5, &mut rng),
            sampling::uniform_vector(n, -1.5, 1.5, &mut rng),
        );
        for scheme in Scheme::ALL {
            let a = integrate(&acc, &s0, 1e-2, 100, scheme).map_err(err)?;
            let b = integrate(&nes, &s0, 1e-2, 100, scheme).map_err(err)?;
            for (x, y) in a.states.iter().zip(&b.states) {
                worst = worst
                    .max((x.flatten() - y.flatten()).amax())
                    .max((x.time - y.time).abs());
            }
        }
    }
    ok &= worst <= 1e-12;
    let cfg = ClassifyConfig::default();
    let mut max_residual: f64 = 0.0;
    for n in [2, 4, 8] {
        let problem = Arc::new(standard_problem(n).map_err(err)?);
        let b = FlowBuilder::new(Algorithm::Nngd, Objective::Supervised(problem)).map_err(err)?;
        for r in classify_equivariance(&b, &Family::ALL, &cfg).map_err(err)? {
            ok &= r.verdict == Verdict::Equivariant;
            max_residual = max_residual.max(r.max_residual);
        }
    }
    Ok((
        ok,
        format!(
            "trajectory gap {worst:.1e} (≤ 1e-12); nngd max residual over five families {max_residual:.2e} (≤ 1e-7)"
        ),
    ))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let configs = [
        ("table", r#"{"experiment": "table", "seed": 0}"#),
        (
            "drift",
            r#"{"experiment": "drift", "seed": 3, "algorithms": ["ngd", "nngd"], "families": ["shear", "affine"]}"#,
        ),
        (
            "trajectory",
            r#"{"experiment": "trajectory", "seed": 1, "algorithms": ["adam", "agn"], "h_list": [0.1, 0.01]}"#,
        ),
    ];
    let mut compared = 0;
    for (name, text) in configs {
        let cfg = dir.path().join(format!("{name}.json"));
        std::fs::write(&cfg, text).map_err(err)?;
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{name}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_natflow"))
                .arg("run")
                .arg(&cfg)
                .arg("--out")
                .arg(&out)
                .output()
                .map_err(err)?
                .status;
            if !status.success() {
                return Ok((false, format!("{name} run exited with {status}")));
            }
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
                .map_err(err)?
                .map(|e| {
                    let e = e.unwrap();
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        std::fs::read(e.path()).unwrap(),
                    )
                })
                .collect();
            files.sort();
            outputs.push(files);
        }
        if outputs[0] != outputs[1] {
            return Ok((false, format!("{name} reports differ between runs")));
        }
        compared += outputs[0].len();
    }
    Ok((
        true,
        format!("{compared} files byte-identical across repeated runs"),
    ))
}

type Criterion = (&'static str, fn() -> Check);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("table reproduction", table_reproduction),
        ("gradient-check oracle", gradient_oracle),
        ("hand-derived residuals", hand_derived_residuals),
        ("fisher/ggn identity", fisher_ggn_identity),
        (
            "covariant-hessian tensoriality",
            covariant_hessian_tensoriality,
        ),
        ("discretization drift", discretization_drift),
        ("accelerated-flow reduction", accelerated_reduction),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {} [{}] {name}: {detail}",
            i + 1,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
