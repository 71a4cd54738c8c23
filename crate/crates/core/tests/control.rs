use std::sync::Arc;

use cr_afem::afem::{afem_run, reduction_fit, AfemConfig, NoClock};
use cr_afem::assembly::ProblemData;
use cr_afem::control::{integrate_clamped, vi_residual, ClampedField, KktOptions, KktSystem, SolverKind};
use cr_afem::femspace::{interpolate, Analytic, CrSpace};
use cr_afem::mesh::{make_mesh, DomainSpec, DomainTag, Mesh};
use cr_afem::quadrature::{subdivide, TRI_DEGREE4};
use cr_afem::verify::manufactured_problem;

#[test]
fn clamped_quadrature_matches_brute_force_on_one_triangle() {
    let mesh = Arc::new(
        Mesh::from_parts(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![([0, 1, 2], 0, 0, None)],
            DomainTag::Polygon,
        )
        .unwrap(),
    );
    let space = CrSpace::new(mesh.clone(), false);
    // -p/α = (4x - 2, 1 - 3y) clamps at x = 1/2 and y = 1/3
    let p = interpolate(&space, &Analytic(Arc::new(|x: [f64; 2]| [2.0 - 4.0 * x[0], 3.0 * x[1] - 1.0]))).unwrap();
    let field = ClampedField::new(p, 1.0, [0.0, 0.0], [1.0, 1.0]);
    let got = integrate_clamped(&field, &space);

    let mut want = [[0.0; 2]; 3];
    let area = mesh.area(0);
    for t in subdivide(9) {
        let sub = ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])).abs();
        for (q, w) in TRI_DEGREE4.iter() {
            let b: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| q[j] * t[j][i]).sum());
            let x = mesh.point(0, &b);
            let u = [(4.0 * x[0] - 2.0).clamp(0.0, 1.0), (1.0 - 3.0 * x[1]).clamp(0.0, 1.0)];
            for i in 0..3 {
                for c in 0..2 {
                    want[i][c] += area * sub * w * (1.0 - 2.0 * b[i]) * u[c];
                }
            }
        }
    }
    let e = mesh.triangles[0].edges;
    let scale = want.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    for i in 0..3 {
        for c in 0..2 {
            let g = got[space.free_index(CrSpace::dof(e[i], c))];
            assert!((g - want[i][c]).abs() <= 1e-6 * scale, "{g} vs {}", want[i][c]);
        }
    }
}

fn vortex_data(alpha: f64, bound: f64) -> ProblemData {
    ProblemData {
        f: Arc::new(|x: [f64; 2]| [x[1] - 0.5, 0.5 - x[0]]),
        y_d: Arc::new(|x: [f64; 2]| [(6.0 * x[1]).sin(), (6.0 * x[0]).cos()]),
        alpha,
        ua: [-bound, -bound],
        ub: [bound, bound],
    }
}

/// Below α ≈ ‖S*S‖ the fixed-point map is not contractive; the bounds keep
/// the active set partial.
#[test]
fn tiny_alpha_falls_back_to_active_set() {
    let mesh = Arc::new(make_mesh(&DomainSpec::unit_square(8)).unwrap());
    let opts = KktOptions {
        max_iter: 30,
        ..KktOptions::default()
    };
    let sol = KktSystem::new(&vortex_data(1e-5, 500.0), mesh, opts).unwrap().solve().unwrap();
    assert_eq!(sol.solver, SolverKind::ActiveSet);
    assert!(vi_residual(&sol) <= opts.tol);
}

#[test]
fn fixed_point_objective_is_nonincreasing_at_the_end() {
    let mesh = Arc::new(make_mesh(&DomainSpec::unit_square(8)).unwrap());
    let sol = KktSystem::new(&vortex_data(0.5, 0.3), mesh, KktOptions::default())
        .unwrap()
        .solve()
        .unwrap();
    assert_eq!(sol.solver, SolverKind::FixedPoint);
    let j = &sol.objective_history;
    assert!(j.len() >= 2, "{j:?}");
    for w in j[j.len().saturating_sub(5)..].windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{j:?}");
    }
}

#[test]
fn estimator_reduction_fit_is_contractive() {
    let case = manufactured_problem("ocp-square").unwrap();
    let cfg = AfemConfig {
        max_dofs: 8000,
        ..AfemConfig::default()
    };
    let trace = afem_run(&case.data, make_mesh(&case.domain).unwrap(), case.exact.as_ref(), &cfg, &NoClock);
    assert!(trace.failure.is_none());
    let fit = reduction_fit(&trace, 5).unwrap();
    assert_eq!(fit.transitions, 5);
    assert!(fit.q < 1.0 && fit.c >= 0.0, "{fit:?}");
    let nd = trace.ndofs();
    assert!(nd.windows(2).all(|w| w[1] > w[0]));
}
