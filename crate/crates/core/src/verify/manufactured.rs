//! Problem cases with closed-form optimal solutions.
//!
//! With `g(t) = t²(1-t)²` and `ψ(x, y) = g(x) g(y)` the square cases use
//!
//! ```text
//! y = curl ψ          r = x³y³ - 1/16
//! p = curl (3ψ)       s = xy - 1/4
//! u = Π_[ua,ub](-p/α)
//! f = -Δy + ∇r - u    y_d = y + Δp + ∇s
//! ```
//!
//! which satisfies the state equation `a(y, w) - b(w, r) = (f + u, w)` and the
//! adjoint equation `a(p, w) + b(w, s) = (y - y_d, w)` with
//! `b(w, q) = ∫ q div w`.

use alloc::string::ToString;
use alloc::sync::Arc;

use crate::assembly::ProblemData;
use crate::control::clamp;
use crate::femspace::{Grad, GradFn, ScalarFn, VectorFn};
use crate::mesh::DomainSpec;
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseId {
    /// Stokes flow with a trivial adjoint (`y_d = y`, zero control).
    StokesSquare,
    OcpSquare,
    /// A vortex next to the reentrant corner of the L-shape, centred on the
    /// corner bisector; no closed form.
    OcpLShape,
    /// All data zero.
    Zero,
}

impl CaseId {
    pub const ALL: [CaseId; 4] = [CaseId::StokesSquare, CaseId::OcpSquare, CaseId::OcpLShape, CaseId::Zero];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownCase(s.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            CaseId::StokesSquare => "stokes-square",
            CaseId::OcpSquare => "ocp-square",
            CaseId::OcpLShape => "ocp-lshape",
            CaseId::Zero => "zero",
        }
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            CaseId::OcpSquare => 0.1,
            _ => 0.01,
        }
    }

    pub fn default_bounds(self) -> (Point, Point) {
        match self {
            CaseId::OcpSquare => ([-0.2, -0.2], [0.2, 0.2]),
            CaseId::OcpLShape => ([-0.1, -0.1], [0.1, 0.1]),
            _ => ([-1.0, -1.0], [1.0, 1.0]),
        }
    }

    /// Coarse initial mesh of the case.
    pub fn domain(self) -> DomainSpec {
        match self {
            CaseId::OcpLShape => DomainSpec::l_shape(1),
            _ => DomainSpec::unit_square(2),
        }
    }
}

/// Closed-form optimal quintuple.
#[derive(Clone)]
pub struct ExactSolution {
    pub y: VectorFn,
    pub grad_y: GradFn,
    pub r: ScalarFn,
    pub p: VectorFn,
    pub grad_p: GradFn,
    pub s: ScalarFn,
    pub u: VectorFn,
}

#[derive(Clone)]
pub struct ManufacturedCase {
    pub id: CaseId,
    pub domain: DomainSpec,
    pub data: ProblemData,
    pub exact: Option<ExactSolution>,
}

/// Case with its default parameters.
pub fn manufactured_problem(id: &str) -> Result<ManufacturedCase> {
    let id = CaseId::parse(id)?;
    let (ua, ub) = id.default_bounds();
    manufactured_with(id, id.default_alpha(), ua, ub)
}

/// Case with explicit regularization and bounds. The stokes-square case
/// needs `0 ∈ [ua, ub]` so that its zero control is admissible.
pub fn manufactured_with(id: CaseId, alpha: f64, ua: Point, ub: Point) -> Result<ManufacturedCase> {
    let check = ProblemData {
        f: zero_vec(),
        y_d: zero_vec(),
        alpha,
        ua,
        ub,
    };
    check.validate()?;
    let (data, exact) = match id {
        CaseId::Zero => (check, Some(zero_solution())),
        CaseId::StokesSquare => {
            if !(ua[0] <= 0.0 && ua[1] <= 0.0 && ub[0] >= 0.0 && ub[1] >= 0.0) {
                return Err(Error::InvalidParameter("stokes-square needs 0 inside the bounds".into()));
            }
            square_case(0.0, alpha, ua, ub)
        }
        CaseId::OcpSquare => square_case(3.0, alpha, ua, ub),
        CaseId::OcpLShape => {
            let f: VectorFn = Arc::new(|x: Point| {
                let (a, b) = (x[0] + 0.15, x[1] - 0.15);
                let e = 200.0 * libm::exp(-(a * a + b * b) / 0.04);
                [-e * b, e * a]
            });
            (
                ProblemData {
                    f,
                    y_d: zero_vec(),
                    alpha,
                    ua,
                    ub,
                },
                None,
            )
        }
    };
    Ok(ManufacturedCase {
        id,
        domain: id.domain(),
        data,
        exact,
    })
}

fn zero_vec() -> VectorFn {
    Arc::new(|_x: Point| [0.0, 0.0])
}

fn zero_solution() -> ExactSolution {
    let zg: GradFn = Arc::new(|_x: Point| [[0.0; 2]; 2]);
    let zs: ScalarFn = Arc::new(|_x: Point| 0.0);
    ExactSolution {
        y: zero_vec(),
        grad_y: zg.clone(),
        r: zs.clone(),
        p: zero_vec(),
        grad_p: zg,
        s: zs,
        u: zero_vec(),
    }
}

/// `g` and its first four derivatives at `t`.
fn g(t: f64) -> [f64; 5] {
    let t2 = t * t;
    [
        t2 * (1.0 - t) * (1.0 - t),
        2.0 * t - 6.0 * t2 + 4.0 * t2 * t,
        2.0 - 12.0 * t + 12.0 * t2,
        -12.0 + 24.0 * t,
        24.0,
    ]
}

/// `curl ψ = (∂_y ψ, -∂_x ψ)`.
fn curl_psi(x: Point) -> Point {
    let (a, b) = (g(x[0]), g(x[1]));
    [a[0] * b[1], -a[1] * b[0]]
}

fn grad_curl_psi(x: Point) -> Grad {
    let (a, b) = (g(x[0]), g(x[1]));
    [[a[1] * b[1], a[0] * b[2]], [-a[2] * b[0], -a[1] * b[1]]]
}

fn lap_curl_psi(x: Point) -> Point {
    let (a, b) = (g(x[0]), g(x[1]));
    [a[2] * b[1] + a[0] * b[3], -a[3] * b[0] - a[1] * b[2]]
}

/// Square case with adjoint `p = c · curl ψ`; `c = 0` gives pure Stokes.
fn square_case(c: f64, alpha: f64, ua: Point, ub: Point) -> (ProblemData, Option<ExactSolution>) {
    let (sa, sb) = if c == 0.0 { (0.0, 0.0) } else { (1.0, 1.0) };
    let control = move |x: Point| {
        let p = curl_psi(x);
        clamp([-c * p[0] / alpha, -c * p[1] / alpha], ua, ub)
    };
    let f: VectorFn = Arc::new(move |x: Point| {
        let l = lap_curl_psi(x);
        let u = control(x);
        let (xx, yy) = (x[0], x[1]);
        [
            -l[0] + 3.0 * xx * xx * yy * yy * yy - u[0],
            -l[1] + 3.0 * xx * xx * xx * yy * yy - u[1],
        ]
    });
    let y_d: VectorFn = Arc::new(move |x: Point| {
        let y = curl_psi(x);
        let l = lap_curl_psi(x);
        [y[0] + c * l[0] + sa * x[1], y[1] + c * l[1] + sb * x[0]]
    });
    let exact = ExactSolution {
        y: Arc::new(curl_psi),
        grad_y: Arc::new(grad_curl_psi),
        r: Arc::new(|x: Point| x[0] * x[0] * x[0] * x[1] * x[1] * x[1] - 1.0 / 16.0),
        p: Arc::new(move |x: Point| {
            let v = curl_psi(x);
            [c * v[0], c * v[1]]
        }),
        grad_p: Arc::new(move |x: Point| {
            let d = grad_curl_psi(x);
            [[c * d[0][0], c * d[0][1]], [c * d[1][0], c * d[1][1]]]
        }),
        s: Arc::new(move |x: Point| sa * (x[0] * x[1] - 0.25)),
        u: Arc::new(control),
    };
    (ProblemData { f, y_d, alpha, ua, ub }, Some(exact))
}

impl ManufacturedCase {
    /// Weak residuals of the exact solution against the test fields
    /// `w₁ = (b, 0)`, `w₂ = (0, x b)` with `b = x(1-x)y(1-y)`, computed on
    /// an `n × n` square mesh by the degree-4 rule with one subdivision.
    /// Returns `[state w₁, state w₂, adjoint w₁, adjoint w₂]`, or `None`
    /// without a closed form.
    pub fn weak_residuals(&self, n: usize) -> Option<[f64; 4]> {
        let ex = self.exact.as_ref()?;
        let mesh = crate::mesh::make_mesh(&DomainSpec::unit_square(n)).ok()?;
        let tests: [&dyn Fn(Point) -> (Point, Grad); 2] = [
            &|x: Point| {
                let (bx, by) = (x[0] * (1.0 - x[0]), x[1] * (1.0 - x[1]));
                ([bx * by, 0.0], [[(1.0 - 2.0 * x[0]) * by, bx * (1.0 - 2.0 * x[1])], [0.0, 0.0]])
            },
            &|x: Point| {
                let (bx, by) = (x[0] * x[0] * (1.0 - x[0]), x[1] * (1.0 - x[1]));
                (
                    [0.0, bx * by],
                    [[0.0, 0.0], [(2.0 * x[0] - 3.0 * x[0] * x[0]) * by, bx * (1.0 - 2.0 * x[1])]],
                )
            },
        ];
        let mut out = [0.0; 4];
        for k in 0..mesh.num_elements() {
            let area = mesh.area(k);
            crate::quadrature::for_each_point(1, &[], |b, wt| {
                let x = mesh.point(k, &b);
                let (gy, gp) = ((ex.grad_y)(x), (ex.grad_p)(x));
                let (f, u, y, yd) = ((self.data.f)(x), (ex.u)(x), (ex.y)(x), (self.data.y_d)(x));
                let (r, s) = ((ex.r)(x), (ex.s)(x));
                for (i, t) in tests.iter().enumerate() {
                    let (w, dw) = t(x);
                    let div = dw[0][0] + dw[1][1];
                    let a_y = gy[0][0] * dw[0][0] + gy[0][1] * dw[0][1] + gy[1][0] * dw[1][0] + gy[1][1] * dw[1][1];
                    let a_p = gp[0][0] * dw[0][0] + gp[0][1] * dw[0][1] + gp[1][0] * dw[1][0] + gp[1][1] * dw[1][1];
                    let load_s = (f[0] + u[0]) * w[0] + (f[1] + u[1]) * w[1];
                    let load_a = (y[0] - yd[0]) * w[0] + (y[1] - yd[1]) * w[1];
                    out[i] += area * wt * (a_y - r * div - load_s);
                    out[2 + i] += area * wt * (a_p + s * div - load_a);
                }
            });
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_case_is_rejected() {
        assert!(matches!(manufactured_problem("ocp-cube"), Err(Error::UnknownCase(_))));
        for c in CaseId::ALL {
            assert_eq!(CaseId::parse(c.name()).unwrap(), c);
        }
    }

    #[test]
    fn exact_fields_are_consistent() {
        for id in ["stokes-square", "ocp-square", "zero"] {
            let case = manufactured_problem(id).unwrap();
            let res = case.weak_residuals(16).unwrap();
            assert!(res.iter().all(|r| r.abs() <= 1e-10), "{id}: {res:?}");
        }
    }

    #[test]
    fn divergence_free_and_projected() {
        let case = manufactured_problem("ocp-square").unwrap();
        let ex = case.exact.unwrap();
        for i in 0..=10 {
            for j in 0..=10 {
                let x = [i as f64 / 10.0, j as f64 / 10.0];
                let (gy, gp) = ((ex.grad_y)(x), (ex.grad_p)(x));
                assert!((gy[0][0] + gy[1][1]).abs() < 1e-15);
                assert!((gp[0][0] + gp[1][1]).abs() < 1e-15);
                let p = (ex.p)(x);
                assert_eq!((ex.u)(x), clamp([-p[0] / 0.1, -p[1] / 0.1], [-0.2; 2], [0.2; 2]));
            }
        }
    }
}
