//! Closed-form eigen-decomposition of symmetric 3×3 matrices.

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn normalized(a: Vec3) -> Vec3 {
    scale(a, 1.0 / dot(a, a).sqrt())
}

fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// Any unit vector orthogonal to the unit vector `v`.
fn orthogonal(v: Vec3) -> Vec3 {
    if v[0].abs() > v[1].abs() {
        normalized([-v[2], 0.0, v[0]])
    } else {
        normalized([0.0, v[2], -v[1]])
    }
}

/// Eigenvalues in descending order via the trigonometric formula.
pub fn eigenvalues_sym3(m: &Mat3) -> [f64; 3] {
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    if p1 == 0.0 {
        let mut d = [m[0][0], m[1][1], m[2][2]];
        d.sort_by(|a, b| b.total_cmp(a));
        return d;
    }
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = |i: usize, j: usize| (m[i][j] - if i == j { q } else { 0.0 }) / p;
    let det = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
        + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    [e1, 3.0 * q - e1 - e3, e3]
}

/// Unit eigenvector of a well-separated eigenvalue: the largest cross
/// product of two rows of `m − λI`.
fn isolated_eigenvector(m: &Mat3, lambda: f64) -> Option<Vec3> {
    let r = |i: usize| {
        let mut row = m[i];
        row[i] -= lambda;
        row
    };
    let candidates = [cross(r(0), r(1)), cross(r(0), r(2)), cross(r(1), r(2))];
    let best = candidates.into_iter().max_by(|a, b| dot(*a, *a).total_cmp(&dot(*b, *b)))?;
    let n = dot(best, best);
    (n > 0.0 && n.is_finite()).then(|| normalized(best))
}

/// Eigen-decomposition sorted by magnitude, `|λ1| ≤ |λ2| ≤ |λ3|`;
/// `vectors[i]` pairs with `values[i]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymEigen3 {
    pub values: [f64; 3],
    pub vectors: [Vec3; 3],
}

pub fn eig_sym3(m: &Mat3) -> SymEigen3 {
    let norm = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return SymEigen3 { values: [0.0; 3], vectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] };
    }
    if m[0][1] == 0.0 && m[0][2] == 0.0 && m[1][2] == 0.0 {
        let mut pairs = [0, 1, 2].map(|i| {
            let mut v = [0.0; 3];
            v[i] = 1.0;
            (m[i][i], v)
        });
        pairs.sort_by(|x, y| x.0.abs().total_cmp(&y.0.abs()));
        return SymEigen3 { values: pairs.map(|p| p.0), vectors: pairs.map(|p| p.1) };
    }
    // scaling keeps the cross products far from under/overflow
    let s: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| m[i][j] / norm));
    let [e1, e2, e3] = eigenvalues_sym3(&s);
    let lead = if e1 - e2 >= e2 - e3 { e1 } else { e3 };
    let v0 = isolated_eigenvector(&s, lead).unwrap_or([1.0, 0.0, 0.0]);

    // remaining pair: a 2×2 problem in the plane orthogonal to v0
    let u = orthogonal(v0);
    let w = cross(v0, u);
    let (a, b, c) = (dot(u, mat_vec(&s, u)), dot(u, mat_vec(&s, w)), dot(w, mat_vec(&s, w)));
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (sn, cs) = theta.sin_cos();
    let v1 = normalized([cs * u[0] + sn * w[0], cs * u[1] + sn * w[1], cs * u[2] + sn * w[2]]);
    let v2 = normalized(cross(v0, v1));

    let mut pairs = [v0, v1, v2].map(|v| (dot(v, mat_vec(&s, v)) * norm, v));
    pairs.sort_by(|x, y| x.0.abs().total_cmp(&y.0.abs()));
    SymEigen3 { values: pairs.map(|p| p.0), vectors: pairs.map(|p| p.1) }
}
