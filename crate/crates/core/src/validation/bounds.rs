//! Propagation of local regression errors into global error bounds for the
//! explicit scheme, via two families of polynomials in `x = Lambda_f * dt`
//! parameterized by `r = Lambda_Phi / (1 - alpha)`.

use crate::{Error, Result};

/// Values of the four polynomial families at a fixed `x`, indexed `1..=n`
/// (index 0 is unused).
#[derive(Debug, Clone, PartialEq)]
pub struct PolyTables {
    pub x: f64,
    pub r: f64,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub q0: Vec<f64>,
    pub q1: Vec<f64>,
}

/// Evaluates the recursions
/// `P0_1 = 1, P1_1 = r, Q0_1 = 0, Q1_1 = 1` and, for `i >= 2`,
/// `P0_i = (1+x) P0_{i-1} + x P1_{i-1}`, `P1_i = 2 r P0_i` (same for `Q`).
pub fn poly_tables(x: f64, r: f64, n: usize) -> PolyTables {
    let mut p0 = vec![f64::NAN; n + 1];
    let mut p1 = vec![f64::NAN; n + 1];
    let mut q0 = vec![f64::NAN; n + 1];
    let mut q1 = vec![f64::NAN; n + 1];
    if n >= 1 {
        p0[1] = 1.0;
        p1[1] = r;
        q0[1] = 0.0;
        q1[1] = 1.0;
    }
    for i in 2..=n {
        p0[i] = (1.0 + x) * p0[i - 1] + x * p1[i - 1];
        p1[i] = 2.0 * r * p0[i];
        q0[i] = (1.0 + x) * q0[i - 1] + x * q1[i - 1];
        q1[i] = 2.0 * r * q0[i];
    }
    PolyTables { x, r, p0, p1, q0, q1 }
}

/// Closed forms `(P0_i, P1_i, Q0_i, Q1_i)`, valid for `i >= 2`:
/// `P0_i = (1 + (1+r) x)(1 + (1+2r) x)^{i-2}`, `P1_i = 2 r P0_i`,
/// `Q0_i = x (1 + (1+2r) x)^{i-2}`, `Q1_i = 2 r Q0_i`.
pub fn poly_closed_form(x: f64, r: f64, i: usize) -> (f64, f64, f64, f64) {
    assert!(i >= 2, "closed forms hold from i = 2");
    let g = (1.0 + (1.0 + 2.0 * r) * x).powi(i as i32 - 2);
    let p0 = (1.0 + (1.0 + r) * x) * g;
    let q0 = x * g;
    (p0, 2.0 * r * p0, q0, 2.0 * r * q0)
}

/// One verified polynomial inequality: `lhs <= rhs`, with `sharp` marking
/// the cases where the two sides coincide identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaCheck {
    pub label: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub sharp: bool,
}

/// Evaluates the six polynomial inequalities behind the error-propagation
/// theorem at index `i` with window length `m`:
/// (i)/(ii) hold for all `i >= 1` and are sharp; (iii)/(iv) apply for
/// `i <= m`; (v)/(vi) apply for `i >= m + 1`, with (v) sharp. The last four
/// compare against `P1_i / r` (resp. `Q1_i / r`) and need `r > 0`.
pub fn lemma_inequalities(t: &PolyTables, m: usize, i: usize) -> Result<Vec<LemmaCheck>> {
    let n = t.p0.len() - 1;
    if i < 1 || i + 1 > n {
        return Err(Error::InvalidParams(format!("need 1 <= i, i + 1 <= {n}")));
    }
    let (x, r) = (t.x, t.r);
    let mut out = vec![
        LemmaCheck {
            label: "(i)",
            lhs: (1.0 + x) * t.p0[i] + x * t.p1[i],
            rhs: t.p0[i + 1],
            sharp: true,
        },
        LemmaCheck {
            label: "(ii)",
            lhs: (1.0 + x) * t.q0[i] + x * t.q1[i],
            rhs: t.q0[i + 1],
            sharp: true,
        },
    ];
    if r > 0.0 {
        if i <= m {
            let sp: f64 = (1..i).map(|j| t.p0[j] + t.p1[j]).sum();
            let sq: f64 = (1..i).map(|j| t.q0[j] + t.q1[j]).sum();
            out.push(LemmaCheck {
                label: "(iii)",
                lhs: t.p0[i] + x * sp,
                rhs: t.p1[i] / r,
                sharp: false,
            });
            out.push(LemmaCheck {
                label: "(iv)",
                lhs: t.q0[i] + x * sq,
                rhs: t.q1[i] / r,
                sharp: false,
            });
        } else {
            let sp: f64 = (i - m..i).map(|j| t.p0[j] + t.p1[j]).sum();
            let sq: f64 = (i - m..i).map(|j| t.q0[j] + t.q1[j]).sum();
            out.push(LemmaCheck {
                label: "(v)",
                lhs: t.p0[i] + t.p0[i - m] + x * sp,
                rhs: t.p1[i] / r,
                sharp: true,
            });
            out.push(LemmaCheck {
                label: "(vi)",
                lhs: t.q0[i] + t.q0[i - m] + x * sq,
                rhs: t.q1[i] / r,
                sharp: false,
            });
        }
    }
    Ok(out)
}

/// Global bounds `(B0_q, B1_q)` for `q = 0..n-1` on the mean absolute
/// errors of `Y` and `rho`, from per-step local error norms
/// `eps[i] = sqrt(E[eps_{t_i}^2])` and `e[i] = sqrt(E[e_{t_i}^2])`,
/// both indexed `0..n-1`:
/// `B0_q = sum_{i=1}^{n-q} P0_i eps[q+i-1] + Q0_i e[q+i-1]`, `B1` alike.
pub fn global_bounds(eps: &[f64], e: &[f64], x: f64, r: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = eps.len();
    if e.len() != n || n == 0 {
        return Err(Error::DimensionMismatch("eps/e lengths".into()));
    }
    let t = poly_tables(x, r, n);
    let mut b0 = vec![0.0; n];
    let mut b1 = vec![0.0; n];
    for q in 0..n {
        for i in 1..=n - q {
            b0[q] += t.p0[i] * eps[q + i - 1] + t.q0[i] * e[q + i - 1];
            b1[q] += t.p1[i] * eps[q + i - 1] + t.q1[i] * e[q + i - 1];
        }
    }
    Ok((b0, b1))
}

/// Standard-BSDE bound: `sum_{j=i}^{n-1} (1 + x)^{j-i} eps[j]`.
pub fn geometric_bound(eps: &[f64], x: f64, i: usize) -> f64 {
    eps[i..]
        .iter()
        .enumerate()
        .map(|(k, &v)| (1.0 + x).powi(k as i32) * v)
        .sum()
}
