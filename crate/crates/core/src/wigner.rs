//! Wigner 3j/6j symbols and the ⁸⁷Rb D1 dipole strengths derived from them.
//!
//! Angular momenta are passed doubled (`2j`) so half-integer values stay exact.

fn factorial(n: i32) -> f64 {
    debug_assert!(n >= 0);
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Factorial of a doubled argument; `None` when the argument is negative or odd.
fn fact2(twice: i32) -> Option<f64> {
    if twice < 0 || twice % 2 != 0 {
        None
    } else {
        Some(factorial(twice / 2))
    }
}

fn triangle(a: i32, b: i32, c: i32) -> Option<f64> {
    let num = fact2(a + b - c)? * fact2(a - b + c)? * fact2(-a + b + c)?;
    Some(num / fact2(a + b + c + 2)?)
}

fn parity(twice: i32) -> f64 {
    if (twice / 2) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Wigner 3j symbol with doubled arguments.
pub fn three_j(j1: i32, j2: i32, j3: i32, m1: i32, m2: i32, m3: i32) -> f64 {
    if m1 + m2 + m3 != 0 || m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
        return 0.0;
    }
    let Some(tri) = triangle(j1, j2, j3) else {
        return 0.0;
    };
    let Some(pre) = (|| {
        Some(
            fact2(j1 + m1)?
                * fact2(j1 - m1)?
                * fact2(j2 + m2)?
                * fact2(j2 - m2)?
                * fact2(j3 + m3)?
                * fact2(j3 - m3)?,
        )
    })() else {
        return 0.0;
    };
    let mut sum = 0.0;
    // k runs over (doubled) integers keeping every factorial argument >= 0
    let mut k = 0;
    while k <= j1 + j2 + j3 {
        let terms = [
            j3 - j2 + k + m1,
            j3 - j1 + k - m2,
            j1 + j2 - j3 - k,
            j1 - k - m1,
            j2 - k + m2,
        ];
        if terms.iter().all(|&t| t >= 0) {
            let denom: f64 = terms.iter().map(|&t| fact2(t).unwrap_or(f64::INFINITY)).product::<f64>()
                * fact2(k).unwrap_or(f64::INFINITY);
            sum += parity(k) / denom;
        }
        k += 2;
    }
    parity(j1 - j2 - m3) * (tri * pre).sqrt() * sum
}

/// Wigner 6j symbol {j1 j2 j3; j4 j5 j6} with doubled arguments.
pub fn six_j(j1: i32, j2: i32, j3: i32, j4: i32, j5: i32, j6: i32) -> f64 {
    let tris = [
        triangle(j1, j2, j3),
        triangle(j1, j5, j6),
        triangle(j4, j2, j6),
        triangle(j4, j5, j3),
    ];
    if tris.iter().any(Option::is_none) {
        return 0.0;
    }
    let pre: f64 = tris.iter().map(|t| t.unwrap().sqrt()).product();
    let a = [j1 + j2 + j3, j1 + j5 + j6, j4 + j2 + j6, j4 + j5 + j3];
    let b = [j1 + j2 + j4 + j5, j2 + j3 + j5 + j6, j3 + j1 + j6 + j4];
    let t_min = *a.iter().max().unwrap();
    let t_max = *b.iter().min().unwrap();
    let mut sum = 0.0;
    let mut t = t_min;
    while t <= t_max {
        let mut denom = 1.0;
        for &x in &a {
            denom *= fact2(t - x).unwrap_or(f64::INFINITY);
        }
        for &x in &b {
            denom *= fact2(x - t).unwrap_or(f64::INFINITY);
        }
        sum += parity(t) * fact2(t + 2).unwrap_or(0.0) / denom;
        t += 2;
    }
    pre * sum
}

/// Nuclear spin of ⁸⁷Rb, doubled.
const TWO_I: i32 = 3;
/// J of both 5S1/2 and 5P1/2, doubled.
const TWO_J: i32 = 1;

/// Relative spontaneous-decay strength |F', m'⟩ → |F, m⟩ on the D1 line.
///
/// Normalized so that the strengths out of any excited sublevel sum to one.
/// Arguments are ordinary (not doubled) integers.
pub fn d1_strength(f_exc: i32, m_exc: i32, f_gnd: i32, m_gnd: i32) -> f64 {
    let q = m_exc - m_gnd;
    if q.abs() > 1 {
        return 0.0;
    }
    let six = six_j(TWO_J, TWO_J, 2, 2 * f_exc, 2 * f_gnd, TWO_I);
    let three = three_j(2 * f_gnd, 2, 2 * f_exc, 2 * m_gnd, 2 * q, -2 * m_exc);
    let pref = ((2 * f_exc + 1) * (2 * f_gnd + 1) * (TWO_J + 1)) as f64;
    pref * six * six * three * three
}
