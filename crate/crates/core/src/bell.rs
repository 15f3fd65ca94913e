//! Ordinary complete Bell polynomials and their Hermite specialisations.
//!
//! `P^(k)_n` is the coefficient of `x^n` in the expansion of
//! `exp(a_1 x + a_2 x^2 + ... + a_k x^k)`. Every level of a one-dimensional
//! rough path is such a polynomial evaluated at the path increment and the
//! renormalisation increments, so this module is the single source of truth
//! for level algebra. Terms are enumerated exactly (one term per partition of
//! `n` into parts of size at most `k`) with rational coefficients
//! `1 / (p_1! ... p_k!)`; conversion to floating point happens only at
//! evaluation time.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// One monomial of a complete Bell polynomial: the exponent tuple
/// `(p_1, ..., p_k)` with `sum m * p_m = n` and the exact coefficient
/// `1 / prod p_m!` stored through its denominator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BellTerm {
    /// Exponents `p_1..p_k` of the indeterminates `a_1..a_k`.
    pub exponents: Vec<u32>,
    /// Denominator of the exact coefficient `1 / prod p_m!`.
    pub coefficient_denominator: u128,
}

impl BellTerm {
    /// Coefficient as a floating-point number.
    pub fn coefficient(&self) -> f64 {
        1.0 / self.coefficient_denominator as f64
    }
}

/// The ordinary complete Bell polynomial `P^(k)_n` as an explicit term list.
#[derive(Debug, Clone)]
pub struct BellPolynomial {
    /// Truncation degree (number of indeterminates).
    pub k: usize,
    /// Polynomial index.
    pub n: usize,
    /// Complete list of terms, sorted by ascending coefficient magnitude so
    /// evaluation accumulates small contributions first.
    pub terms: Vec<BellTerm>,
}

impl BellPolynomial {
    /// Evaluates the polynomial at `a = (a_1, ..., a_k)`.
    pub fn eval(&self, a: &[f64]) -> Result<f64> {
        if a.len() != self.k {
            return Err(Error::Dimension {
                expected: self.k,
                got: a.len(),
            });
        }
        let mut acc = 0.0;
        for term in &self.terms {
            let mut monomial = term.coefficient();
            for (m, &p) in term.exponents.iter().enumerate() {
                for _ in 0..p {
                    monomial *= a[m];
                }
            }
            acc += monomial;
        }
        Ok(acc)
    }
}

fn factorial_u128(p: u32) -> u128 {
    (1..=p as u128).product()
}

fn enumerate_terms(k: usize, n: usize) -> Vec<BellTerm> {
    // Depth-first over exponents of a_k, a_{k-1}, ..., a_1; the a_1 exponent
    // is forced by the remaining weight.
    let mut terms = Vec::new();
    let mut exponents = vec![0u32; k];
    fn recurse(m: usize, remaining: usize, exponents: &mut Vec<u32>, out: &mut Vec<BellTerm>) {
        if m == 1 {
            exponents[0] = remaining as u32;
            let denominator: u128 = exponents.iter().map(|&p| factorial_u128(p)).product();
            out.push(BellTerm {
                exponents: exponents.clone(),
                coefficient_denominator: denominator,
            });
            return;
        }
        let mut used = 0usize;
        let mut p = 0u32;
        while used <= remaining {
            exponents[m - 1] = p;
            recurse(m - 1, remaining - used, exponents, out);
            p += 1;
            used += m;
        }
        exponents[m - 1] = 0;
    }
    recurse(k, n, &mut exponents, &mut terms);
    terms.sort_by(|a, b| {
        b.coefficient_denominator
            .cmp(&a.coefficient_denominator)
            .then_with(|| a.exponents.cmp(&b.exponents))
    });
    terms
}

fn cache() -> &'static Mutex<HashMap<(usize, usize), Arc<BellPolynomial>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<BellPolynomial>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Returns the complete term list of `P^(k)_n`, memoised on `(k, n)`.
pub fn bell_terms(k: usize, n: usize) -> Arc<BellPolynomial> {
    assert!(k >= 1, "bell_terms requires k >= 1");
    let mut guard = cache().lock().expect("bell cache poisoned");
    guard
        .entry((k, n))
        .or_insert_with(|| {
            Arc::new(BellPolynomial {
                k,
                n,
                terms: enumerate_terms(k, n),
            })
        })
        .clone()
}

/// Evaluates `P^(k)_n(a_1, ..., a_k)`.
pub fn bell_eval(k: usize, n: usize, a: &[f64]) -> Result<f64> {
    bell_terms(k, n).eval(a)
}

/// The two-indeterminate Hermite kernel
/// `H_n(x, g) = sum_{p1 + 2 p2 = n} x^p1 g^p2 / (p1! p2!)`,
/// i.e. `P^(k)_n(x, g, 0, ..., 0)`. Every level of a Hermite rough path is
/// this polynomial at the path increment and the half-variance increment.
pub fn hermite_eval(n: usize, x: f64, g: f64) -> f64 {
    let mut acc = 0.0;
    // Ascending p2 means ascending coefficient magnitude is not guaranteed,
    // but the term count is tiny (n/2 + 1); accumulate smallest factorial
    // denominators last by iterating p2 from n/2 down to 0.
    let mut p2 = n / 2;
    loop {
        let p1 = n - 2 * p2;
        let denom = factorial_u128(p1 as u32) * factorial_u128(p2 as u32);
        acc += x.powi(p1 as i32) * g.powi(p2 as i32) / denom as f64;
        if p2 == 0 {
            break;
        }
        p2 -= 1;
    }
    acc
}

/// The probabilist's Hermite polynomial `He_n(u) = n! * P^(2)_n(u, -1/2)`.
pub fn probabilists_hermite(n: usize, u: f64) -> f64 {
    let nfact = (1..=n as u128).product::<u128>() as f64;
    nfact * hermite_eval(n, u, -0.5)
}
