//! Exact univariate polynomial arithmetic over the rationals: evaluation,
//! derivatives, Euclidean division, Sturm chains, root isolation on (0, 1)
//! and certified sup-norm enclosures on [0, 1]. Used by the smoother-norm
//! computation, where the constant enters the Kolmogorov converter as C2^p
//! and must not be sampled.

use num::bigint::Sign;
use num::{BigInt, BigRational, One, Signed, Zero};

pub type Poly = Vec<BigRational>;

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn trim(p: &mut Poly) {
    while p.last().is_some_and(Zero::is_zero) {
        p.pop();
    }
}

pub fn degree(p: &Poly) -> Option<usize> {
    let mut d = p.len();
    while d > 0 && p[d - 1].is_zero() {
        d -= 1;
    }
    d.checked_sub(1)
}

pub fn eval(p: &Poly, x: &BigRational) -> BigRational {
    let mut acc = BigRational::zero();
    for c in p.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

pub fn eval_f64(p: &Poly, x: f64) -> f64 {
    let mut acc = 0.0;
    for c in p.iter().rev() {
        acc = acc * x + rational_to_f64(c);
    }
    acc
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    let numer = bigint_to_f64(r.numer());
    let denom = bigint_to_f64(r.denom());
    numer / denom
}

fn bigint_to_f64(b: &BigInt) -> f64 {
    // Adequate for the coefficient magnitudes here (well inside f64 range).
    let (sign, digits) = b.to_u64_digits();
    let mut v = 0.0;
    for d in digits.iter().rev() {
        v = v * 1.844_674_407_370_955_2e19 + *d as f64;
    }
    if sign == Sign::Minus {
        -v
    } else {
        v
    }
}

pub fn derivative(p: &Poly) -> Poly {
    if p.len() <= 1 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(p.len() - 1);
    for (i, c) in p.iter().enumerate().skip(1) {
        out.push(c * BigRational::from(BigInt::from(i)));
    }
    trim(&mut out);
    out
}

/// Euclidean division: returns (quotient, remainder).
pub fn div_rem(a: &Poly, b: &Poly) -> (Poly, Poly) {
    let db = degree(b).expect("division by the zero polynomial");
    let mut rem = a.clone();
    trim(&mut rem);
    let mut quot = vec![BigRational::zero(); rem.len().saturating_sub(db)];
    while let Some(dr) = degree(&rem) {
        if dr < db {
            break;
        }
        let coef = &rem[dr] / &b[db];
        let shift = dr - db;
        quot[shift] = coef.clone();
        for i in 0..=db {
            let delta = &coef * &b[i];
            rem[shift + i] = &rem[shift + i] - delta;
        }
        trim(&mut rem);
    }
    trim(&mut quot);
    (quot, rem)
}

pub fn gcd(a: &Poly, b: &Poly) -> Poly {
    let mut x = a.clone();
    let mut y = b.clone();
    trim(&mut x);
    trim(&mut y);
    while degree(&y).is_some() {
        let (_, r) = div_rem(&x, &y);
        x = y;
        y = r;
    }
    // Normalize to a monic polynomial.
    if let Some(d) = degree(&x) {
        let lead = x[d].clone();
        for c in x.iter_mut() {
            *c = &*c / &lead;
        }
    }
    x
}

/// p with repeated factors removed: p / gcd(p, p').
pub fn squarefree(p: &Poly) -> Poly {
    let g = gcd(p, &derivative(p));
    if degree(&g) == Some(0) || degree(&g).is_none() {
        let mut q = p.clone();
        trim(&mut q);
        return q;
    }
    let (q, r) = div_rem(p, &g);
    debug_assert!(degree(&r).is_none(), "gcd must divide exactly");
    q
}

/// Synthetic division by (x - r) when r is a root; None otherwise.
pub fn divide_out_root(p: &Poly, r: &BigRational) -> Option<Poly> {
    if !eval(p, r).is_zero() {
        return None;
    }
    let d = degree(p)?;
    let mut out = vec![BigRational::zero(); d];
    let mut carry = BigRational::zero();
    for i in (0..=d).rev() {
        let v = &p[i] + &carry;
        if i == 0 {
            debug_assert!(v.is_zero());
            break;
        }
        out[i - 1] = v.clone();
        carry = v * r;
    }
    trim(&mut out);
    Some(out)
}

/// Sturm chain of a squarefree polynomial.
pub fn sturm_chain(p: &Poly) -> Vec<Poly> {
    let mut chain = vec![p.clone(), derivative(p)];
    loop {
        let n = chain.len();
        if degree(&chain[n - 1]).is_none() {
            chain.pop();
            break;
        }
        if degree(&chain[n - 1]) == Some(0) {
            break;
        }
        let (_, mut r) = div_rem(&chain[n - 2], &chain[n - 1]);
        for c in r.iter_mut() {
            *c = -c.clone();
        }
        trim(&mut r);
        if degree(&r).is_none() {
            break;
        }
        chain.push(r);
    }
    chain
}

fn sign_variations(chain: &[Poly], x: &BigRational) -> usize {
    let mut count = 0;
    let mut last: Option<bool> = None; // sign as is_positive
    for p in chain {
        let v = eval(p, x);
        if v.is_zero() {
            continue;
        }
        let s = v.is_positive();
        if let Some(prev) = last {
            if prev != s {
                count += 1;
            }
        }
        last = Some(s);
    }
    count
}

/// Number of distinct real roots of the (squarefree) chain head in (a, b].
pub fn count_roots(chain: &[Poly], a: &BigRational, b: &BigRational) -> usize {
    sign_variations(chain, a).saturating_sub(sign_variations(chain, b))
}

/// A located root of a squarefree polynomial on an interval: either an exact
/// rational point or an isolating open-ended interval (lo, hi] known to hold
/// exactly one root.
#[derive(Debug, Clone)]
pub enum Root {
    Exact(BigRational),
    Isolated(BigRational, BigRational),
}

/// Isolate every root of squarefree `q` inside the open interval (0, 1).
/// Roots at dyadic bisection points come out exact.
pub fn isolate_roots_unit(q: &Poly) -> Vec<Root> {
    let mut q = q.clone();
    trim(&mut q);
    // Remove endpoint roots; the callers treat endpoints as candidates
    // independently.
    let zero = BigRational::zero();
    let one = BigRational::one();
    while let Some(next) = divide_out_root(&q, &zero) {
        q = next;
    }
    while let Some(next) = divide_out_root(&q, &one) {
        q = next;
    }
    if degree(&q).is_none_or(|d| d == 0) {
        return Vec::new();
    }
    let chain = sturm_chain(&q);
    let mut roots = Vec::new();
    let mut stack = vec![(zero.clone(), one.clone())];
    while let Some((a, b)) = stack.pop() {
        let count = count_roots(&chain, &a, &b);
        if count == 0 {
            continue;
        }
        if count == 1 {
            roots.push(Root::Isolated(a, b));
            continue;
        }
        let mid = (&a + &b) / rat(2, 1);
        if eval(&q, &mid).is_zero() {
            roots.push(Root::Exact(mid.clone()));
            let mut reduced = divide_out_root(&q, &mid).expect("mid is a root");
            trim(&mut reduced);
            // Rebuild with the root removed to keep the counts clean.
            let chain2 = sturm_chain(&reduced);
            let mut rest = Vec::new();
            let mut stack2 = vec![(BigRational::zero(), BigRational::one())];
            while let Some((a2, b2)) = stack2.pop() {
                let c2 = count_roots(&chain2, &a2, &b2);
                if c2 == 0 {
                    continue;
                }
                if c2 == 1 {
                    rest.push(Root::Isolated(a2, b2));
                    continue;
                }
                let m2 = (&a2 + &b2) / rat(2, 1);
                stack2.push((a2, m2.clone()));
                stack2.push((m2, b2));
            }
            roots.extend(rest);
            return roots;
        }
        stack.push((a, mid.clone()));
        stack.push((mid, b));
    }
    roots
}

/// Narrow an isolating interval of squarefree `q` by bisection; returns
/// either the exact root (hit at a bisection point) or a narrower interval.
pub fn refine_root(q: &Poly, lo: &BigRational, hi: &BigRational, steps: usize) -> Root {
    let mut a = lo.clone();
    let mut b = hi.clone();
    let sign_a = {
        let v = eval(q, &a);
        if v.is_zero() {
            // The isolation convention keeps the left endpoint off the root
            // set; fall back to the midpoint sign if this ever fires.
            return Root::Exact(a);
        }
        v.is_positive()
    };
    for _ in 0..steps {
        let mid = (&a + &b) / rat(2, 1);
        let v = eval(q, &mid);
        if v.is_zero() {
            return Root::Exact(mid);
        }
        if v.is_positive() == sign_a {
            a = mid;
        } else {
            b = mid;
        }
    }
    Root::Isolated(a, b)
}

/// Sum of |coefficients|: a sup bound for |p| on [0, 1].
pub fn coeff_abs_sum(p: &Poly) -> BigRational {
    p.iter().fold(BigRational::zero(), |acc, c| acc + c.abs())
}
