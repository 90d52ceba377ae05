//! Convergent p-adic series with exact tail accounting.
//!
//! Every series here is computed in a temporarily *extended* precision
//! context so that the factorial (or index) divisions are exact integer
//! steps, then reduced back. For arguments of valuation `v > 1/(p-1)` the
//! perturbation of any term under a change of input representative mod `p^N`
//! has valuation at least `N + (n-1)(v - 1/(p-1)) >= N`, so the reduced
//! result is a well-defined exact function of the input residue: the
//! [`TailBound`] records the cutoff and that full precision was achieved.

use serde::{Deserialize, Serialize};

use crate::cyclotomic::{CycElt, PrecisionContext, Val};
use crate::matrix::Mat;
use crate::toric::{LaurentElt, ToricRing};
use crate::{Error, Rat, Result};

/// Where a series was cut and what precision the sum carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    /// First omitted term index: all terms `n >= cutoff` were dropped.
    pub cutoff: u64,
    /// Every dropped term has valuation at least this (always `>= N`).
    pub dropped_at_least: Rat,
    /// The result is exact modulo `p^achieved`; equals `N` here because the
    /// computation runs at extended internal precision.
    pub achieved: u32,
    /// Extra precision digits the internal context carried to keep the
    /// divisions exact.
    pub headroom: u32,
}

/// Incremental `nu_p(n!)` tracker driving cutoff scans.
struct FactorialVal {
    p: u64,
    acc: u64,
}

impl FactorialVal {
    fn new(p: u64) -> Self {
        FactorialVal { p, acc: 0 }
    }
    /// Advance to include `n` and return `nu_p(n!)`.
    fn push(&mut self, n: u64) -> u64 {
        let mut m = n;
        while m % self.p == 0 {
            self.acc += 1;
            m /= self.p;
        }
        self.acc
    }
}

fn nu_p_int(p: u64, n: u64) -> u64 {
    let mut v = 0;
    let mut m = n;
    while m % p == 0 {
        v += 1;
        m /= p;
    }
    v
}

/// Cutoff for `sum B^n / n!` at argument valuation `v`: the least `T` such
/// that every term with `n >= T` has valuation `n v - nu_p(n!) >= N`.
/// Also returns the headroom `max nu_p(n!)` over computed terms.
pub fn exp_cutoff(ctx: &PrecisionContext, v: Rat) -> Result<(u64, u32)> {
    series_cutoff(ctx, v, true)
}

/// Cutoff for `sum B^n / n`: least `T` with `n v - nu_p(n) >= N` beyond it.
pub fn log_cutoff(ctx: &PrecisionContext, v: Rat) -> Result<(u64, u32)> {
    series_cutoff(ctx, v, false)
}

fn series_cutoff(ctx: &PrecisionContext, v: Rat, factorial: bool) -> Result<(u64, u32)> {
    let r = ctx.r();
    if v <= r {
        return Err(Error::DivergentExponent { val: v.to_string(), floor: r });
    }
    let big_n = Rat::from_integer(ctx.big_n as i64);
    // beyond n = N/(v - r) every term clears N, since nu_p(n!) <= n/(p-1)
    let safe = (big_n / (v - r)).ceil().to_integer().max(1) as u64;
    let mut vals = Vec::with_capacity(safe as usize + 1);
    let mut fact = FactorialVal::new(ctx.p);
    for n in 1..=safe {
        let denom_val = if factorial { fact.push(n) } else { nu_p_int(ctx.p, n) };
        if !factorial {
            fact.push(n);
        }
        let term = Rat::from_integer(n as i64) * v - Rat::from_integer(denom_val as i64);
        vals.push(term);
    }
    // least T with min over [T, safe] of term valuation >= N
    let mut cutoff = safe + 1;
    let mut suffix_min = Rat::from_integer(i64::MAX / 2);
    for n in (1..=safe).rev() {
        suffix_min = suffix_min.min(vals[(n - 1) as usize]);
        if suffix_min >= big_n {
            cutoff = n;
        }
    }
    // headroom: deepest division performed among computed terms n < cutoff
    let mut fact2 = FactorialVal::new(ctx.p);
    let mut headroom = 0u64;
    for n in 1..cutoff {
        let d = if factorial { fact2.push(n) } else { nu_p_int(ctx.p, n) };
        headroom = headroom.max(d);
    }
    Ok((cutoff, headroom as u32))
}

/// Greatest lower bound over `n >= from` of the exponential term valuation
/// `n v - nu_p(n!)`, clamped at `N` from above (terms beyond the safe index
/// all clear `N`). Used for honest tail reporting when a later truncation or
/// normalisation re-exposes series terms.
pub fn exp_tail_floor(ctx: &PrecisionContext, v: Rat, from: u64) -> Result<Rat> {
    let r = ctx.r();
    if v <= r {
        return Err(Error::DivergentExponent { val: v.to_string(), floor: r });
    }
    let big_n = Rat::from_integer(ctx.big_n as i64);
    let safe = (big_n / (v - r)).ceil().to_integer().max(1) as u64;
    let mut fact = FactorialVal::new(ctx.p);
    let mut floor = big_n;
    for n in 1..=safe {
        let d = fact.push(n);
        if n >= from {
            let term = Rat::from_integer(n as i64) * v - Rat::from_integer(d as i64);
            floor = floor.min(term);
        }
    }
    Ok(floor)
}

fn lift_mat(wide: &PrecisionContext, m: &Mat<CycElt>) -> Mat<CycElt> {
    // canonical lift: same integer coefficients in the larger modulus
    let _ = wide;
    m.clone()
}

fn reduce_mat(ctx: &PrecisionContext, m: &Mat<CycElt>) -> Mat<CycElt> {
    m.map(|c| ctx.reduce_from(c))
}

/// `exp(M) = sum M^n / n!` for a square matrix with all entry valuations
/// above `1/(p-1)`. Exact mod `p^N`.
pub fn mat_exp(ctx: &PrecisionContext, m: &Mat<CycElt>) -> Result<(Mat<CycElt>, TailBound)> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch("exp of non-square matrix".into()));
    }
    let v = match m.min_valuation(ctx) {
        Val::Bot => {
            // exp(0) = I, no series needed
            return Ok((
                Mat::identity(ctx, m.rows),
                TailBound {
                    cutoff: 1,
                    dropped_at_least: Rat::from_integer(ctx.big_n as i64),
                    achieved: ctx.big_n,
                    headroom: 0,
                },
            ));
        }
        Val::Fin(v) => v,
    };
    let (cutoff, headroom) = exp_cutoff(ctx, v)?;
    let wide = ctx.extend(headroom)?;
    let mw = lift_mat(&wide, m);
    let mut acc = Mat::<CycElt>::identity(&wide, m.rows);
    let mut term = Mat::<CycElt>::identity(&wide, m.rows);
    for n in 1..cutoff {
        term = term.mul(&wide, &mw)?;
        let divisor = wide.from_u64(n);
        term = div_mat(&wide, &term, &divisor)?;
        acc = acc.add(&wide, &term)?;
    }
    Ok((
        reduce_mat(ctx, &acc),
        TailBound {
            cutoff,
            dropped_at_least: Rat::from_integer(ctx.big_n as i64),
            achieved: ctx.big_n,
            headroom,
        },
    ))
}

/// `log(A) = sum (-1)^(n+1) B^n / n` for `A = I + B` with all entry
/// valuations of `B` above `1/(p-1)`. Exact mod `p^N`.
pub fn mat_log(ctx: &PrecisionContext, a: &Mat<CycElt>) -> Result<(Mat<CycElt>, TailBound)> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch("log of non-square matrix".into()));
    }
    let id = Mat::<CycElt>::identity(ctx, a.rows);
    let b = a.sub(ctx, &id)?;
    let v = match b.min_valuation(ctx) {
        Val::Bot => {
            return Ok((
                Mat::zeros(ctx, a.rows, a.rows),
                TailBound {
                    cutoff: 1,
                    dropped_at_least: Rat::from_integer(ctx.big_n as i64),
                    achieved: ctx.big_n,
                    headroom: 0,
                },
            ));
        }
        Val::Fin(v) => v,
    };
    let (cutoff, headroom) = log_cutoff(ctx, v)?;
    let wide = ctx.extend(headroom)?;
    let bw = lift_mat(&wide, &b);
    let mut acc = Mat::<CycElt>::zeros(&wide, a.rows, a.rows);
    let mut power = Mat::<CycElt>::identity(&wide, a.rows);
    for n in 1..cutoff {
        power = power.mul(&wide, &bw)?;
        let divisor = wide.from_u64(n);
        let term = div_mat(&wide, &power, &divisor)?;
        acc = if n % 2 == 1 { acc.add(&wide, &term)? } else { acc.sub(&wide, &term)? };
    }
    Ok((
        reduce_mat(ctx, &acc),
        TailBound {
            cutoff,
            dropped_at_least: Rat::from_integer(ctx.big_n as i64),
            achieved: ctx.big_n,
            headroom,
        },
    ))
}

fn div_mat(ctx: &PrecisionContext, m: &Mat<CycElt>, d: &CycElt) -> Result<Mat<CycElt>> {
    let mut out = m.clone();
    for x in &mut out.data {
        *x = ctx.div_exact(x, d)?;
    }
    Ok(out)
}

/// Minimum coefficient valuation across all entries of a Laurent matrix.
pub fn laurent_mat_valuation(ctx: &PrecisionContext, m: &Mat<LaurentElt>) -> Val {
    let tr = ToricRing::new(ctx);
    let mut v = Val::Bot;
    for x in &m.data {
        v = v.min(tr.gauss_valuation(x));
    }
    v
}

fn div_laurent_mat(
    ctx: &PrecisionContext,
    m: &Mat<LaurentElt>,
    d: &CycElt,
) -> Result<Mat<LaurentElt>> {
    let tr = ToricRing::new(ctx);
    let mut out = m.clone();
    for x in &mut out.data {
        *x = tr.div_coeff(x, d)?;
    }
    Ok(out)
}

fn reduce_laurent_mat(ctx: &PrecisionContext, m: &Mat<LaurentElt>) -> Mat<LaurentElt> {
    let tr = ToricRing::new(ctx);
    m.map(|x| tr.reduce_from(x))
}

/// `exp(M) = sum M^n / n!` for a square matrix over the Laurent window with
/// Gauss valuation above `1/(p-1)`. Exact mod `p^N` on the kept window; any
/// product term escaping the window sets the entries' sticky overflow flag.
pub fn laurent_mat_exp(
    ctx: &PrecisionContext,
    m: &Mat<LaurentElt>,
) -> Result<(Mat<LaurentElt>, TailBound)> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch("exp of non-square matrix".into()));
    }
    let v = match laurent_mat_valuation(ctx, m) {
        Val::Bot => {
            return Ok((
                Mat::identity(ctx, m.rows),
                TailBound {
                    cutoff: 1,
                    dropped_at_least: Rat::from_integer(ctx.big_n as i64),
                    achieved: ctx.big_n,
                    headroom: 0,
                },
            ));
        }
        Val::Fin(v) => v,
    };
    let (cutoff, headroom) = exp_cutoff(ctx, v)?;
    let wide = ctx.extend(headroom)?;
    // canonical lift: same coefficients read in the larger modulus
    let mut acc = Mat::<LaurentElt>::identity(&wide, m.rows);
    let mut term = Mat::<LaurentElt>::identity(&wide, m.rows);
    for n in 1..cutoff {
        term = term.mul(&wide, m)?;
        term = div_laurent_mat(&wide, &term, &wide.from_u64(n))?;
        acc = acc.add(&wide, &term)?;
    }
    Ok((
        reduce_laurent_mat(ctx, &acc),
        TailBound {
            cutoff,
            dropped_at_least: Rat::from_integer(ctx.big_n as i64),
            achieved: ctx.big_n,
            headroom,
        },
    ))
}

/// `log(A) = sum (-1)^(n+1) B^n / n` for `A = I + B` over the Laurent window
/// with Gauss valuation of `B` above `1/(p-1)`. Exact mod `p^N` on the kept
/// window.
pub fn laurent_mat_log(
    ctx: &PrecisionContext,
    a: &Mat<LaurentElt>,
) -> Result<(Mat<LaurentElt>, TailBound)> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch("log of non-square matrix".into()));
    }
    let id = Mat::<LaurentElt>::identity(ctx, a.rows);
    let b = a.sub(ctx, &id)?;
    let v = match laurent_mat_valuation(ctx, &b) {
        Val::Bot => {
            return Ok((
                Mat::zeros(ctx, a.rows, a.rows),
                TailBound {
                    cutoff: 1,
                    dropped_at_least: Rat::from_integer(ctx.big_n as i64),
                    achieved: ctx.big_n,
                    headroom: 0,
                },
            ));
        }
        Val::Fin(v) => v,
    };
    let (cutoff, headroom) = log_cutoff(ctx, v)?;
    let wide = ctx.extend(headroom)?;
    let mut acc = Mat::<LaurentElt>::zeros(&wide, a.rows, a.rows);
    let mut power = Mat::<LaurentElt>::identity(&wide, a.rows);
    for n in 1..cutoff {
        power = power.mul(&wide, &b)?;
        let term = div_laurent_mat(&wide, &power, &wide.from_u64(n))?;
        acc = if n % 2 == 1 { acc.add(&wide, &term)? } else { acc.sub(&wide, &term)? };
    }
    Ok((
        reduce_laurent_mat(ctx, &acc),
        TailBound {
            cutoff,
            dropped_at_least: Rat::from_integer(ctx.big_n as i64),
            achieved: ctx.big_n,
            headroom,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> PrecisionContext {
        PrecisionContext::new(5, 2, 10, 2, 2, 6, Rat::new(1, 2)).unwrap()
    }

    fn small_theta(c: &PrecisionContext) -> Mat<CycElt> {
        // entries of valuation >= a = 1/2: multiples of pi^10
        let w = c.pow(&c.pi(), 10);
        let mut m = Mat::<CycElt>::zeros(c, 2, 2);
        *m.at_mut(0, 0) = c.mul(&w, &c.from_u64(3));
        *m.at_mut(0, 1) = c.mul(&w, &c.from_u64(7));
        *m.at_mut(1, 0) = w.clone();
        *m.at_mut(1, 1) = c.mul(&w, &c.from_u64(2));
        m
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let c = ctx();
        let z = Mat::<CycElt>::zeros(&c, 3, 3);
        let (e, tb) = mat_exp(&c, &z).unwrap();
        assert_eq!(e, Mat::identity(&c, 3));
        assert_eq!(tb.achieved, 10);
    }

    #[test]
    fn exp_log_round_trip_is_exact() {
        let c = ctx();
        let theta = small_theta(&c);
        let (a, _) = mat_exp(&c, &theta).unwrap();
        let (back, _) = mat_log(&c, &a).unwrap();
        // both series are exact functions of their argument residues
        assert_eq!(back, theta);
    }

    #[test]
    fn log_exp_order_also_round_trips() {
        let c = ctx();
        let theta = small_theta(&c);
        let (a, _) = mat_exp(&c, &theta).unwrap();
        let (l, _) = mat_log(&c, &a).unwrap();
        let (again, _) = mat_exp(&c, &l).unwrap();
        assert_eq!(again, a);
    }

    #[test]
    fn exp_is_homomorphic_on_commuting_arguments() {
        let c = ctx();
        let theta = small_theta(&c);
        let theta2 = theta.scale(&c, &c.from_u64(4));
        let sum = theta.add(&c, &theta2).unwrap();
        let (ea, _) = mat_exp(&c, &theta).unwrap();
        let (eb, _) = mat_exp(&c, &theta2).unwrap();
        let (es, _) = mat_exp(&c, &sum).unwrap();
        assert_eq!(ea.mul(&c, &eb).unwrap(), es);
    }

    #[test]
    fn divergent_argument_is_rejected() {
        let c = ctx();
        // valuation 1/20 <= 1/4
        let mut m = Mat::<CycElt>::zeros(&c, 1, 1);
        *m.at_mut(0, 0) = c.pi();
        assert!(matches!(mat_exp(&c, &m), Err(Error::DivergentExponent { .. })));
        let mut a = Mat::<CycElt>::identity(&c, 1);
        *a.at_mut(0, 0) = c.add(&c.one(), &c.pi());
        assert!(matches!(mat_log(&c, &a), Err(Error::DivergentExponent { .. })));
    }

    #[test]
    fn cutoff_scan_matches_legendre() {
        let c = ctx();
        // v = 1: terms n - nu_p(n!) >= 10 from n = 12 onward (11 - 2 = 9 at n = 11)
        let (cut, head) = exp_cutoff(&c, Rat::new(1, 1)).unwrap();
        assert_eq!(cut, 12);
        assert_eq!(head, 2);
        // v = 1/2: suffix condition first holds at n = 36
        let (cut2, _) = exp_cutoff(&c, Rat::new(1, 2)).unwrap();
        assert_eq!(cut2, 36);
    }
}
