//! The truncated cyclotomic coefficient ring `O_{K_n} / p^N`.
//!
//! Elements are polynomials in the uniformiser `pi = zeta_{p^n} - 1` of degree
//! below `e = p^(n-1) (p-1)`, with coefficients in `Z / p^N`. The minimal
//! polynomial `E_n` of `pi` is Eisenstein with constant term `p`, which gives
//! every nonzero element an exact valuation in `(1/e) Z` and makes division by
//! `pi` a finite carry computation rather than an approximation.

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::{Error, Rat, Result};

/// Valuation of a truncated element: an exact rational for nonzero elements,
/// or [`Val::Bot`] for the elements indistinguishable from zero at this
/// precision. `Bot` compares greater than every finite valuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Val {
    /// Exact valuation, a rational with denominator dividing `e`.
    Fin(Rat),
    /// Zero at this precision: valuation at least `N`.
    Bot,
}

impl Val {
    /// True when the element was exactly zero at this precision.
    pub fn is_bot(self) -> bool {
        matches!(self, Val::Bot)
    }

    /// The finite valuation, or `None` for `Bot`.
    pub fn fin(self) -> Option<Rat> {
        match self {
            Val::Fin(v) => Some(v),
            Val::Bot => None,
        }
    }

    /// True when this valuation is `>= bound` (with `Bot >= ` anything).
    pub fn at_least(self, bound: Rat) -> bool {
        match self {
            Val::Fin(v) => v >= bound,
            Val::Bot => true,
        }
    }

    /// True when this valuation is `> bound` (with `Bot > ` anything).
    pub fn above(self, bound: Rat) -> bool {
        match self {
            Val::Fin(v) => v > bound,
            Val::Bot => true,
        }
    }

    /// Minimum of two valuations.
    pub fn min(self, other: Val) -> Val {
        match (self, other) {
            (Val::Bot, v) | (v, Val::Bot) => v,
            (Val::Fin(a), Val::Fin(b)) => Val::Fin(a.min(b)),
        }
    }
}

impl PartialOrd for Val {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Val {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self, other) {
            (Val::Bot, Val::Bot) => std::cmp::Ordering::Equal,
            (Val::Bot, Val::Fin(_)) => std::cmp::Ordering::Greater,
            (Val::Fin(_), Val::Bot) => std::cmp::Ordering::Less,
            (Val::Fin(a), Val::Fin(b)) => a.cmp(b),
        }
    }
}

impl std::fmt::Display for Val {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Val::Fin(v) => write!(f, "{v}"),
            Val::Bot => write!(f, "bot"),
        }
    }
}

/// One element of `O_{K_n} / p^N`: coefficients of `1, pi, ..., pi^(e-1)`,
/// each reduced into `[0, p^N)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CycElt {
    pub coeffs: Vec<u64>,
}

/// Serialized form of a [`PrecisionContext`]: just the defining parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CtxRepr {
    p: u64,
    n: u32,
    #[serde(rename = "N")]
    big_n: u32,
    d: usize,
    #[serde(rename = "D")]
    window: i64,
    #[serde(rename = "G")]
    y_cut: u32,
    /// Smallness exponent as `[numerator, denominator]`.
    a: [i64; 2],
}

/// All truncation parameters plus the precomputed reduction data for the
/// coefficient ring. Everything downstream borrows one of these.
#[derive(Debug, Clone, Serialize)]
#[serde(into = "CtxRepr")]
pub struct PrecisionContext {
    /// The odd prime `p`.
    pub p: u64,
    /// Cyclotomic tower level `n >= 1`.
    pub n: u32,
    /// Coefficient precision: arithmetic is mod `p^N`.
    pub big_n: u32,
    /// Number of toric coordinates.
    pub d: usize,
    /// Laurent window radius `D` for chart monomials.
    pub window: i64,
    /// Cutoff `G` for the divided-power lattice variable degrees.
    pub y_cut: u32,
    /// Smallness exponent `a`, with `a > 1/(p-1)` and `a e` integral.
    pub a: Rat,
    /// Ramification index `e = p^(n-1) (p-1)`.
    pub e: usize,
    /// The modulus `p^N`.
    pub modulus: u64,
    /// Coefficients of the Eisenstein polynomial `E_n(x)`, length `e + 1`.
    pub eisenstein: Vec<u64>,
    /// `reduction[i]` holds the coefficients of `x^(e+i) mod E_n`, `i < e - 1`.
    reduction: Vec<Vec<u64>>,
    /// `q(pi)` where `E_n(x) = p + x q(x)`; used by division by `pi`.
    qdiv: Vec<u64>,
    /// `zeta_p - 1 = (1 + pi)^(p^(n-1)) - 1`, the descent uniformiser.
    rho1: CycElt,
}

impl From<PrecisionContext> for CtxRepr {
    fn from(c: PrecisionContext) -> CtxRepr {
        CtxRepr {
            p: c.p,
            n: c.n,
            big_n: c.big_n,
            d: c.d,
            window: c.window,
            y_cut: c.y_cut,
            a: [*c.a.numer(), *c.a.denom()],
        }
    }
}

impl<'de> Deserialize<'de> for PrecisionContext {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let r = CtxRepr::deserialize(de)?;
        if r.a[1] == 0 {
            return Err(serde::de::Error::custom("zero denominator in smallness exponent"));
        }
        PrecisionContext::new(
            r.p,
            r.n,
            r.big_n,
            r.d,
            r.window,
            r.y_cut,
            Rat::new(r.a[0], r.a[1]),
        )
        .map_err(serde::de::Error::custom)
    }
}

fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut k = 2u64;
    while k * k <= p {
        if p % k == 0 {
            return false;
        }
        k += 1;
    }
    true
}

impl PrecisionContext {
    /// Build a context, validating every truncation parameter.
    pub fn new(p: u64, n: u32, big_n: u32, d: usize, window: i64, y_cut: u32, a: Rat) -> Result<Self> {
        if !is_prime(p) || p == 2 {
            return Err(Error::InvalidParameter(format!("p = {p} must be an odd prime")));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("tower level n must be at least 1".into()));
        }
        if big_n < 2 {
            return Err(Error::InvalidParameter("precision N must be at least 2".into()));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("chart dimension d must be at least 1".into()));
        }
        if window < 0 {
            return Err(Error::InvalidParameter("Laurent window radius D must be nonnegative".into()));
        }
        // e = p^(n-1) (p-1), kept small enough that dense e x e carries stay cheap.
        let mut e: u64 = p - 1;
        for _ in 1..n {
            e = e.checked_mul(p).filter(|&v| v <= 1 << 20).ok_or_else(|| {
                Error::InvalidParameter(format!("ramification index p^({n}-1)(p-1) too large"))
            })?;
        }
        let e = e as usize;
        let mut modulus: u64 = 1;
        for _ in 0..big_n {
            modulus = modulus
                .checked_mul(p)
                .filter(|&m| m < 1 << 63)
                .ok_or(Error::PrecisionOutOfRange { p, n: big_n })?;
        }
        let r = Rat::new(1, (p - 1) as i64);
        if a <= r {
            return Err(Error::SmallnessHypothesis { a, bound: r });
        }
        let ae = a * Rat::from_integer(e as i64);
        if !ae.is_integer() || a.numer() < &0 {
            return Err(Error::SmallnessHypothesis { a, bound: r });
        }
        let headroom = Rat::from_integer(2) * (a + r) + Rat::one();
        if Rat::from_integer(big_n as i64) < headroom {
            return Err(Error::InvalidParameter(format!(
                "precision N = {big_n} below headroom 2(a + 1/(p-1)) + 1 = {headroom}"
            )));
        }

        // E_n(x) = sum_{j < p} u(x)^j with u(x) = (1 + x)^(p^(n-1)),
        // evaluated by Horner so only one dense product per step is needed.
        let pow = p.pow(n - 1);
        let u = binomial_poly(pow as usize, modulus);
        let mut eis = vec![1u64];
        for _ in 1..p {
            eis = poly_mul_trunc(&eis, &u, modulus, usize::MAX);
            eis[0] = (eis[0] + 1) % modulus;
        }
        debug_assert_eq!(eis.len(), e + 1);
        debug_assert_eq!(eis[0], p % modulus);
        debug_assert_eq!(eis[e], 1);

        // reduction[i] = x^(e+i) mod E_n, computed by shifting and reducing.
        let mut reduction: Vec<Vec<u64>> = Vec::with_capacity(e.saturating_sub(1));
        let mut cur: Vec<u64> = (0..e).map(|t| neg_mod(eis[t], modulus)).collect();
        reduction.push(cur.clone());
        for _ in 1..e.saturating_sub(1) {
            // multiply cur by x: shift up, then fold the overflow term back in.
            let top = cur[e - 1];
            for t in (1..e).rev() {
                cur[t] = cur[t - 1];
            }
            cur[0] = 0;
            if top != 0 {
                for t in 0..e {
                    cur[t] = add_mul_mod(cur[t], top, reduction[0][t], modulus);
                }
            }
            reduction.push(cur.clone());
        }

        let qdiv: Vec<u64> = (1..=e).map(|t| eis[t]).collect();

        let mut ctx = PrecisionContext {
            p,
            n,
            big_n,
            d,
            window,
            y_cut,
            a,
            e,
            modulus,
            eisenstein: eis,
            reduction,
            qdiv,
            rho1: CycElt { coeffs: vec![0] },
        };
        let one_plus_pi = {
            let mut z = ctx.zero();
            z.coeffs[0] = 1;
            if e > 1 {
                z.coeffs[1] = 1;
            } else {
                // e = 1 only for n = 1, p = 2, which is rejected above.
                unreachable!("ramification index 1 is unreachable for odd p");
            }
            z
        };
        let zeta_p = ctx.pow(&one_plus_pi, pow);
        ctx.rho1 = ctx.sub(&zeta_p, &ctx.one());
        Ok(ctx)
    }

    /// Context with the same parameters but precision raised by `extra` digits.
    /// Used internally to absorb series denominators without losing exactness.
    pub fn extend(&self, extra: u32) -> Result<PrecisionContext> {
        PrecisionContext::new(
            self.p,
            self.n,
            self.big_n + extra,
            self.d,
            self.window,
            self.y_cut,
            self.a,
        )
    }

    /// Reduce an element of an extended context back into this one.
    /// The extended context must share `p`, `n` and have precision `>=` ours.
    pub fn reduce_from(&self, wide: &CycElt) -> CycElt {
        let coeffs = wide.coeffs.iter().map(|&c| c % self.modulus).collect();
        CycElt { coeffs }
    }

    /// `p^n`, the order of the cyclotomic class group at this level.
    pub fn pn(&self) -> u64 {
        self.p.pow(self.n)
    }

    /// `1/(p-1)`, the valuation of `zeta_p - 1`.
    pub fn r(&self) -> Rat {
        Rat::new(1, (self.p - 1) as i64)
    }

    /// The additive zero.
    pub fn zero(&self) -> CycElt {
        CycElt { coeffs: vec![0; self.e] }
    }

    /// The multiplicative one.
    pub fn one(&self) -> CycElt {
        let mut z = self.zero();
        z.coeffs[0] = 1;
        z
    }

    /// The uniformiser `pi = zeta_{p^n} - 1`.
    pub fn pi(&self) -> CycElt {
        let mut z = self.zero();
        z.coeffs[1] = 1;
        z
    }

    /// The descent uniformiser `zeta_p - 1`; equals `pi` when `n = 1`.
    pub fn rho1(&self) -> CycElt {
        self.rho1.clone()
    }

    /// Valuation of `zeta_p - 1`, always `1/(p-1)`.
    pub fn rho1_val(&self) -> Rat {
        self.r()
    }

    /// Embed an unsigned integer.
    pub fn from_u64(&self, v: u64) -> CycElt {
        let mut z = self.zero();
        z.coeffs[0] = v % self.modulus;
        z
    }

    /// Embed a signed integer.
    pub fn from_i64(&self, v: i64) -> CycElt {
        let m = self.modulus as i128;
        let r = ((v as i128 % m) + m) % m;
        self.from_u64(r as u64)
    }

    /// Element from signed coefficients of `1, pi, pi^2, ...`; longer inputs
    /// are reduced through the Eisenstein relation.
    pub fn from_coeffs(&self, cs: &[i64]) -> CycElt {
        let mut acc = self.zero();
        let mut power = self.one();
        let pi = self.pi();
        for (i, &c) in cs.iter().enumerate() {
            if i > 0 {
                power = self.mul(&power, &pi);
            }
            let term = self.mul_i64(&power, c);
            acc = self.add(&acc, &term);
        }
        acc
    }

    /// True when every coefficient vanishes.
    pub fn is_zero(&self, x: &CycElt) -> bool {
        x.coeffs.iter().all(|&c| c == 0)
    }

    pub fn add(&self, x: &CycElt, y: &CycElt) -> CycElt {
        let coeffs = x
            .coeffs
            .iter()
            .zip(&y.coeffs)
            .map(|(&a, &b)| {
                let s = a + b;
                if s >= self.modulus {
                    s - self.modulus
                } else {
                    s
                }
            })
            .collect();
        CycElt { coeffs }
    }

    pub fn sub(&self, x: &CycElt, y: &CycElt) -> CycElt {
        let coeffs = x
            .coeffs
            .iter()
            .zip(&y.coeffs)
            .map(|(&a, &b)| if a >= b { a - b } else { a + self.modulus - b })
            .collect();
        CycElt { coeffs }
    }

    pub fn neg(&self, x: &CycElt) -> CycElt {
        let coeffs = x.coeffs.iter().map(|&a| neg_mod(a, self.modulus)).collect();
        CycElt { coeffs }
    }

    /// Scale by a signed integer.
    pub fn mul_i64(&self, x: &CycElt, k: i64) -> CycElt {
        let m = self.modulus as i128;
        let r = (((k as i128) % m) + m) % m;
        let k = r as u64;
        let coeffs = x
            .coeffs
            .iter()
            .map(|&a| ((a as u128 * k as u128) % self.modulus as u128) as u64)
            .collect();
        CycElt { coeffs }
    }

    /// Full ring product with reduction through the Eisenstein relation.
    pub fn mul(&self, x: &CycElt, y: &CycElt) -> CycElt {
        let e = self.e;
        let m = self.modulus;
        let mut acc = vec![0u128; 2 * e - 1];
        if m < 1 << 32 {
            // products fit in u64, so sums of up to e of them fit in u128
            for (i, &a) in x.coeffs.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                for (j, &b) in y.coeffs.iter().enumerate() {
                    acc[i + j] += (a * b) as u128;
                }
            }
        } else {
            for (i, &a) in x.coeffs.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                for (j, &b) in y.coeffs.iter().enumerate() {
                    acc[i + j] += (a as u128 * b as u128) % m as u128;
                }
            }
        }
        // fold degrees e .. 2e-2 back down using the reduction table
        for k in (e..2 * e - 1).rev() {
            let c = (acc[k] % m as u128) as u64;
            if c == 0 {
                continue;
            }
            let row = &self.reduction[k - e];
            if m < 1 << 32 {
                for t in 0..e {
                    acc[t] += (c * row[t]) as u128;
                }
            } else {
                for t in 0..e {
                    acc[t] += (c as u128 * row[t] as u128) % m as u128;
                }
            }
        }
        let coeffs = acc[..e].iter().map(|&v| (v % m as u128) as u64).collect();
        CycElt { coeffs }
    }

    /// `x^k` by binary exponentiation.
    pub fn pow(&self, x: &CycElt, k: u64) -> CycElt {
        let mut base = x.clone();
        let mut out = self.one();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                out = self.mul(&out, &base);
            }
            k >>= 1;
            if k > 0 {
                base = self.mul(&base, &base);
            }
        }
        out
    }

    /// p-adic valuation of an integer coefficient, capped at `N`.
    pub fn nu_p(&self, c: u64) -> u32 {
        if c == 0 {
            return self.big_n;
        }
        let mut v = 0;
        let mut c = c;
        while c % self.p == 0 {
            c /= self.p;
            v += 1;
        }
        v
    }

    /// Exact valuation: `min_i (nu_p(c_i) + i/e)` over nonzero coefficients.
    pub fn valuation(&self, x: &CycElt) -> Val {
        let mut best: Option<Rat> = None;
        for (i, &c) in x.coeffs.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let v = Rat::from_integer(self.nu_p(c) as i64) + Rat::new(i as i64, self.e as i64);
            best = Some(match best {
                Some(b) if b <= v => b,
                _ => v,
            });
        }
        match best {
            Some(v) => Val::Fin(v),
            None => Val::Bot,
        }
    }

    /// Inverse of a unit (valuation zero) by Newton iteration on the
    /// constant-term inverse; the result is verified exactly before returning.
    pub fn inv_unit(&self, x: &CycElt) -> Result<CycElt> {
        let val = self.valuation(x);
        if val != Val::Fin(Rat::zero()) {
            return Err(Error::NonUnit { val: val.to_string() });
        }
        let c0 = x.coeffs[0] % self.modulus;
        let mut cur = self.from_u64(inv_mod_prime_power(c0, self.p, self.modulus));
        // each step doubles the pi-adic accuracy of the inverse
        let max_iter = 2 + (64 - ((self.big_n as u64 * self.e as u64).leading_zeros() as usize));
        for _ in 0..max_iter {
            let prod = self.mul(x, &cur);
            if self.is_zero(&self.sub(&prod, &self.one())) {
                return Ok(cur);
            }
            let two_minus = self.sub(&self.from_u64(2), &prod);
            cur = self.mul(&cur, &two_minus);
        }
        let prod = self.mul(x, &cur);
        if self.is_zero(&self.sub(&prod, &self.one())) {
            Ok(cur)
        } else {
            Err(Error::NotUnipotent { terms: max_iter })
        }
    }

    /// Exact division by `p`: defined exactly when every coefficient is
    /// divisible by `p`; the quotient times `p` restores the input exactly.
    pub fn div_p(&self, x: &CycElt) -> Result<CycElt> {
        if x.coeffs.iter().any(|&c| c % self.p != 0) {
            return Err(Error::NotDivisible { step: 0 });
        }
        let coeffs = x.coeffs.iter().map(|&c| c / self.p).collect();
        Ok(CycElt { coeffs })
    }

    /// Exact division by `pi`. Writing `x = c_0 + pi s(pi)` and
    /// `E_n = p + x q(x)`, divisibility holds iff `p | c_0` and then
    /// `x / pi = s(pi) - (c_0 / p) q(pi)`. The canonical integer quotient
    /// `c_0 / p` pins the representative.
    pub fn div_pi(&self, x: &CycElt) -> Result<CycElt> {
        if x.coeffs[0] % self.p != 0 {
            return Err(Error::NotDivisible { step: 0 });
        }
        let t = x.coeffs[0] / self.p;
        let mut coeffs: Vec<u64> = Vec::with_capacity(self.e);
        coeffs.extend_from_slice(&x.coeffs[1..]);
        coeffs.push(0);
        for (c, &q) in coeffs.iter_mut().zip(&self.qdiv) {
            let prod = (t as u128 * q as u128) % self.modulus as u128;
            let prod = prod as u64;
            *c = if *c >= prod { *c - prod } else { *c + self.modulus - prod };
        }
        Ok(CycElt { coeffs })
    }

    /// Divide by `pi^k`, failing at the first non-divisible step.
    pub fn div_pi_pow(&self, x: &CycElt, k: usize) -> Result<CycElt> {
        let mut cur = x.clone();
        for step in 0..k {
            cur = self.div_pi(&cur).map_err(|_| Error::NotDivisible { step })?;
        }
        Ok(cur)
    }

    /// Exact division `x / y` for `y` with finite valuation `j/e`:
    /// strips `pi^j` from both and multiplies by the unit inverse.
    /// Fails with [`Error::NotDivisible`] when `x` is not a multiple.
    pub fn div_exact(&self, x: &CycElt, y: &CycElt) -> Result<CycElt> {
        let vy = match self.valuation(y) {
            Val::Fin(v) => v,
            Val::Bot => {
                return Err(Error::NonUnit { val: Val::Bot.to_string() });
            }
        };
        let j = (vy * Rat::from_integer(self.e as i64)).to_integer() as usize;
        let x_red = self.div_pi_pow(x, j)?;
        let y_red = self.div_pi_pow(y, j).expect("divisor is divisible by its own valuation");
        let y_inv = self.inv_unit(&y_red)?;
        Ok(self.mul(&x_red, &y_inv))
    }

    /// Multiply by `pi^k`.
    pub fn mul_pi_pow(&self, x: &CycElt, k: usize) -> CycElt {
        let pik = self.pow(&self.pi(), k as u64);
        self.mul(x, &pik)
    }

    /// `zeta_{p^n}^k` for a signed integer exponent.
    pub fn zeta_pow_int(&self, k: i64) -> CycElt {
        let pn = self.pn() as i64;
        let k = ((k % pn) + pn) % pn;
        let mut z = self.one();
        z = self.add(&z, &self.pi());
        self.pow(&z, k as u64)
    }

    /// Level of a class `alpha in Z[1/p]/Z`: the least `m` with
    /// `p^m alpha` integral.
    pub fn level_of(&self, alpha: Rat) -> u32 {
        let mut den = *alpha.denom();
        let mut lvl = 0;
        while den % self.p as i64 == 0 {
            den /= self.p as i64;
            lvl += 1;
        }
        if den.abs() != 1 {
            // callers validate p-power denominators before asking for a level
            u32::MAX
        } else {
            lvl
        }
    }

    /// `zeta^alpha` for `alpha in Z[1/p]/Z` realised at this tower level:
    /// requires `p^n alpha` integral.
    pub fn zeta_power(&self, alpha: Rat) -> Result<CycElt> {
        let lvl = self.level_of(alpha);
        if lvl == u32::MAX || lvl > self.n {
            return Err(Error::InsufficientTowerLevel {
                alpha,
                needed: if lvl == u32::MAX { u32::MAX } else { lvl },
                have: self.n,
            });
        }
        let k = alpha * Rat::from_integer(self.pn() as i64);
        Ok(self.zeta_pow_int(k.to_integer()))
    }

    /// `epsilon_alpha = 1 - zeta^(-alpha)`, the twist annihilator for a
    /// nonzero class. Its valuation is `1 / (p^(level - 1) (p - 1))`.
    pub fn epsilon_alpha(&self, alpha: Rat) -> Result<CycElt> {
        let frac = alpha - alpha.floor();
        if frac.is_zero() {
            return Err(Error::EpsilonUndefinedAtZero);
        }
        let z = self.zeta_power(-frac + Rat::one())?;
        Ok(self.sub(&self.one(), &z))
    }

    /// Exact valuation of `epsilon_alpha` without computing the element.
    pub fn epsilon_val(&self, alpha: Rat) -> Result<Rat> {
        let frac = alpha - alpha.floor();
        if frac.is_zero() {
            return Err(Error::EpsilonUndefinedAtZero);
        }
        let lvl = self.level_of(frac);
        if lvl == u32::MAX || lvl > self.n {
            return Err(Error::InsufficientTowerLevel {
                alpha,
                needed: if lvl == u32::MAX { u32::MAX } else { lvl },
                have: self.n,
            });
        }
        let denom = self.p.pow(lvl.saturating_sub(1)) as i64 * (self.p as i64 - 1);
        Ok(Rat::new(1, denom))
    }

    /// Largest integer `t` with `p^t` dividing `k!`, by Legendre's formula.
    pub fn nu_p_factorial(&self, k: u64) -> u64 {
        let mut total = 0;
        let mut q = self.p;
        while q <= k {
            total += k / q;
            match q.checked_mul(self.p) {
                Some(next) => q = next,
                None => break,
            }
        }
        total
    }
}

fn neg_mod(a: u64, m: u64) -> u64 {
    if a == 0 {
        0
    } else {
        m - a
    }
}

fn add_mul_mod(acc: u64, a: u64, b: u64, m: u64) -> u64 {
    let prod = (a as u128 * b as u128) % m as u128;
    ((acc as u128 + prod) % m as u128) as u64
}

/// Coefficients of `(1 + x)^k` mod `m`, computed by the Pascal recurrence to
/// avoid factorial divisions mod a non-prime.
fn binomial_poly(k: usize, m: u64) -> Vec<u64> {
    let mut row = vec![0u64; k + 1];
    row[0] = 1;
    for _ in 0..k {
        for t in (1..=k).rev() {
            let s = row[t] as u128 + row[t - 1] as u128;
            row[t] = (s % m as u128) as u64;
        }
    }
    row
}

fn poly_mul_trunc(a: &[u64], b: &[u64], m: u64, max_len: usize) -> Vec<u64> {
    let len = (a.len() + b.len() - 1).min(max_len);
    let mut out = vec![0u128; len];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 || i >= len {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            if i + j >= len {
                break;
            }
            out[i + j] += (x as u128 * y as u128) % m as u128;
        }
    }
    out.iter().map(|&v| (v % m as u128) as u64).collect()
}

/// Inverse of a unit mod `p^N` via the extended Euclid algorithm on i128.
fn inv_mod_prime_power(c: u64, p: u64, m: u64) -> u64 {
    assert!(c % p != 0, "inverse of a non-unit constant term");
    let (mut r0, mut r1) = (m as i128, c as i128);
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    debug_assert_eq!(r0, 1);
    (((t0 % m as i128) + m as i128) % m as i128) as u64
}

/// Least nonnegative residue of a rational with p-power denominator,
/// used when a class in `Z[1/p]/Z` must be realised as an integer exponent.
pub fn rat_mod_one(alpha: Rat) -> Rat {
    alpha - alpha.floor()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_default() -> PrecisionContext {
        PrecisionContext::new(5, 2, 10, 2, 2, 6, Rat::new(1, 2)).unwrap()
    }

    fn ctx_p3() -> PrecisionContext {
        PrecisionContext::new(3, 1, 8, 1, 1, 3, Rat::new(1, 1)).unwrap()
    }

    #[test]
    fn eisenstein_p3_n1_is_frozen() {
        let ctx = ctx_p3();
        // E_1(x) = x^2 + 3x + 3 for p = 3
        assert_eq!(ctx.e, 2);
        assert_eq!(ctx.eisenstein, vec![3, 3, 1]);
        // pi^2 = -3 pi - 3
        let pi2 = ctx.mul(&ctx.pi(), &ctx.pi());
        let expect = ctx.from_coeffs(&[-3, -3]);
        assert_eq!(pi2, expect);
    }

    #[test]
    fn eisenstein_defaults_shape() {
        let ctx = ctx_default();
        assert_eq!(ctx.e, 20);
        assert_eq!(ctx.modulus, 9_765_625);
        assert_eq!(ctx.eisenstein[0], 5);
        assert_eq!(ctx.eisenstein[20], 1);
        // Eisenstein: all non-leading coefficients divisible by p
        for &c in &ctx.eisenstein[..20] {
            assert_eq!(c % 5, 0);
        }
    }

    #[test]
    fn valuation_examples() {
        let ctx = ctx_default();
        assert_eq!(ctx.valuation(&ctx.pi()), Val::Fin(Rat::new(1, 20)));
        assert_eq!(ctx.valuation(&ctx.from_u64(5)), Val::Fin(Rat::one()));
        assert_eq!(ctx.valuation(&ctx.zero()), Val::Bot);
        // nu(p) = 1 = e * nu(pi): p / pi^e is a unit
        let pie = ctx.pow(&ctx.pi(), 20);
        let q = ctx.div_exact(&ctx.from_u64(5), &pie).unwrap();
        assert_eq!(ctx.valuation(&q), Val::Fin(Rat::zero()));
    }

    #[test]
    fn rho1_valuation_is_r() {
        let ctx = ctx_default();
        assert_eq!(ctx.valuation(&ctx.rho1()), Val::Fin(Rat::new(1, 4)));
        // at n = 1 the descent uniformiser is pi itself
        let c3 = ctx_p3();
        assert_eq!(c3.rho1(), c3.pi());
    }

    #[test]
    fn epsilon_valuations() {
        let ctx = ctx_default();
        // level-1 class: nu = 1/(p-1)
        let e1 = ctx.epsilon_alpha(Rat::new(1, 5)).unwrap();
        assert_eq!(ctx.valuation(&e1), Val::Fin(Rat::new(1, 4)));
        // level-2 class: nu = 1/(p (p-1))
        let e2 = ctx.epsilon_alpha(Rat::new(1, 25)).unwrap();
        assert_eq!(ctx.valuation(&e2), Val::Fin(Rat::new(1, 20)));
        assert_eq!(ctx.epsilon_val(Rat::new(1, 5)).unwrap(), Rat::new(1, 4));
        assert_eq!(ctx.epsilon_val(Rat::new(1, 25)).unwrap(), Rat::new(1, 20));
        assert_eq!(ctx.epsilon_val(Rat::new(3, 25)).unwrap(), Rat::new(1, 20));
        assert!(matches!(
            ctx.epsilon_alpha(Rat::zero()),
            Err(Error::EpsilonUndefinedAtZero)
        ));
        assert!(matches!(
            ctx.zeta_power(Rat::new(1, 125)),
            Err(Error::InsufficientTowerLevel { .. })
        ));
    }

    #[test]
    fn zeta_is_group_homomorphism() {
        let ctx = ctx_default();
        let a = Rat::new(3, 25);
        let b = Rat::new(4, 5);
        let za = ctx.zeta_power(a).unwrap();
        let zb = ctx.zeta_power(b).unwrap();
        let zab = ctx.zeta_power(rat_mod_one(a + b)).unwrap();
        assert_eq!(ctx.mul(&za, &zb), zab);
        // full order: zeta^(p^n) = 1
        let z = ctx.zeta_pow_int(1);
        assert_eq!(ctx.pow(&z, ctx.pn()), ctx.one());
        assert_ne!(ctx.pow(&z, ctx.pn() / 5), ctx.one());
    }

    #[test]
    fn div_pi_restores_product() {
        let ctx = ctx_default();
        let x = ctx.from_coeffs(&[10, 3, 0, 7, 123456]);
        let xp = ctx.mul(&x, &ctx.pi());
        let back = ctx.div_pi(&xp).unwrap();
        assert_eq!(ctx.mul(&back, &ctx.pi()), xp);
        // and the quotient matches the original exactly here
        assert_eq!(back, x);
        // non-divisible input is rejected
        assert!(matches!(ctx.div_pi(&ctx.one()), Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn div_p_is_exact_and_guarded() {
        let ctx = ctx_default();
        let x = ctx.from_coeffs(&[5, 10, 0, 25]);
        let q = ctx.div_p(&x).unwrap();
        assert_eq!(ctx.mul_i64(&q, 5), x);
        assert!(ctx.div_p(&ctx.from_u64(7)).is_err());
    }

    #[test]
    fn inv_unit_examples() {
        let ctx = ctx_default();
        let u = ctx.from_coeffs(&[3, 17, 5, 0, 2]);
        let inv = ctx.inv_unit(&u).unwrap();
        assert_eq!(ctx.mul(&u, &inv), ctx.one());
        let err = ctx.inv_unit(&ctx.pi());
        assert!(matches!(err, Err(Error::NonUnit { .. })));
    }

    #[test]
    fn div_exact_round_trip() {
        let ctx = ctx_default();
        let y = ctx.from_coeffs(&[0, 5, 1, 0, 3]); // valuation 1/e
        let x = ctx.from_coeffs(&[2, 0, 11, 1]);
        let prod = ctx.mul(&x, &y);
        let q = ctx.div_exact(&prod, &y).unwrap();
        assert_eq!(ctx.mul(&q, &y), prod);
        assert_eq!(q, x);
    }

    #[test]
    fn legendre_factorial_valuation() {
        let ctx = ctx_default();
        assert_eq!(ctx.nu_p_factorial(4), 0);
        assert_eq!(ctx.nu_p_factorial(5), 1);
        assert_eq!(ctx.nu_p_factorial(25), 6);
        assert_eq!(ctx.nu_p_factorial(6), 1); // G! at defaults
    }

    #[test]
    fn context_validation() {
        assert!(PrecisionContext::new(4, 2, 10, 2, 2, 6, Rat::new(1, 2)).is_err());
        assert!(PrecisionContext::new(2, 2, 10, 2, 2, 6, Rat::new(1, 2)).is_err());
        // a <= 1/(p-1) violates smallness
        assert!(matches!(
            PrecisionContext::new(5, 2, 10, 2, 2, 6, Rat::new(1, 4)),
            Err(Error::SmallnessHypothesis { .. })
        ));
        // a e must be integral
        assert!(PrecisionContext::new(5, 2, 10, 2, 2, 6, Rat::new(1, 3)).is_err());
        // N below headroom
        assert!(PrecisionContext::new(5, 2, 2, 2, 2, 6, Rat::new(1, 2)).is_err());
        // p^N >= 2^63
        assert!(matches!(
            PrecisionContext::new(5, 2, 28, 2, 2, 6, Rat::new(1, 2)),
            Err(Error::PrecisionOutOfRange { .. })
        ));
    }

    #[test]
    fn context_serde_round_trip() {
        let ctx = ctx_default();
        let s = serde_json::to_string(&ctx).unwrap();
        let back: PrecisionContext = serde_json::from_str(&s).unwrap();
        assert_eq!(back.eisenstein, ctx.eisenstein);
        assert_eq!(back.a, ctx.a);
        assert_eq!(back.modulus, ctx.modulus);
    }
}
