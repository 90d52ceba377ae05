//! Truncated Laurent windows over the toric chart and the chart group action.
//!
//! A monomial `T^alpha` with `alpha in (Z[1/p])^d` is keyed by the integer
//! numerator vector of `alpha` at the context's tower level: `alpha_i =
//! key_i / p^n`, with `|alpha_i| <= D`. The chart group element
//! `gamma = prod gamma_i^(k_i)` acts by `T^alpha -> zeta^(sum k_i alpha_i)
//! T^alpha`, which is an exact coefficient twist monomial by monomial.
//!
//! Products whose exponents escape the window drop those terms and mark the
//! element with a sticky `overflow` flag; everything else stays exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cyclotomic::{CycElt, PrecisionContext, Val};
use crate::{Error, Rat, Result};

/// A truncated Laurent element: sparse coefficients over monomial keys plus a
/// sticky flag recording whether any product term ever escaped the window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "LaurentRepr", try_from = "LaurentRepr")]
pub struct LaurentElt {
    /// Nonzero coefficients keyed by exponent numerators at level `n`.
    pub coeffs: BTreeMap<Vec<i64>, CycElt>,
    /// True when some product term escaped the window and was dropped.
    pub overflow: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LaurentRepr {
    terms: Vec<(Vec<i64>, CycElt)>,
    overflow: bool,
}

impl From<LaurentElt> for LaurentRepr {
    fn from(x: LaurentElt) -> LaurentRepr {
        LaurentRepr {
            terms: x.coeffs.into_iter().collect(),
            overflow: x.overflow,
        }
    }
}

impl TryFrom<LaurentRepr> for LaurentElt {
    type Error = String;
    fn try_from(r: LaurentRepr) -> std::result::Result<Self, String> {
        let mut coeffs = BTreeMap::new();
        for (k, c) in r.terms {
            if coeffs.insert(k, c).is_some() {
                return Err("duplicate monomial key".into());
            }
        }
        Ok(LaurentElt { coeffs, overflow: r.overflow })
    }
}

impl LaurentElt {
    pub fn zero() -> LaurentElt {
        LaurentElt { coeffs: BTreeMap::new(), overflow: false }
    }

    /// Number of monomials with nonzero coefficient.
    pub fn support_len(&self) -> usize {
        self.coeffs.len()
    }
}

/// Ring and Galois operations for Laurent windows at a fixed context.
/// Wraps a borrowed [`PrecisionContext`] so monomial arithmetic can use the
/// tower level and window radius.
#[derive(Debug, Clone, Copy)]
pub struct ToricRing<'a> {
    pub ctx: &'a PrecisionContext,
}

impl<'a> ToricRing<'a> {
    pub fn new(ctx: &'a PrecisionContext) -> Self {
        ToricRing { ctx }
    }

    /// Numerator bound for the window: `|key_i| <= D * p^n`.
    pub fn key_bound(&self) -> i64 {
        self.ctx.window * self.ctx.pn() as i64
    }

    fn check_key(&self, key: &[i64]) -> Result<()> {
        if key.len() != self.ctx.d {
            return Err(Error::ShapeMismatch(format!(
                "monomial key length {} for chart dimension {}",
                key.len(),
                self.ctx.d
            )));
        }
        let bound = self.key_bound();
        for &k in key {
            if k.abs() > bound {
                return Err(Error::WindowOverflow { degree: k, radius: bound });
            }
        }
        Ok(())
    }

    /// Build an element from `(key, coefficient)` pairs, dropping zeros.
    pub fn from_terms(&self, terms: Vec<(Vec<i64>, CycElt)>) -> Result<LaurentElt> {
        let mut coeffs = BTreeMap::new();
        for (key, c) in terms {
            self.check_key(&key)?;
            if self.ctx.is_zero(&c) {
                continue;
            }
            let slot = coeffs.entry(key).or_insert_with(|| self.ctx.zero());
            *slot = self.ctx.add(slot, &c);
            if self.ctx.is_zero(slot) {
                // re-fetch to remove: handled in the normalize pass below
            }
        }
        coeffs.retain(|_, c| !self.ctx.is_zero(c));
        Ok(LaurentElt { coeffs, overflow: false })
    }

    /// The constant `c * T^0`.
    pub fn constant(&self, c: CycElt) -> LaurentElt {
        let mut coeffs = BTreeMap::new();
        if !self.ctx.is_zero(&c) {
            coeffs.insert(vec![0; self.ctx.d], c);
        }
        LaurentElt { coeffs, overflow: false }
    }

    pub fn one(&self) -> LaurentElt {
        self.constant(self.ctx.one())
    }

    pub fn is_zero(&self, f: &LaurentElt) -> bool {
        f.coeffs.is_empty()
    }

    pub fn add(&self, f: &LaurentElt, g: &LaurentElt) -> LaurentElt {
        let mut coeffs = f.coeffs.clone();
        for (k, c) in &g.coeffs {
            match coeffs.get_mut(k) {
                Some(slot) => {
                    *slot = self.ctx.add(slot, c);
                }
                None => {
                    coeffs.insert(k.clone(), c.clone());
                }
            }
        }
        coeffs.retain(|_, c| !self.ctx.is_zero(c));
        LaurentElt { coeffs, overflow: f.overflow || g.overflow }
    }

    pub fn sub(&self, f: &LaurentElt, g: &LaurentElt) -> LaurentElt {
        self.add(f, &self.neg(g))
    }

    pub fn neg(&self, f: &LaurentElt) -> LaurentElt {
        let coeffs = f.coeffs.iter().map(|(k, c)| (k.clone(), self.ctx.neg(c))).collect();
        LaurentElt { coeffs, overflow: f.overflow }
    }

    /// Scale every coefficient by a ring element.
    pub fn scale(&self, f: &LaurentElt, c: &CycElt) -> LaurentElt {
        let mut coeffs = BTreeMap::new();
        for (k, v) in &f.coeffs {
            let prod = self.ctx.mul(v, c);
            if !self.ctx.is_zero(&prod) {
                coeffs.insert(k.clone(), prod);
            }
        }
        LaurentElt { coeffs, overflow: f.overflow }
    }

    /// Full product. Nonzero terms escaping the window are dropped and
    /// flagged; a term whose coefficient already vanishes at this precision
    /// loses no information, so it does not set the flag.
    pub fn mul(&self, f: &LaurentElt, g: &LaurentElt) -> LaurentElt {
        let bound = self.key_bound();
        let mut coeffs: BTreeMap<Vec<i64>, CycElt> = BTreeMap::new();
        let mut overflow = f.overflow || g.overflow;
        for (ka, ca) in &f.coeffs {
            for (kb, cb) in &g.coeffs {
                let prod = self.ctx.mul(ca, cb);
                if self.ctx.is_zero(&prod) {
                    continue;
                }
                let key: Vec<i64> = ka.iter().zip(kb).map(|(&x, &y)| x + y).collect();
                if key.iter().any(|&k| k.abs() > bound) {
                    overflow = true;
                    continue;
                }
                match coeffs.get_mut(&key) {
                    Some(slot) => {
                        *slot = self.ctx.add(slot, &prod);
                    }
                    None => {
                        coeffs.insert(key, prod);
                    }
                }
            }
        }
        coeffs.retain(|_, c| !self.ctx.is_zero(c));
        LaurentElt { coeffs, overflow }
    }

    /// Gauss valuation: the minimum coefficient valuation over the window.
    pub fn gauss_valuation(&self, f: &LaurentElt) -> Val {
        let mut v = Val::Bot;
        for c in f.coeffs.values() {
            v = v.min(self.ctx.valuation(c));
        }
        v
    }

    /// Divide every coefficient by a ring element, exactly.
    pub fn div_coeff(&self, f: &LaurentElt, d: &CycElt) -> Result<LaurentElt> {
        let mut coeffs = BTreeMap::new();
        for (k, c) in &f.coeffs {
            let q = self.ctx.div_exact(c, d)?;
            if !self.ctx.is_zero(&q) {
                coeffs.insert(k.clone(), q);
            }
        }
        Ok(LaurentElt { coeffs, overflow: f.overflow })
    }

    /// Reduce every coefficient of a wider-precision element into this
    /// context, dropping coefficients that become zero.
    pub fn reduce_from(&self, f: &LaurentElt) -> LaurentElt {
        let mut coeffs = BTreeMap::new();
        for (k, c) in &f.coeffs {
            let r = self.ctx.reduce_from(c);
            if !self.ctx.is_zero(&r) {
                coeffs.insert(k.clone(), r);
            }
        }
        LaurentElt { coeffs, overflow: f.overflow }
    }

    /// `zeta` exponent numerator for the action of the group vector `k`
    /// on the monomial `key`: `sum_i k_i * key_i mod p^n`.
    fn action_exponent(&self, k: &[i64], key: &[i64]) -> i64 {
        let pn = self.ctx.pn() as i128;
        let mut acc: i128 = 0;
        for (&ki, &ai) in k.iter().zip(key) {
            acc = (acc + (ki as i128 * ai as i128) % pn) % pn;
        }
        (((acc % pn) + pn) % pn) as i64
    }

    /// Action of `gamma = prod gamma_i^(k_i)`: exact coefficient twist by
    /// `zeta^(k . alpha)` on each monomial.
    pub fn gamma_act(&self, k: &[i64], f: &LaurentElt) -> Result<LaurentElt> {
        if k.len() != self.ctx.d {
            return Err(Error::ShapeMismatch(format!(
                "group vector length {} for chart dimension {}",
                k.len(),
                self.ctx.d
            )));
        }
        let mut coeffs = BTreeMap::new();
        for (key, c) in &f.coeffs {
            let exp = self.action_exponent(k, key);
            let tw = self.ctx.zeta_pow_int(exp);
            let prod = self.ctx.mul(c, &tw);
            if !self.ctx.is_zero(&prod) {
                coeffs.insert(key.clone(), prod);
            }
        }
        Ok(LaurentElt { coeffs, overflow: f.overflow })
    }

    /// True when the monomial is integral (exponent in `Z^d`).
    pub fn is_integral_key(&self, key: &[i64]) -> bool {
        let pn = self.ctx.pn() as i64;
        key.iter().all(|&k| k.rem_euclid(pn) == 0)
    }

    /// Split into the integral part and the complement (non-integral support).
    pub fn split_integral(&self, f: &LaurentElt) -> (LaurentElt, LaurentElt) {
        let mut int = LaurentElt::zero();
        let mut comp = LaurentElt::zero();
        int.overflow = f.overflow;
        comp.overflow = f.overflow;
        for (key, c) in &f.coeffs {
            if self.is_integral_key(key) {
                int.coeffs.insert(key.clone(), c.clone());
            } else {
                comp.coeffs.insert(key.clone(), c.clone());
            }
        }
        (int, comp)
    }

    /// `zeta^(alpha_j) - 1` for the monomial `key`; the element that the
    /// shift `gamma_j - 1` multiplies this monomial's coefficient by, up to
    /// the unit `zeta^(alpha_j)`. Errors when `alpha_j` is integral.
    pub fn epsilon_of(&self, key: &[i64], j: usize) -> Result<CycElt> {
        let pn = self.ctx.pn() as i64;
        let k = key[j].rem_euclid(pn);
        if k == 0 {
            return Err(Error::NotInComplement {
                monomial: format!("{key:?}"),
            });
        }
        let z = self.ctx.zeta_pow_int(k);
        Ok(self.ctx.sub(&z, &self.ctx.one()))
    }

    /// Exact valuation of `zeta^(alpha_j) - 1` for the monomial `key`:
    /// `1 / (p^(level-1) (p-1))` where `level` is the p-power level of
    /// `alpha_j` mod 1.
    pub fn epsilon_val_of(&self, key: &[i64], j: usize) -> Result<Rat> {
        let pn = self.ctx.pn() as i64;
        let k = key[j].rem_euclid(pn);
        if k == 0 {
            return Err(Error::NotInComplement {
                monomial: format!("{key:?}"),
            });
        }
        self.ctx.epsilon_val(Rat::new(k, pn))
    }

    /// Solve `(gamma_j - 1) x = f` monomial by monomial on the complement of
    /// the `j`-integral monomials. Fails with [`Error::NotInComplement`] if
    /// `f` has support where `alpha_j` is integral (the shift vanishes
    /// there), and with [`Error::NotDivisible`] when a coefficient is not a
    /// multiple of `zeta^(alpha_j) - 1`.
    pub fn solve_gamma_shift(&self, j: usize, f: &LaurentElt) -> Result<LaurentElt> {
        if j >= self.ctx.d {
            return Err(Error::ShapeMismatch(format!(
                "coordinate {j} for chart dimension {}",
                self.ctx.d
            )));
        }
        let mut coeffs = BTreeMap::new();
        for (key, c) in &f.coeffs {
            let eps = self.epsilon_of(key, j)?;
            let x = self.ctx.div_exact(c, &eps)?;
            if !self.ctx.is_zero(&x) {
                coeffs.insert(key.clone(), x);
            }
        }
        Ok(LaurentElt { coeffs, overflow: f.overflow })
    }

    /// Apply `gamma_j - 1` directly (for checking solves).
    pub fn gamma_shift(&self, j: usize, f: &LaurentElt) -> Result<LaurentElt> {
        let mut k = vec![0i64; self.ctx.d];
        k[j] = 1;
        let moved = self.gamma_act(&k, f)?;
        Ok(self.sub(&moved, f))
    }

    /// Canonical representative of a monomial's coset mod `Z^d`:
    /// numerators reduced into `[0, p^n)`.
    pub fn coset_of(&self, key: &[i64]) -> Vec<i64> {
        let pn = self.ctx.pn() as i64;
        key.iter().map(|&k| k.rem_euclid(pn)).collect()
    }

    /// All window monomials in the coset of `rep` (numerators congruent to
    /// `rep` mod `p^n`), in lexicographic order.
    pub fn coset_keys(&self, rep: &[i64]) -> Vec<Vec<i64>> {
        let pn = self.ctx.pn() as i64;
        let bound = self.key_bound();
        let mut axes: Vec<Vec<i64>> = Vec::with_capacity(self.ctx.d);
        for &r in rep {
            let r = r.rem_euclid(pn);
            let mut axis = Vec::new();
            let mut k = r - ((r + bound) / pn) * pn;
            while k < -bound {
                k += pn;
            }
            while k <= bound {
                axis.push(k);
                k += pn;
            }
            axes.push(axis);
        }
        let mut keys = vec![Vec::with_capacity(self.ctx.d)];
        for axis in &axes {
            let mut next = Vec::with_capacity(keys.len() * axis.len());
            for prefix in &keys {
                for &v in axis {
                    let mut k = prefix.clone();
                    k.push(v);
                    next.push(k);
                }
            }
            keys = next;
        }
        keys
    }

    /// The integral window monomials, `(2D+1)^d` of them.
    pub fn integral_keys(&self) -> Vec<Vec<i64>> {
        self.coset_keys(&vec![0; self.ctx.d])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cyclotomic::PrecisionContext;

    fn ctx() -> PrecisionContext {
        PrecisionContext::new(5, 2, 10, 2, 2, 6, Rat::new(1, 2)).unwrap()
    }

    #[test]
    fn product_respects_window_and_flags_overflow() {
        let c = ctx();
        let t = ToricRing::new(&c);
        // T_1^2 * T_1 escapes the window D = 2
        let f = t.from_terms(vec![(vec![50, 0], c.one())]).unwrap();
        let g = t.from_terms(vec![(vec![25, 0], c.one()), (vec![0, 0], c.from_u64(3))]).unwrap();
        let prod = t.mul(&f, &g);
        assert!(prod.overflow);
        assert_eq!(prod.coeffs.len(), 1);
        assert_eq!(prod.coeffs[&vec![50, 0]], c.from_u64(3));
        // overflow is sticky through later additions
        let sum = t.add(&prod, &t.one());
        assert!(sum.overflow);
    }

    #[test]
    fn gamma_action_is_exact_twist() {
        let c = ctx();
        let t = ToricRing::new(&c);
        // monomial T_1^(1/25): gamma_1 multiplies by zeta_{25}
        let f = t.from_terms(vec![(vec![1, 0], c.one())]).unwrap();
        let g = t.gamma_act(&[1, 0], &f).unwrap();
        assert_eq!(g.coeffs[&vec![1, 0]], c.zeta_pow_int(1));
        // gamma_2 fixes it
        let h = t.gamma_act(&[0, 1], &f).unwrap();
        assert_eq!(h, f);
        // group law: acting by k then l equals acting by k + l
        let f2 = t.from_terms(vec![(vec![7, 3], c.from_u64(11))]).unwrap();
        let a = t.gamma_act(&[2, 1], &t.gamma_act(&[1, 4], &f2).unwrap()).unwrap();
        let b = t.gamma_act(&[3, 5], &f2).unwrap();
        assert_eq!(a, b);
        // inverse action undoes
        let back = t.gamma_act(&[-3, -5], &b).unwrap();
        assert_eq!(back, f2);
    }

    #[test]
    fn integral_monomials_are_galois_fixed() {
        let c = ctx();
        let t = ToricRing::new(&c);
        let f = t.from_terms(vec![(vec![25, -50], c.from_u64(7))]).unwrap();
        let g = t.gamma_act(&[3, -2], &f).unwrap();
        assert_eq!(g, f);
    }

    #[test]
    fn split_integral_partitions_support() {
        let c = ctx();
        let t = ToricRing::new(&c);
        let f = t
            .from_terms(vec![
                (vec![0, 0], c.one()),
                (vec![25, 0], c.from_u64(2)),
                (vec![1, 0], c.from_u64(3)),
                (vec![5, 30], c.from_u64(4)),
            ])
            .unwrap();
        let (int, comp) = t.split_integral(&f);
        assert_eq!(int.coeffs.len(), 2);
        assert_eq!(comp.coeffs.len(), 2);
        assert_eq!(t.add(&int, &comp), f);
        assert!(comp.coeffs.contains_key(&vec![1, 0]));
        assert!(comp.coeffs.contains_key(&vec![5, 30]));
    }

    #[test]
    fn gauss_valuation_minimum() {
        let c = ctx();
        let t = ToricRing::new(&c);
        let f = t
            .from_terms(vec![
                (vec![0, 0], c.from_u64(25)),
                (vec![1, 0], c.mul(&c.pi(), &c.from_u64(5))),
            ])
            .unwrap();
        // min(2, 1 + 1/20) = 1 + 1/20
        assert_eq!(t.gauss_valuation(&f), Val::Fin(Rat::new(21, 20)));
        assert_eq!(t.gauss_valuation(&LaurentElt::zero()), Val::Bot);
    }

    #[test]
    fn solve_gamma_shift_round_trip() {
        let c = ctx();
        let t = ToricRing::new(&c);
        // coefficient divisible by epsilon of the monomial: pick c_alpha = p
        let f = t
            .from_terms(vec![
                (vec![5, 0], c.from_u64(25)),
                (vec![1, 10], c.from_u64(125)),
            ])
            .unwrap();
        let x = t.solve_gamma_shift(0, &f).unwrap();
        let check = t.gamma_shift(0, &x).unwrap();
        assert_eq!(check, f);
        // integral support in coordinate 0 is rejected
        let bad = t.from_terms(vec![(vec![25, 1], c.from_u64(25))]).unwrap();
        assert!(matches!(
            t.solve_gamma_shift(0, &bad),
            Err(Error::NotInComplement { .. })
        ));
    }

    #[test]
    fn epsilon_of_levels() {
        let c = ctx();
        let t = ToricRing::new(&c);
        // level-2 monomial: nu = 1/20
        assert_eq!(t.epsilon_val_of(&[1, 0], 0).unwrap(), Rat::new(1, 20));
        // level-1 monomial: nu = 1/4
        assert_eq!(t.epsilon_val_of(&[5, 0], 0).unwrap(), Rat::new(1, 4));
        let eps = t.epsilon_of(&[5, 0], 0).unwrap();
        assert_eq!(c.valuation(&eps), Val::Fin(Rat::new(1, 4)));
    }

    #[test]
    fn coset_enumeration_counts() {
        let c = ctx();
        let t = ToricRing::new(&c);
        let ints = t.integral_keys();
        assert_eq!(ints.len(), 25); // (2D+1)^2
        assert!(ints.contains(&vec![-50, 25]));
        let cs = t.coset_keys(&[1, 0]);
        // coordinate with nonzero residue has 2D slots, integral one 2D+1
        assert_eq!(cs.len(), 4 * 5);
        for k in &cs {
            assert_eq!(t.coset_of(k), vec![1, 0]);
            assert!(k.iter().all(|&v| v.abs() <= t.key_bound()));
        }
    }

    #[test]
    fn window_bound_rejects_out_of_range_keys() {
        let c = ctx();
        let t = ToricRing::new(&c);
        assert!(matches!(
            t.from_terms(vec![(vec![51, 0], c.one())]),
            Err(Error::WindowOverflow { .. })
        ));
    }
}
