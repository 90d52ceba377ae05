//! The truncated period lattice and its distinguished operators.
//!
//! An element is a polynomial in the lattice generators `rho Y_1, ...,
//! rho Y_d` with coefficients in the Laurent window, cut at per-variable
//! degree `G`. Coordinates are stored against the *normalised* basis
//! `(rho Y)^m = rho^(|m|) Y^m`, which multiplies without reference to `rho`;
//! the radius enters only through the operators (shift, derivative, log of
//! the chart action) and through basis conversion.
//!
//! Two bases of the degree filtration matter: the normalised monomials and
//! the falling factorials `F_n(Y) = Y (Y-1) ... (Y-n+1)`, which satisfy
//! `F_n(Y+1) - F_n(Y) = n F_(n-1)(Y)` and make the chart action
//! superdiagonal. Conversion between them is a unitriangular integer-Stirling
//! transform with the `rho`-powers folded in, so it is exact both ways.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cyclotomic::{CycElt, PrecisionContext, Val};
use crate::matrix::Mat;
use crate::series::{exp_cutoff, exp_tail_floor, TailBound};
use crate::toric::{LaurentElt, ToricRing};
use crate::{Error, Rat, Result};

/// Polynomial in the normalised lattice generators with Laurent coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "PeriodRepr", try_from = "PeriodRepr")]
pub struct PeriodElt {
    /// Nonzero coefficients keyed by Y-degree multi-index (length `d`,
    /// entries `<= G`).
    pub coeffs: BTreeMap<Vec<u32>, LaurentElt>,
    /// True when a product escaped the Y-degree window and terms were dropped.
    pub overflow: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PeriodRepr {
    terms: Vec<(Vec<u32>, LaurentElt)>,
    overflow: bool,
}

impl From<PeriodElt> for PeriodRepr {
    fn from(x: PeriodElt) -> PeriodRepr {
        PeriodRepr { terms: x.coeffs.into_iter().collect(), overflow: x.overflow }
    }
}

impl TryFrom<PeriodRepr> for PeriodElt {
    type Error = String;
    fn try_from(r: PeriodRepr) -> std::result::Result<Self, String> {
        let mut coeffs = BTreeMap::new();
        for (k, c) in r.terms {
            if coeffs.insert(k, c).is_some() {
                return Err("duplicate Y-degree key".into());
            }
        }
        Ok(PeriodElt { coeffs, overflow: r.overflow })
    }
}

impl PeriodElt {
    pub fn zero() -> PeriodElt {
        PeriodElt { coeffs: BTreeMap::new(), overflow: false }
    }

    /// True when the element or any of its Laurent coefficients lost terms
    /// to a window.
    pub fn any_overflow(&self) -> bool {
        self.overflow || self.coeffs.values().any(|c| c.overflow)
    }
}

/// A sampled lattice radius: the ring element, its exact valuation, and the
/// token it was parsed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoValue {
    pub elt: CycElt,
    pub val: Rat,
    pub label: String,
}

impl RhoValue {
    /// The reference radius `zeta_p - 1`, valuation `1/(p-1)`.
    pub fn rho_k(ctx: &PrecisionContext) -> RhoValue {
        RhoValue { elt: ctx.rho1(), val: ctx.r(), label: "rho_k".into() }
    }

    /// `pi^k`, valuation `k/e`; must be at least the reference radius.
    pub fn pi_pow(ctx: &PrecisionContext, k: u32) -> Result<RhoValue> {
        let val = Rat::new(k as i64, ctx.e as i64);
        if val < ctx.r() {
            return Err(Error::RhoTooLarge { need: ctx.r().to_string(), got: val.to_string() });
        }
        Ok(RhoValue {
            elt: ctx.pow(&ctx.pi(), k as u64),
            val,
            label: format!("pi^{k}"),
        })
    }

    /// `p (zeta_p - 1)`, valuation `1 + 1/(p-1)`: strictly inside the radius.
    pub fn p_rho_k(ctx: &PrecisionContext) -> RhoValue {
        RhoValue {
            elt: ctx.mul(&ctx.rho1(), &ctx.from_u64(ctx.p)),
            val: Rat::new(1, 1) + ctx.r(),
            label: "p_rho_k".into(),
        }
    }

    /// Parse a radius token: `rho_k`, `p_rho_k`, or `pi^<k>`.
    pub fn parse(ctx: &PrecisionContext, token: &str) -> Result<RhoValue> {
        match token {
            "rho_k" => Ok(RhoValue::rho_k(ctx)),
            "p_rho_k" => Ok(RhoValue::p_rho_k(ctx)),
            _ => {
                if let Some(k) = token.strip_prefix("pi^") {
                    let k: u32 = k
                        .parse()
                        .map_err(|_| Error::MalformedInput(format!("radius token {token}")))?;
                    RhoValue::pi_pow(ctx, k)
                } else {
                    Err(Error::MalformedInput(format!("radius token {token}")))
                }
            }
        }
    }

    /// True when the valuation strictly exceeds `1/(p-1)`.
    pub fn is_strict(&self, ctx: &PrecisionContext) -> bool {
        self.val > ctx.r()
    }
}

/// Exact integer coefficients of the falling factorial `F_n`, ascending in
/// degree. Only valid while the signed Stirling numbers fit in `i128`
/// (`n <= 27`); the in-ring recurrences below carry the general case.
pub fn falling_factorial_coeffs(n: u32) -> Vec<i128> {
    assert!(n <= 27, "falling factorial coefficients overflow i128 beyond n = 27");
    let mut cur: Vec<i128> = vec![1];
    for m in 0..n as i128 {
        // F_(m+1) = F_m * (Y - m)
        let mut next = vec![0i128; cur.len() + 1];
        for (k, &c) in cur.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= m * c;
        }
        cur = next;
    }
    cur
}

/// Stirling subset numbers `S(n, k)` mod the context modulus, for the
/// monomial-to-falling-factorial direction.
fn stirling2_rows(ctx: &PrecisionContext, max_n: u32) -> Vec<Vec<u64>> {
    let m = ctx.modulus as u128;
    let size = max_n as usize + 1;
    let mut rows = vec![vec![0u64; size]; size];
    rows[0][0] = 1;
    for n in 1..size {
        for k in 1..=n {
            let v = (k as u128 * rows[n - 1][k] as u128 + rows[n - 1][k - 1] as u128) % m;
            rows[n][k] = v as u64;
        }
    }
    rows
}

/// Signed Stirling numbers of the first kind mod the modulus:
/// `F_n(Y) = sum_k s(n, k) Y^k`.
fn stirling1_rows(ctx: &PrecisionContext, max_n: u32) -> Vec<Vec<u64>> {
    let size = max_n as usize + 1;
    let mut rows = vec![vec![0u64; size]; size];
    rows[0][0] = 1;
    for n in 1..size {
        for k in 0..=n {
            // s(n, k) = s(n-1, k-1) - (n-1) s(n-1, k)
            let prev = if k > 0 { rows[n - 1][k - 1] } else { 0 };
            let scaled = ((n as u128 - 1) * rows[n - 1][k] as u128) % ctx.modulus as u128;
            let v = (prev as u128 + ctx.modulus as u128 - scaled as u64 as u128) % ctx.modulus as u128;
            rows[n][k] = v as u64;
        }
    }
    rows
}

/// Direction of a basis conversion on the lattice coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisDir {
    /// From normalised monomial coordinates to falling-factorial coordinates.
    MonomialToFalling,
    /// From falling-factorial coordinates back to normalised monomials.
    FallingToMonomial,
}

/// The superdiagonal change-of-basis matrix from the structure-constant
/// appendix: identity plus `X[i, i+1] = i eps` (1-indexed).
pub fn basis_x(ctx: &PrecisionContext, eps: &CycElt, size: usize) -> Mat<CycElt> {
    let mut m = Mat::<CycElt>::identity(ctx, size);
    for i in 0..size.saturating_sub(1) {
        *m.at_mut(i, i + 1) = ctx.mul_i64(eps, (i + 1) as i64);
    }
    m
}

/// Its upper-triangular inverse: `Y[i, j] = (-eps)^(j-i) (j-1)!/(i-1)!` above
/// the diagonal (1-indexed), identity on and below.
pub fn basis_y(ctx: &PrecisionContext, eps: &CycElt, size: usize) -> Mat<CycElt> {
    let mut m = Mat::<CycElt>::identity(ctx, size);
    for i in 0..size {
        let mut factor = ctx.one();
        for j in i + 1..size {
            // multiply by (-eps) * (j-1) when stepping j-1 -> j (1-indexed)
            factor = ctx.mul(&factor, &ctx.neg(eps));
            factor = ctx.mul_i64(&factor, j as i64);
            *m.at_mut(i, j) = factor.clone();
        }
    }
    m
}

/// Ring and operator algebra for period elements at a fixed context.
#[derive(Debug, Clone, Copy)]
pub struct PeriodRing<'a> {
    pub ctx: &'a PrecisionContext,
}

impl<'a> PeriodRing<'a> {
    pub fn new(ctx: &'a PrecisionContext) -> Self {
        PeriodRing { ctx }
    }

    fn toric(&self) -> ToricRing<'a> {
        ToricRing::new(self.ctx)
    }

    fn check_key(&self, key: &[u32]) -> Result<()> {
        if key.len() != self.ctx.d {
            return Err(Error::ShapeMismatch(format!(
                "Y-degree key length {} for chart dimension {}",
                key.len(),
                self.ctx.d
            )));
        }
        for &k in key {
            if k > self.ctx.y_cut {
                return Err(Error::WindowOverflow {
                    degree: k as i64,
                    radius: self.ctx.y_cut as i64,
                });
            }
        }
        Ok(())
    }

    pub fn from_terms(&self, terms: Vec<(Vec<u32>, LaurentElt)>) -> Result<PeriodElt> {
        let t = self.toric();
        let mut coeffs: BTreeMap<Vec<u32>, LaurentElt> = BTreeMap::new();
        for (key, c) in terms {
            self.check_key(&key)?;
            if t.is_zero(&c) {
                continue;
            }
            match coeffs.get_mut(&key) {
                Some(slot) => *slot = t.add(slot, &c),
                None => {
                    coeffs.insert(key, c);
                }
            }
        }
        coeffs.retain(|_, c| !c.coeffs.is_empty());
        Ok(PeriodElt { coeffs, overflow: false })
    }

    /// A constant (Y-degree zero) element.
    pub fn constant(&self, c: LaurentElt) -> PeriodElt {
        let mut coeffs = BTreeMap::new();
        if !c.coeffs.is_empty() {
            coeffs.insert(vec![0; self.ctx.d], c);
        }
        PeriodElt { coeffs, overflow: false }
    }

    pub fn one(&self) -> PeriodElt {
        self.constant(self.toric().one())
    }

    pub fn is_zero(&self, x: &PeriodElt) -> bool {
        x.coeffs.is_empty()
    }

    pub fn add(&self, x: &PeriodElt, y: &PeriodElt) -> PeriodElt {
        let t = self.toric();
        let mut coeffs = x.coeffs.clone();
        for (k, c) in &y.coeffs {
            match coeffs.get_mut(k) {
                Some(slot) => *slot = t.add(slot, c),
                None => {
                    coeffs.insert(k.clone(), c.clone());
                }
            }
        }
        coeffs.retain(|_, c| !c.coeffs.is_empty());
        PeriodElt { coeffs, overflow: x.overflow || y.overflow }
    }

    pub fn sub(&self, x: &PeriodElt, y: &PeriodElt) -> PeriodElt {
        self.add(x, &self.neg(y))
    }

    pub fn neg(&self, x: &PeriodElt) -> PeriodElt {
        let t = self.toric();
        let coeffs = x.coeffs.iter().map(|(k, c)| (k.clone(), t.neg(c))).collect();
        PeriodElt { coeffs, overflow: x.overflow }
    }

    /// Scale by a coefficient-ring element.
    pub fn scale(&self, x: &PeriodElt, c: &CycElt) -> PeriodElt {
        let t = self.toric();
        let mut coeffs = BTreeMap::new();
        for (k, v) in &x.coeffs {
            let s = t.scale(v, c);
            if !s.coeffs.is_empty() {
                coeffs.insert(k.clone(), s);
            }
        }
        PeriodElt { coeffs, overflow: x.overflow }
    }

    /// Scale by a Laurent element.
    pub fn scale_laurent(&self, x: &PeriodElt, c: &LaurentElt) -> PeriodElt {
        let t = self.toric();
        let mut coeffs = BTreeMap::new();
        let mut overflow = x.overflow || c.overflow;
        for (k, v) in &x.coeffs {
            let s = t.mul(v, c);
            overflow |= s.overflow;
            if !s.coeffs.is_empty() {
                coeffs.insert(k.clone(), s);
            }
        }
        PeriodElt { coeffs, overflow }
    }

    /// Full product; Y-degrees add, escaping terms drop with the flag set.
    pub fn mul(&self, x: &PeriodElt, y: &PeriodElt) -> PeriodElt {
        let t = self.toric();
        let mut coeffs: BTreeMap<Vec<u32>, LaurentElt> = BTreeMap::new();
        let mut overflow = x.overflow || y.overflow;
        for (ka, ca) in &x.coeffs {
            for (kb, cb) in &y.coeffs {
                let key: Vec<u32> = ka.iter().zip(kb).map(|(&a, &b)| a + b).collect();
                if key.iter().any(|&k| k > self.ctx.y_cut) {
                    overflow = true;
                    continue;
                }
                let prod = t.mul(ca, cb);
                if prod.coeffs.is_empty() {
                    overflow |= prod.overflow;
                    continue;
                }
                overflow |= prod.overflow;
                match coeffs.get_mut(&key) {
                    Some(slot) => *slot = t.add(slot, &prod),
                    None => {
                        coeffs.insert(key, prod);
                    }
                }
            }
        }
        coeffs.retain(|_, c| !c.coeffs.is_empty());
        PeriodElt { coeffs, overflow }
    }

    /// Minimum coefficient valuation across all slots.
    pub fn gauss_valuation(&self, x: &PeriodElt) -> Val {
        let t = self.toric();
        let mut v = Val::Bot;
        for c in x.coeffs.values() {
            v = v.min(t.gauss_valuation(c));
        }
        v
    }

    /// Substitute `Y_i -> Y_i + amount`. On normalised coordinates the
    /// binomial expansion picks up `rho` powers, staying integral:
    /// `(rho Y)^m -> sum_j C(m, j) (amount rho)^(m-j) (rho Y)^j`.
    pub fn shift_y(&self, i: usize, amount: i64, rho: &CycElt, x: &PeriodElt) -> Result<PeriodElt> {
        if i >= self.ctx.d {
            return Err(Error::ShapeMismatch(format!(
                "variable {i} for chart dimension {}",
                self.ctx.d
            )));
        }
        let t = self.toric();
        let g = self.ctx.y_cut as usize;
        // binom[m][j] = C(m, j) (amount rho)^(m-j) as ring elements
        let step = this_scaled(self.ctx, rho, amount);
        let mut pow_step = vec![self.ctx.one()];
        for _ in 0..g {
            let last = pow_step.last().unwrap();
            pow_step.push(self.ctx.mul(last, &step));
        }
        let mut coeffs: BTreeMap<Vec<u32>, LaurentElt> = BTreeMap::new();
        for (key, c) in &x.coeffs {
            let m = key[i] as usize;
            let mut binom: u128 = 1;
            for j in (0..=m).rev() {
                // C(m, j) built multiplicatively from the top
                let factor = {
                    let b = (binom % self.ctx.modulus as u128) as u64;
                    let scale = self.ctx.mul_i64(&pow_step[m - j], b as i64);
                    scale
                };
                let mut nk = key.clone();
                nk[i] = j as u32;
                let add = t.scale(c, &factor);
                if !add.coeffs.is_empty() {
                    match coeffs.get_mut(&nk) {
                        Some(slot) => *slot = t.add(slot, &add),
                        None => {
                            coeffs.insert(nk, add);
                        }
                    }
                }
                if j > 0 {
                    binom = binom * j as u128;
                    // C(m, j-1) = C(m, j) * j / (m - j + 1): keep exact by
                    // recomputing from factorials is avoided; do the division
                    binom /= (m - j + 1) as u128;
                }
            }
            let _ = binom;
        }
        coeffs.retain(|_, c| !c.coeffs.is_empty());
        Ok(PeriodElt { coeffs, overflow: x.overflow })
    }

    /// Action of the chart group vector `k`: twist each Laurent coefficient
    /// and shift each `Y_i` by `k_i`.
    pub fn gamma_act(&self, k: &[i64], rho: &CycElt, x: &PeriodElt) -> Result<PeriodElt> {
        if k.len() != self.ctx.d {
            return Err(Error::ShapeMismatch(format!(
                "group vector length {} for chart dimension {}",
                k.len(),
                self.ctx.d
            )));
        }
        let t = self.toric();
        let mut out = PeriodElt {
            coeffs: BTreeMap::new(),
            overflow: x.overflow,
        };
        for (key, c) in &x.coeffs {
            let tw = t.gamma_act(k, c)?;
            if !tw.coeffs.is_empty() {
                out.coeffs.insert(key.clone(), tw);
            }
        }
        for (i, &ki) in k.iter().enumerate() {
            if ki != 0 {
                out = self.shift_y(i, ki, rho, &out)?;
            }
        }
        Ok(out)
    }

    /// The normalised derivative in variable `i`: `(rho Y)^m -> m rho (rho Y)^(m-1)`,
    /// which is `rho * d/dY_i` on the underlying polynomials.
    pub fn derivative(&self, i: usize, rho: &CycElt, x: &PeriodElt) -> Result<PeriodElt> {
        if i >= self.ctx.d {
            return Err(Error::ShapeMismatch(format!(
                "variable {i} for chart dimension {}",
                self.ctx.d
            )));
        }
        let t = self.toric();
        let mut coeffs: BTreeMap<Vec<u32>, LaurentElt> = BTreeMap::new();
        for (key, c) in &x.coeffs {
            let m = key[i];
            if m == 0 {
                continue;
            }
            let factor = self.ctx.mul_i64(rho, m as i64);
            let mut nk = key.clone();
            nk[i] = m - 1;
            let add = t.scale(c, &factor);
            if !add.coeffs.is_empty() {
                match coeffs.get_mut(&nk) {
                    Some(slot) => *slot = t.add(slot, &add),
                    None => {
                        coeffs.insert(nk, add);
                    }
                }
            }
        }
        Ok(PeriodElt { coeffs, overflow: x.overflow })
    }

    /// `log(gamma_i)` as the convergent operator series
    /// `sum (-1)^(k+1) (gamma_i - 1)^k / k`. On the chart-fixed part this is
    /// exactly the normalised derivative; on twisted coefficients each term
    /// needs an exact division by `k`, and the series errors out when a term
    /// is not divisible at this precision. The loop runs at extended internal
    /// precision so the index divisions cost nothing, exactly as in the
    /// exponential kernels.
    pub fn log_gamma(&self, i: usize, rho: &CycElt, x: &PeriodElt) -> Result<PeriodElt> {
        let max_terms = (self.ctx.big_n as usize) * self.ctx.e + self.ctx.y_cut as usize + 2;
        // headroom: deepest possible division among the terms
        let mut headroom = 0u32;
        let mut q = self.ctx.p;
        while q as usize <= max_terms {
            headroom += 1;
            match q.checked_mul(self.ctx.p) {
                Some(next) => q = next,
                None => break,
            }
        }
        let wide = self.ctx.extend(headroom)?;
        let wr = PeriodRing::new(&wide);
        let mut unit = vec![0i64; self.ctx.d];
        unit[i] = 1;
        let mut acc = PeriodElt::zero();
        // the canonical lifts of x and rho perturb each term by at least
        // p^N * rho^(k-1) / k, which stays above p^N
        let mut cur = wr.sub(&wr.gamma_act(&unit, rho, x)?, x);
        for k in 1..=max_terms {
            if wr.is_zero(&cur) {
                return Ok(reduce_period(self.ctx, &acc));
            }
            let term = wr.div_int(&cur, k as u64).map_err(|_| Error::LogNotNilpotent {
                val: wr.gauss_valuation(&cur).to_string(),
                terms: k,
            })?;
            acc = if k % 2 == 1 { wr.add(&acc, &term) } else { wr.sub(&acc, &term) };
            cur = wr.sub(&wr.gamma_act(&unit, rho, &cur)?, &cur);
        }
        if wr.is_zero(&cur) {
            Ok(reduce_period(self.ctx, &acc))
        } else {
            Err(Error::LogNotNilpotent {
                val: wr.gauss_valuation(&cur).to_string(),
                terms: max_terms,
            })
        }
    }

    /// Divide every coefficient exactly by an integer.
    fn div_int(&self, x: &PeriodElt, k: u64) -> Result<PeriodElt> {
        let d = self.ctx.from_u64(k);
        let mut out = x.clone();
        for c in out.coeffs.values_mut() {
            let mut nc = c.clone();
            for v in nc.coeffs.values_mut() {
                *v = self.ctx.div_exact(v, &d)?;
            }
            nc.coeffs.retain(|_, v| !self.ctx.is_zero(v));
            *c = nc;
        }
        out.coeffs.retain(|_, c| !c.coeffs.is_empty());
        Ok(out)
    }

    /// `(1 + z)^(Y_i) = sum_n z^n / n! F_n(Y_i)` realised on the lattice at
    /// radius `rho`. Requires `nu(z) > 1/(p-1)` for convergence and
    /// `nu(z) >= nu(rho)` for integrality of the normalised coordinates.
    ///
    /// The kept coordinates are exact for the canonical lift of `z`. Slots
    /// above the window cutoff are dropped; their normalised size is at least
    /// `(G+1)(nu(z) - nu(rho))`, reported in `dropped_at_least`, so shift
    /// identities on the result hold up to that defect rather than exactly
    /// unless the tail clears the working modulus.
    pub fn binomial_power(
        &self,
        i: usize,
        z: &CycElt,
        rho: &RhoValue,
    ) -> Result<(PeriodElt, TailBound)> {
        if i >= self.ctx.d {
            return Err(Error::ShapeMismatch(format!(
                "variable {i} for chart dimension {}",
                self.ctx.d
            )));
        }
        let vz = match self.ctx.valuation(z) {
            Val::Bot => {
                return Ok((
                    self.one(),
                    TailBound {
                        cutoff: 1,
                        dropped_at_least: Rat::from_integer(self.ctx.big_n as i64),
                        achieved: self.ctx.big_n,
                        headroom: 0,
                    },
                ));
            }
            Val::Fin(v) => v,
        };
        if vz <= self.ctx.r() {
            return Err(Error::DivergentExponent { val: vz.to_string(), floor: self.ctx.r() });
        }
        if vz < rho.val {
            return Err(Error::RhoTooLarge { need: vz.to_string(), got: rho.val.to_string() });
        }
        // extra headroom so the final division by rho^k stays exact mod p^N;
        // the series cutoff must target the raised modulus too, because the
        // rho division re-exposes whatever the raw slot sums drop
        let rho_headroom = (rho.val * Rat::from_integer(self.ctx.y_cut as i64)).ceil().to_integer() as u32;
        let raised = self.ctx.extend(rho_headroom)?;
        let (cutoff, fact_headroom) = exp_cutoff(&raised, vz)?;
        let headroom = fact_headroom + rho_headroom;
        let wide = self.ctx.extend(headroom)?;
        let g = self.ctx.y_cut as usize;
        // slot_sums[k] accumulates sum_n (z^n / n!) s(n, k) in the wide ring,
        // with the falling factorials generated by their recurrence
        let mut slot_sums = vec![wide.zero(); g + 1];
        let mut term = wide.one(); // z^n / n!
        let mut fn_coeffs: Vec<CycElt> = vec![wide.one()]; // F_0 = 1
        for n in 1..cutoff {
            term = wide.mul(&term, z);
            term = wide.div_exact(&term, &wide.from_u64(n))?;
            // F_n = F_(n-1) * (Y - (n-1))
            let mut next = vec![wide.zero(); fn_coeffs.len() + 1];
            for (k2, c) in fn_coeffs.iter().enumerate() {
                next[k2 + 1] = wide.add(&next[k2 + 1], c);
                let down = wide.mul_i64(c, -((n - 1) as i64));
                next[k2] = wide.add(&next[k2], &down);
            }
            fn_coeffs = next;
            for k2 in 1..=g.min(fn_coeffs.len() - 1) {
                let add = wide.mul(&term, &fn_coeffs[k2]);
                slot_sums[k2] = wide.add(&slot_sums[k2], &add);
            }
        }
        slot_sums[0] = wide.one(); // F_n(0) = 0 for n >= 1
        // normalise: slot k stores the coefficient against (rho Y)^k
        let t = self.toric();
        let mut terms = Vec::new();
        // re-derive rho at the wide precision: dividing by a canonical lift
        // would smear the quotient below the target modulus
        let rho_wide = RhoValue::parse(&wide, &rho.label)?.elt;
        let mut rho_pow = wide.one();
        for (k2, s) in slot_sums.iter().enumerate() {
            if k2 > 0 {
                rho_pow = wide.mul(&rho_pow, &rho_wide);
            }
            let coeff_wide = wide.div_exact(s, &rho_pow)?;
            let coeff = self.ctx.reduce_from(&coeff_wide);
            if self.ctx.is_zero(&coeff) {
                continue;
            }
            let mut key = vec![0u32; self.ctx.d];
            key[i] = k2 as u32;
            terms.push((key, t.constant(coeff)));
        }
        let elt = self.from_terms(
            terms
                .into_iter()
                .map(|(k, l)| {
                    // constant() built a toric element; re-key it as a term list
                    (k, l)
                })
                .collect(),
        )?;
        // normalised size of the first dropped slots: series tail floor from
        // index G+1, re-scaled by the deepest rho division
        let window_drop = (exp_tail_floor(self.ctx, vz, self.ctx.y_cut as u64 + 1)?
            - rho.val * Rat::from_integer(self.ctx.y_cut as i64))
        .min(Rat::from_integer(self.ctx.big_n as i64));
        Ok((
            elt,
            TailBound {
                cutoff,
                dropped_at_least: window_drop,
                achieved: self.ctx.big_n,
                headroom,
            },
        ))
    }

    /// Convert lattice coordinates between the normalised monomial basis and
    /// the falling-factorial basis, one variable at a time. Both transforms
    /// are unitriangular with `rho`-power-scaled Stirling entries, so the
    /// round trip is the identity exactly.
    pub fn basis_convert(&self, x: &PeriodElt, rho: &CycElt, dir: BasisDir) -> PeriodElt {
        let g = self.ctx.y_cut;
        let s2 = stirling2_rows(self.ctx, g);
        let s1 = stirling1_rows(self.ctx, g);
        let mut rho_pows = vec![self.ctx.one()];
        for _ in 0..g {
            let last = rho_pows.last().unwrap();
            rho_pows.push(self.ctx.mul(last, rho));
        }
        let t = self.toric();
        let mut cur = x.clone();
        for var in 0..self.ctx.d {
            let mut coeffs: BTreeMap<Vec<u32>, LaurentElt> = BTreeMap::new();
            for (key, c) in &cur.coeffs {
                let n = key[var] as usize;
                for k in 0..=n {
                    // monomial -> falling: rho^n Y^n = sum_k S(n,k) rho^(n-k) (rho^k F_k)
                    // falling -> monomial: rho^n F_n = sum_k s(n,k) rho^(n-k) (rho Y)^k
                    let coefficient = match dir {
                        BasisDir::MonomialToFalling => s2[n][k],
                        BasisDir::FallingToMonomial => s1[n][k],
                    };
                    if coefficient == 0 {
                        continue;
                    }
                    let factor = self.ctx.mul_i64(&rho_pows[n - k], coefficient as i64);
                    if self.ctx.is_zero(&factor) {
                        continue;
                    }
                    let add = t.scale(c, &factor);
                    if add.coeffs.is_empty() {
                        continue;
                    }
                    let mut nk = key.clone();
                    nk[var] = k as u32;
                    match coeffs.get_mut(&nk) {
                        Some(slot) => *slot = t.add(slot, &add),
                        None => {
                            coeffs.insert(nk, add);
                        }
                    }
                }
            }
            coeffs.retain(|_, c| !c.coeffs.is_empty());
            cur = PeriodElt { coeffs, overflow: cur.overflow };
        }
        cur
    }

    /// All Y-degree multi-indices of the window, lexicographically.
    pub fn window_slots(&self) -> Vec<Vec<u32>> {
        let g = self.ctx.y_cut;
        let mut keys = vec![Vec::with_capacity(self.ctx.d)];
        for _ in 0..self.ctx.d {
            let mut next = Vec::with_capacity(keys.len() * (g as usize + 1));
            for prefix in &keys {
                for v in 0..=g {
                    let mut k = prefix.clone();
                    k.push(v);
                    next.push(k);
                }
            }
            keys = next;
        }
        keys
    }

    /// Product of two elements whose slots are adapted (falling-factorial)
    /// coordinates: slot `n` means the coefficient of `rho^n F_n(Y)`.
    ///
    /// The one-variable rule is
    /// `F_a F_b = sum_c c! C(a,c) C(b,c) F_(a+b-c)`, so normalised products
    /// spread upward: a kept slot `s` only draws on factor slots `<= s`.
    /// Dropped slots (any component above the window) land in a genuine
    /// monomial ideal, so the kept part is the exact image in the quotient.
    pub fn adapted_mul(&self, rho: &CycElt, x: &PeriodElt, y: &PeriodElt) -> PeriodElt {
        let g = self.ctx.y_cut;
        let t = self.toric();
        // the contraction weight sums over all directions, so it can reach d*g
        let mut rho_pows = vec![self.ctx.one()];
        for _ in 0..g as usize * self.ctx.d {
            let last = rho_pows.last().unwrap();
            rho_pows.push(self.ctx.mul(last, rho));
        }
        let mut coeffs: BTreeMap<Vec<u32>, LaurentElt> = BTreeMap::new();
        let mut overflow = x.overflow || y.overflow;
        for (ka, ca) in &x.coeffs {
            for (kb, cb) in &y.coeffs {
                if ka.iter().zip(kb).any(|(&a, &b)| a + b > g) {
                    overflow = true;
                }
                let prod = t.mul(ca, cb);
                if prod.coeffs.is_empty() {
                    continue;
                }
                // enumerate the contraction vector c componentwise
                let lo: Vec<u32> = ka
                    .iter()
                    .zip(kb)
                    .map(|(&a, &b)| (a + b).saturating_sub(g))
                    .collect();
                let hi: Vec<u32> = ka.iter().zip(kb).map(|(&a, &b)| a.min(b)).collect();
                if lo.iter().zip(&hi).any(|(l, h)| l > h) {
                    continue;
                }
                let mut c = lo.clone();
                loop {
                    // structure constant prod_i c_i! C(a_i,c_i) C(b_i,c_i) rho^(c_i)
                    let mut factor = self.ctx.one();
                    let mut total_c = 0u32;
                    for i in 0..self.ctx.d {
                        let (a, b, ci) = (ka[i] as u64, kb[i] as u64, c[i] as u64);
                        let sc = factorial_u128(ci) * binomial_u128(a, ci) * binomial_u128(b, ci);
                        factor = self.ctx.mul(&factor, &self.ctx.from_u64((sc % self.ctx.modulus as u128) as u64));
                        total_c += c[i];
                    }
                    factor = self.ctx.mul(&factor, &rho_pows[total_c as usize]);
                    let key: Vec<u32> = ka
                        .iter()
                        .zip(kb)
                        .zip(&c)
                        .map(|((&a, &b), &ci)| a + b - ci)
                        .collect();
                    let add = t.scale(&prod, &factor);
                    if !add.coeffs.is_empty() {
                        match coeffs.get_mut(&key) {
                            Some(slot) => *slot = t.add(slot, &add),
                            None => {
                                coeffs.insert(key, add);
                            }
                        }
                    }
                    // advance c lexicographically within [lo, hi]
                    let mut advanced = false;
                    for pos in (0..self.ctx.d).rev() {
                        if c[pos] < hi[pos] {
                            c[pos] += 1;
                            for q in pos + 1..self.ctx.d {
                                c[q] = lo[q];
                            }
                            advanced = true;
                            break;
                        }
                    }
                    if !advanced {
                        break;
                    }
                }
            }
        }
        coeffs.retain(|_, v| !v.coeffs.is_empty());
        PeriodElt { coeffs, overflow }
    }

    /// Action of the group vector `k` on adapted coordinates. The coefficient
    /// twist is as in [`gamma_act`](Self::gamma_act); the lattice part uses
    /// `gamma_i(rho^n F_n) = rho^n F_n + n rho (rho^(n-1) F_(n-1))`, a shift
    /// that never leaves the window, so the result is exact with no drops.
    /// Negative steps invert the unipotent shift slotwise from the top down.
    pub fn gamma_adapted(&self, k: &[i64], rho: &CycElt, x: &PeriodElt) -> Result<PeriodElt> {
        if k.len() != self.ctx.d {
            return Err(Error::ShapeMismatch(format!(
                "group vector length {} for chart dimension {}",
                k.len(),
                self.ctx.d
            )));
        }
        let t = self.toric();
        let mut out = PeriodElt { coeffs: BTreeMap::new(), overflow: x.overflow };
        for (key, c) in &x.coeffs {
            let tw = t.gamma_act(k, c)?;
            if !tw.coeffs.is_empty() {
                out.coeffs.insert(key.clone(), tw);
            }
        }
        for (i, &ki) in k.iter().enumerate() {
            for _ in 0..ki.unsigned_abs() {
                out = if ki > 0 {
                    self.adapted_step(i, rho, &out)
                } else {
                    self.adapted_step_inverse(i, rho, &out)
                };
            }
        }
        Ok(out)
    }

    /// One forward step of `gamma_i` on adapted slots:
    /// `out_n = x_n + (n_i + 1) rho x_(n + e_i)`.
    fn adapted_step(&self, i: usize, rho: &CycElt, x: &PeriodElt) -> PeriodElt {
        let t = self.toric();
        let mut coeffs: BTreeMap<Vec<u32>, LaurentElt> = BTreeMap::new();
        for (key, c) in &x.coeffs {
            match coeffs.get_mut(key) {
                Some(slot) => *slot = t.add(slot, c),
                None => {
                    coeffs.insert(key.clone(), c.clone());
                }
            }
            if key[i] > 0 {
                let mut nk = key.clone();
                nk[i] -= 1;
                let factor = self.ctx.mul_i64(rho, key[i] as i64);
                let add = t.scale(c, &factor);
                if !add.coeffs.is_empty() {
                    match coeffs.get_mut(&nk) {
                        Some(slot) => *slot = t.add(slot, &add),
                        None => {
                            coeffs.insert(nk, add);
                        }
                    }
                }
            }
        }
        coeffs.retain(|_, v| !v.coeffs.is_empty());
        PeriodElt { coeffs, overflow: x.overflow }
    }

    /// Inverse of [`adapted_step`]: solve `y_n + (n_i + 1) rho y_(n + e_i) = x_n`
    /// from the top slot downward; exact because the shift is nilpotent.
    fn adapted_step_inverse(&self, i: usize, rho: &CycElt, x: &PeriodElt) -> PeriodElt {
        let t = self.toric();
        let g = self.ctx.y_cut;
        let mut coeffs: BTreeMap<Vec<u32>, LaurentElt> = BTreeMap::new();
        // visit slots with decreasing i-component so dependencies are ready
        let mut keys: Vec<Vec<u32>> = x.coeffs.keys().cloned().collect();
        for key in x.coeffs.keys() {
            let mut nk = key.clone();
            while nk[i] > 0 {
                nk[i] -= 1;
                keys.push(nk.clone());
            }
        }
        keys.sort();
        keys.dedup();
        keys.sort_by(|a, b| b[i].cmp(&a[i]));
        for key in keys {
            let mut val = x.coeffs.get(&key).cloned().unwrap_or_else(LaurentElt::zero);
            if key[i] < g {
                let mut up = key.clone();
                up[i] += 1;
                if let Some(above) = coeffs.get(&up) {
                    let factor = self.ctx.mul_i64(rho, up[i] as i64);
                    val = t.sub(&val, &t.scale(above, &factor));
                }
            }
            if !val.coeffs.is_empty() {
                coeffs.insert(key, val);
            }
        }
        PeriodElt { coeffs, overflow: x.overflow }
    }
}

/// `n!` as an exact 128-bit integer; window degrees keep this tiny.
fn factorial_u128(n: u64) -> u128 {
    (1..=n as u128).product()
}

/// `C(n, k)` as an exact 128-bit integer.
fn binomial_u128(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc * (n - j) as u128 / (j + 1) as u128;
    }
    acc
}

fn this_scaled(ctx: &PrecisionContext, rho: &CycElt, amount: i64) -> CycElt {
    ctx.mul_i64(rho, amount)
}

/// Reduce every coefficient of a wide-precision element back to `ctx`.
pub(crate) fn reduce_period(ctx: &PrecisionContext, x: &PeriodElt) -> PeriodElt {
    let mut coeffs = BTreeMap::new();
    for (key, l) in &x.coeffs {
        let reduced = LaurentElt {
            coeffs: l
                .coeffs
                .iter()
                .map(|(k, c)| (k.clone(), ctx.reduce_from(c)))
                .filter(|(_, c)| !ctx.is_zero(c))
                .collect(),
            overflow: l.overflow,
        };
        if !reduced.coeffs.is_empty() || reduced.overflow {
            coeffs.insert(key.clone(), reduced);
        }
    }
    PeriodElt { coeffs, overflow: x.overflow }
}

impl crate::matrix::Coeff for PeriodElt {
    type Ctx = PrecisionContext;
    fn zero(_: &PrecisionContext) -> Self {
        PeriodElt::zero()
    }
    fn one(ctx: &PrecisionContext) -> Self {
        PeriodRing::new(ctx).one()
    }
    fn add(ctx: &PrecisionContext, a: &Self, b: &Self) -> Self {
        PeriodRing::new(ctx).add(a, b)
    }
    fn sub(ctx: &PrecisionContext, a: &Self, b: &Self) -> Self {
        PeriodRing::new(ctx).sub(a, b)
    }
    fn neg(ctx: &PrecisionContext, a: &Self) -> Self {
        PeriodRing::new(ctx).neg(a)
    }
    fn mul(ctx: &PrecisionContext, a: &Self, b: &Self) -> Self {
        PeriodRing::new(ctx).mul(a, b)
    }
    fn is_zero(_: &PrecisionContext, a: &Self) -> bool {
        a.coeffs.is_empty()
    }
}
