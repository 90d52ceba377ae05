//! Exact linear algebra over the truncated chain ring.
//!
//! `O_{K_n}/p^N` is a local ring whose ideals form the single chain
//! `(pi) > (pi^2) > ... > (pi^(Ne)) = 0`, so every matrix has a Smith normal
//! form `U M V = diag(pi^(b_1), ...)` with unit transforms and ascending
//! exponents. Everything here is built on that: kernels and cokernels come
//! with generators and cyclic annihilators, and cohomology of a Koszul
//! complex is reported as the elementary divisors of the abstract module
//! `ker/im`, never as raw coordinate valuations.
//!
//! Entries indistinguishable from zero at the working precision are treated
//! as exact zeros; every position where that decision is load-bearing is
//! counted and surfaced as `coercions` so callers can detect under-precision.

use serde::{Deserialize, Serialize};

use crate::cyclotomic::{CycElt, PrecisionContext, Val};
use crate::matrix::Mat;
use crate::par::{self, Exec};
use crate::{Error, Rat, Result};

/// `pi`-adic exponent of an element: `e * valuation`, an integer in
/// `[0, Ne)`; `None` for exact zero.
pub fn pi_exponent(ctx: &PrecisionContext, x: &CycElt) -> Option<u32> {
    match ctx.valuation(x) {
        Val::Bot => None,
        Val::Fin(v) => {
            let scaled = v * Rat::from_integer(ctx.e as i64);
            debug_assert!(scaled.is_integer());
            Some(*scaled.numer() as u32)
        }
    }
}

/// Nilpotency length of the uniformiser: `pi^(Ne) = 0`.
pub fn full_length(ctx: &PrecisionContext) -> u32 {
    ctx.big_n * ctx.e as u32
}

/// Smith normal form `u * m * v = diag(pi^(b_j))` over the chain ring, with
/// the transforms, their exact inverses, and the coercion count.
#[derive(Debug, Clone)]
pub struct Snf {
    /// Ascending `pi`-exponents, length `min(rows, cols)`; `Ne` marks a zero
    /// diagonal entry.
    pub diag: Vec<u32>,
    pub u: Mat<CycElt>,
    pub u_inv: Mat<CycElt>,
    pub v: Mat<CycElt>,
    pub v_inv: Mat<CycElt>,
    /// Active positions the elimination had to declare exactly zero when no
    /// pivot remained. Content below the working precision would hide here.
    pub coercions: u64,
}

/// Compute the Smith normal form. The pivot is always a remaining entry of
/// minimal `pi`-valuation (row-major tie-break), which divides every other
/// remaining entry, so one elimination pass per pivot suffices and the
/// diagonal exponents ascend. The factorisation and both inverses are
/// verified exactly before returning.
pub fn smith(ctx: &PrecisionContext, m: &Mat<CycElt>, exec: Exec) -> Result<Snf> {
    let ne = full_length(ctx);
    let (rows, cols) = (m.rows, m.cols);
    let mut w = m.clone();
    let mut u = Mat::<CycElt>::identity(ctx, rows);
    let mut u_inv = Mat::<CycElt>::identity(ctx, rows);
    let mut v = Mat::<CycElt>::identity(ctx, cols);
    let mut v_inv = Mat::<CycElt>::identity(ctx, cols);
    let mut diag = Vec::new();
    let mut coercions = 0u64;
    let rank_bound = rows.min(cols);

    for t in 0..rank_bound {
        let mut best: Option<(u32, usize, usize)> = None;
        for i in t..rows {
            for j in t..cols {
                if let Some(b) = pi_exponent(ctx, w.at(i, j)) {
                    if best.is_none_or(|(bb, _, _)| b < bb) {
                        best = Some((b, i, j));
                    }
                }
            }
        }
        let Some((b, p_row, p_col)) = best else {
            coercions += ((rows - t) * (cols - t)) as u64;
            break;
        };
        if p_row != t {
            swap_rows(&mut w, t, p_row);
            swap_rows(&mut u, t, p_row);
            swap_cols(&mut u_inv, t, p_row);
        }
        if p_col != t {
            swap_cols(&mut w, t, p_col);
            swap_cols(&mut v, t, p_col);
            swap_rows(&mut v_inv, t, p_col);
        }
        // scale the pivot row so the pivot is literally pi^b
        let unit = ctx.div_pi_pow(w.at(t, t), b as usize)?;
        let unit_inv = ctx.inv_unit(&unit)?;
        for j in 0..cols {
            *w.at_mut(t, j) = ctx.mul(&unit_inv, w.at(t, j));
        }
        for j in 0..rows {
            *u.at_mut(t, j) = ctx.mul(&unit_inv, u.at(t, j));
            let scaled = ctx.mul(&unit, u_inv.at(j, t));
            *u_inv.at_mut(j, t) = scaled;
        }
        let pivot = w.at(t, t).clone();

        // clear the column below the pivot with exact row operations
        let mut quotients: Vec<(usize, CycElt)> = Vec::new();
        for i in t + 1..rows {
            if !ctx.is_zero(w.at(i, t)) {
                quotients.push((i, ctx.div_exact(w.at(i, t), &pivot)?));
            }
        }
        if !quotients.is_empty() {
            let updates = par::map_collect(exec, quotients.clone(), |(i, q)| {
                let wi: Vec<CycElt> =
                    (0..cols).map(|j| ctx.sub(w.at(i, j), &ctx.mul(&q, w.at(t, j)))).collect();
                let ui: Vec<CycElt> =
                    (0..rows).map(|j| ctx.sub(u.at(i, j), &ctx.mul(&q, u.at(t, j)))).collect();
                (i, wi, ui)
            });
            for (i, wi, ui) in updates {
                for j in 0..cols {
                    *w.at_mut(i, j) = wi[j].clone();
                }
                for j in 0..rows {
                    *u.at_mut(i, j) = ui[j].clone();
                }
            }
            // u <- E u with E adding -q times row t into row i, so the
            // inverse gains +q times column i into column t
            for (i, q) in &quotients {
                for a in 0..rows {
                    let add = ctx.mul(q, u_inv.at(a, *i));
                    *u_inv.at_mut(a, t) = ctx.add(u_inv.at(a, t), &add);
                }
            }
        }

        // clear the row right of the pivot; only row t is affected because
        // the column below the pivot is already exactly zero
        for j in t + 1..cols {
            if ctx.is_zero(w.at(t, j)) {
                continue;
            }
            let q = ctx.div_exact(w.at(t, j), &pivot)?;
            let sub = ctx.mul(&q, w.at(t, t));
            *w.at_mut(t, j) = ctx.sub(w.at(t, j), &sub);
            for a in 0..cols {
                let s = ctx.mul(&q, v.at(a, t));
                *v.at_mut(a, j) = ctx.sub(v.at(a, j), &s);
            }
            for bcol in 0..cols {
                let s = ctx.mul(&q, v_inv.at(j, bcol));
                *v_inv.at_mut(t, bcol) = ctx.add(v_inv.at(t, bcol), &s);
            }
        }
        debug_assert!(diag.last().is_none_or(|&prev| prev <= b));
        diag.push(b);
    }
    while diag.len() < rank_bound {
        diag.push(ne);
    }

    // exact verification of the factorisation and both inverses
    let mut d_mat = Mat::<CycElt>::zeros(ctx, rows, cols);
    for (j, &b) in diag.iter().enumerate() {
        if b < ne {
            *d_mat.at_mut(j, j) = ctx.mul_pi_pow(&ctx.one(), b as usize);
        }
    }
    let umv = u.mul_with(ctx, m, exec)?.mul_with(ctx, &v, exec)?;
    if umv != d_mat {
        return Err(Error::ShapeMismatch("smith verification failed: U M V != diag".into()));
    }
    if u.mul_with(ctx, &u_inv, exec)? != Mat::identity(ctx, rows)
        || v.mul_with(ctx, &v_inv, exec)? != Mat::identity(ctx, cols)
    {
        return Err(Error::ShapeMismatch("smith verification failed: transform inverse".into()));
    }
    Ok(Snf { diag, u, u_inv, v, v_inv, coercions })
}

fn swap_rows(m: &mut Mat<CycElt>, a: usize, b: usize) {
    if a == b {
        return;
    }
    for j in 0..m.cols {
        m.data.swap(a * m.cols + j, b * m.cols + j);
    }
}

fn swap_cols(m: &mut Mat<CycElt>, a: usize, b: usize) {
    if a == b {
        return;
    }
    for i in 0..m.rows {
        m.data.swap(i * m.cols + a, i * m.cols + b);
    }
}

/// Kernel of the row action `x -> x m`, presented by generators with cyclic
/// annihilators `ann(g_j) = (pi^(orders[j]))`.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub snf: Snf,
    /// Rows are the generators inside the ambient row module.
    pub gens: Mat<CycElt>,
    /// Annihilator exponent per generator, in `(0, Ne]`; `Ne` means free.
    pub orders: Vec<u32>,
    /// Which row of `snf.u` each generator was scaled from.
    srcs: Vec<usize>,
}

/// Present the kernel of `m`. A diagonal exponent `b` contributes the
/// generator `pi^(Ne - b) * (row of U)` with annihilator `(pi^b)`; unit
/// pivots contribute nothing.
pub fn kernel(ctx: &PrecisionContext, m: &Mat<CycElt>, exec: Exec) -> Result<Kernel> {
    let ne = full_length(ctx);
    let snf = smith(ctx, m, exec)?;
    let mut gen_rows = Vec::new();
    let mut orders = Vec::new();
    let mut srcs = Vec::new();
    for j in 0..m.rows {
        let b = snf.diag.get(j).copied().unwrap_or(ne);
        if b == 0 {
            continue;
        }
        let scale = (ne - b) as usize;
        let row: Vec<CycElt> =
            snf.u.row(j).iter().map(|c| ctx.mul_pi_pow(c, scale)).collect();
        gen_rows.push(row);
        orders.push(b);
        srcs.push(j);
    }
    let gens = if gen_rows.is_empty() {
        Mat { rows: 0, cols: m.rows, data: Vec::new() }
    } else {
        Mat::from_rows(ctx, gen_rows)?
    };
    Ok(Kernel { snf, gens, orders, srcs })
}

/// Solve `x m = v` if possible. The solution is exact by construction; the
/// answer is `None` when `v` is not in the row space.
pub fn row_membership(
    ctx: &PrecisionContext,
    m: &Mat<CycElt>,
    v: &[CycElt],
    exec: Exec,
) -> Result<Option<Vec<CycElt>>> {
    if v.len() != m.cols {
        return Err(Error::ShapeMismatch(format!(
            "membership vector length {} against {} columns",
            v.len(),
            m.cols
        )));
    }
    let snf = smith(ctx, m, exec)?;
    // x m = v becomes (x u_inv) diag = v V
    let mut w = vec![ctx.zero(); m.cols];
    for (j, slot) in w.iter_mut().enumerate() {
        let mut acc = ctx.zero();
        for (i, vi) in v.iter().enumerate() {
            acc = ctx.add(&acc, &ctx.mul(vi, snf.v.at(i, j)));
        }
        *slot = acc;
    }
    let mut y = vec![ctx.zero(); m.rows];
    for (j, wj) in w.iter().enumerate() {
        match snf.diag.get(j) {
            Some(&b) => {
                if ctx.is_zero(wj) {
                    continue;
                }
                match ctx.div_pi_pow(wj, b as usize) {
                    Ok(q) => y[j] = q,
                    Err(_) => return Ok(None),
                }
            }
            None => {
                if !ctx.is_zero(wj) {
                    return Ok(None);
                }
            }
        }
    }
    let mut x = vec![ctx.zero(); m.rows];
    for (i, slot) in x.iter_mut().enumerate() {
        let mut acc = ctx.zero();
        for (j, yj) in y.iter().enumerate() {
            if !ctx.is_zero(yj) {
                acc = ctx.add(&acc, &ctx.mul(yj, snf.u.at(j, i)));
            }
        }
        *slot = acc;
    }
    Ok(Some(x))
}

/// Elementary divisors of the abstract module `ker(b) / im(a)`, with a
/// generator of each cyclic summand written back in ambient coordinates.
#[derive(Debug, Clone)]
pub struct Subquotient {
    /// Ascending `pi`-exponents in `(0, Ne]`; `Ne` entries are free at this
    /// precision.
    pub divisors: Vec<u32>,
    /// Rows are summand generators in ambient coordinates, aligned with
    /// `divisors`.
    pub gens: Mat<CycElt>,
    pub coercions: u64,
}

/// Compute `ker(b) / im(a)` on the row module `O^dim`. `a: O^l -> O^dim` and
/// `b: O^dim -> O^n` may each be absent (zero map / map to zero). Checks
/// `a b = 0` exactly, expresses the image in kernel coordinates, and reads
/// the divisors off the Smith form of the combined relation matrix.
pub fn subquotient(
    ctx: &PrecisionContext,
    a: Option<&Mat<CycElt>>,
    b: Option<&Mat<CycElt>>,
    dim: usize,
    exec: Exec,
) -> Result<Subquotient> {
    let ne = full_length(ctx);
    if let Some(am) = a {
        if am.cols != dim {
            return Err(Error::ShapeMismatch(format!(
                "incoming map has {} columns on a rank-{} module",
                am.cols, dim
            )));
        }
    }
    if let Some(bm) = b {
        if bm.rows != dim {
            return Err(Error::ShapeMismatch(format!(
                "outgoing map has {} rows on a rank-{} module",
                bm.rows, dim
            )));
        }
    }
    if let (Some(am), Some(bm)) = (a, b) {
        if !am.mul_with(ctx, bm, exec)?.is_zero(ctx) {
            return Err(Error::ShapeMismatch(
                "composition of chain maps is nonzero: not a complex".into(),
            ));
        }
    }

    // kernel presentation: generators, orders, and the transform for image
    // expression (the identity when b is absent)
    let (gens, orders, srcs, u_inv, mut coercions) = match b {
        Some(bm) => {
            let k = kernel(ctx, bm, exec)?;
            let co = k.snf.coercions;
            (k.gens, k.orders, k.srcs, Some(k.snf.u_inv), co)
        }
        None => (
            Mat::<CycElt>::identity(ctx, dim),
            vec![ne; dim],
            (0..dim).collect(),
            None,
            0,
        ),
    };
    let k = orders.len();
    if k == 0 {
        return Ok(Subquotient {
            divisors: Vec::new(),
            gens: Mat { rows: 0, cols: dim, data: Vec::new() },
            coercions,
        });
    }

    // relations: each image row expressed in generator coordinates, then the
    // diagonal annihilators
    let n_img = a.map_or(0, |am| am.rows);
    let mut rel = Mat::<CycElt>::zeros(ctx, n_img + k, k);
    if let Some(am) = a {
        let y = match &u_inv {
            Some(ui) => am.mul_with(ctx, ui, exec)?,
            None => am.clone(),
        };
        for i in 0..am.rows {
            for (jj, (&src, &ord)) in srcs.iter().zip(orders.iter()).enumerate() {
                let coord = y.at(i, src);
                if ctx.is_zero(coord) {
                    continue;
                }
                let c = ctx.div_pi_pow(coord, (ne - ord) as usize).map_err(|_| {
                    Error::ShapeMismatch(
                        "image row is not in the kernel: chain data inconsistent".into(),
                    )
                })?;
                *rel.at_mut(i, jj) = c;
            }
        }
    }
    for (jj, &ord) in orders.iter().enumerate() {
        if ord < ne {
            *rel.at_mut(n_img + jj, jj) = ctx.mul_pi_pow(&ctx.one(), ord as usize);
        }
    }

    let s2 = smith(ctx, &rel, exec)?;
    coercions += s2.coercions;
    let h_gens_full = s2.v_inv.mul_with(ctx, &gens, exec)?;
    let mut divisors = Vec::new();
    let mut rows_out = Vec::new();
    for j in 0..k {
        let c = s2.diag.get(j).copied().unwrap_or(ne).min(ne);
        if c == 0 {
            continue;
        }
        divisors.push(c);
        rows_out.push(h_gens_full.row(j).to_vec());
    }
    let gens_out = if rows_out.is_empty() {
        Mat { rows: 0, cols: dim, data: Vec::new() }
    } else {
        Mat::from_rows(ctx, rows_out)?
    };
    Ok(Subquotient { divisors, gens: gens_out, coercions })
}

/// Coordinate label of a flattened module: a human-readable descriptor and
/// whether the coordinate is safely inside every truncation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordLabel {
    pub descriptor: String,
    pub stable: bool,
}

/// A truncated module flattened to free coordinates over the coefficient
/// ring, with stability labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatModule {
    pub rank: usize,
    pub labels: Vec<CoordLabel>,
}

impl FlatModule {
    /// All-stable module with positional labels.
    pub fn unlabeled(rank: usize) -> Self {
        FlatModule {
            rank,
            labels: (0..rank)
                .map(|i| CoordLabel { descriptor: format!("c{i}"), stable: true })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.rank {
            return Err(Error::ShapeMismatch(format!(
                "{} labels on a rank-{} module",
                self.labels.len(),
                self.rank
            )));
        }
        Ok(())
    }
}

/// One elementary-divisor entry of a cohomology degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsionEntry {
    /// Valuation of the divisor, `exponent / e`.
    pub valuation: Rat,
    /// False when the generator's leading support touches a boundary label.
    pub stable: bool,
}

/// Elementary divisors of one cohomology degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub degree: usize,
    /// Count of full-length (free at this precision) summands.
    pub free_rank: usize,
    /// How many of those have stable generators.
    pub free_stable: usize,
    /// Ascending torsion divisors with stability flags.
    pub torsion: Vec<TorsionEntry>,
    pub coercions: u64,
}

/// Koszul complex of pairwise-commuting operators on a flattened module.
/// `C^q = module (x) Lambda^q`, with the differential inserting each missing
/// operator with its sign. Commutativity and `d^2 = 0` are checked exactly
/// at construction.
#[derive(Debug, Clone)]
pub struct KoszulComplex<'a> {
    pub ctx: &'a PrecisionContext,
    pub module: FlatModule,
    pub ops: Vec<Mat<CycElt>>,
    levels: Vec<Vec<u64>>,
}

impl<'a> KoszulComplex<'a> {
    pub fn new(
        ctx: &'a PrecisionContext,
        module: FlatModule,
        ops: Vec<Mat<CycElt>>,
    ) -> Result<Self> {
        module.validate()?;
        for (i, op) in ops.iter().enumerate() {
            if !op.is_square() || op.rows != module.rank {
                return Err(Error::ShapeMismatch(format!(
                    "operator {i} is {}x{} on a rank-{} module",
                    op.rows, op.cols, module.rank
                )));
            }
        }
        for i in 0..ops.len() {
            for j in i + 1..ops.len() {
                if !ops[i].commutes_with(ctx, &ops[j])? {
                    return Err(Error::NotKoszul { i, j });
                }
            }
        }
        let d = ops.len();
        let levels = (0..=d).map(|q| subsets_lex(d, q)).collect();
        let complex = KoszulComplex { ctx, module, ops, levels };
        for q in 0..d.saturating_sub(1) {
            let dq = complex.differential(q)?;
            let dq1 = complex.differential(q + 1)?;
            if !dq.mul(ctx, &dq1)?.is_zero(ctx) {
                // commuting operators force this; reaching here means the
                // commutativity check itself was fooled
                return Err(Error::ShapeMismatch(format!(
                    "koszul differential does not square to zero at degree {q}"
                )));
            }
        }
        Ok(complex)
    }

    pub fn dims(&self) -> usize {
        self.ops.len()
    }

    /// Rank of the degree-`q` term.
    pub fn term_rank(&self, q: usize) -> usize {
        self.levels.get(q).map_or(0, |l| l.len()) * self.module.rank
    }

    /// Matrix of `d^q : C^q -> C^(q+1)` acting on coordinate rows.
    pub fn differential(&self, q: usize) -> Result<Mat<CycElt>> {
        let d = self.dims();
        if q >= d {
            return Err(Error::ShapeMismatch(format!(
                "differential degree {q} of a {d}-operator complex"
            )));
        }
        let rank = self.module.rank;
        let lower = &self.levels[q];
        let upper = &self.levels[q + 1];
        let mut out = Mat::<CycElt>::zeros(self.ctx, lower.len() * rank, upper.len() * rank);
        for (t_idx, &tmask) in upper.iter().enumerate() {
            let mut pos = 0usize;
            for i in 0..d {
                if tmask & (1 << i) == 0 {
                    continue;
                }
                let smask = tmask & !(1u64 << i);
                let s_idx = lower
                    .iter()
                    .position(|&m| m == smask)
                    .expect("subset enumeration is closed under removal");
                let op = &self.ops[i];
                let negate = pos % 2 == 1;
                for rr in 0..rank {
                    for cc in 0..rank {
                        let val = op.at(rr, cc);
                        if self.ctx.is_zero(val) {
                            continue;
                        }
                        let signed =
                            if negate { self.ctx.neg(val) } else { val.clone() };
                        *out.at_mut(s_idx * rank + rr, t_idx * rank + cc) = signed;
                    }
                }
                pos += 1;
            }
        }
        Ok(out)
    }

    /// Per-degree elementary divisors with stability flags, plus the raw
    /// subquotient data for callers that need the generators.
    pub fn cohomology_full(&self, exec: Exec) -> Result<Vec<(DegreeReport, Subquotient)>> {
        let d = self.dims();
        let ne = full_length(self.ctx);
        let mut out = Vec::with_capacity(d + 1);
        for q in 0..=d {
            let a = if q > 0 { Some(self.differential(q - 1)?) } else { None };
            let b = if q < d { Some(self.differential(q)?) } else { None };
            let sq =
                subquotient(self.ctx, a.as_ref(), b.as_ref(), self.term_rank(q), exec)?;
            let mut free_rank = 0;
            let mut free_stable = 0;
            let mut torsion = Vec::new();
            for (j, &c) in sq.divisors.iter().enumerate() {
                let stable = self.generator_is_stable(sq.gens.row(j));
                if c >= ne {
                    free_rank += 1;
                    if stable {
                        free_stable += 1;
                    }
                } else {
                    torsion.push(TorsionEntry {
                        valuation: Rat::new(c as i64, self.ctx.e as i64),
                        stable,
                    });
                }
            }
            out.push((
                DegreeReport { degree: q, free_rank, free_stable, torsion, coercions: sq.coercions },
                sq,
            ));
        }
        Ok(out)
    }

    /// Per-degree elementary divisors with stability flags.
    pub fn cohomology_with(&self, exec: Exec) -> Result<Vec<DegreeReport>> {
        Ok(self.cohomology_full(exec)?.into_iter().map(|(r, _)| r).collect())
    }

    /// A generator is stable when its leading support (the coordinates where
    /// the entry valuation is minimal) avoids boundary labels. Higher-order
    /// components of a generator are only determined modulo smaller summands,
    /// so they carry no stability information.
    fn generator_is_stable(&self, gen: &[CycElt]) -> bool {
        let rank = self.module.rank;
        let mut lead = Val::Bot;
        for x in gen {
            lead = lead.min(self.ctx.valuation(x));
        }
        let Val::Fin(lead) = lead else {
            return true;
        };
        gen.iter().enumerate().all(|(c, x)| {
            self.ctx.valuation(x) != Val::Fin(lead) || self.module.labels[c % rank].stable
        })
    }
}

fn subsets_lex(d: usize, q: usize) -> Vec<u64> {
    let mut out = Vec::new();
    for mask in 0u64..(1 << d) {
        if mask.count_ones() as usize == q {
            out.push(mask);
        }
    }
    out
}

/// Desk-scale Kunneth rule over the chain ring, for the tensor product of
/// two single-operator complexes. Each factor decomposes by its Smith form
/// into elementary pieces `[O -pi^a-> O]`; the tensor of two pieces has
/// cohomology `min(a, b)` once in degree 0, twice in degree 1 and once in
/// degree 2 (computed directly on the elementary complexes, where exponent
/// `Ne` plays the zero map). Inputs are the Smith exponents of the two
/// factor operators; outputs are ascending per-degree divisor lists with
/// zero entries dropped.
pub fn kunneth_pair_rule(pieces1: &[u32], pieces2: &[u32]) -> [Vec<u32>; 3] {
    let mut h = [Vec::new(), Vec::new(), Vec::new()];
    for &a in pieces1 {
        for &b in pieces2 {
            let m = a.min(b);
            if m == 0 {
                continue;
            }
            h[0].push(m);
            h[1].push(m);
            h[1].push(m);
            h[2].push(m);
        }
    }
    for list in &mut h {
        list.sort_unstable();
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx() -> PrecisionContext {
        PrecisionContext::new(5, 2, 10, 2, 2, 6, Rat::new(1, 2)).unwrap()
    }

    #[test]
    fn smith_identity_and_diag() {
        let c = ctx();
        let id = Mat::<CycElt>::identity(&c, 3);
        let s = smith(&c, &id, Exec::Sequential).unwrap();
        assert_eq!(s.diag, vec![0, 0, 0]);
        assert_eq!(s.coercions, 0);

        // diag(p, pi) sorts to exponents (1, e)
        let m = Mat::from_rows(
            &c,
            vec![vec![c.from_u64(c.p), c.zero()], vec![c.zero(), c.pi()]],
        )
        .unwrap();
        let s = smith(&c, &m, Exec::Sequential).unwrap();
        assert_eq!(s.diag, vec![1, c.e as u32]);
    }

    #[test]
    fn smith_reconstructs_mixed_matrix() {
        let c = ctx();
        let m = Mat::from_rows(
            &c,
            vec![
                vec![c.from_u64(10), c.pi(), c.from_u64(3), c.zero()],
                vec![c.from_u64(25), c.mul(&c.pi(), &c.pi()), c.from_u64(7), c.pi()],
                vec![c.zero(), c.from_u64(5), c.from_u64(125), c.one()],
            ],
        )
        .unwrap();
        // verification runs inside smith; reaching Ok means U M V = diag held
        let s = smith(&c, &m, Exec::Sequential).unwrap();
        assert!(s.diag.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(s.diag[0], 0); // the unit entry 3 pivots first
    }

    #[test]
    fn kernel_generators_annihilate() {
        let c = ctx();
        let ne = full_length(&c);
        // x -> x * diag(pi, p^2, 1): kernel orders 1 and 2e
        let m = Mat::from_rows(
            &c,
            vec![
                vec![c.pi(), c.zero(), c.zero()],
                vec![c.zero(), c.from_u64(25), c.zero()],
                vec![c.zero(), c.zero(), c.one()],
            ],
        )
        .unwrap();
        let k = kernel(&c, &m, Exec::Sequential).unwrap();
        assert_eq!(k.orders, vec![1, 2 * c.e as u32]);
        assert!(k.orders.iter().all(|&o| o <= ne));
        let prod = k.gens.mul(&c, &m).unwrap();
        assert!(prod.is_zero(&c));
    }

    #[test]
    fn membership_solves_exactly() {
        let c = ctx();
        let m = Mat::from_rows(
            &c,
            vec![
                vec![c.pi(), c.one(), c.zero()],
                vec![c.zero(), c.from_u64(5), c.pi()],
            ],
        )
        .unwrap();
        // v = 2 * row0 + pi * row1
        let v: Vec<CycElt> = (0..3)
            .map(|j| {
                c.add(
                    &c.mul_i64(m.at(0, j), 2),
                    &c.mul(&c.pi(), m.at(1, j)),
                )
            })
            .collect();
        let x = row_membership(&c, &m, &v, Exec::Sequential).unwrap().unwrap();
        for j in 0..3 {
            let got = c.add(&c.mul(&x[0], m.at(0, j)), &c.mul(&x[1], m.at(1, j)));
            assert_eq!(got, v[j]);
        }
        // a unit vector off the row space is rejected
        let off = vec![c.zero(), c.zero(), c.one()];
        assert!(row_membership(&c, &m, &off, Exec::Sequential).unwrap().is_none());
    }

    #[test]
    fn zero_operator_cohomology_is_free() {
        let c = ctx();
        let module = FlatModule::unlabeled(3);
        let ops = vec![Mat::<CycElt>::zeros(&c, 3, 3)];
        let k = KoszulComplex::new(&c, module, ops).unwrap();
        let h = k.cohomology_with(Exec::Sequential).unwrap();
        assert_eq!(h[0].free_rank, 3);
        assert_eq!(h[1].free_rank, 3);
        assert!(h[0].torsion.is_empty() && h[1].torsion.is_empty());
        // a zero operator is all coercions: nothing distinguishes it from
        // content below the working precision
        assert!(h[0].coercions >= 9);
    }

    #[test]
    fn multiplication_by_pi_reports_unit_length_torsion() {
        let c = ctx();
        let module = FlatModule::unlabeled(1);
        let ops = vec![Mat::from_rows(&c, vec![vec![c.pi()]]).unwrap()];
        let k = KoszulComplex::new(&c, module, ops).unwrap();
        let h = k.cohomology_with(Exec::Sequential).unwrap();
        // ann(pi) and coker(pi) are both O/pi as abstract modules
        let e = c.e as i64;
        assert_eq!(h[0].free_rank, 0);
        assert_eq!(h[0].torsion.len(), 1);
        assert_eq!(h[0].torsion[0].valuation, Rat::new(1, e));
        assert_eq!(h[1].torsion.len(), 1);
        assert_eq!(h[1].torsion[0].valuation, Rat::new(1, e));
    }

    #[test]
    fn multiplication_by_p_squared_reports_length_two() {
        let c = ctx();
        let module = FlatModule::unlabeled(1);
        let ops = vec![Mat::from_rows(&c, vec![vec![c.from_u64(25)]]).unwrap()];
        let k = KoszulComplex::new(&c, module, ops).unwrap();
        let h = k.cohomology_with(Exec::Sequential).unwrap();
        assert_eq!(h[0].torsion.len(), 1);
        assert_eq!(h[0].torsion[0].valuation, Rat::from_integer(2));
        assert_eq!(h[1].torsion[0].valuation, Rat::from_integer(2));
    }

    /// The lattice shift operator gamma - 1 in normalised coordinates:
    /// row k spreads to C(k, j) rho^(k - j) at column j < k.
    fn shift_minus_one(c: &PrecisionContext, g: usize) -> Mat<CycElt> {
        let rho = c.rho1();
        let mut pascal = vec![vec![1i64; 1]];
        for k in 1..=g {
            let prev = &pascal[k - 1];
            let mut row = vec![1i64];
            for j in 1..k {
                row.push(prev[j - 1] + prev[j]);
            }
            row.push(1);
            pascal.push(row);
        }
        let mut m = Mat::<CycElt>::zeros(c, g + 1, g + 1);
        for k in 0..=g {
            for j in 0..k {
                let mut v = c.from_i64(pascal[k][j]);
                for _ in 0..(k - j) {
                    v = c.mul(&v, &rho);
                }
                *m.at_mut(k, j) = v;
            }
        }
        m
    }

    #[test]
    fn lattice_shift_cohomology_matches_tower() {
        let c = ctx();
        let g = c.y_cut as usize;
        let op = shift_minus_one(&c, g);
        let mut module = FlatModule::unlabeled(g + 1);
        module.labels[g].stable = false; // top Y degree is cutoff-adjacent
        let k = KoszulComplex::new(&c, module, vec![op]).unwrap();
        let h = k.cohomology_with(Exec::Sequential).unwrap();

        // expected divisor pattern: nu(k rho) for k = 1..G
        let want: Vec<Rat> = {
            let mut v: Vec<Rat> = (1..=g as i64)
                .map(|k| Rat::from_integer(c.nu_p(k as u64) as i64) + c.rho1_val())
                .collect();
            v.sort();
            v
        };

        // H^0: the constants survive as one stable free generator; the rest
        // of the kernel is truncation-artifact torsion with the same divisor
        // pattern, annihilated elements that a longer window would refine
        assert_eq!(h[0].free_rank, 1);
        assert_eq!(h[0].free_stable, 1);
        let got0: Vec<Rat> = h[0].torsion.iter().map(|t| t.valuation).collect();
        assert_eq!(got0, want);

        // H^1: the same divisors, plus one free generator at the top Y degree
        // that only exists because the window cuts there
        let got1: Vec<Rat> = h[1].torsion.iter().map(|t| t.valuation).collect();
        assert_eq!(got1, want);
        assert_eq!(h[1].free_rank, 1);
        assert_eq!(h[1].free_stable, 0, "top-degree generator must be flagged boundary");
    }

    #[test]
    fn kunneth_rule_matches_direct_tensor_computation() {
        let c = ctx();
        let e = c.e as u32;
        let ne = full_length(&c);

        // factors: [pi] on rank 1 and [p] on rank 1
        let h = {
            let module = FlatModule::unlabeled(1);
            let ops = vec![
                Mat::from_rows(&c, vec![vec![c.pi()]]).unwrap(),
                Mat::from_rows(&c, vec![vec![c.from_u64(5)]]).unwrap(),
            ];
            KoszulComplex::new(&c, module, ops).unwrap().cohomology_full(Exec::Sequential).unwrap()
        };
        let divisors = |sq: &Subquotient| sq.divisors.clone();
        let rule = kunneth_pair_rule(&[1], &[e]);
        assert_eq!(divisors(&h[0].1), rule[0]);
        assert_eq!(divisors(&h[1].1), rule[1]);
        assert_eq!(divisors(&h[2].1), rule[2]);

        // factors on disjoint blocks: a nilpotent 2x2 shift and p on rank 1
        let l1 = Mat::from_rows(
            &c,
            vec![vec![c.zero(), c.zero()], vec![c.pi(), c.zero()]],
        )
        .unwrap();
        let l2 = Mat::from_rows(&c, vec![vec![c.from_u64(5)]]).unwrap();
        let p1 = smith(&c, &l1, Exec::Sequential).unwrap().diag; // [1, Ne]
        let p2 = smith(&c, &l2, Exec::Sequential).unwrap().diag; // [e]
        assert_eq!(p1, vec![1, ne]);
        let id1 = Mat::<CycElt>::identity(&c, 1);
        let id2 = Mat::<CycElt>::identity(&c, 2);
        let m1 = l1.kronecker(&c, &id1);
        let m2 = id2.kronecker(&c, &l2);
        let k = KoszulComplex::new(&c, FlatModule::unlabeled(2), vec![m1, m2]).unwrap();
        let h = k.cohomology_full(Exec::Sequential).unwrap();
        let rule = kunneth_pair_rule(&p1, &p2);
        assert_eq!(divisors(&h[0].1), rule[0]);
        assert_eq!(divisors(&h[1].1), rule[1]);
        assert_eq!(divisors(&h[2].1), rule[2]);
    }

    #[test]
    fn non_commuting_operators_are_rejected() {
        let c = ctx();
        let a = Mat::from_rows(
            &c,
            vec![vec![c.zero(), c.one()], vec![c.zero(), c.zero()]],
        )
        .unwrap();
        let b = Mat::from_rows(
            &c,
            vec![vec![c.zero(), c.zero()], vec![c.one(), c.zero()]],
        )
        .unwrap();
        let err = KoszulComplex::new(&c, FlatModule::unlabeled(2), vec![a, b]);
        assert!(matches!(err, Err(Error::NotKoszul { i: 0, j: 1 })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Smith divisors are invariant under unit row and column scrambles.
        #[test]
        fn smith_divisors_scramble_invariant(
            entries in proptest::collection::vec(0i64..200, 9),
            scram in proptest::collection::vec((0usize..3, 0usize..3, -3i64..4), 4),
        ) {
            let c = ctx();
            let mut m = Mat::<CycElt>::zeros(&c, 3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    *m.at_mut(i, j) = c.from_i64(entries[i * 3 + j]);
                }
            }
            let base = smith(&c, &m, Exec::Sequential).unwrap().diag;
            let mut sm = m.clone();
            for &(r1, r2, q) in &scram {
                if r1 == r2 { continue; }
                // row r1 += q * row r2, then the mirrored column operation
                for j in 0..3 {
                    let add = c.mul_i64(sm.at(r2, j), q);
                    *sm.at_mut(r1, j) = c.add(sm.at(r1, j), &add);
                }
                for i in 0..3 {
                    let add = c.mul_i64(sm.at(i, r1), q);
                    *sm.at_mut(i, r2) = c.add(sm.at(i, r2), &add);
                }
            }
            let scrambled = smith(&c, &sm, Exec::Sequential).unwrap().diag;
            prop_assert_eq!(base, scrambled);
        }

        /// Kernel generators always annihilate the matrix exactly.
        #[test]
        fn kernel_generators_always_annihilate(
            entries in proptest::collection::vec(0i64..200, 6),
        ) {
            let c = ctx();
            let mut m = Mat::<CycElt>::zeros(&c, 2, 3);
            for i in 0..2 {
                for j in 0..3 {
                    *m.at_mut(i, j) = c.from_i64(entries[i * 3 + j]);
                }
            }
            let k = kernel(&c, &m, Exec::Sequential).unwrap();
            if k.gens.rows > 0 {
                prop_assert!(k.gens.mul(&c, &m).unwrap().is_zero(&c));
            }
        }
    }
}
