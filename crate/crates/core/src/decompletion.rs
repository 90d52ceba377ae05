//! Descent from the perfectoid cover back to the toric chart.
//!
//! A small representation handed to us over the perfectoid base is, up to an
//! exact change of basis, already defined over the chart: the non-integral
//! part of its cocycle matrices can be contracted away one conjugation at a
//! time. Each round solves the shift equation `(gamma_j - 1) h = comp(F_j)`
//! monomial by monomial, dividing by the twist eigenvalue of smallest
//! valuation among the non-integral directions, and replaces `F_j` with
//! `gamma_j(I - h) F_j (I - h)^(-1)`. The complement valuation climbs by a
//! fixed amount per round, so finitely many rounds land every matrix inside
//! the chart window. All arithmetic is exact in the truncated ring; the
//! accumulated conjugator is checked against the original matrices after
//! every round, so a degree-window overflow or a failed contraction surfaces
//! as an error instead of a silently wrong answer.
//!
//! The same monomialwise division powers [`solve_pi_coboundary`], which
//! produces an exact solution of `d(g) = pi_1 * f` for a 1-cocycle `f`
//! valued in the complement part of a module with a small chart twist. The
//! factor `pi_1 = zeta_p - 1` is what makes the equation solvable on the
//! nose: it annihilates the torsion classes that obstruct solving
//! `d(g) = f` itself.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cyclotomic::{CycElt, PrecisionContext, Val};
use crate::gamma_rep::{gamma_act_mat, make_rep, Base, SmallRep};
use crate::homology::{full_length, smith};
use crate::matrix::Mat;
use crate::par::Exec;
use crate::series::laurent_mat_valuation;
use crate::toric::{LaurentElt, ToricRing};
use crate::{Error, Rat, Result};

/// One recorded round of the descent loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentStep {
    /// 1-based round number.
    pub step: usize,
    /// Gauss valuation of the complement part entering this round.
    pub complement_valuation: Rat,
    /// Gauss valuation of the conjugator increment applied this round.
    pub increment_valuation: Rat,
}

/// Accumulated outcome of a descent run.
#[derive(Debug, Clone)]
pub struct DescentState {
    /// Product of all round conjugators, latest factor on the left.
    pub conjugator: Mat<LaurentElt>,
    /// Exact inverse of `conjugator`.
    pub conjugator_inverse: Mat<LaurentElt>,
    /// Per-round complement and increment valuations, in order.
    pub trace: Vec<DescentStep>,
}

/// Report from the smallness upgrade check on a chart representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallnessUpgradeReport {
    /// Every `A_i - I` clears the upgraded bound `a + 1/(p-1)` directly.
    pub direct_check: bool,
    /// The invariants of the chart window modulo `pi^s` form a free module
    /// of full rank: every Smith divisor of the stacked shift operator
    /// clears the truncation exponent.
    pub h0_free_rank_matches_l: bool,
    /// Measured `min_i nu(A_i - I)`; `None` when every matrix is the identity.
    pub shift_valuation: Option<Rat>,
    /// The bound `a + 1/(p-1)` the direct check compares against.
    pub required_valuation: Rat,
    /// Smallest Smith divisor of the stacked operator, in `pi`-power units.
    pub h0_divisor_floor: u32,
    /// Exponent `s = ceil((a + 1/(p-1)) e)` the divisors must clear.
    pub truncation_exponent: u32,
}

fn unit(d: usize, i: usize) -> Vec<i64> {
    let mut v = vec![0; d];
    v[i] = 1;
    v
}

fn ceil_rat(x: Rat) -> i64 {
    x.ceil().to_integer()
}

fn row_zero(l: usize) -> Vec<LaurentElt> {
    vec![LaurentElt::zero(); l]
}

fn row_add(tr: &ToricRing, a: &[LaurentElt], b: &[LaurentElt]) -> Vec<LaurentElt> {
    a.iter().zip(b).map(|(x, y)| tr.add(x, y)).collect()
}

fn row_sub(tr: &ToricRing, a: &[LaurentElt], b: &[LaurentElt]) -> Vec<LaurentElt> {
    a.iter().zip(b).map(|(x, y)| tr.sub(x, y)).collect()
}

fn row_scale(tr: &ToricRing, row: &[LaurentElt], c: &CycElt) -> Vec<LaurentElt> {
    row.iter().map(|x| tr.scale(x, c)).collect()
}

fn row_valuation(tr: &ToricRing, row: &[LaurentElt]) -> Val {
    row.iter().fold(Val::Bot, |acc, x| acc.min(tr.gauss_valuation(x)))
}

fn rows_valuation(tr: &ToricRing, rows: &[Vec<LaurentElt>]) -> Val {
    rows.iter().fold(Val::Bot, |acc, r| acc.min(row_valuation(tr, r)))
}

fn row_is_zero(tr: &ToricRing, row: &[LaurentElt]) -> bool {
    row.iter().all(|x| tr.is_zero(x))
}

/// `gamma_j(row) * A_j`, the module action of the j-th generator on a
/// coordinate row.
fn act_row(
    ctx: &PrecisionContext,
    tr: &ToricRing,
    twist: &SmallRep,
    j: usize,
    row: &[LaurentElt],
) -> Result<Vec<LaurentElt>> {
    let shifted: Vec<LaurentElt> = row
        .iter()
        .map(|x| tr.gamma_act(&unit(ctx.d, j), x))
        .collect::<Result<_>>()?;
    let m = &twist.mats[j];
    if shifted.len() != m.rows {
        return Err(Error::ShapeMismatch(format!(
            "row length {} against matrix with {} rows",
            shifted.len(),
            m.rows
        )));
    }
    let mut out = row_zero(m.cols);
    for (k, x) in shifted.iter().enumerate() {
        for c in 0..m.cols {
            out[c] = tr.add(&out[c], &tr.mul(x, m.at(k, c)));
        }
    }
    Ok(out)
}

/// The non-integral direction whose twist eigenvalue has the smallest
/// valuation at this monomial.
fn best_direction(ctx: &PrecisionContext, tr: &ToricRing, key: &[i64]) -> Result<usize> {
    let pn = ctx.pn() as i64;
    let mut best: Option<(Rat, usize)> = None;
    for j in 0..ctx.d {
        if key[j].rem_euclid(pn) == 0 {
            continue;
        }
        let v = tr.epsilon_val_of(key, j)?;
        if best.map_or(true, |(bv, _)| v < bv) {
            best = Some((v, j));
        }
    }
    best.map(|(_, j)| j)
        .ok_or_else(|| Error::NotInComplement { monomial: format!("{key:?}") })
}

/// Monomialwise solve of `(gamma_(j*) - 1) u = residual_(j*)` across a
/// residual with one row per generator: each monomial is divided by the
/// eigenvalue of its best direction.
fn shift_increment(
    ctx: &PrecisionContext,
    tr: &ToricRing,
    residual: &[Vec<LaurentElt>],
) -> Result<Vec<LaurentElt>> {
    let l = residual[0].len();
    let mut u = row_zero(l);
    for c in 0..l {
        let mut keys: BTreeSet<Vec<i64>> = BTreeSet::new();
        for row in residual {
            keys.extend(row[c].coeffs.keys().cloned());
        }
        for key in keys {
            let jstar = best_direction(ctx, tr, &key)?;
            let Some(coeff) = residual[jstar][c].coeffs.get(&key) else {
                continue;
            };
            let eps = tr.epsilon_of(&key, jstar)?;
            let q = ctx.div_exact(coeff, &eps)?;
            if !ctx.is_zero(&q) {
                u[c].coeffs.insert(key, q);
            }
        }
    }
    Ok(u)
}

fn complement_part(tr: &ToricRing, m: &Mat<LaurentElt>) -> Mat<LaurentElt> {
    m.map(|e| tr.split_integral(e).1)
}

fn descent_increment(
    ctx: &PrecisionContext,
    tr: &ToricRing,
    comps: &[Mat<LaurentElt>],
) -> Result<Mat<LaurentElt>> {
    let l = comps[0].rows;
    let mut h = Mat::<LaurentElt>::zeros(ctx, l, l);
    for rr in 0..l {
        let rows: Vec<Vec<LaurentElt>> = comps
            .iter()
            .map(|m| (0..l).map(|cc| m.at(rr, cc).clone()).collect())
            .collect();
        let hrow = shift_increment(ctx, tr, &rows)?;
        for (cc, e) in hrow.into_iter().enumerate() {
            *h.at_mut(rr, cc) = e;
        }
    }
    Ok(h)
}

fn mat_overflow(m: &Mat<LaurentElt>) -> bool {
    m.data.iter().any(|e| e.overflow)
}

fn mats_equal(tr: &ToricRing, a: &Mat<LaurentElt>, b: &Mat<LaurentElt>) -> bool {
    a.rows == b.rows
        && a.cols == b.cols
        && a.data.iter().zip(&b.data).all(|(x, y)| tr.is_zero(&tr.sub(x, y)))
}

/// Solve `d(g) = pi_1 * f` exactly for a 1-cocycle `f` valued in the
/// complement part of a module with chart twist `twist`.
///
/// `f` has one coordinate row per group generator; every monomial in it must
/// have a non-integral key. The cocycle identity is checked exactly before
/// iterating. On success `d(g)(gamma_j) = gamma_j(g) A_j - g` equals
/// `pi_1 f_j` on the nose for every generator, and `nu(g) >= nu(f)`. The
/// residual valuation must climb by at least `nu(A - I) - 1/(p - 1)` per
/// round; a round that falls behind that schedule aborts with
/// [`Error::ContractionFailure`].
pub fn solve_pi_coboundary(
    ctx: &PrecisionContext,
    twist: &SmallRep,
    f: &[Vec<LaurentElt>],
) -> Result<Vec<LaurentElt>> {
    if !matches!(twist.base, Base::Chart) {
        return Err(Error::MalformedInput(
            "coboundary solve expects a chart twist".into(),
        ));
    }
    if f.len() != ctx.d {
        return Err(Error::ShapeMismatch(format!(
            "{} cocycle rows for group dimension {}",
            f.len(),
            ctx.d
        )));
    }
    let l = twist.rank;
    let tr = ToricRing::new(ctx);
    for row in f {
        if row.len() != l {
            return Err(Error::ShapeMismatch(format!(
                "cocycle row length {} for rank {}",
                row.len(),
                l
            )));
        }
        for e in row {
            let (int, _) = tr.split_integral(e);
            if let Some(k) = int.coeffs.keys().next() {
                return Err(Error::NotInComplement { monomial: format!("{k:?}") });
            }
        }
    }
    for i in 0..ctx.d {
        for j in (i + 1)..ctx.d {
            let lhs = row_add(&tr, &act_row(ctx, &tr, twist, i, &f[j])?, &f[i]);
            let rhs = row_add(&tr, &act_row(ctx, &tr, twist, j, &f[i])?, &f[j]);
            let diff = row_sub(&tr, &lhs, &rhs);
            if !row_is_zero(&tr, &diff) {
                return Err(Error::CocycleViolation {
                    i,
                    j,
                    val: format!("{}", row_valuation(&tr, &diff)),
                });
            }
        }
    }

    let r = ctx.r();
    let id = Mat::<LaurentElt>::identity(ctx, l);
    let mut vb = Val::Bot;
    for m in &twist.mats {
        vb = vb.min(laurent_mat_valuation(ctx, &m.sub(ctx, &id)?));
    }
    // contraction margin per round; None marks the untwisted case, which the
    // first increment already solves exactly
    let margin = match vb {
        Val::Bot => None,
        Val::Fin(v) => {
            if v <= r {
                return Err(Error::NotSmall { val: format!("{vb}"), need: r });
            }
            Some(v - r)
        }
    };

    let pi1 = ctx.rho1();
    let pf: Vec<Vec<LaurentElt>> = f.iter().map(|row| row_scale(&tr, row, &pi1)).collect();
    let vf = rows_valuation(&tr, f);
    let cap = match margin {
        None => 1,
        Some(m) => ceil_rat(Rat::from_integer(i64::from(ctx.big_n)) / m) as usize + 1,
    };

    let mut g = row_zero(l);
    let mut base: Option<Rat> = None;
    let mut step = 0usize;
    loop {
        let mut residual = Vec::with_capacity(ctx.d);
        for j in 0..ctx.d {
            let dg = row_sub(&tr, &act_row(ctx, &tr, twist, j, &g)?, &g);
            let res = row_sub(&tr, &pf[j], &dg);
            if res.iter().any(|e| e.overflow) {
                return Err(Error::VerificationFailed(format!(
                    "coboundary solve overflowed the degree window at round {}",
                    step + 1
                )));
            }
            residual.push(res);
        }
        let vres = rows_valuation(&tr, &residual);
        if vres.is_bot() {
            break;
        }
        step += 1;
        if step > cap {
            return Err(Error::ContractionFailure { step, val: format!("{vres}") });
        }
        match (base, margin) {
            (None, _) => base = vres.fin(),
            (Some(_), None) => {
                // one exact division settles the untwisted equation; a
                // surviving residual means the input was not an exact cocycle
                return Err(Error::ContractionFailure { step, val: format!("{vres}") });
            }
            (Some(b), Some(m)) => {
                let scheduled = b + Rat::from_integer(step as i64 - 1) * m;
                if !vres.at_least(scheduled) {
                    return Err(Error::ContractionFailure { step, val: format!("{vres}") });
                }
            }
        }
        let u = shift_increment(ctx, &tr, &residual)?;
        g = row_add(&tr, &g, &u);
    }

    let vg = row_valuation(&tr, &g);
    if vg < vf {
        return Err(Error::VerificationFailed(format!(
            "solution valuation {vg} dropped below the input valuation {vf}"
        )));
    }
    Ok(g)
}

/// Contract the complement part of a 1-cocycle of invertible matrices until
/// every matrix is supported on the chart.
///
/// `r_log` is the contraction exponent: the hypotheses
/// `nu(F_j - I) >= r_log + 1/(p-1)` and
/// `nu(comp(F_j)) >= r_log + 2/(p-1)` are checked on entry, and the
/// complement valuation must climb by at least `r_log` per round. Returns
/// the descended chart representation together with the accumulated
/// conjugator `H` satisfying `F'_j = gamma_j(H) F_j H^(-1)` exactly; that
/// identity is re-verified against the original matrices after every round.
pub fn descend_cocycle(
    ctx: &PrecisionContext,
    rep: &SmallRep,
    r_log: Rat,
) -> Result<(SmallRep, DescentState)> {
    if r_log <= Rat::from_integer(0) {
        return Err(Error::InvalidParameter(format!(
            "descent contraction exponent must be positive, got {r_log}"
        )));
    }
    let tr = ToricRing::new(ctx);
    let r = ctx.r();
    let l = rep.rank;
    let id = Mat::<LaurentElt>::identity(ctx, l);

    for a in &rep.mats {
        let v = laurent_mat_valuation(ctx, &a.sub(ctx, &id)?);
        if !v.at_least(r_log + r) {
            return Err(Error::NotSmall { val: format!("{v}"), need: r_log + r });
        }
        let vc = laurent_mat_valuation(ctx, &complement_part(&tr, a));
        if !vc.at_least(r_log + r + r) {
            return Err(Error::NotSmall { val: format!("{vc}"), need: r_log + r + r });
        }
    }

    let originals = &rep.mats;
    let mut mats = rep.mats.clone();
    let mut conj = id.clone();
    let mut conj_inv = id.clone();
    let mut trace: Vec<DescentStep> = Vec::new();
    let cap = ceil_rat(Rat::from_integer(i64::from(ctx.big_n)) / r_log) as usize + 1;
    let neumann = full_length(ctx) as usize + 1;

    let mut step = 0usize;
    loop {
        let comps: Vec<Mat<LaurentElt>> =
            mats.iter().map(|m| complement_part(&tr, m)).collect();
        let vbar = comps
            .iter()
            .fold(Val::Bot, |acc, c| acc.min(laurent_mat_valuation(ctx, c)));
        let Some(vbar_fin) = vbar.fin() else {
            break;
        };
        step += 1;
        if step > cap {
            return Err(Error::ContractionFailure { step, val: format!("{vbar}") });
        }
        if let Some(first) = trace.first() {
            let scheduled =
                first.complement_valuation + Rat::from_integer(step as i64 - 1) * r_log;
            if vbar_fin < scheduled {
                return Err(Error::ContractionFailure { step, val: format!("{vbar}") });
            }
        }

        let h = descent_increment(ctx, &tr, &comps)?;
        let inc_val = match laurent_mat_valuation(ctx, &h) {
            Val::Fin(v) => v,
            Val::Bot => Rat::from_integer(i64::from(ctx.big_n)),
        };
        // the shift equation was solved against +comp, so conjugating by
        // I - h cancels the complement to leading order
        let one_minus = id.sub(ctx, &h)?;
        let one_minus_inv = one_minus.inv_unipotent(ctx, neumann)?;
        for (j, m) in mats.iter_mut().enumerate() {
            let twisted = gamma_act_mat(&tr, unit(ctx.d, j), &one_minus)?;
            *m = twisted.mul(ctx, m)?.mul(ctx, &one_minus_inv)?;
        }
        conj = one_minus.mul(ctx, &conj)?;
        conj_inv = conj_inv.mul(ctx, &one_minus_inv)?;

        for j in 0..ctx.d {
            let lhs = gamma_act_mat(&tr, unit(ctx.d, j), &conj)?
                .mul(ctx, &originals[j])?
                .mul(ctx, &conj_inv)?;
            if mat_overflow(&lhs) || mat_overflow(&mats[j]) {
                return Err(Error::VerificationFailed(format!(
                    "descent round {step} overflowed the degree window"
                )));
            }
            if !mats_equal(&tr, &lhs, &mats[j]) {
                return Err(Error::VerificationFailed(format!(
                    "conjugation identity broke at round {step}, generator {j}"
                )));
            }
        }
        trace.push(DescentStep {
            step,
            complement_valuation: vbar_fin,
            increment_valuation: inc_val,
        });
    }

    for m in &mats {
        let v = laurent_mat_valuation(ctx, &m.sub(ctx, &id)?);
        if !v.at_least(r_log + r) {
            return Err(Error::VerificationFailed(format!(
                "descended matrix valuation {v} fell below {}",
                r_log + r
            )));
        }
    }
    let chart = make_rep(ctx, Base::Chart, mats, r_log)?;
    Ok((chart, DescentState { conjugator: conj, conjugator_inverse: conj_inv, trace }))
}

/// Descend an `(a + 1/(p-1))-trivial` representation over the perfectoid
/// base to the chart and verify the result keeps that triviality.
///
/// Requires `a > 1/(p-1)`. The returned chart representation carries `a` as
/// its smallness certificate, re-validated from scratch by the constructor,
/// and the upgrade report's two checks are required to pass.
pub fn decomplete_rep(
    ctx: &PrecisionContext,
    m_inf: &SmallRep,
    a: Rat,
    exec: Exec,
) -> Result<(SmallRep, DescentState, SmallnessUpgradeReport)> {
    if !matches!(m_inf.base, Base::Perfectoid) {
        return Err(Error::MalformedInput(
            "decompletion expects a representation over the perfectoid base".into(),
        ));
    }
    let r = ctx.r();
    if a <= r {
        return Err(Error::SmallnessHypothesis { a, bound: r });
    }
    let id = Mat::<LaurentElt>::identity(ctx, m_inf.rank);
    for m in &m_inf.mats {
        let v = laurent_mat_valuation(ctx, &m.sub(ctx, &id)?);
        if !v.at_least(a + r) {
            return Err(Error::NotSmall { val: format!("{v}"), need: a + r });
        }
    }
    let (descended, state) = descend_cocycle(ctx, m_inf, a - r)?;
    let chart = make_rep(ctx, Base::Chart, descended.mats, a)?;
    let report = verify_smallness_upgrade(ctx, &chart, a, exec)?;
    if !report.direct_check || !report.h0_free_rank_matches_l {
        return Err(Error::VerificationFailed(format!(
            "smallness upgrade check failed: {report:?}"
        )));
    }
    Ok((chart, state, report))
}

/// Check that a chart representation certified `a`-small is in fact
/// `(a + 1/(p-1))`-trivial, two ways.
///
/// The direct check measures `nu(A_i - I)` against `a + 1/(p-1)`. The
/// module check truncates the chart window at `pi^s`,
/// `s = ceil((a + 1/(p-1)) e)`, stacks the operators `act(gamma_i) - id`
/// into one flat matrix, and asks that every Smith divisor clear `s`: then
/// solving `x (act - id) = 0 mod pi^s` imposes no condition, so the
/// invariants are the whole window, a free module of full rank.
pub fn verify_smallness_upgrade(
    ctx: &PrecisionContext,
    rep: &SmallRep,
    a: Rat,
    exec: Exec,
) -> Result<SmallnessUpgradeReport> {
    if !matches!(rep.base, Base::Chart) {
        return Err(Error::MalformedInput(
            "smallness upgrade check runs on chart representations".into(),
        ));
    }
    let tr = ToricRing::new(ctx);
    let r = ctx.r();
    let need = a + r;
    let id = Mat::<LaurentElt>::identity(ctx, rep.rank);
    let mut shift_val = Val::Bot;
    for m in &rep.mats {
        shift_val = shift_val.min(laurent_mat_valuation(ctx, &m.sub(ctx, &id)?));
    }
    let direct_check = shift_val.at_least(need);

    let s_exp = ceil_rat(need * Rat::from_integer(ctx.e as i64)) as u32;
    let keys = tr.integral_keys();
    let l = rep.rank;
    let nk = keys.len();
    let rank = nk * l;
    let mut index = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        index.insert(k.clone(), i);
    }
    // gamma fixes every integral monomial, so the operator on the flattened
    // window is multiplication by A_i minus the identity
    let mut stacked = Mat::<CycElt>::zeros(ctx, rank, rank * ctx.d);
    for (gi, amat) in rep.mats.iter().enumerate() {
        for (ki, key) in keys.iter().enumerate() {
            for rr in 0..l {
                for cc in 0..l {
                    for (mk, mc) in &amat.at(rr, cc).coeffs {
                        let target: Vec<i64> =
                            key.iter().zip(mk).map(|(&x, &y)| x + y).collect();
                        let Some(&tk) = index.get(&target) else {
                            continue;
                        };
                        let row = ki * l + rr;
                        let col = gi * rank + tk * l + cc;
                        let sum = ctx.add(stacked.at(row, col), mc);
                        *stacked.at_mut(row, col) = sum;
                    }
                }
                let row = ki * l + rr;
                let col = gi * rank + ki * l + rr;
                let diff = ctx.sub(stacked.at(row, col), &ctx.one());
                *stacked.at_mut(row, col) = diff;
            }
        }
    }
    let snf = smith(ctx, &stacked, exec)?;
    let h0_divisor_floor = snf.diag.iter().copied().min().unwrap_or(full_length(ctx));

    Ok(SmallnessUpgradeReport {
        direct_check,
        h0_free_rank_matches_l: h0_divisor_floor >= s_exp,
        shift_valuation: shift_val.fin(),
        required_valuation: need,
        h0_divisor_floor,
        truncation_exponent: s_exp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_d1() -> PrecisionContext {
        PrecisionContext::new(5, 2, 10, 1, 2, 6, Rat::new(1, 2)).unwrap()
    }

    fn ctx_d2() -> PrecisionContext {
        PrecisionContext::new(5, 1, 8, 2, 1, 3, Rat::new(1, 2)).unwrap()
    }

    fn trivial_twist(ctx: &PrecisionContext, base: Base, l: usize) -> SmallRep {
        let mats = (0..ctx.d).map(|_| Mat::<LaurentElt>::identity(ctx, l)).collect();
        make_rep(ctx, base, mats, ctx.a).unwrap()
    }

    /// `A_j = I + (j + 1) pi^((a+r)e) E01`, a commuting chart pair (or
    /// single matrix for d = 1) at the smallness boundary.
    fn nilpotent_twist(ctx: &PrecisionContext) -> SmallRep {
        let tr = ToricRing::new(ctx);
        let s = ceil_rat((ctx.a + ctx.r()) * Rat::from_integer(ctx.e as i64)) as usize;
        let mats = (0..ctx.d)
            .map(|j| {
                let mut m = Mat::<LaurentElt>::identity(ctx, 2);
                let c = ctx.mul_pi_pow(&ctx.from_u64(j as u64 + 1), s);
                *m.at_mut(0, 1) = tr.constant(c);
                m
            })
            .collect();
        make_rep(ctx, Base::Chart, mats, ctx.a).unwrap()
    }

    #[test]
    fn zero_cocycle_solves_to_zero() {
        let ctx = ctx_d2();
        let tr = ToricRing::new(&ctx);
        let twist = nilpotent_twist(&ctx);
        let f = vec![row_zero(2), row_zero(2)];
        let g = solve_pi_coboundary(&ctx, &twist, &f).unwrap();
        assert!(row_is_zero(&tr, &g));
    }

    #[test]
    fn integral_support_is_rejected() {
        let ctx = ctx_d1();
        let tr = ToricRing::new(&ctx);
        let twist = trivial_twist(&ctx, Base::Chart, 1);
        let f = vec![vec![tr.constant(ctx.one())]];
        let err = solve_pi_coboundary(&ctx, &twist, &f).unwrap_err();
        assert!(matches!(err, Error::NotInComplement { .. }), "{err}");
    }

    #[test]
    fn single_monomial_solve_matches_shift_eigenvalue() {
        let ctx = ctx_d1();
        let tr = ToricRing::new(&ctx);
        let twist = trivial_twist(&ctx, Base::Chart, 1);

        // at T^(1/p) the shift eigenvalue is zeta_p - 1 = pi_1, so the
        // solution coefficient is the input coefficient, determined up to
        // the annihilator of the eigenvalue: valuation N - 1/4
        let f0 = tr.from_terms(vec![(vec![5], ctx.from_u64(3))]).unwrap();
        let g = solve_pi_coboundary(&ctx, &twist, &[vec![f0.clone()]]).unwrap();
        let fringe = tr.gauss_valuation(&tr.sub(&g[0], &f0));
        assert!(fringe.at_least(Rat::new(39, 4)), "difference valuation {fringe}");
        let dg = tr.sub(&tr.gamma_act(&[1], &g[0]).unwrap(), &g[0]);
        assert!(tr.is_zero(&tr.sub(&dg, &tr.scale(&f0, &ctx.rho1()))));

        // a deeper monomial divides by its own eigenvalue
        let c7 = ctx.from_u64(7);
        let f1 = tr.from_terms(vec![(vec![2], c7.clone())]).unwrap();
        let g = solve_pi_coboundary(&ctx, &twist, &[vec![f1.clone()]]).unwrap();
        let eps = tr.epsilon_of(&[2], 0).unwrap();
        let expect = ctx.div_exact(&ctx.mul(&ctx.rho1(), &c7), &eps).unwrap();
        assert!(ctx.is_zero(&ctx.sub(g[0].coeffs.get(&vec![2i64]).unwrap(), &expect)));
        let dg = tr.sub(&tr.gamma_act(&[1], &g[0]).unwrap(), &g[0]);
        assert!(tr.is_zero(&tr.sub(&dg, &tr.scale(&f1, &ctx.rho1()))));
        assert!(row_valuation(&tr, &g) >= row_valuation(&tr, &[f1]));
    }

    #[test]
    fn twisted_coboundary_solve_is_exact_d2() {
        let ctx = ctx_d2();
        let tr = ToricRing::new(&ctx);
        let twist = nilpotent_twist(&ctx);
        // complement cochain with mixed depths and directions
        let w = vec![
            tr.from_terms(vec![
                (vec![1, 0], ctx.one()),
                (vec![0, 2], ctx.from_u64(7)),
            ])
            .unwrap(),
            tr.from_terms(vec![
                (vec![3, 4], ctx.from_u64(3)),
                (vec![2, 1], ctx.mul_pi_pow(&ctx.one(), 2)),
            ])
            .unwrap(),
        ];
        let f: Vec<Vec<LaurentElt>> = (0..ctx.d)
            .map(|j| {
                let aw = act_row(&ctx, &tr, &twist, j, &w).unwrap();
                row_sub(&tr, &aw, &w)
            })
            .collect();
        let g = solve_pi_coboundary(&ctx, &twist, &f).unwrap();
        let pi1 = ctx.rho1();
        for j in 0..ctx.d {
            let dg = row_sub(&tr, &act_row(&ctx, &tr, &twist, j, &g).unwrap(), &g);
            let diff = row_sub(&tr, &dg, &row_scale(&tr, &f[j], &pi1));
            assert!(row_is_zero(&tr, &diff), "generator {j} residual {diff:?}");
        }
        assert!(rows_valuation(&tr, std::slice::from_ref(&g)) >= rows_valuation(&tr, &f));
    }

    #[test]
    fn chart_input_descends_in_zero_rounds() {
        let ctx = ctx_d1();
        let tr = ToricRing::new(&ctx);
        // integral support (including a nonconstant monomial) tagged as
        // living over the perfectoid base
        let mut a = Mat::<LaurentElt>::identity(&ctx, 2);
        *a.at_mut(0, 1) = tr
            .from_terms(vec![
                (vec![0], ctx.mul_pi_pow(&ctx.one(), 15)),
                (vec![25], ctx.mul_pi_pow(&ctx.one(), 16)),
            ])
            .unwrap();
        let rep = make_rep(&ctx, Base::Perfectoid, vec![a.clone()], Rat::new(1, 2)).unwrap();
        let (chart, state) = descend_cocycle(&ctx, &rep, Rat::new(1, 4)).unwrap();
        assert!(state.trace.is_empty());
        let id = Mat::<LaurentElt>::identity(&ctx, 2);
        assert!(mats_equal(&tr, &state.conjugator, &id));
        assert!(mats_equal(&tr, &chart.mats[0], &a));
        assert!(matches!(chart.base, Base::Chart));
    }

    #[test]
    fn shallow_complement_fails_hypothesis_check() {
        let ctx = ctx_d1();
        let tr = ToricRing::new(&ctx);
        // pure complement shift at valuation 3/4: fine for r_log = 1/4 but
        // below the 1/2 + 2/4 = 1 bound that r_log = 1/2 demands
        let mut a = Mat::<LaurentElt>::identity(&ctx, 2);
        *a.at_mut(0, 1) = tr
            .from_terms(vec![(vec![1], ctx.mul_pi_pow(&ctx.one(), 15))])
            .unwrap();
        let rep = make_rep(&ctx, Base::Perfectoid, vec![a], Rat::new(1, 2)).unwrap();
        let err = descend_cocycle(&ctx, &rep, Rat::new(1, 2)).unwrap_err();
        assert!(matches!(err, Error::NotSmall { .. }), "{err}");

        // decompletion also refuses a certificate the matrices miss
        let mut b = Mat::<LaurentElt>::identity(&ctx, 2);
        *b.at_mut(0, 1) = tr
            .from_terms(vec![(vec![1], ctx.mul_pi_pow(&ctx.one(), 14))])
            .unwrap();
        let rep = make_rep(&ctx, Base::Perfectoid, vec![b], Rat::new(9, 20)).unwrap();
        let err = decomplete_rep(&ctx, &rep, Rat::new(1, 2), Exec::Sequential).unwrap_err();
        assert!(matches!(err, Error::NotSmall { .. }), "{err}");
    }

    #[test]
    fn trivial_rep_decompletes_to_itself() {
        let ctx = ctx_d1();
        let tr = ToricRing::new(&ctx);
        let rep = trivial_twist(&ctx, Base::Perfectoid, 2);
        let (chart, state, report) =
            decomplete_rep(&ctx, &rep, Rat::new(1, 2), Exec::Sequential).unwrap();
        assert!(state.trace.is_empty());
        let id = Mat::<LaurentElt>::identity(&ctx, 2);
        assert!(mats_equal(&tr, &state.conjugator, &id));
        assert!(mats_equal(&tr, &chart.mats[0], &id));
        assert!(report.direct_check);
        assert!(report.h0_free_rank_matches_l);
        assert_eq!(report.shift_valuation, None);
        assert_eq!(report.h0_divisor_floor, full_length(&ctx));
    }

    #[test]
    fn seeded_conjugate_descends_back_to_chart() {
        let ctx = ctx_d1();
        let tr = ToricRing::new(&ctx);
        let m_chart = nilpotent_twist(&ctx);
        // perfectoid change of basis at the triviality boundary
        let mut h0 = Mat::<LaurentElt>::zeros(&ctx, 2, 2);
        *h0.at_mut(0, 0) = tr
            .from_terms(vec![(vec![1], ctx.mul_pi_pow(&ctx.one(), 15))])
            .unwrap();
        *h0.at_mut(1, 0) = tr
            .from_terms(vec![(vec![7], ctx.mul_pi_pow(&ctx.one(), 16))])
            .unwrap();
        let id = Mat::<LaurentElt>::identity(&ctx, 2);
        let u = id.add(&ctx, &h0).unwrap();
        let u_inv = u.inv_unipotent(&ctx, full_length(&ctx) as usize + 1).unwrap();
        let f0 = gamma_act_mat(&tr, vec![1], &u)
            .unwrap()
            .mul(&ctx, &m_chart.mats[0])
            .unwrap()
            .mul(&ctx, &u_inv)
            .unwrap();
        let m_inf = make_rep(&ctx, Base::Perfectoid, vec![f0], Rat::new(1, 2)).unwrap();

        let (chart, state, report) =
            decomplete_rep(&ctx, &m_inf, Rat::new(1, 2), Exec::Sequential).unwrap();
        assert!(report.direct_check && report.h0_free_rank_matches_l);
        assert_eq!(report.truncation_exponent, 15);
        assert_eq!(chart.smallness_a, Rat::new(1, 2));

        // W = H U intertwines the original chart matrices with the
        // recovered ones: gamma(W) = A' W A^(-1) exactly
        let w = state.conjugator.mul(&ctx, &u).unwrap();
        let w_inv = u_inv.mul(&ctx, &state.conjugator_inverse).unwrap();
        let a_inv = m_chart.mats[0]
            .inv_unipotent(&ctx, full_length(&ctx) as usize + 1)
            .unwrap();
        let lhs = gamma_act_mat(&tr, vec![1], &w).unwrap();
        let rhs = chart.mats[0].mul(&ctx, &w).unwrap().mul(&ctx, &a_inv).unwrap();
        assert!(mats_equal(&tr, &lhs, &rhs));
        let _ = w_inv;

        // trace starts at the measured complement depth and keeps schedule
        assert!(!state.trace.is_empty());
        assert_eq!(state.trace[0].complement_valuation, Rat::new(4, 5));
        let r_log = Rat::new(1, 4);
        for entry in &state.trace {
            let scheduled = state.trace[0].complement_valuation
                + Rat::from_integer(entry.step as i64 - 1) * r_log;
            assert!(entry.complement_valuation >= scheduled, "{entry:?}");
        }
        assert!(state.trace.len() <= 41);

        let json = serde_json::to_value(&state.trace).unwrap();
        let first = &json[0];
        assert_eq!(first["step"], 1);
        assert_eq!(first["complement_valuation"], serde_json::json!([4, 5]));
        assert!(first["increment_valuation"].is_array());
    }

    #[test]
    fn upgrade_check_flags_boundary_smallness() {
        let ctx = ctx_d1();
        let tr = ToricRing::new(&ctx);
        // nu(A - I) = a exactly: certified (a - r)-small, but not upgraded
        let mut a = Mat::<LaurentElt>::identity(&ctx, 2);
        *a.at_mut(0, 1) = tr.constant(ctx.mul_pi_pow(&ctx.one(), 10));
        let rep = make_rep(&ctx, Base::Chart, vec![a], Rat::new(1, 4)).unwrap();
        let report =
            verify_smallness_upgrade(&ctx, &rep, Rat::new(1, 2), Exec::Sequential).unwrap();
        assert!(!report.direct_check);
        assert!(!report.h0_free_rank_matches_l);
        assert_eq!(report.shift_valuation, Some(Rat::new(1, 2)));
        assert_eq!(report.h0_divisor_floor, 10);
        assert_eq!(report.truncation_exponent, 15);

        // the same shape one step deeper passes both checks
        let mut b = Mat::<LaurentElt>::identity(&ctx, 2);
        *b.at_mut(0, 1) = tr.constant(ctx.mul_pi_pow(&ctx.one(), 15));
        let rep = make_rep(&ctx, Base::Chart, vec![b], Rat::new(1, 2)).unwrap();
        let report =
            verify_smallness_upgrade(&ctx, &rep, Rat::new(1, 2), Exec::Sequential).unwrap();
        assert!(report.direct_check);
        assert!(report.h0_free_rank_matches_l);
        assert_eq!(report.h0_divisor_floor, 15);
    }

    #[test]
    fn descent_trace_serializes_as_rational_pairs() {
        let step = DescentStep {
            step: 3,
            complement_valuation: Rat::new(4, 5),
            increment_valuation: Rat::new(3, 4),
        };
        let v = serde_json::to_value(&step).unwrap();
        assert_eq!(v["step"], 3);
        assert_eq!(v["complement_valuation"], serde_json::json!([4, 5]));
        assert_eq!(v["increment_valuation"], serde_json::json!([3, 4]));
        let back: DescentStep = serde_json::from_value(v).unwrap();
        assert_eq!(back, step);
    }
}
