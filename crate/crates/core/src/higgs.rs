//! Small Higgs modules over the chart: commuting field components with a
//! divisibility certificate, the Higgs (Koszul) complex, and tensor/dual.
//!
//! A Higgs module here is a finite free chart module with d pairwise
//! commuting endomorphisms `theta_1..theta_d`, every entry divisible by
//! `p^(a + 1/(p-1))`. The one-form part of the field is pure bookkeeping on
//! the free chart differentials, so each component is stored as a bare
//! matrix indexed by its coordinate direction.

use serde::{Deserialize, Serialize};

use crate::cyclotomic::{CycElt, PrecisionContext, Val};
use crate::homology::{CoordLabel, DegreeReport, FlatModule, KoszulComplex};
use crate::matrix::Mat;
use crate::par::Exec;
use crate::series::laurent_mat_valuation;
use crate::toric::{LaurentElt, ToricRing};
use crate::{Error, Rat, Result};

/// A validated small Higgs module: commuting field components over the
/// chart with a smallness certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallHiggs {
    pub rank: usize,
    pub thetas: Vec<Mat<LaurentElt>>,
    pub smallness_a: Rat,
}

/// Validate and build a small Higgs module. Flatness (pairwise commutation)
/// and the smallness bound `gauss_valuation(theta_i) >= a + 1/(p-1)` are
/// checked exactly; chart entries must have integral monomial support.
pub fn make_higgs(
    ctx: &PrecisionContext,
    thetas: Vec<Mat<LaurentElt>>,
    a: Rat,
) -> Result<SmallHiggs> {
    if thetas.len() != ctx.d {
        return Err(Error::ShapeMismatch(format!(
            "{} field components for chart dimension {}",
            thetas.len(),
            ctx.d
        )));
    }
    let rank = thetas.first().map_or(0, |m| m.rows);
    if rank == 0 {
        return Err(Error::ShapeMismatch("empty Higgs module".into()));
    }
    let tr = ToricRing::new(ctx);
    for (i, m) in thetas.iter().enumerate() {
        if !m.is_square() || m.rows != rank {
            return Err(Error::ShapeMismatch(format!(
                "field component {i} is {}x{}, expected {rank}x{rank}",
                m.rows, m.cols
            )));
        }
        if !m
            .data
            .iter()
            .all(|e| e.coeffs.keys().all(|k| tr.is_integral_key(k)))
        {
            return Err(Error::MalformedInput(format!(
                "field component {i} has non-integral monomial support over the chart"
            )));
        }
    }
    for i in 0..thetas.len() {
        for j in i + 1..thetas.len() {
            if !thetas[i].commutes_with(ctx, &thetas[j])? {
                return Err(Error::NotKoszul { i, j });
            }
        }
    }
    let need = a + ctx.r();
    for m in &thetas {
        if let Val::Fin(v) = laurent_mat_valuation(ctx, m) {
            if v < need {
                return Err(Error::NotSmall { val: v.to_string(), need });
            }
        }
    }
    Ok(SmallHiggs { rank, thetas, smallness_a: a })
}

impl SmallHiggs {
    /// Tensor product: `theta_i (x) I + I (x) theta_i` on the Kronecker
    /// module, certificate `min(a_1, a_2)`.
    pub fn tensor(&self, ctx: &PrecisionContext, other: &SmallHiggs) -> Result<SmallHiggs> {
        if self.thetas.len() != other.thetas.len() {
            return Err(Error::ShapeMismatch(
                "tensor of Higgs modules of different chart dimension".into(),
            ));
        }
        let id_l = Mat::<LaurentElt>::identity(ctx, self.rank);
        let id_r = Mat::<LaurentElt>::identity(ctx, other.rank);
        let thetas: Result<Vec<Mat<LaurentElt>>> = self
            .thetas
            .iter()
            .zip(&other.thetas)
            .map(|(t1, t2)| {
                t1.kronecker(ctx, &id_r).add(ctx, &id_l.kronecker(ctx, t2))
            })
            .collect();
        make_higgs(ctx, thetas?, self.smallness_a.min(other.smallness_a))
    }

    /// Dual: `-theta_i` transposed, same certificate.
    pub fn dual(&self, ctx: &PrecisionContext) -> Result<SmallHiggs> {
        let thetas: Vec<Mat<LaurentElt>> =
            self.thetas.iter().map(|t| t.neg(ctx).transpose(ctx)).collect();
        make_higgs(ctx, thetas, self.smallness_a)
    }

    /// Koszul cohomology of the field components on the flattened chart
    /// module: one CycElt coordinate per (integral window monomial, module
    /// index). Monomials that any nonconstant entry could push out of the
    /// window are flagged boundary.
    pub fn higgs_cohomology(
        &self,
        ctx: &PrecisionContext,
        exec: Exec,
    ) -> Result<Vec<DegreeReport>> {
        let tr = ToricRing::new(ctx);
        let keys = tr.integral_keys();
        let l = self.rank;
        let rank = keys.len() * l;
        let key_index: std::collections::BTreeMap<&[i64], usize> =
            keys.iter().enumerate().map(|(i, k)| (k.as_slice(), i)).collect();

        let mut shifts: Vec<Vec<i64>> = Vec::new();
        for m in &self.thetas {
            for e in &m.data {
                for k in e.coeffs.keys() {
                    if k.iter().any(|&x| x != 0) && !shifts.contains(k) {
                        shifts.push(k.clone());
                    }
                }
            }
        }
        let bound = tr.key_bound();
        let mut labels = Vec::with_capacity(rank);
        for key in &keys {
            let safe = shifts
                .iter()
                .all(|s| key.iter().zip(s).all(|(&k, &d)| (k + d).abs() <= bound));
            for j in 0..l {
                labels.push(CoordLabel {
                    descriptor: format!("T{key:?} e{j}"),
                    stable: safe,
                });
            }
        }
        let module = FlatModule { rank, labels };

        let mut ops = Vec::with_capacity(ctx.d);
        for theta in &self.thetas {
            let mut op = Mat::<CycElt>::zeros(ctx, rank, rank);
            for (ki, key) in keys.iter().enumerate() {
                for r in 0..l {
                    for c in 0..l {
                        let entry = theta.at(r, c);
                        for (mk, mc) in &entry.coeffs {
                            let target: Vec<i64> =
                                key.iter().zip(mk).map(|(&a, &b)| a + b).collect();
                            let Some(&tk) = key_index.get(target.as_slice()) else {
                                continue;
                            };
                            let row = ki * l + r;
                            let col = tk * l + c;
                            *op.at_mut(row, col) = ctx.add(op.at(row, col), mc);
                        }
                    }
                }
            }
            ops.push(op);
        }
        let complex = KoszulComplex::new(ctx, module, ops)?;
        complex.cohomology_with(exec)
    }
}
