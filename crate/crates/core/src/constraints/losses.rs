//! Constraint losses, generic over the scalar type.

use crate::numkernel::{Graph, Real, Var};
use crate::{Error, Result};

/// `a . b / (|a| |b|)`; zero-norm operands are rejected.
pub fn cosine<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let ab = g.dot(a, b)?;
    let aa = g.dot(a, a)?;
    let bb = g.dot(b, b)?;
    if g.item(aa) == T::zero() || g.item(bb) == T::zero() {
        return Err(Error::Degenerate("cosine of a zero-norm embedding".into()));
    }
    let na = g.sqrt(aa);
    let nb = g.sqrt(bb);
    let den = g.mul(na, nb)?;
    Ok(g.div(ab, den)?)
}

fn one_minus<T: Real>(g: &mut Graph<T>, x: Var) -> Var {
    let neg = g.scale(x, -T::one());
    g.add_scalar(neg, T::one())
}

/// Contrastive speaker-indicator objective: pulls the anchor toward the positive
/// and pushes it from `k` negatives,
/// `(1 - cos(a, p)) + (1/k) * sum_i cos(a, n_i)`.
pub fn loss_triplet<T: Real>(
    g: &mut Graph<T>,
    anchor: Var,
    positive: Var,
    negatives: &[Var],
) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::Contract("triplet loss needs at least one negative".into()));
    }
    let cp = cosine(g, anchor, positive)?;
    let mut total = one_minus(g, cp);
    let inv_k = T::one() / T::from_usize(negatives.len()).unwrap();
    for &n in negatives {
        let cn = cosine(g, anchor, n)?;
        let w = g.scale(cn, inv_k);
        total = g.add(total, w)?;
    }
    Ok(total)
}

/// `1 - cos(predicted, target)`.
pub fn loss_spk_cos<T: Real>(g: &mut Graph<T>, predicted: Var, target: Var) -> Result<Var> {
    let c = cosine(g, predicted, target)?;
    Ok(one_minus(g, c))
}

/// How the fake-sample term of the discriminator loss is penalised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FakeTerm {
    /// `|D(fake)|^2`, the symmetric least-squares form.
    #[default]
    Squared,
    /// `|D(fake)|`, unsquared; its gradient is undefined at `D(fake) = 0`.
    Unsquared,
}

/// Discriminator objective `|1 - D(real)|^2 + |D(fake)|^2` (or unsquared second term).
pub fn loss_real_fake<T: Real>(
    g: &mut Graph<T>,
    d_real: Var,
    d_fake: Var,
    fake_term: FakeTerm,
) -> Result<Var> {
    let r = one_minus(g, d_real);
    let real = g.dot(r, r)?;
    let ff = g.dot(d_fake, d_fake)?;
    let fake = match fake_term {
        FakeTerm::Squared => ff,
        FakeTerm::Unsquared => g.sqrt(ff),
    };
    Ok(g.add(real, fake)?)
}

/// Generator objective `|1 - D(fake)|^2`.
pub fn loss_adv<T: Real>(g: &mut Graph<T>, d_fake: Var) -> Result<Var> {
    let r = one_minus(g, d_fake);
    Ok(g.dot(r, r)?)
}
