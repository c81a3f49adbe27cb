//! Diagonal Gaussian helpers built from primitive tape ops.

use super::array::Array;
use super::tape::Var;
use super::DiffError;

/// Floor added to every softplus standard-deviation head.
pub const MIN_STD: f64 = 1e-4;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

fn check_positive(op: &'static str, std: &Var<'_>) -> Result<(), DiffError> {
    let v = std.value();
    match v.data().iter().find(|&&s| !(s > 0.0)) {
        Some(&s) => Err(DiffError::NonPositiveStd { op, value: s }),
        None => Ok(()),
    }
}

/// `softplus(raw) + MIN_STD`.
pub fn positive_std(raw: Var<'_>) -> Var<'_> {
    raw.softplus().offset(MIN_STD)
}

/// Log-density of `x` under `N(mean, diag(std²))`, summed over the trailing
/// axis.
pub fn gaussian_log_prob<'t>(x: Var<'t>, mean: Var<'t>, std: Var<'t>) -> Result<Var<'t>, DiffError> {
    check_positive("gaussian_log_prob", &std)?;
    let z = x.sub(mean)?.div(std)?;
    let per_dim = z.square().scale(-0.5).sub(std.ln())?.offset(-HALF_LN_2PI);
    per_dim.sum_last()
}

/// `KL(N(mean_p, std_p²) ‖ N(mean_q, std_q²))`, summed over the trailing axis.
pub fn diag_gaussian_kl<'t>(
    mean_p: Var<'t>,
    std_p: Var<'t>,
    mean_q: Var<'t>,
    std_q: Var<'t>,
) -> Result<Var<'t>, DiffError> {
    check_positive("diag_gaussian_kl", &std_p)?;
    check_positive("diag_gaussian_kl", &std_q)?;
    let log_ratio = std_q.ln().sub(std_p.ln())?;
    let num = std_p.square().add(mean_p.sub(mean_q)?.square())?;
    let den = std_q.square().scale(2.0);
    log_ratio.add(num.div(den)?)?.offset(-0.5).sum_last()
}

/// `mean + std ⊙ noise`; `noise` enters as a constant.
pub fn reparam_sample<'t>(mean: Var<'t>, std: Var<'t>, noise: &Array) -> Result<Var<'t>, DiffError> {
    let (ms, ss) = (mean.shape(), std.shape());
    if ms != ss || ms != noise.shape() {
        return Err(DiffError::ShapeMismatch {
            op: "reparam_sample",
            lhs: ms,
            rhs: noise.shape().to_vec(),
        });
    }
    let eps = mean.tape().leaf(noise.clone());
    mean.add(std.mul(eps)?)
}
