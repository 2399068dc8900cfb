//! Central finite-difference gradient estimates, used as the oracle for every
//! analytic backward rule.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: Real, b: Real) -> Real {
    relative_error_with_floor(a, b, 1e-8)
}

/// `|a - b| / max(|a|, |b|, floor)`. A floor near the finite-difference
/// roundoff level keeps structurally zero gradients from reporting noise as
/// relative error.
pub fn relative_error_with_floor(a: Real, b: Real, floor: Real) -> Real {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn check_eps(eps: Real) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("finite-difference eps must be positive, got {eps}")))
    }
}

fn finite(v: Real, what: &str) -> Result<Real> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Derivative of a scalar function at `x`.
pub fn finite_diff_scalar(mut f: impl FnMut(Real) -> Real, x: Real, eps: Real) -> Result<Real> {
    check_eps(eps)?;
    let hi = finite(f(x + eps), "objective at x+eps")?;
    let lo = finite(f(x - eps), "objective at x-eps")?;
    Ok((hi - lo) / (2.0 * eps))
}

/// Gradient of `f` with respect to every entry of `x`.
pub fn finite_diff_tensor(mut f: impl FnMut(&Tensor) -> Result<Real>, x: &Tensor, eps: Real) -> Result<Tensor> {
    check_eps(eps)?;
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = finite(f(&probe)?, "objective at x+eps")?;
        probe.data_mut()[i] = orig - eps;
        let lo = finite(f(&probe)?, "objective at x-eps")?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (hi - lo) / (2.0 * eps);
    }
    Ok(out)
}

/// One scalar inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coord {
    pub group: usize,
    pub index: usize,
}

/// Every scalar of every group.
pub fn all_coords(theta: &ParamStore) -> Vec<Coord> {
    theta
        .groups()
        .iter()
        .enumerate()
        .flat_map(|(group, p)| (0..p.tensor.numel()).map(move |index| Coord { group, index }))
        .collect()
}

/// Up to `per_group` randomly chosen scalars from each group.
pub fn sample_coords(theta: &ParamStore, per_group: usize, rng: &mut impl Rng) -> Vec<Coord> {
    let mut coords = Vec::new();
    for (group, p) in theta.groups().iter().enumerate() {
        let n = p.tensor.numel();
        if n <= per_group {
            coords.extend((0..n).map(|index| Coord { group, index }));
        } else {
            let mut picked: Vec<usize> = sample(rng, n, per_group).into_vec();
            picked.sort_unstable();
            coords.extend(picked.into_iter().map(|index| Coord { group, index }));
        }
    }
    coords
}

/// Central differences `(f(theta + eps e_i) - f(theta - eps e_i)) / (2 eps)`
/// at each requested coordinate.
pub fn finite_diff_grad(
    mut f: impl FnMut(&ParamStore) -> Result<Real>,
    theta: &ParamStore,
    eps: Real,
    coords: &[Coord],
) -> Result<Vec<Real>> {
    check_eps(eps)?;
    let mut probe = theta.clone();
    let mut out = Vec::with_capacity(coords.len());
    for c in coords {
        let orig = probe.get(c.group).tensor.data()[c.index];
        probe.get_mut(c.group).tensor.data_mut()[c.index] = orig + eps;
        let hi = finite(f(&probe)?, "objective at theta+eps")?;
        probe.get_mut(c.group).tensor.data_mut()[c.index] = orig - eps;
        let lo = finite(f(&probe)?, "objective at theta-eps")?;
        probe.get_mut(c.group).tensor.data_mut()[c.index] = orig;
        out.push((hi - lo) / (2.0 * eps));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: Real,
    pub worst: Option<(String, usize, Real, Real)>,
}

/// Compares the analytic gradients held in `theta` against estimates using
/// [`relative_error_with_floor`].
pub fn compare(theta: &ParamStore, coords: &[Coord], numeric: &[Real], floor: Real) -> GradCheckReport {
    let mut report = GradCheckReport {
        checked: coords.len(),
        max_rel_err: 0.0,
        worst: None,
    };
    for (c, &n) in coords.iter().zip(numeric) {
        let p = theta.get(c.group);
        let a = p.grad.data()[c.index];
        let err = relative_error_with_floor(a, n, floor);
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((p.name.clone(), c.index, a, n));
        }
    }
    report
}
