use rand::seq::index;

use crate::data::Interaction;
use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore};
use crate::sampler::SamplingPlan;
use crate::seeding::{self, domain};

use super::step::{batch_step, Assembly};

/// Denominator floor of the relative error, per unit of loss magnitude.
/// Roundoff in a central difference grows with |loss|, so gradients far below
/// `RELATIVE_ERROR_FLOOR * |loss|` are judged on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinates sitting on the `>= 0` boundary; probed one-sided and not
    /// counted in the maximum.
    pub boundary: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares `analytic` with central differences of `loss` on up to
/// `coords_per_tensor` random coordinates of every tensor (all of them when
/// `None`). Constrained coordinates at exactly zero get a forward difference
/// and are excluded from the maximum.
pub fn gradient_check<F>(
    store: &mut ParamStore,
    analytic: &Grads,
    mut loss: F,
    eps: f64,
    coords_per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if let Some(id) = analytic.first_non_finite() {
        return Err(Error::Numeric(format!("non-finite analytic gradient in `{}`", store.name(id))));
    }
    let base = loss(store)?;
    let floor = RELATIVE_ERROR_FLOOR * base.abs().max(1.0);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tensors: Vec::new(),
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = store.get(id).len();
        let cols = store.get(id).ncols();
        let picks: Vec<usize> = match coords_per_tensor {
            Some(k) if k < len => {
                let mut rng = seeding::stream(seed, &[domain::GRADCHECK, id.index() as u64]);
                let mut v = index::sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut check = TensorCheck {
            name: store.name(id).to_string(),
            checked: 0,
            max_rel_error: 0.0,
            boundary: 0,
        };
        for flat in picks {
            let idx = [flat / cols, flat % cols];
            let orig = store.get(id)[idx];
            let a = analytic.get(id)[idx];
            if store.is_nonnegative(id) && orig == 0.0 {
                store.get_mut(id)[idx] = eps;
                let up = loss(store)?;
                store.get_mut(id)[idx] = orig;
                let one_sided = (up - base) / eps;
                log::debug!(
                    "{} {idx:?} at boundary: forward difference {one_sided:e}, analytic {a:e}",
                    check.name
                );
                check.boundary += 1;
                continue;
            }
            store.get_mut(id)[idx] = orig + eps;
            let up = loss(store)?;
            store.get_mut(id)[idx] = orig - eps;
            let down = loss(store)?;
            store.get_mut(id)[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::Numeric(format!("non-finite difference in `{}`", check.name)));
            }
            check.checked += 1;
            check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric, floor));
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.tensors.push(check);
    }
    Ok(report)
}

/// Gradient check of the full objective on one batch. Pseudo labels are taken
/// at the unperturbed parameters and held fixed.
pub fn check_objective(
    asm: &mut Assembly,
    batch: &[Interaction],
    plan: Option<&SamplingPlan>,
    balance: f64,
    eps: f64,
    coords_per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut grads = asm.store.zero_grads();
    let out = batch_step(asm, batch, plan, balance, None, Some(&mut grads))?;
    let labels = out.labels();
    let mut store = asm.store.clone();
    let probe = asm.clone();
    let report = gradient_check(
        &mut store,
        &grads,
        |s| {
            // the probe shares structure with `asm`; only the store differs
            let mut p = probe.clone();
            p.store.clone_from(s);
            Ok(batch_step(&p, batch, plan, balance, Some(&labels), None)?.losses.total(balance))
        },
        eps,
        coords_per_tensor,
        seed,
    )?;
    Ok(report)
}
