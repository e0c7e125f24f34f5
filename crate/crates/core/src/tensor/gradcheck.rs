use super::ParamRegistry;
use crate::error::{Error, Result};

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub entries_checked: usize,
}

/// Compares the gradients that `loss_fn` accumulates into `registry` against
/// central differences `(f(θ+ε) − f(θ−ε)) / 2ε`, entry by entry, over every
/// registered parameter.
///
/// The relative error for one entry is `|g_a − g_n| / max(|g_a| + |g_n|, 1e-8)`.
/// Parameter values are restored bit-exactly, and on return the gradient slots
/// hold the analytic gradient.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    registry: &mut ParamRegistry,
    epsilon: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamRegistry) -> Result<f64>,
{
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "finite-difference epsilon {epsilon} outside [1e-7, 1e-4]"
        )));
    }
    let mut eval = |reg: &mut ParamRegistry| -> Result<f64> {
        let f = loss_fn(reg)?;
        if !f.is_finite() {
            return Err(Error::numeric(format!("loss evaluated to {f}")));
        }
        Ok(f)
    };

    registry.zero_grads();
    eval(registry)?;
    let analytic: Vec<Vec<f64>> = registry
        .ids()
        .map(|id| registry.grad(id).data().to_vec())
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        entries_checked: 0,
    };
    let ids: Vec<_> = registry.ids().collect();
    for id in ids {
        for i in 0..registry.value(id).len() {
            let orig = registry.value(id).data()[i];
            registry.value_mut(id).data_mut()[i] = orig + epsilon;
            let plus = eval(registry)?;
            registry.value_mut(id).data_mut()[i] = orig - epsilon;
            let minus = eval(registry)?;
            registry.value_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let exact = analytic[id.index()][i];
            let rel = (exact - numeric).abs() / (exact.abs() + numeric.abs()).max(1e-8);
            report.entries_checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = rel;
                report.worst = Some((registry.name(id).to_string(), i));
                report.worst_analytic = exact;
                report.worst_numeric = numeric;
            }
        }
    }

    registry.zero_grads();
    for id in registry.ids().collect::<Vec<_>>() {
        registry
            .grad_mut(id)
            .data_mut()
            .copy_from_slice(&analytic[id.index()]);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{InitScheme, Tensor};

    fn registry_with(values: &[f64]) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        reg.insert("theta", Tensor::vector(values).unwrap(), InitScheme::Zero)
            .unwrap();
        reg
    }

    #[test]
    fn quadratic_is_exact() {
        let mut reg = registry_with(&[1.0, 2.0]);
        let id = reg.id("theta").unwrap();
        let report = finite_diff_check(
            |r| {
                let theta = r.value(id).data().to_vec();
                let g = r.grad_mut(id).data_mut();
                for (gi, t) in g.iter_mut().zip(&theta) {
                    *gi += t;
                }
                Ok(0.5 * theta.iter().map(|t| t * t).sum::<f64>())
            },
            &mut reg,
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-9, "{report:?}");
        assert_eq!(reg.grad(id).data(), &[1.0, 2.0]);
        assert_eq!(reg.value(id).data(), &[1.0, 2.0]);
    }

    #[test]
    fn constant_loss() {
        let mut reg = registry_with(&[0.3, -0.2, 4.0]);
        let report = finite_diff_check(|_| Ok(7.25), &mut reg, 1e-6).unwrap();
        assert!(report.max_relative_error < 1e-8);
        assert_eq!(report.entries_checked, 3);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut reg = registry_with(&[1.0]);
        let id = reg.id("theta").unwrap();
        let report = finite_diff_check(
            |r| {
                let t = r.value(id).data()[0];
                r.grad_mut(id).data_mut()[0] += 3.0 * t; // should be 2t
                Ok(t * t)
            },
            &mut reg,
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error > 0.1);
    }

    #[test]
    fn non_finite_loss_is_numeric_failure() {
        let mut reg = registry_with(&[1.0]);
        let err = finite_diff_check(|_| Ok(f64::NAN), &mut reg, 1e-5).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn epsilon_range_enforced() {
        let mut reg = registry_with(&[1.0]);
        assert!(finite_diff_check(|_| Ok(0.0), &mut reg, 1e-3).is_err());
        assert!(finite_diff_check(|_| Ok(0.0), &mut reg, 1e-8).is_err());
    }
}
