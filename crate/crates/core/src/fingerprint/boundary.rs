//! Minimal decision-altering perturbation search.
//!
//! Two phases: penalized gradient descent drives the anchor across the
//! protected model's decision boundary (doubling the penalty weight when
//! no flip is achieved), then bisection along the anchor-to-adversarial
//! segment pins the crossing point down to `|margin| <= boundary_tol`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fingerprint::{Anchor, GenConfig};
use crate::nn::{self, Model};

/// A located boundary point and the geometry attached to it.
///
/// `delta_star` is the minimal decision-altering perturbation, `q` the
/// boundary point `x_a + delta_star`, `c_g` the margin-gradient norm at
/// `q`, and `residual_margin` the (tiny) margin left after bisection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryResult {
    pub delta_star: Vec<f64>,
    pub q: Vec<f64>,
    pub delta_norm: f64,
    pub c_g: f64,
    pub adversarial_class: usize,
    pub residual_margin: f64,
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One penalized descent run at fixed penalty weight `c`, minimizing
/// `||delta||^2 + c * max(margin(x_a + delta), -kappa)`. Returns the
/// smallest-norm iterate that flipped the prediction, if any.
fn penalized_descent(
    model: &Model,
    anchor: &Anchor,
    cfg: &GenConfig,
    c: f64,
) -> Result<Option<Vec<f64>>> {
    let dim = anchor.x_a.len();
    let mut delta = vec![0.0; dim];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..cfg.cw_steps {
        let x: Vec<f64> = anchor.x_a.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let mg = nn::margin_gradient(model, &x, anchor.y)?;
        if mg.margin < 0.0 {
            let norm = l2_norm(&delta);
            if best.as_ref().is_none_or(|(b, _)| norm < *b) {
                best = Some((norm, delta.clone()));
            }
        }
        let margin_active = mg.margin > -cfg.kappa;
        for (d, grad) in delta.iter_mut().zip(&mg.gradient) {
            let mut g = 2.0 * *d;
            if margin_active {
                g += c * grad;
            }
            *d -= cfg.cw_lr * g;
        }
    }
    Ok(best.map(|(_, d)| d))
}

/// Bisect along the segment from `x_a` (positive margin) to `x_adv`
/// (negative margin) until `|margin| <= tol`. Margins of feedforward nets
/// are continuous, so this always terminates within the iteration cap for
/// any reachable tolerance.
fn bisect_to_boundary(
    model: &Model,
    x_a: &[f64],
    x_adv: &[f64],
    y: usize,
    tol: f64,
) -> Result<Option<Vec<f64>>> {
    let at = |t: f64| -> Vec<f64> {
        x_a.iter()
            .zip(x_adv)
            .map(|(a, b)| a + t * (b - a))
            .collect()
    };
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let x = at(mid);
        let margin = nn::logit_margin(model, &x, y)?;
        if margin.abs() <= tol {
            return Ok(Some(x));
        }
        if margin > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(None)
}

/// Find the minimal decision-altering perturbation for `anchor` on
/// `model`. Returns `None` when the search fails (no prediction flip even
/// after penalty escalation, or degenerate geometry at the boundary); the
/// caller discards the anchor.
pub fn find_min_perturbation(
    model: &Model,
    anchor: &Anchor,
    cfg: &GenConfig,
) -> Result<Option<BoundaryResult>> {
    let start_margin = nn::logit_margin(model, &anchor.x_a, anchor.y)?;
    if start_margin <= 0.0 {
        // Anchor not correctly classified; nothing to cross.
        return Ok(None);
    }

    let mut x_adv: Option<Vec<f64>> = None;
    let mut c = cfg.cw_c;
    for _ in 0..=8 {
        if let Some(delta) = penalized_descent(model, anchor, cfg, c)? {
            x_adv = Some(anchor.x_a.iter().zip(&delta).map(|(a, d)| a + d).collect());
            break;
        }
        c *= 2.0;
    }
    let Some(x_adv) = x_adv else {
        return Ok(None);
    };

    let Some(q) = bisect_to_boundary(model, &anchor.x_a, &x_adv, anchor.y, cfg.boundary_tol)?
    else {
        return Ok(None);
    };
    let delta_star: Vec<f64> = q.iter().zip(&anchor.x_a).map(|(qi, ai)| qi - ai).collect();
    let delta_norm = l2_norm(&delta_star);
    if delta_norm == 0.0 {
        return Ok(None);
    }
    let mg = nn::margin_gradient(model, &q, anchor.y)?;
    if mg.norm == 0.0 {
        return Ok(None);
    }
    Ok(Some(BoundaryResult {
        delta_star,
        q,
        delta_norm,
        c_g: mg.norm,
        adversarial_class: mg.runner_up,
        residual_margin: mg.margin,
    }))
}
