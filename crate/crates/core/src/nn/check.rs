use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use super::{Gradients, Mlp, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Location of one scalar parameter; `index` is row-major within the layer's
/// weight matrix or bias vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCoord {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<ParamCoord>,
    pub n_checked: usize,
    pub passed: bool,
    pub tol: f64,
}

const FD_H: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn coord(net: &Mlp, mut flat: usize) -> ParamCoord {
    for (layer, l) in net.layers.iter().enumerate() {
        if flat < l.weight.len() {
            return ParamCoord {
                layer,
                kind: ParamKind::Weight,
                index: flat,
            };
        }
        flat -= l.weight.len();
        if flat < l.bias.len() {
            return ParamCoord {
                layer,
                kind: ParamKind::Bias,
                index: flat,
            };
        }
        flat -= l.bias.len();
    }
    unreachable!("index in range")
}

fn objective(net: &Mlp, input: ArrayView2<f64>, dy: &Array2<f64>) -> Result<f64, NnError> {
    let y = net.predict(input)?;
    Ok((&y * dy).sum())
}

/// Compares [`Mlp::backward`] against central differences of `sum(y * dy)`
/// with a fixed, non-uniform `dy`.
pub fn grad_check(params: &Mlp, input: ArrayView2<f64>, tol: f64) -> Result<GradCheckReport, NnError> {
    let dy = Array2::from_shape_fn((input.nrows(), params.output_dim()), |(i, j)| {
        1.0 + 0.5 * ((i * 7 + j * 3) as f64).sin()
    });
    grad_check_with(params, input, dy.view(), tol, |net, cache, dy| net.backward(cache, dy).map(|g| g.0))
}

/// As [`grad_check`] with an explicit `dy` and a caller-supplied backward
/// routine, so a faulty implementation can be checked too.
pub fn grad_check_with<F>(
    params: &Mlp,
    input: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    tol: f64,
    backward: F,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&Mlp, &super::ForwardCache, ArrayView2<f64>) -> Result<Gradients, NnError>,
{
    let (_, cache) = params.forward(input)?;
    let analytic = backward(params, &cache, dy)?.flatten();
    if analytic.len() != params.num_params() {
        return Err(NnError::ShapeMismatch("gradient length differs from parameter count".into()));
    }
    let dy = dy.to_owned();
    let mut net = params.clone();
    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *net.param_mut(k);
        *net.param_mut(k) = orig + FD_H;
        let fp = objective(&net, input, &dy)?;
        *net.param_mut(k) = orig - FD_H;
        let fm = objective(&net, input, &dy)?;
        *net.param_mut(k) = orig;
        let e = rel_err(a, (fp - fm) / (2.0 * FD_H));
        if e > max_rel_err || worst.is_none() {
            max_rel_err = max_rel_err.max(e);
            worst = Some(coord(params, k));
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        n_checked: analytic.len(),
        passed: max_rel_err < tol,
        tol,
    })
}
