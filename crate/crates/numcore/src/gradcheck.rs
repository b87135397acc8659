//! Central finite-difference verification of tape gradients (64-bit only).

use crate::error::NumError;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |analytic - fd| / max(1, |fd|)
    pub max_rel_err: f64,
    pub checked: usize,
    /// (input, coordinate) pairs where a perturbation crossed a kink.
    pub skipped: Vec<(usize, usize)>,
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compares the tape gradient of scalar `f` at `point` with central
/// differences of step `h`.
///
/// A coordinate whose `+h` or `-h` evaluation takes a different branch
/// (relu mask, clamp mask, discrete selection) than the unperturbed
/// evaluation is skipped and reported instead of compared.
pub fn grad_check<F, E>(mut f: F, point: &[Tensor<f64>], h: f64) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
    E: From<NumError>,
{
    let mut tape = Tape::verifying();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let base_sig = tape.branch_signature();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad(v)).collect();

    let mut eval = |pt: &[Tensor<f64>]| -> Result<(f64, u64), E> {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = pt.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape
            .value(out)
            .item()
            .ok_or_else(|| NumError::NonScalarLoss(tape.shape(out)))?;
        Ok((value, tape.branch_signature()))
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: Vec::new(),
        worst: None,
    };
    let mut work: Vec<Tensor<f64>> = point.to_vec();
    for (i, base) in point.iter().enumerate() {
        for j in 0..base.len() {
            let x = base.data()[j];
            work[i].data_mut()[j] = x + h;
            let (fp, sp) = eval(&work)?;
            work[i].data_mut()[j] = x - h;
            let (fm, sm) = eval(&work)?;
            work[i].data_mut()[j] = x;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(NumError::NonFiniteAtPerturbation { input: i, coord: j }.into());
            }
            if sp != base_sig || sm != base_sig {
                report.skipped.push((i, j));
                continue;
            }
            let fd = (fp - fm) / (2.0 * h);
            let err = (analytic[i].data()[j] - fd).abs() / fd.abs().max(1.0);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// Names of the primitives covered by [`check_primitive`].
pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "add",
    "add_row",
    "sub",
    "mul",
    "mul_col",
    "scale",
    "add_scalar",
    "sigmoid",
    "relu",
    "tanh",
    "sin",
    "cos",
    "exp",
    "log",
    "clamp",
    "concat_cols",
    "concat_rows",
    "slice_cols",
    "slice_rows",
    "gather_rows",
    "segment_sum",
    "segment_softmax",
    "sum_cols",
    "sum",
    "mean",
    "logsumexp",
    "normalize_rows",
];

/// Gradient-checks one primitive on `instances` random inputs, reducing
/// the output to a scalar through a random weighting. Returns the worst
/// report seen.
pub fn check_primitive<R: rand::Rng>(name: &str, instances: usize, h: f64, rng: &mut R) -> Result<GradCheckReport, NumError> {
    let mut worst = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: Vec::new(),
        worst: None,
    };
    for _ in 0..instances {
        let r = rng.gen_range(1..5usize);
        let c = rng.gen_range(1..5usize);
        let k = rng.gen_range(1..5usize);
        let mut rand_t = |rows: usize, cols: usize, lo: f64, hi: f64| {
            Tensor::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
        };
        // Keep relu/clamp inputs away from their kinks so no coordinate is skipped.
        let away = |t: Tensor<f64>| t.map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v });
        let (inputs, out_shape): (Vec<Tensor<f64>>, (usize, usize)) = match name {
            "matmul" => (vec![rand_t(r, k, -1.0, 1.0), rand_t(k, c, -1.0, 1.0)], (r, c)),
            "add" | "sub" | "mul" => (vec![rand_t(r, c, -1.0, 1.0), rand_t(r, c, -1.0, 1.0)], (r, c)),
            "add_row" => (vec![rand_t(r, c, -1.0, 1.0), rand_t(1, c, -1.0, 1.0)], (r, c)),
            "mul_col" => (vec![rand_t(r, c, -1.0, 1.0), rand_t(r, 1, -1.0, 1.0)], (r, c)),
            "relu" => (vec![away(rand_t(r, c, -1.0, 1.0))], (r, c)),
            "clamp" => (vec![rand_t(r, c, -2.0, 2.0).map(|v| if (v.abs() - 1.0).abs() < 0.05 { v * 1.2 } else { v })], (r, c)),
            "log" => (vec![rand_t(r, c, 0.2, 3.0)], (r, c)),
            "concat_cols" => (vec![rand_t(r, c, -1.0, 1.0), rand_t(r, k, -1.0, 1.0)], (r, c + k)),
            "concat_rows" => (vec![rand_t(r, c, -1.0, 1.0), rand_t(k, c, -1.0, 1.0)], (r + k, c)),
            "slice_cols" => (vec![rand_t(r, c + 2, -1.0, 1.0)], (r, c)),
            "slice_rows" => (vec![rand_t(r + 2, c, -1.0, 1.0)], (r, c)),
            "gather_rows" => (vec![rand_t(r, c, -1.0, 1.0)], (k + 2, c)),
            "segment_sum" => (vec![rand_t(r + 3, c, -1.0, 1.0)], (2, c)),
            "segment_softmax" => (vec![rand_t(r + 3, 1, -2.0, 2.0)], (r + 3, 1)),
            "sum_cols" | "logsumexp" => (vec![rand_t(r, c, -1.0, 1.0)], (r, 1)),
            "sum" | "mean" => (vec![rand_t(r, c, -1.0, 1.0)], (1, 1)),
            "normalize_rows" => (vec![rand_t(r, c + 1, -1.0, 1.0)], (r, c + 1)),
            _ => (vec![rand_t(r, c, -2.0, 2.0)], (r, c)),
        };
        let gather_idx: Vec<usize> = (0..out_shape.0).map(|_| rng.gen_range(0..inputs[0].rows())).collect();
        let seg: Vec<usize> = (0..inputs[0].rows()).map(|i| i % 2).collect();
        let weight = Tensor::from_fn(out_shape.0, out_shape.1, |_, _| rng.gen_range(-1.0..1.0));
        let name = name.to_string();
        let report = grad_check::<_, NumError>(
            |tape, v| {
                let out = match name.as_str() {
                    "matmul" => tape.matmul(v[0], v[1])?,
                    "add" => tape.add(v[0], v[1])?,
                    "add_row" => tape.add_row(v[0], v[1])?,
                    "sub" => tape.sub(v[0], v[1])?,
                    "mul" => tape.mul(v[0], v[1])?,
                    "mul_col" => tape.mul_col(v[0], v[1])?,
                    "scale" => tape.scale(v[0], -1.7)?,
                    "add_scalar" => tape.add_scalar(v[0], 0.3)?,
                    "sigmoid" => tape.sigmoid(v[0])?,
                    "relu" => tape.relu(v[0])?,
                    "tanh" => tape.tanh(v[0])?,
                    "sin" => tape.sin(v[0])?,
                    "cos" => tape.cos(v[0])?,
                    "exp" => tape.exp(v[0])?,
                    "log" => tape.log(v[0])?,
                    "clamp" => tape.clamp(v[0], -1.0, 1.0)?,
                    "concat_cols" => tape.concat_cols(&[v[0], v[1]])?,
                    "concat_rows" => tape.concat_rows(&[v[0], v[1]])?,
                    "slice_cols" => tape.slice_cols(v[0], 1, out_shape.1)?,
                    "slice_rows" => tape.slice_rows(v[0], 2, out_shape.0)?,
                    "gather_rows" => tape.gather_rows(v[0], &gather_idx)?,
                    "segment_sum" => tape.segment_sum(v[0], &seg, 2)?,
                    "segment_softmax" => tape.segment_softmax(v[0], &seg, 2)?,
                    "sum_cols" => tape.sum_cols(v[0])?,
                    "sum" => tape.sum(v[0])?,
                    "mean" => tape.mean(v[0])?,
                    "logsumexp" => tape.logsumexp(v[0])?,
                    "normalize_rows" => tape.normalize_rows(v[0], 1e-12)?,
                    other => {
                        return Err(NumError::Invalid {
                            op: "check_primitive",
                            msg: format!("unknown primitive {other}"),
                        })
                    }
                };
                let w = tape.constant(weight.clone());
                let weighted = tape.mul(out, w)?;
                tape.sum(weighted)
            },
            &inputs,
            h,
        )?;
        worst.checked += report.checked;
        worst.skipped.extend(report.skipped);
        if report.max_rel_err >= worst.max_rel_err {
            worst.max_rel_err = report.max_rel_err;
            worst.worst = report.worst;
        }
    }
    Ok(worst)
}
