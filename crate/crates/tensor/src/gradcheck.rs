//! Central finite-difference gradient checking.
//!
//! Uses only forward evaluation of the graph, so it is an oracle independent
//! of the backward rules it validates.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels::InterpMode;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative error of `a` against `b`, with a floor on the denominator so
/// components that are zero on both sides compare by absolute difference.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(input, element, analytic, numeric)` of the worst component.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

/// Numerical gradient of the scalar produced by `build` w.r.t. each input.
pub fn numerical_gradients<F>(
    inputs: &[Tensor<f64>],
    eps: f64,
    build: F,
) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = (plus - minus) / (2.0 * eps);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Compares backward-pass gradients with central differences.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    eps: f64,
    floor: f64,
    build: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let numeric = numerical_gradients(inputs, eps, &build)?;

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for (i, (&v, num)) in vars.iter().zip(&numeric).enumerate() {
        let ana = grads.wrt(&g, v);
        for (j, (&a, &n)) in ana.data().iter().zip(num.data()).enumerate() {
            let e = relative_error(a, n, floor);
            report.checked += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst = Some((i, j, a, n));
            }
        }
    }
    Ok(report)
}

/// A differentiable operation under test: random input generator plus a
/// builder that reduces the op's output to a scalar.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: fn(&mut Rng) -> Vec<Tensor<f64>>,
    pub build: fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
}

/// Fixed, non-trivial projection `Σ cᵢ·yᵢ` so every output component is
/// exercised by the check.
pub fn project(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let c = Tensor::from_fn(shape, |i| (1.3 * i as f64 + 0.7).sin() + 0.25);
    let c = g.input(c);
    let prod = g.mul(y, c)?;
    Ok(g.sum(prod))
}

/// Normal draws pushed at least `gap` away from each listed kink.
fn randn_avoiding(shape: &[usize], kinks: &[f64], gap: f64, rng: &mut Rng) -> Tensor<f64> {
    let mut t: Tensor<f64> = Tensor::randn(shape.to_vec(), rng);
    for v in t.data_mut() {
        for &k in kinks {
            if (*v - k).abs() < gap {
                *v = k + if *v >= k { gap } else { -gap };
            }
        }
    }
    t
}

fn one_input(
    g: &mut Graph<f64>,
    v: &[Var],
    f: impl FnOnce(&mut Graph<f64>, Var) -> Result<Var>,
) -> Result<Var> {
    let y = f(g, v[0])?;
    project(g, y)
}

/// Every differentiable operation of the graph.
pub fn op_catalogue() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "conv2d_s1_p1",
            inputs: |r| {
                vec![
                    Tensor::randn([2, 6, 5], r),
                    Tensor::randn([3, 2, 3, 3], r),
                    Tensor::randn([3], r),
                ]
            },
            build: |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                project(g, y)
            },
        },
        OpCase {
            name: "conv2d_s2_p1",
            inputs: |r| {
                vec![
                    Tensor::randn([2, 7, 6], r),
                    Tensor::randn([3, 2, 3, 3], r),
                    Tensor::randn([3], r),
                ]
            },
            build: |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                project(g, y)
            },
        },
        OpCase {
            name: "conv2d_1x1",
            inputs: |r| vec![Tensor::randn([3, 4, 4], r), Tensor::randn([2, 3, 1, 1], r)],
            build: |g, v| {
                let y = g.conv2d(v[0], v[1], None, 1, 0)?;
                project(g, y)
            },
        },
        OpCase {
            name: "add",
            inputs: |r| vec![Tensor::randn([3, 4], r), Tensor::randn([3, 4], r)],
            build: |g, v| {
                let y = g.add(v[0], v[1])?;
                project(g, y)
            },
        },
        OpCase {
            name: "sub",
            inputs: |r| vec![Tensor::randn([3, 4], r), Tensor::randn([3, 4], r)],
            build: |g, v| {
                let y = g.sub(v[0], v[1])?;
                project(g, y)
            },
        },
        OpCase {
            name: "mul",
            inputs: |r| vec![Tensor::randn([3, 4], r), Tensor::randn([3, 4], r)],
            build: |g, v| {
                let y = g.mul(v[0], v[1])?;
                project(g, y)
            },
        },
        OpCase {
            name: "scale",
            inputs: |r| vec![Tensor::randn([5], r)],
            build: |g, v| one_input(g, v, |g, x| Ok(g.scale(x, -1.7))),
        },
        OpCase {
            name: "add_scalar",
            inputs: |r| vec![Tensor::randn([5], r)],
            build: |g, v| one_input(g, v, |g, x| Ok(g.add_scalar(x, 0.3))),
        },
        OpCase {
            name: "square",
            inputs: |r| vec![Tensor::randn([5], r)],
            build: |g, v| one_input(g, v, |g, x| Ok(g.square(x))),
        },
        OpCase {
            name: "exp",
            inputs: |r| vec![Tensor::randn([5], r)],
            build: |g, v| one_input(g, v, |g, x| Ok(g.exp(x))),
        },
        OpCase {
            name: "silu",
            inputs: |r| vec![Tensor::randn([2, 3, 3], r)],
            build: |g, v| one_input(g, v, |g, x| Ok(g.silu(x))),
        },
        OpCase {
            name: "smooth_abs",
            inputs: |r| vec![randn_avoiding(&[6], &[0.0], 0.05, r)],
            build: |g, v| one_input(g, v, |g, x| Ok(g.smooth_abs(x, 1e-6))),
        },
        OpCase {
            name: "clamp",
            inputs: |r| vec![randn_avoiding(&[6], &[-0.5, 0.5], 0.05, r)],
            build: |g, v| one_input(g, v, |g, x| Ok(g.clamp(x, -0.5, 0.5))),
        },
        OpCase {
            name: "sum",
            inputs: |r| vec![Tensor::randn([2, 3], r)],
            build: |g, v| {
                let s = g.sum(v[0]);
                let sq = g.square(s);
                Ok(g.sum(sq))
            },
        },
        OpCase {
            name: "mean",
            inputs: |r| vec![Tensor::randn([2, 3], r)],
            build: |g, v| {
                let s = g.mean(v[0]);
                let sq = g.square(s);
                Ok(g.sum(sq))
            },
        },
        OpCase {
            name: "slice_channels",
            inputs: |r| vec![Tensor::randn([4, 2, 2], r)],
            build: |g, v| one_input(g, v, |g, x| g.slice_channels(x, 1, 2)),
        },
        OpCase {
            name: "reshape",
            inputs: |r| vec![Tensor::randn([2, 3, 2], r)],
            build: |g, v| one_input(g, v, |g, x| g.reshape(x, &[3, 4])),
        },
        OpCase {
            name: "repeat_channels",
            inputs: |r| vec![Tensor::randn([2, 3, 3], r)],
            build: |g, v| one_input(g, v, |g, x| g.repeat_channels(x, 4)),
        },
        OpCase {
            name: "pixel_shuffle",
            inputs: |r| vec![Tensor::randn([8, 2, 3], r)],
            build: |g, v| one_input(g, v, |g, x| g.pixel_shuffle(x, 2)),
        },
        OpCase {
            name: "pixel_unshuffle",
            inputs: |r| vec![Tensor::randn([2, 4, 6], r)],
            build: |g, v| one_input(g, v, |g, x| g.pixel_unshuffle(x, 2)),
        },
        OpCase {
            name: "interpolate_nearest",
            inputs: |r| vec![Tensor::randn([2, 3, 4], r)],
            build: |g, v| {
                one_input(g, v, |g, x| {
                    g.interpolate_upsample(x, 2, InterpMode::Nearest)
                })
            },
        },
        OpCase {
            name: "interpolate_bilinear",
            inputs: |r| vec![Tensor::randn([2, 3, 4], r)],
            build: |g, v| {
                one_input(g, v, |g, x| {
                    g.interpolate_upsample(x, 2, InterpMode::Bilinear)
                })
            },
        },
        OpCase {
            name: "interpolate_bicubic",
            inputs: |r| vec![Tensor::randn([2, 4, 3], r)],
            build: |g, v| {
                one_input(g, v, |g, x| {
                    g.interpolate_upsample(x, 3, InterpMode::Bicubic)
                })
            },
        },
        OpCase {
            name: "matmul",
            inputs: |r| vec![Tensor::randn([3, 4], r), Tensor::randn([4, 2], r)],
            build: |g, v| {
                let y = g.matmul(v[0], v[1])?;
                project(g, y)
            },
        },
        OpCase {
            name: "gaussian_kl",
            inputs: |r| vec![Tensor::randn([2, 3], r), Tensor::randn([2, 3], r)],
            build: |g, v| g.gaussian_kl(v[0], v[1]),
        },
        OpCase {
            name: "diff_h",
            inputs: |r| vec![Tensor::randn([2, 4, 3], r)],
            build: |g, v| one_input(g, v, |g, x| g.diff(x, 1)),
        },
        OpCase {
            name: "diff_w",
            inputs: |r| vec![Tensor::randn([2, 4, 3], r)],
            build: |g, v| one_input(g, v, |g, x| g.diff(x, 2)),
        },
        OpCase {
            name: "pad_replicate",
            inputs: |r| vec![Tensor::randn([2, 3, 4], r)],
            build: |g, v| one_input(g, v, |g, x| g.pad_replicate(x, 2)),
        },
    ]
}

/// Worst relative error of `case` over `instances` random draws.
pub fn run_case(
    case: &OpCase,
    instances: usize,
    seed: u64,
    eps: f64,
    floor: f64,
) -> Result<GradCheck> {
    let mut rng = Rng::new(seed);
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for _ in 0..instances {
        let inputs = (case.inputs)(&mut rng);
        let r = check_gradients(&inputs, eps, floor, case.build)?;
        worst.checked += r.checked;
        if r.max_rel_err >= worst.max_rel_err {
            worst.max_rel_err = r.max_rel_err;
            worst.worst = r.worst;
        }
    }
    Ok(worst)
}
