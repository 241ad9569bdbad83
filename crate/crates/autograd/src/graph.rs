//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its value and a
//! closure that maps the output gradient to parent gradients. Nodes whose
//! parents do not require gradients keep no closure, so frozen sub-networks
//! cost nothing on the way back.

use std::cell::RefCell;
use std::sync::Arc;

use crate::conv::{self, ConvGeom};
use crate::{Real, Tensor};

type BackwardFn<R> = Box<dyn Fn(&Tensor<R>, &[bool]) -> Vec<Option<Tensor<R>>>>;

struct Node<R: Real> {
    value: Arc<Tensor<R>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<R>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Default)]
pub struct Graph<R: Real> {
    nodes: RefCell<Vec<Node<R>>>,
}

/// Gradients of a scalar with respect to every leaf that required them.
pub struct Gradients<R: Real> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<R>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn unary<R: Real>(gy: &Tensor<R>, f: impl Fn(usize, R) -> R) -> Tensor<R> {
    let data = gy.data().iter().enumerate().map(|(i, &g)| f(i, g)).collect();
    Tensor::from_vec(gy.shape(), data)
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Arc<Tensor<R>>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        });
        Var(nodes.len() - 1)
    }

    fn push_op(
        &self,
        value: Tensor<R>,
        parents: &[Var],
        backward: impl Fn(&Tensor<R>, &[bool]) -> Vec<Option<Tensor<R>>> + 'static,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.0].requires_grad);
        nodes.push(Node {
            value: Arc::new(value),
            requires_grad,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn<R>),
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, t: Tensor<R>) -> Var {
        self.push_leaf(Arc::new(t), false)
    }

    pub fn constant_arc(&self, t: Arc<Tensor<R>>) -> Var {
        self.push_leaf(t, false)
    }

    /// A leaf whose gradient is collected by [`Graph::backward`].
    pub fn param(&self, t: Tensor<R>) -> Var {
        self.push_leaf(Arc::new(t), true)
    }

    pub fn param_arc(&self, t: Arc<Tensor<R>>) -> Var {
        self.push_leaf(t, true)
    }

    pub fn value(&self, v: Var) -> Arc<Tensor<R>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> R {
        self.nodes.borrow()[v.0].value.item()
    }

    /// Backpropagates from a one-element root.
    pub fn backward(&self, root: Var) -> Gradients<R> {
        let shape = self.nodes.borrow()[root.0].value.shape().to_vec();
        assert_eq!(shape.iter().product::<usize>(), 1, "backward root must be a scalar, got {shape:?}");
        self.backward_from(root, Tensor::full(&shape, R::one()))
    }

    /// Backpropagates an explicit output gradient `seed` from `root`.
    pub fn backward_from(&self, root: Var, seed: Tensor<R>) -> Gradients<R> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.0].value.shape(), seed.shape(), "seed gradient shape");
        let mut grads: Vec<Option<Tensor<R>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[root.0].requires_grad {
            return Gradients { grads };
        }
        grads[root.0] = Some(seed);
        for id in (0..=root.0).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(gy) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&gy, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, need), g) in node.parents.iter().zip(&needs).zip(parent_grads) {
                if !need {
                    continue;
                }
                let Some(g) = g else { continue };
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Gradients { grads }
    }

    // ----- element-wise -----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.zip_map(&vb, |x, y| x + y);
        self.push_op(out, &[a, b], |gy, _| vec![Some(gy.clone()), Some(gy.clone())])
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.zip_map(&vb, |x, y| x - y);
        self.push_op(out, &[a, b], |gy, need| {
            vec![Some(gy.clone()), need[1].then(|| gy.map(|g| -g))]
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.zip_map(&vb, |x, y| x * y);
        self.push_op(out, &[a, b], move |gy, need| {
            vec![
                need[0].then(|| gy.zip_map(&vb, |g, y| g * y)),
                need[1].then(|| gy.zip_map(&va, |g, x| g * x)),
            ]
        })
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.zip_map(&vb, |x, y| x / y);
        let q = Arc::new(out.clone());
        self.push_op(out, &[a, b], move |gy, need| {
            vec![
                need[0].then(|| gy.zip_map(&vb, |g, y| g / y)),
                need[1].then(|| {
                    let t = gy.zip_map(&q, |g, q| g * q);
                    t.zip_map(&vb, |t, y| -t / y)
                }),
            ]
        })
    }

    pub fn square(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.map(|x| x * x);
        self.push_op(out, &[a], move |gy, _| {
            let two = R::lit(2.0);
            vec![Some(gy.zip_map(&va, |g, x| two * g * x))]
        })
    }

    pub fn add_scalar(&self, a: Var, s: R) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push_op(out, &[a], |gy, _| vec![Some(gy.clone())])
    }

    pub fn mul_scalar(&self, a: Var, s: R) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push_op(out, &[a], move |gy, _| vec![Some(gy.scale(s))])
    }

    /// `a^p` for non-negative `a`; the gradient at zero is taken as zero.
    pub fn pow_scalar(&self, a: Var, p: R) -> Var {
        let va = self.value(a);
        let out = va.map(|x| x.powf(p));
        self.push_op(out, &[a], move |gy, _| {
            vec![Some(gy.zip_map(&va, |g, x| {
                if x > R::zero() {
                    g * p * x.powf(p - R::one())
                } else {
                    R::zero()
                }
            }))]
        })
    }

    pub fn clamp(&self, a: Var, lo: R, hi: R) -> Var {
        let va = self.value(a);
        let out = va.map(|x| x.max(lo).min(hi));
        self.push_op(out, &[a], move |gy, _| {
            vec![Some(gy.zip_map(&va, |g, x| if x >= lo && x <= hi { g } else { R::zero() }))]
        })
    }

    pub fn clamp_min(&self, a: Var, lo: R) -> Var {
        self.clamp(a, lo, R::infinity())
    }

    pub fn leaky_relu(&self, a: Var, slope: R) -> Var {
        let va = self.value(a);
        let out = va.map(|x| if x > R::zero() { x } else { slope * x });
        self.push_op(out, &[a], move |gy, _| {
            vec![Some(gy.zip_map(&va, |g, x| if x > R::zero() { g } else { slope * g }))]
        })
    }

    pub fn relu(&self, a: Var) -> Var {
        self.leaky_relu(a, R::zero())
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let y = Arc::new(out.clone());
        self.push_op(out, &[a], move |gy, _| {
            vec![Some(gy.zip_map(&y, |g, y| g * (R::one() - y * y)))]
        })
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let va = self.value(a);
        let in_shape = va.shape().to_vec();
        let out = (*va).clone().reshape(shape);
        self.push_op(out, &[a], move |gy, _| vec![Some(gy.clone().reshape(&in_shape))])
    }

    // ----- reductions -----

    pub fn sum_all(&self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let out = Tensor::scalar(va.sum());
        self.push_op(out, &[a], move |gy, _| vec![Some(Tensor::full(&shape, gy.item()))])
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = R::lit(self.value(a).numel() as f64);
        let s = self.sum_all(a);
        self.mul_scalar(s, R::one() / n)
    }

    /// `[n, c, h, w] -> [n, c]` spatial mean.
    pub fn spatial_mean(&self, a: Var) -> Var {
        let va = self.value(a);
        let (n, c, h, w) = va.dims4();
        let plane = h * w;
        let inv = R::one() / R::lit(plane as f64);
        let data = va.data().chunks(plane).map(|p| p.iter().copied().sum::<R>() * inv).collect();
        let out = Tensor::from_vec(&[n, c], data);
        self.push_op(out, &[a], move |gy, _| {
            let mut g = Tensor::zeros(&[n, c, h, w]);
            for (chunk, &v) in g.data_mut().chunks_mut(plane).zip(gy.data()) {
                chunk.fill(v * inv);
            }
            vec![Some(g)]
        })
    }

    /// `[n, k] -> [n]` row sums.
    pub fn sum_cols(&self, a: Var) -> Var {
        let va = self.value(a);
        let (n, k) = va.dims2();
        let data = va.data().chunks(k).map(|r| r.iter().copied().sum()).collect();
        let out = Tensor::from_vec(&[n], data);
        self.push_op(out, &[a], move |gy, _| {
            let data = gy.data().iter().flat_map(|&g| std::iter::repeat_n(g, k)).collect();
            vec![Some(Tensor::from_vec(&[n, k], data))]
        })
    }

    pub fn mean_cols(&self, a: Var) -> Var {
        let k = self.value(a).dims2().1;
        let s = self.sum_cols(a);
        self.mul_scalar(s, R::one() / R::lit(k as f64))
    }

    /// Per-column affine map `x[:, j] * scale[j] + shift[j]` on a `[n, k]` tensor.
    pub fn affine_cols(&self, a: Var, scale: &[R], shift: &[R]) -> Var {
        let va = self.value(a);
        let (_, k) = va.dims2();
        assert!(scale.len() == k && shift.len() == k);
        let scale = scale.to_vec();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * scale[i % k] + shift[i % k])
            .collect();
        let out = Tensor::from_vec(va.shape(), data);
        self.push_op(out, &[a], move |gy, _| vec![Some(unary(gy, |i, g| g * scale[i % k]))])
    }

    // ----- layers -----

    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, g: ConvGeom) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        let vb = b.map(|b| self.value(b));
        let out = conv::conv2d(&vx, &vw, vb.as_deref(), g);
        let (_, _, h, wd) = vx.dims4();
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push_op(out, &parents, move |gy, need| {
            let mut grads = vec![
                need[0].then(|| conv::conv2d_input_grad(gy, &vw, g, (h, wd))),
                need[1].then(|| conv::conv2d_weight_grad(&vx, gy, g)),
            ];
            if need.len() > 2 {
                grads.push(need[2].then(|| conv::channel_sum(gy)));
            }
            grads
        })
    }

    /// Transposed convolution with `w: [ci, co, k, k]`.
    pub fn conv_transpose2d(&self, x: Var, w: Var, b: Option<Var>, g: ConvGeom, out_hw: (usize, usize)) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        let vb = b.map(|b| self.value(b));
        let out = conv::conv_transpose2d(&vx, &vw, vb.as_deref(), g, out_hw);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push_op(out, &parents, move |gy, need| {
            let mut grads = vec![
                need[0].then(|| conv::conv2d(gy, &vw, None, g)),
                need[1].then(|| conv::conv2d_weight_grad(gy, &vx, g)),
            ];
            if need.len() > 2 {
                grads.push(need[2].then(|| conv::channel_sum(gy)));
            }
            grads
        })
    }

    /// `x: [n, f]`, `w: [o, f]`, `b: [o]` -> `[n, o]`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (n, f) = vx.dims2();
        let (o, wf) = vw.dims2();
        assert_eq!(f, wf, "linear feature mismatch");
        let mut out = Tensor::zeros(&[n, o]);
        for row in out.data_mut().chunks_mut(o) {
            row.copy_from_slice(vb.data());
        }
        R::gemm(n, f, o, R::one(), vx.data(), (f as isize, 1), vw.data(), (1, f as isize), R::one(), out.data_mut(), (o as isize, 1));
        self.push_op(out, &[x, w, b], move |gy, need| {
            let gx = need[0].then(|| {
                let mut gx = Tensor::zeros(&[n, f]);
                R::gemm(n, o, f, R::one(), gy.data(), (o as isize, 1), vw.data(), (f as isize, 1), R::zero(), gx.data_mut(), (f as isize, 1));
                gx
            });
            let gw = need[1].then(|| {
                let mut gw = Tensor::zeros(&[o, f]);
                R::gemm(o, n, f, R::one(), gy.data(), (1, o as isize), vx.data(), (f as isize, 1), R::zero(), gw.data_mut(), (f as isize, 1));
                gw
            });
            let gb = need[2].then(|| {
                let mut gb = vec![R::zero(); o];
                for row in gy.data().chunks(o) {
                    for (acc, &g) in gb.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                Tensor::from_vec(&[o], gb)
            });
            vec![gx, gw, gb]
        })
    }

    /// Per-sample, per-channel normalization without affine parameters.
    pub fn instance_norm(&self, x: Var, eps: R) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = vx.dims4();
        let plane = h * w;
        let pn = R::lit(plane as f64);
        let mut out = Tensor::zeros(&[n, c, h, w]);
        let mut inv_std = vec![R::zero(); n * c];
        for (p, (src, dst)) in vx.data().chunks(plane).zip(out.data_mut().chunks_mut(plane)).enumerate() {
            let mean = src.iter().copied().sum::<R>() / pn;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / pn;
            let is = R::one() / (var + eps).sqrt();
            inv_std[p] = is;
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * is;
            }
        }
        let y = Arc::new(out.clone());
        self.push_op(out, &[x], move |gy, _| {
            let mut gx = Tensor::zeros(&[n, c, h, w]);
            for (p, ((g, yv), dst)) in gy
                .data()
                .chunks(plane)
                .zip(y.data().chunks(plane))
                .zip(gx.data_mut().chunks_mut(plane))
                .enumerate()
            {
                let mean_g = g.iter().copied().sum::<R>() / pn;
                let mean_gy = g.iter().zip(yv).map(|(&a, &b)| a * b).sum::<R>() / pn;
                for ((d, &gi), &yi) in dst.iter_mut().zip(g).zip(yv) {
                    *d = inv_std[p] * (gi - mean_g - yi * mean_gy);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Concatenates two NCHW tensors along channels.
    pub fn concat_channels(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (n, ca, h, w) = va.dims4();
        let (nb, cb, hb, wb) = vb.dims4();
        assert!(n == nb && h == hb && w == wb, "concat_channels shape mismatch");
        let (pa, pb) = (ca * h * w, cb * h * w);
        let mut data = Vec::with_capacity(n * (pa + pb));
        for s in 0..n {
            data.extend_from_slice(&va.data()[s * pa..(s + 1) * pa]);
            data.extend_from_slice(&vb.data()[s * pb..(s + 1) * pb]);
        }
        let out = Tensor::from_vec(&[n, ca + cb, h, w], data);
        self.push_op(out, &[a, b], move |gy, need| {
            let split = |first: bool| {
                let (off, len, ch) = if first { (0, pa, ca) } else { (pa, pb, cb) };
                let mut d = Vec::with_capacity(n * len);
                for s in 0..n {
                    let base = s * (pa + pb) + off;
                    d.extend_from_slice(&gy.data()[base..base + len]);
                }
                Tensor::from_vec(&[n, ch, h, w], d)
            };
            vec![need[0].then(|| split(true)), need[1].then(|| split(false))]
        })
    }

    /// Concatenates along the leading (batch) dimension.
    pub fn concat_batch(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor::stack_batch(&[(*va).clone(), (*vb).clone()]);
        let split = va.numel();
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        self.push_op(out, &[a, b], move |gy, need| {
            vec![
                need[0].then(|| Tensor::from_vec(&sa, gy.data()[..split].to_vec())),
                need[1].then(|| Tensor::from_vec(&sb, gy.data()[split..].to_vec())),
            ]
        })
    }

    /// Items `start..end` of the leading (batch) dimension.
    pub fn slice_batch(&self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        assert!(start < end && end <= shape[0], "batch slice {start}..{end} of {}", shape[0]);
        let per = va.numel() / shape[0];
        let mut out_shape = shape.clone();
        out_shape[0] = end - start;
        let out = Tensor::from_vec(&out_shape, va.data()[start * per..end * per].to_vec());
        self.push_op(out, &[a], move |gy, _| {
            let mut g = Tensor::zeros(&shape);
            g.data_mut()[start * per..end * per].copy_from_slice(gy.data());
            vec![Some(g)]
        })
    }

    /// Depthwise separable "valid" filtering with a fixed 1-D kernel.
    pub fn separable_filter(&self, x: Var, kernel: &[R]) -> Var {
        let vx = self.value(x);
        let (_, _, h, w) = vx.dims4();
        let out = conv::separable_valid(&vx, kernel);
        let kernel = kernel.to_vec();
        self.push_op(out, &[x], move |gy, _| vec![Some(conv::separable_valid_adjoint(gy, &kernel, (h, w)))])
    }

    pub fn upsample_nearest2(&self, x: Var) -> Var {
        let out = conv::upsample_nearest2(&self.value(x));
        self.push_op(out, &[x], |gy, _| vec![Some(conv::upsample_nearest2_adjoint(gy))])
    }

    pub fn binomial_blur(&self, x: Var) -> Var {
        let out = conv::binomial_blur(&self.value(x));
        self.push_op(out, &[x], |gy, _| vec![Some(conv::binomial_blur(gy))])
    }

    pub fn avg_pool2(&self, x: Var) -> Var {
        let vx = self.value(x);
        let (_, _, h, w) = vx.dims4();
        let out = conv::avg_pool2(&vx);
        self.push_op(out, &[x], move |gy, _| vec![Some(conv::avg_pool2_adjoint(gy, (h, w)))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Compares the tape gradient of `f` w.r.t. its input against central differences.
    fn check(shape: &[usize], seed: u64, f: impl Fn(&Graph<f64>, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random(shape, &mut rng);
        let g = Graph::new();
        let x = g.param(x0.clone());
        let y = f(&g, x);
        let grads = g.backward(y);
        let analytic = grads.get(x).unwrap().clone();
        let h = 1e-6;
        for i in 0..x0.numel() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[i] += delta;
                let g = Graph::new();
                let x = g.constant(xp);
                let y = f(&g, x);
                g.item(y)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (fd - a).abs() <= 1e-6 + 1e-5 * fd.abs().max(a.abs()),
                "element {i}: finite difference {fd}, analytic {a}"
            );
        }
    }

    #[test]
    fn elementwise_gradients() {
        check(&[2, 3], 1, |g, x| {
            let t = g.tanh(x);
            let s = g.square(t);
            let d = g.div(s, g.add_scalar(g.square(x), 1.5));
            let m = g.mul(d, x);
            g.sum_all(g.sub(m, g.mul_scalar(x, 0.3)))
        });
        check(&[6], 2, |g, x| {
            let p = g.pow_scalar(g.add_scalar(g.square(x), 0.1), 0.7);
            g.mean_all(g.leaky_relu(g.sub(p, x), 0.2))
        });
    }

    #[test]
    fn layer_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random(&[3, 2, 4, 4], &mut rng);
        let b = random(&[3], &mut rng);
        let wt = random(&[3, 2, 4, 4], &mut rng);
        check(&[2, 2, 6, 6], 3, move |g, x| {
            let w = g.constant(w.clone());
            let b = g.constant(b.clone());
            let y = g.conv2d(x, w, Some(b), ConvGeom::asymmetric(4, 1, 1, 2));
            let y = g.instance_norm(y, 1e-5);
            let up = g.conv_transpose2d(y, g.constant(wt.clone()), None, ConvGeom::new(4, 2, 1), (12, 12));
            let p = g.spatial_mean(g.square(up));
            g.sum_all(g.mul(p, p))
        });
        check(&[1, 2, 14, 13], 4, |g, x| {
            let k = [0.2, 0.5, 0.3];
            let y = g.separable_filter(x, &k);
            let y = g.avg_pool2(g.square(y));
            g.sum_all(y)
        });
        check(&[1, 2, 5, 7], 9, |g, x| {
            let y = g.upsample_nearest2(g.binomial_blur(x));
            g.sum_all(g.mul(y, g.tanh(y)))
        });
    }

    #[test]
    fn linear_concat_affine_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random(&[3, 5], &mut rng);
        let b = random(&[3], &mut rng);
        check(&[4, 5], 5, move |g, x| {
            let y = g.linear(x, g.constant(w.clone()), g.constant(b.clone()));
            let y = g.affine_cols(g.tanh(y), &[50.0, 127.5, 127.5], &[50.0, -0.5, -0.5]);
            g.mean_all(g.sum_cols(g.square(y)))
        });
        let other = random(&[2, 1, 3, 3], &mut rng);
        check(&[2, 2, 3, 3], 6, move |g, x| {
            let c = g.concat_channels(x, g.constant(other.clone()));
            let c = g.clamp(c, -0.5, 0.5);
            g.sum_all(g.mul(c, g.reshape(g.tanh(c), &[2, 3, 3, 3])))
        });
    }

    #[test]
    fn frozen_branches_get_no_gradient() {
        let g = Graph::<f64>::new();
        let a = g.param(Tensor::scalar(2.0));
        let c = g.constant(Tensor::scalar(3.0));
        let y = g.mul(a, c);
        let grads = g.backward(y);
        assert_eq!(grads.get(a).unwrap().item(), 3.0);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn shared_node_gradients_accumulate() {
        let g = Graph::<f64>::new();
        let a = g.param(Tensor::scalar(3.0));
        let y = g.add(g.mul(a, a), a);
        let grads = g.backward(y);
        assert_eq!(grads.get(a).unwrap().item(), 7.0);
    }
}
