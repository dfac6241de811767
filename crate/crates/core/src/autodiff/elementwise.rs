use super::graph::{BinaryKind, Graph, Op, UnaryKind, Var};
use super::tensor::{broadcast_shape, reduce_broadcast, Layout, Real, Tensor};
use crate::error::Result;

#[inline]
fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

impl<R: Real> Graph<R> {
    fn binary(&mut self, kind: BinaryKind, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(name, &sa, &sb)?;
        let la = Layout::of(&sa, &out_shape);
        let lb = Layout::of(&sb, &out_shape);
        let n: usize = out_shape.iter().product();
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let f = |x: R, y: R| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let out: Vec<R> = match (&la, &lb) {
            (Layout::Same, Layout::Same) => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            (Layout::Same, Layout::Suffix(len)) => va
                .chunks_exact(*len)
                .flat_map(|chunk| chunk.iter().zip(vb).map(|(&x, &y)| f(x, y)))
                .collect(),
            _ => (0..n).map(|i| f(va[la.index(i)], vb[lb.index(i)])).collect(),
        };
        let value = Tensor::new(&out_shape, out)?;
        self.push(value, Op::Binary { kind, a, b, la, lb })
    }

    /// Elementwise sum with numpy broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, "mul", a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, "div", a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var, s: f64) -> Result<Var> {
        let src = self.value(a);
        let sr = R::from_f64(s);
        let ln10 = R::from_f64(std::f64::consts::LN_10);
        let data: Vec<R> = src
            .data()
            .iter()
            .map(|&x| match kind {
                UnaryKind::AddScalar => x + sr,
                UnaryKind::MulScalar(c) => x * R::from_f64(c),
                UnaryKind::Pow(p) => x.powf(R::from_f64(p)),
                UnaryKind::Silu => x * sigmoid(x),
                UnaryKind::Log10 => x.ln() / ln10,
                UnaryKind::Clamp(lo, hi) => x.max(R::from_f64(lo)).min(R::from_f64(hi)),
            })
            .collect();
        let value = Tensor::new(src.shape(), data)?;
        self.push(value, Op::Unary { kind, a })
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(UnaryKind::AddScalar, a, s)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(UnaryKind::MulScalar(s), a, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.mul_scalar(a, -1.0)
    }

    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(UnaryKind::Pow(p), a, 0.0)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Silu, a, 0.0)
    }

    pub fn log10(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log10, a, 0.0)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(UnaryKind::Clamp(lo, hi), a, 0.0)
    }
}

pub(crate) fn binary_backward<R: Real>(
    g: &Graph<R>,
    kind: BinaryKind,
    a: Var,
    b: Var,
    la: &Layout,
    lb: &Layout,
    grad: &[R],
) -> Vec<(Var, Vec<R>)> {
    let (va, vb) = (g.value(a).data(), g.value(b).data());
    let mut out = Vec::with_capacity(2);
    let n = grad.len();
    if g.requires_grad(a) {
        let ga: Vec<R> = match kind {
            BinaryKind::Add | BinaryKind::Sub => grad.to_vec(),
            BinaryKind::Mul => (0..n).map(|i| grad[i] * vb[lb.index(i)]).collect(),
            BinaryKind::Div => (0..n).map(|i| grad[i] / vb[lb.index(i)]).collect(),
        };
        out.push((a, reduce_broadcast(&ga, la, va.len())));
    }
    if g.requires_grad(b) {
        let gb: Vec<R> = match kind {
            BinaryKind::Add => grad.to_vec(),
            BinaryKind::Sub => grad.iter().map(|&v| -v).collect(),
            BinaryKind::Mul => (0..n).map(|i| grad[i] * va[la.index(i)]).collect(),
            BinaryKind::Div => (0..n)
                .map(|i| {
                    let y = vb[lb.index(i)];
                    -grad[i] * va[la.index(i)] / (y * y)
                })
                .collect(),
        };
        out.push((b, reduce_broadcast(&gb, lb, vb.len())));
    }
    out
}

pub(crate) fn unary_backward<R: Real>(
    g: &Graph<R>,
    kind: UnaryKind,
    a: Var,
    grad: &[R],
) -> Vec<R> {
    let x = g.value(a).data();
    let ln10 = R::from_f64(std::f64::consts::LN_10);
    grad.iter()
        .zip(x)
        .map(|(&gr, &x)| match kind {
            UnaryKind::AddScalar => gr,
            UnaryKind::MulScalar(c) => gr * R::from_f64(c),
            UnaryKind::Pow(p) => gr * R::from_f64(p) * x.powf(R::from_f64(p - 1.0)),
            UnaryKind::Silu => {
                let s = sigmoid(x);
                gr * s * (R::one() + x * (R::one() - s))
            }
            UnaryKind::Log10 => gr / (x * ln10),
            UnaryKind::Clamp(lo, hi) => {
                if x >= R::from_f64(lo) && x <= R::from_f64(hi) {
                    gr
                } else {
                    R::zero()
                }
            }
        })
        .collect()
}
