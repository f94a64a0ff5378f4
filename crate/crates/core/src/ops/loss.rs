use crate::cost::{self, formulas};
use crate::error::{Error, Result};
use crate::scalar::{total, Scalar};
use crate::tensor::Tensor;

/// Label value excluded from the cross-entropy mean.
pub const IGNORE_INDEX: u32 = 255;

/// Integer class map of shape `H×W`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u32>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        if h * w != data.len() || h == 0 || w == 0 {
            return Err(Error::Argument(format!(
                "label map {h}x{w} needs {} entries, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(Self { h, w, data })
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&l| l != IGNORE_INDEX).count()
    }

    /// Reads labels from a float tensor of shape `[H, W]` or `[1, H, W]`
    /// whose values are integers.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = match t.shape() {
            &[h, w] | &[1, h, w] => (h, w),
            s => return Err(Error::Input(format!("label tensor must be HxW, got {s:?}"))),
        };
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = v.as_f64();
                if f.fract() != 0.0 || !(0.0..=u32::MAX as f64).contains(&f) {
                    Err(Error::Input(format!("label {i} is not a class index: {f}")))
                } else {
                    Ok(f as u32)
                }
            })
            .collect::<Result<_>>()?;
        Self::new(h, w, data)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(
            vec![self.h, self.w],
            self.data.iter().map(|&l| T::cast(l as f64)).collect(),
        )
    }
}

fn spatial(op: &'static str, x: &[usize]) -> Result<(usize, usize)> {
    match x {
        &[k, h, w] => Ok((k, h * w)),
        s => Err(Error::dim(op, format!("expected [K, H, W], got {s:?}"))),
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    spatial(op, a.shape())
}

/// Per-position log-softmax over the channel axis, stored `[K, P]`.
fn log_softmax_channels<T: Scalar>(x: &Tensor<T>, k: usize, p: usize) -> Vec<T> {
    let xs = x.data();
    let mut out = vec![T::zero(); k * p];
    for pos in 0..p {
        let m = (0..k).map(|c| xs[c * p + pos]).fold(T::neg_infinity(), T::max);
        let z: T = total((0..k).map(|c| (xs[c * p + pos] - m).exp()));
        let lz = m + z.ln();
        for c in 0..k {
            out[c * p + pos] = xs[c * p + pos] - lz;
        }
    }
    out
}

/// Mean `−log softmax(logits)[label]` over non-ignored positions, plus the
/// number of positions that contributed. Zero when every label is ignored.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &LabelMap) -> Result<(T, usize)> {
    let (k, p) = spatial("cross_entropy", logits.shape())?;
    if labels.data.len() != p || logits.shape()[1..] != [labels.h, labels.w] {
        return Err(Error::dim(
            "cross_entropy",
            format!(
                "logits {:?} vs labels {}x{}",
                logits.shape(),
                labels.h,
                labels.w
            ),
        ));
    }
    if let Some(bad) = labels
        .data
        .iter()
        .find(|&&l| l != IGNORE_INDEX && l as usize >= k)
    {
        return Err(Error::Argument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    cost::record(formulas::transcendental(logits.len()));
    let ls = log_softmax_channels(logits, k, p);
    let mut total = T::zero();
    let mut n = 0;
    for (pos, &l) in labels.data.iter().enumerate() {
        if l != IGNORE_INDEX {
            total -= ls[l as usize * p + pos];
            n += 1;
        }
    }
    Ok((if n == 0 { T::zero() } else { total / T::from_count(n) }, n))
}

/// `(softmax − onehot)/n` at valid positions, zero elsewhere.
pub fn cross_entropy_backward<T: Scalar>(logits: &Tensor<T>, labels: &LabelMap, grad: T) -> Tensor<T> {
    let (k, p) = (logits.shape()[0], labels.data.len());
    let n = labels.valid_count();
    let mut out = vec![T::zero(); k * p];
    if n > 0 {
        let ls = log_softmax_channels(logits, k, p);
        let s = grad / T::from_count(n);
        for (pos, &l) in labels.data.iter().enumerate() {
            if l == IGNORE_INDEX {
                continue;
            }
            for c in 0..k {
                let prob = ls[c * p + pos].exp();
                let onehot = if c == l as usize { T::one() } else { T::zero() };
                out[c * p + pos] = (prob - onehot) * s;
            }
        }
    }
    Tensor::from_parts(logits.shape().to_vec(), out)
}

/// Mean over positions of `KL(softmax(teacher) ‖ softmax(student))`.
pub fn kl_divergence<T: Scalar>(student: &Tensor<T>, teacher: &Tensor<T>) -> Result<T> {
    let (k, p) = same_shape("kl_divergence", student, teacher)?;
    cost::record(2 * formulas::transcendental(student.len()));
    let (ls, lt) = (
        log_softmax_channels(student, k, p),
        log_softmax_channels(teacher, k, p),
    );
    let kl: T = total(ls.iter().zip(&lt).map(|(&s, &t)| t.exp() * (t - s)));
    Ok(kl / T::from_count(p))
}

/// Gradients with respect to `(student, teacher)` logits.
pub fn kl_divergence_backward<T: Scalar>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    grad: T,
) -> (Tensor<T>, Tensor<T>) {
    let (k, p) = (student.shape()[0], student.len() / student.shape()[0]);
    let (ls, lt) = (
        log_softmax_channels(student, k, p),
        log_softmax_channels(teacher, k, p),
    );
    let s = grad / T::from_count(p);
    let mut ds = vec![T::zero(); k * p];
    let mut dt = vec![T::zero(); k * p];
    for pos in 0..p {
        let at = |c: usize| c * p + pos;
        let kl: T = total((0..k).map(|c| lt[at(c)].exp() * (lt[at(c)] - ls[at(c)])));
        for c in 0..k {
            let pt = lt[at(c)].exp();
            ds[at(c)] = (ls[at(c)].exp() - pt) * s;
            dt[at(c)] = pt * (lt[at(c)] - ls[at(c)] - kl) * s;
        }
    }
    (
        Tensor::from_parts(student.shape().to_vec(), ds),
        Tensor::from_parts(teacher.shape().to_vec(), dt),
    )
}

struct CosTerms<T> {
    dot: T,
    na2: T,
    nb2: T,
}

impl<T: Scalar> CosTerms<T> {
    fn degenerate(&self) -> bool {
        self.na2 == T::zero() || self.nb2 == T::zero()
    }

    /// Single square root of the product, so `cos(a, a)` is exactly 1.
    fn cos(&self) -> T {
        self.dot / (self.na2 * self.nb2).sqrt()
    }

    fn inv_norm(&self) -> T {
        T::one() / (self.na2 * self.nb2).sqrt()
    }
}

fn cos_terms<T: Scalar>(a: &[T], b: &[T], c: usize, p: usize, pos: usize) -> CosTerms<T> {
    let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
    for ch in 0..c {
        let (x, y) = (a[ch * p + pos], b[ch * p + pos]);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    CosTerms {
        dot,
        na2: na,
        nb2: nb,
    }
}

/// Mean over positions of `−cos(a[·,h,w], b[·,h,w])`. A position where either
/// vector has zero norm contributes 0.
pub fn neg_cosine<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    let (c, p) = same_shape("neg_cosine", a, b)?;
    cost::record(3 * formulas::elementwise(a.len()));
    let mut total = T::zero();
    for pos in 0..p {
        let t = cos_terms(a.data(), b.data(), c, p, pos);
        if !t.degenerate() {
            total -= t.cos();
        }
    }
    Ok(total / T::from_count(p))
}

pub fn neg_cosine_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, grad: T) -> (Tensor<T>, Tensor<T>) {
    let (c, p) = (a.shape()[0], a.len() / a.shape()[0]);
    let (av, bv) = (a.data(), b.data());
    let s = grad / T::from_count(p);
    let mut da = vec![T::zero(); a.len()];
    let mut db = vec![T::zero(); b.len()];
    for pos in 0..p {
        let t = cos_terms(av, bv, c, p, pos);
        if t.degenerate() {
            continue;
        }
        let inv = t.inv_norm();
        let cos = t.cos();
        for ch in 0..c {
            let i = ch * p + pos;
            da[i] = -s * (bv[i] * inv - cos * av[i] / t.na2);
            db[i] = -s * (av[i] * inv - cos * bv[i] / t.nb2);
        }
    }
    (
        Tensor::from_parts(a.shape().to_vec(), da),
        Tensor::from_parts(b.shape().to_vec(), db),
    )
}
