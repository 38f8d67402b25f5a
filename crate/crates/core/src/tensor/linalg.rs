use super::{Element, Tensor};
use crate::error::{Error, Result};

/// c[m,n] += a[m,k] * b[k,n]
fn mm_nn<F: Element>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m,k] += g[m,n] * b[k,n]^T
fn mm_nt<F: Element>(g: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = F::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * k + p] += acc;
        }
    }
}

/// c[k,n] += a[m,k]^T * g[m,n]
fn mm_tn<F: Element>(a: &[F], g: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv += av * gv;
            }
        }
    }
}

impl<F: Element> Tensor<F> {
    /// Matrix product. `self` may carry leading batch axes, which are folded
    /// into rows: `[.., m, k] x [k, n] -> [.., m, n]`.
    pub fn matmul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        if self.rank() < 2 || rhs.rank() != 2 {
            return Err(Error::dim(
                "matmul",
                format!("expected [.., m, k] x [k, n], got {:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let k = *self.shape().last().unwrap();
        let (k2, n) = (rhs.shape()[0], rhs.shape()[1]);
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner extents differ: {:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let m = self.numel() / k.max(1);
        let mut out = vec![F::zero(); m * n];
        mm_nn(&self.data(), &rhs.data(), &mut out, m, k, n);
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let (a, b) = (self.clone(), rhs.clone());
        Tensor::record("matmul", shape, out, &[self, rhs], move |g| {
            let ga = a.requires_grad().then(|| {
                let mut ga = vec![F::zero(); m * k];
                mm_nt(g, &b.data(), &mut ga, m, k, n);
                ga
            });
            let gb = b.requires_grad().then(|| {
                let mut gb = vec![F::zero(); k * n];
                mm_tn(&a.data(), g, &mut gb, m, k, n);
                gb
            });
            vec![ga, gb]
        })
    }

    /// Batched matrix product `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn bmm(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim("bmm", format!("incompatible shapes {sa:?} x {sb:?}")));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![F::zero(); batch * m * n];
        {
            let ad = self.data();
            let bd = rhs.data();
            for i in 0..batch {
                mm_nn(
                    &ad[i * m * k..(i + 1) * m * k],
                    &bd[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let (a, b) = (self.clone(), rhs.clone());
        Tensor::record("bmm", vec![batch, m, n], out, &[self, rhs], move |g| {
            let ad = a.data();
            let bd = b.data();
            let ga = a.requires_grad().then(|| {
                let mut ga = vec![F::zero(); batch * m * k];
                for i in 0..batch {
                    mm_nt(
                        &g[i * m * n..(i + 1) * m * n],
                        &bd[i * k * n..(i + 1) * k * n],
                        &mut ga[i * m * k..(i + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
                ga
            });
            let gb = b.requires_grad().then(|| {
                let mut gb = vec![F::zero(); batch * k * n];
                for i in 0..batch {
                    mm_tn(
                        &ad[i * m * k..(i + 1) * m * k],
                        &g[i * m * n..(i + 1) * m * n],
                        &mut gb[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                gb
            });
            vec![ga, gb]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_product() {
        let a = Tensor::<f32>::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2], vec![5., 6., 7., 8.]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![19., 22., 43., 50.]);
    }

    #[test]
    fn identity_left() {
        let eye = Tensor::<f32>::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let m: Vec<f32> = (0..9).map(|v| v as f32 * 0.5 - 1.0).collect();
        let mt = Tensor::from_vec(&[3, 3], m.clone()).unwrap();
        assert_eq!(eye.matmul(&mt).unwrap().to_vec(), m);
    }

    #[test]
    fn shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension { .. })));
        let c = Tensor::<f32>::zeros(&[2, 3, 4]);
        assert!(c.bmm(&Tensor::zeros(&[3, 4, 5])).is_err());
    }

    #[test]
    fn batched_rows_fold() {
        let a = Tensor::<f32>::from_vec(&[2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2], vec![5., 6., 7., 8.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 2]);
        assert_eq!(c.to_vec(), vec![19., 22., 43., 50.]);
    }
}
