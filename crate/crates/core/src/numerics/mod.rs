//! Dense tensors, layer kernels and the linear-algebra core.

mod layers;
mod linalg;
mod loss;
mod tensor;

use thiserror::Error;

pub use layers::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool2d, maxpool2d_backward, relu,
    relu_backward, upsample_nearest, upsample_nearest_backward, window_extent, ConvGeometry,
    ConvGrads, FcGrads,
};
pub use linalg::{matmul, rank_project, svd, svd_warm, SvdResult, JACOBI_MAX_SWEEPS, JACOBI_TOL};
pub use loss::{mse_loss, softmax, softmax_xent};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("svd did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new(vec![1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d_forward(&x, &k, &[0.0], ConvGeometry { stride: 1, pad: 0 }).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_all_ones() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &k, &[0.0], ConvGeometry { stride: 1, pad: 0 }).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_zero_kernel_gives_bias() {
        let x = Tensor::new(
            vec![2, 3, 6, 5],
            (0..180).map(|i| (i as f64).sin()).collect(),
        )
        .unwrap();
        let k = Tensor::zeros(&[4, 3, 3, 3]);
        let y = conv2d_forward(
            &x,
            &k,
            &[0.5, -1.0, 2.0, 0.0],
            ConvGeometry { stride: 2, pad: 1 },
        )
        .unwrap();
        assert_eq!(y.shape(), &[2, 4, 3, 3]);
        for (i, v) in y.data().iter().enumerate() {
            let f = (i / 9) % 4;
            assert_eq!(*v, [0.5, -1.0, 2.0, 0.0][f]);
        }
    }

    #[test]
    fn conv_output_extent_formula() {
        let x = Tensor::zeros(&[1, 1, 105, 105]);
        let k = Tensor::zeros(&[2, 1, 5, 5]);
        let y = conv2d_forward(&x, &k, &[0.0, 0.0], ConvGeometry { stride: 2, pad: 0 }).unwrap();
        assert_eq!(y.shape(), &[1, 2, 51, 51]);
        let too_big = Tensor::zeros(&[1, 1, 7, 7]);
        assert!(conv2d_forward(
            &Tensor::zeros(&[1, 1, 5, 5]),
            &too_big,
            &[0.0],
            ConvGeometry { stride: 1, pad: 0 }
        )
        .is_err());
    }

    #[test]
    fn conv_backward_trivial_cases() {
        let geo = ConvGeometry { stride: 1, pad: 0 };
        let x = Tensor::new(vec![1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let go = Tensor::new(vec![1, 1, 3, 3], (0..9).map(|i| i as f64 * 0.5).collect()).unwrap();
        let g = conv2d_backward(&go, &x, &k, geo).unwrap();
        assert_eq!(g.input, go);
        let g0 = conv2d_backward(&Tensor::zeros(&[1, 1, 3, 3]), &x, &k, geo).unwrap();
        assert!(g0
            .input
            .data()
            .iter()
            .chain(g0.kernel.data())
            .chain(&g0.bias)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn maxpool_basics() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
        let c = Tensor::full(&[1, 2, 4, 4], 0.7);
        let (y, idx) = maxpool2d(&c, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
        // ties resolve to the first element of each window
        assert_eq!(&idx[..4], &[0, 2, 8, 10]);
        let g = maxpool2d_backward(&Tensor::full(&[1, 2, 2, 2], 1.0), &idx, c.shape()).unwrap();
        assert_eq!(g.data().iter().sum::<f64>(), 8.0);
        assert_eq!(g.data()[0], 1.0);
        assert_eq!(g.data()[1], 0.0);
    }

    #[test]
    fn relu_values_and_mask() {
        let x = Tensor::new(vec![1, 3], vec![-1.0, 2.0, 0.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0, 0.0]);
        let g = relu_backward(&Tensor::full(&[1, 3], 5.0), &x).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0, 0.0]);
    }

    #[test]
    fn fc_identity_and_bias() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = fc_forward(&x, &Tensor::identity(3), &[0.0; 3]).unwrap();
        assert_eq!(y, x);
        let y0 = fc_forward(
            &Tensor::zeros(&[2, 3]),
            &Tensor::identity(3),
            &[1.0, 2.0, 3.0],
        )
        .unwrap();
        assert_eq!(y0.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn fc_flattens_trailing_axes() {
        let x = Tensor::full(&[2, 2, 2, 2], 1.0);
        let w = Tensor::full(&[8, 3], 0.5);
        let y = fc_forward(&x, &w, &[0.0; 3]).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| v == 4.0));
        let g = fc_backward(&Tensor::full(&[2, 3], 1.0), &x, &w).unwrap();
        assert_eq!(g.input.shape(), x.shape());
    }

    #[test]
    fn upsample_roundtrip_mass() {
        let x = Tensor::new(vec![1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = upsample_nearest(&x, 4, 6).unwrap();
        assert_eq!(&y.data()[..6], &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let g = upsample_nearest_backward(&Tensor::full(&[1, 1, 4, 6], 1.0), x.shape()).unwrap();
        assert!(g.data().iter().all(|&v| v == 4.0));
        let same = upsample_nearest(&x, 2, 3).unwrap();
        assert_eq!(same, x);
    }
}
