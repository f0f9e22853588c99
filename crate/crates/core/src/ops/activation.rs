use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Exact `x·Φ(x)` with the Gaussian CDF.
    Gelu,
    Sigmoid,
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn gauss_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5) * (T::one() + (x * T::lit(FRAC_1_SQRT_2)).erf())
}

fn gauss_pdf<T: Scalar>(x: T) -> T {
    (-(x * x) * T::lit(0.5)).exp() / T::lit((2.0 * PI).sqrt())
}

impl Activation {
    pub fn eval<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Gelu => x * gauss_cdf(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at `x`, given the forward output `y`.
    pub(crate) fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Gelu => gauss_cdf(x) + x * gauss_pdf(x),
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub fn activation<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    input.map(|v| kind.eval(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetry_points() {
        assert_eq!(Activation::Gelu.eval(0.0f64), 0.0);
        assert_eq!(Activation::Relu.eval(-2.0f64), 0.0);
        assert_eq!(Activation::Sigmoid.eval(0.0f64), 0.5);
        let y = activation(&Tensor::<f32>::from_vec(vec![1.0, -1.0, 2.0]), Activation::Relu);
        assert_eq!(y.data(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn gelu_matches_quadrature_cdf() {
        // Φ(x) = 1/2 + ∫_0^x φ(t) dt by composite Simpson with 20k panels.
        fn phi_quad(x: f64) -> f64 {
            let n = 20_000;
            let h = x / n as f64;
            let f = |t: f64| (-(t * t) / 2.0).exp() / (2.0 * PI).sqrt();
            let mut s = f(0.0) + f(x);
            for i in 1..n {
                s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            0.5 + s * h / 3.0
        }
        for x in [-3.0, -1.0, 1.0, 3.0] {
            let expect = x * phi_quad(x);
            assert!((Activation::Gelu.eval(x) - expect).abs() <= 1e-6, "x={x}");
        }
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        assert_eq!(sigmoid(-1000.0f32), 0.0);
        assert_eq!(sigmoid(1000.0f32), 1.0);
    }
}
