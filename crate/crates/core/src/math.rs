//! Scalar math shim: inherent `f64` methods under `std`, `libm` otherwise.

macro_rules! shim {
    ($($name:ident => $libm:ident),* $(,)?) => {$(
        #[cfg(feature = "std")]
        #[inline]
        pub(crate) fn $name(x: f64) -> f64 {
            f64::$name(x)
        }
        #[cfg(not(feature = "std"))]
        #[inline]
        pub(crate) fn $name(x: f64) -> f64 {
            libm::$libm(x)
        }
    )*};
}

shim! {
    sin => sin,
    cos => cos,
    exp => exp,
    tanh => tanh,
    sqrt => sqrt,
    floor => floor,
    ceil => ceil,
    trunc => trunc,
}

/// Fractional part with the sign of `x`, as `f64::fract`.
#[inline]
pub(crate) fn fract(x: f64) -> f64 {
    x - trunc(x)
}

#[cfg(feature = "std")]
#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    f64::ln(x)
}
#[cfg(not(feature = "std"))]
#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[cfg(feature = "std")]
#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    f64::abs(x)
}
#[cfg(not(feature = "std"))]
#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Integer power by binary exponentiation; identical in every build flavor.
pub(crate) fn powi(x: f64, k: u32) -> f64 {
    let mut base = x;
    let mut exp = k;
    let mut acc = 1.0f64;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= base;
        }
        base *= base;
        exp >>= 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn powi_matches_repeated_multiplication() {
        assert_eq!(powi(2.0, 0), 1.0);
        assert_eq!(powi(2.0, 10), 1024.0);
        assert_eq!(powi(-3.0, 3), -27.0);
        let x = 1.37f64;
        assert!((powi(x, 7) - x * x * x * x * x * x * x).abs() < 1e-12);
    }
}
