//! Float math that works both with `std` and with `libm` under `no_std`.
//!
//! Only the functions the crate actually uses are wrapped here.

macro_rules! shim {
    ($(($name:ident, $std_method:ident, $libm_fn:ident)),* $(,)?) => {
        $(
            #[cfg(feature = "std")]
            #[inline]
            pub(crate) fn $name(x: f64) -> f64 {
                x.$std_method()
            }

            #[cfg(not(feature = "std"))]
            #[inline]
            pub(crate) fn $name(x: f64) -> f64 {
                libm::$libm_fn(x)
            }
        )*
    };
}

shim!(
    (exp, exp, exp),
    (ln, ln, log),
    (tanh, tanh, tanh),
    (sin, sin, sin),
    (cos, cos, cos),
    (sqrt, sqrt, sqrt),
    (abs, abs, fabs),
    (floor, floor, floor),
    (round, round, round),
);
