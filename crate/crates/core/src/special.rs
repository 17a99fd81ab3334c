//! Special functions used by the fading and interpolation models.

/// Bessel function of the first kind, order zero.
pub fn bessel_j0(x: f64) -> f64 {
    libm::j0(x)
}

/// Gaussian tail probability Q(x) = P(N(0,1) > x).
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Jakes time autocorrelation J0(2 pi f_d T_sym lag).
pub fn jakes_correlation(doppler_hz: f64, symbol_duration: f64, lag: f64) -> f64 {
    bessel_j0(2.0 * std::f64::consts::PI * doppler_hz * symbol_duration * lag)
}
