use std::f64::consts::PI;

/// Sinusoidal encoding of a position, `4P` values.
///
/// With `u` in {lon/180, lat/90} and `ω_p = π·10000^(p/P)`, emits
/// `sin(u·ω_p), cos(u·ω_p)` for each `p`, longitude first. Longitude is
/// wrapped into [−180, 180) and latitude clamped to [−90, 90].
pub fn sinusoidal_position_encoding(lon: f64, lat: f64, p: usize) -> Vec<f64> {
    let lon = if (-180.0..180.0).contains(&lon) {
        lon
    } else {
        (lon + 180.0).rem_euclid(360.0) - 180.0
    };
    let lat = lat.clamp(-90.0, 90.0);
    let mut out = Vec::with_capacity(4 * p);
    for u in [lon / 180.0, lat / 90.0] {
        for i in 0..p {
            let w = PI * 10000f64.powf(i as f64 / p as f64);
            out.push((u * w).sin());
            out.push((u * w).cos());
        }
    }
    out
}
