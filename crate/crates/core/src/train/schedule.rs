use std::f64::consts::PI;

/// Cosine annealing within one cycle of length `t_i`.
pub fn cosine_annealing(t_cur: f64, t_i: f64, lr_max: f64, lr_min: f64) -> f64 {
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t_cur / t_i).cos())
}

/// Position `(t_cur, T_i)` of `step` in a warm-restart schedule whose first
/// cycle lasts `t0` steps and each later one `t_mult` times the previous.
pub fn restart_position(step: usize, t0: usize, t_mult: usize) -> (usize, usize) {
    let t0 = t0.max(1);
    if t_mult <= 1 {
        return (step % t0, t0);
    }
    let (mut t, mut ti) = (step, t0);
    while t >= ti {
        t -= ti;
        ti *= t_mult;
    }
    (t, ti)
}

/// Learning rate at `step` under cosine annealing with warm restarts.
pub fn cosine_warm_restart_lr(step: usize, t0: usize, t_mult: usize, lr_max: f64, lr_min: f64) -> f64 {
    let (t, ti) = restart_position(step, t0, t_mult);
    cosine_annealing(t as f64, ti as f64, lr_max, lr_min)
}
