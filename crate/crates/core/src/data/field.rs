use rand::Rng;
use std::f64::consts::PI;

/// Sum of random plane waves with unit marginal variance.
#[derive(Clone, Debug)]
pub struct WaveField {
    terms: Vec<[f64; 2]>,
    phases: Vec<f64>,
    amp: f64,
}

impl WaveField {
    /// `n` waves with wavelengths drawn uniformly from `[min_len, max_len]`.
    pub fn sample<R: Rng>(rng: &mut R, n: usize, min_len: f64, max_len: f64) -> Self {
        let mut terms = Vec::with_capacity(n);
        let mut phases = Vec::with_capacity(n);
        for _ in 0..n {
            let len = rng.random_range(min_len..=max_len);
            let theta = rng.random_range(0.0..2.0 * PI);
            let k = 2.0 * PI / len;
            terms.push([k * theta.cos(), k * theta.sin()]);
            phases.push(rng.random_range(0.0..2.0 * PI));
        }
        let amp = if n == 0 { 0.0 } else { (2.0 / n as f64).sqrt() };
        Self { terms, phases, amp }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .zip(&self.phases)
            .map(|(t, p)| (t[0] * x + t[1] * y + p).cos())
            .sum::<f64>()
            * self.amp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roughly_unit_variance_over_large_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = WaveField::sample(&mut rng, 8, 2.0, 5.0);
        let mut s = 0.0;
        let mut s2 = 0.0;
        let n = 200;
        for i in 0..n {
            for j in 0..n {
                let v = f.eval(i as f64 * 0.37, j as f64 * 0.41);
                s += v;
                s2 += v * v;
            }
        }
        let m = s / (n * n) as f64;
        let var = s2 / (n * n) as f64 - m * m;
        assert!(m.abs() < 0.1, "{m}");
        assert!((var - 1.0).abs() < 0.2, "{var}");
    }
}
