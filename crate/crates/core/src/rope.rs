//! Rotary position encoding with real-valued positions.

/// Frequency schedule for one head width: pair `i` rotates by
/// `position / base^(2i / head_dim)`.
#[derive(Debug, Clone)]
pub struct Rotary {
    inv_freq: Vec<f64>,
}

impl Rotary {
    /// `head_dim` must be even; [`crate::ModelConfig::validate`] enforces it.
    pub fn new(head_dim: usize, base: f32) -> Self {
        assert!(head_dim.is_multiple_of(2), "rotary head_dim must be even");
        let d = head_dim as f64;
        let inv_freq = (0..head_dim / 2)
            .map(|i| (base as f64).powf(-(2.0 * i as f64) / d))
            .collect();
        Self { inv_freq }
    }

    pub fn head_dim(&self) -> usize {
        self.inv_freq.len() * 2
    }

    pub fn apply(&self, v: &[f32], position: f64) -> Vec<f32> {
        let mut out = v.to_vec();
        self.apply_in_place(&mut out, position);
        out
    }

    pub fn apply_in_place(&self, v: &mut [f32], position: f64) {
        debug_assert_eq!(v.len(), self.head_dim());
        if position == 0.0 {
            return;
        }
        for (pair, freq) in v.chunks_exact_mut(2).zip(&self.inv_freq) {
            let (sin, cos) = (position * freq).sin_cos();
            let (x, y) = (pair[0] as f64, pair[1] as f64);
            pair[0] = (x * cos - y * sin) as f32;
            pair[1] = (x * sin + y * cos) as f32;
        }
    }
}
