use super::NnError;

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Padded sequence length the model accepts.
    pub input_length: usize,
    /// Filters per convolutional layer.
    pub conv_filters: usize,
    /// One window per convolutional layer, first layer first.
    pub conv_window_sizes: Vec<usize>,
    pub conv_dropout_rate: f64,
    /// Hidden units per LSTM direction.
    pub lstm_hidden_units: usize,
    pub lstm_dropout_rate: f64,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_floor: f64,
    pub lr_patience_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Raw label scale `(min, max)`; targets are mapped to `[0, 1]`.
    pub label_scale: (f64, f64),
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_length: 100,
            conv_filters: 128,
            conv_window_sizes: vec![8, 6, 4, 2],
            conv_dropout_rate: 0.5,
            lstm_hidden_units: 32,
            lstm_dropout_rate: 0.8,
            epochs: 1500,
            lr_initial: 1e-3,
            lr_floor: 1e-4,
            lr_patience_epochs: 100,
            batch_size: 16,
            seed: 0,
            label_scale: (1.0, 9.0),
        }
    }
}

impl ModelConfig {
    pub fn conv_layers(&self) -> usize {
        self.conv_window_sizes.len()
    }

    /// Width of the concatenated feature vector entering the dense layer.
    pub fn dense_inputs(&self) -> usize {
        self.conv_filters + 2 * self.lstm_hidden_units
    }

    /// Maps a raw label onto `[0, 1]`.
    pub fn scale_label(&self, raw: f64) -> f64 {
        let (lo, hi) = self.label_scale;
        (raw - lo) / (hi - lo)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.input_length == 0 {
            return bad("input_length must be positive".into());
        }
        if self.conv_filters == 0 || self.lstm_hidden_units == 0 {
            return bad("conv_filters and lstm_hidden_units must be positive".into());
        }
        if self.conv_window_sizes.is_empty() || self.conv_window_sizes.contains(&0) {
            return bad("conv_window_sizes must be non-empty and positive".into());
        }
        if self.conv_window_sizes.windows(2).any(|w| w[1] > w[0]) {
            return bad(format!(
                "conv_window_sizes must not increase with depth: {:?}",
                self.conv_window_sizes
            ));
        }
        for (name, r) in [
            ("conv_dropout_rate", self.conv_dropout_rate),
            ("lstm_dropout_rate", self.lstm_dropout_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} must lie in [0, 1): {r}"));
            }
        }
        if !(self.lr_initial > 0.0 && self.lr_floor > 0.0 && self.lr_floor <= self.lr_initial) {
            return bad(format!(
                "need 0 < lr_floor <= lr_initial, got {} and {}",
                self.lr_floor, self.lr_initial
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        let (lo, hi) = self.label_scale;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("label_scale must satisfy min < max: ({lo}, {hi})"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.dense_inputs(), 192);
        assert_eq!(c.conv_layers(), 4);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ModelConfig::default();
        c.conv_dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.conv_window_sizes = vec![2, 4];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.lr_floor = 1e-2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn label_scaling_midpoint() {
        let c = ModelConfig::default();
        assert_eq!(c.scale_label(5.0), 0.5);
        assert_eq!(c.scale_label(1.0), 0.0);
    }
}
