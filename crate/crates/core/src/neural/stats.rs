use log::warn;

use super::NetError;

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// `samples` holds one row per sample and one column per channel.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self, NetError> {
        let n = samples.len();
        if n < 2 {
            return Err(NetError::TooFewSamples { needed: 2, got: n });
        }
        let width = samples[0].len();
        let mut mean = vec![0.0; width];
        for row in samples {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; width];
        for row in samples {
            for c in 0..width {
                let d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }
}

/// Shift and scale that map the samples to zero mean and unit population
/// standard deviation: `shift = -mean`, `scale = 1 / std`. Channels without
/// spread keep `scale = 1`.
pub fn init_shift_scale_from_stats(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), NetError> {
    let stats = ChannelStats::from_samples(samples)?;
    let shift = stats.mean.iter().map(|m| -m).collect();
    let scale = stats
        .std
        .iter()
        .enumerate()
        .map(|(c, &s)| {
            if s > 0.0 {
                1.0 / s
            } else {
                warn!("channel {c} has zero variance, keeping scale 1");
                1.0
            }
        })
        .collect();
    Ok((shift, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_point_channel() {
        let (shift, scale) = init_shift_scale_from_stats(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(shift, vec![-1.0]);
        assert_eq!(scale, vec![1.0]);
    }

    #[test]
    fn constant_channel_keeps_unit_scale() {
        let rows = vec![vec![5.0], vec![5.0], vec![5.0]];
        let (shift, scale) = init_shift_scale_from_stats(&rows).unwrap();
        assert_eq!(shift, vec![-5.0]);
        assert_eq!(scale, vec![1.0]);
    }

    #[test]
    fn standard_normal_is_nearly_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..20000)
            .map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let (shift, scale) = init_shift_scale_from_stats(&rows).unwrap();
        for c in 0..2 {
            assert!(shift[c].abs() < 0.03);
            assert!((scale[c] - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn needs_two_samples() {
        assert!(init_shift_scale_from_stats(&[vec![1.0]]).is_err());
    }
}
