use crate::numcore::Scalar;

/// Per-dimension mean, population standard deviation, min and max of a set.
#[derive(Clone, Debug, PartialEq)]
pub struct SetStatistics<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub min: Vec<T>,
    pub max: Vec<T>,
    pub(crate) argmin: Vec<usize>,
    pub(crate) argmax: Vec<usize>,
}

impl<T: Scalar> SetStatistics<T> {
    /// `items` must be non-empty with equal widths.
    pub(crate) fn compute(items: &[&[T]]) -> Self {
        let d = items[0].len();
        let k = T::lit(items.len() as f64);
        let mut mean = vec![T::zero(); d];
        let mut min = items[0].to_vec();
        let mut max = items[0].to_vec();
        let mut argmin = vec![0; d];
        let mut argmax = vec![0; d];
        for (i, f) in items.iter().enumerate() {
            for j in 0..d {
                mean[j] = mean[j] + f[j];
                if f[j] < min[j] {
                    min[j] = f[j];
                    argmin[j] = i;
                }
                if f[j] > max[j] {
                    max[j] = f[j];
                    argmax[j] = i;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / k);
        let mut var = vec![T::zero(); d];
        for f in items {
            for j in 0..d {
                let c = f[j] - mean[j];
                var[j] = var[j] + c * c;
            }
        }
        let std = var.into_iter().map(|v| (v / k).sqrt()).collect();
        // Rounding in the mean can nudge it outside [min, max] for
        // near-constant dimensions.
        for j in 0..d {
            mean[j] = mean[j].max(min[j]).min(max[j]);
        }
        SetStatistics {
            mean,
            std,
            min,
            max,
            argmin,
            argmax,
        }
    }

    /// `[mean, std, min, max]`, width `4 * d`.
    pub fn as_vector(&self) -> Vec<T> {
        [&self.mean[..], &self.std, &self.min, &self.max].concat()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Adds the gradient flowing into [`SetStatistics::as_vector`] onto the
    /// per-item gradients.
    pub(crate) fn backward(&self, items: &[&[T]], g_stat: &[T], g_items: &mut [Vec<T>]) {
        let d = self.dim();
        let k = T::lit(items.len() as f64);
        let (g_mean, rest) = g_stat.split_at(d);
        let (g_std, rest) = rest.split_at(d);
        let (g_min, g_max) = rest.split_at(d);
        for (i, f) in items.iter().enumerate() {
            let g = &mut g_items[i];
            for j in 0..d {
                let mut acc = g_mean[j] / k;
                if self.std[j] > T::zero() {
                    acc = acc + g_std[j] * (f[j] - self.mean[j]) / (k * self.std[j]);
                }
                g[j] = g[j] + acc;
            }
        }
        for j in 0..d {
            let a = self.argmin[j];
            g_items[a][j] = g_items[a][j] + g_min[j];
            let b = self.argmax[j];
            g_items[b][j] = g_items[b][j] + g_max[j];
        }
    }
}
