use ndarray::Array2;

use super::tree::Target;

/// k-nearest neighbours on z-scored features (train statistics).
/// Distance ties are broken by training row order, vote ties by the
/// smaller label.
#[derive(Debug, Clone)]
pub struct KNearest {
    k: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    x: Array2<f64>,
    y: Vec<f64>,
    target: Target,
}

impl KNearest {
    pub fn fit(x: &Array2<f64>, y: &[f64], target: Target, k: usize) -> KNearest {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        let mut z = x.clone();
        for (j, mut col) in z.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - mean[j]) / scale[j]);
        }
        KNearest {
            k: k.clamp(1, x.nrows()),
            mean,
            scale,
            x: z,
            y: y.to_vec(),
            target,
        }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(self.x.nrows());
        x.rows()
            .into_iter()
            .map(|q| {
                let q: Vec<f64> = q
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v - self.mean[j]) / self.scale[j])
                    .collect();
                dist.clear();
                dist.extend(self.x.rows().into_iter().enumerate().map(|(i, r)| {
                    let d: f64 = r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, i)
                }));
                dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let nearest = &dist[..self.k];
                match self.target {
                    Target::Regression => {
                        nearest.iter().map(|&(_, i)| self.y[i]).sum::<f64>() / self.k as f64
                    }
                    Target::Classification { n_classes } => {
                        let mut votes = vec![0usize; n_classes];
                        for &(_, i) in nearest {
                            votes[self.y[i] as usize] += 1;
                        }
                        let mut best = 0;
                        for (c, &v) in votes.iter().enumerate() {
                            if v > votes[best] {
                                best = c;
                            }
                        }
                        best as f64
                    }
                }
            })
            .collect()
    }
}
