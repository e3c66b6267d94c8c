//! Homogeneous pixel transformation: a distance-weighted average of the
//! targets of the K nearest training inputs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::neighbors::NeighborIndex;
use crate::model::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceNormalization {
    /// Divide by the largest query-to-neighbor distance over the whole batch.
    Absolute,
    /// Divide by each query's own largest neighbor distance.
    Relative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HptParams {
    pub num_neighbors: usize,
    pub kernel_decay: f64,
    pub normalization: DistanceNormalization,
}

impl Default for HptParams {
    fn default() -> Self {
        Self {
            num_neighbors: 50,
            kernel_decay: 100.0,
            normalization: DistanceNormalization::Absolute,
        }
    }
}

pub struct HptModel {
    pub(crate) index: NeighborIndex,
    pub(crate) targets: Matrix,
    pub(crate) params: HptParams,
}

impl HptModel {
    pub fn fit(inputs: Matrix, targets: Matrix, params: HptParams) -> Self {
        Self {
            index: NeighborIndex::build(inputs),
            targets,
            params,
        }
    }

    pub fn params(&self) -> &HptParams {
        &self.params
    }

    pub fn predict(&self, queries: &Matrix) -> Matrix {
        let k = self.params.num_neighbors.min(self.targets.rows());
        let n = queries.rows();
        let mut dist = vec![0.0; n * k];
        let mut idx = vec![0u32; n * k];
        dist.par_chunks_mut(k)
            .zip(idx.par_chunks_mut(k))
            .enumerate()
            .for_each_init(Vec::new, |buf, (i, (d, ix))| {
                self.index.query(queries.row(i), k, buf);
                for (j, &(dj, ij)) in buf.iter().enumerate() {
                    d[j] = dj;
                    ix[j] = ij as u32;
                }
            });

        let global = dist.iter().copied().fold(0.0, f64::max);
        let q = self.targets.cols();
        let gamma = self.params.kernel_decay;
        let mut out = Matrix::zeros(n, q);
        out.data_mut()
            .par_chunks_mut(q)
            .enumerate()
            .for_each(|(i, row)| {
                let d = &dist[i * k..(i + 1) * k];
                let ix = &idx[i * k..(i + 1) * k];
                let norm = match self.params.normalization {
                    DistanceNormalization::Absolute => global,
                    DistanceNormalization::Relative => d[k - 1],
                };
                // neighbors are sorted, so d[0] is the smallest; shifting by it
                // cancels in the renormalization and keeps the weights finite
                let weights: Vec<f64> = d
                    .iter()
                    .map(|&dj| {
                        if norm > 0.0 {
                            (-gamma * (dj - d[0]) / norm).exp()
                        } else {
                            1.0
                        }
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                for (&w, &j) in weights.iter().zip(ix) {
                    for (o, y) in row.iter_mut().zip(self.targets.row(j as usize)) {
                        *o += w * y;
                    }
                }
                row.iter_mut().for_each(|o| *o /= total);
            });
        out
    }
}
