use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{slots_for_dim, SeqData, CONT_ACTION_COUNT};
use crate::confdet::{NEIGHBOR_FEATURES, OWN_FEATURES, SLOT_WIDTH};

/// Z-score scaling fitted on training sequences.
///
/// Neighbour statistics are pooled per feature over all present slots.
/// Absent slots map to zero and presence flags pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub slots: usize,
    pub own_mean: Vec<f64>,
    pub own_std: Vec<f64>,
    pub nb_mean: Vec<f64>,
    pub nb_std: Vec<f64>,
    pub cont_mean: Vec<f64>,
    pub cont_std: Vec<f64>,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    sum: f64,
    sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sq += v * v;
    }

    fn finish(&self) -> (f64, f64) {
        if self.n == 0.0 {
            return (0.0, 1.0);
        }
        let mean = self.sum / self.n;
        let var = (self.sq / self.n - mean * mean).max(0.0);
        let sd = var.sqrt();
        (mean, if sd > 1e-12 { sd } else { 1.0 })
    }
}

fn finish_all(m: &[Moments]) -> (Vec<f64>, Vec<f64>) {
    m.iter().map(Moments::finish).unzip()
}

impl Standardizer {
    /// Identity scaling for `dim` features.
    pub fn identity(dim: usize) -> Self {
        Self {
            slots: slots_for_dim(dim).unwrap_or(0),
            own_mean: vec![0.0; OWN_FEATURES],
            own_std: vec![1.0; OWN_FEATURES],
            nb_mean: vec![0.0; NEIGHBOR_FEATURES],
            nb_std: vec![1.0; NEIGHBOR_FEATURES],
            cont_mean: vec![0.0; CONT_ACTION_COUNT],
            cont_std: vec![1.0; CONT_ACTION_COUNT],
        }
    }

    pub fn fit<'a>(data: impl Iterator<Item = &'a SeqData>, dim: usize) -> Self {
        let slots = slots_for_dim(dim).unwrap_or(0);
        let mut own = [Moments::default(); OWN_FEATURES];
        let mut nb = [Moments::default(); NEIGHBOR_FEATURES];
        let mut cont = [Moments::default(); CONT_ACTION_COUNT];
        for s in data {
            for row in s.features.rows() {
                for k in 0..OWN_FEATURES {
                    own[k].push(row[k]);
                }
                for j in 0..slots {
                    let base = OWN_FEATURES + j * SLOT_WIDTH;
                    if row[base] > 0.5 {
                        for k in 0..NEIGHBOR_FEATURES {
                            nb[k].push(row[base + 1 + k]);
                        }
                    }
                }
            }
            for row in s.cont.rows() {
                for k in 0..CONT_ACTION_COUNT {
                    cont[k].push(row[k]);
                }
            }
        }
        let (own_mean, own_std) = finish_all(&own);
        let (nb_mean, nb_std) = finish_all(&nb);
        let (cont_mean, cont_std) = finish_all(&cont);
        Self {
            slots,
            own_mean,
            own_std,
            nb_mean,
            nb_std,
            cont_mean,
            cont_std,
        }
    }

    pub fn apply(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            for k in 0..OWN_FEATURES {
                row[k] = (row[k] - self.own_mean[k]) / self.own_std[k];
            }
            for j in 0..self.slots {
                let base = OWN_FEATURES + j * SLOT_WIDTH;
                let present = row[base] > 0.5;
                for k in 0..NEIGHBOR_FEATURES {
                    let v = &mut row[base + 1 + k];
                    *v = if present { (*v - self.nb_mean[k]) / self.nb_std[k] } else { 0.0 };
                }
            }
        }
        out
    }

    pub fn apply_cont(&self, cont: &Array2<f64>) -> Array2<f64> {
        let mut out = cont.clone();
        for mut row in out.rows_mut() {
            for k in 0..CONT_ACTION_COUNT {
                row[k] = (row[k] - self.cont_mean[k]) / self.cont_std[k];
            }
        }
        out
    }

    pub fn unapply_cont(&self, z: &[f64; CONT_ACTION_COUNT]) -> [f64; CONT_ACTION_COUNT] {
        let mut out = [0.0; CONT_ACTION_COUNT];
        for k in 0..CONT_ACTION_COUNT {
            out[k] = z[k] * self.cont_std[k] + self.cont_mean[k];
        }
        out
    }

    pub fn apply_seq(&self, s: &SeqData) -> SeqData {
        SeqData {
            features: self.apply(&s.features),
            modes: s.modes.clone(),
            actions: s.actions.clone(),
            cont: self.apply_cont(&s.cont),
        }
    }
}
