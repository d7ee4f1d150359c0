use tensorcore::{Array, Graph, NodeId};

use crate::data::record::N_LABELS;
use crate::data::{NormalizedRecord, INPUT_CHANNELS, SAR_CHANNELS};
use crate::error::{CoreError, Result};

/// Stacked model inputs and targets for a set of records.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Dataset indices of the records.
    pub ids: Vec<usize>,
    pub size: usize,
    /// `[B, 3, H, W]`
    pub sar: Array,
    /// `[B, 10, H, W]`
    pub optical: Array,
    pub coords: Vec<(f64, f64)>,
    /// `[B, H, W]` normalized labels per attribute.
    pub targets: [Array; N_LABELS],
    /// `[B, H, W]` 0/1 masks per attribute.
    pub masks: [Array; N_LABELS],
}

impl Batch {
    pub fn new(ids: &[usize], recs: &[&NormalizedRecord]) -> Result<Self> {
        let first = recs
            .first()
            .ok_or_else(|| CoreError::Data("empty batch".into()))?;
        let (h, w) = (first.rows, first.cols);
        let n = h * w;
        let b = recs.len();
        let mut sar = Vec::with_capacity(b * SAR_CHANNELS * n);
        let mut opt = Vec::with_capacity(b * (INPUT_CHANNELS - SAR_CHANNELS) * n);
        let mut targets: [Vec<f64>; N_LABELS] = Default::default();
        let mut masks: [Vec<f64>; N_LABELS] = Default::default();
        let mut coords = Vec::with_capacity(b);
        for r in recs {
            if (r.rows, r.cols) != (h, w) {
                return Err(CoreError::Data("mixed patch sizes in one batch".into()));
            }
            sar.extend_from_slice(&r.inputs[..SAR_CHANNELS * n]);
            opt.extend_from_slice(&r.inputs[SAR_CHANNELS * n..]);
            for a in 0..N_LABELS {
                targets[a].extend_from_slice(&r.labels[a]);
                masks[a].extend(r.masks[a].iter().map(|&m| if m { 1.0 } else { 0.0 }));
            }
            coords.push((r.lon, r.lat));
        }
        let plane = vec![b, h, w];
        Ok(Self {
            ids: ids.to_vec(),
            size: b,
            sar: Array::new(vec![b, SAR_CHANNELS, h, w], sar)?,
            optical: Array::new(vec![b, INPUT_CHANNELS - SAR_CHANNELS, h, w], opt)?,
            coords,
            targets: targets.map(|t| Array::new(plane.clone(), t).expect("plane")),
            masks: masks.map(|m| Array::new(plane.clone(), m).expect("plane")),
        })
    }

    /// SAR and optical inputs as graph constants.
    pub fn input_nodes(&self, g: &mut Graph) -> Result<Vec<NodeId>> {
        Ok(vec![g.constant(self.sar.clone())?, g.constant(self.optical.clone())?])
    }

    pub fn rows(&self) -> usize {
        self.sar.shape()[2]
    }

    pub fn cols(&self) -> usize {
        self.sar.shape()[3]
    }

    pub fn has_labels(&self, a: usize) -> bool {
        self.masks[a].data().iter().any(|&m| m > 0.5)
    }
}
