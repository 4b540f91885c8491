//! Convolution FLOP accounting: `FLOPs = 2 · MACs`, summed over every
//! convolution. Norms, activations, resizes and additions are excluded.

use serde::Serialize;

/// Geometry of one executed convolution, batch size 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ConvRecord {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvRecord {
    pub fn macs(&self) -> u64 {
        (self.out_c * self.in_c * self.kernel * self.kernel) as u64 * (self.out_h * self.out_w) as u64
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs()
    }
}

pub fn total_flops(records: &[ConvRecord]) -> u64 {
    records.iter().map(ConvRecord::flops).sum()
}
