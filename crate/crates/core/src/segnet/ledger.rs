use serde::{Deserialize, Serialize};

use super::Tensor;

/// Cost of one layer of a forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub macs: u64,
    /// Output activation size at one byte per value.
    pub activation_bytes: usize,
}

/// Per-layer multiply-accumulate and memory accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLedger {
    pub layers: Vec<LayerCost>,
    /// Kernel weights at one byte each; biases are kept apart.
    pub weight_bytes: usize,
}

impl ResourceLedger {
    pub fn new(weight_bytes: usize) -> Self {
        Self {
            layers: Vec::new(),
            weight_bytes,
        }
    }

    fn push<T>(&mut self, name: &str, out: &Tensor<T>, macs: u64) {
        self.layers.push(LayerCost {
            name: name.to_string(),
            width: out.w,
            height: out.h,
            channels: out.c,
            macs,
            activation_bytes: out.h * out.w * out.c,
        });
    }

    pub(crate) fn conv<T>(&mut self, name: &str, out: &Tensor<T>, macs: u64) {
        self.push(name, out, macs);
    }

    pub(crate) fn other<T>(&mut self, name: &str, out: &Tensor<T>) {
        self.push(name, out, 0);
    }

    /// MACs of the convolution layers in order.
    pub fn conv_macs(&self) -> Vec<u64> {
        self.layers.iter().filter(|l| l.name.starts_with("conv")).map(|l| l.macs).collect()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn peak_activation_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.activation_bytes).max().unwrap_or(0)
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut s = String::from("layer     output          MACs        activation B\n");
        for l in &self.layers {
            s.push_str(&format!(
                "{:<9} {:>3}x{:>3}x{:<3}    {:>10}  {:>10}\n",
                l.name, l.width, l.height, l.channels, l.macs, l.activation_bytes
            ));
        }
        s.push_str(&format!("total MACs {}\n", self.total_macs()));
        s.push_str(&format!("weight bytes {}\n", self.weight_bytes));
        s.push_str(&format!("peak activation bytes {}\n", self.peak_activation_bytes()));
        s
    }
}
