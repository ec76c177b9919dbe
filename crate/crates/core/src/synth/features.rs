use super::labels::AttrKind;
use super::scene::SceneGraph;

/// Channels per cell: occupancy, then one-hot color (8), shape (3),
/// material (2) and size (2).
pub const CHANNELS: usize = 16;

/// Symbolic `G × G × 16` stand-in for convolutional image features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub grid_size: usize,
    /// Row-major over `(row, col, channel)`.
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.grid_size + col) * CHANNELS;
        &self.data[start..start + CHANNELS]
    }

    pub fn num_cells(&self) -> usize {
        self.grid_size * self.grid_size
    }
}

pub fn encode_features(scene: &SceneGraph) -> FeatureGrid {
    let g = scene.grid_size;
    let mut data = vec![0.0; g * g * CHANNELS];
    for o in &scene.objects {
        let base = (o.row * g + o.col) * CHANNELS;
        data[base] = 1.0;
        for &kind in AttrKind::ALL {
            // Channel layout mirrors the label order, shifted past occupancy.
            data[base + 1 + o.value(kind).index()] = 1.0;
        }
    }
    FeatureGrid { grid_size: g, data }
}
