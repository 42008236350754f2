//! Hard-attention window selection on a `C×H×W` feature map.
//!
//! The window index is a plain integer: gradients reach the feature map only
//! through the cells that were copied, never through the choice of cells.

/// Feature-map cell, `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

fn check_window(center: Cell, k: usize, height: usize, width: usize) {
    assert!(k % 2 == 1, "crop size must be odd, got {k}");
    let r = k / 2;
    assert!(
        center.row >= r && center.row + r < height && center.col >= r && center.col + r < width,
        "crop window {k}x{k} at {center:?} leaves the {height}x{width} map; clamp first"
    );
}

/// Copy the `k×k` window centred on `center`. Panics if the window is not
/// fully inside the map.
pub fn crop_gather(
    map: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    center: Cell,
    k: usize,
) -> Vec<f64> {
    assert_eq!(map.len(), channels * height * width);
    check_window(center, k, height, width);
    let r = k / 2;
    let mut out = Vec::with_capacity(channels * k * k);
    for c in 0..channels {
        for dy in 0..k {
            let row = center.row + dy - r;
            let start = (c * height + row) * width + center.col - r;
            out.extend_from_slice(&map[start..start + k]);
        }
    }
    out
}

/// Adjoint of [`crop_gather`]: add `grad_patch` into `grad_map` at the window.
pub fn crop_scatter_add(
    grad_patch: &[f64],
    grad_map: &mut [f64],
    channels: usize,
    height: usize,
    width: usize,
    center: Cell,
    k: usize,
) {
    assert_eq!(grad_patch.len(), channels * k * k);
    assert_eq!(grad_map.len(), channels * height * width);
    check_window(center, k, height, width);
    let r = k / 2;
    for c in 0..channels {
        for dy in 0..k {
            let row = center.row + dy - r;
            let start = (c * height + row) * width + center.col - r;
            let src = &grad_patch[(c * k + dy) * k..(c * k + dy + 1) * k];
            for (g, s) in grad_map[start..start + k].iter_mut().zip(src) {
                *g += s;
            }
        }
    }
}

/// Scatter into a fresh zero map.
pub fn crop_scatter_backward(
    grad_patch: &[f64],
    center: Cell,
    k: usize,
    map_shape: [usize; 3],
) -> Vec<f64> {
    let [c, h, w] = map_shape;
    let mut out = vec![0.0; c * h * w];
    crop_scatter_add(grad_patch, &mut out, c, h, w, center, k);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_window_is_whole_map() {
        let map: Vec<f64> = (0..9).map(|v| v as f64).collect();
        assert_eq!(crop_gather(&map, 1, 3, 3, Cell::new(1, 1), 3), map);
    }

    #[test]
    fn scatter_partitions_support() {
        let g = crop_scatter_backward(&[1.0; 9], Cell::new(2, 3), 3, [1, 5, 6]);
        let inside: f64 = (1..4)
            .flat_map(|r| (2..5).map(move |c| (r, c)))
            .map(|(r, c)| g[r * 6 + c])
            .sum();
        assert_eq!(inside, 9.0);
        assert_eq!(g.iter().sum::<f64>(), 9.0);
        assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 9);
    }

    #[test]
    #[should_panic(expected = "clamp first")]
    fn unclamped_center_panics() {
        crop_gather(&[0.0; 12], 1, 3, 4, Cell::new(0, 1), 3);
    }
}
