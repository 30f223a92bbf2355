use std::collections::VecDeque;

use super::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(i64, i64)] {
        const FOUR: [(i64, i64); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(i64, i64); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// Label map (0 = background, components numbered from 1 in raster order of
/// their first pixel) and per-component sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    pub labels: Vec<u32>,
    pub count: usize,
    pub sizes: Vec<usize>,
    width: usize,
}

impl Components {
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Mask of the component with the given label.
    pub fn mask_of(&self, label: u32, height: usize) -> Mask {
        let bits = self.labels.iter().map(|&l| l == label).collect();
        Mask::from_bits(height, self.width, bits).expect("label map matches dims")
    }
}

pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Components {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        sizes.push(0);
        let label = sizes.len() as u32;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            sizes[label as usize - 1] += 1;
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            for &(dr, dc) in connectivity.offsets() {
                let (rr, cc) = (r + dr, c + dc);
                if mask.get_signed(rr, cc) {
                    let j = rr as usize * w + cc as usize;
                    if labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    Components {
        labels,
        count: sizes.len(),
        sizes,
        width: w,
    }
}

/// The largest component (earliest label on ties), or `None` for an empty mask.
pub fn largest_component(mask: &Mask, connectivity: Connectivity) -> Option<Mask> {
    let cc = connected_components(mask, connectivity);
    let best = cc
        .sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?
        .0;
    Some(cc.mask_of(best as u32 + 1, mask.height()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_and_empty() {
        assert_eq!(
            connected_components(&Mask::from_fn(4, 5, |_, _| true), Connectivity::Eight).count,
            1
        );
        assert_eq!(
            connected_components(&Mask::new(4, 5), Connectivity::Four).count,
            0
        );
    }

    #[test]
    fn diagonal_pair() {
        let m = Mask::from_fn(2, 2, |r, c| r == c);
        assert_eq!(connected_components(&m, Connectivity::Four).count, 2);
        assert_eq!(connected_components(&m, Connectivity::Eight).count, 1);
    }

    #[test]
    fn raster_order_labels_and_largest() {
        let m = Mask::from_fn(3, 7, |r, c| c == 0 || (c >= 3 && r < 2));
        let cc = connected_components(&m, Connectivity::Eight);
        assert_eq!(cc.label(0, 0), 1);
        assert_eq!(cc.label(0, 3), 2);
        assert_eq!(cc.sizes, vec![3, 8]);
        assert_eq!(
            largest_component(&m, Connectivity::Eight).unwrap().count(),
            8
        );
    }
}
