use std::collections::VecDeque;

use super::InferenceError;

/// Minimum component area at a given image size: 2000 pixels at 512², scaled
/// by area, never below 16.
pub fn scaled_min_area(height: usize, width: usize) -> usize {
    let scaled = (2000.0 * (height * width) as f64 / (512.0 * 512.0)).round() as usize;
    scaled.max(16)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub id: usize,
    /// Flat pixel indices in BFS order from the component's first pixel.
    pub pixels: Vec<usize>,
    pub area: usize,
}

/// Maximal 4-connected same-label regions, in raster order of first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSet {
    pub components: Vec<Component>,
    pub min_area: usize,
}

impl ComponentSet {
    pub fn eligible(&self) -> impl Iterator<Item = &Component> {
        self.components.iter().filter(move |c| c.area >= self.min_area)
    }

    pub fn ineligible(&self) -> impl Iterator<Item = &Component> {
        self.components.iter().filter(move |c| c.area < self.min_area)
    }

    pub fn eligible_segments(&self) -> Vec<Vec<usize>> {
        self.eligible().map(|c| c.pixels.clone()).collect()
    }
}

/// Labels 4-connected regions of equal value by breadth-first flood fill.
pub fn connected_components<L: Copy + Eq>(labels: &[L], height: usize, width: usize, min_area: usize) -> ComponentSet {
    assert_eq!(labels.len(), height * width, "label map size");
    let mut seen = vec![false; labels.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if seen[start] {
            continue;
        }
        let label = labels[start];
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop_front() {
            pixels.push(p);
            let (r, c) = (p / width, p % width);
            let mut visit = |q: usize| {
                if !seen[q] && labels[q] == label {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                visit(p - width);
            }
            if r + 1 < height {
                visit(p + width);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < width {
                visit(p + 1);
            }
        }
        let area = pixels.len();
        components.push(Component { id: components.len(), pixels, area });
    }
    ComponentSet { components, min_area }
}

/// Gives every pixel of each segment the segment's majority hard label
/// (ties go to background). Pixels outside all segments keep their label.
pub fn majority_vote_postprocess(labels: &[u8], segments: &[Vec<usize>]) -> Result<Vec<u8>, InferenceError> {
    let mut owner = vec![false; labels.len()];
    let mut out = labels.to_vec();
    for seg in segments {
        let mut contour = 0usize;
        for &p in seg {
            if p >= labels.len() {
                return Err(InferenceError::Dimensions(format!("segment pixel {p} outside {} pixels", labels.len())));
            }
            if std::mem::replace(&mut owner[p], true) {
                return Err(InferenceError::OverlappingSegments(p));
            }
            contour += usize::from(labels[p] > 0);
        }
        let winner = u8::from(2 * contour > seg.len());
        seg.iter().for_each(|&p| out[p] = winner);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_map_is_one_component() {
        let set = connected_components(&[1u8; 12], 3, 4, 1);
        assert_eq!(set.components.len(), 1);
        assert_eq!(set.components[0].area, 12);
    }

    #[test]
    fn checkerboard_has_only_singletons() {
        let labels: Vec<u8> = (0..25).map(|p| ((p / 5 + p % 5) % 2) as u8).collect();
        let set = connected_components(&labels, 5, 5, 2);
        assert_eq!(set.components.len(), 25);
        assert_eq!(set.eligible().count(), 0);
    }

    #[test]
    fn diagonal_neighbours_are_separate() {
        let labels = [1u8, 0, 0, 1];
        assert_eq!(connected_components(&labels, 2, 2, 1).components.len(), 4);
    }

    #[test]
    fn majority_and_ties() {
        let labels = [1u8, 1, 1, 0, 0, 1, 0, 1, 0];
        let out = majority_vote_postprocess(&labels, &[vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8]]).unwrap();
        assert_eq!(out, vec![1, 1, 1, 1, 1, 0, 0, 0, 0]);
        let outside = majority_vote_postprocess(&labels, &[vec![0, 3]]).unwrap();
        assert_eq!(outside[1..], labels[1..]);
        assert_eq!(outside[0], 0);
    }

    #[test]
    fn overlapping_segments_are_rejected() {
        let err = majority_vote_postprocess(&[0, 1, 0], &[vec![0, 1], vec![1, 2]]).unwrap_err();
        assert!(matches!(err, InferenceError::OverlappingSegments(1)));
    }

    #[test]
    fn min_area_scaling() {
        assert_eq!(scaled_min_area(512, 512), 2000);
        assert_eq!(scaled_min_area(64, 64), 31);
        assert_eq!(scaled_min_area(16, 16), 16);
    }
}
