//! Connected-component labeling and small-island removal.

use std::collections::VecDeque;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Faces,
    #[default]
    #[serde(rename = "26")]
    Full,
}

impl Connectivity {
    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            6 => Some(Connectivity::Faces),
            26 => Some(Connectivity::Full),
            _ => None,
        }
    }

    pub fn count(self) -> usize {
        match self {
            Connectivity::Faces => 6,
            Connectivity::Full => 26,
        }
    }

    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let l1 = dz.abs() + dy.abs() + dx.abs();
                    let keep = match self {
                        Connectivity::Faces => l1 == 1,
                        Connectivity::Full => l1 > 0,
                    };
                    if keep {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

/// Labels foreground components `1..=n` in scan order; returns the label
/// volume and each component's voxel count (index 0 unused).
pub fn label_components(mask: &Array3<u8>, conn: Connectivity) -> (Array3<u32>, Vec<usize>) {
    let (nz, ny, nx) = mask.dim();
    let offsets = conn.offsets();
    let mut labels = Array3::<u32>::zeros((nz, ny, nx));
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for ((z, y, x), &m) in mask.indexed_iter() {
        if m == 0 || labels[[z, y, x]] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        labels[[z, y, x]] = id;
        queue.push_back([z, y, x]);
        while let Some([cz, cy, cx]) = queue.pop_front() {
            size += 1;
            for d in &offsets {
                let (qz, qy, qx) = (cz as isize + d[0], cy as isize + d[1], cx as isize + d[2]);
                if qz < 0 || qy < 0 || qx < 0 || qz >= nz as isize || qy >= ny as isize || qx >= nx as isize {
                    continue;
                }
                let q = [qz as usize, qy as usize, qx as usize];
                if mask[q] != 0 && labels[q] == 0 {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Clears components with fewer than `min_size` voxels.
pub fn remove_small_components(mask: &Array3<u8>, min_size: usize, conn: Connectivity) -> Array3<u8> {
    let (labels, sizes) = label_components(mask, conn);
    labels.mapv(|l| u8::from(l != 0 && sizes[l as usize] >= min_size))
}
